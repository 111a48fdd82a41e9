use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use slp_core::checkpoint::{load_checkpoint, save_checkpoint};
use slp_core::config::{CorpusConfig, ModelConfig, TrainConfig};
use slp_core::data::{encode_corpus, generate_corpus, load_corpus, ExampleRecord};
use slp_core::eval::{evaluate, evaluate_predictions, evaluate_sl_only, mean_half_width, random_baseline};
use slp_core::gradcheck::{self, Corruption, Instance};
use slp_core::model::{InferConfig, Model, Prediction};
use slp_core::segment::Segment;
use slp_core::train::{train_stage, EpochReport, TrainState};
use slp_core::TensorError;

use crate::args::{EvalArgs, GenDataArgs, GradCheckArgs, InferArgs, Predictor, TrainArgs};
use crate::manifest::{write_file, RunManifest};
use crate::settings::{flat_config, CliError, CliResult, Settings};
use crate::svg::score_plot;

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn load(path: &Path) -> CliResult<Vec<ExampleRecord>> {
    Ok(load_corpus(path)?)
}

pub fn gen_data(args: &GenDataArgs) -> CliResult<()> {
    let settings = Settings::load(&args.common)?.merge(&args.corpus)?;
    let config: CorpusConfig = settings.apply(&CorpusConfig::default())?;
    let out = &args.common.out_dir;
    ensure_dir(out)?;
    let mut manifest = RunManifest::new("gen-data");
    manifest.seed = Some(config.seed);
    manifest.config = flat_config(Some(&config), None, None)?;

    manifest.phase("generate");
    let mut splits = vec![("train.bin", 0u64, args.count)];
    if args.holdout > 0 {
        splits.push(("heldout.bin", args.count as u64, args.holdout));
    }
    for (name, start, count) in splits {
        let records = generate_corpus(&config, start, count)?;
        let path = out.join(name);
        write_file(&path, &encode_corpus(&records)?)?;
        println!("wrote {} examples to {}", records.len(), path.display());
        manifest.outputs.push(path);
    }
    manifest.write(out)?;
    Ok(())
}

/// Parses "1,2,3", "1-3" or "2".
pub fn parse_stages(s: &str) -> CliResult<Vec<u8>> {
    let bad = || CliError::Usage(format!("--stages {s:?}: expected stages from 1-3 such as \"1,2,3\" or \"2-3\""));
    let mut stages = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        let (a, b) = match part.split_once('-') {
            Some((a, b)) => (a, b),
            None => (part, part),
        };
        let (a, b): (u8, u8) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a == 0 || b > 3 || a > b {
            return Err(bad());
        }
        stages.extend(a..=b);
    }
    stages.sort_unstable();
    stages.dedup();
    Ok(stages)
}

fn curve_line(r: &EpochReport) -> String {
    format!(
        "{},{},{:e},{},{},{},{}\n",
        r.stage, r.epoch, r.lr, r.loss.class, r.loss.matching, r.loss.conf, r.loss.total
    )
}

const CURVE_HEADER: &str = "stage,epoch,lr,class,matching,conf,total\n";

/// Rows of an existing loss curve up to and including (stage, epoch).
fn curve_prefix(path: &Path, stage: u8, epoch: usize) -> String {
    let Ok(text) = fs::read_to_string(path) else {
        return String::new();
    };
    text.lines()
        .skip(1)
        .filter(|l| {
            let mut f = l.split(',');
            let s: u8 = f.next().and_then(|x| x.parse().ok()).unwrap_or(u8::MAX);
            let e: usize = f.next().and_then(|x| x.parse().ok()).unwrap_or(usize::MAX);
            s < stage || (s == stage && e <= epoch)
        })
        .map(|l| format!("{l}\n"))
        .collect()
}

pub fn train(args: &TrainArgs) -> CliResult<()> {
    let settings = Settings::load(&args.common)?
        .merge(&args.model)?
        .merge(&args.train)?
        .merge(&args.infer)?;
    let out = &args.common.out_dir;
    ensure_dir(out)?;
    let stages = parse_stages(&args.stages)?;
    let corpus_path = args.corpus.clone().unwrap_or_else(|| out.join("train.bin"));
    let mut manifest = RunManifest::new("train");
    manifest.phase("load");
    let corpus = load(&corpus_path)?;
    manifest.inputs.push(corpus_path);
    let width = corpus
        .first()
        .map(|e| e.features.width)
        .ok_or_else(|| CliError::Data("training corpus is empty".into()))?;

    let curve_path = out.join("loss_curve.csv");
    let (mut state, mut curve) = match &args.resume {
        Some(path) => {
            let mut state: TrainState<f64> = load_checkpoint(path)?;
            state.config = settings.apply(&state.config)?;
            state.config.validate()?;
            manifest.inputs.push(path.clone());
            if let Some(&done) = stages.iter().find(|&&s| s < state.stage) {
                println!("checkpoint is in stage {}; skipping stage {done}", state.stage);
            }
            let prefix = curve_prefix(&curve_path, state.stage, state.epoch);
            (state, prefix)
        }
        None => {
            if stages[0] != 1 {
                return Err(CliError::Usage("a fresh run must start at stage 1; pass --resume for later stages".into()));
            }
            let mut model_cfg: ModelConfig = settings.apply(&ModelConfig::default())?;
            model_cfg.d_in = width;
            let train_cfg: TrainConfig = settings.apply(&TrainConfig::default())?;
            let model = Model::new(&model_cfg, train_cfg.seed)?;
            (TrainState::new(model, train_cfg)?, String::new())
        }
    };
    if state.model.config.d_in != width {
        return Err(CliError::Data(format!(
            "corpus width {width} does not match the model input width {}",
            state.model.config.d_in
        )));
    }
    manifest.seed = Some(state.config.seed);
    manifest.config = flat_config(None, Some(&state.model.config), Some(&state.config))?;

    let latest = out.join("latest.ckpt");
    let first = state.stage;
    for stage in stages.iter().copied().filter(|&s| s >= first) {
        manifest.phase(&format!("stage{stage}"));
        let mut failure = None;
        let on_epoch = |s: &TrainState<f64>, r: &EpochReport| {
            println!(
                "stage {} epoch {:>3}  lr {:.0e}  loss {:.6} (class {:.4}, match {:.4}, conf {:.4})  {:.1}s",
                r.stage, r.epoch, r.lr, r.loss.total, r.loss.class, r.loss.matching, r.loss.conf, r.seconds
            );
            curve.push_str(&curve_line(r));
            let persisted = write_file(&curve_path, format!("{CURVE_HEADER}{curve}").as_bytes())
                .and_then(|_| save_checkpoint(&latest, s).map_err(CliError::from));
            persisted.map_err(|e| {
                failure = Some(e);
                TensorError::Contract("epoch outputs could not be written".into())
            })
        };
        let result = train_stage(&mut state, stage, &corpus, on_epoch);
        if let Some(e) = failure {
            return Err(e);
        }
        result?;
        let path = out.join(format!("stage{stage}.ckpt"));
        save_checkpoint(&path, &state)?;
        save_checkpoint(&latest, &state)?;
        println!("wrote {}", path.display());
        manifest.outputs.push(path);
    }
    if curve.is_empty() {
        write_file(&curve_path, CURVE_HEADER.as_bytes())?;
    }
    manifest.outputs.push(curve_path);
    manifest.outputs.push(latest);

    let eval_path = args.eval_corpus.clone().or_else(|| {
        let p = out.join("heldout.bin");
        p.exists().then_some(p)
    });
    if let (Some(path), 3) = (eval_path, state.stage) {
        manifest.phase("eval");
        let heldout = load(&path)?;
        let infer = InferConfig::from(&state.config);
        let n: Vec<usize> = [1, 5].into_iter().filter(|&n| n <= infer.k).collect();
        let table = evaluate(&state.model, &heldout, &n, &[0.5, 0.7], &infer)?;
        println!("held-out metrics ({} examples):\n{}", heldout.len(), table.to_text());
        println!("random-segment baseline R@1,IoU=0.5: {:.4}", random_baseline(&heldout, 0.5));
        manifest.inputs.push(path);
    }
    manifest.write(out)?;
    Ok(())
}

fn default_checkpoint(out: &Path, given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| out.join("latest.ckpt"))
}

fn default_corpus(out: &Path, given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| out.join("heldout.bin"))
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let settings = Settings::load(&args.common)?.merge(&args.infer)?;
    let out = &args.common.out_dir;
    ensure_dir(out)?;
    let mut manifest = RunManifest::new("eval");
    manifest.phase("load");
    let corpus_path = default_corpus(out, &args.corpus);
    let corpus = load(&corpus_path)?;
    manifest.inputs.push(corpus_path);

    manifest.phase("evaluate");
    let table = match args.predictor {
        Predictor::Oracle => {
            let gts: Vec<Segment> = corpus.iter().map(|e| e.gt).collect();
            let depth = args.n.iter().copied().max().unwrap_or(1);
            let ranked: Vec<Vec<Segment>> = gts.iter().map(|&g| vec![g; depth]).collect();
            manifest.config = settings.table.clone();
            evaluate_predictions(&gts, &ranked, &args.n, &args.m)?
        }
        Predictor::Slp | Predictor::SlOnly => {
            let ckpt = default_checkpoint(out, &args.checkpoint);
            let state: TrainState<f64> = load_checkpoint(&ckpt)?;
            manifest.inputs.push(ckpt);
            let config = settings.apply(&state.config)?;
            config.validate()?;
            manifest.seed = Some(config.seed);
            manifest.config = flat_config(None, Some(&state.model.config), Some(&config))?;
            let infer = InferConfig::from(&config);
            if args.predictor == Predictor::Slp {
                evaluate(&state.model, &corpus, &args.n, &args.m, &infer)?
            } else {
                let half = args.half_width.unwrap_or_else(|| mean_half_width(&corpus));
                println!("sl-only half-width: {half}");
                evaluate_sl_only(&state.model, &corpus, half, &args.n, &args.m, infer.k)?
            }
        }
    };
    table.check_monotone()?;
    let text = table.to_text();
    print!("{text}");
    if args.m.contains(&0.5) {
        println!("random-segment baseline R@1,IoU=0.5: {:.4}", random_baseline(&corpus, 0.5));
    }
    let stem = match args.predictor {
        Predictor::Slp => "metrics",
        Predictor::SlOnly => "metrics-sl-only",
        Predictor::Oracle => "metrics-oracle",
    };
    for (ext, body) in [("txt", text), ("csv", table.to_csv())] {
        let path = out.join(format!("{stem}.{ext}"));
        write_file(&path, body.as_bytes())?;
        manifest.outputs.push(path);
    }
    manifest.write(out)?;
    Ok(())
}

#[derive(Serialize)]
struct InferReport<'a> {
    index: usize,
    gt: Segment,
    iou: f64,
    prediction: &'a Prediction,
}

pub fn render_prediction(index: usize, gt: Segment, p: &Prediction) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "example {index}: ground truth {gt}");
    let _ = writeln!(
        s,
        "predicted {} (confidence {:.4}, anchor {}, IoU {:.4})",
        p.segment,
        p.confidence,
        p.anchor,
        p.segment.iou(&gt)
    );
    for (rank, c) in p.candidates.iter().enumerate() {
        let _ = writeln!(
            s,
            "candidate {}: anchor {:>3} -> {} confidence {:.4}",
            rank + 1,
            c.anchor,
            c.segment,
            c.confidence
        );
        for step in &c.trace {
            let _ = writeln!(
                s,
                "    {:<5} frame {:>3} score {:+.4} {}",
                format!("{:?}", step.side).to_lowercase(),
                step.frame,
                step.score,
                if step.accepted { "accept" } else { "reject" }
            );
        }
    }
    s
}

pub fn infer(args: &InferArgs) -> CliResult<()> {
    let settings = Settings::load(&args.common)?.merge(&args.infer)?;
    let out = &args.common.out_dir;
    let mut manifest = RunManifest::new("infer");
    manifest.phase("load");
    let corpus_path = default_corpus(out, &args.corpus);
    let corpus = load(&corpus_path)?;
    let ckpt = default_checkpoint(out, &args.checkpoint);
    let state: TrainState<f64> = load_checkpoint(&ckpt)?;
    manifest.inputs.extend([corpus_path, ckpt]);
    let example = corpus.get(args.index).ok_or_else(|| {
        CliError::Usage(format!("--index {} out of range for a corpus of {}", args.index, corpus.len()))
    })?;
    let config = settings.apply(&state.config)?;
    config.validate()?;
    manifest.seed = Some(config.seed);
    manifest.config = flat_config(None, Some(&state.model.config), Some(&config))?;

    manifest.phase("infer");
    let prediction = state.model.infer(example, &InferConfig::from(&config))?;
    print!("{}", render_prediction(args.index, example.gt, &prediction));
    if let Some(path) = &args.svg {
        write_file(path, score_plot(&prediction.scores, example.gt, prediction.segment).as_bytes())?;
        manifest.outputs.push(path.clone());
    }
    if let Some(path) = &args.json {
        let report = InferReport {
            index: args.index,
            gt: example.gt,
            iou: prediction.segment.iou(&example.gt),
            prediction: &prediction,
        };
        let json = serde_json::to_vec_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
        write_file(path, &json)?;
        manifest.outputs.push(path.clone());
    }
    ensure_dir(out)?;
    manifest.write(out)?;
    Ok(())
}

pub fn grad_check(args: &GradCheckArgs) -> CliResult<()> {
    let out = &args.common.out_dir;
    let mut manifest = RunManifest::new("grad-check");
    let instance = Instance {
        frames: args.frames,
        words: args.words,
        d_model: args.d_model,
        seed: args.common.seed.unwrap_or(Instance::default().seed),
    };
    if instance.frames < 4 || instance.words == 0 || instance.d_model < 4 || instance.d_model % 4 != 0 {
        return Err(CliError::Usage("grad-check needs frames ≥ 4, words ≥ 1 and d_model a positive multiple of 4".into()));
    }
    manifest.seed = Some(instance.seed);
    manifest.config = toml::Table::try_from(instance).map_err(|e| CliError::Usage(e.to_string()))?;
    let corrupt = Corruption {
        name: args.corrupt.clone(),
        factor: args.corrupt_factor,
    };
    manifest.phase("check");
    let report = gradcheck::full_model(instance, &corrupt)?;
    println!("{:<28} {:>6} {:>12} {:>12}  status", "tensor", "numel", "rel_error", "max|grad|");
    for g in &report {
        println!(
            "{:<28} {:>6} {:>12.3e} {:>12.3e}  {}",
            g.name,
            g.numel,
            g.rel_error,
            g.max_abs_grad,
            if g.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = report.iter().filter(|g| !g.passed()).map(|g| g.name.as_str()).collect();
    ensure_dir(out)?;
    manifest.write(out)?;
    if failed.is_empty() {
        println!("all {} tensors within {:e}", report.len(), gradcheck::TOLERANCE);
        Ok(())
    } else {
        Err(CliError::Numeric(format!("gradient mismatch in {}", failed.join(", "))))
    }
}
