//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero when a criterion outside `KNOWN_FAILURES` fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slp_core::bp::{triplet_losses, BpLayout, PeruseConfig, Peruser, TripletScores, TripletWeights};
use slp_core::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointError};
use slp_core::config::{CorpusConfig, Direction, ModelConfig, TrainConfig};
use slp_core::data::{decode_corpus, encode_corpus, generate_corpus, load_corpus, save_corpus, DataError, ExampleRecord};
use slp_core::eval::{auc, evaluate, evaluate_sl_only, mean_half_width, random_baseline, spearman, MetricsTable};
use slp_core::gradcheck::{full_model, Corruption, Instance};
use slp_core::model::{InferConfig, Model};
use slp_core::params::ParamStore;
use slp_core::segment::{temporal_iou, Segment};
use slp_core::sl::bce_loss;
use slp_core::tensor::{Tape, Tensor};
use slp_core::train::{sample_inside, sample_outside_interval, train_stage, TrainState};

/// Criteria that fail at the default desk schedule; the README records why.
const KNOWN_FAILURES: &[&str] = &["7", "D2", "D5"];

const TRIALS: usize = 1000;

struct Outcome {
    id: &'static str,
    name: &'static str,
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Report {
    outcomes: Vec<Outcome>,
}

impl Report {
    fn record(&mut self, id: &'static str, name: &'static str, pass: bool, detail: String) {
        println!("{} [{id}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.outcomes.push(Outcome { id, name, pass, detail });
    }
}

fn main() -> ExitCode {
    let mut report = Report::default();
    gradients(&mut report);
    oracles(&mut report);
    invariants(&mut report);
    loss_laws(&mut report);
    let trained = learning(&mut report);
    directions(&mut report, &trained);
    two_step(&mut report, &trained);
    persistence(&mut report, &trained);
    noiseless(&mut report);

    println!();
    let mut unexpected = 0;
    for o in &report.outcomes {
        let known = KNOWN_FAILURES.contains(&o.id);
        match (o.pass, known) {
            (false, false) => {
                unexpected += 1;
                println!("unexpected failure [{}] {}: {}", o.id, o.name, o.detail);
            }
            (false, true) => println!("known failure [{}] {}", o.id, o.name),
            (true, true) => println!("known failure now passes [{}] {}", o.id, o.name),
            _ => {}
        }
    }
    let passed = report.outcomes.iter().filter(|o| o.pass).count();
    println!("{passed}/{} checks passed", report.outcomes.len());
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn gradients(report: &mut Report) {
    let t0 = Instant::now();
    let groups = full_model(Instance::default(), &Corruption::default()).expect("gradient check runs");
    let secs = t0.elapsed().as_secs_f64();
    let worst = groups.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).expect("groups");
    let failed = groups.iter().filter(|g| !g.passed()).count();
    report.record(
        "1",
        "gradient correctness",
        failed == 0 && secs < 60.0,
        format!(
            "{} tensors, {failed} above tolerance, worst {} at {:.2e}, {secs:.1}s",
            groups.len(),
            worst.name,
            worst.rel_error
        ),
    );
}

fn small_corpus(count: usize, start: u64) -> Vec<ExampleRecord> {
    let config = CorpusConfig {
        frames: 16,
        words: 3,
        d_in: 8,
        vocab: 4,
        min_len: 2,
        max_len: 6,
        ..CorpusConfig::default()
    };
    generate_corpus(&config, start, count).expect("small corpus")
}

fn small_model(seed: u64) -> Model<f64> {
    let config = ModelConfig {
        d_in: 8,
        d_model: 8,
        heads: 2,
        graph_layers: 1,
    };
    Model::new(&config, seed).expect("small model")
}

fn counted_iou(a: Segment, b: Segment, t: usize) -> f64 {
    let inside = |s: Segment, f: usize| s.start <= f && f <= s.end;
    let inter = (0..t).filter(|&f| inside(a, f) && inside(b, f)).count();
    let union = (0..t).filter(|&f| inside(a, f) || inside(b, f)).count();
    inter as f64 / union as f64
}

fn oracles(report: &mut Report) {
    let t0 = Instant::now();
    const T: usize = 32;
    let segments: Vec<Segment> = (0..T).flat_map(|s| (s..T).map(move |e| Segment::new(s, e))).collect();
    let mut mismatches = 0usize;
    for &a in &segments {
        for &b in &segments {
            if temporal_iou(&a, &b) != counted_iou(a, b, T) {
                mismatches += 1;
            }
        }
    }
    let pairs = segments.len() * segments.len();

    let corpus = small_corpus(20, 0);
    let model = small_model(3);
    let infer = InferConfig {
        peruse: PeruseConfig {
            theta: 0.2,
            ..PeruseConfig::default()
        },
        ..InferConfig::from(&TrainConfig::default())
    };
    let (ns, ms) = ([1usize, 2, 5], [0.1, 0.3, 0.5, 0.7]);
    let table = evaluate(&model, &corpus, &ns, &ms, &infer).expect("evaluate");
    let ranked: Vec<Vec<Segment>> = corpus
        .iter()
        .map(|ex| model.infer(ex, &infer).expect("infer").ranked_segments())
        .collect();
    let mut table_mismatches = 0;
    for &n in &ns {
        for &m in &ms {
            let hits = corpus
                .iter()
                .zip(&ranked)
                .filter(|(ex, r)| r[..n].iter().any(|&c| counted_iou(c, ex.gt, ex.frames()) >= m))
                .count();
            if table.get(n, m) != Some(100.0 * hits as f64 / corpus.len() as f64) {
                table_mismatches += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    report.record(
        "2",
        "oracle equivalence",
        mismatches == 0 && table_mismatches == 0 && secs < 10.0,
        format!("{mismatches}/{pairs} IoU pairs differ, {table_mismatches}/12 recall cells differ, {secs:.1}s"),
    );
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).expect("matrix")
}

fn invariants(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    // Frame graph and fusion on random inputs.
    let (mut worst_row, mut prefix_bad) = (0.0f64, 0usize);
    for trial in 0..TRIALS {
        let model = small_model(trial as u64);
        let (t, n) = (rng.random_range(1..=32), rng.random_range(1..=6));
        let tape = Tape::new();
        let p = model.store.bind(&tape, |_| false).expect("bind");
        let video = tape.constant(random_matrix(t, 8, &mut rng));
        let query = tape.constant(random_matrix(n, 8, &mut rng));
        let out = model.sl.forward(&p, video, query).expect("forward");
        let adj = out.adjacency.value();
        for r in 0..adj.rows() {
            worst_row = worst_row.max((adj.row(r).iter().sum::<f64>() - 1.0).abs());
        }
        let (v, fused) = (out.encoded.v.value(), out.fused.value());
        if (0..t).any(|r| fused.row(r)[..8] != *v.row(r)) {
            prefix_bad += 1;
        }
    }
    report.record(
        "3a",
        "adjacency rows sum to one",
        worst_row <= 1e-6,
        format!("{TRIALS} trials, worst |row sum - 1| {worst_row:.2e}"),
    );
    report.record(
        "3b",
        "fused prefix equals encoded frames",
        prefix_bad == 0,
        format!("{prefix_bad}/{TRIALS} trials differ"),
    );

    // Perusal on random frames sharing a direction, so both decisions occur.
    let d = 8;
    let (mut shape_bad, mut scale_bad, mut probes, mut accepted) = (0usize, 0usize, 0usize, 0usize);
    for trial in 0..TRIALS {
        let mut store = ParamStore::<f64>::new();
        let layout = BpLayout::new(&mut store, d, &mut ChaCha8Rng::seed_from_u64(trial as u64));
        let t = rng.random_range(1..=40);
        let base: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut noisy = |s: f64| -> Vec<f64> { base.iter().map(|b| b + s * rng.random_range(-1.0..1.0)).collect() };
        let frames: Vec<Vec<f64>> = (0..t).map(|_| noisy(0.8)).collect();
        let words: Vec<Vec<f64>> = (0..3).map(|_| noisy(0.5)).collect();
        let config = PeruseConfig {
            direction: Direction::ALL[trial % 3],
            theta: rng.random_range(0.0..0.9),
            ..PeruseConfig::default()
        };
        let anchor = rng.random_range(0..t);
        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> { rows.iter().map(|r| r.iter().map(|x| x * c).collect()).collect() };

        let tape = Tape::new();
        let p = store.bind(&tape, |_| false).expect("bind");
        let enhanced = tape.constant(Tensor::from_rows(&frames).expect("frames"));
        let query = tape.constant(Tensor::from_rows(&words).expect("words"));
        let peruser = Peruser::new(&layout, &p, enhanced, query, config).expect("peruser");
        let outcome = peruser.peruse(anchor).expect("peruse");
        let seg = outcome.result.segment;
        let nested = outcome.states.windows(2).all(|w| {
            let (a, b) = (w[0].0, w[1].0);
            b.start <= a.start && a.end <= b.end && b.len() == a.len() + 1
        });
        if !(seg.contains(anchor) && seg.end < t && nested && outcome.result.replay() == Some(seg)) {
            shape_bad += 1;
        }

        let enhanced_c = tape.constant(Tensor::from_rows(&scaled(&frames)).expect("frames"));
        let query_c = tape.constant(Tensor::from_rows(&scaled(&words)).expect("words"));
        let peruser_c = Peruser::new(&layout, &p, enhanced_c, query_c, config).expect("peruser");
        for (step, &si) in outcome.result.trace.iter().zip(&outcome.probe_states) {
            let h: Vec<f64> = outcome.states[si].1.value().data().iter().map(|x| x * c).collect();
            let decision = peruser_c.score(step.frame, &h).is_some_and(|s| s >= config.theta);
            probes += 1;
            accepted += step.accepted as usize;
            if decision != step.accepted {
                scale_bad += 1;
            }
        }
    }
    report.record(
        "3c",
        "perusal contains anchor, grows monotonically, stays in bounds",
        shape_bad == 0,
        format!("{shape_bad}/{TRIALS} trials violate"),
    );
    report.record(
        "3d",
        "perusal decisions invariant to positive scaling",
        scale_bad == 0 && accepted > 0 && accepted < probes,
        format!("{TRIALS} trials, {scale_bad}/{probes} decisions change ({accepted} accepted)"),
    );
}

fn loss_laws(report: &mut Report) {
    let tape = Tape::<f64>::new();
    let group = |s: [f64; 6]| TripletScores {
        vq: tape.scalar(s[0]),
        neg_frame_q: tape.scalar(s[1]),
        v_neg_query: tape.scalar(s[2]),
        vh: tape.scalar(s[3]),
        neg_frame_h: tape.scalar(s[4]),
        v_neg_segment: tape.scalar(s[5]),
    };
    let weights = TripletWeights::from(&TrainConfig::default());
    let value = |groups: &[TripletScores<'_, f64>], w: TripletWeights| {
        triplet_losses(groups, w).and_then(|l| l.item()).expect("triplet loss")
    };
    let satisfied = value(&[group([0.9, 0.6, 0.5, 0.8, 0.3, 0.55]), group([0.1, -0.4, -0.2, 0.0, -0.5, -0.3])], weights);
    let vq_only = TripletWeights {
        gamma2: 0.0,
        ..weights
    };
    let half = value(&[group([0.5; 6])], vq_only);
    let combined = value(&[group([0.5; 6])], weights);

    let probs = tape.constant(Tensor::vector(vec![0.5; 6]).expect("vector"));
    let bce = bce_loss(probs, &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).and_then(|l| l.item()).expect("bce");
    let smooth = |d: f64| tape.scalar(d).smooth_l1(0.0).and_then(|l| l.item()).expect("smooth l1");
    let (s_small, s_neg, s_large) = (smooth(0.4), smooth(-0.4), smooth(2.0));

    let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol;
    let pass = satisfied == 0.0
        && close(half, 0.4, 1e-12)
        && close(combined, 0.6, 1e-12)
        && close(bce, std::f64::consts::LN_2, 1e-9)
        && close(s_small, 0.08, 1e-12)
        && close(s_neg, 0.08, 1e-12)
        && close(s_large, 1.5, 1e-12);
    report.record(
        "4",
        "loss laws",
        pass,
        format!(
            "satisfied {satisfied}, all-0.5 vq {half:.12}, weighted {combined:.12}, bce {bce:.12}, smooth-l1 {s_small:.12}/{s_neg:.12}/{s_large:.12}"
        ),
    );
}

struct Trained {
    train: Vec<ExampleRecord>,
    held: Vec<ExampleRecord>,
    state: TrainState<f64>,
    table: MetricsTable,
    infer: InferConfig,
}

const NS: [usize; 2] = [1, 5];
const MS: [f64; 2] = [0.5, 0.7];

fn frame_auc(model: &Model<f64>, corpus: &[ExampleRecord]) -> f64 {
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for ex in corpus {
        scores.extend(model.frame_scores(ex).expect("scores"));
        labels.extend((0..ex.frames()).map(|t| ex.gt.contains(t)));
    }
    auc(&scores, &labels)
}

/// Confidence of random segments around a ground-truth anchor against their true IoU.
fn confidence_rank_correlation(model: &Model<f64>, corpus: &[ExampleRecord], peruse: PeruseConfig) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut conf, mut iou) = (Vec::new(), Vec::new());
    for ex in corpus {
        let anchor = (ex.gt.start + ex.gt.end) / 2;
        for _ in 0..4 {
            let seg = Segment::new(rng.random_range(0..=anchor), rng.random_range(anchor..ex.frames()));
            conf.push(model.segment_confidence(ex, anchor, seg, peruse).expect("confidence"));
            iou.push(temporal_iou(&seg, &ex.gt));
        }
    }
    spearman(&conf, &iou)
}

/// Examples where the ground-truth segment gets a higher confidence than a
/// random segment lying entirely outside it.
fn gt_beats_disjoint(model: &Model<f64>, corpus: &[ExampleRecord], peruse: PeruseConfig) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut wins = 0;
    for ex in corpus {
        let inside = model.segment_confidence(ex, sample_inside(ex.gt, &mut rng), ex.gt, peruse).expect("confidence");
        let other = sample_outside_interval(ex.gt, ex.frames(), &mut rng).expect("frames outside the ground truth");
        let outside = model.segment_confidence(ex, sample_inside(other, &mut rng), other, peruse).expect("confidence");
        wins += (inside > outside) as usize;
    }
    (wins, corpus.len())
}

fn learning(report: &mut Report) -> Trained {
    let corpus = CorpusConfig::default();
    let train = generate_corpus(&corpus, 0, 2000).expect("train split");
    let held = generate_corpus(&corpus, 2000, 500).expect("held-out split");
    let config = TrainConfig::default();
    let model_config = ModelConfig {
        d_in: corpus.d_in,
        ..ModelConfig::default()
    };
    let infer = InferConfig::from(&config);
    let mut state = TrainState::new(Model::<f64>::new(&model_config, config.seed).expect("model"), config.clone()).expect("state");

    let mut timed = 0.0;
    let mut stage_recall = [0.0; 4];
    for stage in 1..=3u8 {
        let t0 = Instant::now();
        let mut losses = Vec::new();
        train_stage(&mut state, stage, &train, |_, r| {
            println!("  stage {} epoch {:>2} loss {:.5} ({:.1}s)", r.stage, r.epoch, r.loss.total, r.seconds);
            losses.push(r.loss.total);
            Ok(())
        })
        .expect("training");
        timed += t0.elapsed().as_secs_f64();
        let recall = evaluate(&state.model, &held, &[1], &[0.5], &infer).expect("evaluate");
        stage_recall[stage as usize] = recall.get(1, 0.5).unwrap_or(0.0);
        match stage {
            1 => {
                let a = frame_auc(&state.model, &held);
                report.record(
                    "D1",
                    "frame AUC after stage 1",
                    a > 0.9,
                    format!("AUC {a:.4} (loss {:.4} -> {:.4})", losses[0], losses[losses.len() - 1]),
                );
            }
            2 => {
                let rho = confidence_rank_correlation(&state.model, &held[..200], infer.peruse);
                report.record(
                    "D2",
                    "confidence tracks IoU after stage 2",
                    rho > 0.6,
                    format!("Spearman {rho:.4} over 800 segments"),
                );
                let (wins, total) = gt_beats_disjoint(&state.model, &held, infer.peruse);
                let pct = 100.0 * wins as f64 / total as f64;
                report.record(
                    "D3",
                    "ground truth outscores a disjoint segment after stage 2",
                    pct >= 90.0,
                    format!("{wins}/{total} examples ({pct:.1}%)"),
                );
            }
            _ => {}
        }
    }
    println!(
        "  held-out R@1,IoU=0.5 after stages 1/2/3: {:.2} / {:.2} / {:.2}",
        stage_recall[1], stage_recall[2], stage_recall[3]
    );

    let t0 = Instant::now();
    let table = evaluate(&state.model, &held, &NS, &MS, &infer).expect("evaluate");
    timed += t0.elapsed().as_secs_f64();
    println!("{}", table.to_text());
    let baseline = random_baseline(&held, 0.5);
    let r1 = table.get(1, 0.5).expect("R@1,IoU=0.5");
    report.record(
        "5",
        "learning signal",
        r1 >= baseline + 30.0 && timed < 900.0,
        format!("R@1,IoU=0.5 {r1:.2} vs baseline {baseline:.2} + 30, train+eval {timed:.0}s"),
    );
    report.record(
        "D4",
        "stage 3 does not lose to stage 2",
        stage_recall[3] >= stage_recall[2],
        format!("R@1,IoU=0.5 {:.2} after stage 2, {:.2} after stage 3", stage_recall[2], stage_recall[3]),
    );
    Trained {
        train,
        held,
        state,
        table,
        infer,
    }
}

fn directions(report: &mut Report, t: &Trained) {
    let recalls: Vec<(Direction, f64)> = Direction::ALL
        .iter()
        .map(|&direction| {
            let infer = InferConfig {
                peruse: PeruseConfig {
                    direction,
                    ..t.infer.peruse
                },
                ..t.infer
            };
            let table = evaluate(&t.state.model, &t.held, &[1], &[0.5], &infer).expect("evaluate");
            (direction, table.get(1, 0.5).expect("R@1"))
        })
        .collect();
    let lo = recalls.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let hi = recalls.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let listed: Vec<String> = recalls.iter().map(|(d, r)| format!("{d} {r:.2}")).collect();
    report.record(
        "6",
        "direction insensitivity",
        hi - lo < 5.0,
        format!("{}; spread {:.2}", listed.join(", "), hi - lo),
    );
}

fn two_step(report: &mut Report, t: &Trained) {
    let half = mean_half_width(&t.train);
    let sl_only = evaluate_sl_only(&t.state.model, &t.held, half, &[1], &MS, t.infer.k).expect("sl-only");
    let full = t.table.get(1, 0.7).expect("R@1,IoU=0.7");
    let skim = sl_only.get(1, 0.7).expect("R@1,IoU=0.7");
    report.record(
        "7",
        "two-step benefit",
        full > skim,
        format!(
            "R@1,IoU=0.7 full {full:.2} vs skim-only {skim:.2} (half-width {half}; IoU=0.5 {:.2} vs {:.2})",
            t.table.get(1, 0.5).unwrap_or(f64::NAN),
            sl_only.get(1, 0.5).unwrap_or(f64::NAN)
        ),
    );
}

fn tiny_pipeline_csv() -> String {
    let train = small_corpus(32, 0);
    let held = small_corpus(12, 32);
    let config = TrainConfig {
        epochs_stage1: 1,
        epochs_stage2: 1,
        epochs_stage3: 1,
        lr: 1e-3,
        batch_size: 4,
        theta: 0.2,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(small_model(config.seed), config.clone()).expect("state");
    for stage in 1..=3 {
        train_stage(&mut state, stage, &train, |_, _| Ok(())).expect("training");
    }
    evaluate(&state.model, &held, &NS, &MS, &InferConfig::from(&config))
        .expect("evaluate")
        .to_csv()
}

fn with_byte(bytes: &[u8], at: usize, value: u8) -> Vec<u8> {
    let mut out = bytes.to_vec();
    out[at] = value;
    out
}

fn persistence(report: &mut Report, t: &Trained) {
    let (a, b) = (tiny_pipeline_csv(), tiny_pipeline_csv());
    let again = evaluate(&t.state.model, &t.held, &NS, &MS, &t.infer).expect("evaluate").to_csv();
    let metrics_same = a == b && again == t.table.to_csv();

    let dir = tempfile::tempdir().expect("tempdir");
    let corpus_path = dir.path().join("heldout.bin");
    save_corpus(&corpus_path, &t.held).expect("save corpus");
    let loaded = load_corpus(&corpus_path).expect("load corpus");
    let corpus_bytes = encode_corpus(&t.held).expect("encode corpus");
    let corpus_same = loaded == t.held && encode_corpus(&loaded).expect("encode corpus") == corpus_bytes;

    let ckpt_path = dir.path().join("stage3.ckpt");
    save_checkpoint(&ckpt_path, &t.state).expect("save checkpoint");
    let restored: TrainState<f64> = load_checkpoint(&ckpt_path).expect("load checkpoint");
    let ckpt_bytes = encode_checkpoint(&t.state).expect("encode checkpoint");
    let params_same = restored
        .model
        .store
        .entries()
        .iter()
        .zip(t.state.model.store.entries())
        .all(|(x, y)| x.name == y.name && x.tensor.data() == y.tensor.data());
    let ckpt_same = params_same && encode_checkpoint(&restored).expect("encode checkpoint") == ckpt_bytes;

    let corpus_errors = [
        matches!(decode_corpus(&with_byte(&corpus_bytes, 0, b'X')), Err(DataError::MagicMismatch { .. })),
        matches!(decode_corpus(&with_byte(&corpus_bytes, 8, 9)), Err(DataError::MalformedHeader(_))),
        matches!(decode_corpus(&corpus_bytes[..corpus_bytes.len() - 5]), Err(DataError::Truncated { .. })),
    ];
    let ckpt_errors = [
        matches!(decode_checkpoint::<f64>(&with_byte(&ckpt_bytes, 0, b'X')), Err(CheckpointError::BadMagic { .. })),
        matches!(
            decode_checkpoint::<f64>(&with_byte(&ckpt_bytes, 8, 9)),
            Err(CheckpointError::UnsupportedVersion { .. })
        ),
        matches!(decode_checkpoint::<f64>(&ckpt_bytes[..ckpt_bytes.len() - 5]), Err(CheckpointError::Truncated { .. })),
    ];
    let rejected = corpus_errors.iter().chain(&ckpt_errors).filter(|&&ok| ok).count();
    report.record(
        "8",
        "determinism and persistence",
        metrics_same && corpus_same && ckpt_same && rejected == 6,
        format!(
            "metrics identical {metrics_same}, corpus round-trip {corpus_same} ({} bytes), checkpoint round-trip {ckpt_same} ({} bytes), {rejected}/6 corruptions classified",
            corpus_bytes.len(),
            ckpt_bytes.len()
        ),
    );
}

/// Exact recovery on a noiseless corpus, at a quarter of the default training set.
fn noiseless(report: &mut Report) {
    let corpus = CorpusConfig {
        noise_sigma: 0.0,
        ..CorpusConfig::default()
    };
    let train = generate_corpus(&corpus, 0, 500).expect("train split");
    let held = generate_corpus(&corpus, 500, 200).expect("held-out split");
    let config = TrainConfig::default();
    let model_config = ModelConfig {
        d_in: corpus.d_in,
        ..ModelConfig::default()
    };
    let mut state = TrainState::new(Model::<f64>::new(&model_config, config.seed).expect("model"), config.clone()).expect("state");
    for stage in 1..=3 {
        train_stage(&mut state, stage, &train, |_, _| Ok(())).expect("training");
    }
    let infer = InferConfig::from(&config);
    let (mut exact, mut shorter, mut iou) = (0, 0, 0.0);
    for ex in &held {
        let seg = state.model.infer(ex, &infer).expect("infer").segment;
        exact += (seg == ex.gt) as usize;
        shorter += (seg.len() < ex.gt.len()) as usize;
        iou += temporal_iou(&seg, &ex.gt);
    }
    let pct = 100.0 * exact as f64 / held.len() as f64;
    report.record(
        "D5",
        "noiseless corpus recovered exactly",
        pct >= 95.0,
        format!(
            "{exact}/{} exact ({pct:.1}%), {shorter} shorter than the ground truth, mean IoU {:.3}, trained on 500 examples",
            held.len(),
            iou / held.len() as f64
        ),
    );
}
