//! Three-stage training: skimming head alone, perusing head alone with the
//! skimming half frozen, then everything end to end.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bp::{conf_loss, linguistic_score, triplet_losses, visual_score, PeruseConfig, Peruser, TripletScores};
use crate::config::{TrainConfig, UpdateStrategy};
use crate::data::ExampleRecord;
use crate::error::{Result, TensorError};
use crate::model::Model;
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::segment::Segment;
use crate::sl::bce_loss;
use crate::tensor::{Tape, Var};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction. Moments are kept for every parameter in store
/// order; only the ids passed to [`Adam::step`] are touched.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    pub t: u64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(store: &ParamStore<S>) -> Self {
        let zeros: Vec<Vec<S>> = store.entries().iter().map(|e| vec![S::zero(); e.tensor.numel()]).collect();
        Self {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<S>, ids: &[ParamId], lr: f64) -> Result<()> {
        if let Some(&id) = ids.iter().find(|&&id| store.get(id).grad().is_none()) {
            return Err(TensorError::Contract(format!("no gradient for {}", store.entry(id).name)));
        }
        self.t += 1;
        let (b1, b2) = (S::of(ADAM_BETA1), S::of(ADAM_BETA2));
        let bc1 = S::one() - b1.powi(self.t as i32);
        let bc2 = S::one() - b2.powi(self.t as i32);
        let (lr, eps) = (S::of(lr), S::of(ADAM_EPS));
        for &id in ids {
            let i = id.index();
            let tensor = store.get_mut(id);
            let g = tensor.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, x) in tensor.data_mut().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (S::one() - b1) * g[k];
                v[k] = b2 * v[k] + (S::one() - b2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Divides the learning rate by 10 once the epoch loss improves by less than
/// `min_rel` (relative) over `window` epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub window: usize,
    pub min_rel: f64,
    pub history: Vec<f64>,
    /// History index of the most recent decay; the next comparison window starts there.
    pub last_decay: usize,
}

impl Plateau {
    pub fn new(window: usize, min_rel: f64) -> Self {
        Self {
            window,
            min_rel,
            history: Vec::new(),
            last_decay: 0,
        }
    }

    /// Records an epoch loss; returns true when the rate should decay.
    pub fn observe(&mut self, loss: f64) -> bool {
        self.history.push(loss);
        let e = self.history.len();
        if e < self.window + 1 || e - 1 - self.window < self.last_decay {
            return false;
        }
        let past = self.history[e - 1 - self.window];
        let rel = (past - loss) / past.abs().max(f64::MIN_POSITIVE);
        if rel < self.min_rel {
            self.last_decay = e - 1;
            true
        } else {
            false
        }
    }
}

/// Per-epoch mean of each loss term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub class: f64,
    pub matching: f64,
    pub conf: f64,
    pub total: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.class += o.class;
        self.matching += o.matching;
        self.conf += o.conf;
        self.total += o.total;
    }

    fn scale(&mut self, c: f64) {
        self.class *= c;
        self.matching *= c;
        self.conf *= c;
        self.total *= c;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub stage: u8,
    /// 1-based epoch within the stage.
    pub epoch: usize,
    /// Rate used during this epoch.
    pub lr: f64,
    pub loss: LossParts,
    pub seconds: f64,
}

/// Everything needed to continue training bit-identically.
#[derive(Clone, Debug)]
pub struct TrainState<S: Scalar> {
    pub model: Model<S>,
    pub config: TrainConfig,
    /// Current stage, 0 before any stage has begun.
    pub stage: u8,
    /// Completed epochs in the current stage.
    pub epoch: usize,
    pub lr: f64,
    pub adam: Adam<S>,
    pub plateau: Plateau,
    pub rng: ChaCha8Rng,
}

impl<S: Scalar> TrainState<S> {
    pub fn new(model: Model<S>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            adam: Adam::new(&model.store),
            plateau: Plateau::new(config.plateau_window, config.plateau_min_rel),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            lr: config.lr,
            model,
            config,
            stage: 0,
            epoch: 0,
        })
    }

    /// Resets optimizer, schedule and epoch counter for `stage`.
    pub fn begin_stage(&mut self, stage: u8) {
        self.stage = stage;
        self.epoch = 0;
        self.lr = self.config.lr;
        self.adam = Adam::new(&self.model.store);
        self.plateau = Plateau::new(self.config.plateau_window, self.config.plateau_min_rel);
    }

    pub fn stage_complete(&self) -> bool {
        self.stage > 0 && self.epoch >= self.config.epochs(self.stage)
    }
}

fn check_stage(stage: u8) -> Result<()> {
    if (1..=3).contains(&stage) {
        Ok(())
    } else {
        Err(TensorError::Contract(format!("no training stage {stage}")))
    }
}

pub fn stage_trains(stage: u8, group: ParamGroup) -> bool {
    match stage {
        1 => group == ParamGroup::Sl,
        2 => group == ParamGroup::Bp,
        _ => true,
    }
}

/// Parameters updated in `stage`. The gated-update weights sit out when
/// the max-pool strategy bypasses them.
pub fn trainable_ids<S: Scalar>(model: &Model<S>, stage: u8, strategy: UpdateStrategy) -> Vec<ParamId> {
    let skip = if strategy == UpdateStrategy::MaxPool {
        model.bp.update_ids()
    } else {
        Vec::new()
    };
    model
        .store
        .ids()
        .filter(|&id| stage_trains(stage, model.store.entry(id).group) && !skip.contains(&id))
        .collect()
}

/// Uniform frame inside `gt`.
pub fn sample_inside<R: Rng + ?Sized>(gt: Segment, rng: &mut R) -> usize {
    rng.random_range(gt.start..=gt.end)
}

/// Uniform frame outside `gt`, or `None` when `gt` covers the video.
pub fn sample_outside<R: Rng + ?Sized>(gt: Segment, frames: usize, rng: &mut R) -> Option<usize> {
    let outside = frames - gt.len();
    if outside == 0 {
        return None;
    }
    let k = rng.random_range(0..outside);
    Some(if k < gt.start { k } else { k + gt.len() })
}

/// The `k`-th interval of `[lo, lo + n)` in (start, end) order.
fn nth_interval(lo: usize, n: usize, mut k: usize) -> Segment {
    for s in 0..n {
        let count = n - s;
        if k < count {
            return Segment::new(lo + s, lo + s + k);
        }
        k -= count;
    }
    unreachable!("interval index out of range")
}

/// Uniform sub-interval of `gt`.
pub fn sample_sub_interval<R: Rng + ?Sized>(gt: Segment, rng: &mut R) -> Segment {
    let n = gt.len();
    nth_interval(gt.start, n, rng.random_range(0..n * (n + 1) / 2))
}

/// Uniform interval lying entirely before or after `gt`.
pub fn sample_outside_interval<R: Rng + ?Sized>(gt: Segment, frames: usize, rng: &mut R) -> Option<Segment> {
    let left = gt.start;
    let right = frames - 1 - gt.end;
    let (cl, cr) = (left * (left + 1) / 2, right * (right + 1) / 2);
    if cl + cr == 0 {
        return None;
    }
    let k = rng.random_range(0..cl + cr);
    Some(if k < cl {
        nth_interval(0, left, k)
    } else {
        nth_interval(gt.end + 1, right, k - cl)
    })
}

/// Example indices grouped for drawing a query of a different activity.
pub struct QueryPool {
    activities: Vec<u32>,
}

impl QueryPool {
    pub fn new(corpus: &[ExampleRecord]) -> Result<Self> {
        let activities: Vec<u32> = corpus.iter().map(|e| e.activity_id).collect();
        if activities.windows(2).all(|w| w[0] == w[1]) {
            return Err(TensorError::Contract(
                "triplet sampling needs examples of at least two activities".into(),
            ));
        }
        Ok(Self { activities })
    }

    /// Index of a uniformly drawn example whose activity differs from `activity`.
    pub fn other<R: Rng + ?Sized>(&self, activity: u32, rng: &mut R) -> usize {
        loop {
            let i = rng.random_range(0..self.activities.len());
            if self.activities[i] != activity {
                return i;
            }
        }
    }
}

struct ExampleGrad<S> {
    loss: LossParts,
    grads: Vec<Option<Vec<S>>>,
}

fn grown_state<'t, S: Scalar>(peruser: &Peruser<'_, 't, S>, seg: Segment, rng: &mut ChaCha8Rng) -> Result<Var<'t, S>> {
    let anchor = sample_inside(seg, rng);
    let states = peruser.grow(anchor, seg)?;
    Ok(states.last().expect("grow yields the anchor state").1)
}

/// Loss and parameter gradients of one example in `stage`.
fn example_gradient<S: Scalar>(
    model: &Model<S>,
    corpus: &[ExampleRecord],
    pool: Option<&QueryPool>,
    index: usize,
    seed: u64,
    stage: u8,
    cfg: &TrainConfig,
) -> Result<ExampleGrad<S>> {
    let ex = &corpus[index];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tape = Tape::with_finite_check(cfg.check_finite);
    let p = model.store.bind(&tape, |g| stage_trains(stage, g))?;
    let out = model.forward_sl(&p, ex)?;
    let t_len = ex.frames();
    let weight = |w: f64| if stage == 3 { w } else { 1.0 };
    let mut parts = LossParts::default();
    let mut total = tape.scalar(S::zero());

    if stage != 2 {
        let bce = bce_loss(out.scores, &ex.labels())?;
        parts.class = bce.item()?.to_f64_lossless();
        total = total.add(bce.scale(S::of(weight(cfg.weight_class)))?)?;
    }

    if stage != 1 {
        let pool = pool.ok_or_else(|| TensorError::Contract("perusing losses need a query pool".into()))?;
        let other = &corpus[pool.other(ex.activity_id, &mut rng)];
        let q = out.encoded.q;
        let q_neg = model.sl.query.forward(&p, tape.constant(other.query.to_tensor()))?;
        let peruser = Peruser::new(&model.bp, &p, out.enhanced, q, PeruseConfig::from(cfg))?;
        let gt = ex.gt;

        let mut groups = Vec::with_capacity(cfg.triplets_per_example);
        for _ in 0..cfg.triplets_per_example {
            let pos = sample_inside(gt, &mut rng);
            let neg = sample_outside(gt, t_len, &mut rng)
                .ok_or_else(|| TensorError::Contract("ground truth covers the whole video".into()))?;
            let seg_pos = sample_sub_interval(gt, &mut rng);
            let seg_neg = sample_outside_interval(gt, t_len, &mut rng).expect("a frame exists outside");
            let h_pos = grown_state(&peruser, seg_pos, &mut rng)?;
            let h_neg = grown_state(&peruser, seg_neg, &mut rng)?;
            let v = out.enhanced.row(pos)?;
            let v_bar = out.enhanced.row(neg)?;
            groups.push(TripletScores {
                vq: linguistic_score(v, q)?,
                neg_frame_q: linguistic_score(v_bar, q)?,
                v_neg_query: linguistic_score(v, q_neg)?,
                vh: visual_score(v, h_pos)?,
                neg_frame_h: visual_score(v_bar, h_pos)?,
                v_neg_segment: visual_score(v, h_neg)?,
            });
        }
        let matching = triplet_losses(&groups, cfg.into())?;
        parts.matching = matching.item()?.to_f64_lossless();
        total = total.add(matching.scale(S::of(weight(cfg.weight_match)))?)?;

        // One on-policy expansion and one random-extent growth from the same
        // positive anchor, each regressed onto its true IoU.
        let anchor = sample_inside(gt, &mut rng);
        let perused = peruser.peruse(anchor)?;
        let c1 = conf_loss(perused.confidence, perused.result.segment.iou(&gt))?;
        let span = (t_len / 3).max(1);
        let start = anchor.saturating_sub(rng.random_range(0..=span));
        let end = (anchor + rng.random_range(0..=span)).min(t_len - 1);
        let random = Segment::new(start, end);
        let h = peruser.grow(anchor, random)?.last().expect("non-empty").1;
        let c2 = conf_loss(model.bp.confidence(&p, h)?, random.iou(&gt))?;
        let conf = c1.add(c2)?.scale(S::of(0.5))?;
        parts.conf = conf.item()?.to_f64_lossless();
        total = total.add(conf.scale(S::of(weight(cfg.weight_conf)))?)?;
    }

    parts.total = total.item()?.to_f64_lossless();
    if !parts.total.is_finite() {
        return Err(TensorError::NonFinite { op: "training loss" });
    }
    let grads = tape.backward(total)?;
    Ok(ExampleGrad {
        loss: parts,
        grads: p.collect_grads(&grads),
    })
}

/// One pass over `corpus` in a fresh shuffled order.
fn run_epoch<S: Scalar>(state: &mut TrainState<S>, corpus: &[ExampleRecord], pool: Option<&QueryPool>) -> Result<LossParts> {
    let stage = state.stage;
    let ids = trainable_ids(&state.model, stage, state.config.update_strategy);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut state.rng);
    let mut epoch = LossParts::default();
    for batch in order.chunks(state.config.batch_size) {
        let seeds: Vec<u64> = batch.iter().map(|_| state.rng.random()).collect();
        let model = &state.model;
        let cfg = &state.config;
        let results = batch
            .par_iter()
            .zip(&seeds)
            .map(|(&i, &seed)| example_gradient(model, corpus, pool, i, seed, stage, cfg))
            .collect::<Result<Vec<_>>>()?;
        let store = &mut state.model.store;
        store.zero_grads();
        store.reset_grads(&ids)?;
        for r in &results {
            store.accumulate_flat(&r.grads)?;
            epoch.add(&r.loss);
        }
        store.scale_grads(S::one() / S::of(batch.len() as f64));
        state.adam.step(store, &ids, state.lr)?;
    }
    store_is_finite(&state.model.store)?;
    epoch.scale(1.0 / corpus.len() as f64);
    Ok(epoch)
}

fn store_is_finite<S: Scalar>(store: &ParamStore<S>) -> Result<()> {
    match store.entries().iter().find(|e| !e.tensor.is_finite()) {
        Some(_) => Err(TensorError::NonFinite { op: "adam_step" }),
        None => Ok(()),
    }
}

/// Runs (or resumes) `stage` to its configured epoch count, calling
/// `on_epoch` after each completed epoch.
pub fn train_stage<S: Scalar>(
    state: &mut TrainState<S>,
    stage: u8,
    corpus: &[ExampleRecord],
    mut on_epoch: impl FnMut(&TrainState<S>, &EpochReport) -> Result<()>,
) -> Result<Vec<EpochReport>> {
    check_stage(stage)?;
    if corpus.is_empty() {
        return Err(TensorError::Contract("training corpus is empty".into()));
    }
    if state.stage != stage {
        state.begin_stage(stage);
    }
    let pool = if stage == 1 { None } else { Some(QueryPool::new(corpus)?) };
    let mut reports = Vec::new();
    while state.epoch < state.config.epochs(stage) {
        let started = Instant::now();
        let lr = state.lr;
        let loss = run_epoch(state, corpus, pool.as_ref())?;
        state.epoch += 1;
        if state.plateau.observe(loss.total) {
            state.lr /= 10.0;
        }
        let report = EpochReport {
            stage,
            epoch: state.epoch,
            lr,
            loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(state, &report)?;
        reports.push(report);
    }
    Ok(reports)
}

/// Stage 1: frame classification only.
pub fn train_stage1<S: Scalar>(state: &mut TrainState<S>, corpus: &[ExampleRecord]) -> Result<Vec<EpochReport>> {
    train_stage(state, 1, corpus, |_, _| Ok(()))
}

/// Stage 2: matching and confidence losses with the skimming half frozen.
pub fn train_stage2<S: Scalar>(state: &mut TrainState<S>, corpus: &[ExampleRecord]) -> Result<Vec<EpochReport>> {
    train_stage(state, 2, corpus, |_, _| Ok(()))
}

/// Stage 3: every loss, every parameter.
pub fn train_stage3<S: Scalar>(state: &mut TrainState<S>, corpus: &[ExampleRecord]) -> Result<Vec<EpochReport>> {
    train_stage(state, 3, corpus, |_, _| Ok(()))
}

/// Per-parameter flags: did any example of the first `batches` batches of
/// `stage` produce a nonzero gradient?
pub fn gradient_coverage<S: Scalar>(
    model: &Model<S>,
    config: &TrainConfig,
    corpus: &[ExampleRecord],
    stage: u8,
    batches: usize,
) -> Result<Vec<(String, bool)>> {
    check_stage(stage)?;
    let pool = QueryPool::new(corpus)?;
    let mut hit = vec![false; model.store.len()];
    let n = (batches * config.batch_size).min(corpus.len());
    let results = (0..n)
        .into_par_iter()
        .map(|i| example_gradient(model, corpus, Some(&pool), i, i as u64, stage, config))
        .collect::<Result<Vec<_>>>()?;
    for r in results {
        for (h, g) in hit.iter_mut().zip(&r.grads) {
            *h |= g.as_ref().is_some_and(|g| g.iter().any(|x| *x != S::zero()));
        }
    }
    Ok(model.store.entries().iter().zip(hit).map(|(e, h)| (e.name.clone(), h)).collect())
}

#[cfg(test)]
#[path = "train_tests.rs"]
pub(crate) mod tests;
