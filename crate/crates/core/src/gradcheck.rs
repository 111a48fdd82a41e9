//! Central finite-difference verification of taped gradients.

use serde::Serialize;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bp::{conf_loss, linguistic_score, triplet_losses, visual_score, PeruseConfig, Peruser, TripletScores};
use crate::config::{ModelConfig, TrainConfig};
use crate::error::Result;
use crate::model::Model;
use crate::params::{Bound, ParamGroup, ParamStore};
use crate::segment::Segment;
use crate::sl::bce_loss;
use crate::tensor::{Tape, Tensor, Var};

/// Step used for central differences.
pub const STEP: f64 = 1e-5;
/// Largest accepted normwise relative error.
pub const TOLERANCE: f64 = 1e-4;

/// Worst disagreement between analytic and numeric gradients for one tensor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupError {
    pub name: String,
    pub numel: usize,
    /// `max|a − n| / max(‖a‖∞, ‖n‖∞, 1e-6)`
    pub rel_error: f64,
    pub max_abs_grad: f64,
}

impl GroupError {
    pub fn passed(&self) -> bool {
        self.rel_error < TOLERANCE
    }
}

/// Test hook: scales the analytic gradient of one named tensor before comparison.
#[derive(Clone, Debug, Default)]
pub struct Corruption {
    pub name: Option<String>,
    pub factor: f64,
}

/// Compares the gradient of `loss` with respect to every tensor in `store`
/// against central finite differences with step `h`.
pub fn check<F>(store: &ParamStore<f64>, h: f64, corrupt: &Corruption, loss: F) -> Result<Vec<GroupError>>
where
    F: for<'t> Fn(&Bound<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::with_finite_check(true);
    let bound = store.bind(&tape, |_| true)?;
    let root = loss(&bound)?;
    let grads = tape.backward(root)?;
    let analytic = bound.collect_grads(&grads);

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::with_finite_check(true);
        let bound = s.bind(&tape, |_| false)?;
        loss(&bound)?.item()
    };

    let mut probe = store.clone();
    let mut report = Vec::with_capacity(store.len());
    for (i, id) in store.ids().enumerate() {
        let entry = store.entry(id);
        let n = entry.tensor.numel();
        let mut a = analytic[i].clone().unwrap_or_else(|| vec![0.0; n]);
        if corrupt.name.as_deref() == Some(entry.name.as_str()) {
            a.iter_mut().for_each(|g| *g *= corrupt.factor);
        }
        let mut numeric = vec![0.0; n];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let x = entry.tensor.data()[k];
            probe.get_mut(id).data_mut()[k] = x + h;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = x - h;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = x;
            *slot = (up - down) / (2.0 * h);
        }
        let inf = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let diff = a.iter().zip(&numeric).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        let scale = inf(&a).max(inf(&numeric)).max(1e-6);
        report.push(GroupError {
            name: entry.name.clone(),
            numel: n,
            rel_error: diff / scale,
            max_abs_grad: inf(&a),
        });
    }
    Ok(report)
}

/// Shape of the built-in full-model instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Instance {
    pub frames: usize,
    pub words: usize,
    pub d_model: usize,
    pub seed: u64,
}

impl Default for Instance {
    fn default() -> Self {
        Self {
            frames: 6,
            words: 3,
            d_model: 8,
            seed: 1,
        }
    }
}

/// Checks the combined classification, matching and confidence loss of a
/// small model. The video, query and mismatched query enter as extra tensors
/// (`input.*`) so their gradients are verified too. Frame and segment choices
/// are fixed so the loss is smooth in every parameter.
pub fn full_model(instance: Instance, corrupt: &Corruption) -> Result<Vec<GroupError>> {
    let Instance { frames, words, d_model, seed } = instance;
    let config = ModelConfig {
        d_in: d_model,
        d_model,
        heads: 2,
        graph_layers: 1,
    };
    let model = Model::<f64>::new(&config, seed)?;
    let mut store = model.store.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut input = |name: &str, rows: usize| {
        let data = (0..rows * d_model).map(|_| normal.sample(&mut rng)).collect();
        store.register(name, ParamGroup::Sl, Tensor::matrix(rows, d_model, data).expect("sized"))
    };
    let video = input("input.video", frames);
    let query = input("input.query", words);
    let neg_query = input("input.neg_query", words);

    let gt = Segment::new(frames / 3, frames / 2);
    let labels: Vec<f64> = (0..frames).map(|t| if gt.contains(t) { 1.0 } else { 0.0 }).collect();
    let train = TrainConfig::default();
    let peruse = PeruseConfig::from(&train);
    let last = frames - 1;

    check(&store, STEP, corrupt, |p| {
        let out = model.sl.forward(p, p.get(video), p.get(query))?;
        let mut total = bce_loss(out.scores, &labels)?;
        let q = out.encoded.q;
        let q_neg = model.sl.query.forward(p, p.get(neg_query))?;
        let peruser = Peruser::new(&model.bp, p, out.enhanced, q, peruse)?;
        let grown = |anchor: usize, seg: Segment| -> Result<Var<'_, f64>> {
            Ok(peruser.grow(anchor, seg)?.last().expect("anchor state").1)
        };
        let h_pos = grown(gt.start + 1, gt)?;
        let h_neg = grown(0, Segment::new(0, gt.start - 1))?;
        let mut groups = Vec::new();
        for (pos, neg) in [(gt.start, 0), (gt.end, last)] {
            let (v, v_bar) = (out.enhanced.row(pos)?, out.enhanced.row(neg)?);
            groups.push(TripletScores {
                vq: linguistic_score(v, q)?,
                neg_frame_q: linguistic_score(v_bar, q)?,
                v_neg_query: linguistic_score(v, q_neg)?,
                vh: visual_score(v, h_pos)?,
                neg_frame_h: visual_score(v_bar, h_pos)?,
                v_neg_segment: visual_score(v, h_neg)?,
            });
        }
        total = total.add(triplet_losses(&groups, (&train).into())?)?;
        let wide = Segment::new(1, last);
        let c1 = conf_loss(model.bp.confidence(p, h_pos)?, 1.0)?;
        let c2 = conf_loss(model.bp.confidence(p, grown(gt.start, wide)?)?, wide.iou(&gt))?;
        total.add(c1)?.add(c2)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_model_gradients_match() {
        let report = full_model(Instance::default(), &Corruption::default()).unwrap();
        let failed: Vec<_> = report.iter().filter(|g| !g.passed()).collect();
        assert!(failed.is_empty(), "{failed:?}");
        let mut names: Vec<&str> = report.iter().map(|g| g.name.as_str()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        assert!(names.contains(&"input.video") && names.contains(&"input.neg_query"));
        let silent: Vec<_> = report.iter().filter(|g| g.max_abs_grad == 0.0).map(|g| &g.name).collect();
        assert!(silent.is_empty(), "no gradient reached {silent:?}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let corrupt = Corruption {
            name: Some("bp.update.w_z".into()),
            factor: 1.01,
        };
        let report = full_model(Instance::default(), &corrupt).unwrap();
        let bad: Vec<&str> = report.iter().filter(|g| !g.passed()).map(|g| g.name.as_str()).collect();
        assert_eq!(bad, ["bp.update.w_z"]);
    }
}
