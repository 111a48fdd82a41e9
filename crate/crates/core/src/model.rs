//! The full two-step localizer: parameters, layouts and inference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bp::{BpLayout, PeruseConfig, PeruseResult, Peruser};
use crate::config::{ModelConfig, TrainConfig};
use crate::data::ExampleRecord;
use crate::error::{Result, TensorError};
use crate::params::{Bound, ParamStore};
use crate::scalar::Scalar;
use crate::segment::Segment;
use crate::sl::{topk_frames, SlLayout, SlOutput};
use crate::tensor::Tape;

#[derive(Clone, Debug)]
pub struct Model<S: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<S>,
    pub sl: SlLayout,
    pub bp: BpLayout,
}

/// Knobs needed at inference time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferConfig {
    pub k: usize,
    pub peruse: PeruseConfig,
    pub check_finite: bool,
}

impl From<&TrainConfig> for InferConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            k: c.k,
            peruse: c.into(),
            check_finite: c.check_finite,
        }
    }
}

/// Output of [`Model::infer`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub segment: Segment,
    pub confidence: f64,
    pub anchor: usize,
    /// Frame probabilities from the classifier.
    pub scores: Vec<f64>,
    /// One perused segment per anchor, by descending confidence.
    pub candidates: Vec<PeruseResult>,
}

impl Prediction {
    pub fn ranked_segments(&self) -> Vec<Segment> {
        self.candidates.iter().map(|c| c.segment).collect()
    }
}

impl<S: Scalar> Model<S> {
    /// Freshly initialized parameters drawn from `seed`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let sl = SlLayout::new(
            &mut store,
            config.d_in,
            config.d_model,
            config.heads,
            config.graph_layers,
            &mut rng,
        )?;
        let bp = BpLayout::new(&mut store, config.d_model, &mut rng);
        Ok(Self {
            config: config.clone(),
            store,
            sl,
            bp,
        })
    }

    /// Runs the skimming-and-locating half on one example.
    pub fn forward_sl<'t>(&self, p: &Bound<'t, S>, example: &ExampleRecord) -> Result<SlOutput<'t, S>> {
        let tape = p.tape();
        if example.features.width != self.config.d_in || example.query.width != self.config.d_in {
            return Err(TensorError::Shape {
                op: "forward_sl",
                lhs: vec![example.features.width, example.query.width],
                rhs: vec![self.config.d_in],
            });
        }
        let video = tape.constant(example.features.to_tensor());
        let query = tape.constant(example.query.to_tensor());
        self.sl.forward(p, video, query)
    }

    /// Skims the top-`k` anchors, peruses each and ranks the segments by
    /// confidence; ties go to the smaller anchor index.
    pub fn infer(&self, example: &ExampleRecord, config: &InferConfig) -> Result<Prediction> {
        let tape = Tape::with_finite_check(config.check_finite);
        let p = self.store.bind(&tape, |_| false)?;
        let out = self.forward_sl(&p, example)?;
        let scores = out.scores.value();
        let anchors = topk_frames(scores.data(), config.k)?;
        let peruser = Peruser::new(&self.bp, &p, out.enhanced, out.encoded.q, config.peruse)?;
        let mut candidates = anchors
            .iter()
            .map(|&a| peruser.peruse(a).map(|o| o.result))
            .collect::<Result<Vec<_>>>()?;
        candidates.sort_by(|a, b| {
            b.confidence
                .partial_cmp(&a.confidence)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.anchor.cmp(&b.anchor))
        });
        let best = &candidates[0];
        Ok(Prediction {
            segment: best.segment,
            confidence: best.confidence,
            anchor: best.anchor,
            scores: scores.data().iter().map(|x| x.to_f64_lossless()).collect(),
            candidates,
        })
    }

    /// Frame probabilities only.
    pub fn frame_scores(&self, example: &ExampleRecord) -> Result<Vec<f64>> {
        let tape = Tape::with_finite_check(false);
        let p = self.store.bind(&tape, |_| false)?;
        let out = self.forward_sl(&p, example)?;
        Ok(out.scores.value().data().iter().map(|x| x.to_f64_lossless()).collect())
    }

    /// Predicted confidence for the segment built by absorbing every frame of
    /// `segment` outward from `anchor`.
    pub fn segment_confidence(&self, example: &ExampleRecord, anchor: usize, segment: Segment, peruse: PeruseConfig) -> Result<f64> {
        let tape = Tape::with_finite_check(false);
        let p = self.store.bind(&tape, |_| false)?;
        let out = self.forward_sl(&p, example)?;
        let peruser = Peruser::new(&self.bp, &p, out.enhanced, out.encoded.q, peruse)?;
        let states = peruser.grow(anchor, segment)?;
        let (_, h) = states.last().expect("grow returns at least the anchor state");
        self.bp.confidence(&p, *h)?.item().map(|c| c.to_f64_lossless())
    }

    /// Same model at another precision.
    pub fn cast<T: Scalar>(&self) -> Model<T> {
        let mut store = ParamStore::new();
        for e in self.store.entries() {
            store.register(e.name.clone(), e.group, e.tensor.cast());
        }
        Model {
            config: self.config.clone(),
            store,
            sl: self.sl.clone(),
            bp: self.bp.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CorpusConfig, Direction};
    use crate::data::generate_example;

    fn tiny() -> (Model<f64>, ExampleRecord) {
        let config = ModelConfig {
            d_in: 8,
            d_model: 8,
            heads: 2,
            graph_layers: 1,
        };
        let corpus = CorpusConfig {
            frames: 12,
            words: 3,
            d_in: 8,
            vocab: 4,
            min_len: 2,
            max_len: 5,
            ..CorpusConfig::default()
        };
        (Model::new(&config, 3).unwrap(), generate_example(&corpus, 0).unwrap())
    }

    #[test]
    fn same_seed_same_parameters() {
        let (a, _) = tiny();
        let (b, _) = tiny();
        assert_eq!(a.store, b.store);
        let c = Model::<f64>::new(&a.config, 4).unwrap();
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn infer_ranks_candidates() {
        let (model, ex) = tiny();
        let cfg = InferConfig::from(&TrainConfig::default());
        let pred = model.infer(&ex, &cfg).unwrap();
        assert_eq!(pred.candidates.len(), 5);
        assert_eq!(pred.scores.len(), 12);
        for w in pred.candidates.windows(2) {
            assert!(w[0].confidence > w[1].confidence || (w[0].confidence == w[1].confidence && w[0].anchor < w[1].anchor));
        }
        assert_eq!(pred.segment, pred.candidates[0].segment);
        assert!(pred.segment.contains(pred.anchor));

        let one = InferConfig { k: 1, ..cfg };
        let pred1 = model.infer(&ex, &one).unwrap();
        let argmax = topk_frames(&pred1.scores, 1).unwrap()[0];
        assert_eq!(pred1.anchor, argmax);
        let tape = Tape::new();
        let p = model.store.bind(&tape, |_| false).unwrap();
        let out = model.forward_sl(&p, &ex).unwrap();
        let peruser = Peruser::new(&model.bp, &p, out.enhanced, out.encoded.q, one.peruse).unwrap();
        assert_eq!(peruser.peruse(argmax).unwrap().result, pred1.candidates[0]);
    }

    #[test]
    fn anchors_are_perused_independently() {
        let (model, ex) = tiny();
        let cfg = InferConfig {
            k: 12,
            peruse: PeruseConfig {
                theta: -1.0,
                direction: Direction::LeftThenRight,
                ..PeruseConfig::default()
            },
            check_finite: true,
        };
        let pred = model.infer(&ex, &cfg).unwrap();
        assert_eq!(pred.candidates.len(), 12);
        let mut anchors: Vec<usize> = pred.candidates.iter().map(|c| c.anchor).collect();
        anchors.sort();
        assert_eq!(anchors, (0..12).collect::<Vec<_>>());
        assert!(pred.candidates.iter().all(|c| c.segment == Segment::new(0, 11)));
    }

    #[test]
    fn f32_model_tracks_f64() {
        let (model, ex) = tiny();
        let single = model.cast::<f32>();
        let a = model.frame_scores(&ex).unwrap();
        let b = single.frame_scores(&ex).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-4);
        }
    }
}
