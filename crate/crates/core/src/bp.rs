//! Bidirectional perusing: grow a segment outward from an anchor frame while
//! neighbouring frames match both the query and the running segment state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Direction, SideOrder, TrainConfig, UpdateStrategy};
use crate::error::{Result, TensorError};
use crate::nn::Mlp3;
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::segment::Segment;
use crate::tensor::{kernels, Var};

/// Gated segment-update weights plus the confidence head.
///
/// Reset gates: `rᵢ = σ(W_rᵢ v + U_rᵢ H + b_rᵢ)`, `i = 1, 2`.
/// Candidate: `H' = tanh(W_h (r₁⊙v) + U_h (r₂⊙H) + b_h)`.
/// Update gate: `z = σ(W_z v + U_z H + b_z)`; `H_new = z⊙H' + (1−z)⊙H`.
#[derive(Clone, Debug)]
pub struct BpLayout {
    pub w_r: [ParamId; 2],
    pub u_r: [ParamId; 2],
    pub b_r: [ParamId; 2],
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub confidence: Mlp3,
    pub d: usize,
}

impl BpLayout {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, d: usize, rng: &mut R) -> Self {
        let g = ParamGroup::Bp;
        let mut mat = |name: &str, rng: &mut R| store.uniform(format!("bp.update.{name}"), g, vec![d, d], rng);
        let w_r = [mat("w_r1", rng), mat("w_r2", rng)];
        let u_r = [mat("u_r1", rng), mat("u_r2", rng)];
        let (w_h, u_h, w_z, u_z) = (mat("w_h", rng), mat("u_h", rng), mat("w_z", rng), mat("u_z", rng));
        let b_r = [
            store.zeros("bp.update.b_r1", g, vec![d]),
            store.zeros("bp.update.b_r2", g, vec![d]),
        ];
        let b_h = store.zeros("bp.update.b_h", g, vec![d]);
        let b_z = store.zeros("bp.update.b_z", g, vec![d]);
        Self {
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
            w_z,
            u_z,
            b_z,
            confidence: Mlp3::new(store, "bp.conf", g, d, rng),
            d,
        }
    }

    pub fn update_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.w_h, self.u_h, self.b_h, self.w_z, self.u_z, self.b_z];
        ids.extend(self.w_r);
        ids.extend(self.u_r);
        ids.extend(self.b_r);
        ids
    }

    fn gate<'t, S: Scalar>(
        &self,
        p: &Bound<'t, S>,
        w: ParamId,
        u: ParamId,
        b: ParamId,
        v: Var<'t, S>,
        h: Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        p.get(w).matmul(v)?.add(p.get(u).matmul(h)?)?.add(p.get(b))?.sigmoid()
    }

    /// Absorbs frame `v` into segment state `h`.
    pub fn segment_update<'t, S: Scalar>(&self, p: &Bound<'t, S>, h: Var<'t, S>, v: Var<'t, S>) -> Result<Var<'t, S>> {
        if h.shape() != [self.d] || v.shape() != [self.d] {
            return Err(TensorError::Shape {
                op: "segment_update",
                lhs: h.shape(),
                rhs: v.shape(),
            });
        }
        let r1 = self.gate(p, self.w_r[0], self.u_r[0], self.b_r[0], v, h)?;
        let r2 = self.gate(p, self.w_r[1], self.u_r[1], self.b_r[1], v, h)?;
        let candidate = p
            .get(self.w_h)
            .matmul(r1.mul(v)?)?
            .add(p.get(self.u_h).matmul(r2.mul(h)?)?)?
            .add(p.get(self.b_h))?
            .tanh()?;
        let z = self.gate(p, self.w_z, self.u_z, self.b_z, v, h)?;
        blend(z, candidate, h)
    }

    /// Merges `v` into `h` with the configured strategy.
    pub fn absorb<'t, S: Scalar>(
        &self,
        p: &Bound<'t, S>,
        strategy: UpdateStrategy,
        h: Var<'t, S>,
        v: Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        match strategy {
            UpdateStrategy::Gated => self.segment_update(p, h, v),
            UpdateStrategy::MaxPool => h.maximum(v),
        }
    }

    /// Predicted IoU of the segment summarized by `h`, a scalar in (0, 1).
    pub fn confidence<'t, S: Scalar>(&self, p: &Bound<'t, S>, h: Var<'t, S>) -> Result<Var<'t, S>> {
        if h.shape() != [self.d] {
            return Err(TensorError::Shape {
                op: "confidence",
                lhs: h.shape(),
                rhs: vec![self.d],
            });
        }
        self.confidence.forward(p, h)
    }
}

/// `z⊙candidate + (1−z)⊙h`, written as `h + z⊙(candidate − h)`.
pub fn blend<'t, S: Scalar>(z: Var<'t, S>, candidate: Var<'t, S>, h: Var<'t, S>) -> Result<Var<'t, S>> {
    h.add(z.mul(candidate.sub(h)?)?)
}

/// Mean cosine of frame `v` against every word row of `q`.
pub fn linguistic_score<'t, S: Scalar>(v: Var<'t, S>, q: Var<'t, S>) -> Result<Var<'t, S>> {
    let n = q.shape()[0];
    let cosines = (0..n).map(|i| v.cosine(q.row(i)?)).collect::<Result<Vec<_>>>()?;
    crate::tensor::concat(&cosines, 0)?.mean()
}

/// Cosine of frame `v` against segment state `h`.
pub fn visual_score<'t, S: Scalar>(v: Var<'t, S>, h: Var<'t, S>) -> Result<Var<'t, S>> {
    v.cosine(h)
}

/// `α₁·S_vq + α₂·S_vH`.
pub fn matching_score<'t, S: Scalar>(
    v: Var<'t, S>,
    h: Var<'t, S>,
    q: Var<'t, S>,
    alpha1: f64,
    alpha2: f64,
) -> Result<Var<'t, S>> {
    if alpha1 < 0.0 || alpha2 < 0.0 {
        return Err(TensorError::Contract("matching weights must be non-negative".into()));
    }
    let lin = linguistic_score(v, q)?.scale(S::of(alpha1))?;
    let vis = visual_score(v, h)?.scale(S::of(alpha2))?;
    lin.add(vis)
}

/// Scores of one sampled triplet group: matched pair and the two mismatched
/// substitutions for each similarity kind.
#[derive(Clone, Copy, Debug)]
pub struct TripletScores<'t, S: Scalar> {
    /// Matched frame vs query.
    pub vq: Var<'t, S>,
    /// Mismatched frame vs query.
    pub neg_frame_q: Var<'t, S>,
    /// Matched frame vs mismatched query.
    pub v_neg_query: Var<'t, S>,
    /// Matched frame vs matched segment.
    pub vh: Var<'t, S>,
    /// Mismatched frame vs matched segment.
    pub neg_frame_h: Var<'t, S>,
    /// Matched frame vs mismatched segment.
    pub v_neg_segment: Var<'t, S>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl From<&TrainConfig> for TripletWeights {
    fn from(c: &TrainConfig) -> Self {
        Self {
            beta1: c.beta1,
            beta2: c.beta2,
            gamma1: c.gamma1,
            gamma2: c.gamma2,
        }
    }
}

fn hinge<'t, S: Scalar>(margin: f64, pos: Var<'t, S>, neg: Var<'t, S>) -> Result<Var<'t, S>> {
    neg.sub(pos)?.add_scalar(S::of(margin))?.relu()
}

/// Average over groups of `γ₁·L_vq + γ₂·L_vH`, each a sum of two hinge terms.
pub fn triplet_losses<'t, S: Scalar>(groups: &[TripletScores<'t, S>], w: TripletWeights) -> Result<Var<'t, S>> {
    if w.beta1 < 0.0 || w.beta2 < 0.0 {
        return Err(TensorError::Contract("triplet margins must be non-negative".into()));
    }
    let first = groups
        .first()
        .ok_or_else(|| TensorError::Contract("triplet loss over zero groups".into()))?;
    let mut total = first.vq.tape().scalar(S::zero());
    for g in groups {
        let l_vq = hinge(w.beta1, g.vq, g.neg_frame_q)?.add(hinge(w.beta1, g.vq, g.v_neg_query)?)?;
        let l_vh = hinge(w.beta2, g.vh, g.neg_frame_h)?.add(hinge(w.beta2, g.vh, g.v_neg_segment)?)?;
        total = total.add(l_vq.scale(S::of(w.gamma1))?)?.add(l_vh.scale(S::of(w.gamma2))?)?;
    }
    total.scale(S::one() / S::of(groups.len() as f64))
}

/// Smooth-L1 distance between predicted confidence and the true IoU.
pub fn conf_loss<'t, S: Scalar>(c: Var<'t, S>, target: f64) -> Result<Var<'t, S>> {
    if !(0.0..=1.0).contains(&target) {
        return Err(TensorError::Contract(format!("confidence target {target} outside [0, 1]")));
    }
    c.smooth_l1(S::of(target))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// One probe of a boundary candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub side: Side,
    pub frame: usize,
    pub score: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeruseResult {
    pub anchor: usize,
    pub segment: Segment,
    /// Final segment state.
    pub state: Vec<f64>,
    pub confidence: f64,
    /// Probes in absorption order.
    pub trace: Vec<TraceStep>,
}

impl PeruseResult {
    /// Rebuilds the segment from the anchor and the accepted probes.
    pub fn replay(&self) -> Option<Segment> {
        let mut seg = Segment::point(self.anchor);
        for step in self.trace.iter().filter(|s| s.accepted) {
            match step.side {
                Side::Left if step.frame + 1 == seg.start => seg.start = step.frame,
                Side::Right if step.frame == seg.end + 1 => seg.end = step.frame,
                _ => return None,
            }
        }
        Some(seg)
    }
}

/// Threshold rule and scoring weights used while perusing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeruseConfig {
    pub direction: Direction,
    pub theta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub side_order: SideOrder,
    pub update_strategy: UpdateStrategy,
}

impl Default for PeruseConfig {
    fn default() -> Self {
        (&TrainConfig::default()).into()
    }
}

impl From<&TrainConfig> for PeruseConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            direction: c.direction,
            theta: c.theta,
            alpha1: c.alpha1,
            alpha2: c.alpha2,
            side_order: c.side_order,
            update_strategy: c.update_strategy,
        }
    }
}

/// Full perusal output, including the taped state after every absorption.
pub struct PeruseOutcome<'t, S: Scalar> {
    pub result: PeruseResult,
    /// `(segment, state)` starting with the anchor alone.
    pub states: Vec<(Segment, Var<'t, S>)>,
    /// For each trace step, the index into `states` of the state it was scored against.
    pub probe_states: Vec<usize>,
    pub confidence: Var<'t, S>,
}

/// Shared inputs for perusing one example from several anchors.
pub struct Peruser<'a, 't, S: Scalar> {
    layout: &'a BpLayout,
    params: &'a Bound<'t, S>,
    enhanced: Var<'t, S>,
    frames: Vec<Vec<S>>,
    words: Vec<Vec<S>>,
    linguistic: Vec<Option<f64>>,
    config: PeruseConfig,
}

impl<'a, 't, S: Scalar> Peruser<'a, 't, S> {
    /// `enhanced: [T × D]` frames, `query: [N × D]` encoded words.
    pub fn new(
        layout: &'a BpLayout,
        params: &'a Bound<'t, S>,
        enhanced: Var<'t, S>,
        query: Var<'t, S>,
        config: PeruseConfig,
    ) -> Result<Self> {
        let ev = enhanced.value();
        let qv = query.value();
        if ev.shape().len() != 2 || qv.shape().len() != 2 || ev.cols() != qv.cols() || ev.cols() != layout.d {
            return Err(TensorError::Shape {
                op: "peruse",
                lhs: ev.shape().to_vec(),
                rhs: qv.shape().to_vec(),
            });
        }
        let frames: Vec<Vec<S>> = (0..ev.rows()).map(|t| ev.row(t).to_vec()).collect();
        let words = (0..qv.rows()).map(|n| qv.row(n).to_vec()).collect();
        let linguistic = vec![None; frames.len()];
        let mut me = Self {
            layout,
            params,
            enhanced,
            frames,
            words,
            linguistic,
            config,
        };
        for t in 0..me.frames.len() {
            me.linguistic[t] = me.linguistic_value(t);
        }
        Ok(me)
    }

    pub fn frames(&self) -> usize {
        self.frames.len()
    }

    pub fn config(&self) -> &PeruseConfig {
        &self.config
    }

    fn linguistic_value(&self, t: usize) -> Option<f64> {
        let mut total = 0.0;
        for w in &self.words {
            total += kernels::cosine(&self.frames[t], w)?.to_f64_lossless();
        }
        Some(total / self.words.len() as f64)
    }

    /// Matching score of frame `t` against state values `h`; `None` on a
    /// zero-norm frame or state.
    pub fn score(&self, t: usize, h: &[S]) -> Option<f64> {
        let lin = self.linguistic[t]?;
        let vis = kernels::cosine(&self.frames[t], h)?.to_f64_lossless();
        Some(self.config.alpha1 * lin + self.config.alpha2 * vis)
    }

    fn frame(&self, t: usize) -> Result<Var<'t, S>> {
        self.enhanced.row(t)
    }

    fn absorb(&self, h: Var<'t, S>, t: usize) -> Result<Var<'t, S>> {
        self.layout
            .absorb(self.params, self.config.update_strategy, h, self.frame(t)?)
    }

    /// Grows a segment from `anchor` until no boundary candidate reaches the threshold.
    pub fn peruse(&self, anchor: usize) -> Result<PeruseOutcome<'t, S>> {
        let t_len = self.frames();
        if anchor >= t_len {
            return Err(TensorError::Contract(format!("anchor {anchor} outside 0..{t_len}")));
        }
        let theta = self.config.theta;
        let mut seg = Segment::point(anchor);
        let mut h = self.frame(anchor)?;
        let mut states = vec![(seg, h)];
        let mut trace = Vec::new();
        let mut probe_states = Vec::new();

        let candidate = |seg: &Segment, side: Side| match side {
            Side::Left => seg.start.checked_sub(1),
            Side::Right => (seg.end + 1 < t_len).then_some(seg.end + 1),
        };

        match self.config.direction {
            Direction::LeftThenRight | Direction::RightThenLeft => {
                let sides = if self.config.direction == Direction::LeftThenRight {
                    [Side::Left, Side::Right]
                } else {
                    [Side::Right, Side::Left]
                };
                for side in sides {
                    while let Some(t) = candidate(&seg, side) {
                        let Some(score) = self.score(t, h.value().data()) else { break };
                        let accepted = score >= theta;
                        trace.push(TraceStep {
                            side,
                            frame: t,
                            score,
                            accepted,
                        });
                        probe_states.push(states.len() - 1);
                        if !accepted {
                            break;
                        }
                        h = self.absorb(h, t)?;
                        extend(&mut seg, side, t);
                        states.push((seg, h));
                    }
                }
            }
            Direction::LeftWhileRight => {
                let order = match self.config.side_order {
                    SideOrder::LeftFirst => [Side::Left, Side::Right],
                    SideOrder::RightFirst => [Side::Right, Side::Left],
                };
                let mut open = [true, true];
                loop {
                    let hv = h.value();
                    let current = states.len() - 1;
                    let mut accepted_now = Vec::with_capacity(2);
                    for (i, side) in order.into_iter().enumerate() {
                        if !open[i] {
                            continue;
                        }
                        let Some(t) = candidate(&seg, side) else {
                            open[i] = false;
                            continue;
                        };
                        let Some(score) = self.score(t, hv.data()) else {
                            open[i] = false;
                            continue;
                        };
                        let accepted = score >= theta;
                        trace.push(TraceStep {
                            side,
                            frame: t,
                            score,
                            accepted,
                        });
                        probe_states.push(current);
                        if accepted {
                            accepted_now.push((side, t));
                        } else {
                            open[i] = false;
                        }
                    }
                    if accepted_now.is_empty() {
                        break;
                    }
                    for (side, t) in accepted_now {
                        h = self.absorb(h, t)?;
                        extend(&mut seg, side, t);
                        states.push((seg, h));
                    }
                }
            }
        }

        let confidence = self.layout.confidence(self.params, h)?;
        let result = PeruseResult {
            anchor,
            segment: seg,
            state: h.value().data().iter().map(|x| x.to_f64_lossless()).collect(),
            confidence: confidence.item()?.to_f64_lossless(),
            trace,
        };
        Ok(PeruseOutcome {
            result,
            states,
            probe_states,
            confidence,
        })
    }

    /// Absorbs every frame of `target` (which must contain `anchor`) in the
    /// order the configured direction would visit them, ignoring the threshold.
    /// Returns the state after each absorption, starting with the anchor alone.
    pub fn grow(&self, anchor: usize, target: Segment) -> Result<Vec<(Segment, Var<'t, S>)>> {
        if !target.contains(anchor) || target.end >= self.frames() {
            return Err(TensorError::Contract(format!("segment {target} does not contain anchor {anchor}")));
        }
        let lefts: Vec<usize> = (target.start..anchor).rev().collect();
        let rights: Vec<usize> = (anchor + 1..=target.end).collect();
        let mut steps: Vec<(Side, usize)> = Vec::with_capacity(lefts.len() + rights.len());
        let left_steps = lefts.iter().map(|&t| (Side::Left, t));
        let right_steps = rights.iter().map(|&t| (Side::Right, t));
        match self.config.direction {
            Direction::LeftThenRight => steps.extend(left_steps.chain(right_steps)),
            Direction::RightThenLeft => steps.extend(right_steps.chain(left_steps)),
            Direction::LeftWhileRight => {
                let (mut l, mut r) = (left_steps.peekable(), right_steps.peekable());
                while l.peek().is_some() || r.peek().is_some() {
                    let pair = match self.config.side_order {
                        SideOrder::LeftFirst => [l.next(), r.next()],
                        SideOrder::RightFirst => [r.next(), l.next()],
                    };
                    steps.extend(pair.into_iter().flatten());
                }
            }
        }
        let mut seg = Segment::point(anchor);
        let mut h = self.frame(anchor)?;
        let mut states = vec![(seg, h)];
        for (side, t) in steps {
            h = self.absorb(h, t)?;
            extend(&mut seg, side, t);
            states.push((seg, h));
        }
        Ok(states)
    }
}

fn extend(seg: &mut Segment, side: Side, t: usize) {
    match side {
        Side::Left => seg.start = t,
        Side::Right => seg.end = t,
    }
}

#[cfg(test)]
#[path = "bp_tests.rs"]
mod tests;
