//! Skimming and locating: encode both modalities, fuse the query into every
//! frame, reason over a query-conditioned frame graph and score each frame as
//! positive or background.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::nn::{Encoder, Mlp3};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{concat, Tensor, Var};

/// Clamp applied to frame probabilities inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Parameter handles of the skimming-and-locating half of the model.
#[derive(Clone, Debug)]
pub struct SlLayout {
    pub video: Encoder,
    pub query: Encoder,
    /// Frame projection in the frame–word attention, `[D × D]`.
    pub att_frame: ParamId,
    /// Word projection in the frame–word attention, `[D × D]`.
    pub att_word: ParamId,
    pub att_bias: ParamId,
    /// Scoring row vector of the frame–word attention, `[D]`.
    pub att_score: ParamId,
    /// Projects query context into the frame space, `[D × D]`.
    pub fuse_query: ParamId,
    /// `[D × 2D]`
    pub graph_frame: ParamId,
    /// `[D × D]`
    pub graph_word: ParamId,
    /// Graph convolution weights: `[D × 2D]` first, `[D × D]` for any extra layer.
    pub graph_conv: Vec<ParamId>,
    pub classifier: Mlp3,
    pub d: usize,
    pub graph_layers: usize,
}

/// Encoded frames `V: [T × D]` and words `Q: [N × D]`.
#[derive(Clone, Copy, Debug)]
pub struct EncodedPair<'t, S: Scalar> {
    pub v: Var<'t, S>,
    pub q: Var<'t, S>,
}

/// Every intermediate of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SlOutput<'t, S: Scalar> {
    pub encoded: EncodedPair<'t, S>,
    /// Frame–word correlations `[T × N]`.
    pub attention: Var<'t, S>,
    /// Query-guided frames `[T × 2D]`.
    pub fused: Var<'t, S>,
    /// Row-stochastic frame graph `[T × T]`.
    pub adjacency: Var<'t, S>,
    /// Graph-enhanced frames `[T × D]`.
    pub enhanced: Var<'t, S>,
    /// Frame probabilities `[T]`.
    pub scores: Var<'t, S>,
}

impl SlLayout {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        d_in: usize,
        d: usize,
        heads: usize,
        graph_layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let g = ParamGroup::Sl;
        let video = Encoder::new(store, "video", d_in, d, heads, rng)?;
        let query = Encoder::new(store, "query", d_in, d, heads, rng)?;
        let graph_conv = if graph_layers == 0 {
            vec![store.uniform("sl.graph.conv0", g, vec![d, 2 * d], rng)]
        } else {
            (0..graph_layers)
                .map(|i| {
                    let cols = if i == 0 { 2 * d } else { d };
                    store.uniform(format!("sl.graph.conv{i}"), g, vec![d, cols], rng)
                })
                .collect()
        };
        Ok(Self {
            video,
            query,
            att_frame: store.uniform("sl.att.frame", g, vec![d, d], rng),
            att_word: store.uniform("sl.att.word", g, vec![d, d], rng),
            att_bias: store.zeros("sl.att.bias", g, vec![d]),
            att_score: store.uniform("sl.att.score", g, vec![d], rng),
            fuse_query: store.uniform("sl.fuse.query", g, vec![d, d], rng),
            graph_frame: store.uniform("sl.graph.frame", g, vec![d, 2 * d], rng),
            graph_word: store.uniform("sl.graph.word", g, vec![d, d], rng),
            graph_conv,
            classifier: Mlp3::new(store, "sl.cls", g, d, rng),
            d,
            graph_layers,
        })
    }

    /// Input projection → self-attention → Bi-GRU for each modality.
    pub fn encode<'t, S: Scalar>(
        &self,
        p: &Bound<'t, S>,
        video: Var<'t, S>,
        query: Var<'t, S>,
    ) -> Result<EncodedPair<'t, S>> {
        Ok(EncodedPair {
            v: self.video.forward(p, video)?,
            q: self.query.forward(p, query)?,
        })
    }

    /// `m[t, n] = wᵀ tanh(W₁ v_t + W₂ q_n + b)`, shape `[T × N]`.
    pub fn frame_word_attention<'t, S: Scalar>(
        &self,
        p: &Bound<'t, S>,
        v: Var<'t, S>,
        q: Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        check_width("frame_word_attention", &v, self.d)?;
        check_width("frame_word_attention", &q, self.d)?;
        let t_len = v.shape()[0];
        let n_len = q.shape()[0];
        let frames = v.matmul_nt(p.get(self.att_frame))?;
        let words = q.matmul_nt(p.get(self.att_word))?.add_row(p.get(self.att_bias))?;
        let w = p.get(self.att_score);
        let columns = (0..n_len)
            .map(|n| frames.add_row(words.row(n)?)?.tanh()?.matmul(w))
            .collect::<Result<Vec<_>>>()?;
        concat(&columns, 0)?.reshape(vec![n_len, t_len])?.transpose()
    }

    /// `v̂_t = [v_t ; Σₙ softmaxₙ(m_t) W^Q q_n]`, shape `[T × 2D]`.
    pub fn fuse<'t, S: Scalar>(
        &self,
        p: &Bound<'t, S>,
        v: Var<'t, S>,
        q: Var<'t, S>,
        m: Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        let (vs, qs, ms) = (v.shape(), q.shape(), m.shape());
        if ms != [vs[0], qs[0]] {
            return Err(TensorError::Shape {
                op: "fuse",
                lhs: ms,
                rhs: vec![vs[0], qs[0]],
            });
        }
        let context = m.softmax(1)?.matmul(q.matmul_nt(p.get(self.fuse_query))?)?;
        concat(&[v, context], 1)
    }

    /// `B = (V̂ W₁ᴬ)(Q W₂ᴬ)ᵀ`, `A = softmax_rows(B) · softmax_rows(Bᵀ)`.
    /// Returns `(A, B)`.
    pub fn build_graph<'t, S: Scalar>(
        &self,
        p: &Bound<'t, S>,
        fused: Var<'t, S>,
        q: Var<'t, S>,
    ) -> Result<(Var<'t, S>, Var<'t, S>)> {
        check_width("build_graph", &fused, 2 * self.d)?;
        check_width("build_graph", &q, self.d)?;
        let frames = fused.matmul_nt(p.get(self.graph_frame))?;
        let words = q.matmul_nt(p.get(self.graph_word))?;
        let b = frames.matmul_nt(words)?;
        let a = b.softmax(1)?.matmul(b.transpose()?.softmax(1)?)?;
        Ok((a, b))
    }

    /// `Ṽ = (A + I) V̂ W₃ᴬ`, repeated for extra layers with `[D × D]` weights.
    /// With zero graph layers the fused frames are only projected.
    pub fn graph_reason<'t, S: Scalar>(
        &self,
        p: &Bound<'t, S>,
        a: Var<'t, S>,
        fused: Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        check_width("graph_reason", &fused, 2 * self.d)?;
        if self.graph_layers == 0 {
            return fused.matmul_nt(p.get(self.graph_conv[0]));
        }
        let mut h = fused;
        for &w in &self.graph_conv {
            h = a.matmul(h)?.add(h)?.matmul_nt(p.get(w))?;
        }
        Ok(h)
    }

    /// Per-frame positive probability from the three-layer head, `[T]`.
    pub fn classify_frames<'t, S: Scalar>(&self, p: &Bound<'t, S>, enhanced: Var<'t, S>) -> Result<Var<'t, S>> {
        check_width("classify_frames", &enhanced, self.d)?;
        self.classifier.forward(p, enhanced)
    }

    pub fn forward<'t, S: Scalar>(
        &self,
        p: &Bound<'t, S>,
        video: Var<'t, S>,
        query: Var<'t, S>,
    ) -> Result<SlOutput<'t, S>> {
        let encoded = self.encode(p, video, query)?;
        self.forward_encoded(p, encoded)
    }

    pub fn forward_encoded<'t, S: Scalar>(&self, p: &Bound<'t, S>, encoded: EncodedPair<'t, S>) -> Result<SlOutput<'t, S>> {
        let attention = self.frame_word_attention(p, encoded.v, encoded.q)?;
        let fused = self.fuse(p, encoded.v, encoded.q, attention)?;
        let (adjacency, _) = self.build_graph(p, fused, encoded.q)?;
        let enhanced = self.graph_reason(p, adjacency, fused)?;
        let scores = self.classify_frames(p, enhanced)?;
        Ok(SlOutput {
            encoded,
            attention,
            fused,
            adjacency,
            enhanced,
            scores,
        })
    }
}

fn check_width<S: Scalar>(op: &'static str, x: &Var<'_, S>, width: usize) -> Result<()> {
    let shape = x.shape();
    if shape.len() != 2 || shape[1] != width {
        return Err(TensorError::Shape {
            op,
            lhs: shape,
            rhs: vec![width],
        });
    }
    Ok(())
}

/// `−(1/T) Σ [y log p + (1−y) log(1−p)]` with `p` clamped to `[ε, 1−ε]`.
pub fn bce_loss<'t, S: Scalar>(scores: Var<'t, S>, labels: &[S]) -> Result<Var<'t, S>> {
    scores.bce(labels, S::of(BCE_EPS))
}

/// Indices of the `k` largest scores, by descending score; ties go to the
/// smaller index.
pub fn topk_frames<S: Scalar>(scores: &[S], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(TensorError::Contract(format!(
            "top-k with k = {k} over {} frames",
            scores.len()
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    Ok(idx)
}

/// Plain copy of a tensor's rows, for callers that only need values.
pub fn rows_of<S: Scalar>(t: &Tensor<S>) -> Vec<Vec<S>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}
