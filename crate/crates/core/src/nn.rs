//! Learned layers: linear maps, the three-layer scoring head, multi-head
//! self-attention and a bidirectional GRU.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{concat, Tensor, Var};

/// `y = x Wᵀ + b` with `W: [d_out × d_in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        group: ParamGroup,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.uniform(format!("{name}.w"), group, vec![d_out, d_in], rng);
        let b = store.zeros(format!("{name}.b"), group, vec![d_out]);
        Self { w, b, d_in, d_out }
    }

    /// Applies the map to a vector `[d_in]` or to every row of `[L × d_in]`.
    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let shape = x.shape();
        if shape.last() != Some(&self.d_in) {
            return Err(TensorError::Shape {
                op: "linear",
                lhs: shape,
                rhs: vec![self.d_out, self.d_in],
            });
        }
        if shape.len() == 1 {
            p.get(self.w).matmul(x)?.add(p.get(self.b))
        } else {
            x.matmul_nt(p.get(self.w))?.add_row(p.get(self.b))
        }
    }
}

/// Three linear layers `D → D/2 → D/4 → 1`, ReLU between, sigmoid out.
#[derive(Clone, Debug)]
pub struct Mlp3 {
    pub layers: [Linear; 3],
}

impl Mlp3 {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        group: ParamGroup,
        d: usize,
        rng: &mut R,
    ) -> Self {
        let h1 = (d / 2).max(1);
        let h2 = (d / 4).max(1);
        Self {
            layers: [
                Linear::new(store, &format!("{name}.l1"), group, d, h1, rng),
                Linear::new(store, &format!("{name}.l2"), group, h1, h2, rng),
                Linear::new(store, &format!("{name}.l3"), group, h2, 1, rng),
            ],
        }
    }

    /// Scores a vector (result `[1]`) or every row of a matrix (result `[L]`).
    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let h = self.layers[0].forward(p, x)?.relu()?;
        let h = self.layers[1].forward(p, h)?.relu()?;
        let out = self.layers[2].forward(p, h)?.sigmoid()?;
        let n = out.value().numel();
        out.reshape(vec![n])
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }
}

/// Multi-head scaled dot-product self-attention with output projection and
/// a residual connection. No positional encoding.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub d: usize,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        group: ParamGroup,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Contract(format!(
                "model width {d} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            wq: store.uniform(format!("{name}.wq"), group, vec![d, d], rng),
            wk: store.uniform(format!("{name}.wk"), group, vec![d, d], rng),
            wv: store.uniform(format!("{name}.wv"), group, vec![d, d], rng),
            wo: store.uniform(format!("{name}.wo"), group, vec![d, d], rng),
            bo: store.zeros(format!("{name}.bo"), group, vec![d]),
            d,
            heads,
        })
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        Ok(self.forward_with_weights(p, x)?.0)
    }

    /// Also returns each head's `[L × L]` attention matrix.
    pub fn forward_with_weights<'t, S: Scalar>(
        &self,
        p: &Bound<'t, S>,
        x: Var<'t, S>,
    ) -> Result<(Var<'t, S>, Vec<Var<'t, S>>)> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.d {
            return Err(TensorError::Shape {
                op: "self_attention",
                lhs: shape,
                rhs: vec![self.d],
            });
        }
        let dk = self.d / self.heads;
        let scale = S::one() / S::of(dk as f64).sqrt();
        let q = x.matmul_nt(p.get(self.wq))?;
        let k = x.matmul_nt(p.get(self.wk))?;
        let v = x.matmul_nt(p.get(self.wv))?;
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = (
                q.slice_cols(h * dk, dk)?,
                k.slice_cols(h * dk, dk)?,
                v.slice_cols(h * dk, dk)?,
            );
            let attn = qh.matmul_nt(kh)?.scale(scale)?.softmax(1)?;
            outs.push(attn.matmul(vh)?);
            weights.push(attn);
        }
        let merged = if outs.len() == 1 { outs[0] } else { concat(&outs, 1)? };
        let projected = merged.matmul_nt(p.get(self.wo))?.add_row(p.get(self.bo))?;
        Ok((x.add(projected)?, weights))
    }
}

/// One GRU direction: update gate `z`, reset gate `r` applied to the hidden
/// state inside the candidate, `h' = (1 − z)·n + z·h`.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wn: ParamId,
    pub un: ParamId,
    pub bn: ParamId,
    pub d_in: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        group: ParamGroup,
        d_in: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut gate = |g: &str| {
            (
                store.uniform(format!("{name}.w{g}"), group, vec![hidden, d_in], rng),
                store.uniform(format!("{name}.u{g}"), group, vec![hidden, hidden], rng),
                store.zeros(format!("{name}.b{g}"), group, vec![hidden]),
            )
        };
        let (wz, uz, bz) = gate("z");
        let (wr, ur, br) = gate("r");
        let (wn, un, bn) = gate("n");
        Self {
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wn,
            un,
            bn,
            d_in,
            hidden,
        }
    }

    /// Runs over the rows of `x: [L × d_in]` from a zero state; row `t` of the
    /// result is the hidden state after consuming position `t`.
    pub fn run<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: Var<'t, S>, reverse: bool) -> Result<Var<'t, S>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.d_in {
            return Err(TensorError::Shape {
                op: "gru",
                lhs: shape,
                rhs: vec![self.d_in],
            });
        }
        let len = shape[0];
        let xz = x.matmul_nt(p.get(self.wz))?.add_row(p.get(self.bz))?;
        let xr = x.matmul_nt(p.get(self.wr))?.add_row(p.get(self.br))?;
        let xn = x.matmul_nt(p.get(self.wn))?.add_row(p.get(self.bn))?;
        let (uz, ur, un) = (p.get(self.uz), p.get(self.ur), p.get(self.un));
        let tape = x.tape();
        let mut h = tape.constant(Tensor::zeros(vec![self.hidden])?);
        let mut states = vec![h; len];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..len).rev())
        } else {
            Box::new(0..len)
        };
        for t in order {
            let z = xz.row(t)?.add(uz.matmul(h)?)?.sigmoid()?;
            let r = xr.row(t)?.add(ur.matmul(h)?)?.sigmoid()?;
            let n = xn.row(t)?.add(un.matmul(r.mul(h)?)?)?.tanh()?;
            h = n.add(z.mul(h.sub(n)?)?)?;
            states[t] = h;
        }
        concat(&states, 0)?.reshape(vec![len, self.hidden])
    }
}

/// Forward and backward GRUs of width `D/2`, concatenated per position.
#[derive(Clone, Debug)]
pub struct BiGru {
    pub fwd: GruCell,
    pub bwd: GruCell,
}

impl BiGru {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        group: ParamGroup,
        d: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if d < 2 || d % 2 != 0 {
            return Err(TensorError::Contract(format!("Bi-GRU width {d} must be even")));
        }
        Ok(Self {
            fwd: GruCell::new(store, &format!("{name}.fwd"), group, d, d / 2, rng),
            bwd: GruCell::new(store, &format!("{name}.bwd"), group, d, d / 2, rng),
        })
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let f = self.fwd.run(p, x, false)?;
        let b = self.bwd.run(p, x, true)?;
        concat(&[f, b], 1)
    }
}

/// Per-modality encoder: input projection, self-attention, Bi-GRU.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub proj: Linear,
    pub attn: SelfAttention,
    pub gru: BiGru,
}

impl Encoder {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        d_in: usize,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let proj = Linear::new(store, &format!("{name}.proj"), ParamGroup::Sl, d_in, d, rng);
        // Nonzero projection bias keeps encoded features away from the origin.
        let bias: Vec<S> = (0..d).map(|_| S::of(rng.random_range(-0.1..0.1))).collect();
        store.get_mut(proj.b).data_mut().copy_from_slice(&bias);
        Ok(Self {
            proj,
            attn: SelfAttention::new(store, &format!("{name}.attn"), ParamGroup::Sl, d, heads, rng)?,
            gru: BiGru::new(store, &format!("{name}.gru"), ParamGroup::Sl, d, rng)?,
        })
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: Var<'t, S>) -> Result<Var<'t, S>> {
        let h = self.proj.forward(p, x)?;
        let h = self.attn.forward(p, h)?;
        self.gru.forward(p, h)
    }
}
