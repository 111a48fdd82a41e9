//! Named parameter storage and binding of parameters onto a tape.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which half of the model a parameter belongs to; drives stage freezing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    /// Encoders and the skimming-and-locating head.
    Sl,
    /// Segment update and confidence head.
    Bp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<S> {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor<S>,
}

/// Ordered, name-indexed set of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S> {
    entries: Vec<ParamEntry<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, group: ParamGroup, tensor: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            group,
            tensor: tensor.with_requires_grad(true),
        });
        ParamId(self.entries.len() - 1)
    }

    /// Registers a `rows × cols` matrix drawn uniformly from ±sqrt(6/(rows + cols)).
    pub fn uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        shape: Vec<usize>,
        rng: &mut R,
    ) -> ParamId {
        let fan: usize = match shape.as_slice() {
            [n] => n + 1,
            [r, c] => r + c,
            _ => unreachable!(),
        };
        let limit = (6.0 / fan as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| S::of(rng.random_range(-limit..limit))).collect();
        self.register(name, group, Tensor::from_vec(shape, data).expect("valid shape"))
    }

    pub fn zeros(&mut self, name: impl Into<String>, group: ParamGroup, shape: Vec<usize>) -> ParamId {
        self.register(name, group, Tensor::zeros(shape).expect("valid shape"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<S> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<S>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<S>] {
        &mut self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    /// Sets the gradient buffers of `ids` to zeros so later accumulation
    /// always leaves them populated.
    pub fn reset_grads(&mut self, ids: &[ParamId]) -> Result<()> {
        for &id in ids {
            let t = &mut self.entries[id.0].tensor;
            t.zero_grad();
            let zeros = vec![S::zero(); t.numel()];
            t.accumulate_grad(&zeros)?;
        }
        Ok(())
    }

    /// Multiplies every populated gradient buffer by `c`.
    pub fn scale_grads(&mut self, c: S) {
        for e in &mut self.entries {
            if let Some(g) = e.tensor.grad_mut() {
                g.iter_mut().for_each(|x| *x *= c);
            }
        }
    }

    /// Pushes every parameter onto `tape` as a leaf. Parameters whose group
    /// fails `trainable` become constants and receive no gradient.
    pub fn bind<'t>(&self, tape: &'t Tape<S>, trainable: impl Fn(ParamGroup) -> bool) -> Result<Bound<'t, S>> {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                let rg = trainable(e.group);
                tape.leaf(e.tensor.clone().with_requires_grad(rg))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { tape, vars })
    }

    /// Adds the tape gradients of every bound trainable parameter into its
    /// `grad` buffer.
    pub fn accumulate(&mut self, bound: &Bound<'_, S>, grads: &Gradients<S>) -> Result<()> {
        for (entry, &var) in self.entries.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(var) {
                entry.tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Adds a flat per-parameter gradient list (same order as `entries`).
    pub fn accumulate_flat(&mut self, grads: &[Option<Vec<S>>]) -> Result<()> {
        if grads.len() != self.entries.len() {
            return Err(TensorError::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.entries.len()
            )));
        }
        for (entry, g) in self.entries.iter_mut().zip(grads) {
            if let Some(g) = g {
                entry.tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Byte-level fingerprint of every parameter in `group`.
    pub fn snapshot(&self, group: ParamGroup) -> Vec<u64> {
        self.entries
            .iter()
            .filter(|e| e.group == group)
            .flat_map(|e| e.tensor.data().iter().map(|x| x.to_f64_lossless().to_bits()))
            .collect()
    }
}

/// Parameters pushed onto a tape, addressable by [`ParamId`].
pub struct Bound<'t, S: Scalar> {
    tape: &'t Tape<S>,
    vars: Vec<Var<'t, S>>,
}

impl<'t, S: Scalar> Bound<'t, S> {
    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn get(&self, id: ParamId) -> Var<'t, S> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t, S>] {
        &self.vars
    }

    /// Extracts per-parameter gradients in store order.
    pub fn collect_grads(&self, grads: &Gradients<S>) -> Vec<Option<Vec<S>>> {
        self.vars.iter().map(|&v| grads.get(v).map(<[S]>::to_vec)).collect()
    }
}
