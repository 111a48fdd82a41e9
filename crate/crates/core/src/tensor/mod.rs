//! Dense row-major tensors and a tape-based reverse-mode engine.
//!
//! [`Tensor`] is a plain value. Differentiable computation happens on a
//! [`Tape`]: leaves are pushed onto it, every op appends a node, and
//! [`Tape::backward`] replays the nodes once in reverse.

pub(crate) mod kernels;
mod tape;

pub use tape::{concat, Activation, Gradients, Tape, Var};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

/// A dense tensor of rank 1 or 2 in row-major order.
///
/// Scalars are rank-1 tensors of length one.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    grad: Option<Vec<S>>,
    requires_grad: bool,
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::Contract(format!(
                "unsupported shape {shape:?}: rank 1 or 2 with positive extents"
            )));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::Length {
                len: data.len(),
                shape,
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn scalar(x: S) -> Self {
        Self {
            shape: vec![1],
            data: vec![x],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn vector(data: Vec<S>) -> Result<Self> {
        Self::from_vec(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        Self::from_vec(vec![rows, cols], data)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(TensorError::Shape {
                op: "from_rows",
                lhs: vec![cols],
                rhs: vec![bad.len()],
            });
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::from_vec(shape, vec![S::zero(); n])
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(vec![n, n])?;
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        Ok(t)
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [S]> {
        self.grad.as_deref_mut()
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[S]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(TensorError::Shape {
                op: "accumulate_grad",
                lhs: self.shape.clone(),
                rhs: vec![g.len()],
            });
        }
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, &x)| *b += x),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// `(rows, cols)`, treating a vector as a single row.
    pub fn dims2(&self) -> (usize, usize) {
        kernels::dims2(&self.shape)
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols() + j]
    }

    /// The single element of a length-one tensor.
    pub fn item(&self) -> Result<S> {
        if self.data.len() != 1 {
            return Err(TensorError::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Converts element type, e.g. to widen an `f32` tensor for evaluation.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|x| T::of(x.to_f64_lossless()))
                .collect(),
            grad: None,
            requires_grad: self.requires_grad,
        }
    }
}

/// Plain (non-taped) cosine similarity of two equal-length slices.
pub fn cosine<S: Scalar>(u: &[S], v: &[S]) -> Result<S> {
    if u.len() != v.len() {
        return Err(TensorError::Shape {
            op: "cosine",
            lhs: vec![u.len()],
            rhs: vec![v.len()],
        });
    }
    kernels::cosine(u, v).ok_or(TensorError::Degenerate { op: "cosine" })
}

/// Plain matrix product of two tensors, shape-checked.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let tape = Tape::new();
    let out = tape.constant(a.clone()).matmul(tape.constant(b.clone()))?;
    Ok((*out.value()).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(matches!(
            Tensor::<f64>::from_vec(vec![2, 3], vec![0.0; 5]),
            Err(TensorError::Length { len: 5, .. })
        ));
        assert!(Tensor::<f64>::from_vec(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::vector(vec![1.0, 2.0]).unwrap();
        t.accumulate_grad(&[1.0, 1.0]).unwrap();
        t.accumulate_grad(&[0.5, 2.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[1.5, 3.0]);
        assert!(t.accumulate_grad(&[1.0]).is_err());
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine(&[3.0, 4.0], &[3.0, 4.0]).unwrap() - 1.0f64).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0f64);
        let direct = 32.0 / (14.0f64.sqrt() * 77.0f64.sqrt());
        let c = cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((c - direct).abs() < 1e-12);
        assert_eq!(
            cosine(&[0.0, 0.0], &[1.0, 1.0f64]),
            Err(TensorError::Degenerate { op: "cosine" })
        );
    }

    #[test]
    fn cast_roundtrip() {
        let t = Tensor::vector(vec![0.5f32, -2.0]).unwrap();
        let w: Tensor<f64> = t.cast();
        assert_eq!(w.data(), &[0.5, -2.0]);
    }
}
