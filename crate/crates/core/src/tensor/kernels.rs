//! Slice-level numeric kernels used by forward and backward passes.

use crate::scalar::Scalar;

pub(crate) fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => unreachable!("tensors are rank 1 or 2"),
    }
}

/// Products below this many multiply-adds skip the packed kernel.
const SMALL: usize = 1024;

/// `C[m×p] = A[m×k] · B[k×p]`
pub(crate) fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, p: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * p];
    if m * k * p >= SMALL {
        S::gemm(m, k, p, a, (k as isize, 1), b, (p as isize, 1), &mut c);
        return c;
    }
    for i in 0..m {
        let crow = &mut c[i * p..(i + 1) * p];
        for kk in 0..k {
            let aik = a[i * k + kk];
            let brow = &b[kk * p..(kk + 1) * p];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
    c
}

/// `C[m×p] = A[m×k] · B[p×k]ᵀ`
pub(crate) fn matmul_nt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, p: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * p];
    if m * k * p >= SMALL {
        S::gemm(m, k, p, a, (k as isize, 1), b, (1, k as isize), &mut c);
        return c;
    }
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..p {
            let brow = &b[j * k..(j + 1) * k];
            c[i * p + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    c
}

/// `C[m×p] = A[k×m]ᵀ · B[k×p]`
pub(crate) fn matmul_tn<S: Scalar>(a: &[S], b: &[S], k: usize, m: usize, p: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * p];
    if m * k * p >= SMALL {
        S::gemm(m, k, p, a, (1, m as isize), b, (p as isize, 1), &mut c);
        return c;
    }
    for kk in 0..k {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * p..(kk + 1) * p];
        for (i, &aki) in arow.iter().enumerate() {
            let crow = &mut c[i * p..(i + 1) * p];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aki * bv;
            }
        }
    }
    c
}

pub(crate) fn transpose<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut t = vec![S::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// In-place max-subtracted softmax over one contiguous lane.
pub(crate) fn softmax_lane<S: Scalar>(lane: &mut [S]) {
    let max = lane.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for x in lane.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in lane.iter_mut() {
        *x /= total;
    }
}

pub(crate) fn dot<S: Scalar>(u: &[S], v: &[S]) -> S {
    u.iter().zip(v).map(|(&a, &b)| a * b).sum()
}

pub(crate) fn norm<S: Scalar>(u: &[S]) -> S {
    dot(u, u).sqrt()
}

/// `None` when either vector has zero norm.
pub(crate) fn cosine<S: Scalar>(u: &[S], v: &[S]) -> Option<S> {
    let nu = norm(u);
    let nv = norm(v);
    if nu == S::zero() || nv == S::zero() {
        return None;
    }
    let c = dot(u, v) / (nu * nv);
    Some(c.max(-S::one()).min(S::one()))
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
