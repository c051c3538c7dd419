//! Dense matrix/vector arithmetic and the shared numeric primitives:
//! cosine similarity, the exponential-cosine kernel, a stable softmax, and a
//! finite-difference gradient checker.
//!
//! Embeddings and other vectors are plain `Vec<f64>` / `&[f64]`; matrices are
//! row-major [`Mat64`]. Public operations keep entries finite or fail.

use crate::error::{Error, Result};

/// Norm floor below which a vector is treated as collapsed.
pub const EPS_NORM: f64 = 1e-12;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat64 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat64 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat64 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a flat row-major buffer; errors if the length is off.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                format!("{rows}x{cols} = {} values", rows * cols),
                format!("{} values", data.len()),
            ));
        }
        Ok(Mat64 { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mean squared entry; the power used by SNR computations.
    pub fn power(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64
    }

    /// `self[r] += s * other[r]` over all entries.
    pub fn add_scaled(&mut self, other: &Mat64, s: f64) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Matrix-vector product `self * x` (x of length `cols`).
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// Transposed product `self^T * y` (y of length `rows`).
    pub fn tr_matvec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let yr = y[r];
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += yr * v;
            }
        }
        out
    }

    /// Rank-one update `self += y * x^T` (y of length `rows`).
    pub fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for r in 0..self.rows {
            let yr = y[r];
            for (o, v) in self.row_mut(r).iter_mut().zip(x) {
                *o += yr * v;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `a += s * b`.
pub fn add_scaled(a: &mut [f64], b: &[f64], s: f64) {
    debug_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter_mut().zip(b) {
        *x += s * y;
    }
}

/// Sum with a canonical (sorted) addend order, so the result is invariant to
/// any permutation of the inputs. Used by statistics pooling, whose output
/// must be bit-identical under frame reordering.
pub(crate) fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

/// Cosine similarity clamped to `[-1, 1]`.
///
/// Bitwise-equal inputs return exactly 1.0, so the kernel of a vector with
/// itself is exactly 1 regardless of rounding in norms. Norms at or below
/// [`EPS_NORM`] are an error: a zero vector here means a collapsed model.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            format!("vectors of equal length {}", a.len()),
            format!("{}", b.len()),
        ));
    }
    let na = norm(a);
    let nb = norm(b);
    if na <= EPS_NORM || nb <= EPS_NORM {
        return Err(Error::ZeroVector);
    }
    if a == b {
        return Ok(1.0);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Exponential-cosine kernel `exp(m * (1 - cos(a, b)))`, in `[1, exp(2m)]`.
///
/// The clamp inside [`cosine`] keeps the exponent nonnegative, so the kernel
/// never dips below 1 and never overflows for moderate `m`.
pub fn anchor_kernel(a: &[f64], b: &[f64], m: f64) -> Result<f64> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::InvalidArg(format!(
            "kernel scale m must be positive and finite, got {m}"
        )));
    }
    Ok((m * (1.0 - cosine(a, b)?)).exp())
}

/// Numerically stable softmax; entries positive and summing to 1.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax of empty logits");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Compare an analytic gradient against central finite differences.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|, |numeric_i|)`.
/// Errors with [`Error::NonFinite`] if the probed function returns NaN or
/// infinity at any displaced point.
pub fn grad_check<F>(mut f: F, x: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != x.len() {
        return Err(Error::shape(
            format!("gradient of length {}", x.len()),
            format!("{}", analytic.len()),
        ));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArg(format!("step h must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut max_err = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at coordinate {i} displaced by ±{h}"
            )));
        }
        let numeric = (fp - fm) / (2.0 * h);
        let denom = 1.0f64.max(analytic[i].abs()).max(numeric.abs());
        max_err = max_err.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(max_err)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors in the columns of
/// the returned matrix, unsorted. Deterministic: fixed sweep order, fixed
/// convergence threshold.
pub(crate) fn jacobi_eigh(mat: &Mat64) -> (Vec<f64>, Mat64) {
    debug_assert_eq!(mat.rows(), mat.cols());
    let n = mat.rows();
    let mut a = mat.clone();
    let mut v = Mat64::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let scale: f64 = (0..n)
        .map(|i| a.get(i, i).abs())
        .fold(1e-300, f64::max);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.get(p, q).powi(2);
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let vals = (0..n).map(|i| a.get(i, i)).collect();
    (vals, v)
}
