//! Dense symmetric eigendecomposition (cyclic Jacobi) and the small set of
//! matrix operations the preconditioner, PCA baseline, and alignment
//! analysis need. Everything here is plain `Vec<f64>` row-major storage;
//! the matrices involved are d x d with d in the tens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYM_REL_TOL: f64 = 1e-12;
const JACOBI_SWEEP_CAP: usize = 100;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Column `j` copied out.
    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.get(i, k) * other.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Symmetric d x d matrix; symmetry and finiteness are checked on entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    pub size: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Build from row-major entries, verifying symmetry to `1e-12` relative
    /// tolerance and rejecting non-finite values.
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size * size {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries, got {}",
                size * size,
                data.len()
            )));
        }
        let mut scale: f64 = 0.0;
        for &v in &data {
            if !v.is_finite() {
                return Err(Error::NonFinite("symmetric matrix entry".into()));
            }
            scale = scale.max(v.abs());
        }
        let mut worst: f64 = 0.0;
        for i in 0..size {
            for j in (i + 1)..size {
                worst = worst.max((data[i * size + j] - data[j * size + i]).abs());
            }
        }
        if worst > SYM_REL_TOL * scale.max(1.0) {
            return Err(Error::NotSymmetric(worst / scale.max(1.0)));
        }
        Ok(SymMatrix { size, data })
    }

    pub fn zeros(size: usize) -> Self {
        SymMatrix { size, data: vec![0.0; size * size] }
    }

    pub fn identity(size: usize) -> Self {
        let mut m = SymMatrix::zeros(size);
        for i in 0..size {
            m.data[i * size + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = SymMatrix::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.size + j] = v;
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix { rows: self.size, cols: self.size, data: self.data.clone() }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Eigenvalues sorted descending with matching orthonormal eigenvector
/// columns; each column's largest-magnitude entry is made positive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// d x d matrix whose columns are the eigenvectors.
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    /// Eigenvector column `j`.
    pub fn vector(&self, j: usize) -> Vec<f64> {
        self.eigenvectors.col(j)
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Rotates until the largest off-diagonal magnitude drops below
/// `1e-12 * ||A||_F`, capped at 100 sweeps.
pub fn sym_eigen(a: &SymMatrix) -> Result<EigenDecomposition> {
    let d = a.size;
    let mut m = a.data.clone();
    let mut v = Matrix::identity(d);
    let fro = a.frobenius();
    let threshold = SYM_REL_TOL * fro;

    let max_offdiag = |m: &[f64]| -> f64 {
        let mut worst: f64 = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                worst = worst.max(m[p * d + q].abs());
            }
        }
        worst
    };

    let mut converged = d < 2 || max_offdiag(&m) <= threshold;
    for _sweep in 0..JACOBI_SWEEP_CAP {
        if converged {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * d + p];
                let aqq = m[q * d + q];
                // Rutishauser's stable rotation angle
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // A <- J^T A J, updating rows/cols p and q
                for k in 0..d {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m[k * d + p];
                    let akq = m[k * d + q];
                    let np = c * akp - s * akq;
                    let nq = s * akp + c * akq;
                    m[k * d + p] = np;
                    m[p * d + k] = np;
                    m[k * d + q] = nq;
                    m[q * d + k] = nq;
                }
                m[p * d + p] = app - t * apq;
                m[q * d + q] = aqq + t * apq;
                m[p * d + q] = 0.0;
                m[q * d + p] = 0.0;

                // accumulate eigenvectors: V <- V J
                for k in 0..d {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
        converged = max_offdiag(&m) <= threshold;
    }
    if !converged {
        return Err(Error::NoConvergence);
    }

    // sort descending by eigenvalue, stably, then fix column signs
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        m[j * d + j].partial_cmp(&m[i * d + i]).expect("finite eigenvalues")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[i * d + i]).collect();
    let mut vectors = Matrix::zeros(d, d);
    for (new_col, &old_col) in order.iter().enumerate() {
        let mut best = 0usize;
        for k in 1..d {
            if v.get(k, old_col).abs() > v.get(best, old_col).abs() {
                best = k;
            }
        }
        let sign = if v.get(best, old_col) < 0.0 { -1.0 } else { 1.0 };
        for k in 0..d {
            vectors.set(k, new_col, sign * v.get(k, old_col));
        }
    }

    Ok(EigenDecomposition { eigenvalues, eigenvectors: vectors })
}

/// Row-wise linear map: returns `X H` (each row x becomes x^T H).
///
/// Entry `(i, j)` is accumulated over `k` in ascending order; callers that
/// compare against a per-column dot product rely on this summation order.
pub fn transform(x: &Matrix, h: &Matrix) -> Result<Matrix> {
    if x.cols != h.rows || h.rows != h.cols {
        return Err(Error::DimensionMismatch(format!(
            "transform {}x{} by {}x{}",
            x.rows, x.cols, h.rows, h.cols
        )));
    }
    let mut out = Matrix::zeros(x.rows, h.cols);
    for i in 0..x.rows {
        let xr = x.row(i);
        let or = &mut out.data[i * h.cols..(i + 1) * h.cols];
        for (j, o) in or.iter_mut().enumerate() {
            *o = dot_col(xr, h, j);
        }
    }
    Ok(out)
}

/// `sum_k x[k] * h[k][j]` in ascending k, matching `transform`'s order.
#[inline]
pub fn dot_col(x: &[f64], h: &Matrix, j: usize) -> f64 {
    let mut acc = 0.0;
    for (k, &xv) in x.iter().enumerate() {
        acc += xv * h.get(k, j);
    }
    acc
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// tr(A) / d.
pub fn trace_mean(a: &SymMatrix) -> f64 {
    let d = a.size;
    if d == 0 {
        return 0.0;
    }
    (0..d).map(|i| a.get(i, i)).sum::<f64>() / d as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, NormalSampler};

    fn reconstruct(e: &EigenDecomposition) -> Matrix {
        let d = e.eigenvalues.len();
        let u = &e.eigenvectors;
        let mut lam = Matrix::zeros(d, d);
        for i in 0..d {
            lam.set(i, i, e.eigenvalues[i]);
        }
        u.matmul(&lam).unwrap().matmul(&u.transpose()).unwrap()
    }

    fn random_sym(d: usize, seed: u64) -> SymMatrix {
        let mut ns = NormalSampler::new(stream(seed, "sym", 0));
        let mut m = SymMatrix::zeros(d);
        for i in 0..d {
            for j in i..d {
                let v = ns.sample();
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        m
    }

    #[test]
    fn identity_eigen() {
        let e = sym_eigen(&SymMatrix::identity(3)).unwrap();
        for l in &e.eigenvalues {
            assert!((l - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn two_by_two_known() {
        // [[2,1],[1,2]] -> eigenvalues 3, 1 with vectors (1,1)/sqrt2, (1,-1)/sqrt2
        let a = SymMatrix::new(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let e = sym_eigen(&a).unwrap();
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-12);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-12);
        let s = 1.0 / 2f64.sqrt();
        let v0 = e.vector(0);
        let v1 = e.vector(1);
        assert!((v0[0] - s).abs() < 1e-10 && (v0[1] - s).abs() < 1e-10);
        assert!((v1[0].abs() - s).abs() < 1e-10 && (v1[1].abs() - s).abs() < 1e-10);
        assert!((v1[0] * v1[1] + s * s).abs() < 1e-10, "opposite signs");
    }

    #[test]
    fn diagonal_passthrough() {
        let a = SymMatrix::from_diag(&[5.0, 2.0, -1.0]);
        let e = sym_eigen(&a).unwrap();
        assert_eq!(e.eigenvalues, vec![5.0, 2.0, -1.0]);
        for j in 0..3 {
            let v = e.vector(j);
            for (k, &vk) in v.iter().enumerate() {
                let expect = if k == j { 1.0 } else { 0.0 };
                assert!((vk - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn trace_and_det_invariants() {
        for seed in 0..10u64 {
            let d = 2 + (seed as usize % 3); // d in 2..=4
            let a = random_sym(d, seed);
            let e = sym_eigen(&a).unwrap();
            let tr: f64 = (0..d).map(|i| a.get(i, i)).sum();
            let sum: f64 = e.eigenvalues.iter().sum();
            assert!((tr - sum).abs() <= 1e-10 * tr.abs().max(1.0));
            let det = det_cofactor(&a.to_matrix());
            let prod: f64 = e.eigenvalues.iter().product();
            assert!(
                (det - prod).abs() <= 1e-9 * det.abs().max(1.0),
                "det {det} vs prod {prod}"
            );
        }
    }

    // cofactor-expansion determinant, independent of the eigensolver
    fn det_cofactor(m: &Matrix) -> f64 {
        let n = m.rows;
        if n == 1 {
            return m.get(0, 0);
        }
        let mut acc = 0.0;
        for j in 0..n {
            let mut minor = Matrix::zeros(n - 1, n - 1);
            for i in 1..n {
                let mut cj = 0;
                for k in 0..n {
                    if k == j {
                        continue;
                    }
                    minor.set(i - 1, cj, m.get(i, k));
                    cj += 1;
                }
            }
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * m.get(0, j) * det_cofactor(&minor);
        }
        acc
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        for seed in 20..35u64 {
            let d = 2 + (seed as usize % 12);
            let a = random_sym(d, seed);
            let e = sym_eigen(&a).unwrap();
            let r = reconstruct(&e);
            let mut diff = 0.0f64;
            for (x, y) in r.data.iter().zip(a.entries()) {
                diff += (x - y) * (x - y);
            }
            assert!(diff.sqrt() <= 1e-10 * a.frobenius().max(1.0));
            let g = e.eigenvectors.transpose().matmul(&e.eigenvectors).unwrap();
            let idm = Matrix::identity(d);
            let mut err = 0.0f64;
            for (x, y) in g.data.iter().zip(&idm.data) {
                err += (x - y) * (x - y);
            }
            assert!(err.sqrt() <= 1e-10);
        }
    }

    #[test]
    fn planted_spectrum_recovered() {
        // build U Lambda U^T from a random orthonormal U and known Lambda
        let d = 6;
        let base = random_sym(d, 99);
        let u = sym_eigen(&base).unwrap().eigenvectors;
        let lam = [9.0, 5.5, 3.0, 1.0, 0.25, 0.0];
        let mut lm = Matrix::zeros(d, d);
        for (i, &l) in lam.iter().enumerate() {
            lm.set(i, i, l);
        }
        let a = u.matmul(&lm).unwrap().matmul(&u.transpose()).unwrap();
        // symmetrize exactly before wrapping
        let mut data = a.data.clone();
        for i in 0..d {
            for j in (i + 1)..d {
                let avg = 0.5 * (data[i * d + j] + data[j * d + i]);
                data[i * d + j] = avg;
                data[j * d + i] = avg;
            }
        }
        let e = sym_eigen(&SymMatrix::new(d, data).unwrap()).unwrap();
        for (got, want) in e.eigenvalues.iter().zip(lam.iter()) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn transform_identity_and_swap() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0]]);
        let id = Matrix::identity(2);
        assert_eq!(transform(&x, &id).unwrap().data, vec![1.0, 0.0]);
        let swap = Matrix { rows: 2, cols: 2, data: vec![0.0, 1.0, 1.0, 0.0] };
        assert_eq!(transform(&x, &swap).unwrap().data, vec![0.0, 1.0]);
    }

    #[test]
    fn transform_associativity() {
        let mut ns = NormalSampler::new(stream(5, "assoc", 0));
        let x = Matrix {
            rows: 5,
            cols: 3,
            data: (0..15).map(|_| ns.sample()).collect(),
        };
        let a = Matrix { rows: 3, cols: 3, data: (0..9).map(|_| ns.sample()).collect() };
        let b = Matrix { rows: 3, cols: 3, data: (0..9).map(|_| ns.sample()).collect() };
        let lhs = transform(&transform(&x, &a).unwrap(), &b).unwrap();
        let rhs = transform(&x, &a.matmul(&b).unwrap()).unwrap();
        for (l, r) in lhs.data.iter().zip(&rhs.data) {
            assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_mean_examples() {
        assert_eq!(trace_mean(&SymMatrix::identity(4)), 1.0);
        assert_eq!(trace_mean(&SymMatrix::from_diag(&[3.0, 1.0])), 2.0);
        assert_eq!(trace_mean(&SymMatrix::zeros(3)), 0.0);
    }

    #[test]
    fn rejects_asymmetric() {
        let r = SymMatrix::new(2, vec![1.0, 2.0, 3.0, 1.0]);
        assert!(matches!(r, Err(Error::NotSymmetric(_))));
    }
}
