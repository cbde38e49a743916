//! Dense double-precision kernels: matrices, seeded random orthogonal
//! matrices and a one-sided Jacobi thin SVD.
//!
//! The thin SVD keeps `r = min(rows, cols)` columns. Left singular vectors for
//! exactly (or numerically) zero singular values are completed to an
//! orthonormal set so `UᵀU = I_r` always holds.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Row-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidDimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from a list of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::InvalidDimension(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
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

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::InvalidDimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Stack matrices vertically.
    pub fn vstack(blocks: &[&Matrix]) -> Result<Matrix> {
        let cols = blocks.first().map_or(0, |b| b.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for b in blocks {
            if b.cols != cols {
                return Err(Error::InvalidDimension(format!(
                    "cannot stack {} columns onto {cols}",
                    b.cols
                )));
            }
            data.extend_from_slice(&b.data);
            rows += b.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Max-abs entrywise difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum OrthogonalKind {
    GeneralOrthogonal,
    #[default]
    Permutation,
}

/// A square orthogonal matrix. Permutations also carry their index map:
/// row `i` has its single 1 in column `perm[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalMatrix {
    inner: Matrix,
    kind: OrthogonalKind,
    perm: Option<Vec<usize>>,
}

impl OrthogonalMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn kind(&self) -> OrthogonalKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.inner.rows
    }

    pub fn permutation(&self) -> Option<&[usize]> {
        self.perm.as_deref()
    }

    pub fn transpose(&self) -> OrthogonalMatrix {
        let perm = self.perm.as_ref().map(|p| {
            let mut inv = vec![0; p.len()];
            for (i, &j) in p.iter().enumerate() {
                inv[j] = i;
            }
            inv
        });
        OrthogonalMatrix {
            inner: self.inner.transpose(),
            kind: self.kind,
            perm,
        }
    }

    pub fn identity(n: usize) -> OrthogonalMatrix {
        OrthogonalMatrix {
            inner: Matrix::identity(n),
            kind: OrthogonalKind::Permutation,
            perm: Some((0..n).collect()),
        }
    }

    pub fn from_permutation(perm: Vec<usize>) -> Result<OrthogonalMatrix> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &j in &perm {
            if j >= n || std::mem::replace(&mut seen[j], true) {
                return Err(Error::InvalidInput("not a permutation".into()));
            }
        }
        let mut inner = Matrix::zeros(n, n);
        for (i, &j) in perm.iter().enumerate() {
            inner.set(i, j, 1.0);
        }
        Ok(OrthogonalMatrix {
            inner,
            kind: OrthogonalKind::Permutation,
            perm: Some(perm),
        })
    }
}

/// Thin SVD factors `X = U diag(S) Vᵀ` with `U: n×r`, `V: d×r`, `r = min(n, d)`.
#[derive(Debug, Clone)]
pub struct FactoredMatrix {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl FactoredMatrix {
    pub fn rank_bound(&self) -> usize {
        self.s.len()
    }

    /// Number of singular values above `rel_tol * S_max`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let smax = self.s.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&s| s > rel_tol * smax).count()
    }

    pub fn reconstruct(&self) -> Matrix {
        let (n, r) = (self.u.rows, self.s.len());
        let d = self.v.rows;
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            for k in 0..r {
                let us = self.u.get(i, k) * self.s[k];
                if us == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.data[i * d + j] += us * self.v.get(j, k);
                }
            }
        }
        out
    }
}

/// Seeded random orthogonal matrix of size `n`.
pub fn random_orthogonal(n: usize, seed: u64, kind: OrthogonalKind) -> Result<OrthogonalMatrix> {
    if n == 0 {
        return Err(Error::InvalidDimension(
            "orthogonal matrix of size 0".into(),
        ));
    }
    let mut rng = rng_from(seed);
    match kind {
        OrthogonalKind::Permutation => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            OrthogonalMatrix::from_permutation(perm)
        }
        OrthogonalKind::GeneralOrthogonal => {
            // Columns of a Gaussian matrix, orthonormalized by modified
            // Gram-Schmidt run twice. Positive R diagonal gives a Haar sample.
            let mut cols: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            for j in 0..n {
                let (done, rest) = cols.split_at_mut(j);
                let c = &mut rest[0];
                for _ in 0..2 {
                    for q in done.iter() {
                        let proj = dot(q, c);
                        axpy(-proj, q, c);
                    }
                }
                let norm = dot(c, c).sqrt();
                c.iter_mut().for_each(|v| *v /= norm);
            }
            let mut inner = Matrix::zeros(n, n);
            for (j, c) in cols.iter().enumerate() {
                for (i, &v) in c.iter().enumerate() {
                    inner.set(i, j, v);
                }
            }
            Ok(OrthogonalMatrix {
                inner,
                kind,
                perm: None,
            })
        }
    }
}

/// `P · X · Q`.
pub fn apply_mask(p: &OrthogonalMatrix, x: &Matrix, q: &OrthogonalMatrix) -> Result<Matrix> {
    if p.size() != x.rows || q.size() != x.cols {
        return Err(Error::InvalidDimension(format!(
            "mask sizes {}x{} / {}x{} do not fit a {}x{} matrix",
            p.size(),
            p.size(),
            q.size(),
            q.size(),
            x.rows,
            x.cols
        )));
    }
    let left = match p.permutation() {
        Some(perm) => {
            let mut out = Matrix::zeros(x.rows, x.cols);
            for (i, &src) in perm.iter().enumerate() {
                out.row_mut(i).copy_from_slice(x.row(src));
            }
            out
        }
        None => p.inner.matmul(x)?,
    };
    match q.permutation() {
        Some(perm) => {
            // (A Q)_{ij} = A_{i, k} where Q_{k j} = 1, i.e. perm[k] = j.
            let mut out = Matrix::zeros(left.rows, left.cols);
            for i in 0..left.rows {
                for (k, &j) in perm.iter().enumerate() {
                    out.set(i, j, left.get(i, k));
                }
            }
            Ok(out)
        }
        None => left.matmul(&q.inner),
    }
}

const JACOBI_TOL: f64 = 1e-15;
const MAX_SWEEPS: usize = 80;

/// Thin SVD by one-sided (Hestenes) Jacobi rotations.
pub fn thin_svd(x: &Matrix) -> Result<FactoredMatrix> {
    if x.rows == 0 || x.cols == 0 {
        return Err(Error::InvalidDimension(format!(
            "cannot factor a {}x{} matrix",
            x.rows, x.cols
        )));
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    if x.rows >= x.cols {
        Ok(jacobi_tall(x))
    } else {
        let f = jacobi_tall(&x.transpose());
        Ok(FactoredMatrix {
            u: f.v,
            s: f.s,
            v: f.u,
        })
    }
}

/// Singular values only, descending.
pub fn singular_values(x: &Matrix) -> Result<Vec<f64>> {
    thin_svd(x).map(|f| f.s)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn rotate(a: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = a.split_at_mut(q);
    let (ap, aq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in ap.iter_mut().zip(aq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

// Requires rows >= cols.
fn jacobi_tall(x: &Matrix) -> FactoredMatrix {
    let (n, d) = (x.rows, x.cols);
    let mut a: Vec<Vec<f64>> = (0..d).map(|j| x.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..d).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        // squared column norms, refreshed each sweep and updated per rotation
        let mut norms: Vec<f64> = a.iter().map(|c| dot(c, c)).collect();
        for p in 0..d {
            for q in p + 1..d {
                let (alpha, beta) = (norms[p], norms[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(usize, f64)> = a.iter().map(|c| dot(c, c).sqrt()).enumerate().collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let smax = order[0].1;
    let null_tol = smax * f64::EPSILON * n as f64;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut s = Vec::with_capacity(d);
    let mut v_out = Matrix::zeros(d, d);
    let mut pending = Vec::new();
    for (k, &(j, sigma)) in order.iter().enumerate() {
        for (i, &vi) in v[j].iter().enumerate() {
            v_out.set(i, k, vi);
        }
        if sigma > null_tol && sigma > 0.0 {
            u_cols.push(a[j].iter().map(|x| x / sigma).collect());
            s.push(sigma);
        } else {
            u_cols.push(vec![0.0; n]);
            s.push(if sigma > 0.0 { sigma } else { 0.0 });
            pending.push(k);
        }
    }
    complete_orthonormal(&mut u_cols, &pending);

    let mut u = Matrix::zeros(n, d);
    for (k, col) in u_cols.iter().enumerate() {
        for (i, &val) in col.iter().enumerate() {
            u.set(i, k, val);
        }
    }
    FactoredMatrix { u, s, v: v_out }
}

// Fill the columns listed in `pending` with unit vectors orthogonal to every
// other column, drawing candidates from the standard basis.
fn complete_orthonormal(cols: &mut [Vec<f64>], pending: &[usize]) {
    if pending.is_empty() {
        return;
    }
    let n = cols[0].len();
    let mut candidate = 0;
    for &k in pending {
        loop {
            assert!(candidate < n, "ran out of basis vectors completing U");
            let mut e = vec![0.0; n];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (j, c) in cols.iter().enumerate() {
                    if j == k || (pending.contains(&j) && c.iter().all(|&x| x == 0.0)) {
                        continue;
                    }
                    let proj = dot(c, &e);
                    axpy(-proj, c, &mut e);
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 1e-6 {
                e.iter_mut().for_each(|x| *x /= norm);
                cols[k] = e;
                break;
            }
        }
    }
}
