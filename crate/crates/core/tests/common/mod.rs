#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use fedcbdr::linalg::Matrix;

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

/// Singular values from nalgebra, descending.
pub fn oracle_singular_values(m: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = to_na(m).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Squared row norms of the left singular vectors belonging to singular
/// values above `rel_tol · s_max`, computed with nalgebra.
pub fn oracle_leverage(m: &Matrix, rel_tol: f64) -> Vec<f64> {
    let svd = to_na(m).svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > rel_tol * smax)
        .map(|(i, _)| i)
        .collect();
    (0..m.rows())
        .map(|i| keep.iter().map(|&k| u[(i, k)] * u[(i, k)]).sum())
        .collect()
}

/// Diagonal of the hat matrix X (XᵀX)⁻¹ Xᵀ for full column rank X.
pub fn hat_diagonal(m: &Matrix) -> Vec<f64> {
    let x = to_na(m);
    let gram_inv = (x.transpose() * &x)
        .try_inverse()
        .expect("full column rank");
    let h = &x * gram_inv * x.transpose();
    (0..m.rows()).map(|i| h[(i, i)]).collect()
}

/// Roundoff bound of a central difference with step `h` on a loss of
/// magnitude `loss`.
pub fn fd_floor(loss: f64, h: f64) -> f64 {
    10.0 * f64::EPSILON * loss.abs().max(1.0) / h
}

/// Elementwise gradient comparison: relative error at most `rel_tol`, with
/// `floor` of absolute slack for entries too small to resolve.
pub fn grad_close(analytic: f64, numeric: f64, rel_tol: f64, floor: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs());
    (analytic - numeric).abs() <= rel_tol * scale + floor
}

/// Tracks the worst relative error over entries large enough that the
/// floor is negligible, and the worst absolute error over the rest.
#[derive(Default)]
pub struct GradStats {
    pub worst_rel: f64,
    pub worst_abs_small: f64,
}

impl GradStats {
    pub fn add(&mut self, analytic: f64, numeric: f64) {
        let scale = analytic.abs().max(numeric.abs());
        let diff = (analytic - numeric).abs();
        if scale >= 1e-4 {
            self.worst_rel = self.worst_rel.max(diff / scale);
        } else {
            self.worst_abs_small = self.worst_abs_small.max(diff);
        }
    }
}

pub fn random_size(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

/// Label entropy (nats) of a list of labels.
pub fn entropy(labels: &[usize]) -> f64 {
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let n = labels.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}
