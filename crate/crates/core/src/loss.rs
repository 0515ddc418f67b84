//! Laplacian log-likelihood with a Cholesky-parameterized covariance, the
//! group-balanced aggregation over semantic groups, and the Euclidean baseline.
//!
//! All math here runs in `f64` regardless of the network precision.

use crate::error::{MdmdError, Result};
use crate::model::PredictionSet;
use crate::schema::DatasetSchema;

/// Floor added to both diagonal entries of the Cholesky factor.
pub const CHOLESKY_EPS: f64 = 1e-6;

/// Lower-triangular `L = [[a, 0], [b, c]]` with `a, c > 0`; `Σ = L Lᵀ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CholeskyFactor {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl CholeskyFactor {
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let CholeskyFactor { a, b, c } = *self;
        [[a * a, a * b], [a * b, b * b + c * c]]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (self.a.ln() + self.c.ln())
    }

    /// `dᵀ Σ⁻¹ d` through two triangular solves with `L`.
    pub fn mahalanobis_sq(&self, d: [f64; 2]) -> f64 {
        let z1 = d[0] / self.a;
        let z2 = (d[1] - self.b * z1) / self.c;
        z1 * z1 + z2 * z2
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps unconstrained head outputs to a factor with strictly positive diagonal.
pub fn decode_cholesky(raw: [f64; 3]) -> CholeskyFactor {
    CholeskyFactor {
        a: softplus(raw[0]) + CHOLESKY_EPS,
        b: raw[1],
        c: softplus(raw[2]) + CHOLESKY_EPS,
    }
}

/// `½ log|Σ| + sqrt(3 (μ - gt)ᵀ Σ⁻¹ (μ - gt))`.
pub fn laplacian_nll(mu: [f64; 2], factor: &CholeskyFactor, gt: [f64; 2]) -> f64 {
    let d = [mu[0] - gt[0], mu[1] - gt[1]];
    0.5 * factor.log_det() + (3.0 * factor.mahalanobis_sq(d)).sqrt()
}

/// Value and gradients of [`laplacian_nll`] with respect to `μ` and the raw
/// (pre-softplus) Cholesky parameters. At `μ = gt` the square-root term is
/// not differentiable; its subgradient is taken as zero there.
pub fn laplacian_nll_grad(mu: [f64; 2], raw: [f64; 3], gt: [f64; 2]) -> (f64, [f64; 2], [f64; 3]) {
    let f = decode_cholesky(raw);
    let (a, b, c) = (f.a, f.b, f.c);
    let dx = mu[0] - gt[0];
    let dy = mu[1] - gt[1];
    let z1 = dx / a;
    let z2 = (dy - b * z1) / c;
    let q = z1 * z1 + z2 * z2;
    let s = (3.0 * q).sqrt();
    let value = a.ln() + c.ln() + s;

    let gq = if s > 0.0 { 1.5 / s } else { 0.0 };
    let g2 = gq * 2.0 * z2;
    let g1 = gq * 2.0 * z1 - g2 * b / c;
    let d_mu = [g1 / a, g2 / c];
    let d_a = 1.0 / a - g1 * z1 / a;
    let d_b = -g2 * z1 / c;
    let d_c = 1.0 / c - g2 * z2 / c;
    let d_raw = [d_a * sigmoid(raw[0]), d_b, d_c * sigmoid(raw[2])];
    (value, d_mu, d_raw)
}

/// `‖μ - gt‖₂` and its gradient with respect to `μ` (zero at `μ = gt`).
pub fn euclidean_grad(mu: [f64; 2], gt: [f64; 2]) -> (f64, [f64; 2]) {
    let d = [mu[0] - gt[0], mu[1] - gt[1]];
    let n = d[0].hypot(d[1]);
    if n > 0.0 {
        (n, [d[0] / n, d[1] / n])
    } else {
        (0.0, [0.0, 0.0])
    }
}

fn check_shapes(pred: &PredictionSet, gt: &[[f64; 2]], schema: &DatasetSchema) -> Result<()> {
    let n = schema.landmark_count;
    if pred.landmarks.len() != n || pred.cholesky_raw.len() != n || gt.len() != n {
        return Err(MdmdError::Shape(format!(
            "schema `{}` has {n} landmarks; prediction {}/{} rows, ground truth {}",
            schema.name,
            pred.landmarks.len(),
            pred.cholesky_raw.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Mean over non-empty groups of the per-group mean Laplacian NLL.
pub fn mdmd_loss(pred: &PredictionSet, gt: &[[f64; 2]], schema: &DatasetSchema) -> Result<f64> {
    check_shapes(pred, gt, schema)?;
    let mut outer = 0.0;
    let mut non_empty = 0usize;
    for group in schema.flsg_map.groups().iter().filter(|g| !g.is_empty()) {
        let inner: f64 = group
            .iter()
            .map(|&k| {
                let factor = decode_cholesky(pred.cholesky_raw[k]);
                laplacian_nll(pred.landmarks[k], &factor, gt[k])
            })
            .sum();
        outer += inner / group.len() as f64;
        non_empty += 1;
    }
    Ok(outer / non_empty as f64)
}

/// Same two-level averaging as [`mdmd_loss`] with `‖μ - gt‖₂` per landmark.
pub fn euclidean_loss(pred: &PredictionSet, gt: &[[f64; 2]], schema: &DatasetSchema) -> Result<f64> {
    check_shapes(pred, gt, schema)?;
    let mut outer = 0.0;
    let mut non_empty = 0usize;
    for group in schema.flsg_map.groups().iter().filter(|g| !g.is_empty()) {
        let inner: f64 = group
            .iter()
            .map(|&k| euclidean_grad(pred.landmarks[k], gt[k]).0)
            .sum();
        outer += inner / group.len() as f64;
        non_empty += 1;
    }
    Ok(outer / non_empty as f64)
}
