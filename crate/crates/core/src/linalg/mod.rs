//! Dense arithmetic, seeded sampling and the elementwise operators the
//! sparse coding and SVAE models share.

mod matrix;
mod rng;

pub use matrix::{Matrix, Shape, Vector};
pub use rng::{sample_gaussian, sample_laplace, Rng};

pub(crate) use matrix::{dot, norm};

use crate::error::{Error, Result};

/// Columns whose norm falls below this are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-8;

const UNIT_NORM_SLACK: f64 = 1e-14;

/// Soft threshold: `sign(z_i) · max(|z_i| − threshold, 0)`.
pub fn shrinkage(z: &[f64], threshold: f64) -> Result<Vector> {
    if !(threshold >= 0.0) {
        return Err(Error::invalid(format!(
            "shrinkage threshold must be >= 0, got {threshold}"
        )));
    }
    Ok(z.iter().map(|v| soft_threshold(*v, threshold)).collect())
}

#[inline]
pub(crate) fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Rescales every column of `u` to unit L2 norm in place.
///
/// Columns with norm below [`DEGENERATE_NORM`] are redrawn from a standard
/// Gaussian before normalizing. Returns the indices of redrawn columns.
pub fn project_columns_unit_norm(u: &mut Matrix, rng: &mut Rng) -> Vec<usize> {
    let rows = u.rows();
    let norms = u.col_norms();
    let mut redrawn = Vec::new();
    for (j, n) in norms.iter().enumerate() {
        if *n < DEGENERATE_NORM || !n.is_finite() {
            let mut fresh: Vec<f64> = (0..rows).map(|_| rng.standard_normal()).collect();
            let fresh_norm = norm(&fresh);
            fresh.iter_mut().for_each(|v| *v /= fresh_norm);
            u.set_col(j, &fresh);
            redrawn.push(j);
        }
    }
    let scales: Vec<f64> = norms
        .iter()
        .enumerate()
        .map(|(j, n)| {
            // Columns already at unit norm up to rounding are left bit-identical.
            if redrawn.contains(&j) || (n - 1.0).abs() <= UNIT_NORM_SLACK {
                1.0
            } else {
                1.0 / n
            }
        })
        .collect();
    for i in 0..rows {
        for (v, s) in u.row_mut(i).iter_mut().zip(&scales) {
            *v *= s;
        }
    }
    if !redrawn.is_empty() {
        log::warn!(
            "re-randomized {} degenerate dictionary column(s): {:?}",
            redrawn.len(),
            redrawn
        );
    }
    redrawn
}

/// Largest eigenvalue of `UᵀU` (squared spectral norm of `U`) by power iteration.
pub fn spectral_norm_sq(u: &Matrix, iters: usize) -> Result<f64> {
    if iters == 0 {
        return Err(Error::invalid("spectral_norm_sq needs iters >= 1"));
    }
    let n = u.cols();
    if n == 0 || u.rows() == 0 {
        return Ok(0.0);
    }
    // Deterministic start with no zero components and no symmetry.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7548).sin()).collect();
    let mut nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut uv = vec![0.0; u.rows()];
    let mut w = vec![0.0; n];
    let mut estimate = 0.0;
    for _ in 0..iters {
        u.matvec_into(&v, &mut uv);
        estimate = dot(&uv, &uv);
        u.matvec_t_into(&uv, &mut w);
        nv = norm(&w);
        if nv == 0.0 {
            return Ok(0.0);
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nv;
        }
    }
    // Rayleigh quotient at the final iterate.
    u.matvec_into(&v, &mut uv);
    Ok(estimate.max(dot(&uv, &uv)))
}
