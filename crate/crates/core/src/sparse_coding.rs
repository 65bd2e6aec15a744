//! Classical sparse coding: ISTA inference of the code and projected
//! gradient descent on a unit-norm dictionary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    dot, project_columns_unit_norm, soft_threshold, spectral_norm_sq, Matrix, Rng, Vector,
};

/// Power iterations used to estimate the ISTA Lipschitz constant.
pub const POWER_ITERS: usize = 100;

/// A `D x N` dictionary whose columns are the learned atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    atoms: Matrix,
}

impl Dictionary {
    pub fn from_matrix(atoms: Matrix) -> Result<Self> {
        if atoms.rows() == 0 || atoms.cols() == 0 {
            return Err(Error::invalid(format!(
                "dictionary needs at least one row and column, got {}",
                atoms.shape()
            )));
        }
        Ok(Dictionary { atoms })
    }

    /// Gaussian columns normalized to unit length.
    pub fn random(input_dim: usize, latent_dim: usize, rng: &mut Rng) -> Result<Self> {
        let mut atoms = Matrix::from_fn(input_dim, latent_dim, |_, _| rng.standard_normal());
        project_columns_unit_norm(&mut atoms, rng);
        Dictionary::from_matrix(atoms)
    }

    pub fn input_dim(&self) -> usize {
        self.atoms.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.atoms.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.atoms
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.atoms
    }

    pub fn into_matrix(self) -> Matrix {
        self.atoms
    }

    pub fn column_norms(&self) -> Vec<f64> {
        self.atoms.col_norms()
    }

    /// Projects every atom back to unit norm; returns redrawn column indices.
    pub fn project(&mut self, rng: &mut Rng) -> Vec<usize> {
        project_columns_unit_norm(&mut self.atoms, rng)
    }

    /// `U z`.
    pub fn decode(&self, z: &[f64]) -> Result<Vector> {
        self.atoms.matvec(z)
    }

    /// Lipschitz constant `2 λ_max(UᵀU)` of the reconstruction gradient.
    pub fn lipschitz(&self) -> Result<f64> {
        Ok(2.0 * spectral_norm_sq(&self.atoms, POWER_ITERS)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScConfig {
    pub lambda: f64,
    pub dict_lr: f64,
    pub ista_max_iters: usize,
    pub ista_rel_tol: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ScConfig {
    fn default() -> Self {
        ScConfig {
            lambda: 0.5,
            dict_lr: 0.05,
            ista_max_iters: 500,
            ista_rel_tol: 0.01,
            epochs: 10,
            batch_size: 100,
        }
    }
}

impl ScConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.dict_lr >= 0.0) || !self.dict_lr.is_finite() {
            return Err(Error::invalid(format!(
                "dict_lr must be >= 0, got {}",
                self.dict_lr
            )));
        }
        if !(self.ista_rel_tol > 0.0 && self.ista_rel_tol < 1.0) {
            return Err(Error::invalid(format!(
                "ista_rel_tol must lie in (0, 1), got {}",
                self.ista_rel_tol
            )));
        }
        if self.ista_max_iters == 0 {
            return Err(Error::invalid("ista_max_iters must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Result of ISTA inference for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCode {
    pub z: Vector,
    pub iters_used: usize,
    pub final_energy: f64,
    pub converged: bool,
}

fn check_dims(op: &'static str, x: &[f64], dict: &Dictionary, z: Option<&[f64]>) -> Result<()> {
    if x.len() != dict.input_dim() {
        return Err(Error::dims(op, dict.matrix().shape(), format!("x of length {}", x.len())));
    }
    if let Some(z) = z {
        if z.len() != dict.latent_dim() {
            return Err(Error::dims(op, dict.matrix().shape(), format!("z of length {}", z.len())));
        }
    }
    Ok(())
}

fn residual(x: &[f64], dict: &Dictionary, z: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; x.len()];
    dict.matrix().matvec_into(z, &mut r);
    for (ri, xi) in r.iter_mut().zip(x) {
        *ri = xi - *ri;
    }
    r
}

/// `‖x − Uz‖² + λ‖z‖₁`.
pub fn energy(x: &[f64], dict: &Dictionary, z: &[f64], lambda: f64) -> Result<f64> {
    check_dims("energy", x, dict, Some(z))?;
    Ok(energy_unchecked(x, dict, z, lambda))
}

fn energy_unchecked(x: &[f64], dict: &Dictionary, z: &[f64], lambda: f64) -> f64 {
    let r = residual(x, dict, z);
    dot(&r, &r) + lambda * z.iter().map(|v| v.abs()).sum::<f64>()
}

/// ISTA inference from `z = 0`.
pub fn ista_infer(x: &[f64], dict: &Dictionary, cfg: &ScConfig) -> Result<SparseCode> {
    let lipschitz = dict.lipschitz()?;
    ista_with_lipschitz(x, dict, cfg, lipschitz, |_, _, _| {})
}

/// ISTA with a caller-supplied Lipschitz constant. `observe` is called after
/// every iteration with the iteration number, the current code and its
/// energy.
pub fn ista_with_lipschitz(
    x: &[f64],
    dict: &Dictionary,
    cfg: &ScConfig,
    lipschitz: f64,
    mut observe: impl FnMut(usize, &[f64], f64),
) -> Result<SparseCode> {
    check_dims("ista_infer", x, dict, None)?;
    let u = dict.matrix();
    let n = dict.latent_dim();
    let mut z = vec![0.0; n];
    if !(lipschitz > 0.0) {
        // U = 0: every code reconstructs nothing and z = 0 minimizes the penalty.
        let final_energy = dot(x, x);
        observe(1, &z, final_energy);
        return Ok(SparseCode {
            z: Vector::from_vec(z),
            iters_used: 1,
            final_energy,
            converged: true,
        });
    }
    let step = 1.0 / lipschitz;
    let threshold = cfg.lambda * step;
    let mut r = x.to_vec();
    let mut grad = vec![0.0; n];
    let mut norm_old = 0.0;
    let mut iters_used = 0;
    let mut converged = false;
    for iter in 1..=cfg.ista_max_iters {
        iters_used = iter;
        // Uᵀ r; the energy gradient is −2 Uᵀ r.
        u.matvec_t_into(&r, &mut grad);
        for (zi, gi) in z.iter_mut().zip(&grad) {
            *zi = soft_threshold(*zi + 2.0 * step * gi, threshold);
        }
        r = residual(x, dict, &z);
        let e = dot(&r, &r) + cfg.lambda * z.iter().map(|v| v.abs()).sum::<f64>();
        if !e.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("ISTA iteration {iter}")));
        }
        let norm_new = dot(&z, &z).sqrt();
        observe(iter, &z, e);
        let done = if norm_old == 0.0 {
            norm_new == 0.0
        } else {
            (norm_new - norm_old).abs() / norm_old < cfg.ista_rel_tol
        };
        norm_old = norm_new;
        if done {
            converged = true;
            break;
        }
    }
    let final_energy = dot(&r, &r) + cfg.lambda * z.iter().map(|v| v.abs()).sum::<f64>();
    Ok(SparseCode {
        z: Vector::from_vec(z),
        iters_used,
        final_energy,
        converged,
    })
}

/// `‖z − shrink(z − t∇, λt)‖∞` with `t = 1/lipschitz`; zero at an exact ISTA fixed point.
pub fn fixed_point_residual(
    x: &[f64],
    dict: &Dictionary,
    z: &[f64],
    lambda: f64,
    lipschitz: f64,
) -> Result<f64> {
    check_dims("fixed_point_residual", x, dict, Some(z))?;
    let step = 1.0 / lipschitz;
    let r = residual(x, dict, z);
    let grad = dict.matrix().matvec_t(&r)?;
    Ok(z
        .iter()
        .zip(grad.iter())
        .map(|(zi, gi)| (zi - soft_threshold(zi + 2.0 * step * gi, lambda * step)).abs())
        .fold(0.0, f64::max))
}

/// `∂E/∂U = −2 (x − Uz) zᵀ`.
pub fn dictionary_grad(x: &[f64], dict: &Dictionary, z: &[f64]) -> Result<Matrix> {
    check_dims("dictionary_grad", x, dict, Some(z))?;
    let r = residual(x, dict, z);
    let mut g = Matrix::zeros(dict.input_dim(), dict.latent_dim());
    g.add_outer(-2.0, &r, z);
    Ok(g)
}

/// Mean ISTA energy over one training epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochEnergy {
    pub epoch: usize,
    pub mean_energy: f64,
    pub mean_iters: f64,
}

/// Alternates ISTA inference and a projected gradient step on the dictionary.
///
/// Each minibatch infers codes with the current dictionary, averages
/// `dictionary_grad` over the batch, takes `U ← U − η·grad` and projects the
/// columns back to unit norm. The dictionary is projected once before the
/// first batch. Samples are visited in a fresh seeded order every epoch.
pub fn train_sparse_coding(
    data: &[Vector],
    init: Dictionary,
    cfg: &ScConfig,
    rng: &mut Rng,
    mut on_epoch: impl FnMut(&EpochEnergy, &Dictionary),
) -> Result<(Dictionary, Vec<EpochEnergy>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("sparse coding needs a nonempty dataset"));
    }
    let mut dict = init;
    if let Some(bad) = data.iter().find(|x| x.len() != dict.input_dim()) {
        return Err(Error::dims(
            "train_sparse_coding",
            dict.matrix().shape(),
            format!("sample of length {}", bad.len()),
        ));
    }
    dict.project(rng);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = rng.permutation(data.len());
        let mut energy_sum = 0.0;
        let mut iter_sum = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let lipschitz = dict.lipschitz()?;
            let codes: Vec<SparseCode> = batch
                .par_iter()
                .map(|&i| ista_with_lipschitz(&data[i], &dict, cfg, lipschitz, |_, _, _| {}))
                .collect::<Result<_>>()?;
            let mut grad = Matrix::zeros(dict.input_dim(), dict.latent_dim());
            let scale = -2.0 / batch.len() as f64;
            for (&i, code) in batch.iter().zip(&codes) {
                let r = residual(&data[i], &dict, &code.z);
                grad.add_outer(scale, &r, &code.z);
                energy_sum += code.final_energy;
                iter_sum += code.iters_used;
            }
            dict.matrix_mut().add_scaled(-cfg.dict_lr, &grad)?;
            if !dict.matrix().is_finite() {
                return Err(Error::NonFinite(format!("dictionary update in epoch {epoch}")));
            }
            dict.project(rng);
        }
        let stats = EpochEnergy {
            epoch,
            mean_energy: energy_sum / data.len() as f64,
            mean_iters: iter_sum as f64 / data.len() as f64,
        };
        log::info!(
            "sparse coding epoch {epoch}: mean energy {:.6}, mean ISTA iters {:.1}",
            stats.mean_energy,
            stats.mean_iters
        );
        on_epoch(&stats, &dict);
        history.push(stats);
    }
    Ok((dict, history))
}
