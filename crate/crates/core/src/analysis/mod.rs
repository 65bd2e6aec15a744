//! Diagnostics: reconstruction error over Monte-Carlo trials, activation
//! profiles, active/noise filter classification, column-norm statistics and
//! filter-grid export.

mod filters;
mod pgm;

pub use filters::{
    classify_filters, filter_norm_stats, ActivationSource, ClassifyOptions, Criterion, FilterGroup,
    FilterReport, FilterStat, GroupSummary, NormStats,
};
pub use pgm::{export_filter_grid, export_tile_grid, read_pgm, render_tile_grid, write_pgm, GrayImage};

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{Rng, Vector};
use crate::model::TrainedModel;

/// Reconstruction error summary; `std_mse` is `None` for deterministic models.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MseReport {
    pub model: String,
    pub mean_mse: f64,
    #[serde(serialize_with = "std_or_na")]
    pub std_mse: Option<f64>,
    pub trials: usize,
    pub test_samples: usize,
}

fn std_or_na<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("N/A"),
    }
}

/// Pixelwise MSE of `x̂ = U z` on the test set, with `z` drawn afresh from
/// the posterior in every trial. Sparse coding is deterministic, so it runs a
/// single trial and reports no spread.
///
/// The per-trial std uses the sample (n − 1) normalization; a single trial has std 0.
pub fn reconstruction_mse(
    model: &TrainedModel,
    testset: &[Vector],
    trials: usize,
    rng: &mut Rng,
) -> Result<MseReport> {
    if testset.is_empty() {
        return Err(Error::invalid("reconstruction_mse needs a nonempty test set"));
    }
    if trials == 0 {
        return Err(Error::invalid("reconstruction_mse needs trials >= 1"));
    }
    let d = model.input_dim();
    let n = model.latent_dim();
    let stochastic = model.is_stochastic();
    let trials = if stochastic { trials } else { 1 };
    let mut per_trial = Vec::with_capacity(trials);
    for _ in 0..trials {
        let eps: Vec<f64> = if stochastic {
            (0..testset.len() * n).map(|_| rng.standard_normal()).collect()
        } else {
            Vec::new()
        };
        let errors: Vec<f64> = testset
            .par_iter()
            .enumerate()
            .map(|(k, x)| -> Result<f64> {
                let z = match model {
                    TrainedModel::Svae(m) => {
                        crate::svae::reparameterize(&m.encode(x)?, &eps[k * n..(k + 1) * n])?
                    }
                    TrainedModel::SparseCoding(m) => m.infer(x)?,
                };
                let xh = model.decode(&z)?;
                Ok(x.iter().zip(xh.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            })
            .collect::<Result<_>>()?;
        per_trial.push(errors.iter().sum::<f64>() / (testset.len() * d) as f64);
    }
    let mean = per_trial.iter().sum::<f64>() / trials as f64;
    let std = if trials > 1 {
        (per_trial.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(MseReport {
        model: model.kind().as_str().to_string(),
        mean_mse: mean,
        std_mse: stochastic.then_some(std),
        trials,
        test_samples: testset.len(),
    })
}

/// Latent activity for one input, for plotting.
pub fn activation_profile(
    model: &TrainedModel,
    x: &[f64],
    source: ActivationSource,
    rng: &mut Rng,
) -> Result<Vector> {
    match source {
        ActivationSource::PosteriorMean => model.code_mean(x),
        ActivationSource::Sampled => model.code_sample(x, rng),
    }
}
