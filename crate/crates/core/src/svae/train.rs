use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Rng, Vector};

use super::objective::{accumulate_grads, Gradients};
use super::SvaeModel;

/// Samples per gradient chunk. Chunks are reduced in index order, so the
/// result does not depend on how many threads run them.
const GRAD_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvaeTrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Noise draws per datum in the ELBO estimate.
    pub mc_samples: usize,
}

impl Default for SvaeTrainConfig {
    fn default() -> Self {
        SvaeTrainConfig {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 30,
            batch_size: 64,
            mc_samples: 1,
        }
    }
}

impl SvaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::invalid(format!("adam_eps must be positive, got {}", self.adam_eps)));
        }
        if self.mc_samples == 0 {
            return Err(Error::invalid("mc_samples must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Adam with bias correction over a fixed list of parameter buffers.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &SvaeTrainConfig, shapes: &[usize]) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            step: 0,
            first: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            second: shapes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for (((pi, gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvaeEpochStats {
    pub epoch: usize,
    /// Mean `−ELBO` over the epoch's samples, evaluated before each update.
    pub mean_neg_elbo: f64,
    /// Mean pixelwise squared reconstruction error of the sampled codes.
    pub mean_mse: f64,
}

/// Minibatch Adam on the negative ELBO.
///
/// When `model.normalize_decoder` is set the decoder columns are projected to
/// unit norm once before training and again after every Adam step.
pub fn train_svae(
    data: &[Vector],
    mut model: SvaeModel,
    cfg: &SvaeTrainConfig,
    rng: &mut Rng,
    mut on_epoch: impl FnMut(&SvaeEpochStats, &SvaeModel),
) -> Result<(SvaeModel, Vec<SvaeEpochStats>)> {
    cfg.validate()?;
    model.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("SVAE training needs a nonempty dataset"));
    }
    let d = model.input_dim();
    let n = model.latent_dim();
    if let Some(bad) = data.iter().find(|x| x.len() != d) {
        return Err(Error::dims("train_svae", format!("D={d}"), format!("sample of length {}", bad.len())));
    }
    if model.normalize_decoder {
        model.dict.project(rng);
    }
    let shapes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
    let mut adam = Adam::new(cfg, &shapes);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mc = cfg.mc_samples;

    for epoch in 0..cfg.epochs {
        let order = rng.permutation(data.len());
        let mut loss_sum = 0.0;
        let mut sq_sum = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let eps: Vec<f64> = (0..batch.len() * mc * n).map(|_| rng.standard_normal()).collect();
            let scale = 1.0 / (batch.len() * mc) as f64;
            let snapshot = &model;
            let partials: Vec<(Gradients, f64, f64)> = batch
                .par_chunks(GRAD_CHUNK)
                .enumerate()
                .map(|(c, chunk)| {
                    let mut grads = Gradients::zeros_like(snapshot);
                    let mut loss = 0.0;
                    let mut sq = 0.0;
                    for (k, &i) in chunk.iter().enumerate() {
                        let row = c * GRAD_CHUNK + k;
                        for s in 0..mc {
                            let off = (row * mc + s) * n;
                            let e = accumulate_grads(snapshot, &data[i], &eps[off..off + n], scale, &mut grads)?;
                            loss -= e.value;
                            sq += e.sq_error;
                        }
                    }
                    Ok((grads, loss, sq))
                })
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::NonFinite(what) => {
                        Error::NonFinite(format!("{what} at epoch {epoch}, batch {batch_idx}"))
                    }
                    other => other,
                })?;
            let mut iter = partials.into_iter();
            let (mut grads, first_loss, first_sq) = iter.next().expect("nonempty batch");
            loss_sum += first_loss / mc as f64;
            sq_sum += first_sq / mc as f64;
            for (g, l, s) in iter {
                grads.add_assign(&g);
                loss_sum += l / mc as f64;
                sq_sum += s / mc as f64;
            }
            if !grads.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient at epoch {epoch}, batch {batch_idx}"
                )));
            }
            adam.update(model.param_slices_mut(), grads.slices());
            if model.normalize_decoder {
                model.dict.project(rng);
            }
        }
        let stats = SvaeEpochStats {
            epoch,
            mean_neg_elbo: loss_sum / data.len() as f64,
            mean_mse: sq_sum / (data.len() * d) as f64,
        };
        if !stats.mean_neg_elbo.is_finite() {
            return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
        }
        log::info!(
            "svae epoch {epoch}: -elbo {:.6}, mse {:.6}",
            stats.mean_neg_elbo,
            stats.mean_mse
        );
        on_epoch(&stats, &model);
        history.push(stats);
    }
    Ok((model, history))
}
