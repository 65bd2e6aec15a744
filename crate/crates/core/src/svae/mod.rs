//! Sparse coding variational autoencoder.
//!
//! An amortized Gaussian posterior `q(z|x)` from a feedforward encoder, a
//! factorized Laplace prior, and a linear decoder `x̂ = Uz` whose columns
//! play the role of the sparse coding dictionary. Training maximizes a
//! β-weighted Monte-Carlo ELBO with hand-written reverse-mode gradients and
//! can project the decoder columns to unit norm after every step.

mod encoder;
mod objective;
mod train;

pub use encoder::{Dense, Encoder, EncoderKind, ResBlock, LOGVAR_CLAMP};
pub use objective::{elbo, elbo_grads, Elbo, Gradients};
pub use train::{train_svae, Adam, SvaeEpochStats, SvaeTrainConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng, Vector};
use crate::sparse_coding::Dictionary;

use encoder::relu_in_place;

/// Mean and log-variance of a diagonal Gaussian posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub mu: Vector,
    pub logvar: Vector,
}

/// Architecture and objective hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvaeHyper {
    pub encoder: EncoderKind,
    pub hidden_dim: usize,
    pub n_blocks: usize,
    /// Laplace prior scale `b`.
    pub prior_scale: f64,
    /// Fixed Gaussian likelihood std `sigma_x`.
    pub likelihood_scale: f64,
    /// Weight on the `log p(z) − log q(z|x)` term.
    pub beta: f64,
    pub normalize_decoder: bool,
}

impl Default for SvaeHyper {
    fn default() -> Self {
        SvaeHyper {
            encoder: EncoderKind::Resnet,
            hidden_dim: 256,
            n_blocks: 2,
            prior_scale: 0.1,
            likelihood_scale: 1.0,
            beta: 0.5,
            normalize_decoder: false,
        }
    }
}

impl SvaeHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.prior_scale > 0.0) || !self.prior_scale.is_finite() {
            return Err(Error::invalid(format!(
                "prior_scale must be positive, got {}",
                self.prior_scale
            )));
        }
        if !(self.likelihood_scale > 0.0) || !self.likelihood_scale.is_finite() {
            return Err(Error::invalid(format!(
                "likelihood_scale must be positive, got {}",
                self.likelihood_scale
            )));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.hidden_dim == 0 {
            return Err(Error::invalid("hidden_dim must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvaeModel {
    pub encoder: Encoder,
    pub dict: Dictionary,
    pub prior_scale: f64,
    pub likelihood_scale: f64,
    pub beta: f64,
    pub normalize_decoder: bool,
}

impl SvaeModel {
    /// Fresh model: encoder weights with std `1/√fan_in`, unit-norm Gaussian decoder columns.
    pub fn new(input_dim: usize, latent_dim: usize, hyper: &SvaeHyper, rng: &mut Rng) -> Result<Self> {
        hyper.validate()?;
        let encoder = Encoder::new(
            hyper.encoder,
            input_dim,
            hyper.hidden_dim,
            latent_dim,
            hyper.n_blocks,
            rng,
        )?;
        let dict = Dictionary::random(input_dim, latent_dim, rng)?;
        Ok(SvaeModel {
            encoder,
            dict,
            prior_scale: hyper.prior_scale,
            likelihood_scale: hyper.likelihood_scale,
            beta: hyper.beta,
            normalize_decoder: hyper.normalize_decoder,
        })
    }

    pub fn hyper(&self) -> SvaeHyper {
        SvaeHyper {
            encoder: self.encoder.kind,
            hidden_dim: self.encoder.hidden_dim(),
            n_blocks: self.encoder.blocks.len(),
            prior_scale: self.prior_scale,
            likelihood_scale: self.likelihood_scale,
            beta: self.beta,
            normalize_decoder: self.normalize_decoder,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dict.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.dict.latent_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.hyper().validate()?;
        if self.encoder.input_dim() != self.input_dim() || self.encoder.latent_dim() != self.latent_dim() {
            return Err(Error::dims(
                "SvaeModel",
                format!("encoder {}->{}", self.encoder.input_dim(), self.encoder.latent_dim()),
                format!("decoder {}", self.dict.matrix().shape()),
            ));
        }
        Ok(())
    }

    fn check_input(&self, op: &'static str, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::dims(op, format!("D={}", self.input_dim()), format!("x of length {}", x.len())));
        }
        Ok(())
    }

    fn check_latent(&self, op: &'static str, z: &[f64]) -> Result<()> {
        if z.len() != self.latent_dim() {
            return Err(Error::dims(op, format!("N={}", self.latent_dim()), format!("vector of length {}", z.len())));
        }
        Ok(())
    }

    /// Posterior parameters for one input.
    pub fn encode(&self, x: &[f64]) -> Result<GaussianPosterior> {
        self.check_input("encode", x)?;
        let h = self.hidden(x);
        let n = self.latent_dim();
        let mut mu = vec![0.0; n];
        let mut logvar = vec![0.0; n];
        self.encoder.mu_head.forward_into(&h, &mut mu);
        self.encoder.logvar_head.forward_into(&h, &mut logvar);
        logvar
            .iter_mut()
            .for_each(|v| *v = v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP));
        Ok(GaussianPosterior {
            mu: Vector::from_vec(mu),
            logvar: Vector::from_vec(logvar),
        })
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let hdim = self.encoder.hidden_dim();
        let mut h = vec![0.0; hdim];
        self.encoder.input.forward_into(x, &mut h);
        relu_in_place(&mut h);
        let mut a = vec![0.0; hdim];
        let mut s = vec![0.0; hdim];
        for block in &self.encoder.blocks {
            block.inner.forward_into(&h, &mut a);
            relu_in_place(&mut a);
            block.outer.forward_into(&a, &mut s);
            for (si, hi) in s.iter_mut().zip(&h) {
                *si += hi;
            }
            relu_in_place(&mut s);
            std::mem::swap(&mut h, &mut s);
        }
        h
    }

    /// `x̂ = U z`.
    pub fn decode(&self, z: &[f64]) -> Result<Vector> {
        self.check_latent("decode", z)?;
        self.dict.decode(z)
    }

    /// Posterior sample `mu + exp(logvar/2) ⊙ eps` for a fresh standard normal `eps`.
    pub fn sample_posterior(&self, x: &[f64], rng: &mut Rng) -> Result<Vector> {
        let post = self.encode(x)?;
        let eps: Vec<f64> = (0..self.latent_dim()).map(|_| rng.standard_normal()).collect();
        reparameterize(&post, &eps)
    }

    /// `count` decoder outputs for codes drawn from the Laplace prior.
    pub fn generate_from_prior(&self, rng: &mut Rng, count: usize) -> Result<Vec<Vector>> {
        if count == 0 {
            return Err(Error::invalid("generate_from_prior needs count >= 1"));
        }
        (0..count)
            .map(|_| {
                let z: Vec<f64> = (0..self.latent_dim()).map(|_| rng.laplace(self.prior_scale)).collect();
                self.dict.decode(&z)
            })
            .collect()
    }

    /// Parameter storage in canonical order: encoder layers (weight then bias), then the decoder.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for (_, layer) in self.encoder.layers() {
            out.push(layer.weight.as_slice());
            out.push(layer.bias.as_slice());
        }
        out.push(self.dict.matrix().as_slice());
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in self.encoder.layers_mut() {
            out.push(layer.weight.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out.push(self.dict.matrix_mut().as_mut_slice());
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn decoder(&self) -> &Matrix {
        self.dict.matrix()
    }
}

/// `z = mu + exp(logvar/2) ⊙ eps`.
pub fn reparameterize(post: &GaussianPosterior, eps: &[f64]) -> Result<Vector> {
    if eps.len() != post.mu.len() {
        return Err(Error::dims("reparameterize", post.mu.len(), eps.len()));
    }
    Ok(post
        .mu
        .iter()
        .zip(post.logvar.iter())
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(kind: EncoderKind, seed: u64) -> SvaeModel {
        let hyper = SvaeHyper {
            encoder: kind,
            hidden_dim: 6,
            n_blocks: 2,
            ..SvaeHyper::default()
        };
        SvaeModel::new(4, 5, &hyper, &mut Rng::new(seed, 0)).unwrap()
    }

    fn zero_params(model: &mut SvaeModel) {
        for s in model.param_slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn relu(v: f64) -> f64 {
        v.max(0.0)
    }

    /// Layer-by-layer forward pass written with explicit index loops.
    fn oracle_encode(model: &SvaeModel, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let enc = &model.encoder;
        let affine = |d: &Dense, v: &[f64]| -> Vec<f64> {
            (0..d.out_dim())
                .map(|i| {
                    let mut acc = d.bias[i];
                    for j in 0..d.in_dim() {
                        acc += d.weight.get(i, j) * v[j];
                    }
                    acc
                })
                .collect()
        };
        let mut h: Vec<f64> = affine(&enc.input, x).into_iter().map(relu).collect();
        for b in &enc.blocks {
            let a: Vec<f64> = affine(&b.inner, &h).into_iter().map(relu).collect();
            let s = affine(&b.outer, &a);
            h = h.iter().zip(&s).map(|(hi, si)| relu(hi + si)).collect();
        }
        let mu = affine(&enc.mu_head, &h);
        let lv = affine(&enc.logvar_head, &h).into_iter().map(|v| v.clamp(-12.0, 12.0)).collect();
        (mu, lv)
    }

    #[test]
    fn zero_network_gives_standard_posterior() {
        for kind in [EncoderKind::Linear, EncoderKind::Resnet] {
            let mut m = small_model(kind, 1);
            zero_params(&mut m);
            let post = m.encode(&[1.0, -2.0, 3.0, 0.5]).unwrap();
            assert!(post.mu.iter().all(|v| *v == 0.0));
            assert!(post.logvar.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn zero_blocks_pass_hidden_state_through() {
        let mut m = small_model(EncoderKind::Resnet, 2);
        for b in m.encoder.blocks.iter_mut() {
            b.inner = Dense::zeros(6, 6);
            b.outer = Dense::zeros(6, 6);
        }
        let x = [0.3, -0.7, 1.1, 0.2];
        let mut h = vec![0.0; 6];
        m.encoder.input.forward_into(&x, &mut h);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        assert_eq!(m.hidden(&x), h);
    }

    #[test]
    fn encode_matches_layer_oracle() {
        for kind in [EncoderKind::Linear, EncoderKind::Resnet] {
            let m = small_model(kind, 3);
            let x = [0.9, -0.4, 0.25, -1.3];
            let post = m.encode(&x).unwrap();
            let (mu, lv) = oracle_encode(&m, &x);
            for (a, b) in post.mu.iter().zip(&mu) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in post.logvar.iter().zip(&lv) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encode_clamps_logvar() {
        let mut m = small_model(EncoderKind::Linear, 4);
        m.encoder.logvar_head.bias.iter_mut().for_each(|b| *b = 100.0);
        let post = m.encode(&[0.0; 4]).unwrap();
        assert!(post.logvar.iter().all(|v| *v == LOGVAR_CLAMP));
        m.encoder.logvar_head.bias.iter_mut().for_each(|b| *b = -100.0);
        let post = m.encode(&[0.0; 4]).unwrap();
        assert!(post.logvar.iter().all(|v| *v == -LOGVAR_CLAMP));
    }

    #[test]
    fn encode_rejects_wrong_length() {
        let m = small_model(EncoderKind::Linear, 5);
        assert!(m.encode(&[0.0; 3]).is_err());
        assert!(m.decode(&[0.0; 4]).is_err());
    }

    #[test]
    fn reparameterize_examples() {
        let post = GaussianPosterior {
            mu: Vector::from_vec(vec![0.5, -1.0]),
            logvar: Vector::from_vec(vec![0.0, 0.0]),
        };
        assert_eq!(reparameterize(&post, &[0.0, 0.0]).unwrap(), post.mu);
        assert_eq!(reparameterize(&post, &[1.0, 2.0]).unwrap().as_slice(), &[1.5, 1.0]);
        let post = GaussianPosterior {
            mu: Vector::from_vec(vec![0.0]),
            logvar: Vector::from_vec(vec![2.0 * 2f64.ln()]),
        };
        let z = reparameterize(&post, &[1.0]).unwrap();
        assert!((z[0] - 2.0).abs() < 1e-15);
        assert!(reparameterize(&post, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn decode_examples() {
        let mut m = small_model(EncoderKind::Linear, 6);
        assert!(m.decode(&[0.0; 5]).unwrap().iter().all(|v| *v == 0.0));
        let z = [0.1, -0.2, 0.3, 0.0, 1.5];
        let direct = m.decoder().matvec(&z).unwrap();
        assert_eq!(m.decode(&z).unwrap(), direct);
        m.dict = Dictionary::from_matrix(Matrix::identity(4)).unwrap();
        m.encoder = Encoder::new(EncoderKind::Linear, 4, 6, 4, 0, &mut Rng::new(0, 0)).unwrap();
        assert_eq!(m.decode(&[1.0, 2.0, 3.0, 4.0]).unwrap().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn prior_samples() {
        let mut m = small_model(EncoderKind::Linear, 7);
        let a = m.generate_from_prior(&mut Rng::new(9, 0), 3).unwrap();
        let b = m.generate_from_prior(&mut Rng::new(9, 0), 3).unwrap();
        assert_eq!(a, b);
        m.prior_scale = 1e-12;
        for v in m.generate_from_prior(&mut Rng::new(9, 0), 5).unwrap() {
            assert!(v.iter().all(|x| x.abs() < 1e-9));
        }
        assert!(m.generate_from_prior(&mut Rng::new(9, 0), 0).is_err());
    }

    #[test]
    fn prior_sample_mean_is_zero() {
        let m = small_model(EncoderKind::Linear, 8);
        let count = 10_000;
        let samples = m.generate_from_prior(&mut Rng::new(10, 0), count).unwrap();
        for i in 0..m.input_dim() {
            let mean = samples.iter().map(|s| s[i]).sum::<f64>() / count as f64;
            let row_norm = m.decoder().row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            let tol = 4.0 * row_norm * 2f64.sqrt() * m.prior_scale / 100.0;
            assert!(mean.abs() < tol, "coord {i}: {mean} vs {tol}");
        }
    }
}
