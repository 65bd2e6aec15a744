use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng, Vector};

/// `logvar` produced by the encoder is clamped to `[-LOGVAR_CLAMP, LOGVAR_CLAMP]`.
pub const LOGVAR_CLAMP: f64 = 12.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// One ReLU hidden layer feeding the two heads.
    Linear,
    /// Input projection followed by dimension-preserving residual blocks.
    Resnet,
}

/// Affine layer `W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vector,
}

impl Dense {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Dense {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: Vector::zeros(out_dim),
        }
    }

    /// Gaussian weights with std `1/√fan_in`, zero bias.
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut Rng) -> Self {
        let std = 1.0 / (in_dim as f64).sqrt();
        Dense {
            weight: Matrix::from_fn(out_dim, in_dim, |_, _| std * rng.standard_normal()),
            bias: Vector::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    #[inline]
    pub(crate) fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        self.weight.matvec_into(x, out);
        for (o, b) in out.iter_mut().zip(self.bias.iter()) {
            *o += b;
        }
    }

    /// Accumulates `scale · (g xᵀ, g)` into this layer's storage.
    #[inline]
    pub(crate) fn accumulate(&mut self, scale: f64, g: &[f64], x: &[f64]) {
        self.weight.add_outer(scale, g, x);
        for (b, gi) in self.bias.iter_mut().zip(g) {
            *b += scale * gi;
        }
    }
}

/// `h ↦ ReLU(h + W_b · ReLU(W_a h + b_a) + b_b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock {
    pub inner: Dense,
    pub outer: Dense,
}

/// Amortized posterior network producing `(mu, logvar)`.
///
/// The linear variant is `h = ReLU(W1 x + b1)` followed by the heads. The
/// residual variant inserts `blocks` after the input projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub kind: EncoderKind,
    pub input: Dense,
    pub blocks: Vec<ResBlock>,
    pub mu_head: Dense,
    pub logvar_head: Dense,
}

impl Encoder {
    pub fn new(
        kind: EncoderKind,
        input_dim: usize,
        hidden_dim: usize,
        latent_dim: usize,
        n_blocks: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || latent_dim == 0 {
            return Err(Error::invalid(format!(
                "encoder dims must be positive, got D={input_dim} H={hidden_dim} N={latent_dim}"
            )));
        }
        let n_blocks = match kind {
            EncoderKind::Linear => 0,
            EncoderKind::Resnet => n_blocks,
        };
        let input = Dense::init(hidden_dim, input_dim, rng);
        let blocks = (0..n_blocks)
            .map(|_| ResBlock {
                inner: Dense::init(hidden_dim, hidden_dim, rng),
                outer: Dense::init(hidden_dim, hidden_dim, rng),
            })
            .collect();
        let mu_head = Dense::init(latent_dim, hidden_dim, rng);
        let logvar_head = Dense::init(latent_dim, hidden_dim, rng);
        Ok(Encoder {
            kind,
            input,
            blocks,
            mu_head,
            logvar_head,
        })
    }

    /// Same shapes with every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let z = |d: &Dense| Dense::zeros(d.out_dim(), d.in_dim());
        Encoder {
            kind: self.kind,
            input: z(&self.input),
            blocks: self
                .blocks
                .iter()
                .map(|b| ResBlock {
                    inner: z(&b.inner),
                    outer: z(&b.outer),
                })
                .collect(),
            mu_head: z(&self.mu_head),
            logvar_head: z(&self.logvar_head),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input.in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.input.out_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.out_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_dim();
        let n = self.latent_dim();
        let shape_ok = |d: &Dense, rows: usize, cols: usize| {
            d.weight.rows() == rows && d.weight.cols() == cols && d.bias.len() == rows
        };
        let mut ok = self.input.bias.len() == h
            && shape_ok(&self.mu_head, n, h)
            && shape_ok(&self.logvar_head, n, h);
        ok &= self
            .blocks
            .iter()
            .all(|b| shape_ok(&b.inner, h, h) && shape_ok(&b.outer, h, h));
        ok &= match self.kind {
            EncoderKind::Linear => self.blocks.is_empty(),
            EncoderKind::Resnet => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("encoder parameter shapes are inconsistent"))
        }
    }

    /// Named parameter layers in canonical order.
    pub fn layers(&self) -> Vec<(String, &Dense)> {
        let mut out = vec![("input".to_string(), &self.input)];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.inner"), &b.inner));
            out.push((format!("block{i}.outer"), &b.outer));
        }
        out.push(("mu".to_string(), &self.mu_head));
        out.push(("logvar".to_string(), &self.logvar_head));
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut out = vec![&mut self.input];
        for b in self.blocks.iter_mut() {
            out.push(&mut b.inner);
            out.push(&mut b.outer);
        }
        out.push(&mut self.mu_head);
        out.push(&mut self.logvar_head);
        out
    }
}

#[inline]
pub(crate) fn relu_in_place(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}
