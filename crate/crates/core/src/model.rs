//! A trained model of either family behind one interface.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{Rng, Vector};
use crate::sparse_coding::{ista_with_lipschitz, Dictionary, ScConfig};
use crate::svae::SvaeModel;

/// Which model a run trains or a checkpoint holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "sc")]
    SparseCoding,
    #[serde(rename = "svae")]
    Svae,
    /// SVAE with unit-norm decoder projection.
    #[serde(rename = "svae-norm")]
    SvaeNorm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::SparseCoding => "sc",
            ModelKind::Svae => "svae",
            ModelKind::SvaeNorm => "svae-norm",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sc" => Ok(ModelKind::SparseCoding),
            "svae" => Ok(ModelKind::Svae),
            "svae-norm" => Ok(ModelKind::SvaeNorm),
            other => Err(format!("unknown model kind {other:?} (expected sc, svae or svae-norm)")),
        }
    }
}

/// Dictionary plus the ISTA settings used for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCodingModel {
    dict: Dictionary,
    config: ScConfig,
    lipschitz: f64,
}

impl SparseCodingModel {
    pub fn new(dict: Dictionary, config: ScConfig) -> Result<Self> {
        config.validate()?;
        let lipschitz = dict.lipschitz()?;
        Ok(SparseCodingModel {
            dict,
            config,
            lipschitz,
        })
    }

    pub fn dict(&self) -> &Dictionary {
        &self.dict
    }

    pub fn config(&self) -> &ScConfig {
        &self.config
    }

    pub fn infer(&self, x: &[f64]) -> Result<Vector> {
        Ok(ista_with_lipschitz(x, &self.dict, &self.config, self.lipschitz, |_, _, _| {})?.z)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    SparseCoding(SparseCodingModel),
    Svae(SvaeModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::SparseCoding(_) => ModelKind::SparseCoding,
            TrainedModel::Svae(m) if m.normalize_decoder => ModelKind::SvaeNorm,
            TrainedModel::Svae(_) => ModelKind::Svae,
        }
    }

    pub fn dict(&self) -> &Dictionary {
        match self {
            TrainedModel::SparseCoding(m) => m.dict(),
            TrainedModel::Svae(m) => &m.dict,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dict().input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.dict().latent_dim()
    }

    /// False for sparse coding, whose codes are a deterministic function of the input.
    pub fn is_stochastic(&self) -> bool {
        matches!(self, TrainedModel::Svae(_))
    }

    /// Posterior mean for the SVAE, the ISTA code for sparse coding.
    pub fn code_mean(&self, x: &[f64]) -> Result<Vector> {
        match self {
            TrainedModel::SparseCoding(m) => m.infer(x),
            TrainedModel::Svae(m) => Ok(m.encode(x)?.mu),
        }
    }

    /// One posterior sample for the SVAE, the ISTA code for sparse coding.
    pub fn code_sample(&self, x: &[f64], rng: &mut Rng) -> Result<Vector> {
        match self {
            TrainedModel::SparseCoding(m) => m.infer(x),
            TrainedModel::Svae(m) => m.sample_posterior(x, rng),
        }
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vector> {
        self.dict().decode(z)
    }
}
