//! Run configuration: a JSON file with every section optional, overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use svae_core::analysis::{ActivationSource, ClassifyOptions, Criterion};
use svae_core::data::WhitenConfig;
use svae_core::sparse_coding::ScConfig;
use svae_core::svae::{EncoderKind, SvaeHyper, SvaeTrainConfig};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub whiten: WhitenConfig,
    pub model: ModelConfig,
    pub sparse_coding: ScConfig,
    pub train: SvaeTrainConfig,
    pub eval: EvalConfig,
    pub analyze: AnalyzeConfig,
    pub generate: GenerateConfig,
}

/// Where samples come from: patches of a whitened stack, or MNIST IDX files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub stack: Option<PathBuf>,
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
    pub patch_size: usize,
    /// Total patches drawn, train and test together.
    pub n_patches: usize,
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            stack: None,
            mnist_images: None,
            mnist_labels: None,
            patch_size: 8,
            n_patches: 110_000,
            test_fraction: 1.0 / 11.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub encoder: EncoderKind,
    pub hidden_dim: usize,
    pub n_blocks: usize,
    pub prior_scale: f64,
    pub likelihood_scale: f64,
    pub beta: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let h = SvaeHyper::default();
        ModelConfig {
            latent_dim: 128,
            encoder: h.encoder,
            hidden_dim: h.hidden_dim,
            n_blocks: h.n_blocks,
            prior_scale: h.prior_scale,
            likelihood_scale: h.likelihood_scale,
            beta: h.beta,
        }
    }
}

impl ModelConfig {
    pub fn hyper(&self, normalize_decoder: bool) -> SvaeHyper {
        SvaeHyper {
            encoder: self.encoder,
            hidden_dim: self.hidden_dim,
            n_blocks: self.n_blocks,
            prior_scale: self.prior_scale,
            likelihood_scale: self.likelihood_scale,
            beta: self.beta,
            normalize_decoder,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub trials: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { trials: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub threshold: f64,
    pub criterion: Criterion,
    pub source: ActivationSource,
    /// Filters shown per group grid, chosen at random when the group is larger.
    pub max_display: usize,
    pub grid_cols: usize,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        let c = ClassifyOptions::default();
        AnalyzeConfig {
            threshold: c.threshold,
            criterion: c.criterion,
            source: c.source,
            max_display: 100,
            grid_cols: 10,
        }
    }
}

impl AnalyzeConfig {
    pub fn classify_options(&self) -> ClassifyOptions {
        ClassifyOptions {
            threshold: self.threshold,
            criterion: self.criterion,
            source: self.source,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub count: usize,
    pub grid_cols: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            count: 100,
            grid_cols: 10,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Range checks that need no I/O.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Usage(msg));
        if !(self.whiten.f0 > 0.0) {
            return bad(format!("whiten.f0 must be positive, got {}", self.whiten.f0));
        }
        let d = &self.data;
        if d.patch_size == 0 {
            return bad("data.patch_size must be >= 1".into());
        }
        if d.n_patches < 2 {
            return bad("data.n_patches must be >= 2".into());
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return bad(format!("data.test_fraction must lie in (0, 1), got {}", d.test_fraction));
        }
        if d.mnist_images.is_some() != d.mnist_labels.is_some() {
            return bad("data.mnist_images and data.mnist_labels must be given together".into());
        }
        if d.stack.is_some() && d.mnist_images.is_some() {
            return bad("data.stack and data.mnist_* are mutually exclusive".into());
        }
        if self.model.latent_dim == 0 {
            return bad("model.latent_dim must be >= 1".into());
        }
        self.model.hyper(false).validate()?;
        self.sparse_coding.validate()?;
        self.train.validate()?;
        if self.eval.trials == 0 {
            return bad("eval.trials must be >= 1".into());
        }
        if !(self.analyze.threshold >= 0.0) {
            return bad(format!("analyze.threshold must be >= 0, got {}", self.analyze.threshold));
        }
        if self.analyze.grid_cols == 0 || self.generate.grid_cols == 0 {
            return bad("grid_cols must be >= 1".into());
        }
        if self.generate.count == 0 {
            return bad("generate.count must be >= 1".into());
        }
        Ok(())
    }
}
