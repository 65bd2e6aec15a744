use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::json;
use svae_core::analysis::{
    classify_filters, export_filter_grid, export_tile_grid, filter_norm_stats, reconstruction_mse, FilterGroup,
};
use svae_core::data::{
    extract_patches, load_checkpoint, load_mnist_idx, read_stack, save_checkpoint, sidecar_path, split,
    synthesize_dead_leaves, whiten as whiten_stack, write_stack, Checkpoint, PatchDataset, Split,
};
use svae_core::model::{ModelKind, SparseCodingModel, TrainedModel};
use svae_core::sparse_coding::{train_sparse_coding, Dictionary};
use svae_core::svae::{train_svae, SvaeModel};
use svae_core::Rng;

use crate::config::RunConfig;
use crate::{CliError, Common};

// Independent random streams per pipeline stage, so changing one stage's
// consumption never shifts another's draws.
const STREAM_PATCHES: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_TRAIN: u64 = 4;
const STREAM_EVAL: u64 = 5;
const STREAM_ANALYZE: u64 = 6;
const STREAM_GENERATE: u64 = 7;

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

/// Output files go into an existing directory (the current one when the path is bare).
fn require_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(CliError::Usage(format!(
            "output directory {} does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(svae_core::Error::from)?;
    fs::write(path, text + "\n").map_err(|e| svae_core::Error::io(path, e).into())
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(data) = &common.data {
        cfg.data.stack = Some(data.clone());
        cfg.data.mnist_images = None;
        cfg.data.mnist_labels = None;
    }
    Ok(cfg)
}

fn check_data_paths(cfg: &RunConfig) -> Result<(), CliError> {
    let d = &cfg.data;
    match (&d.stack, &d.mnist_images, &d.mnist_labels) {
        (Some(stack), _, _) => {
            require_file(stack, "image stack")?;
            require_file(&sidecar_path(stack), "stack sidecar")
        }
        (None, Some(images), Some(labels)) => {
            require_file(images, "MNIST image file")?;
            require_file(labels, "MNIST label file")
        }
        _ => Err(CliError::Usage(
            "no data source: pass --data or set data.stack / data.mnist_images in the config".into(),
        )),
    }
}

/// Patches (or digits) with the configured train/test split. A pure function
/// of the configuration, so train, eval and analyze see the same split.
fn load_dataset(cfg: &RunConfig) -> Result<PatchDataset, CliError> {
    let d = &cfg.data;
    let data = match (&d.stack, &d.mnist_images, &d.mnist_labels) {
        (Some(stack), _, _) => {
            let images = read_stack(stack)?;
            extract_patches(&images, d.patch_size, d.n_patches, &mut Rng::new(cfg.seed, STREAM_PATCHES))?
        }
        (None, Some(images), Some(labels)) => load_mnist_idx(images, labels)?,
        _ => unreachable!("checked by check_data_paths"),
    };
    Ok(split(data, d.test_fraction, &mut Rng::new(cfg.seed, STREAM_SPLIT))?)
}

fn load_model(path: &Path) -> Result<Checkpoint, CliError> {
    require_file(path, "checkpoint")?;
    Ok(load_checkpoint(path)?)
}

fn check_compatible(ckpt: &Checkpoint, data: &PatchDataset) -> Result<(), CliError> {
    if ckpt.model.input_dim() != data.dim() {
        return Err(CliError::Usage(format!(
            "checkpoint expects D={} but the data has D={}",
            ckpt.model.input_dim(),
            data.dim()
        )));
    }
    Ok(())
}

pub fn synth(count: usize, size: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    require_parent(out)?;
    let stack = synthesize_dead_leaves(count, size, &mut Rng::new(seed, 0))?;
    write_stack(out, &stack)?;
    println!("{}", json!({ "count": count, "height": size, "width": size }));
    Ok(())
}

pub fn whiten(input: &Path, out: &Path, config: Option<&Path>, f0: Option<f64>) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(f0) = f0 {
        cfg.whiten.f0 = f0;
    }
    cfg.validate()?;
    require_file(input, "image stack")?;
    require_file(&sidecar_path(input), "stack sidecar")?;
    require_parent(out)?;
    let raw = read_stack(input)?;
    let white = whiten_stack(&raw, &cfg.whiten)?;
    write_stack(out, &white)?;
    let (mean, variance) = white.mean_variance();
    println!(
        "{}",
        json!({
            "count": white.count,
            "height": white.height,
            "width": white.width,
            "f0": cfg.whiten.f0,
            "mean": mean,
            "variance": variance,
        })
    );
    Ok(())
}

pub fn train(
    common: &Common,
    kind: ModelKind,
    epochs: Option<usize>,
    beta: Option<f64>,
    lambda: Option<f64>,
    out: &Path,
) -> Result<(), CliError> {
    let mut cfg = load_config(common)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
        cfg.sparse_coding.epochs = e;
    }
    if let Some(b) = beta {
        cfg.model.beta = b;
    }
    if let Some(l) = lambda {
        cfg.sparse_coding.lambda = l;
    }
    cfg.validate()?;
    check_data_paths(&cfg)?;
    if !out.is_dir() {
        fs::create_dir_all(out).map_err(|e| svae_core::Error::io(out, e))?;
    }

    let data = load_dataset(&cfg)?;
    let train_set = data.samples_in(Split::Train);
    let d = data.dim();
    let n = cfg.model.latent_dim;
    let telemetry_path = out.join("telemetry.jsonl");
    let mut telemetry = fs::File::create(&telemetry_path).map_err(|e| svae_core::Error::io(&telemetry_path, e))?;
    let mut log_line = |value: serde_json::Value| -> std::io::Result<()> { writeln!(telemetry, "{value}") };
    let mut io_err = None;
    let mut init_rng = Rng::new(cfg.seed, STREAM_INIT);
    let mut train_rng = Rng::new(cfg.seed, STREAM_TRAIN);

    let (model, epochs_done) = match kind {
        ModelKind::SparseCoding => {
            let init = Dictionary::random(d, n, &mut init_rng)?;
            let (dict, history) = train_sparse_coding(&train_set, init, &cfg.sparse_coding, &mut train_rng, |s, _| {
                let line = json!({
                    "model": kind.as_str(),
                    "epoch": s.epoch,
                    "mean_energy": s.mean_energy,
                    "mean_ista_iters": s.mean_iters,
                });
                if let Err(e) = log_line(line) {
                    io_err.get_or_insert(e);
                }
            })?;
            let model = SparseCodingModel::new(dict, cfg.sparse_coding.clone())?;
            (TrainedModel::SparseCoding(model), history.len())
        }
        ModelKind::Svae | ModelKind::SvaeNorm => {
            let hyper = cfg.model.hyper(kind == ModelKind::SvaeNorm);
            let init = SvaeModel::new(d, n, &hyper, &mut init_rng)?;
            let (model, history) = train_svae(&train_set, init, &cfg.train, &mut train_rng, |s, m| {
                let norms = m.dict.column_norms();
                let line = json!({
                    "model": kind.as_str(),
                    "epoch": s.epoch,
                    "mean_neg_elbo": s.mean_neg_elbo,
                    "mean_mse": s.mean_mse,
                    "min_column_norm": norms.iter().copied().fold(f64::INFINITY, f64::min),
                    "max_column_norm": norms.iter().copied().fold(0.0, f64::max),
                });
                if let Err(e) = log_line(line) {
                    io_err.get_or_insert(e);
                }
            })?;
            (TrainedModel::Svae(model), history.len())
        }
    };
    if let Some(e) = io_err {
        return Err(svae_core::Error::io(&telemetry_path, e).into());
    }
    let ckpt = Checkpoint {
        model,
        patch_shape: data.patch_shape,
        seed: cfg.seed,
        epoch: epochs_done,
    };
    let ckpt_path = out.join("checkpoint.svae");
    save_checkpoint(&ckpt, &ckpt_path)?;
    write_json(&out.join("config.json"), &cfg)?;
    println!(
        "{}",
        json!({
            "model": kind.as_str(),
            "checkpoint": ckpt_path.display().to_string(),
            "train_samples": train_set.len(),
            "epochs": epochs_done,
        })
    );
    Ok(())
}

pub fn eval(common: &Common, checkpoint: &Path, trials: Option<usize>, out: &Path) -> Result<(), CliError> {
    let mut cfg = load_config(common)?;
    if let Some(t) = trials {
        cfg.eval.trials = t;
    }
    cfg.validate()?;
    check_data_paths(&cfg)?;
    require_parent(out)?;
    let ckpt = load_model(checkpoint)?;
    let data = load_dataset(&cfg)?;
    check_compatible(&ckpt, &data)?;
    let test = data.samples_in(Split::Test);
    let report = reconstruction_mse(&ckpt.model, &test, cfg.eval.trials, &mut Rng::new(cfg.seed, STREAM_EVAL))?;
    write_json(out, &report)?;
    println!("{}", serde_json::to_string(&report).map_err(svae_core::Error::from)?);
    Ok(())
}

pub fn analyze(common: &Common, checkpoint: &Path, threshold: Option<f64>, out: &Path) -> Result<(), CliError> {
    let mut cfg = load_config(common)?;
    if let Some(t) = threshold {
        cfg.analyze.threshold = t;
    }
    cfg.validate()?;
    check_data_paths(&cfg)?;
    let ckpt = load_model(checkpoint)?;
    if !out.is_dir() {
        fs::create_dir_all(out).map_err(|e| svae_core::Error::io(out, e))?;
    }
    let data = load_dataset(&cfg)?;
    check_compatible(&ckpt, &data)?;
    let test = data.samples_in(Split::Test);
    let mut rng = Rng::new(cfg.seed, STREAM_ANALYZE);
    let report = classify_filters(&ckpt.model, &test, &cfg.analyze.classify_options(), &mut rng)?;
    let norms = filter_norm_stats(ckpt.model.dict(), Some(&report));
    write_json(&out.join("filter_report.json"), &report)?;
    write_json(&out.join("norm_stats.json"), &norms)?;

    let dict = ckpt.model.dict();
    let shape = ckpt.patch_shape;
    let cols = cfg.analyze.grid_cols;
    export_filter_grid(&out.join("filters_all.pgm"), dict, shape, None, cols)?;
    for (group, name) in [(FilterGroup::Active, "filters_active.pgm"), (FilterGroup::Noise, "filters_noise.pgm")] {
        let mut members = report.indices(group);
        if members.is_empty() {
            continue;
        }
        if members.len() > cfg.analyze.max_display {
            let pick = rng.permutation(members.len());
            let mut shown: Vec<usize> = pick[..cfg.analyze.max_display].iter().map(|&k| members[k]).collect();
            shown.sort_unstable();
            members = shown;
        }
        export_filter_grid(&out.join(name), dict, shape, Some(&members), cols)?;
    }
    println!(
        "{}",
        json!({
            "model": report.model,
            "threshold": report.threshold,
            "active": report.active_count,
            "noise": report.noise_count,
        })
    );
    Ok(())
}

pub fn generate(common: &Common, checkpoint: &Path, count: Option<usize>, out: &Path) -> Result<(), CliError> {
    let mut cfg = load_config(common)?;
    if let Some(c) = count {
        cfg.generate.count = c;
    }
    cfg.validate()?;
    require_parent(out)?;
    let ckpt = load_model(checkpoint)?;
    let TrainedModel::Svae(model) = &ckpt.model else {
        return Err(CliError::Usage(
            "generate needs an SVAE checkpoint; sparse coding has no generative prior".into(),
        ));
    };
    let samples = model.generate_from_prior(&mut Rng::new(cfg.seed, STREAM_GENERATE), cfg.generate.count)?;
    let tiles: Vec<&[f64]> = samples.iter().map(|s| s.as_slice()).collect();
    let img = export_tile_grid(out, &tiles, ckpt.patch_shape, cfg.generate.grid_cols)?;
    println!(
        "{}",
        json!({ "samples": samples.len(), "width": img.width, "height": img.height })
    );
    Ok(())
}
