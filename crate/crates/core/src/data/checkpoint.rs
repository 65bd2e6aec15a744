//! Checkpoint container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SVAE"
//! 4       4     format version (u32, little-endian)
//! 8       4     metadata length M (u32, little-endian)
//! 12      M     UTF-8 JSON metadata
//! 12+M    ...   little-endian f32 arrays, in the order of metadata.arrays
//! ```
//!
//! Every array is stored row-major. Training runs in f64, so a load returns
//! parameters rounded to f32 precision.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{ModelKind, SparseCodingModel, TrainedModel};
use crate::sparse_coding::{Dictionary, ScConfig};
use crate::svae::{Dense, Encoder, EncoderKind, ResBlock, SvaeHyper, SvaeModel};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SVAE";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 12;
const WHAT: &str = "checkpoint";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: TrainedModel,
    pub patch_shape: (usize, usize),
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model_kind: ModelKind,
    pub input_dim: usize,
    pub latent_dim: usize,
    pub patch_shape: [usize; 2],
    pub seed: u64,
    pub epoch: usize,
    pub sparse_coding: Option<ScConfig>,
    pub svae: Option<SvaeHyper>,
    pub arrays: Vec<ArrayMeta>,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        what: WHAT,
        offset,
        message: message.into(),
    }
}

/// Array layout implied by the model description, used both to write and to validate.
fn expected_arrays(kind: ModelKind, d: usize, n: usize, hyper: Option<&SvaeHyper>) -> Vec<ArrayMeta> {
    let arr = |name: String, rows, cols| ArrayMeta { name, rows, cols };
    match (kind, hyper) {
        (ModelKind::SparseCoding, _) => vec![arr("dictionary".into(), d, n)],
        (_, Some(h)) => {
            let hd = h.hidden_dim;
            let mut out = vec![arr("input.weight".into(), hd, d), arr("input.bias".into(), hd, 1)];
            let blocks = match h.encoder {
                EncoderKind::Linear => 0,
                EncoderKind::Resnet => h.n_blocks,
            };
            for i in 0..blocks {
                for part in ["inner", "outer"] {
                    out.push(arr(format!("block{i}.{part}.weight"), hd, hd));
                    out.push(arr(format!("block{i}.{part}.bias"), hd, 1));
                }
            }
            for head in ["mu", "logvar"] {
                out.push(arr(format!("{head}.weight"), n, hd));
                out.push(arr(format!("{head}.bias"), n, 1));
            }
            out.push(arr("decoder".into(), d, n));
            out
        }
        (_, None) => Vec::new(),
    }
}

fn model_arrays(model: &TrainedModel) -> Vec<&[f64]> {
    match model {
        TrainedModel::SparseCoding(m) => vec![m.dict().matrix().as_slice()],
        TrainedModel::Svae(m) => m.param_slices(),
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let model = &ckpt.model;
    let kind = model.kind();
    let (d, n) = (model.input_dim(), model.latent_dim());
    let (sc, hyper) = match model {
        TrainedModel::SparseCoding(m) => (Some(m.config().clone()), None),
        TrainedModel::Svae(m) => (None, Some(m.hyper())),
    };
    let meta = CheckpointMeta {
        model_kind: kind,
        input_dim: d,
        latent_dim: n,
        patch_shape: [ckpt.patch_shape.0, ckpt.patch_shape.1],
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        arrays: expected_arrays(kind, d, n, hyper.as_ref()),
        sparse_coding: sc,
        svae: hyper,
    };
    let json = serde_json::to_vec(&meta)?;
    let arrays = model_arrays(model);
    let total: usize = arrays.iter().map(|a| a.len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + 4 * total);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for a in arrays {
        for v in a {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(format_err(0, format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let meta_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let meta_end = HEADER_LEN
        .checked_add(meta_len)
        .filter(|end| *end <= bytes.len())
        .ok_or_else(|| format_err(8, format!("metadata length {meta_len} exceeds file")))?;
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[HEADER_LEN..meta_end])
        .map_err(|e| format_err(HEADER_LEN, format!("metadata: {e}")))?;

    let (d, n) = (meta.input_dim, meta.latent_dim);
    if d == 0 || n == 0 || meta.patch_shape[0] * meta.patch_shape[1] != d {
        return Err(format_err(
            HEADER_LEN,
            format!("dims D={d} N={n} inconsistent with patch shape {:?}", meta.patch_shape),
        ));
    }
    let expected = expected_arrays(meta.model_kind, d, n, meta.svae.as_ref());
    if expected.is_empty() || meta.arrays != expected {
        return Err(format_err(
            HEADER_LEN,
            "declared arrays do not match the model dimensions",
        ));
    }
    let total: usize = expected.iter().map(|a| a.rows * a.cols).sum();
    let payload = bytes.len() - meta_end;
    if payload != 4 * total {
        return Err(format_err(
            meta_end + payload.min(4 * total),
            format!("expected {} payload bytes, found {payload}", 4 * total),
        ));
    }
    let values: Vec<f64> = bytes[meta_end..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(format_err(meta_end, "non-finite parameter"));
    }
    let mut arrays = Vec::with_capacity(expected.len());
    let mut off = 0;
    for a in &expected {
        let len = a.rows * a.cols;
        arrays.push(Matrix::from_vec(a.rows, a.cols, values[off..off + len].to_vec())?);
        off += len;
    }

    let model = match meta.model_kind {
        ModelKind::SparseCoding => {
            let cfg = meta
                .sparse_coding
                .clone()
                .ok_or_else(|| format_err(HEADER_LEN, "sparse coding checkpoint without config"))?;
            let dict = Dictionary::from_matrix(arrays.pop().expect("dictionary array"))?;
            TrainedModel::SparseCoding(SparseCodingModel::new(dict, cfg)?)
        }
        kind => {
            let hyper = meta.svae.clone().expect("checked by expected_arrays");
            if hyper.normalize_decoder != (kind == ModelKind::SvaeNorm) {
                return Err(format_err(
                    HEADER_LEN,
                    "model_kind disagrees with normalize_decoder",
                ));
            }
            TrainedModel::Svae(svae_from_arrays(arrays, &hyper)?)
        }
    };
    Ok(Checkpoint {
        model,
        patch_shape: (meta.patch_shape[0], meta.patch_shape[1]),
        seed: meta.seed,
        epoch: meta.epoch,
    })
}

fn svae_from_arrays(arrays: Vec<Matrix>, hyper: &SvaeHyper) -> Result<SvaeModel> {
    let mut it = arrays.into_iter();
    let mut dense = || -> Dense {
        let weight = it.next().expect("weight array");
        let bias = Vector::from_vec(it.next().expect("bias array").into_vec());
        Dense { weight, bias }
    };
    let input = dense();
    let n_blocks = match hyper.encoder {
        EncoderKind::Linear => 0,
        EncoderKind::Resnet => hyper.n_blocks,
    };
    let blocks = (0..n_blocks)
        .map(|_| ResBlock {
            inner: dense(),
            outer: dense(),
        })
        .collect();
    let mu_head = dense();
    let logvar_head = dense();
    let decoder = it.next().expect("decoder array");
    let model = SvaeModel {
        encoder: Encoder {
            kind: hyper.encoder,
            input,
            blocks,
            mu_head,
            logvar_head,
        },
        dict: Dictionary::from_matrix(decoder)?,
        prior_scale: hyper.prior_scale,
        likelihood_scale: hyper.likelihood_scale,
        beta: hyper.beta,
        normalize_decoder: hyper.normalize_decoder,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
