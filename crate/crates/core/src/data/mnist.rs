//! Big-endian IDX files as distributed with MNIST.

use std::fs;
use std::path::Path;

use crate::data::PatchDataset;
use crate::error::{Error, Result};
use crate::linalg::Vector;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
const MNIST_SIDE: usize = 28;

fn read_u32(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format {
            what,
            offset,
            message: format!("truncated header: need 4 bytes, file has {}", bytes.len()),
        })
}

fn check_payload(bytes: &[u8], header_len: usize, expected: usize, what: &'static str) -> Result<()> {
    let payload = bytes.len() - header_len;
    if payload != expected {
        return Err(Error::Format {
            what,
            offset: header_len + payload.min(expected),
            message: format!("header declares {expected} payload bytes, file has {payload}"),
        });
    }
    Ok(())
}

/// Parses an IDX image file into `(count, rows, cols, pixels in [0, 1])`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    const WHAT: &str = "IDX image file";
    let magic = read_u32(bytes, 0, WHAT)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format {
            what: WHAT,
            offset: 0,
            message: format!("magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"),
        });
    }
    let count = read_u32(bytes, 4, WHAT)? as usize;
    let rows = read_u32(bytes, 8, WHAT)? as usize;
    let cols = read_u32(bytes, 12, WHAT)? as usize;
    if rows != MNIST_SIDE || cols != MNIST_SIDE {
        return Err(Error::Format {
            what: WHAT,
            offset: 8,
            message: format!("image dims {rows}x{cols}, expected {MNIST_SIDE}x{MNIST_SIDE}"),
        });
    }
    check_payload(bytes, 16, count * rows * cols, WHAT)?;
    let pixels = bytes[16..].iter().map(|b| *b as f64 / 255.0).collect();
    Ok((count, rows, cols, pixels))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    const WHAT: &str = "IDX label file";
    let magic = read_u32(bytes, 0, WHAT)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format {
            what: WHAT,
            offset: 0,
            message: format!("magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"),
        });
    }
    let count = read_u32(bytes, 4, WHAT)? as usize;
    check_payload(bytes, 8, count, WHAT)?;
    Ok(bytes[8..].to_vec())
}

/// Loads MNIST digits as flattened 784-dimensional samples with labels attached.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<PatchDataset> {
    let image_bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let label_bytes = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let (count, rows, cols, pixels) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if labels.len() != count {
        return Err(Error::Format {
            what: "IDX label file",
            offset: 4,
            message: format!("{} labels for {count} images", labels.len()),
        });
    }
    let samples = pixels
        .chunks_exact(rows * cols)
        .map(|c| Vector::from_vec(c.to_vec()))
        .collect();
    let mut ds = PatchDataset::new((rows, cols), samples)?;
    ds.labels = Some(labels);
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-image fixture laid out per the IDX format: magic, dims, then bytes.
    fn image_fixture() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
        b.extend_from_slice(&2u32.to_be_bytes());
        b.extend_from_slice(&28u32.to_be_bytes());
        b.extend_from_slice(&28u32.to_be_bytes());
        for i in 0..2 * 784 {
            b.push((i * 7 % 256) as u8);
        }
        b
    }

    fn label_fixture() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
        b.extend_from_slice(&2u32.to_be_bytes());
        b.extend_from_slice(&[3, 9]);
        b
    }

    #[test]
    fn fixture_pixels_are_bytes_over_255() {
        let bytes = image_fixture();
        let (count, rows, cols, pixels) = parse_idx_images(&bytes).unwrap();
        assert_eq!((count, rows, cols), (2, 28, 28));
        for (p, b) in pixels.iter().zip(&bytes[16..]) {
            assert_eq!(*p, *b as f64 / 255.0);
        }
        assert_eq!(parse_idx_labels(&label_fixture()).unwrap(), vec![3, 9]);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut bytes = image_fixture();
        bytes[3] = 0x01;
        let err = parse_idx_images(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
        // A label file is not an image file.
        assert!(parse_idx_images(&label_fixture()).is_err());
        assert!(parse_idx_labels(&image_fixture()).is_err());
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let mut bytes = image_fixture();
        bytes[7] = 3;
        assert!(parse_idx_images(&bytes).is_err());
        let mut bytes = image_fixture();
        bytes.pop();
        assert!(parse_idx_images(&bytes).is_err());
        let mut bytes = label_fixture();
        bytes.push(1);
        assert!(parse_idx_labels(&bytes).is_err());
    }

    #[test]
    fn every_header_byte_mutation_is_rejected() {
        let images = image_fixture();
        for offset in 0..16 {
            for delta in [1u8, 0x80] {
                let mut m = images.clone();
                m[offset] = m[offset].wrapping_add(delta);
                assert!(parse_idx_images(&m).is_err(), "image header byte {offset} +{delta}");
            }
        }
        let labels = label_fixture();
        for offset in 0..8 {
            for delta in [1u8, 0x80] {
                let mut m = labels.clone();
                m[offset] = m[offset].wrapping_add(delta);
                assert!(parse_idx_labels(&m).is_err(), "label header byte {offset} +{delta}");
            }
        }
    }

    #[test]
    fn truncated_header_names_offset() {
        let err = parse_idx_images(&image_fixture()[..10]).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 8, .. }), "{err}");
    }

    #[test]
    fn load_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("images.idx");
        let lp = dir.path().join("labels.idx");
        fs::write(&ip, image_fixture()).unwrap();
        fs::write(&lp, label_fixture()).unwrap();
        let ds = load_mnist_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 784);
        assert_eq!(ds.labels, Some(vec![3, 9]));
    }
}
