//! Binary (P5) PGM output for filter grids.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse_coding::Dictionary;

/// Separator pixels between tiles.
const SEPARATOR: u8 = 255;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<Self> {
        const WHAT: &str = "PGM file";
        let fail = |offset: usize, message: String| Error::Format {
            what: WHAT,
            offset,
            message,
        };
        // Header: magic, width, height, maxval, each separated by whitespace;
        // comments run from '#' to end of line.
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(fail(pos, "truncated header".into()));
            }
            fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
        }
        if fields[0].1 != "P5" {
            return Err(fail(0, format!("magic {:?}, expected \"P5\"", fields[0].1)));
        }
        let num = |(offset, s): &(usize, String)| -> Result<usize> {
            s.parse().map_err(|_| fail(*offset, format!("expected a number, found {s:?}")))
        };
        let width = num(&fields[1])?;
        let height = num(&fields[2])?;
        let maxval = num(&fields[3])?;
        if maxval != 255 {
            return Err(fail(fields[3].0, format!("maxval {maxval}, only 255 is supported")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        let start = pos + 1;
        let expected = width * height;
        if bytes.len() < start || bytes.len() - start != expected {
            return Err(fail(
                start.min(bytes.len()),
                format!("expected {expected} raster bytes, found {}", bytes.len().saturating_sub(start)),
            ));
        }
        Ok(GrayImage {
            width,
            height,
            pixels: bytes[start..].to_vec(),
        })
    }
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    fs::write(path, image.to_pgm_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    GrayImage::from_pgm_bytes(&bytes)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Lays tiles out row-major in a grid `grid_cols` wide with 1-pixel
/// separators. Each tile is min-max normalized on its own; a constant tile
/// comes out mid-gray.
pub fn render_tile_grid(tiles: &[&[f64]], tile_shape: (usize, usize), grid_cols: usize) -> Result<GrayImage> {
    let (th, tw) = tile_shape;
    if tiles.is_empty() || th == 0 || tw == 0 || grid_cols == 0 {
        return Err(Error::invalid("tile grid needs at least one nonempty tile and one column"));
    }
    if let Some(bad) = tiles.iter().find(|t| t.len() != th * tw) {
        return Err(Error::dims("render_tile_grid", format!("{th}x{tw}"), bad.len()));
    }
    let cols = grid_cols.min(tiles.len());
    let rows = tiles.len().div_ceil(cols);
    let mut img = GrayImage::new(cols * (tw + 1) - 1, rows * (th + 1) - 1, SEPARATOR);
    for (k, tile) in tiles.iter().enumerate() {
        let (gr, gc) = (k / cols, k % cols);
        let lo = tile.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = tile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        for r in 0..th {
            for c in 0..tw {
                let v = tile[r * tw + c];
                let n = if range > 0.0 && range.is_finite() {
                    (v - lo) / range
                } else {
                    0.5
                };
                img.set(gc * (tw + 1) + c, gr * (th + 1) + r, to_byte(n));
            }
        }
    }
    Ok(img)
}

pub fn export_tile_grid(
    path: &Path,
    tiles: &[&[f64]],
    tile_shape: (usize, usize),
    grid_cols: usize,
) -> Result<GrayImage> {
    let img = render_tile_grid(tiles, tile_shape, grid_cols)?;
    write_pgm(path, &img)?;
    Ok(img)
}

/// Writes dictionary columns (all, or the listed ones in the given order) as a tile grid.
pub fn export_filter_grid(
    path: &Path,
    dict: &Dictionary,
    patch_shape: (usize, usize),
    indices: Option<&[usize]>,
    grid_cols: usize,
) -> Result<GrayImage> {
    if patch_shape.0 * patch_shape.1 != dict.input_dim() {
        return Err(Error::dims(
            "export_filter_grid",
            format!("{}x{}", patch_shape.0, patch_shape.1),
            dict.input_dim(),
        ));
    }
    let all: Vec<usize> = (0..dict.latent_dim()).collect();
    let indices = indices.unwrap_or(&all);
    if let Some(bad) = indices.iter().find(|&&j| j >= dict.latent_dim()) {
        return Err(Error::invalid(format!(
            "filter index {bad} out of range for {} filters",
            dict.latent_dim()
        )));
    }
    let columns: Vec<Vec<f64>> = indices
        .iter()
        .map(|&j| dict.matrix().col(j).into_vec())
        .collect();
    let tiles: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
    export_tile_grid(path, &tiles, patch_shape, grid_cols)
}
