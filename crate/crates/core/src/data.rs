//! Datasets, file formats and synthetic generators.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, AdsError, Result};
use crate::prior::IsotropicGmm;
use crate::rng;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;
const TENSOR_MAGIC: &[u8; 8] = b"ADSTNSR\0";
const TENSOR_VERSION: u32 = 1;

/// Row-major samples with image shape metadata.
///
/// Each row holds `height * width * channels` values laid out
/// site-major with channels innermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub data: Array2<f64>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub labels: Option<Vec<usize>>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(data: Array2<f64>, height: usize, width: usize, channels: usize, provenance: impl Into<String>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(param("dataset needs at least one sample"));
        }
        if data.ncols() != height * width * channels {
            return Err(AdsError::Shape {
                expected: height * width * channels,
                got: data.ncols(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AdsError::Numerical("dataset contains non-finite values".into()));
        }
        Ok(Self {
            data,
            height,
            width,
            channels,
            labels: None,
            provenance: provenance.into(),
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(AdsError::Shape {
                expected: self.len(),
                got: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).to_vec()
    }

    /// Rows `range` as a new dataset, labels included.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(AdsError::Index {
                index: end,
                min: start + 1,
                max: self.len(),
            });
        }
        let data = self.data.slice(ndarray::s![start..end, ..]).to_owned();
        let mut out = Self::new(data, self.height, self.width, self.channels, self.provenance.clone())?;
        out.labels = self.labels.as_ref().map(|l| l[start..end].to_vec());
        Ok(out)
    }

    /// Affine map of all values onto `[0, 1]`.
    pub fn unit_scaled(&self) -> Self {
        let lo = self.data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let mut out = self.clone();
        if span > 0.0 {
            out.data.mapv_inplace(|v| (v - lo) / span);
        } else {
            out.data.fill(0.0);
        }
        out
    }
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(AdsError::Format {
            offset,
            message: "truncated header".into(),
        })
}

fn parse_idx(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, &[u8])> {
    let got = read_be_u32(bytes, 0)?;
    if got != magic {
        return Err(AdsError::Format {
            offset: 0,
            message: format!("bad magic {got:#010x}, expected {magic:#010x}"),
        });
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|i| read_be_u32(bytes, 4 + 4 * i).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndims;
    let count: usize = dims.iter().product();
    if bytes.len() < header + count {
        return Err(AdsError::Format {
            offset: bytes.len(),
            message: format!("truncated payload: need {} bytes", header + count),
        });
    }
    Ok((dims, &bytes[header..header + count]))
}

/// Parse an IDX image file (`u8`, three dimensions) scaled to `[0, 1]`.
pub fn load_idx(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let (dims, payload) = parse_idx(&bytes, IDX_IMAGES)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    if n == 0 {
        return Err(AdsError::Format {
            offset: 4,
            message: "zero images".into(),
        });
    }
    let data = Array2::from_shape_vec((n, h * w), payload.iter().map(|&b| f64::from(b) / 255.0).collect())
        .map_err(|e| param(e.to_string()))?;
    Dataset::new(data, h, w, 1, format!("idx:{}", path.display()))
}

/// Parse an IDX label file.
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path)?;
    let (_, payload) = parse_idx(&bytes, IDX_LABELS)?;
    Ok(payload.iter().map(|&b| b as usize).collect())
}

/// Zero-pad each image to `target_h × target_w`, centred.
pub fn pad(ds: &Dataset, target_h: usize, target_w: usize) -> Result<Dataset> {
    if target_h < ds.height || target_w < ds.width {
        return Err(param("padding target smaller than the image"));
    }
    let (top, left) = ((target_h - ds.height) / 2, (target_w - ds.width) / 2);
    let c = ds.channels;
    let mut out = Array2::zeros((ds.len(), target_h * target_w * c));
    for (src, mut dst) in ds.data.outer_iter().zip(out.outer_iter_mut()) {
        for r in 0..ds.height {
            for col in 0..ds.width {
                for ch in 0..c {
                    dst[((r + top) * target_w + col + left) * c + ch] = src[(r * ds.width + col) * c + ch];
                }
            }
        }
    }
    let mut p = Dataset::new(out, target_h, target_w, c, ds.provenance.clone())?;
    p.labels = ds.labels.clone();
    Ok(p)
}

/// Mean-pool each image over `factor × factor` blocks.
pub fn downsample(ds: &Dataset, factor: usize) -> Result<Dataset> {
    if factor == 0 || !ds.height.is_multiple_of(factor) || !ds.width.is_multiple_of(factor) {
        return Err(param(format!(
            "factor {factor} does not divide {}x{}",
            ds.height, ds.width
        )));
    }
    let (h, w, c) = (ds.height / factor, ds.width / factor, ds.channels);
    let norm = (factor * factor) as f64;
    let mut out = Array2::zeros((ds.len(), h * w * c));
    for (src, mut dst) in ds.data.outer_iter().zip(out.outer_iter_mut()) {
        for r in 0..ds.height {
            for col in 0..ds.width {
                for ch in 0..c {
                    dst[((r / factor) * w + col / factor) * c + ch] += src[(r * ds.width + col) * c + ch] / norm;
                }
            }
        }
    }
    let mut p = Dataset::new(out, h, w, c, ds.provenance.clone())?;
    p.labels = ds.labels.clone();
    Ok(p)
}

/// `n` i.i.d. draws from `gmm`, labelled with their components.
pub fn synth_gmm_dataset(gmm: &IsotropicGmm, n: usize, height: usize, width: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(param("dataset needs at least one sample"));
    }
    let mut r = rng::stream(&[seed, rng::TAG_DATA]);
    let mut data = Array2::zeros((n, gmm.dim()));
    let mut labels = Vec::with_capacity(n);
    for mut row in data.outer_iter_mut() {
        let (k, x) = gmm.sample(&mut r);
        row.assign(&ndarray::ArrayView1::from(&x));
        labels.push(k);
    }
    Dataset::new(data, height, width, 1, format!("gmm:{}:{seed}", gmm.components()))?.with_labels(labels)
}

/// Parameters of the planted-structure generator.
///
/// The image is tiled by `block × block` squares. Family `f` lights the
/// `f`-th square; the remaining squares hold one small marker per class.
/// A class is identified by its family square plus its own marker, so the
/// informative pixels depend on the family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub size: usize,
    pub families: usize,
    pub classes_per_family: usize,
    pub block: usize,
    pub marker: usize,
    pub background: f64,
    pub level: f64,
    pub noise: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            size: 16,
            families: 2,
            classes_per_family: 4,
            block: 8,
            marker: 2,
            background: 0.1,
            level: 0.9,
            noise: 0.01,
        }
    }
}

impl PlantedConfig {
    pub fn classes(&self) -> usize {
        self.families * self.classes_per_family
    }

    fn blocks_per_row(&self) -> usize {
        self.size / self.block
    }

    /// Top-left corners of the marker slots, in class order.
    fn marker_slots(&self) -> Vec<(usize, usize)> {
        let per_row = self.blocks_per_row();
        let pitch = 2 * self.marker;
        let per_block = self.block / pitch;
        let mut slots = Vec::new();
        for b in self.families..per_row * per_row {
            let (br, bc) = ((b / per_row) * self.block, (b % per_row) * self.block);
            for i in 0..per_block * per_block {
                slots.push((br + (i / per_block) * pitch, bc + (i % per_block) * pitch));
            }
        }
        slots
    }

    pub fn validate(&self) -> Result<()> {
        if self.families == 0 || self.classes_per_family == 0 || self.block == 0 || self.marker == 0 {
            return Err(param("planted structure counts must be positive"));
        }
        if !self.size.is_multiple_of(self.block) || self.blocks_per_row().pow(2) <= self.families {
            return Err(param("blocks must tile the image with a free block for markers"));
        }
        if self.marker_slots().len() < self.classes() {
            return Err(param("not enough room for one marker per class"));
        }
        if !(self.noise >= 0.0) || !self.background.is_finite() || !self.level.is_finite() {
            return Err(param("levels must be finite and noise non-negative"));
        }
        Ok(())
    }

    /// Noise-free template of class `k`.
    pub fn template(&self, k: usize) -> Vec<f64> {
        let n = self.size;
        let per_row = self.blocks_per_row();
        let fam = k / self.classes_per_family;
        let (br, bc) = ((fam / per_row) * self.block, (fam % per_row) * self.block);
        let mut img = vec![self.background; n * n];
        for r in br..br + self.block {
            for c in bc..bc + self.block {
                img[r * n + c] = self.level;
            }
        }
        let (mr, mc) = self.marker_slots()[k];
        for r in mr..mr + self.marker {
            for c in mc..mc + self.marker {
                img[r * n + c] = self.level;
            }
        }
        img
    }

    /// The ground-truth mixture: class templates with isotropic noise.
    pub fn mixture(&self) -> Result<IsotropicGmm> {
        self.validate()?;
        let k = self.classes();
        let d = self.size * self.size;
        let mut means = Array2::zeros((k, d));
        for (i, mut row) in means.outer_iter_mut().enumerate() {
            row.assign(&ndarray::ArrayView1::from(&self.template(i)));
        }
        IsotropicGmm::new(vec![1.0 / k as f64; k], means, vec![self.noise.powi(2).max(1e-12); k])
    }
}

/// Labelled samples of the planted-structure mixture.
pub fn planted_structure_dataset(cfg: &PlantedConfig, n: usize, seed: u64) -> Result<Dataset> {
    let gmm = cfg.mixture()?;
    let mut ds = synth_gmm_dataset(&gmm, n, cfg.size, cfg.size, seed)?;
    ds.provenance = format!("planted:{}x{}:{seed}", cfg.families, cfg.classes_per_family);
    Ok(ds)
}

/// Binary tensor container: magic, version, rank, dims, little-endian f64.
pub fn write_tensor(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    let count: usize = dims.iter().product();
    if count != data.len() {
        return Err(AdsError::Shape {
            expected: count,
            got: data.len(),
        });
    }
    let mut buf = Vec::with_capacity(16 + 8 * dims.len() + 8 * data.len());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let err = |offset: usize, message: &str| AdsError::Format {
        offset,
        message: message.into(),
    };
    if bytes.len() < 16 || &bytes[..8] != TENSOR_MAGIC {
        return Err(err(0, "not a tensor container"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != TENSOR_VERSION {
        return Err(err(8, "unsupported version"));
    }
    let rank = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = 16 + 8 * rank;
    if bytes.len() < body {
        return Err(err(bytes.len(), "truncated dims"));
    }
    let dims: Vec<usize> = bytes[16..body]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() != body + 8 * count {
        return Err(err(bytes.len(), "payload length does not match dims"));
    }
    let data = bytes[body..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}

/// Dataset as a binary tensor of shape `[N, H, W, C]`.
pub fn save_dataset_bin(ds: &Dataset, path: &Path) -> Result<()> {
    let flat: Vec<f64> = ds.data.iter().copied().collect();
    write_tensor(path, &[ds.len(), ds.height, ds.width, ds.channels], &flat)
}

pub fn load_dataset_bin(path: &Path) -> Result<Dataset> {
    let (dims, data) = read_tensor(path)?;
    if dims.len() != 4 {
        return Err(AdsError::Format {
            offset: 12,
            message: format!("expected rank 4, got {}", dims.len()),
        });
    }
    let arr = Array2::from_shape_vec((dims[0], dims[1] * dims[2] * dims[3]), data).map_err(|e| param(e.to_string()))?;
    Dataset::new(arr, dims[1], dims[2], dims[3], format!("bin:{}", path.display()))
}

/// Dataset as CSV: a `H,W,C` header line then one sample per row.
pub fn save_dataset_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = format!("{},{},{}\n", ds.height, ds.width, ds.channels);
    for row in ds.data.outer_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_dataset_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(AdsError::Format {
        offset: 0,
        message: "empty file".into(),
    })?;
    let shape: Vec<usize> = header
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| AdsError::Format {
            offset: 0,
            message: format!("bad header: {e}"),
        })?;
    if shape.len() != 3 {
        return Err(AdsError::Format {
            offset: 0,
            message: "header must be H,W,C".into(),
        });
    }
    let d = shape[0] * shape[1] * shape[2];
    let mut values = Vec::new();
    let mut rows = 0;
    let mut offset = header.len() + 1;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let row: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| AdsError::Format {
                offset,
                message: e.to_string(),
            })?;
        if row.len() != d {
            return Err(AdsError::Format {
                offset,
                message: format!("row has {} values, expected {d}", row.len()),
            });
        }
        values.extend(row);
        rows += 1;
        offset += line.len() + 1;
    }
    let arr = Array2::from_shape_vec((rows, d), values).map_err(|e| param(e.to_string()))?;
    Dataset::new(arr, shape[0], shape[1], shape[2], format!("csv:{}", path.display()))
}

/// Shuffle row indices with the given stream; used for train/test splits.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(&[seed, rng::TAG_DATA, 1]);
    for i in (1..n).rev() {
        idx.swap(i, r.random_range(0..=i));
    }
    idx
}
