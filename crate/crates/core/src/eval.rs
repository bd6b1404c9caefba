//! Reconstruction metrics and mask statistics.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, param, Result};

pub const SSIM_WINDOW: usize = 4;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Mean absolute error.
pub fn mae(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(param("empty input"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(param("empty input"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB; `+∞` for identical inputs.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(param("peak must be positive"));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Per-site magnitude of an interleaved multi-channel image.
pub fn magnitude(x: &[f64], channels: usize) -> Vec<f64> {
    if channels <= 1 {
        return x.to_vec();
    }
    x.chunks(channels)
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Mean SSIM over every `4 × 4` window at unit stride, uniform weights and
/// unbiased local (co)variances.
pub fn ssim(a: &[f64], b: &[f64], height: usize, width: usize, dynamic_range: f64) -> Result<f64> {
    check_len(height * width, a.len())?;
    check_len(height * width, b.len())?;
    let w = SSIM_WINDOW;
    if height < w || width < w {
        return Err(param(format!("ssim needs at least {w}x{w}, got {height}x{width}")));
    }
    if !(dynamic_range > 0.0) {
        return Err(param("dynamic range must be positive"));
    }
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let n = (w * w) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=height - w {
        for c0 in 0..=width - w {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in r0..r0 + w {
                for c in c0..c0 + w {
                    let (x, y) = (a[r * width + c], b[r * width + c]);
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let unbias = n / (n - 1.0);
            let va = (saa / n - ma * ma) * unbias;
            let vb = (sbb / n - mb * mb) * unbias;
            let cov = (sab / n - ma * mb) * unbias;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean and standard error `std / √N` (sample standard deviation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 || !mean.is_finite() {
            return Self { mean, se: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self {
            mean,
            se: (var / n as f64).sqrt(),
        }
    }
}

/// Per-sample metrics with their aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sample_ids: Vec<usize>,
    pub mae: Vec<f64>,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

/// Shape and range information needed to score a reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageGeometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub peak: f64,
}

impl MetricReport {
    pub fn new() -> Self {
        Self {
            sample_ids: Vec::new(),
            mae: Vec::new(),
            psnr: Vec::new(),
            ssim: Vec::new(),
        }
    }

    pub fn push(&mut self, id: usize, estimate: &[f64], target: &[f64], geom: ImageGeometry) -> Result<()> {
        let ma = magnitude(estimate, geom.channels);
        let mb = magnitude(target, geom.channels);
        self.sample_ids.push(id);
        self.mae.push(mae(estimate, target)?);
        self.psnr.push(psnr(estimate, target, geom.peak)?);
        self.ssim.push(ssim(&ma, &mb, geom.height, geom.width, geom.peak)?);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn mae_stat(&self) -> Stat {
        Stat::of(&self.mae)
    }

    pub fn psnr_stat(&self) -> Stat {
        Stat::of(&self.psnr)
    }

    pub fn ssim_stat(&self) -> Stat {
        Stat::of(&self.ssim)
    }

    /// `sample_id,mae,psnr,ssim` with shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample_id,mae,psnr,ssim\n");
        for i in 0..self.len() {
            let _ = writeln!(s, "{},{:?},{:?},{:?}", self.sample_ids[i], self.mae[i], self.psnr[i], self.ssim[i]);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

impl Default for MetricReport {
    fn default() -> Self {
        Self::new()
    }
}

fn binary_entropy_bits(p: f64) -> f64 {
    let h = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    h(p) + h(1.0 - p)
}

/// Inclusion frequency of each action and the mean Bernoulli entropy in bits.
pub fn mask_distribution_entropy(masks: &[Vec<u8>]) -> Result<(Vec<f64>, f64)> {
    let first = masks.first().ok_or_else(|| param("need at least one mask"))?;
    let n = first.len();
    if n == 0 {
        return Err(param("masks are empty"));
    }
    let mut counts = vec![0usize; n];
    for m in masks {
        check_len(n, m.len())?;
        for (c, v) in counts.iter_mut().zip(m) {
            *c += usize::from(*v != 0);
        }
    }
    let probs: Vec<f64> = counts.iter().map(|c| *c as f64 / masks.len() as f64).collect();
    let mean = probs.iter().map(|p| binary_entropy_bits(*p)).sum::<f64>() / n as f64;
    Ok((probs, mean))
}

/// Fraction of masks whose nearest other mask (Hamming distance, lowest
/// index on ties) carries the same label.
pub fn nearest_neighbor_agreement(masks: &[Vec<u8>], labels: &[usize]) -> Result<f64> {
    check_len(masks.len(), labels.len())?;
    if masks.len() < 2 {
        return Err(param("need at least two masks"));
    }
    let n = masks[0].len();
    let mut hits = 0usize;
    for (i, a) in masks.iter().enumerate() {
        check_len(n, a.len())?;
        let mut best = (usize::MAX, usize::MAX);
        for (j, b) in masks.iter().enumerate() {
            if i == j {
                continue;
            }
            check_len(n, b.len())?;
            let d = a.iter().zip(b).filter(|(x, y)| (**x != 0) != (**y != 0)).count();
            if d < best.0 {
                best = (d, j);
            }
        }
        hits += usize::from(labels[best.1] == labels[i]);
    }
    Ok(hits as f64 / masks.len() as f64)
}
