//! Forward models, subsampling actions and sparse measurements.
//!
//! Data and measurements live on an `H × W` grid of sites. A site carries
//! one real component, or two (interleaved real/imaginary) for complex data
//! and for Fourier measurements. Action groups are lists of site indices;
//! measurement vectors are indexed by real component.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, param, AdsError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum ActionKind {
    Pixel,
    RowLine,
    ColumnLine,
    Box { width: usize, height: usize },
    /// One column of the 2-D Fourier grid.
    FourierLine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    kind: ActionKind,
    height: usize,
    width: usize,
    groups: Vec<Vec<usize>>,
}

/// Enumerate disjoint action groups covering an `height × width` grid.
pub fn build_action_space(kind: ActionKind, height: usize, width: usize) -> Result<ActionSpace> {
    if height == 0 || width == 0 {
        return Err(param("action space needs a non-empty grid"));
    }
    let site = |r: usize, c: usize| r * width + c;
    let groups: Vec<Vec<usize>> = match kind {
        ActionKind::Pixel => (0..height * width).map(|i| vec![i]).collect(),
        ActionKind::RowLine => (0..height)
            .map(|r| (0..width).map(|c| site(r, c)).collect())
            .collect(),
        ActionKind::ColumnLine | ActionKind::FourierLine => (0..width)
            .map(|c| (0..height).map(|r| site(r, c)).collect())
            .collect(),
        ActionKind::Box { width: bw, height: bh } => {
            if bw == 0 || bh == 0 || !width.is_multiple_of(bw) || !height.is_multiple_of(bh) {
                return Err(param(format!(
                    "box {bw}x{bh} does not tile a {height}x{width} grid"
                )));
            }
            let mut groups = Vec::with_capacity((height / bh) * (width / bw));
            for br in 0..height / bh {
                for bc in 0..width / bw {
                    let mut g = Vec::with_capacity(bw * bh);
                    for r in br * bh..(br + 1) * bh {
                        for c in bc * bw..(bc + 1) * bw {
                            g.push(site(r, c));
                        }
                    }
                    groups.push(g);
                }
            }
            groups
        }
    };
    Ok(ActionSpace {
        kind,
        height,
        width,
        groups,
    })
}

impl ActionSpace {
    pub fn kind(&self) -> ActionKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn sites(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group(&self, action: usize) -> &[usize] {
        &self.groups[action]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Site → owning action lookup table.
    pub fn owner_table(&self) -> Vec<usize> {
        let mut owner = vec![usize::MAX; self.sites()];
        for (a, g) in self.groups.iter().enumerate() {
            for &s in g {
                owner[s] = a;
            }
        }
        owner
    }
}

/// Actions acquired so far, in acquisition order, without repeats.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSet {
    actions: Vec<usize>,
    space_len: usize,
}

impl ActionSet {
    pub fn new(space: &ActionSpace) -> Self {
        Self {
            actions: Vec::new(),
            space_len: space.len(),
        }
    }

    pub fn with_actions(space: &ActionSpace, actions: &[usize]) -> Result<Self> {
        let mut set = Self::new(space);
        for &a in actions {
            set.insert(a)?;
        }
        Ok(set)
    }

    pub fn full(space: &ActionSpace) -> Self {
        Self {
            actions: (0..space.len()).collect(),
            space_len: space.len(),
        }
    }

    pub fn insert(&mut self, action: usize) -> Result<()> {
        if action >= self.space_len {
            return Err(param(format!(
                "action {action} outside space of {}",
                self.space_len
            )));
        }
        if self.contains(action) {
            return Err(param(format!("action {action} already acquired")));
        }
        self.actions.push(action);
        Ok(())
    }

    pub fn contains(&self, action: usize) -> bool {
        self.actions.contains(&action)
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Actions not yet acquired, in index order.
    pub fn remaining(&self) -> Vec<usize> {
        let mut taken = vec![false; self.space_len];
        for &a in &self.actions {
            taken[a] = true;
        }
        (0..self.space_len).filter(|a| !taken[*a]).collect()
    }

    /// 0/1 inclusion vector over actions.
    pub fn inclusion(&self) -> Vec<u8> {
        let mut m = vec![0u8; self.space_len];
        for &a in &self.actions {
            m[a] = 1;
        }
        m
    }

    /// 0/1 mask over grid sites.
    pub fn site_mask(&self, space: &ActionSpace) -> Vec<u8> {
        let mut m = vec![0u8; space.sites()];
        for &a in &self.actions {
            for &s in space.group(a) {
                m[s] = 1;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardKind {
    #[default]
    Identity,
    UnitaryDft2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DataDomain {
    #[default]
    Real,
    /// Interleaved (re, im) pairs per site.
    Complex,
}

impl DataDomain {
    pub fn channels(self) -> usize {
        match self {
            DataDomain::Real => 1,
            DataDomain::Complex => 2,
        }
    }
}

#[derive(Clone)]
struct Dft2d {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Dft2d {
    fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.height, self.width);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for r in buf.chunks_mut(w) {
            row.process(r);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); h];
        for c in 0..w {
            for r in 0..h {
                column[r] = buf[r * w + c];
            }
            col.process(&mut column);
            for r in 0..h {
                buf[r * w + c] = column[r];
            }
        }
        let scale = 1.0 / ((h * w) as f64).sqrt();
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// Measurement operator `y = U(A) f(x) + n`.
#[derive(Clone)]
pub struct MeasurementModel {
    forward: ForwardKind,
    domain: DataDomain,
    noise_std: f64,
    space: ActionSpace,
    dft: Option<Dft2d>,
}

impl fmt::Debug for MeasurementModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MeasurementModel")
            .field("forward", &self.forward)
            .field("domain", &self.domain)
            .field("noise_std", &self.noise_std)
            .field("space", &self.space.kind)
            .field("shape", &self.space.shape())
            .finish()
    }
}

impl MeasurementModel {
    pub fn new(forward: ForwardKind, domain: DataDomain, noise_std: f64, space: ActionSpace) -> Result<Self> {
        if !(noise_std >= 0.0) || !noise_std.is_finite() {
            return Err(param(format!("noise std {noise_std} must be finite and >= 0")));
        }
        let dft = match forward {
            ForwardKind::Identity => None,
            ForwardKind::UnitaryDft2d => Some(Dft2d::new(space.height, space.width)),
        };
        Ok(Self {
            forward,
            domain,
            noise_std,
            space,
            dft,
        })
    }

    pub fn forward_kind(&self) -> ForwardKind {
        self.forward
    }

    pub fn domain(&self) -> DataDomain {
        self.domain
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn data_dim(&self) -> usize {
        self.space.sites() * self.domain.channels()
    }

    /// Real components per measurement site.
    pub fn components_per_site(&self) -> usize {
        match self.forward {
            ForwardKind::Identity => self.domain.channels(),
            ForwardKind::UnitaryDft2d => 2,
        }
    }

    pub fn measurement_dim(&self) -> usize {
        self.space.sites() * self.components_per_site()
    }

    /// Real measurement indices covered by one action group.
    pub fn action_components(&self, action: usize) -> Vec<usize> {
        let c = self.components_per_site();
        self.space
            .group(action)
            .iter()
            .flat_map(|s| (0..c).map(move |j| s * c + j))
            .collect()
    }

    fn to_complex(&self, x: &[f64]) -> Vec<Complex64> {
        match self.domain {
            DataDomain::Real => x.iter().map(|v| Complex64::new(*v, 0.0)).collect(),
            DataDomain::Complex => x.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect(),
        }
    }

    /// f(x).
    pub fn apply_forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.data_dim(), x.len())?;
        match &self.dft {
            None => Ok(x.to_vec()),
            Some(dft) => {
                let mut buf = self.to_complex(x);
                dft.run(&mut buf, false);
                Ok(buf.iter().flat_map(|c| [c.re, c.im]).collect())
            }
        }
    }

    /// fᵀ r, the transpose of f as a real-linear map.
    pub fn apply_adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        check_len(self.measurement_dim(), r.len())?;
        match &self.dft {
            None => Ok(r.to_vec()),
            Some(dft) => {
                let mut buf: Vec<Complex64> = r.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
                dft.run(&mut buf, true);
                Ok(match self.domain {
                    DataDomain::Real => buf.iter().map(|c| c.re).collect(),
                    DataDomain::Complex => buf.iter().flat_map(|c| [c.re, c.im]).collect(),
                })
            }
        }
    }

    /// Inverse of the forward map, for complex-domain or identity models.
    pub fn apply_inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        if self.forward == ForwardKind::UnitaryDft2d && self.domain == DataDomain::Real {
            return Err(param("real-domain DFT has no exact inverse on arbitrary spectra"));
        }
        self.apply_adjoint(y)
    }

    fn component_noise_std(&self) -> f64 {
        match self.forward {
            ForwardKind::Identity => self.noise_std,
            ForwardKind::UnitaryDft2d => self.noise_std / std::f64::consts::SQRT_2,
        }
    }

    /// Measure a single action group of `f(x_true)` with fresh noise.
    pub fn acquire_action<R: Rng + ?Sized>(
        &self,
        fx_true: &[f64],
        action: usize,
        rng: &mut R,
    ) -> SparseMeasurement {
        let sd = self.component_noise_std();
        let indices = self.action_components(action);
        let values = indices
            .iter()
            .map(|&i| {
                let n = if sd > 0.0 {
                    sd * rng::standard_normal_vec(rng, 1)[0]
                } else {
                    0.0
                };
                fx_true[i] + n
            })
            .collect();
        SparseMeasurement { indices, values }
    }
}

/// Acquired measurement values with their real component indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseMeasurement {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMeasurement {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Append measurements of a newly acquired action.
    pub fn extend(&mut self, other: SparseMeasurement) {
        self.indices.extend(other.indices);
        self.values.extend(other.values);
    }
}

/// Measure `f(x_true)` on the union of the acquired groups.
pub fn acquire<R: Rng + ?Sized>(
    model: &MeasurementModel,
    x_true: &[f64],
    actions: &ActionSet,
    rng: &mut R,
) -> Result<SparseMeasurement> {
    if actions.is_empty() {
        return Err(param("acquire needs at least one action"));
    }
    let fx = model.apply_forward(x_true)?;
    let mut y = SparseMeasurement::default();
    for &a in actions.actions() {
        y.extend(model.acquire_action(&fx, a, rng));
    }
    Ok(y)
}

/// Dense 0/1 mask over measurement components and the zero-filled measurement.
pub fn mask_and_zero_fill(measurement_dim: usize, y: &SparseMeasurement) -> Result<(Vec<u8>, Vec<f64>)> {
    let mut mask = vec![0u8; measurement_dim];
    let mut zf = vec![0.0; measurement_dim];
    for (&i, &v) in y.indices.iter().zip(&y.values) {
        if i >= measurement_dim {
            return Err(AdsError::Index {
                index: i,
                min: 0,
                max: measurement_dim - 1,
            });
        }
        mask[i] = 1;
        zf[i] = v;
    }
    Ok((mask, zf))
}

/// Binary PGM (P5) of a 0/1 site mask; acquired sites are white.
pub fn write_mask_pgm(path: &Path, mask: &[u8], height: usize, width: usize) -> Result<()> {
    check_len(height * width, mask.len())?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = mask.iter().map(|m| if *m != 0 { 255 } else { 0 }).collect();
    f.write_all(&bytes)?;
    Ok(())
}

pub fn write_mask_csv(path: &Path, mask: &[u8], height: usize, width: usize) -> Result<()> {
    check_len(height * width, mask.len())?;
    let mut out = String::new();
    for row in mask.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn identity_model(h: usize, w: usize, kind: ActionKind, noise: f64) -> MeasurementModel {
        let space = build_action_space(kind, h, w).unwrap();
        MeasurementModel::new(ForwardKind::Identity, DataDomain::Real, noise, space).unwrap()
    }

    fn assert_partition(space: &ActionSpace) {
        let mut seen = vec![0u32; space.sites()];
        for g in space.groups() {
            for &s in g {
                seen[s] += 1;
            }
        }
        assert!(seen.iter().all(|c| *c == 1));
    }

    #[test]
    fn action_space_sizes() {
        let p = build_action_space(ActionKind::Pixel, 32, 32).unwrap();
        assert_eq!(p.len(), 1024);
        assert!(p.groups().iter().all(|g| g.len() == 1));
        let c = build_action_space(ActionKind::ColumnLine, 32, 32).unwrap();
        assert_eq!(c.len(), 32);
        assert!(c.groups().iter().all(|g| g.len() == 32));
        let b = build_action_space(ActionKind::Box { width: 4, height: 4 }, 128, 128).unwrap();
        assert_eq!(b.len(), 1024);
        assert!(b.groups().iter().all(|g| g.len() == 16));
        for s in [&p, &c, &b] {
            assert_partition(s);
        }
        assert_partition(&build_action_space(ActionKind::RowLine, 6, 5).unwrap());
        assert_partition(&build_action_space(ActionKind::FourierLine, 6, 5).unwrap());
        assert!(build_action_space(ActionKind::Box { width: 3, height: 4 }, 8, 8).is_err());
    }

    #[test]
    fn identity_forward_and_acquire() {
        let m = identity_model(1, 4, ActionKind::Pixel, 0.0);
        let x = [7.0, 1.0, 2.0, 9.0];
        assert_eq!(m.apply_forward(&x).unwrap(), x.to_vec());
        let set = ActionSet::with_actions(m.space(), &[0, 3]).unwrap();
        let mut r = rng::stream(&[0]);
        let y = acquire(&m, &x, &set, &mut r).unwrap();
        assert_eq!(y.values, vec![7.0, 9.0]);
        let all = ActionSet::full(m.space());
        assert_eq!(acquire(&m, &x, &all, &mut r).unwrap().values, x.to_vec());
        assert!(acquire(&m, &x, &ActionSet::new(m.space()), &mut r).is_err());
        assert!(m.apply_forward(&[1.0]).is_err());
    }

    #[test]
    fn acquisition_noise_std() {
        let m = identity_model(1, 1, ActionKind::Pixel, 0.1);
        let set = ActionSet::full(m.space());
        let mut r = rng::stream(&[17]);
        let n = 100_000;
        let errs: Vec<f64> = (0..n)
            .map(|_| acquire(&m, &[0.5], &set, &mut r).unwrap().values[0] - 0.5)
            .collect();
        let mean = errs.iter().sum::<f64>() / n as f64;
        let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        // standard error of a sample std ≈ σ / √(2(n−1))
        let se = 0.1 / (2.0 * (n - 1) as f64).sqrt();
        assert!((sd - 0.1).abs() < 3.0 * se, "sd {sd}");
    }

    #[test]
    fn zero_fill_cases() {
        let (m, zf) = mask_and_zero_fill(4, &SparseMeasurement::default()).unwrap();
        assert_eq!(m, vec![0; 4]);
        assert_eq!(zf, vec![0.0; 4]);
        let y = SparseMeasurement {
            indices: vec![1, 2],
            values: vec![5.0, 6.0],
        };
        let (m, zf) = mask_and_zero_fill(4, &y).unwrap();
        assert_eq!(m, vec![0, 1, 1, 0]);
        assert_eq!(zf, vec![0.0, 5.0, 6.0, 0.0]);
        let full = SparseMeasurement {
            indices: vec![0, 1, 2, 3],
            values: vec![1.0; 4],
        };
        assert_eq!(mask_and_zero_fill(4, &full).unwrap().0, vec![1; 4]);
        assert!(mask_and_zero_fill(2, &y).is_err());
    }

    #[test]
    fn dft_of_impulse_is_flat() {
        let space = build_action_space(ActionKind::FourierLine, 4, 4).unwrap();
        let m = MeasurementModel::new(ForwardKind::UnitaryDft2d, DataDomain::Real, 0.0, space).unwrap();
        let mut x = vec![0.0; 16];
        x[0] = 1.0;
        let y = m.apply_forward(&x).unwrap();
        for p in y.chunks(2) {
            assert!((p[0] - 0.25).abs() < 1e-15 && p[1].abs() < 1e-15);
        }
        assert_eq!(m.action_components(1), vec![2, 3, 10, 11, 18, 19, 26, 27]);
    }

    #[test]
    fn real_domain_adjoint_is_transpose() {
        let space = build_action_space(ActionKind::FourierLine, 3, 5).unwrap();
        let m = MeasurementModel::new(ForwardKind::UnitaryDft2d, DataDomain::Real, 0.0, space).unwrap();
        let mut r = rng::stream(&[3]);
        let x: Vec<f64> = (0..15).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..30).map(|_| r.random_range(-1.0..1.0)).collect();
        let fx = m.apply_forward(&x).unwrap();
        let fty = m.apply_adjoint(&y).unwrap();
        let lhs: f64 = fx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&fty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn mask_exports() {
        let dir = tempfile::tempdir().unwrap();
        let mask = vec![1, 0, 0, 1, 1, 0];
        write_mask_pgm(&dir.path().join("m.pgm"), &mask, 2, 3).unwrap();
        let bytes = std::fs::read(dir.path().join("m.pgm")).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[255, 0, 0, 255, 255, 0]);
        write_mask_csv(&dir.path().join("m.csv"), &mask, 2, 3).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("m.csv")).unwrap(), "1,0,0\n1,1,0\n");
    }

    #[test]
    fn action_set_without_replacement() {
        let space = build_action_space(ActionKind::Pixel, 2, 2).unwrap();
        let mut s = ActionSet::new(&space);
        s.insert(2).unwrap();
        assert!(s.insert(2).is_err());
        assert!(s.insert(4).is_err());
        assert_eq!(s.remaining(), vec![0, 1, 3]);
        assert_eq!(s.inclusion(), vec![0, 0, 1, 0]);
    }

    proptest! {
        #[test]
        fn dft_is_unitary_and_invertible(h in 1usize..9, w in 1usize..9, seed in 0u64..1000) {
            let space = build_action_space(ActionKind::Pixel, h, w).unwrap();
            let m = MeasurementModel::new(ForwardKind::UnitaryDft2d, DataDomain::Complex, 0.0, space).unwrap();
            let mut r = rng::stream(&[seed]);
            let x: Vec<f64> = (0..2 * h * w).map(|_| r.random_range(-1.0..1.0)).collect();
            let y = m.apply_forward(&x).unwrap();
            let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((nx - ny).abs() < 1e-10);
            let back = m.apply_inverse(&y).unwrap();
            for (a, b) in back.iter().zip(&x) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn zero_fill_of_noiseless_acquire_is_masked_signal(seed in 0u64..1000, picks in proptest::collection::vec(0usize..16, 1..10)) {
            let m = identity_model(4, 4, ActionKind::Pixel, 0.0);
            let mut set = ActionSet::new(m.space());
            for p in picks {
                let _ = set.insert(p);
            }
            let mut r = rng::stream(&[seed]);
            let x: Vec<f64> = (0..16).map(|_| r.random_range(-1.0..1.0)).collect();
            let y = acquire(&m, &x, &set, &mut r).unwrap();
            let (mask, zf) = mask_and_zero_fill(16, &y).unwrap();
            prop_assert_eq!(&mask, &set.site_mask(m.space()));
            for i in 0..16 {
                prop_assert_eq!(zf[i], mask[i] as f64 * x[i]);
            }
        }
    }
}
