//! Cross-view quadratic discriminant analysis (XQDA).
//!
//! Scatter matrices of cross-view pair differences are computed from
//! per-class sums without enumerating the `n·m` pairs. The subspace maximizes
//! the ratio of dissimilar-pair to similar-pair variance; the metric is the
//! PSD part of the difference of inverse projected scatters.

use std::path::Path;
use std::time::Instant;

use faer::{Col, Mat};
use serde::{Deserialize, Serialize};

use crate::container::{self, Decoder, Encoder};
use crate::dataset::{class_stats, CrossViewDataset, ViewMatrix};
use crate::error::{Error, Result};
use crate::kissme::quadratic_distances;
use crate::linalg::{congruence, gen_eig_ratio, psd_project, spd_inverse, EigPairs, SymMatrix};

/// Regularizer scale shared by XQDA and k-XQDA.
pub const DEFAULT_RIDGE: f64 = 1e-7;

/// Diagonal guard (relative to trace) before inverting projected scatters.
pub const CORE_INVERSE_GUARD: f64 = 1e-12;

/// Largest `n·m` the brute-force scatter accepts.
pub const BRUTEFORCE_MAX_PAIRS: usize = 1_000_000;

/// Normalized scatters of similar (same identity) and dissimilar cross-view
/// differences, with their pair counts.
#[derive(Debug, Clone)]
pub struct ScatterPair {
    pub sigma_s: SymMatrix,
    pub sigma_d: SymMatrix,
    pub n_s: usize,
    pub n_d: usize,
}

/// Columns of `v` scaled by `w`.
fn scale_columns(v: &ViewMatrix, w: &[f64]) -> Mat<f64> {
    let a = v.as_mat();
    Mat::from_fn(a.nrows(), a.ncols(), |r, c| a[(r, c)] * w[c])
}

/// Per-class column sums, `d × c`.
fn class_sums(v: &ViewMatrix, labels: &[usize], classes: usize) -> Mat<f64> {
    let a = v.as_mat();
    let mut s = Mat::zeros(a.nrows(), classes);
    for (i, &l) in labels.iter().enumerate() {
        for r in 0..a.nrows() {
            s[(r, l - 1)] += a[(r, i)];
        }
    }
    s
}

/// `Σ_k a_k b_kᵀ` for the column blocks `a = [a₀ a₁ …]`, `b = [b₀ b₁ …]`.
fn block_outer(a: &[Mat<f64>], b: &[Mat<f64>]) -> Mat<f64> {
    let d = a[0].nrows();
    let cols: usize = a.iter().map(|m| m.ncols()).sum();
    let mut left = Mat::zeros(d, cols);
    let mut right = Mat::zeros(d, cols);
    let mut off = 0;
    for (x, y) in a.iter().zip(b) {
        left.subcols_mut(off, x.ncols()).copy_from(x);
        right.subcols_mut(off, y.ncols()).copy_from(y);
        off += x.ncols();
    }
    &left * right.transpose()
}

/// `n_S·Σ_S = X̃X̃ᵀ + Z̃Z̃ᵀ − S·Rᵀ − R·Sᵀ`, where `X̃` scales `xᵢ` by
/// `√m_{yᵢ}`, `Z̃` scales `zⱼ` by `√n_{yⱼ}`, and `S`, `R` hold per-class sums.
/// Returns the unnormalized sum and `n_S`.
pub fn similar_scatter_sum(ds: &CrossViewDataset) -> (SymMatrix, usize) {
    let stats = class_stats(ds);
    let c = ds.classes();
    let wx: Vec<f64> = ds.labels_x.iter().map(|&l| (stats.per_class_z[l - 1] as f64).sqrt()).collect();
    let wz: Vec<f64> = ds.labels_z.iter().map(|&l| (stats.per_class_x[l - 1] as f64).sqrt()).collect();
    let xt = scale_columns(&ds.x, &wx);
    let zt = scale_columns(&ds.z, &wz);
    let s = class_sums(&ds.x, &ds.labels_x, c);
    let r = class_sums(&ds.z, &ds.labels_z, c);
    let neg_s = Mat::from_fn(s.nrows(), c, |i, j| -s[(i, j)]);
    let neg_r = Mat::from_fn(r.nrows(), c, |i, j| -r[(i, j)]);
    let sum = block_outer(&[xt.clone(), zt.clone(), s, r], &[xt, zt, neg_r, neg_s]);
    (SymMatrix::new(sum), stats.n_s)
}

/// `n_D·Σ_D = m·XXᵀ + n·ZZᵀ − s·rᵀ − r·sᵀ − n_S·Σ_S` with `s`, `r` the
/// per-view totals.
pub fn dissimilar_scatter_sum(ds: &CrossViewDataset, similar_sum: &SymMatrix) -> (SymMatrix, usize) {
    let stats = class_stats(ds);
    let (n, m) = (ds.n(), ds.m());
    let xs = ds.x.as_mat() * faer::Scale((m as f64).sqrt());
    let zs = ds.z.as_mat() * faer::Scale((n as f64).sqrt());
    let total = |v: &ViewMatrix| {
        let a = v.as_mat();
        Mat::from_fn(a.nrows(), 1, |r, _| (0..a.ncols()).map(|i| a[(r, i)]).sum::<f64>())
    };
    let s = total(&ds.x);
    let r = total(&ds.z);
    let neg_s = Mat::from_fn(s.nrows(), 1, |i, _| -s[(i, 0)]);
    let neg_r = Mat::from_fn(r.nrows(), 1, |i, _| -r[(i, 0)]);
    let sum = block_outer(&[xs.clone(), zs.clone(), s, r], &[xs, zs, neg_r, neg_s]);
    (SymMatrix::new(sum - similar_sum.as_mat()), stats.n_d)
}

fn normalized(sum_s: SymMatrix, n_s: usize, sum_d: SymMatrix, n_d: usize) -> Result<ScatterPair> {
    if n_s == 0 {
        return Err(Error::InsufficientPairs("no same-identity cross-view pairs".into()));
    }
    if n_d == 0 {
        return Err(Error::InsufficientPairs("no different-identity cross-view pairs".into()));
    }
    Ok(ScatterPair {
        sigma_s: sum_s.scaled(1.0 / n_s as f64),
        sigma_d: sum_d.scaled(1.0 / n_d as f64),
        n_s,
        n_d,
    })
}

/// Scatter matrices from class sums, `O((n+m)·d²)`.
pub fn xqda_scatter_efficient(ds: &CrossViewDataset) -> Result<ScatterPair> {
    let stats = class_stats(ds);
    if stats.n_s == 0 || stats.n_d == 0 {
        return normalized(SymMatrix::zeros(0), stats.n_s, SymMatrix::zeros(0), stats.n_d);
    }
    let missing: Vec<usize> = (0..ds.classes())
        .filter(|&k| (stats.per_class_x[k] == 0) != (stats.per_class_z[k] == 0))
        .map(|k| k + 1)
        .collect();
    if !missing.is_empty() {
        log::warn!("classes present in only one view contribute no similar pairs: {missing:?}");
    }
    let (sum_s, n_s) = similar_scatter_sum(ds);
    let (sum_d, n_d) = dissimilar_scatter_sum(ds, &sum_s);
    normalized(sum_s, n_s, sum_d, n_d)
}

/// Scatter matrices by explicit accumulation over every cross-view pair.
pub fn xqda_scatter_bruteforce(ds: &CrossViewDataset) -> Result<ScatterPair> {
    let (n, m, d) = (ds.n(), ds.m(), ds.dim());
    if n * m > BRUTEFORCE_MAX_PAIRS {
        return Err(Error::TooLarge(format!("{n}x{m} pairs exceeds the brute-force limit of {BRUTEFORCE_MAX_PAIRS}")));
    }
    let mut sum_s = Mat::<f64>::zeros(d, d);
    let mut sum_d = Mat::<f64>::zeros(d, d);
    let (mut n_s, mut n_d) = (0usize, 0usize);
    let mut diff = vec![0.0; d];
    for i in 0..n {
        let x = ds.x.sample(i);
        for j in 0..m {
            let z = ds.z.sample(j);
            for r in 0..d {
                diff[r] = x[r] - z[r];
            }
            let target = if ds.labels_x[i] == ds.labels_z[j] {
                n_s += 1;
                &mut sum_s
            } else {
                n_d += 1;
                &mut sum_d
            };
            for q in 0..d {
                for p in 0..d {
                    target[(p, q)] += diff[p] * diff[q];
                }
            }
        }
    }
    normalized(SymMatrix::new(sum_s), n_s, SymMatrix::new(sum_d), n_d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XqdaOptions {
    /// Ridge on `Σ_S`, applied as `ridge·trace(Σ_S)/d`.
    pub ridge: f64,
    pub max_b: Option<usize>,
    /// Refuse to fit when the dense `d × d` working set would exceed this
    /// many bytes. `None` uses the available system memory when known.
    pub memory_limit: Option<u64>,
}

impl Default for XqdaOptions {
    fn default() -> Self {
        XqdaOptions {
            ridge: DEFAULT_RIDGE,
            max_b: None,
            memory_limit: None,
        }
    }
}

/// How the subspace dimension was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionRule {
    /// Number of Rayleigh values above 1.
    AboveOne,
    /// No value exceeded 1; one dimension kept.
    Floored,
    /// More values exceeded 1 than `max_b` allows.
    Capped,
}

/// Chooses `b` as the count of values above 1, at least 1, at most `max_b`.
pub fn subspace_dimension(values: &[f64], max_b: Option<usize>) -> (usize, DimensionRule) {
    let above = values.iter().take_while(|&&v| v > 1.0).count();
    let (b, rule) = if above == 0 { (1, DimensionRule::Floored) } else { (above, DimensionRule::AboveOne) };
    let b = b.min(values.len());
    match max_b {
        Some(cap) if cap >= 1 && b > cap => (cap, DimensionRule::Capped),
        _ => (b, rule),
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitTimings {
    pub scatter_secs: f64,
    pub eigen_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone)]
pub struct XqdaModel {
    /// `d × b` projection.
    pub w: Mat<f64>,
    /// `(Σ′_S⁻¹ − Σ′_D⁻¹)₊`, `b × b`.
    pub core: SymMatrix,
    /// The `b` retained Rayleigh values, descending.
    pub eigenvalues: Vec<f64>,
    /// Every generalized eigenvalue, descending.
    pub spectrum: Vec<f64>,
    pub rule: DimensionRule,
    pub ridge: f64,
    /// The ridge actually added to `Σ_S`.
    pub ridge_abs: f64,
    pub timings: FitTimings,
}

/// Bytes of available memory from `/proc/meminfo`, if readable.
pub fn available_memory() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = text.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Peak number of dense `d × d` f64 matrices alive during a fit.
const FIT_WORKING_MATRICES: u64 = 6;

fn check_memory(d: usize, limit: Option<u64>) -> Result<()> {
    let need = FIT_WORKING_MATRICES * (d as u64) * (d as u64) * 8;
    if let Some(limit) = limit.or_else(available_memory) {
        if need > limit {
            return Err(Error::TooLarge(format!(
                "XQDA at d={d} needs about {:.1} GiB of dense d×d storage, {:.1} GiB available",
                need as f64 / (1u64 << 30) as f64,
                limit as f64 / (1u64 << 30) as f64
            )));
        }
    }
    Ok(())
}

pub fn xqda_fit(ds: &CrossViewDataset, opts: &XqdaOptions) -> Result<XqdaModel> {
    check_memory(ds.dim(), opts.memory_limit)?;
    let t0 = Instant::now();
    let scatter = xqda_scatter_efficient(ds)?;
    let scatter_secs = t0.elapsed().as_secs_f64();
    let mut model = xqda_fit_scatter(&scatter, opts)?;
    model.timings.scatter_secs = scatter_secs;
    model.timings.total_secs = t0.elapsed().as_secs_f64();
    Ok(model)
}

/// Subspace and metric from precomputed scatters.
pub fn xqda_fit_scatter(scatter: &ScatterPair, opts: &XqdaOptions) -> Result<XqdaModel> {
    if !(opts.ridge >= 0.0) {
        return Err(Error::Config(format!("ridge must be non-negative, got {}", opts.ridge)));
    }
    let t0 = Instant::now();
    let d = scatter.sigma_s.dim();
    let ridge_abs = opts.ridge * scatter.sigma_s.trace().abs() / d as f64;
    let eig = gen_eig_ratio(&scatter.sigma_d, &scatter.sigma_s, ridge_abs)?;
    let eigen_secs = t0.elapsed().as_secs_f64();
    let (b, rule) = subspace_dimension(&eig.values, opts.max_b);
    let w = eig.leading_vectors(b);
    let core = projected_core(&scatter.sigma_s.shifted(ridge_abs), &scatter.sigma_d, &w)?;
    let EigPairs { values, .. } = eig;
    Ok(XqdaModel {
        w,
        core,
        eigenvalues: values[..b].to_vec(),
        spectrum: values,
        rule,
        ridge: opts.ridge,
        ridge_abs,
        timings: FitTimings {
            scatter_secs: 0.0,
            eigen_secs,
            total_secs: t0.elapsed().as_secs_f64(),
        },
    })
}

/// `((WᵀS W)⁻¹ − (WᵀD W)⁻¹)₊`.
pub(crate) fn projected_core(similar: &SymMatrix, dissimilar: &SymMatrix, w: &Mat<f64>) -> Result<SymMatrix> {
    let ps = congruence(similar, w.as_ref());
    let pd = congruence(dissimilar, w.as_ref());
    let inv_s = spd_inverse(&ps, CORE_INVERSE_GUARD)?;
    let inv_d = spd_inverse(&pd, CORE_INVERSE_GUARD)?;
    psd_project(&SymMatrix::new(inv_s.as_mat() - inv_d.as_mat()))
}

impl XqdaModel {
    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn b(&self) -> usize {
        self.w.ncols()
    }

    /// `Wᵀ·samples`, `b × len`.
    pub fn project(&self, samples: &ViewMatrix) -> Result<Mat<f64>> {
        if samples.dim() != self.dim() {
            return Err(Error::Shape(format!("model expects dim {}, got {}", self.dim(), samples.dim())));
        }
        Ok(self.w.transpose() * samples.as_mat())
    }

    /// Distances between every query and every gallery sample.
    pub fn distances(&self, queries: &ViewMatrix, gallery: &ViewMatrix) -> Result<Mat<f64>> {
        let pq = self.project(queries)?;
        let pg = self.project(gallery)?;
        quadratic_distances(&self.core, pq.as_ref(), pg.as_ref())
    }
}

/// `(x−z)ᵀ W·core·Wᵀ (x−z)`.
pub fn xqda_distance(model: &XqdaModel, x: &[f64], z: &[f64]) -> Result<f64> {
    let d = model.dim();
    if x.len() != d || z.len() != d {
        return Err(Error::Shape(format!("expected vectors of length {d}, got {} and {}", x.len(), z.len())));
    }
    let diff = Col::from_fn(d, |i| x[i] - z[i]);
    let p = model.w.transpose() * &diff;
    let p: Vec<f64> = (0..p.nrows()).map(|i| p[i]).collect();
    Ok(model.core.quad_form(&p))
}

// ---------------------------------------------------------------------------
// Serialization

const MAGIC: &[u8; 8] = b"XQDAMDL1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct XqdaSidecar {
    pub method: String,
    pub dim: usize,
    pub b: usize,
    pub ridge: f64,
    pub ridge_abs: f64,
    pub rule: DimensionRule,
    pub eigenvalues: Vec<f64>,
    pub spectrum: Vec<f64>,
    pub timings: FitTimings,
}

impl XqdaModel {
    /// Binary layout: magic `XQDAMDL1`, u64 d, u64 b, W (d×b) row-major,
    /// core (b×b) row-major, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new(MAGIC);
        e.u64(self.dim() as u64);
        e.u64(self.b() as u64);
        e.mat(self.w.as_ref());
        e.mat(self.core.as_mat());
        e.into_bytes()
    }

    pub fn sidecar(&self) -> XqdaSidecar {
        XqdaSidecar {
            method: "xqda".into(),
            dim: self.dim(),
            b: self.b(),
            ridge: self.ridge,
            ridge_abs: self.ridge_abs,
            rule: self.rule,
            eigenvalues: self.eigenvalues.clone(),
            spectrum: self.spectrum.clone(),
            timings: self.timings.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_atomic(path, &self.to_bytes())?;
        let json = serde_json::to_vec_pretty(&self.sidecar()).expect("sidecar serializes");
        container::write_atomic(&container::sidecar_path(path), &json)
    }

    /// Loads the binary model and, if present, its sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = container::read_file(path)?;
        let mut dec = Decoder::new(&bytes, MAGIC, path)?;
        let d = dec.usize()?;
        let b = dec.usize()?;
        let w = dec.mat(d, b)?;
        let core = SymMatrix::new(dec.mat(b, b)?);
        dec.finish()?;
        let side: Option<XqdaSidecar> = std::fs::read(container::sidecar_path(path))
            .ok()
            .and_then(|s| serde_json::from_slice(&s).ok());
        Ok(match side {
            Some(s) => XqdaModel {
                w,
                core,
                eigenvalues: s.eigenvalues,
                spectrum: s.spectrum,
                rule: s.rule,
                ridge: s.ridge,
                ridge_abs: s.ridge_abs,
                timings: s.timings,
            },
            None => XqdaModel {
                w,
                core,
                eigenvalues: Vec::new(),
                spectrum: Vec::new(),
                rule: DimensionRule::AboveOne,
                ridge: f64::NAN,
                ridge_abs: f64::NAN,
                timings: FitTimings::default(),
            },
        })
    }
}
