//! Cross-view data model, feature files, synthetic data and the
//! identity-level train/test split.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use faer::{ColRef, Mat, MatRef};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::rng;

/// Samples of one camera view, stored as the columns of a `dim × len` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMatrix {
    data: Mat<f64>,
}

impl ViewMatrix {
    /// Wraps a `dim × len` matrix whose columns are samples.
    pub fn from_mat(data: Mat<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Shape("feature dimension must be positive".into()));
        }
        if !crate::linalg::all_finite(data.as_ref()) {
            return Err(Error::InvalidMatrix("feature matrix has non-finite entries".into()));
        }
        Ok(ViewMatrix { data })
    }

    pub fn from_samples(dim: usize, samples: &[Vec<f64>]) -> Result<Self> {
        if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.len() != dim) {
            return Err(Error::Shape(format!("sample {i} has length {}, expected {dim}", s.len())));
        }
        Self::from_mat(Mat::from_fn(dim, samples.len(), |r, c| samples[c][r]))
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn as_mat(&self) -> MatRef<'_, f64> {
        self.data.as_ref()
    }

    pub fn sample(&self, i: usize) -> ColRef<'_, f64> {
        self.data.col(i)
    }

    pub fn sample_vec(&self, i: usize) -> Vec<f64> {
        let c = self.data.col(i);
        (0..self.dim()).map(|r| c[r]).collect()
    }

    /// New view holding the given columns, in order.
    pub fn select(&self, indices: &[usize]) -> ViewMatrix {
        ViewMatrix {
            data: Mat::from_fn(self.dim(), indices.len(), |r, c| self.data[(r, indices[c])]),
        }
    }

    /// Concatenates two views with equal dimension.
    pub fn concat(&self, other: &ViewMatrix) -> Result<ViewMatrix> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!("cannot concatenate dims {} and {}", self.dim(), other.dim())));
        }
        let n = self.len();
        Ok(ViewMatrix {
            data: Mat::from_fn(self.dim(), n + other.len(), |r, c| {
                if c < n {
                    self.data[(r, c)]
                } else {
                    other.data[(r, c - n)]
                }
            }),
        })
    }
}

/// Two views with 1-based identity labels. Ids used anywhere are exactly
/// `1..=classes`; an id may be missing from one view (e.g. gallery-only
/// distractors).
#[derive(Debug, Clone, PartialEq)]
pub struct CrossViewDataset {
    pub x: ViewMatrix,
    pub z: ViewMatrix,
    pub labels_x: Vec<usize>,
    pub labels_z: Vec<usize>,
    classes: usize,
}

impl CrossViewDataset {
    pub fn new(x: ViewMatrix, z: ViewMatrix, labels_x: Vec<usize>, labels_z: Vec<usize>) -> Result<Self> {
        if x.dim() != z.dim() {
            return Err(Error::Shape(format!("view X has dim {}, view Z has dim {}", x.dim(), z.dim())));
        }
        if labels_x.len() != x.len() {
            return Err(Error::Shape(format!("{} X samples but {} X labels", x.len(), labels_x.len())));
        }
        if labels_z.len() != z.len() {
            return Err(Error::Shape(format!("{} Z samples but {} Z labels", z.len(), labels_z.len())));
        }
        if x.is_empty() || z.is_empty() {
            return Err(Error::Shape("both views need at least one sample".into()));
        }
        if labels_x.iter().chain(&labels_z).any(|&l| l == 0) {
            return Err(Error::Label("class ids are 1-based; found 0".into()));
        }
        let classes = labels_x.iter().chain(&labels_z).copied().max().unwrap_or(0);
        let mut seen = vec![false; classes];
        for &l in labels_x.iter().chain(&labels_z) {
            seen[l - 1] = true;
        }
        if let Some(gap) = seen.iter().position(|s| !s) {
            return Err(Error::Label(format!("class ids are not contiguous: {} is unused", gap + 1)));
        }
        Ok(CrossViewDataset {
            x,
            z,
            labels_x,
            labels_z,
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn m(&self) -> usize {
        self.z.len()
    }

    /// Per-class sample counts in X, indexed by `class - 1`.
    pub fn counts_x(&self) -> Vec<usize> {
        count_labels(&self.labels_x, self.classes)
    }

    pub fn counts_z(&self) -> Vec<usize> {
        count_labels(&self.labels_z, self.classes)
    }
}

fn count_labels(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for &l in labels {
        counts[l - 1] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassStats {
    pub per_class_x: Vec<usize>,
    pub per_class_z: Vec<usize>,
    /// Number of same-identity cross-view pairs.
    pub n_s: usize,
    /// Number of different-identity cross-view pairs.
    pub n_d: usize,
    /// Classes with no sample in either view.
    pub empty_classes: Vec<usize>,
}

pub fn class_stats(ds: &CrossViewDataset) -> ClassStats {
    let per_class_x = ds.counts_x();
    let per_class_z = ds.counts_z();
    let n_s: usize = per_class_x.iter().zip(&per_class_z).map(|(a, b)| a * b).sum();
    let n_d = ds.n() * ds.m() - n_s;
    let empty_classes: Vec<usize> = per_class_x
        .iter()
        .zip(&per_class_z)
        .enumerate()
        .filter(|(_, (a, b))| **a == 0 && **b == 0)
        .map(|(k, _)| k + 1)
        .collect();
    if !empty_classes.is_empty() {
        log::warn!("classes without samples: {empty_classes:?}");
    }
    ClassStats {
        per_class_x,
        per_class_z,
        n_s,
        n_d,
        empty_classes,
    }
}

// ---------------------------------------------------------------------------
// Feature files

const BINARY_MAGIC: &[u8; 8] = b"XVFEAT01";

/// On-disk encoding for a feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    /// One sample per line, comma separated, shortest round-trip decimals.
    Csv,
    /// `XVFEAT01`, u64 dim, u64 count, then samples as little-endian f64.
    Binary,
}

/// Writes atomically (temporary file, then rename).
pub fn write_features(path: &Path, view: &ViewMatrix, format: FeatureFormat) -> Result<()> {
    let mut w: Vec<u8> = Vec::new();
    let io = |e| Error::io(path, e);
    match format {
        FeatureFormat::Csv => {
            let mut line = String::new();
            for i in 0..view.len() {
                line.clear();
                let col = view.sample(i);
                for r in 0..view.dim() {
                    if r > 0 {
                        line.push(',');
                    }
                    line.push_str(&format!("{}", col[r]));
                }
                line.push('\n');
                w.write_all(line.as_bytes()).map_err(io)?;
            }
        }
        FeatureFormat::Binary => {
            w.write_all(BINARY_MAGIC).map_err(io)?;
            w.write_all(&(view.dim() as u64).to_le_bytes()).map_err(io)?;
            w.write_all(&(view.len() as u64).to_le_bytes()).map_err(io)?;
            for i in 0..view.len() {
                let col = view.sample(i);
                for r in 0..view.dim() {
                    w.write_all(&col[r].to_le_bytes()).map_err(io)?;
                }
            }
        }
    }
    write_atomic(path, &w)
}

/// Reads a feature file, detecting the binary container by its magic.
pub fn read_features(path: &Path) -> Result<ViewMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.starts_with(BINARY_MAGIC) {
        if bytes.len() < 24 {
            return Err(parse_err("truncated header".into()));
        }
        let dim = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let body = &bytes[24..];
        if body.len() != dim * count * 8 {
            return Err(parse_err(format!(
                "expected {} payload bytes for {count} samples of dim {dim}, found {}",
                dim * count * 8,
                body.len()
            )));
        }
        let mut data = Mat::zeros(dim, count);
        for (k, chunk) in body.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value in sample {}", k / dim)));
            }
            data[(k % dim, k / dim)] = v;
        }
        return ViewMatrix::from_mat(data);
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let mut samples: Vec<Vec<f64>> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let mut sample = Vec::with_capacity(record.len());
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(format!("line {}: cannot parse {field:?}", row + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(format!("line {}: non-finite value {field:?}", row + 1)));
            }
            sample.push(v);
        }
        samples.push(sample);
    }
    let dim = samples.first().map_or(0, Vec::len);
    ViewMatrix::from_samples(dim, &samples)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 4);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.trim().parse::<usize>() {
            Ok(v) if v >= 1 => Ok(v),
            _ => Err(Error::Label(format!("{}:{}: invalid class id {:?}", path.display(), i + 1, l.trim()))),
        })
        .collect()
}

pub fn load_features(path_x: &Path, path_z: &Path, path_labels_x: &Path, path_labels_z: &Path) -> Result<CrossViewDataset> {
    let x = read_features(path_x)?;
    let z = read_features(path_z)?;
    let lx = read_labels(path_labels_x)?;
    let lz = read_labels(path_labels_z)?;
    CrossViewDataset::new(x, z, lx, lz)
}

/// File names used for a dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetFiles {
    pub x: PathBuf,
    pub z: PathBuf,
    pub labels_x: PathBuf,
    pub labels_z: PathBuf,
}

impl DatasetFiles {
    pub fn in_dir(dir: &Path, format: FeatureFormat) -> Self {
        let ext = match format {
            FeatureFormat::Csv => "csv",
            FeatureFormat::Binary => "bin",
        };
        DatasetFiles {
            x: dir.join(format!("x.{ext}")),
            z: dir.join(format!("z.{ext}")),
            labels_x: dir.join("labels_x.csv"),
            labels_z: dir.join("labels_z.csv"),
        }
    }

    /// Locates a dataset in `dir`, preferring CSV files when both exist.
    pub fn discover(dir: &Path) -> Result<Self> {
        let csv = Self::in_dir(dir, FeatureFormat::Csv);
        if csv.x.exists() {
            return Ok(csv);
        }
        let bin = Self::in_dir(dir, FeatureFormat::Binary);
        if bin.x.exists() {
            return Ok(bin);
        }
        Err(Error::io(
            csv.x,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no x.csv or x.bin in data directory"),
        ))
    }

    pub fn all(&self) -> [&Path; 4] {
        [&self.x, &self.z, &self.labels_x, &self.labels_z]
    }
}

pub fn save_dataset(ds: &CrossViewDataset, dir: &Path, format: FeatureFormat) -> Result<DatasetFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = DatasetFiles::in_dir(dir, format);
    write_features(&files.x, &ds.x, format)?;
    write_features(&files.z, &ds.z, format)?;
    write_labels(&files.labels_x, &ds.labels_x)?;
    write_labels(&files.labels_z, &ds.labels_z)?;
    Ok(files)
}

pub fn load_dataset(dir: &Path) -> Result<CrossViewDataset> {
    let f = DatasetFiles::discover(dir)?;
    load_features(&f.x, &f.z, &f.labels_x, &f.labels_z)
}

// ---------------------------------------------------------------------------
// Synthetic data

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Warp {
    None,
    Affine,
    Quadratic,
}

impl std::str::FromStr for Warp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Warp::None),
            "affine" => Ok(Warp::Affine),
            "quadratic" => Ok(Warp::Quadratic),
            _ => Err(Error::Config(format!("unknown warp {s:?} (none|affine|quadratic)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Identities seen in both views.
    pub classes: usize,
    pub per_class_x: usize,
    pub per_class_z: usize,
    pub dim: usize,
    pub warp: Warp,
    /// Warp magnitude: `a` in `t + a·t²`, or the perturbation scale of the
    /// affine map.
    pub warp_strength: f64,
    /// Per-sample isotropic noise standard deviation.
    pub noise: f64,
    /// Extra identities present only in view Z.
    pub distractors: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 40,
            per_class_x: 2,
            per_class_z: 2,
            dim: 20,
            warp: Warp::None,
            warp_strength: 0.5,
            noise: 0.1,
            distractors: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("synthetic data needs at least 2 classes".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config("synthetic data needs dim >= 2".into()));
        }
        if self.per_class_x == 0 || self.per_class_z == 0 {
            return Err(Error::Config("samples per class must be positive in both views".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be a finite non-negative number, got {}", self.noise)));
        }
        if !self.warp_strength.is_finite() {
            return Err(Error::Config("warp strength must be finite".into()));
        }
        Ok(())
    }
}

struct AffineWarp {
    matrix: Mat<f64>,
    offset: Vec<f64>,
}

/// Draws a cross-view dataset: one mean per identity, view X samples are
/// `mean + noise`, view Z samples are `warp(mean + noise)`.
pub fn synth_crossview(cfg: &SynthConfig, seed: u64) -> Result<CrossViewDataset> {
    cfg.validate()?;
    let d = cfg.dim;
    let total_classes = cfg.classes + cfg.distractors;

    let mut mean_rng = rng::stream(seed, "synth/means", 0);
    let means: Vec<Vec<f64>> = (0..total_classes)
        .map(|_| (0..d).map(|_| mean_rng.sample(StandardNormal)).collect())
        .collect();

    let affine = (cfg.warp == Warp::Affine).then(|| {
        let mut r = rng::stream(seed, "synth/warp", 0);
        let s = cfg.warp_strength / (d as f64).sqrt();
        AffineWarp {
            matrix: Mat::from_fn(d, d, |i, j| {
                let g: f64 = r.sample(StandardNormal);
                if i == j {
                    1.0 + s * g
                } else {
                    s * g
                }
            }),
            offset: (0..d).map(|_| cfg.warp_strength * r.sample::<f64, _>(StandardNormal)).collect(),
        }
    });

    let warp = |t: Vec<f64>| -> Vec<f64> {
        match cfg.warp {
            Warp::None => t,
            Warp::Quadratic => t.into_iter().map(|v| v + cfg.warp_strength * v * v).collect(),
            Warp::Affine => {
                let a = affine.as_ref().expect("affine warp drawn");
                (0..d)
                    .map(|i| a.offset[i] + (0..d).map(|j| a.matrix[(i, j)] * t[j]).sum::<f64>())
                    .collect()
            }
        }
    };

    let mut noise_x = rng::stream(seed, "synth/noise-x", 0);
    let mut noise_z = rng::stream(seed, "synth/noise-z", 0);
    let jitter = |mean: &[f64], r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        mean.iter()
            .map(|&m| m + cfg.noise * r.sample::<f64, _>(StandardNormal))
            .collect()
    };

    let mut xs = Vec::new();
    let mut lx = Vec::new();
    let mut zs = Vec::new();
    let mut lz = Vec::new();
    for (k, mean) in means.iter().enumerate() {
        if k < cfg.classes {
            for _ in 0..cfg.per_class_x {
                xs.push(jitter(mean, &mut noise_x));
                lx.push(k + 1);
            }
        }
        for _ in 0..cfg.per_class_z {
            let raw = jitter(mean, &mut noise_z);
            zs.push(warp(raw));
            lz.push(k + 1);
        }
    }
    CrossViewDataset::new(ViewMatrix::from_samples(d, &xs)?, ViewMatrix::from_samples(d, &zs)?, lx, lz)
}

// ---------------------------------------------------------------------------
// Evaluation split

/// Identity-disjoint halves of a dataset. `*_identities[k]` is the original
/// id of relabelled class `k + 1`.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: CrossViewDataset,
    pub test: CrossViewDataset,
    pub train_identities: Vec<usize>,
    pub test_identities: Vec<usize>,
}

/// Splits identities in half. Only identities present in both views are
/// shuffled: `⌊c/2⌋` of them train, the rest test. Identities present in
/// one view only (distractors) always go to the test half.
pub fn split_protocol(ds: &CrossViewDataset, seed: u64, trial: u64) -> Result<Split> {
    let cx = ds.counts_x();
    let cz = ds.counts_z();
    let mut paired: Vec<usize> = (1..=ds.classes()).filter(|&k| cx[k - 1] > 0 && cz[k - 1] > 0).collect();
    if paired.len() < 2 {
        return Err(Error::Config(format!(
            "split needs at least 2 identities seen in both views, found {}",
            paired.len()
        )));
    }
    paired.shuffle(&mut rng::stream(seed, "split", trial));
    let n_train = paired.len() / 2;
    let mut train_ids = paired[..n_train].to_vec();
    train_ids.sort_unstable();
    let mut in_train = vec![false; ds.classes() + 1];
    for &k in &train_ids {
        in_train[k] = true;
    }
    let test_ids: Vec<usize> = (1..=ds.classes()).filter(|&k| !in_train[k]).collect();

    let train = subset(ds, &train_ids)?;
    let test = subset(ds, &test_ids)?;
    Ok(Split {
        train,
        test,
        train_identities: train_ids,
        test_identities: test_ids,
    })
}

/// Restricts to the given identities (sorted ascending), relabelled `1..`.
fn subset(ds: &CrossViewDataset, ids: &[usize]) -> Result<CrossViewDataset> {
    let mut relabel = vec![0usize; ds.classes() + 1];
    for (k, &id) in ids.iter().enumerate() {
        relabel[id] = k + 1;
    }
    let pick = |labels: &[usize]| -> (Vec<usize>, Vec<usize>) {
        labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| relabel[l] > 0)
            .map(|(i, &l)| (i, relabel[l]))
            .unzip()
    };
    let (ix, lx) = pick(&ds.labels_x);
    let (iz, lz) = pick(&ds.labels_z);
    CrossViewDataset::new(ds.x.select(&ix), ds.z.select(&iz), lx, lz)
}
