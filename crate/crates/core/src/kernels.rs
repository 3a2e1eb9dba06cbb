//! Kernel functions and the block-structured Gram matrix over the two views.

use std::fmt;
use std::str::FromStr;

use faer::{Col, Mat, MatRef};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{CrossViewDataset, ViewMatrix};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `⟨a, b⟩`
    Linear,
    /// `exp(−gamma·‖a − b‖²)`
    Rbf { gamma: f64 },
    /// `(scale·⟨a, b⟩ + offset)^degree`
    Polynomial { degree: u32, offset: f64, scale: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Rbf { gamma } if gamma > 0.0 && gamma.is_finite() => Ok(()),
            KernelSpec::Rbf { gamma } => Err(Error::Config(format!("rbf gamma must be positive, got {gamma}"))),
            KernelSpec::Polynomial { degree, offset, scale } => {
                if degree == 0 {
                    Err(Error::Config("polynomial degree must be positive".into()))
                } else if !(offset >= 0.0 && offset.is_finite()) {
                    Err(Error::Config(format!("polynomial offset must be >= 0, got {offset}")))
                } else if !(scale > 0.0 && scale.is_finite()) {
                    Err(Error::Config(format!("polynomial scale must be positive, got {scale}")))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Kernel value from the inner product and the squared distance.
    #[inline]
    fn from_parts(&self, dot: f64, sq_dist: f64) -> f64 {
        match *self {
            KernelSpec::Linear => dot,
            KernelSpec::Rbf { gamma } => (-gamma * sq_dist).exp(),
            KernelSpec::Polynomial { degree, offset, scale } => (scale * dot + offset).powi(degree as i32),
        }
    }

    fn needs_distance(&self) -> bool {
        matches!(self, KernelSpec::Rbf { .. })
    }

    pub(crate) fn tag(&self) -> u8 {
        match self {
            KernelSpec::Linear => 0,
            KernelSpec::Rbf { .. } => 1,
            KernelSpec::Polynomial { .. } => 2,
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "kernel=linear"),
            KernelSpec::Rbf { gamma } => write!(f, "kernel=rbf gamma={gamma}"),
            KernelSpec::Polynomial { degree, offset, scale } => {
                write!(f, "kernel=poly degree={degree} offset={offset} scale={scale}")
            }
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("kernel arguments have lengths {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let sq: f64 = if spec.needs_distance() {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    } else {
        0.0
    };
    Ok(spec.from_parts(dot, sq))
}

/// A kernel whose parameters may still be `auto`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelChoice {
    Linear,
    /// `None` selects the median-distance heuristic.
    Rbf { gamma: Option<f64> },
    /// `scale: None` means `1/d`.
    Polynomial { degree: u32, offset: f64, scale: Option<f64> },
}

impl Default for KernelChoice {
    fn default() -> Self {
        KernelChoice::Rbf { gamma: None }
    }
}

impl KernelChoice {
    /// Fixes `auto` parameters against training data.
    pub fn resolve(&self, ds: &CrossViewDataset, seed: u64) -> Result<KernelSpec> {
        let spec = match *self {
            KernelChoice::Linear => KernelSpec::Linear,
            KernelChoice::Rbf { gamma: Some(g) } => KernelSpec::Rbf { gamma: g },
            KernelChoice::Rbf { gamma: None } => KernelSpec::Rbf {
                gamma: rbf_bandwidth_median(ds, seed)?,
            },
            KernelChoice::Polynomial { degree, offset, scale } => KernelSpec::Polynomial {
                degree,
                offset,
                scale: scale.unwrap_or(1.0 / ds.dim() as f64),
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<KernelSpec> for KernelChoice {
    fn from(s: KernelSpec) -> Self {
        match s {
            KernelSpec::Linear => KernelChoice::Linear,
            KernelSpec::Rbf { gamma } => KernelChoice::Rbf { gamma: Some(gamma) },
            KernelSpec::Polynomial { degree, offset, scale } => KernelChoice::Polynomial {
                degree,
                offset,
                scale: Some(scale),
            },
        }
    }
}

impl fmt::Display for KernelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let auto = |v: Option<f64>| v.map_or_else(|| "auto".to_string(), |v| v.to_string());
        match *self {
            KernelChoice::Linear => write!(f, "kernel=linear"),
            KernelChoice::Rbf { gamma } => write!(f, "kernel=rbf gamma={}", auto(gamma)),
            KernelChoice::Polynomial { degree, offset, scale } => {
                write!(f, "kernel=poly degree={degree} offset={offset} scale={}", auto(scale))
            }
        }
    }
}

/// Parses `kernel=rbf gamma=0.5`, `kernel=poly degree=2 offset=1 scale=auto`,
/// `kernel=linear`. A bare family name is accepted too.
impl FromStr for KernelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut family = None;
        let mut gamma = None;
        let mut degree = 2u32;
        let mut offset = 1.0;
        let mut scale = None;
        for (i, tok) in s.split_whitespace().enumerate() {
            let (key, value) = match tok.split_once('=') {
                Some(kv) => kv,
                None if i == 0 => ("kernel", tok),
                None => return Err(Error::Config(format!("expected key=value in kernel spec, got {tok:?}"))),
            };
            let num = |v: &str| -> Result<f64> {
                v.parse().map_err(|_| Error::Config(format!("kernel parameter {key}={v:?} is not a number")))
            };
            let auto_num = |v: &str| -> Result<Option<f64>> {
                if v == "auto" {
                    Ok(None)
                } else {
                    num(v).map(Some)
                }
            };
            match key {
                "kernel" => family = Some(value.to_string()),
                "gamma" => gamma = auto_num(value)?,
                "degree" => {
                    degree = value
                        .parse()
                        .map_err(|_| Error::Config(format!("polynomial degree {value:?} is not a positive integer")))?
                }
                "offset" => offset = num(value)?,
                "scale" => scale = auto_num(value)?,
                other => return Err(Error::Config(format!("unknown kernel parameter {other:?}"))),
            }
        }
        let choice = match family.as_deref() {
            Some("linear") => KernelChoice::Linear,
            Some("rbf") => KernelChoice::Rbf { gamma },
            Some("poly") | Some("polynomial") => KernelChoice::Polynomial { degree, offset, scale },
            Some(other) => return Err(Error::Config(format!("unknown kernel family {other:?}"))),
            None => return Err(Error::Config("kernel spec is missing kernel=<family>".into())),
        };
        // catch out-of-range explicit values early
        match choice {
            KernelChoice::Rbf { gamma: Some(g) } => KernelSpec::Rbf { gamma: g }.validate()?,
            KernelChoice::Polynomial { degree, offset, scale } => KernelSpec::Polynomial {
                degree,
                offset,
                scale: scale.unwrap_or(1.0),
            }
            .validate()?,
            _ => {}
        }
        Ok(choice)
    }
}

/// The four blocks of the Gram matrix over `[X Z]`.
#[derive(Debug, Clone)]
pub struct KernelBlocks {
    pub xx: Mat<f64>,
    pub zz: Mat<f64>,
    pub xz: Mat<f64>,
    /// Always the exact transpose of `xz`.
    pub zx: Mat<f64>,
}

impl KernelBlocks {
    pub fn n(&self) -> usize {
        self.xx.nrows()
    }

    pub fn m(&self) -> usize {
        self.zz.nrows()
    }

    /// Assembles the full `(n+m) × (n+m)` matrix.
    pub fn full(&self) -> Mat<f64> {
        let (n, m) = (self.n(), self.m());
        Mat::from_fn(n + m, n + m, |i, j| match (i < n, j < n) {
            (true, true) => self.xx[(i, j)],
            (true, false) => self.xz[(i, j - n)],
            (false, true) => self.zx[(i - n, j)],
            (false, false) => self.zz[(i - n, j - n)],
        })
    }

    /// First `n` columns of the full matrix: `[K_XX; K_ZX]`.
    pub fn x_columns(&self) -> Mat<f64> {
        let (n, m) = (self.n(), self.m());
        Mat::from_fn(n + m, n, |i, j| if i < n { self.xx[(i, j)] } else { self.zx[(i - n, j)] })
    }

    /// Last `m` columns of the full matrix: `[K_XZ; K_ZZ]`.
    pub fn z_columns(&self) -> Mat<f64> {
        let (n, m) = (self.n(), self.m());
        Mat::from_fn(n + m, m, |i, j| if i < n { self.xz[(i, j)] } else { self.zz[(i - n, j)] })
    }
}

fn squared_norms(a: MatRef<'_, f64>) -> Vec<f64> {
    (0..a.ncols()).map(|j| a.col(j).squared_norm_l2()).collect()
}

/// Kernel matrix between the columns of `a` and `b`, computed from `aᵀb`.
fn cross_kernel(spec: &KernelSpec, a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut g = a.transpose() * b;
    if spec.needs_distance() {
        let na = squared_norms(a);
        let nb = squared_norms(b);
        for j in 0..g.ncols() {
            for i in 0..g.nrows() {
                let sq = (na[i] + nb[j] - 2.0 * g[(i, j)]).max(0.0);
                g[(i, j)] = spec.from_parts(0.0, sq);
            }
        }
    } else {
        for j in 0..g.ncols() {
            for i in 0..g.nrows() {
                g[(i, j)] = spec.from_parts(g[(i, j)], 0.0);
            }
        }
    }
    g
}

/// Same-view kernel matrix, exactly symmetric; the RBF diagonal is exactly 1.
fn self_kernel(spec: &KernelSpec, a: MatRef<'_, f64>) -> Mat<f64> {
    let mut k = cross_kernel(spec, a, a);
    let n = k.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            k[(j, i)] = k[(i, j)];
        }
        if spec.needs_distance() {
            k[(j, j)] = spec.from_parts(0.0, 0.0);
        }
    }
    k
}

pub fn kernel_blocks(spec: &KernelSpec, ds: &CrossViewDataset) -> Result<KernelBlocks> {
    spec.validate()?;
    let x = ds.x.as_mat();
    let z = ds.z.as_mat();
    let xz = cross_kernel(spec, x, z);
    let zx = xz.transpose().to_owned();
    Ok(KernelBlocks {
        xx: self_kernel(spec, x),
        zz: self_kernel(spec, z),
        xz,
        zx,
    })
}

/// Kernel values between `q` and every training sample, X samples first
/// then Z samples (the coefficient order of the dual expansion).
pub fn query_columns(spec: &KernelSpec, train_x: &ViewMatrix, train_z: &ViewMatrix, q: &[f64]) -> Result<Vec<f64>> {
    if q.len() != train_x.dim() {
        return Err(Error::Shape(format!("query has dim {}, training data has dim {}", q.len(), train_x.dim())));
    }
    let q = Col::from_fn(q.len(), |i| q[i]);
    let qm = q.as_mat();
    let kx = cross_kernel(spec, train_x.as_mat(), qm);
    let kz = cross_kernel(spec, train_z.as_mat(), qm);
    Ok((0..kx.nrows()).map(|i| kx[(i, 0)]).chain((0..kz.nrows()).map(|i| kz[(i, 0)])).collect())
}

/// Batched form of [`query_columns`]: column `j` belongs to sample `j` of
/// `queries`; shape `(n+m) × queries.len()`.
pub fn query_columns_batch(
    spec: &KernelSpec,
    train_x: &ViewMatrix,
    train_z: &ViewMatrix,
    queries: &ViewMatrix,
) -> Result<Mat<f64>> {
    if queries.dim() != train_x.dim() {
        return Err(Error::Shape(format!(
            "queries have dim {}, training data has dim {}",
            queries.dim(),
            train_x.dim()
        )));
    }
    let kx = cross_kernel(spec, train_x.as_mat(), queries.as_mat());
    let kz = cross_kernel(spec, train_z.as_mat(), queries.as_mat());
    let n = kx.nrows();
    Ok(Mat::from_fn(n + kz.nrows(), queries.len(), |i, j| {
        if i < n {
            kx[(i, j)]
        } else {
            kz[(i - n, j)]
        }
    }))
}

/// Pair cap for the median heuristic.
pub const BANDWIDTH_MAX_PAIRS: usize = 2000;

/// `gamma = 1 / (2·median²)` over pairwise Euclidean distances of all
/// samples from both views. Coincident pairs (distance 0) are left out of the
/// median. Up to [`BANDWIDTH_MAX_PAIRS`] pairs are used: all of them when
/// there are few enough, otherwise a seeded random sample.
pub fn rbf_bandwidth_median(ds: &CrossViewDataset, seed: u64) -> Result<f64> {
    let all = ds.x.concat(&ds.z)?;
    bandwidth_from_view(&all, seed)
}

pub(crate) fn bandwidth_from_view(all: &ViewMatrix, seed: u64) -> Result<f64> {
    let total = all.len();
    if total < 2 {
        return Err(Error::DegenerateBandwidth);
    }
    let dist = |i: usize, j: usize| {
        let (a, b) = (all.sample(i), all.sample(j));
        (0..all.dim()).map(|r| (a[r] - b[r]) * (a[r] - b[r])).sum::<f64>().sqrt()
    };
    let n_pairs = total * (total - 1) / 2;
    let mut d: Vec<f64> = if n_pairs <= BANDWIDTH_MAX_PAIRS {
        (0..total).flat_map(|i| ((i + 1)..total).map(move |j| (i, j))).map(|(i, j)| dist(i, j)).collect()
    } else {
        let mut r = rng::stream(seed, "bandwidth", 0);
        (0..BANDWIDTH_MAX_PAIRS)
            .map(|_| {
                let i = r.gen_range(0..total);
                let mut j = r.gen_range(0..total - 1);
                if j >= i {
                    j += 1;
                }
                dist(i, j)
            })
            .collect()
    };
    d.retain(|&v| v > 0.0);
    if d.is_empty() {
        return Err(Error::DegenerateBandwidth);
    }
    d.sort_by(f64::total_cmp);
    let k = d.len();
    let median = if k % 2 == 1 { d[k / 2] } else { 0.5 * (d[k / 2 - 1] + d[k / 2]) };
    Ok(1.0 / (2.0 * median * median))
}

/// Explicit feature map of the degree-2 polynomial kernel:
/// `⟨φ(a), φ(b)⟩ = (scale·⟨a, b⟩ + offset)²`.
///
/// Coordinates: `offset`, `√(2·scale·offset)·xᵢ`, `scale·xᵢ²`,
/// `√2·scale·xᵢxⱼ (i<j)`. The constant and linear blocks vanish when
/// `offset == 0` and are then omitted.
pub fn explicit_poly_map(x: &[f64], degree: u32, offset: f64, scale: f64) -> Result<Vec<f64>> {
    if degree != 2 {
        return Err(Error::Config(format!("explicit polynomial map supports degree 2 only, got {degree}")));
    }
    KernelSpec::Polynomial { degree, offset, scale }.validate()?;
    let d = x.len();
    let mut out = Vec::with_capacity(1 + d + d * (d + 1) / 2);
    if offset != 0.0 {
        out.push(offset);
        let c = (2.0 * scale * offset).sqrt();
        out.extend(x.iter().map(|v| c * v));
    }
    let s2 = std::f64::consts::SQRT_2 * scale;
    for i in 0..d {
        out.push(scale * x[i] * x[i]);
        for j in (i + 1)..d {
            out.push(s2 * x[i] * x[j]);
        }
    }
    Ok(out)
}

/// Applies [`explicit_poly_map`] to every sample of a view.
pub fn explicit_poly_view(view: &ViewMatrix, offset: f64, scale: f64) -> Result<ViewMatrix> {
    let mapped: Vec<Vec<f64>> =
        (0..view.len()).map(|i| explicit_poly_map(&view.sample_vec(i), 2, offset, scale)).collect::<Result<_>>()?;
    let dim = mapped.first().map_or(0, Vec::len);
    ViewMatrix::from_samples(dim, &mapped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::CrossViewDataset;
    use crate::linalg::{sym_eig, SymMatrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_view(d: usize, n: usize, r: &mut ChaCha8Rng) -> ViewMatrix {
        ViewMatrix::from_mat(Mat::from_fn(d, n, |_, _| r.gen_range(-1.0..1.0))).unwrap()
    }

    fn random_ds(d: usize, n: usize, m: usize, seed: u64) -> CrossViewDataset {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let lx = (0..n).map(|i| i % 2 + 1).collect();
        let lz = (0..m).map(|i| i % 2 + 1).collect();
        CrossViewDataset::new(random_view(d, n, &mut r), random_view(d, m, &mut r), lx, lz).unwrap()
    }

    const POLY: KernelSpec = KernelSpec::Polynomial {
        degree: 2,
        offset: 1.0,
        scale: 1.0,
    };

    #[test]
    fn eval_examples() {
        assert_eq!(kernel_eval(&KernelSpec::Rbf { gamma: 0.3 }, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(kernel_eval(&KernelSpec::Linear, &[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert_eq!(kernel_eval(&POLY, &[1.0, 1.0], &[1.0, 1.0]).unwrap(), 9.0);
        assert!(matches!(kernel_eval(&KernelSpec::Linear, &[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn linear_blocks_are_gram_products() {
        let ds = random_ds(5, 4, 3, 1);
        let b = kernel_blocks(&KernelSpec::Linear, &ds).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let naive: f64 = (0..5).map(|r| ds.x.sample(i)[r] * ds.x.sample(j)[r]).sum();
                assert!((b.xx[(i, j)] - naive).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn blocks_match_pairwise_eval() {
        for spec in [KernelSpec::Linear, KernelSpec::Rbf { gamma: 0.7 }, POLY] {
            let ds = random_ds(4, 6, 5, 2);
            let b = kernel_blocks(&spec, &ds).unwrap();
            let full = b.full();
            let all = ds.x.concat(&ds.z).unwrap();
            for i in 0..11 {
                for j in 0..11 {
                    let e = kernel_eval(&spec, &all.sample_vec(i), &all.sample_vec(j)).unwrap();
                    assert!((full[(i, j)] - e).abs() <= 1e-12 * e.abs().max(1.0));
                }
            }
            assert_eq!(b.zx, b.xz.transpose().to_owned());
        }
    }

    #[test]
    fn rbf_diagonal_is_one() {
        let b = kernel_blocks(&KernelSpec::Rbf { gamma: 2.0 }, &random_ds(3, 7, 6, 3)).unwrap();
        assert!((0..7).all(|i| b.xx[(i, i)] == 1.0));
        assert!((0..6).all(|i| b.zz[(i, i)] == 1.0));
    }

    #[test]
    fn full_gram_is_psd() {
        for spec in [KernelSpec::Linear, KernelSpec::Rbf { gamma: 0.5 }] {
            let b = kernel_blocks(&spec, &random_ds(3, 8, 9, 4)).unwrap();
            let e = sym_eig(&SymMatrix::new(b.full())).unwrap();
            let (hi, lo) = (e.values[0], *e.values.last().unwrap());
            assert!(lo >= -1e-8 * hi, "{lo} vs {hi}");
        }
    }

    #[test]
    fn blocks_permute_with_samples() {
        let ds = random_ds(3, 5, 4, 5);
        let perm = [3, 0, 4, 1, 2];
        let px = ds.x.select(&perm);
        let lx = perm.iter().map(|&i| ds.labels_x[i]).collect();
        let pds = CrossViewDataset::new(px, ds.z.clone(), lx, ds.labels_z.clone()).unwrap();
        let spec = KernelSpec::Rbf { gamma: 0.4 };
        let a = kernel_blocks(&spec, &ds).unwrap();
        let b = kernel_blocks(&spec, &pds).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(b.xx[(i, j)], a.xx[(perm[i], perm[j])]);
            }
            for j in 0..4 {
                assert_eq!(b.xz[(i, j)], a.xz[(perm[i], j)]);
            }
        }
    }

    #[test]
    fn query_column_of_training_sample_is_gram_column() {
        let ds = random_ds(4, 5, 6, 6);
        let spec = KernelSpec::Rbf { gamma: 0.9 };
        let full = kernel_blocks(&spec, &ds).unwrap().full();
        let col = query_columns(&spec, &ds.x, &ds.z, &ds.x.sample_vec(2)).unwrap();
        for t in 0..11 {
            assert!((col[t] - full[(t, 2)]).abs() <= 1e-12);
        }
    }

    #[test]
    fn linear_query_columns_are_matvec() {
        let ds = random_ds(4, 5, 6, 7);
        let q = [0.3, -1.2, 0.5, 2.0];
        let col = query_columns(&KernelSpec::Linear, &ds.x, &ds.z, &q).unwrap();
        let all = ds.x.concat(&ds.z).unwrap();
        for t in 0..11 {
            let expect: f64 = (0..4).map(|r| all.sample(t)[r] * q[r]).sum();
            assert!((col[t] - expect).abs() <= 1e-13);
        }
        assert!(matches!(query_columns(&KernelSpec::Linear, &ds.x, &ds.z, &q[..3]), Err(Error::Shape(_))));
    }

    #[test]
    fn rbf_query_decays_far_away() {
        let ds = random_ds(3, 4, 4, 8);
        let spec = KernelSpec::Rbf { gamma: 0.5 };
        let mut prev = query_columns(&spec, &ds.x, &ds.z, &[2.0, 2.0, 2.0]).unwrap();
        for scale in [4.0, 8.0, 16.0] {
            let cur = query_columns(&spec, &ds.x, &ds.z, &[scale, scale, scale]).unwrap();
            assert!(cur.iter().zip(&prev).all(|(c, p)| c <= p));
            prev = cur;
        }
        assert!(prev.iter().all(|&v| v < 1e-100));
    }

    #[test]
    fn batch_matches_single_queries() {
        let ds = random_ds(3, 4, 5, 9);
        let spec = POLY;
        let batch = query_columns_batch(&spec, &ds.x, &ds.z, &ds.z).unwrap();
        for j in 0..5 {
            let single = query_columns(&spec, &ds.x, &ds.z, &ds.z.sample_vec(j)).unwrap();
            for t in 0..9 {
                assert!((batch[(t, j)] - single[t]).abs() <= 1e-13 * single[t].abs().max(1.0));
            }
        }
    }

    #[test]
    fn bandwidth_two_points() {
        let v = ViewMatrix::from_samples(2, &[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(bandwidth_from_view(&v, 0).unwrap(), 1.0 / 8.0);
    }

    #[test]
    fn bandwidth_degenerate() {
        let v = ViewMatrix::from_samples(2, &vec![vec![1.0, 1.0]; 4]).unwrap();
        assert!(matches!(bandwidth_from_view(&v, 0), Err(Error::DegenerateBandwidth)));
    }

    #[test]
    fn bandwidth_ignores_duplication() {
        let mut r = ChaCha8Rng::seed_from_u64(10);
        // 30 points: 435 pairs, full enumeration
        let v = random_view(3, 30, &mut r);
        let doubled = v.concat(&v).unwrap();
        let g1 = bandwidth_from_view(&v, 0).unwrap();
        // 60 points: 1770 pairs, still enumerated; duplicated distances keep the median
        let g2 = bandwidth_from_view(&doubled, 0).unwrap();
        assert!((g1 - g2).abs() <= 1e-12 * g1, "{g1} {g2}");
        // 120 points: subsampled; stays close to the full-enumeration value
        let quad = doubled.concat(&doubled).unwrap();
        let g4 = bandwidth_from_view(&quad, 3).unwrap();
        assert!((g1 - g4).abs() <= 0.1 * g1, "{g1} {g4}");
    }

    #[test]
    fn parse_kernel_specs() {
        assert_eq!("kernel=rbf gamma=0.5".parse::<KernelChoice>().unwrap(), KernelChoice::Rbf { gamma: Some(0.5) });
        assert_eq!(
            "kernel=poly degree=2 offset=1 scale=auto".parse::<KernelChoice>().unwrap(),
            KernelChoice::Polynomial {
                degree: 2,
                offset: 1.0,
                scale: None
            }
        );
        assert_eq!("kernel=linear".parse::<KernelChoice>().unwrap(), KernelChoice::Linear);
        assert_eq!("rbf".parse::<KernelChoice>().unwrap(), KernelChoice::Rbf { gamma: None });
        assert!("kernel=rbf gamma=-1".parse::<KernelChoice>().is_err());
        assert!("kernel=sigmoid".parse::<KernelChoice>().is_err());
        assert!("kernel=rbf width=3".parse::<KernelChoice>().is_err());
        let c: KernelChoice = "kernel=poly degree=3 offset=0.5 scale=2".parse().unwrap();
        assert_eq!(c.to_string().parse::<KernelChoice>().unwrap(), c);
    }

    #[test]
    fn poly_scale_defaults_to_inverse_dim() {
        let ds = random_ds(4, 3, 3, 11);
        let spec = KernelChoice::Polynomial {
            degree: 2,
            offset: 1.0,
            scale: None,
        }
        .resolve(&ds, 0)
        .unwrap();
        assert_eq!(
            spec,
            KernelSpec::Polynomial {
                degree: 2,
                offset: 1.0,
                scale: 0.25
            }
        );
    }

    #[test]
    fn explicit_map_inner_product_identity() {
        let mut r = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let d = r.gen_range(1..=4);
            let offset = r.gen_range(0.0..2.0);
            let scale = r.gen_range(0.1..2.0);
            let a: Vec<f64> = (0..d).map(|_| r.gen_range(-1.5..1.5)).collect();
            let b: Vec<f64> = (0..d).map(|_| r.gen_range(-1.5..1.5)).collect();
            let pa = explicit_poly_map(&a, 2, offset, scale).unwrap();
            let pb = explicit_poly_map(&b, 2, offset, scale).unwrap();
            let ip: f64 = pa.iter().zip(&pb).map(|(x, y)| x * y).sum();
            let k = kernel_eval(&KernelSpec::Polynomial { degree: 2, offset, scale }, &a, &b).unwrap();
            assert!((ip - k).abs() <= 1e-12 * k.abs().max(1.0));
        }
    }

    #[test]
    fn explicit_map_small_cases() {
        let phi = explicit_poly_map(&[0.0, 0.0, 0.0], 2, 1.0, 1.0).unwrap();
        assert_eq!(phi.len(), 10);
        assert_eq!(phi.iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(phi[0], 1.0);
        assert_eq!(explicit_poly_map(&[3.0], 2, 0.0, 1.0).unwrap(), vec![9.0]);
        assert!(matches!(explicit_poly_map(&[1.0], 3, 1.0, 1.0), Err(Error::Config(_))));
    }
}
