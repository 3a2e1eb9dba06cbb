//! Kernel XQDA.
//!
//! Projection directions are expanded over the training samples of both
//! views, `w = Φ_X·α + Φ_Z·β = Φ·θ`, so every scatter becomes an
//! `(n+m) × (n+m)` matrix in coefficient space built from kernel blocks
//! alone. Training cost is independent of the input dimension once the
//! kernel matrix exists.

use std::path::Path;
use std::time::Instant;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::container::{self, Decoder, Encoder};
use crate::dataset::{class_stats, CrossViewDataset, ViewMatrix};
use crate::error::{Error, Result};
use crate::kernels::{kernel_blocks, query_columns, query_columns_batch, KernelBlocks, KernelSpec};
use crate::kissme::quadratic_distances;
use crate::linalg::{gen_eig_ratio, symmetrize_in_place, EigPairs, SymMatrix};
use crate::xqda::{projected_core, subspace_dimension, DimensionRule, DEFAULT_RIDGE};

/// Per-sample cross-view class counts: `f[i] = m_{y(xᵢ)}`, `g[j] = n_{y(zⱼ)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecouplingPair {
    pub f_tilde: Vec<f64>,
    pub g_tilde: Vec<f64>,
}

pub fn decoupling_matrices(ds: &CrossViewDataset) -> DecouplingPair {
    let st = class_stats(ds);
    DecouplingPair {
        f_tilde: ds.labels_x.iter().map(|&l| st.per_class_z[l - 1] as f64).collect(),
        g_tilde: ds.labels_z.iter().map(|&l| st.per_class_x[l - 1] as f64).collect(),
    }
}

/// Kernel sums from each sample to every class of one view.
///
/// `h_xx[(p, q)] = Σ_{yᵢ=q} k(x_p, xᵢ)`, `h_zx[(p, q)] = Σ_{yᵢ=q} k(z_p, xᵢ)`,
/// `h_xz[(p, q)] = Σ_{yⱼ=q} k(x_p, zⱼ)`, `h_zz[(p, q)] = Σ_{yⱼ=q} k(z_p, zⱼ)`.
#[derive(Debug, Clone)]
pub struct ClassSumKernels {
    pub h_xx: Mat<f64>,
    pub h_zz: Mat<f64>,
    pub h_xz: Mat<f64>,
    pub h_zx: Mat<f64>,
}

impl ClassSumKernels {
    /// `[H_XX; H_ZX]`, class sums over view X.
    pub fn over_x(&self) -> Mat<f64> {
        stack_rows(&self.h_xx, &self.h_zx)
    }

    /// `[H_XZ; H_ZZ]`, class sums over view Z.
    pub fn over_z(&self) -> Mat<f64> {
        stack_rows(&self.h_xz, &self.h_zz)
    }
}

fn stack_rows(top: &Mat<f64>, bottom: &Mat<f64>) -> Mat<f64> {
    let n = top.nrows();
    Mat::from_fn(n + bottom.nrows(), top.ncols(), |i, j| if i < n { top[(i, j)] } else { bottom[(i - n, j)] })
}

fn indicator(labels: &[usize], classes: usize) -> Mat<f64> {
    Mat::from_fn(labels.len(), classes, |i, q| if labels[i] == q + 1 { 1.0 } else { 0.0 })
}

pub fn class_sum_kernels(ds: &CrossViewDataset, blocks: &KernelBlocks) -> Result<ClassSumKernels> {
    if blocks.n() != ds.n() || blocks.m() != ds.m() {
        return Err(Error::Shape(format!(
            "kernel blocks are for n={}, m={}, dataset has n={}, m={}",
            blocks.n(),
            blocks.m(),
            ds.n(),
            ds.m()
        )));
    }
    let c = ds.classes();
    let ix = indicator(&ds.labels_x, c);
    let iz = indicator(&ds.labels_z, c);
    Ok(ClassSumKernels {
        h_xx: &blocks.xx * &ix,
        h_zx: &blocks.zx * &ix,
        h_xz: &blocks.xz * &iz,
        h_zz: &blocks.zz * &iz,
    })
}

fn scale_columns(a: &Mat<f64>, w: &[f64]) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * w[j])
}

/// `Ã = K_{:,X}·diag(f̃)·K_{X,:}`
pub fn a_tilde(blocks: &KernelBlocks, dec: &DecouplingPair) -> Mat<f64> {
    let kx = blocks.x_columns();
    scale_columns(&kx, &dec.f_tilde) * kx.transpose()
}

/// `B̃ = K_{:,Z}·diag(g̃)·K_{Z,:}`
pub fn b_tilde(blocks: &KernelBlocks, dec: &DecouplingPair) -> Mat<f64> {
    let kz = blocks.z_columns();
    scale_columns(&kz, &dec.g_tilde) * kz.transpose()
}

/// `C̃ = [H_XX; H_ZX]·[H_XZ; H_ZZ]ᵀ`
pub fn c_tilde(h: &ClassSumKernels) -> Mat<f64> {
    h.over_x() * h.over_z().transpose()
}

/// `Ũ = m·K_{:,X}·K_{X,:}`
pub fn u_tilde(blocks: &KernelBlocks) -> Mat<f64> {
    let kx = blocks.x_columns();
    (&kx * kx.transpose()) * faer::Scale(blocks.m() as f64)
}

/// `Ṽ = n·K_{:,Z}·K_{Z,:}`
pub fn v_tilde(blocks: &KernelBlocks) -> Mat<f64> {
    let kz = blocks.z_columns();
    (&kz * kz.transpose()) * faer::Scale(blocks.n() as f64)
}

/// `Ẽ = K_{:,X}·𝟙_{n×m}·K_{Z,:}` through its rank-one factorization
/// `(K_{:,X}·1_n)(K_{:,Z}·1_m)ᵀ`.
pub fn e_tilde(blocks: &KernelBlocks) -> Mat<f64> {
    let u = row_sums(&blocks.x_columns());
    let v = row_sums(&blocks.z_columns());
    Mat::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
}

/// `Ẽ` with the all-ones matrix formed explicitly.
pub fn e_tilde_dense(blocks: &KernelBlocks) -> Mat<f64> {
    let ones = Mat::from_fn(blocks.n(), blocks.m(), |_, _| 1.0);
    blocks.x_columns() * ones * blocks.z_columns().transpose()
}

fn row_sums(a: &Mat<f64>) -> Vec<f64> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)]).sum()).collect()
}

/// `(Ã + B̃ − C̃ − C̃ᵀ)/n_S` before symmetrization.
pub fn lambda_s_raw(blocks: &KernelBlocks, dec: &DecouplingPair, h: &ClassSumKernels, n_s: usize) -> Result<Mat<f64>> {
    if n_s == 0 {
        return Err(Error::InsufficientPairs("no same-identity cross-view pairs".into()));
    }
    let c = c_tilde(h);
    let sum = a_tilde(blocks, dec) + b_tilde(blocks, dec) - &c - c.transpose();
    Ok(sum * faer::Scale(1.0 / n_s as f64))
}

pub fn lambda_s(blocks: &KernelBlocks, dec: &DecouplingPair, h: &ClassSumKernels, n_s: usize) -> Result<SymMatrix> {
    Ok(SymMatrix::new(lambda_s_raw(blocks, dec, h, n_s)?))
}

/// `(Ũ + Ṽ − Ẽ − Ẽᵀ − n_S·Λ_S)/n_D` before symmetrization. `e_sign`
/// multiplies `Ẽ`; anything other than 1 is a deliberate fault.
pub(crate) fn lambda_d_signed(
    blocks: &KernelBlocks,
    lambda_s: &SymMatrix,
    n_s: usize,
    n_d: usize,
    e_sign: f64,
) -> Result<Mat<f64>> {
    if n_d == 0 {
        return Err(Error::InsufficientPairs("no different-identity cross-view pairs".into()));
    }
    let dim = blocks.n() + blocks.m();
    if lambda_s.dim() != dim {
        return Err(Error::Shape(format!("Λ_S is {0}x{0}, kernel is {1}x{1}", lambda_s.dim(), dim)));
    }
    let e = e_tilde(blocks) * faer::Scale(e_sign);
    let sum = u_tilde(blocks) + v_tilde(blocks) - &e - e.transpose() - lambda_s.as_mat() * faer::Scale(n_s as f64);
    Ok(sum * faer::Scale(1.0 / n_d as f64))
}

pub fn lambda_d_raw(blocks: &KernelBlocks, lambda_s: &SymMatrix, n_s: usize, n_d: usize) -> Result<Mat<f64>> {
    lambda_d_signed(blocks, lambda_s, n_s, n_d, 1.0)
}

pub fn lambda_d(blocks: &KernelBlocks, lambda_s: &SymMatrix, n_s: usize, n_d: usize) -> Result<SymMatrix> {
    let mut raw = lambda_d_raw(blocks, lambda_s, n_s, n_d)?;
    symmetrize_in_place(&mut raw);
    Ok(SymMatrix::new(raw))
}

/// Coefficient-space scatters of a training set.
#[derive(Debug, Clone)]
pub struct LambdaPair {
    pub lambda_s: SymMatrix,
    pub lambda_d: SymMatrix,
    pub n_s: usize,
    pub n_d: usize,
}

pub fn lambdas(ds: &CrossViewDataset, blocks: &KernelBlocks) -> Result<LambdaPair> {
    lambdas_signed(ds, blocks, 1.0)
}

pub(crate) fn lambdas_signed(ds: &CrossViewDataset, blocks: &KernelBlocks, e_sign: f64) -> Result<LambdaPair> {
    let st = class_stats(ds);
    let dec = decoupling_matrices(ds);
    let h = class_sum_kernels(ds, blocks)?;
    let ls = lambda_s(blocks, &dec, &h, st.n_s)?;
    if st.n_d == 0 {
        return Err(Error::InsufficientPairs("no different-identity cross-view pairs".into()));
    }
    let ld = SymMatrix::new(lambda_d_signed(blocks, &ls, st.n_s, st.n_d, e_sign)?);
    Ok(LambdaPair {
        lambda_s: ls,
        lambda_d: ld,
        n_s: st.n_s,
        n_d: st.n_d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KxqdaOptions {
    /// Absolute ridge added to the diagonal of `Λ_S`.
    pub lambda: f64,
    pub max_b: Option<usize>,
}

impl Default for KxqdaOptions {
    fn default() -> Self {
        KxqdaOptions {
            lambda: DEFAULT_RIDGE,
            max_b: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct KxqdaTimings {
    pub kernel_secs: f64,
    pub lambda_secs: f64,
    pub eigen_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone)]
pub struct KxqdaModel {
    pub kernel: KernelSpec,
    pub train_x: ViewMatrix,
    pub train_z: ViewMatrix,
    /// `(n+m) × b` coefficients, X samples first.
    pub theta: Mat<f64>,
    /// `((ΘᵀΛ_SΘ)⁻¹ − (ΘᵀΛ_DΘ)⁻¹)₊`, `b × b`.
    pub gamma_plus: SymMatrix,
    pub eigenvalues: Vec<f64>,
    pub spectrum: Vec<f64>,
    pub rule: DimensionRule,
    pub lambda: f64,
    pub timings: KxqdaTimings,
}

/// Subspace and kernelized metric from coefficient-space scatters.
pub struct KxqdaSolution {
    pub theta: Mat<f64>,
    pub gamma_plus: SymMatrix,
    pub eigenvalues: Vec<f64>,
    pub spectrum: Vec<f64>,
    pub rule: DimensionRule,
}

pub fn kxqda_fit_lambdas(lambda_s: &SymMatrix, lambda_d: &SymMatrix, opts: &KxqdaOptions) -> Result<KxqdaSolution> {
    if !(opts.lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {}", opts.lambda)));
    }
    let eig = gen_eig_ratio(lambda_d, lambda_s, opts.lambda)?;
    let (b, rule) = subspace_dimension(&eig.values, opts.max_b);
    let theta = eig.leading_vectors(b);
    let gamma_plus = projected_core(&lambda_s.shifted(opts.lambda), lambda_d, &theta)?;
    let EigPairs { values, .. } = eig;
    Ok(KxqdaSolution {
        theta,
        gamma_plus,
        eigenvalues: values[..b].to_vec(),
        spectrum: values,
        rule,
    })
}

pub fn kxqda_fit(ds: &CrossViewDataset, spec: &KernelSpec, opts: &KxqdaOptions) -> Result<KxqdaModel> {
    let t0 = Instant::now();
    let blocks = kernel_blocks(spec, ds)?;
    let kernel_secs = t0.elapsed().as_secs_f64();
    let lp = lambdas(ds, &blocks)?;
    drop(blocks);
    let lambda_secs = t0.elapsed().as_secs_f64() - kernel_secs;
    let sol = kxqda_fit_lambdas(&lp.lambda_s, &lp.lambda_d, opts)?;
    let total_secs = t0.elapsed().as_secs_f64();
    log::debug!("kxqda: n+m={} b={} ({:?})", ds.n() + ds.m(), sol.theta.ncols(), sol.rule);
    Ok(KxqdaModel {
        kernel: *spec,
        train_x: ds.x.clone(),
        train_z: ds.z.clone(),
        theta: sol.theta,
        gamma_plus: sol.gamma_plus,
        eigenvalues: sol.eigenvalues,
        spectrum: sol.spectrum,
        rule: sol.rule,
        lambda: opts.lambda,
        timings: KxqdaTimings {
            kernel_secs,
            lambda_secs,
            eigen_secs: total_secs - kernel_secs - lambda_secs,
            total_secs,
        },
    })
}

impl KxqdaModel {
    pub fn dim(&self) -> usize {
        self.train_x.dim()
    }

    pub fn b(&self) -> usize {
        self.theta.ncols()
    }

    /// `Θᵀ·K(train, samples)`, `b × len`.
    pub fn project(&self, samples: &ViewMatrix) -> Result<Mat<f64>> {
        let k = query_columns_batch(&self.kernel, &self.train_x, &self.train_z, samples)?;
        Ok(self.theta.transpose() * k)
    }

    pub fn distances(&self, queries: &ViewMatrix, gallery: &ViewMatrix) -> Result<Mat<f64>> {
        let pq = self.project(queries)?;
        let pg = self.project(gallery)?;
        quadratic_distances(&self.gamma_plus, pq.as_ref(), pg.as_ref())
    }
}

/// `(Kᵢ − Kⱼ)ᵀ·Θ·Γ₊·Θᵀ·(Kᵢ − Kⱼ)` with `Kᵢ`, `Kⱼ` the kernel columns of the
/// two samples against the training set.
pub fn kxqda_distance(model: &KxqdaModel, qx: &[f64], qz: &[f64]) -> Result<f64> {
    let d = model.dim();
    if qx.len() != d || qz.len() != d {
        return Err(Error::Shape(format!("expected vectors of length {d}, got {} and {}", qx.len(), qz.len())));
    }
    let ki = query_columns(&model.kernel, &model.train_x, &model.train_z, qx)?;
    let kj = query_columns(&model.kernel, &model.train_x, &model.train_z, qz)?;
    let diff: Vec<f64> = ki.iter().zip(&kj).map(|(a, b)| a - b).collect();
    let p: Vec<f64> = (0..model.b())
        .map(|k| (0..diff.len()).map(|i| model.theta[(i, k)] * diff[i]).sum())
        .collect();
    Ok(model.gamma_plus.quad_form(&p))
}

// ---------------------------------------------------------------------------
// Serialization

const MAGIC: &[u8; 8] = b"KXQDAMD1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KxqdaSidecar {
    pub method: String,
    pub kernel: KernelSpec,
    pub dim: usize,
    pub n: usize,
    pub m: usize,
    pub b: usize,
    pub lambda: f64,
    pub rule: DimensionRule,
    pub eigenvalues: Vec<f64>,
    pub spectrum: Vec<f64>,
    pub timings: KxqdaTimings,
}

impl KxqdaModel {
    /// Binary layout, little-endian: magic `KXQDAMD1`; kernel tag u8
    /// (0 linear, 1 rbf, 2 polynomial) followed by gamma f64 for rbf or
    /// degree u64, offset f64, scale f64 for polynomial; u64 d, n, m, b;
    /// train X (d×n), train Z (d×m), Θ ((n+m)×b), Γ₊ (b×b), each row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new(MAGIC);
        e.u8(self.kernel.tag());
        match self.kernel {
            KernelSpec::Linear => {}
            KernelSpec::Rbf { gamma } => e.f64(gamma),
            KernelSpec::Polynomial { degree, offset, scale } => {
                e.u64(degree as u64);
                e.f64(offset);
                e.f64(scale);
            }
        }
        for v in [self.dim(), self.train_x.len(), self.train_z.len(), self.b()] {
            e.u64(v as u64);
        }
        e.mat(self.train_x.as_mat());
        e.mat(self.train_z.as_mat());
        e.mat(self.theta.as_ref());
        e.mat(self.gamma_plus.as_mat());
        e.into_bytes()
    }

    pub fn sidecar(&self) -> KxqdaSidecar {
        KxqdaSidecar {
            method: "kxqda".into(),
            kernel: self.kernel,
            dim: self.dim(),
            n: self.train_x.len(),
            m: self.train_z.len(),
            b: self.b(),
            lambda: self.lambda,
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

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = container::read_file(path)?;
        let mut dec = Decoder::new(&bytes, MAGIC, path)?;
        let kernel = match dec.u8()? {
            0 => KernelSpec::Linear,
            1 => KernelSpec::Rbf { gamma: dec.f64()? },
            2 => {
                let degree = u32::try_from(dec.u64()?).map_err(|_| dec.error("polynomial degree overflows"))?;
                KernelSpec::Polynomial {
                    degree,
                    offset: dec.f64()?,
                    scale: dec.f64()?,
                }
            }
            t => return Err(dec.error(&format!("unknown kernel tag {t}"))),
        };
        kernel.validate().map_err(|e| dec.error(&e.to_string()))?;
        let d = dec.usize()?;
        let n = dec.usize()?;
        let m = dec.usize()?;
        let b = dec.usize()?;
        let train_x = ViewMatrix::from_mat(dec.mat(d, n)?).map_err(|e| dec.error(&e.to_string()))?;
        let train_z = ViewMatrix::from_mat(dec.mat(d, m)?).map_err(|e| dec.error(&e.to_string()))?;
        let theta = dec.mat(n + m, b)?;
        let gamma_plus = SymMatrix::new(dec.mat(b, b)?);
        dec.finish()?;
        let side: Option<KxqdaSidecar> = std::fs::read(container::sidecar_path(path))
            .ok()
            .and_then(|s| serde_json::from_slice(&s).ok());
        let (eigenvalues, spectrum, rule, lambda, timings) = match side {
            Some(s) => (s.eigenvalues, s.spectrum, s.rule, s.lambda, s.timings),
            None => (Vec::new(), Vec::new(), DimensionRule::AboveOne, f64::NAN, KxqdaTimings::default()),
        };
        Ok(KxqdaModel {
            kernel,
            train_x,
            train_z,
            theta,
            gamma_plus,
            eigenvalues,
            spectrum,
            rule,
            lambda,
            timings,
        })
    }
}
