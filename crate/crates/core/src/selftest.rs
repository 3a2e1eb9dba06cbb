//! Oracle checks: every closed-form shortcut against a slow direct route.

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dataset::{class_stats, synth_crossview, CrossViewDataset, SynthConfig, ViewMatrix, Warp};
use crate::error::Result;
use crate::eval::{cmc, DistanceMatrix};
use crate::kernels::{explicit_poly_map, explicit_poly_view, kernel_blocks, kernel_eval, KernelSpec};
use crate::kxqda::{class_sum_kernels, e_tilde, e_tilde_dense, kxqda_distance, kxqda_fit, lambdas_signed, KxqdaOptions};
use crate::linalg::{gen_eig_ratio, max_abs, rel_frobenius_error, SymMatrix};
use crate::rng;
use crate::xqda::{xqda_distance, xqda_fit, xqda_scatter_bruteforce, xqda_scatter_efficient, XqdaOptions};

/// Random dataset where every class occurs in both views (needs `n, m ≥ c`).
pub fn random_dataset<R: Rng>(r: &mut R, n: usize, m: usize, d: usize, c: usize) -> CrossViewDataset {
    let mut lx: Vec<usize> = (0..n).map(|_| r.gen_range(1..=c)).collect();
    let mut lz: Vec<usize> = (0..m).map(|_| r.gen_range(1..=c)).collect();
    let (ox, oz) = (r.gen_range(0..n), r.gen_range(0..m));
    for k in 0..c.min(n).min(m) {
        lx[(ox + k) % n] = k + 1;
        lz[(oz + k) % m] = k + 1;
    }
    let shift: f64 = r.gen_range(-2.0..2.0);
    let x = Mat::from_fn(d, n, |_, _| r.sample::<f64, _>(StandardNormal) + shift);
    let z = Mat::from_fn(d, m, |_, _| r.sample::<f64, _>(StandardNormal) * 1.5);
    let ds = CrossViewDataset::new(ViewMatrix::from_mat(x).unwrap(), ViewMatrix::from_mat(z).unwrap(), lx, lz);
    ds.expect("generated labels are valid")
}

/// Largest relative Frobenius error between efficient and brute-force
/// scatters over `count` random datasets with `n, m ≤ 40`, `d ≤ 16`, `c ≤ 8`.
pub fn scatter_equivalence(count: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in 0..count {
        let mut r = rng::stream(seed, "selftest/scatter", t as u64);
        let c = r.gen_range(2..=8);
        let ds = {
            let (n, m, d) = (r.gen_range(c..=40), r.gen_range(c..=40), r.gen_range(1..=16));
            random_dataset(&mut r, n, m, d, c)
        };
        let e = xqda_scatter_efficient(&ds)?;
        let b = xqda_scatter_bruteforce(&ds)?;
        worst = worst
            .max(rel_frobenius_error(e.sigma_s.as_mat(), b.sigma_s.as_mat()))
            .max(rel_frobenius_error(e.sigma_d.as_mat(), b.sigma_d.as_mat()));
    }
    Ok(worst)
}

/// Largest `|θᵀΛθ − wᵀΣw| / |wᵀΣw|` with `w = [X Z]θ`, linear kernel, for
/// the similar and dissimilar forms. `e_sign = -1` plants a fault.
pub fn primal_dual(count: usize, seed: u64, e_sign: f64) -> Result<(f64, f64)> {
    let (mut ws, mut wd): (f64, f64) = (0.0, 0.0);
    for t in 0..count {
        let mut r = rng::stream(seed, "selftest/primal-dual", t as u64);
        let c = r.gen_range(2..=8);
        let ds = {
            let (n, m, d) = (r.gen_range(c..=40), r.gen_range(c..=40), r.gen_range(1..=16));
            random_dataset(&mut r, n, m, d, c)
        };
        let lp = lambdas_signed(&ds, &kernel_blocks(&KernelSpec::Linear, &ds)?, e_sign)?;
        let sp = xqda_scatter_efficient(&ds)?;
        let theta: Vec<f64> = (0..ds.n() + ds.m()).map(|_| r.sample(StandardNormal)).collect();
        let w = primal_vector(&ds, &theta);
        let (ps, pd) = (sp.sigma_s.quad_form(&w), sp.sigma_d.quad_form(&w));
        ws = ws.max((lp.lambda_s.quad_form(&theta) - ps).abs() / ps.abs());
        wd = wd.max((lp.lambda_d.quad_form(&theta) - pd).abs() / pd.abs());
    }
    Ok((ws, wd))
}

/// `[X Z]·θ`
pub fn primal_vector(ds: &CrossViewDataset, theta: &[f64]) -> Vec<f64> {
    let (x, z, n) = (ds.x.as_mat(), ds.z.as_mat(), ds.n());
    (0..ds.dim())
        .map(|i| {
            (0..n).map(|a| x[(i, a)] * theta[a]).sum::<f64>() + (0..ds.m()).map(|b| z[(i, b)] * theta[n + b]).sum::<f64>()
        })
        .collect()
}

/// Largest deviation of the rank-one `Ẽ` from the dense product, relative
/// to the largest entry.
pub fn e_tilde_paths(count: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in 0..count {
        let mut r = rng::stream(seed, "selftest/e-tilde", t as u64);
        let ds = {
            let (n, m, d) = (r.gen_range(3..30), r.gen_range(3..30), r.gen_range(1..10));
            random_dataset(&mut r, n, m, d, 3)
        };
        let blocks = kernel_blocks(&KernelSpec::Rbf { gamma: r.gen_range(0.05..1.0) }, &ds)?;
        let (a, b) = (e_tilde(&blocks), e_tilde_dense(&blocks));
        worst = worst.max(max_abs((&a - &b).as_ref()) / max_abs(b.as_ref()));
    }
    Ok(worst)
}

/// Class-sum kernels against a double loop over kernel evaluations.
pub fn class_sum_enumeration(count: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in 0..count {
        let mut r = rng::stream(seed, "selftest/class-sums", t as u64);
        let c = r.gen_range(1..=5);
        let ds = {
            let (n, m, d) = (r.gen_range(c..20), r.gen_range(c..20), r.gen_range(1..6));
            random_dataset(&mut r, n, m, d, c)
        };
        let spec = KernelSpec::Polynomial {
            degree: 3,
            offset: 0.5,
            scale: 0.3,
        };
        let h = class_sum_kernels(&ds, &kernel_blocks(&spec, &ds)?)?;
        let views = [(&ds.x, &ds.labels_x), (&ds.z, &ds.labels_z)];
        for (row_view, col_view, hm) in [(0, 0, &h.h_xx), (1, 0, &h.h_zx), (0, 1, &h.h_xz), (1, 1, &h.h_zz)] {
            let (rows, _) = views[row_view];
            let (cols, labels) = views[col_view];
            for p in 0..rows.len() {
                for q in 0..c {
                    let mut e = 0.0;
                    for i in 0..cols.len() {
                        if labels[i] == q + 1 {
                            e += kernel_eval(&spec, &rows.sample_vec(p), &cols.sample_vec(i))?;
                        }
                    }
                    worst = worst.max((hm[(p, q)] - e).abs() / e.abs().max(1.0));
                }
            }
        }
    }
    Ok(worst)
}

/// `⟨φ(a), φ(b)⟩` against the polynomial kernel on random pairs, `d ≤ 4`.
pub fn poly_map_identity(count: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut r = rng::stream(seed, "selftest/poly-map", 0);
    for _ in 0..count {
        let d = r.gen_range(1..=4);
        let a: Vec<f64> = (0..d).map(|_| r.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| r.gen_range(-2.0..2.0)).collect();
        let (offset, scale) = (r.gen_range(0.0..2.0), r.gen_range(0.1..2.0));
        let k = kernel_eval(&KernelSpec::Polynomial { degree: 2, offset, scale }, &a, &b)?;
        let fa = explicit_poly_map(&a, 2, offset, scale)?;
        let fb = explicit_poly_map(&b, 2, offset, scale)?;
        let dot: f64 = fa.iter().zip(&fb).map(|(x, y)| x * y).sum();
        worst = worst.max((dot - k).abs() / k.abs().max(1.0));
    }
    Ok(worst)
}

/// k-XQDA with a degree-2 polynomial kernel against XQDA on the explicit
/// feature map.
#[derive(Debug, Clone, Serialize)]
pub struct ExplicitPhiOutcome {
    pub b_kernel: usize,
    pub b_explicit: usize,
    pub eigenvalue_error: f64,
    pub distance_error: f64,
}

pub fn explicit_phi(seed: u64, queries: usize) -> Result<ExplicitPhiOutcome> {
    let (offset, scale) = (1.0, 0.5);
    let ds = synth_crossview(
        &SynthConfig {
            classes: 20,
            per_class_x: 2,
            per_class_z: 2,
            dim: 3,
            warp: Warp::Quadratic,
            noise: 0.4,
            ..Default::default()
        },
        seed,
    )?;
    let spec = KernelSpec::Polynomial { degree: 2, offset, scale };
    let k = kxqda_fit(&ds, &spec, &KxqdaOptions::default())?;
    let fds = CrossViewDataset::new(
        explicit_poly_view(&ds.x, offset, scale)?,
        explicit_poly_view(&ds.z, offset, scale)?,
        ds.labels_x.clone(),
        ds.labels_z.clone(),
    )?;
    let x = xqda_fit(
        &fds,
        &XqdaOptions {
            ridge: 1e-12,
            ..Default::default()
        },
    )?;
    let mut eig_err = if k.b() == x.b() { 0.0 } else { f64::INFINITY };
    for (a, b) in k.eigenvalues.iter().zip(&x.eigenvalues) {
        eig_err = f64::max(eig_err, (a - b).abs() / b.abs());
    }
    let mut r = rng::stream(seed, "selftest/explicit-phi", 0);
    let mut dist_err: f64 = 0.0;
    for _ in 0..queries {
        let a: Vec<f64> = (0..3).map(|_| r.gen_range(-1.5..1.5)).collect();
        let b: Vec<f64> = (0..3).map(|_| r.gen_range(-1.5..1.5)).collect();
        let dk = kxqda_distance(&k, &a, &b)?;
        let dx = xqda_distance(&x, &explicit_poly_map(&a, 2, offset, scale)?, &explicit_poly_map(&b, 2, offset, scale)?)?;
        dist_err = dist_err.max((dk - dx).abs() / dx.abs());
    }
    Ok(ExplicitPhiOutcome {
        b_kernel: k.b(),
        b_explicit: x.b(),
        eigenvalue_error: eig_err,
        distance_error: dist_err,
    })
}

/// Average ranks, ties sharing the mean position.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va * vb).sqrt()
}

/// Spearman correlation between XQDA and linear-kernel k-XQDA distances on
/// a 20×20 grid, full-rank training data with `n+m > d`.
pub fn linear_consistency(seed: u64) -> Result<f64> {
    let ds = synth_crossview(
        &SynthConfig {
            classes: 15,
            per_class_x: 2,
            per_class_z: 2,
            dim: 6,
            noise: 0.5,
            ..Default::default()
        },
        seed,
    )?;
    let x = xqda_fit(&ds, &XqdaOptions::default())?;
    let k = kxqda_fit(&ds, &KernelSpec::Linear, &KxqdaOptions::default())?;
    let mut r = rng::stream(seed, "selftest/linear-grid", 0);
    let grid = |r: &mut rand_chacha::ChaCha8Rng| {
        ViewMatrix::from_mat(Mat::from_fn(6, 20, |_, _| r.sample::<f64, _>(StandardNormal))).unwrap()
    };
    let (q, g) = (grid(&mut r), grid(&mut r));
    let dx = x.distances(&q, &g)?;
    let dk = k.distances(&q, &g)?;
    let flat = |m: &Mat<f64>| (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect::<Vec<_>>();
    Ok(spearman(&flat(&dx), &flat(&dk)))
}

/// Number of random distance matrices on which the fast CMC disagrees with
/// sorting each row.
pub fn cmc_vs_naive(count: usize, seed: u64) -> Result<f64> {
    let mut mismatches = 0;
    for t in 0..count {
        let mut r = rng::stream(seed, "selftest/cmc", t as u64);
        let values = Mat::from_fn(10, 10, |_, _| r.gen_range(0..8) as f64);
        let gl: Vec<usize> = (0..10).map(|_| r.gen_range(1..=5)).collect();
        let ql: Vec<usize> = (0..10).map(|_| gl[r.gen_range(0..10)]).collect();
        let dm = DistanceMatrix::new(values, ql, gl)?;
        let fast = cmc(&dm)?.accuracy;
        let mut hits = vec![0usize; 10];
        for i in 0..10 {
            let mut order: Vec<usize> = (0..10).collect();
            order.sort_by(|&a, &b| dm.values[(i, a)].total_cmp(&dm.values[(i, b)]));
            let pos = order.iter().position(|&j| dm.gallery_labels[j] == dm.query_labels[i]).unwrap();
            hits[pos..].iter_mut().for_each(|h| *h += 1);
        }
        let naive: Vec<f64> = hits.iter().map(|&h| h as f64 / 10.0).collect();
        if naive != fast {
            mismatches += 1;
        }
    }
    Ok(mismatches as f64)
}

/// Relative residual `‖Aθ − λ(B + ridge·I)θ‖ / ‖Aθ‖` over random pencils.
pub fn gen_eig_residual(count: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in 0..count {
        let mut r = rng::stream(seed, "selftest/gen-eig", t as u64);
        let n = r.gen_range(2..30);
        let f = Mat::from_fn(n, n + 2, |_, _| r.sample::<f64, _>(StandardNormal));
        let g = Mat::from_fn(n, n + 2, |_, _| r.sample::<f64, _>(StandardNormal));
        let a = SymMatrix::new(&f * f.transpose());
        let b = SymMatrix::new(&g * g.transpose());
        let eig = gen_eig_ratio(&a, &b, 1e-9)?;
        let bb = b.shifted(1e-9);
        for k in 0..n {
            let v = eig.vectors.col(k);
            let av = a.as_mat() * v;
            let bv = bb.as_mat() * v;
            let res = (0..n).map(|i| (av[i] - eig.values[k] * bv[i]).powi(2)).sum::<f64>().sqrt();
            let scale = (0..n).map(|i| av[i].powi(2)).sum::<f64>().sqrt().max(eig.values[k].abs() * bv.norm_l2());
            worst = worst.max(res / scale);
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    /// observed ≤ tolerance
    AtMost,
    /// observed ≥ tolerance
    AtLeast,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub bound: Bound,
    pub tolerance: f64,
    pub observed: f64,
    pub passed: bool,
    pub error: Option<String>,
}

impl Check {
    fn new(name: &'static str, bound: Bound, tolerance: f64, observed: Result<f64>) -> Self {
        let (observed, error) = match observed {
            Ok(v) => (v, None),
            Err(e) => (f64::NAN, Some(e.to_string())),
        };
        let passed = match bound {
            Bound::AtMost => observed <= tolerance,
            Bound::AtLeast => observed >= tolerance,
        };
        Check {
            name,
            bound,
            tolerance,
            observed,
            passed,
            error,
        }
    }

    pub fn line(&self) -> String {
        let op = match self.bound {
            Bound::AtMost => "<=",
            Bound::AtLeast => ">=",
        };
        let status = if self.passed { "PASS" } else { "FAIL" };
        match &self.error {
            Some(e) => format!("{status}  {:<44} error: {e}", self.name),
            None => format!("{status}  {:<44} observed {:.3e} {op} {:.0e}", self.name, self.observed, self.tolerance),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Negates `Ẽ` when forming `Λ_D`.
    FlipE,
}

impl std::str::FromStr for Fault {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flip-e" => Ok(Fault::FlipE),
            _ => Err(crate::Error::Config(format!("unknown fault {s:?}; known: flip-e"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SelftestOptions {
    pub quick: bool,
    pub seed: u64,
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

/// Runs every check; failures do not stop later checks.
pub fn run_selftest(opts: &SelftestOptions) -> SelftestReport {
    let n = if opts.quick { 20 } else { 100 };
    let seed = opts.seed;
    let e_sign = if opts.fault == Some(Fault::FlipE) { -1.0 } else { 1.0 };
    let pd = primal_dual(n, seed, e_sign);
    let (pd_s, pd_d) = match pd {
        Ok((s, d)) => (Ok(s), Ok(d)),
        Err(e) => {
            let msg = e.to_string();
            (Err(e), Err(crate::Error::InvalidMatrix(msg)))
        }
    };
    let phi = explicit_phi(seed, 50);
    let (phi_eig, phi_dist) = match phi {
        Ok(o) => (Ok(o.eigenvalue_error), Ok(o.distance_error)),
        Err(e) => {
            let msg = e.to_string();
            (Err(e), Err(crate::Error::InvalidMatrix(msg)))
        }
    };
    let mut checks = vec![
        Check::new("scatter: efficient vs brute force", Bound::AtMost, 1e-10, scatter_equivalence(n, seed)),
        Check::new("lambda_s: primal-dual, linear kernel", Bound::AtMost, 1e-9, pd_s),
        Check::new("lambda_d: primal-dual, linear kernel", Bound::AtMost, 1e-9, pd_d),
        Check::new("e_tilde: rank-one vs dense ones", Bound::AtMost, 1e-12, e_tilde_paths(n / 5, seed)),
        Check::new("class-sum kernels vs enumeration", Bound::AtMost, 1e-12, class_sum_enumeration(n / 10, seed)),
        Check::new("explicit poly map inner products", Bound::AtMost, 1e-12, poly_map_identity(100, seed)),
        Check::new("kxqda poly vs explicit-map xqda: eigenvalues", Bound::AtMost, 1e-4, phi_eig),
        Check::new("kxqda poly vs explicit-map xqda: distances", Bound::AtMost, 1e-4, phi_dist),
        Check::new("kxqda linear vs xqda: Spearman", Bound::AtLeast, 0.999, linear_consistency(seed)),
        Check::new("cmc vs per-row sort: mismatches", Bound::AtMost, 0.0, cmc_vs_naive(n, seed)),
        Check::new("generalized eigen residual", Bound::AtMost, 1e-8, gen_eig_residual(n / 5, seed)),
    ];
    if !opts.quick {
        checks.push(Check::new(
            "n_S from scatter equals class_stats",
            Bound::AtMost,
            0.0,
            pair_count_agreement(n, seed),
        ));
    }
    SelftestReport { checks }
}

fn pair_count_agreement(count: usize, seed: u64) -> Result<f64> {
    let mut bad = 0;
    for t in 0..count {
        let mut r = rng::stream(seed, "selftest/pair-count", t as u64);
        let c = r.gen_range(2..=8);
        let ds = {
            let (n, m, d) = (r.gen_range(c..=40), r.gen_range(c..=40), 2);
            random_dataset(&mut r, n, m, d, c)
        };
        let st = class_stats(&ds);
        let sp = xqda_scatter_efficient(&ds)?;
        if sp.n_s != st.n_s || sp.n_d != st.n_d {
            bad += 1;
        }
    }
    Ok(bad as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let r = run_selftest(&SelftestOptions {
            quick: true,
            ..Default::default()
        });
        for c in &r.checks {
            assert!(c.passed, "{}", c.line());
        }
    }

    #[test]
    fn flipped_e_is_caught() {
        let r = run_selftest(&SelftestOptions {
            quick: true,
            fault: Some(Fault::FlipE),
            ..Default::default()
        });
        let failed: Vec<&str> = r.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        assert_eq!(failed, vec!["lambda_d: primal-dual, linear kernel"]);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }
}
