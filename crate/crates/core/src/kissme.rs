//! KISSME: Mahalanobis metric from the log-likelihood ratio of the
//! similar-pair and dissimilar-pair difference distributions.

use faer::{Col, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::dataset::{CrossViewDataset, ViewMatrix};
use crate::error::{Error, Result};
use crate::linalg::{psd_project, spd_inverse, sym_eig, SymMatrix};

/// Ridge added to each scatter before inversion, relative to `trace/d`.
pub const DEFAULT_RIDGE: f64 = 1e-7;

/// Index pairs `(i, j)` into two sample sets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSet {
    pub similar: Vec<(usize, usize)>,
    pub dissimilar: Vec<(usize, usize)>,
}

impl PairSet {
    /// Every cross-view pair, split by identity.
    pub fn all_cross_view(ds: &CrossViewDataset) -> Self {
        let mut p = PairSet::default();
        for (i, &a) in ds.labels_x.iter().enumerate() {
            for (j, &b) in ds.labels_z.iter().enumerate() {
                if a == b {
                    p.similar.push((i, j));
                } else {
                    p.dissimilar.push((i, j));
                }
            }
        }
        p
    }

    pub fn validate(&self, len_a: usize, len_b: usize) -> Result<()> {
        for &(i, j) in self.similar.iter().chain(&self.dissimilar) {
            if i >= len_a || j >= len_b {
                return Err(Error::Shape(format!("pair ({i}, {j}) out of range {len_a}x{len_b}")));
            }
        }
        let sim: std::collections::HashSet<_> = self.similar.iter().collect();
        if let Some(p) = self.dissimilar.iter().find(|p| sim.contains(p)) {
            return Err(Error::Config(format!("pair {p:?} is both similar and dissimilar")));
        }
        Ok(())
    }
}

fn difference_scatter(a: &ViewMatrix, b: &ViewMatrix, pairs: &[(usize, usize)]) -> SymMatrix {
    let d = a.dim();
    let (am, bm) = (a.as_mat(), b.as_mat());
    let diffs = Mat::from_fn(d, pairs.len(), |r, k| {
        let (i, j) = pairs[k];
        am[(r, i)] - bm[(r, j)]
    });
    SymMatrix::new(&diffs * diffs.transpose())
}

/// Unnormalized sums `Σ (a−b)(a−b)ᵀ` over the similar and dissimilar pairs.
pub fn pair_scatter(a: &ViewMatrix, b: &ViewMatrix, pairs: &PairSet) -> Result<(SymMatrix, SymMatrix)> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("sample dims {} and {} differ", a.dim(), b.dim())));
    }
    pairs.validate(a.len(), b.len())?;
    if pairs.similar.is_empty() {
        return Err(Error::InsufficientPairs("no similar pairs".into()));
    }
    if pairs.dissimilar.is_empty() {
        return Err(Error::InsufficientPairs("no dissimilar pairs".into()));
    }
    Ok((difference_scatter(a, b, &pairs.similar), difference_scatter(a, b, &pairs.dissimilar)))
}

fn ridged_inverse(s: &SymMatrix, ridge: f64) -> Result<SymMatrix> {
    let shift = ridge * s.trace().abs() / s.dim() as f64;
    spd_inverse(&s.shifted(shift), 0.0).map_err(|_| Error::SingularScatter)
}

/// `Σ_S⁻¹ − Σ_D⁻¹` with each scatter ridged by `ridge·trace/d`.
pub fn inverse_difference(sigma_s: &SymMatrix, sigma_d: &SymMatrix, ridge: f64) -> Result<SymMatrix> {
    if sigma_s.dim() != sigma_d.dim() {
        return Err(Error::Shape("scatter matrices differ in size".into()));
    }
    let is = ridged_inverse(sigma_s, ridge)?;
    let id = ridged_inverse(sigma_d, ridge)?;
    Ok(SymMatrix::new(is.as_mat() - id.as_mat()))
}

/// Log-likelihood-ratio score `Δᵀ(Σ_S⁻¹ − Σ_D⁻¹)Δ`, up to the dropped
/// constant terms. Larger means more likely dissimilar.
pub fn llr_score(sigma_s: &SymMatrix, sigma_d: &SymMatrix, delta: &[f64], ridge: f64) -> Result<f64> {
    if delta.len() != sigma_s.dim() {
        return Err(Error::Shape(format!("delta has length {}, scatter is {}", delta.len(), sigma_s.dim())));
    }
    Ok(inverse_difference(sigma_s, sigma_d, ridge)?.quad_form(delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KissmeOptions {
    /// Divide the scatter sums by their pair counts.
    pub normalize: bool,
    pub ridge: f64,
    /// Optional PCA pre-projection to this many dimensions.
    pub pca_dim: Option<usize>,
}

impl Default for KissmeOptions {
    fn default() -> Self {
        KissmeOptions {
            normalize: true,
            ridge: DEFAULT_RIDGE,
            pca_dim: None,
        }
    }
}

/// Linear pre-projection `x ↦ basisᵀ(x − mean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `d × p`, orthonormal columns.
    pub basis: Mat<f64>,
}

impl Pca {
    pub fn fit(samples: &ViewMatrix, dim: usize) -> Result<Self> {
        let d = samples.dim();
        if dim == 0 || dim > d {
            return Err(Error::Config(format!("PCA dimension {dim} outside 1..={d}")));
        }
        let n = samples.len() as f64;
        let x = samples.as_mat();
        let mean: Vec<f64> = (0..d).map(|r| (0..samples.len()).map(|i| x[(r, i)]).sum::<f64>() / n).collect();
        let centered = Mat::from_fn(d, samples.len(), |r, i| x[(r, i)] - mean[r]);
        let cov = SymMatrix::new(&centered * centered.transpose());
        let eig = sym_eig(&cov)?;
        Ok(Pca {
            mean,
            basis: eig.leading_vectors(dim),
        })
    }

    pub fn apply(&self, view: &ViewMatrix) -> Result<ViewMatrix> {
        if view.dim() != self.mean.len() {
            return Err(Error::Shape(format!("PCA expects dim {}, got {}", self.mean.len(), view.dim())));
        }
        let x = view.as_mat();
        let centered = Mat::from_fn(view.dim(), view.len(), |r, i| x[(r, i)] - self.mean[r]);
        ViewMatrix::from_mat(self.basis.transpose() * &centered)
    }
}

#[derive(Debug, Clone)]
pub struct KissmeModel {
    /// PSD metric in the (possibly PCA-reduced) space.
    pub metric: SymMatrix,
    pub pca: Option<Pca>,
}

/// `M = (Σ_S⁻¹ − Σ_D⁻¹)₊`.
pub fn kissme_fit(sigma_s: &SymMatrix, sigma_d: &SymMatrix, ridge: f64) -> Result<KissmeModel> {
    Ok(KissmeModel {
        metric: psd_project(&inverse_difference(sigma_s, sigma_d, ridge)?)?,
        pca: None,
    })
}

/// Fits on all cross-view pairs of a training set.
pub fn kissme_train(ds: &CrossViewDataset, opts: &KissmeOptions) -> Result<KissmeModel> {
    let pca = opts.pca_dim.map(|p| Pca::fit(&ds.x.concat(&ds.z)?, p)).transpose()?;
    let (x, z) = match &pca {
        Some(p) => (p.apply(&ds.x)?, p.apply(&ds.z)?),
        None => (ds.x.clone(), ds.z.clone()),
    };
    let pairs = PairSet::all_cross_view(ds);
    let (mut s, mut d) = pair_scatter(&x, &z, &pairs)?;
    if opts.normalize {
        s = s.scaled(1.0 / pairs.similar.len() as f64);
        d = d.scaled(1.0 / pairs.dissimilar.len() as f64);
    }
    let mut model = kissme_fit(&s, &d, opts.ridge)?;
    model.pca = pca;
    Ok(model)
}

impl KissmeModel {
    pub fn input_dim(&self) -> usize {
        self.pca.as_ref().map_or(self.metric.dim(), |p| p.mean.len())
    }

    /// Maps raw samples into the space the metric lives in.
    pub fn embed(&self, view: &ViewMatrix) -> Result<Mat<f64>> {
        match &self.pca {
            Some(p) => Ok(p.apply(view)?.as_mat().to_owned()),
            None => Ok(view.as_mat().to_owned()),
        }
    }

    /// Pairwise distances between the columns of two embedded sets.
    pub fn distances(&self, queries: &ViewMatrix, gallery: &ViewMatrix) -> Result<Mat<f64>> {
        let q = self.embed(queries)?;
        let g = self.embed(gallery)?;
        quadratic_distances(&self.metric, q.as_ref(), g.as_ref())
    }
}

/// `(a−b)ᵀ M (a−b)`.
pub fn kissme_distance(model: &KissmeModel, a: &[f64], b: &[f64]) -> Result<f64> {
    let d = model.input_dim();
    if a.len() != d || b.len() != d {
        return Err(Error::Shape(format!("expected vectors of length {d}, got {} and {}", a.len(), b.len())));
    }
    let delta: Vec<f64> = match &model.pca {
        // mean cancels in the difference
        Some(p) => {
            let diff = Col::from_fn(d, |i| a[i] - b[i]);
            let proj = p.basis.transpose() * &diff;
            (0..proj.nrows()).map(|i| proj[i]).collect()
        }
        None => a.iter().zip(b).map(|(x, y)| x - y).collect(),
    };
    Ok(model.metric.quad_form(&delta))
}

/// `F` with `FᵀF = M` for a PSD `M`, dropping non-positive directions.
pub(crate) fn metric_factor(metric: &SymMatrix) -> Result<Mat<f64>> {
    let eig = sym_eig(metric)?;
    let keep: Vec<usize> = (0..eig.len()).filter(|&k| eig.values[k] > 0.0).collect();
    let v = &eig.vectors;
    Ok(Mat::from_fn(keep.len(), metric.dim(), |r, i| eig.values[keep[r]].sqrt() * v[(i, keep[r])]))
}

/// All-pairs `(qᵢ − gⱼ)ᵀ M (qᵢ − gⱼ)` as squared distances in the factored
/// space, so identical columns give exactly 0.
pub(crate) fn quadratic_distances(metric: &SymMatrix, q: MatRef<'_, f64>, g: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let f = metric_factor(metric)?;
    Ok(factored_distances(f.as_ref(), q, g))
}

pub(crate) fn factored_distances(f: MatRef<'_, f64>, q: MatRef<'_, f64>, g: MatRef<'_, f64>) -> Mat<f64> {
    let fq = f * q;
    let fg = f * g;
    Mat::from_fn(q.ncols(), g.ncols(), |i, j| {
        (0..fq.nrows()).map(|r| {
            let t = fq[(r, i)] - fg[(r, j)];
            t * t
        }).sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn view(d: usize, n: usize, r: &mut ChaCha8Rng) -> ViewMatrix {
        ViewMatrix::from_mat(Mat::from_fn(d, n, |_, _| r.gen_range(-1.0..1.0))).unwrap()
    }

    fn random_pd(n: usize, r: &mut ChaCha8Rng) -> SymMatrix {
        let a = Mat::from_fn(n, n + 2, |_, _| r.gen_range(-1.0..1.0));
        SymMatrix::new(&a * a.transpose()).shifted(0.2)
    }

    fn dense_inverse(a: &SymMatrix) -> Mat<f64> {
        use faer::linalg::solvers::DenseSolveCore;
        a.as_mat().partial_piv_lu().inverse()
    }

    #[test]
    fn single_similar_pair_scatter() {
        let a = ViewMatrix::from_samples(2, &[vec![1.0, 0.0], vec![5.0, 5.0]]).unwrap();
        let b = ViewMatrix::from_samples(2, &[vec![0.0, 0.0]]).unwrap();
        let pairs = PairSet {
            similar: vec![(0, 0)],
            dissimilar: vec![(1, 0)],
        };
        let (s, _) = pair_scatter(&a, &b, &pairs).unwrap();
        assert_eq!(s, SymMatrix::diagonal(&[1.0, 0.0]));
    }

    #[test]
    fn identical_pair_contributes_nothing() {
        let a = ViewMatrix::from_samples(2, &[vec![0.4, -2.0], vec![1.0, 1.0]]).unwrap();
        let pairs = PairSet {
            similar: vec![(0, 0)],
            dissimilar: vec![(0, 1)],
        };
        let (s, _) = pair_scatter(&a, &a, &pairs).unwrap();
        assert_eq!(max_abs(s.as_mat()), 0.0);
    }

    #[test]
    fn scatter_matches_naive_loop() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (view(4, 10, &mut r), view(4, 10, &mut r));
        let pairs = PairSet {
            similar: (0..10).map(|i| (i, (i * 3) % 10)).collect(),
            dissimilar: (0..10).map(|i| (i, (i * 7 + 1) % 10)).collect(),
        };
        let (s, d) = pair_scatter(&a, &b, &pairs).unwrap();
        for (got, list) in [(&s, &pairs.similar), (&d, &pairs.dissimilar)] {
            let mut naive = Mat::<f64>::zeros(4, 4);
            for &(i, j) in list.iter() {
                let dv: Vec<f64> = (0..4).map(|t| a.sample(i)[t] - b.sample(j)[t]).collect();
                for p in 0..4 {
                    for q in 0..4 {
                        naive[(p, q)] += dv[p] * dv[q];
                    }
                }
            }
            assert!(crate::linalg::rel_frobenius_error(got.as_mat(), naive.as_ref()) <= 1e-12);
        }
    }

    #[test]
    fn empty_pairs_rejected() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let a = view(2, 2, &mut r);
        let p = PairSet {
            similar: vec![],
            dissimilar: vec![(0, 1)],
        };
        assert!(matches!(pair_scatter(&a, &a, &p), Err(Error::InsufficientPairs(_))));
    }

    #[test]
    fn llr_examples() {
        let i = SymMatrix::identity(3);
        assert!(llr_score(&i, &i, &[1.0, -2.0, 0.5], DEFAULT_RIDGE).unwrap().abs() < 1e-12);
        let s = llr_score(&SymMatrix::identity(2), &SymMatrix::identity(2).scaled(2.0), &[1.0, 0.0], 0.0).unwrap();
        assert!((s - 0.5).abs() < 1e-14);
    }

    #[test]
    fn llr_matches_direct_inverse() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let (s, d) = (random_pd(5, &mut r), random_pd(5, &mut r));
        let delta: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
        let m = dense_inverse(&s) - dense_inverse(&d);
        let mut expect = 0.0;
        for p in 0..5 {
            for q in 0..5 {
                expect += delta[p] * m[(p, q)] * delta[q];
            }
        }
        let got = llr_score(&s, &d, &delta, 0.0).unwrap();
        assert!((got - expect).abs() <= 1e-10 * expect.abs().max(1.0));
    }

    #[test]
    fn fit_examples() {
        let m = kissme_fit(&SymMatrix::identity(3), &SymMatrix::identity(3).scaled(2.0), 0.0).unwrap();
        assert!(max_abs((m.metric.as_mat() - SymMatrix::identity(3).scaled(0.5).as_mat()).as_ref()) < 1e-14);
        let m = kissme_fit(&SymMatrix::identity(3).scaled(2.0), &SymMatrix::identity(3), 0.0).unwrap();
        assert!(max_abs(m.metric.as_mat()) < 1e-14);
    }

    #[test]
    fn fit_equals_clipped_eigendecomposition() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let (s, d) = (random_pd(6, &mut r), random_pd(6, &mut r));
        let model = kissme_fit(&s, &d, 0.0).unwrap();
        let raw = SymMatrix::new(dense_inverse(&s) - dense_inverse(&d));
        let e = sym_eig(&raw).unwrap();
        assert!(e.values.iter().any(|&v| v < 0.0), "want an indefinite case");
        let clipped: Vec<f64> = e.values.iter().map(|v| v.max(0.0)).collect();
        let oracle = crate::linalg::reconstruct(e.vectors.as_ref(), &clipped);
        assert!(max_abs((model.metric.as_mat() - oracle.as_mat()).as_ref()) <= 1e-10);
        assert!(sym_eig(&model.metric).unwrap().values.last().unwrap() >= &-1e-12);
    }

    #[test]
    fn distance_examples() {
        let model = KissmeModel {
            metric: SymMatrix::identity(2),
            pca: None,
        };
        assert_eq!(kissme_distance(&model, &[1.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(kissme_distance(&model, &[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(matches!(kissme_distance(&model, &[1.0], &[0.0, 0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn batched_distances_match_pairwise() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let model = KissmeModel {
            metric: psd_project(&SymMatrix::new(Mat::from_fn(3, 3, |_, _| r.gen_range(-1.0..1.0)))).unwrap(),
            pca: None,
        };
        let (q, g) = (view(3, 4, &mut r), view(3, 5, &mut r));
        let all = model.distances(&q, &g).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let one = kissme_distance(&model, &q.sample_vec(i), &g.sample_vec(j)).unwrap();
                assert!((all[(i, j)] - one).abs() <= 1e-12 * one.max(1.0));
            }
        }
    }

    #[test]
    fn pca_pre_step() {
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let lx: Vec<usize> = (0..12).map(|i| i % 4 + 1).collect();
        let ds = CrossViewDataset::new(view(6, 12, &mut r), view(6, 12, &mut r), lx.clone(), lx).unwrap();
        let model = kissme_train(
            &ds,
            &KissmeOptions {
                pca_dim: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(model.metric.dim(), 3);
        assert_eq!(model.input_dim(), 6);
        let a = ds.x.sample_vec(0);
        let b = ds.z.sample_vec(1);
        let one = kissme_distance(&model, &a, &b).unwrap();
        let all = model.distances(&ds.x, &ds.z).unwrap();
        assert!((all[(0, 1)] - one).abs() <= 1e-10 * one.max(1.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        #[allow(unused_imports)]
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn distance_symmetric_and_nonnegative(seed in any::<u64>()) {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let (s, d) = (random_pd(4, &mut r), random_pd(4, &mut r));
                let model = kissme_fit(&s, &d, DEFAULT_RIDGE).unwrap();
                let a: Vec<f64> = (0..4).map(|_| r.gen_range(-3.0..3.0)).collect();
                let b: Vec<f64> = (0..4).map(|_| r.gen_range(-3.0..3.0)).collect();
                let ab = kissme_distance(&model, &a, &b).unwrap();
                prop_assert_eq!(ab, kissme_distance(&model, &b, &a).unwrap());
                prop_assert!(ab >= -1e-12);
            }

            #[test]
            fn scatter_is_psd(seed in any::<u64>()) {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let (a, b) = (view(3, 5, &mut r), view(3, 5, &mut r));
                let pairs = PairSet { similar: vec![(0, 0), (1, 2)], dissimilar: vec![(3, 4), (2, 2), (4, 0)] };
                let (s, d) = pair_scatter(&a, &b, &pairs).unwrap();
                for m in [s, d] {
                    let lo = *sym_eig(&m).unwrap().values.last().unwrap();
                    prop_assert!(lo >= -1e-12);
                }
            }
        }
    }
}
