//! Dense symmetric linear algebra.
//!
//! Eigendecompositions and Cholesky factors come from `faer`; the
//! generalized Rayleigh-quotient solver and the PSD-cone projection are
//! built on top of them here.

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Square matrix that is exactly symmetric.
///
/// Construction averages the matrix with its transpose, so analytically
/// symmetric products that picked up rounding asymmetry are repaired here.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Mat<f64>);

impl SymMatrix {
    /// Symmetrizes `(a + aᵀ) / 2`. Panics if `a` is not square.
    pub fn new(mut a: Mat<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols(), "SymMatrix must be square");
        symmetrize_in_place(&mut a);
        SymMatrix(a)
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self::new(Mat::from_fn(dim, dim, f))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(Mat::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(Mat::identity(dim, dim))
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        SymMatrix(Mat::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_mat(&self) -> MatRef<'_, f64> {
        self.0.as_ref()
    }

    pub fn into_mat(self) -> Mat<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)]).sum()
    }

    /// `self + shift·I`.
    pub fn shifted(&self, shift: f64) -> SymMatrix {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += shift;
        }
        SymMatrix(m)
    }

    pub fn scaled(&self, c: f64) -> SymMatrix {
        SymMatrix(Mat::from_fn(self.dim(), self.dim(), |i, j| c * self.0[(i, j)]))
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim());
        let n = self.dim();
        let mut acc = 0.0;
        for j in 0..n {
            let col = self.0.col(j);
            let mut s = 0.0;
            for i in 0..n {
                s += col[i] * x[i];
            }
            acc += s * x[j];
        }
        acc
    }

    pub fn is_finite(&self) -> bool {
        all_finite(self.0.as_ref())
    }

    fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidMatrix(format!("{what} has non-finite entries")))
        }
    }
}

/// Eigenpairs with values sorted in non-increasing order; column `k` of
/// `vectors` belongs to `values[k]`.
#[derive(Debug, Clone)]
pub struct EigPairs {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

impl EigPairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Leading `k` eigenvectors as a `dim × k` matrix.
    pub fn leading_vectors(&self, k: usize) -> Mat<f64> {
        self.vectors.subcols(0, k).to_owned()
    }
}

pub fn all_finite(a: MatRef<'_, f64>) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| a[(i, j)].is_finite()))
}

pub fn symmetrize_in_place(a: &mut Mat<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Largest absolute entry of `a - aᵀ`.
pub fn asymmetry(a: MatRef<'_, f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn max_abs(a: MatRef<'_, f64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            worst = worst.max(a[(i, j)].abs());
        }
    }
    worst
}

/// `‖a − b‖_F / max(‖b‖_F, tiny)`.
pub fn rel_frobenius_error(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let diff = (a - b).norm_l2();
    let scale = b.norm_l2();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Symmetric eigendecomposition, values descending.
pub fn sym_eig(a: &SymMatrix) -> Result<EigPairs> {
    a.ensure_finite("input")?;
    let n = a.dim();
    if n == 0 {
        return Ok(EigPairs {
            values: Vec::new(),
            vectors: Mat::zeros(0, 0),
        });
    }
    let evd = a
        .as_mat()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::InvalidMatrix(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    // faer returns ascending order
    let values: Vec<f64> = (0..n).rev().map(|k| s[k]).collect();
    let vectors = Mat::from_fn(n, n, |i, k| u[(i, n - 1 - k)]);
    Ok(EigPairs { values, vectors })
}

/// `V · diag(values) · Vᵀ`, symmetrized.
pub fn reconstruct(vectors: MatRef<'_, f64>, values: &[f64]) -> SymMatrix {
    let scaled = Mat::from_fn(vectors.nrows(), vectors.ncols(), |i, k| vectors[(i, k)] * values[k]);
    SymMatrix::new(&scaled * vectors.transpose())
}

/// Projection onto the PSD cone: negative eigenvalues are set to zero,
/// non-negative ones are kept as they are.
pub fn psd_project(a: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eig(a)?;
    if eig.values.iter().all(|&v| v >= 0.0) {
        return Ok(a.clone());
    }
    let clipped: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
    Ok(reconstruct(eig.vectors.as_ref(), &clipped))
}

/// Generalized symmetric eigenproblem `num·θ = λ·(den + ridge·I)·θ`.
///
/// Solved by Cholesky reduction: with `den + ridge·I = L·Lᵀ` the problem
/// becomes the standard symmetric one for `L⁻¹·num·L⁻ᵀ`, and eigenvectors are
/// mapped back through `L⁻ᵀ`. Returned vectors satisfy
/// `θᵀ(den + ridge·I)θ = 1`; values are the Rayleigh ratios, descending.
pub fn gen_eig_ratio(num: &SymMatrix, den: &SymMatrix, ridge: f64) -> Result<EigPairs> {
    if num.dim() != den.dim() {
        return Err(Error::Shape(format!(
            "numerator is {0}x{0}, denominator is {1}x{1}",
            num.dim(),
            den.dim()
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Config(format!("ridge must be non-negative, got {ridge}")));
    }
    num.ensure_finite("numerator")?;
    den.ensure_finite("denominator")?;

    let n = num.dim();
    let regularized = den.shifted(ridge);
    let llt = regularized
        .as_mat()
        .llt(Side::Lower)
        .map_err(|_| Error::SingularDenominator { ridge })?;
    let l = llt.L();

    // reduced = L⁻¹ · num · L⁻ᵀ
    let mut half = num.as_mat().to_owned();
    l.solve_lower_triangular_in_place(half.as_mut());
    let mut reduced = half.transpose().to_owned();
    drop(half);
    l.solve_lower_triangular_in_place(reduced.as_mut());
    let reduced = SymMatrix::new(reduced);

    let eig = sym_eig(&reduced)?;
    let mut vectors = eig.vectors;
    l.transpose().solve_upper_triangular_in_place(vectors.as_mut());
    debug_assert_eq!(vectors.nrows(), n);
    Ok(EigPairs {
        values: eig.values,
        vectors,
    })
}

/// Inverse of a symmetric positive definite matrix, with `guard·trace/dim`
/// added to the diagonal before factorization.
pub fn spd_inverse(a: &SymMatrix, guard: f64) -> Result<SymMatrix> {
    a.ensure_finite("input")?;
    let n = a.dim();
    if n == 0 {
        return Ok(SymMatrix::zeros(0));
    }
    let shift = guard * a.trace().abs() / n as f64;
    let llt = a
        .shifted(shift)
        .as_mat()
        .llt(Side::Lower)
        .map_err(|_| Error::SingularDenominator { ridge: shift })?;
    Ok(SymMatrix::new(llt.inverse()))
}

/// `Wᵀ · A · W` for a symmetric `A`.
pub fn congruence(a: &SymMatrix, w: MatRef<'_, f64>) -> SymMatrix {
    let aw = a.as_mat() * w;
    SymMatrix::new(w.transpose() * &aw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        let a = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        SymMatrix::new(&a + a.transpose())
    }

    fn random_pd(n: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        let a = Mat::from_fn(n, n + 3, |_, _| rng.gen_range(-1.0..1.0));
        SymMatrix::new(&a * a.transpose()).shifted(0.1)
    }

    fn min_eig(a: &SymMatrix) -> f64 {
        *sym_eig(a).unwrap().values.last().unwrap()
    }

    #[test]
    fn diagonal_eig() {
        let e = sym_eig(&SymMatrix::diagonal(&[1.0, 3.0])).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert!((e.vectors[(1, 0)].abs() - 1.0).abs() < 1e-15);
        assert!((e.vectors[(0, 1)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn swap_matrix_eig() {
        let a = SymMatrix::new(Mat::from_fn(2, 2, |i, j| if i == j { 0.0 } else { 1.0 }));
        let e = sym_eig(&a).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14 && (e.values[1] + 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        // (1,1)/√2 for +1 and (1,-1)/√2 for -1, up to sign
        assert!((e.vectors[(0, 0)].abs() - h).abs() < 1e-14);
        assert!((e.vectors[(0, 0)] - e.vectors[(1, 0)]).abs() < 1e-14);
        assert!((e.vectors[(0, 1)] + e.vectors[(1, 1)]).abs() < 1e-14);
    }

    #[test]
    fn eig_reconstructs_and_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_sym(8, &mut rng);
        let e = sym_eig(&a).unwrap();
        let back = reconstruct(e.vectors.as_ref(), &e.values);
        assert!(rel_frobenius_error(back.as_mat(), a.as_mat()) <= 1e-10);
        let gram = e.vectors.transpose() * &e.vectors;
        assert!(max_abs((&gram - Mat::<f64>::identity(8, 8)).as_ref()) <= 1e-10);
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn non_finite_rejected() {
        let a = SymMatrix::diagonal(&[1.0, f64::NAN]);
        assert!(matches!(sym_eig(&a), Err(Error::InvalidMatrix(_))));
        assert!(matches!(psd_project(&a), Err(Error::InvalidMatrix(_))));
    }

    #[test]
    fn psd_clips_negative_diagonal() {
        let p = psd_project(&SymMatrix::diagonal(&[2.0, -1.0])).unwrap();
        assert!(max_abs((p.as_mat() - SymMatrix::diagonal(&[2.0, 0.0]).as_mat()).as_ref()) < 1e-15);
    }

    #[test]
    fn psd_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_pd(6, &mut rng);
        let p = psd_project(&a).unwrap();
        assert!(max_abs((p.as_mat() - a.as_mat()).as_ref()) <= 1e-12);
    }

    #[test]
    fn psd_of_indefinite_has_no_negative_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_sym(6, &mut rng);
        assert!(min_eig(&a) < 0.0);
        let p = psd_project(&a).unwrap();
        assert!(min_eig(&p) >= -1e-12);
        let again = psd_project(&p).unwrap();
        assert!(max_abs((again.as_mat() - p.as_mat()).as_ref()) <= 1e-12);
    }

    #[test]
    fn gen_eig_identity_denominator() {
        let e = gen_eig_ratio(&SymMatrix::diagonal(&[4.0, 1.0]), &SymMatrix::identity(2), 0.0).unwrap();
        assert!((e.values[0] - 4.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gen_eig_equal_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_pd(7, &mut rng);
        let e = gen_eig_ratio(&a, &a, 0.0).unwrap();
        assert!(e.values.iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn gen_eig_residual_and_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let num = random_pd(10, &mut rng);
        let den = random_pd(10, &mut rng);
        let ridge = 0.01;
        let e = gen_eig_ratio(&num, &den, ridge).unwrap();
        let reg = den.shifted(ridge);
        for k in 0..10 {
            let theta = e.vectors.col(k).to_owned();
            let lhs = num.as_mat() * &theta;
            let rhs = reg.as_mat() * &theta;
            let resid = (&lhs - &rhs * faer::Scale(e.values[k])).norm_l2();
            assert!(resid <= 1e-8, "residual {resid}");
            let t: Vec<f64> = (0..10).map(|i| theta[i]).collect();
            assert!((reg.quad_form(&t) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn gen_eig_singular_denominator() {
        let den = SymMatrix::diagonal(&[1.0, 0.0]);
        let r = gen_eig_ratio(&SymMatrix::identity(2), &den, 0.0);
        assert!(matches!(r, Err(Error::SingularDenominator { .. })));
        assert!(gen_eig_ratio(&SymMatrix::identity(2), &den, 1e-3).is_ok());
    }

    #[test]
    fn spd_inverse_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_pd(5, &mut rng);
        let inv = spd_inverse(&a, 0.0).unwrap();
        let prod = a.as_mat() * inv.as_mat();
        assert!(max_abs((&prod - Mat::<f64>::identity(5, 5)).as_ref()) < 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        #[allow(unused_imports)]
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn psd_project_idempotent(seed in any::<u64>(), n in 1usize..7) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_sym(n, &mut rng);
                let p = psd_project(&a).unwrap();
                let q = psd_project(&p).unwrap();
                prop_assert!(max_abs((q.as_mat() - p.as_mat()).as_ref()) <= 1e-12);
            }

            #[test]
            fn gen_eig_scale_invariant(seed in any::<u64>(), c in 0.01f64..100.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let num = random_pd(6, &mut rng);
                let den = random_pd(6, &mut rng);
                let a = gen_eig_ratio(&num, &den, 0.05).unwrap();
                let b = gen_eig_ratio(&num.scaled(c), &den.scaled(c), 0.05 * c).unwrap();
                for (x, y) in a.values.iter().zip(&b.values) {
                    prop_assert!((x - y).abs() <= 1e-8 * x.abs().max(1e-300));
                }
            }

            #[test]
            fn eigvectors_orthonormal(seed in any::<u64>(), n in 1usize..10) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let e = sym_eig(&random_sym(n, &mut rng)).unwrap();
                let gram = e.vectors.transpose() * &e.vectors;
                prop_assert!(max_abs((&gram - Mat::<f64>::identity(n, n)).as_ref()) <= 1e-10);
            }
        }
    }
}
