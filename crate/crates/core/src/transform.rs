//! Discrete ensemble-transform update kernels: the regularized transform
//! matrix and its symmetric square root, the deviation stepping rules for
//! both update variants, column clipping, and Gaussian perturbation draws.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ensemble::DeviationMatrix;
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::scalar::Scalar;

/// Diagonal jitter added to the spectrum of the transform inverse before it
/// is inverted, guarding against vanishing singular values.
pub const SPECTRAL_JITTER: f64 = 1e-7;

/// The transform matrix `T` and its symmetric square root `T^(1/2)`.
#[derive(Debug, Clone)]
pub struct TransformPair<S> {
    t: Array2<S>,
    t_sqrt: Array2<S>,
}

impl<S: Scalar> TransformPair<S> {
    /// Exact identity pair, used on line-search exhaustion.
    pub fn identity(k: usize) -> Self {
        Self {
            t: Array2::eye(k),
            t_sqrt: Array2::eye(k),
        }
    }

    pub fn t(&self) -> ArrayView2<'_, S> {
        self.t.view()
    }

    pub fn t_sqrt(&self) -> ArrayView2<'_, S> {
        self.t_sqrt.view()
    }

    pub fn k(&self) -> usize {
        self.t.nrows()
    }
}

/// Which deviation update rule the optimizer applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateVariant {
    /// Growth-corrected update `exp(dt/2) Y T^(1/2)`: the ensemble covariance
    /// tracks the scaled inverse Hessian instead of collapsing.
    EnKsgd,
    /// Plain square-root update `Y T^(1/2)`; the covariance shrinks
    /// monotonically.
    EnKf,
}

impl std::fmt::Display for UpdateVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UpdateVariant::EnKsgd => write!(f, "enksgd"),
            UpdateVariant::EnKf => write!(f, "enkf"),
        }
    }
}

/// Builds the transform pair from the projected Hessian:
/// `M = I + dt/(delta K) h_proj` is decomposed as `U S U^T`, the spectrum is
/// shifted by the jitter, and `T = U (S + jitter)^-1 U^T` with the matching
/// square root.
///
/// Fails when `M` has an eigenvalue at or below the negated jitter, which
/// signals a step size too large for an indefinite projected Hessian.
pub fn transform_matrix<S: Scalar>(
    h_proj: &ArrayView2<S>,
    dt: S,
    delta: S,
    k: usize,
) -> Result<TransformPair<S>> {
    if !dt.is_finite() || dt <= S::zero() {
        return Err(Error::InvalidConfig(format!(
            "transform step size must be positive and finite, got {dt}"
        )));
    }
    if !delta.is_finite() || delta <= S::zero() {
        return Err(Error::InvalidConfig(format!(
            "scale delta must be positive and finite, got {delta}"
        )));
    }
    if h_proj.nrows() != k || h_proj.ncols() != k {
        return Err(Error::DimensionMismatch {
            context: "transform_matrix",
            expected: format!("{k} x {k}"),
            actual: format!("{} x {}", h_proj.nrows(), h_proj.ncols()),
        });
    }

    let scale = dt / (delta * S::cast_usize(k));
    let mut m = h_proj.to_owned() * scale;
    for i in 0..k {
        m[[i, i]] += S::one();
    }

    let eig = symmetric_eigen(&m.view())?;
    let jitter = S::cast(SPECTRAL_JITTER);
    let mut inv = Array1::zeros(k);
    let mut inv_sqrt = Array1::zeros(k);
    for (i, &s) in eig.eigenvalues.iter().enumerate() {
        let shifted = s + jitter;
        if shifted <= S::zero() {
            return Err(Error::NonPositiveTransform {
                min_eigenvalue: s.as_f64(),
            });
        }
        inv[i] = S::one() / shifted;
        inv_sqrt[i] = S::one() / shifted.sqrt();
    }

    let compose = |weights: &Array1<S>| {
        let mut scaled = eig.eigenvectors.clone();
        for j in 0..k {
            let w = weights[j];
            scaled.column_mut(j).mapv_inplace(|x| x * w);
        }
        scaled.dot(&eig.eigenvectors.t())
    };
    Ok(TransformPair {
        t: compose(&inv),
        t_sqrt: compose(&inv_sqrt),
    })
}

/// Advances the deviations one step:
/// EnKSGD uses `exp(dt/2) Y T^(1/2) + sqrt(beta delta dt) Xi`, the EnKF
/// variant drops the growth factor. With `dt = 0` and the identity pair the
/// deviations pass through unchanged.
pub fn deviations_step<S: Scalar>(
    dev: &DeviationMatrix<S>,
    transform: &TransformPair<S>,
    dt: S,
    variant: UpdateVariant,
    beta: S,
    delta: S,
    xi: &ArrayView2<S>,
) -> Result<DeviationMatrix<S>> {
    if dt < S::zero() || !dt.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "deviation step size must be non-negative, got {dt}"
        )));
    }
    let (n_x, k) = (dev.n_x(), dev.k_particles());
    if transform.k() != k {
        return Err(Error::DimensionMismatch {
            context: "deviations_step transform",
            expected: format!("{k} x {k}"),
            actual: format!("{} x {}", transform.k(), transform.k()),
        });
    }
    if xi.nrows() != n_x || xi.ncols() != k {
        return Err(Error::DimensionMismatch {
            context: "deviations_step perturbations",
            expected: format!("{n_x} x {k}"),
            actual: format!("{} x {}", xi.nrows(), xi.ncols()),
        });
    }

    let growth = match variant {
        UpdateVariant::EnKsgd => (dt / S::cast(2.0)).exp(),
        UpdateVariant::EnKf => S::one(),
    };
    let mut out = dev.matrix().dot(&transform.t_sqrt()) * growth;
    let coeff = (beta * delta * dt).sqrt();
    if coeff > S::zero() {
        out += &(xi.to_owned() * coeff);
    }
    Ok(DeviationMatrix::new(out))
}

/// Clips each deviation column by the rule of the minimization procedure:
/// when `||c|| / N_x` exceeds `gamma_ub` the column is rescaled to norm
/// `gamma_ub`; when it falls below `gamma_lb` the column is rescaled to norm
/// `gamma_lb`. Note the asymmetry: the trigger divides by `N_x` but the
/// rescale targets the bare norm. Zero columns pass through (no direction to
/// rescale along).
pub fn clip_deviations<S: Scalar>(
    dev: DeviationMatrix<S>,
    gamma_lb: S,
    gamma_ub: S,
    n_x: usize,
) -> DeviationMatrix<S> {
    let n = S::cast_usize(n_x);
    let mut m = dev.into_matrix();
    for mut col in m.axis_iter_mut(Axis(1)) {
        let norm = col.iter().map(|&x| x * x).sum::<S>().sqrt();
        if norm > S::zero() && norm / n > gamma_ub {
            let factor = gamma_ub / norm;
            col.mapv_inplace(|x| x * factor);
        }
        let norm = col.iter().map(|&x| x * x).sum::<S>().sqrt();
        if norm > S::zero() && norm / n < gamma_lb {
            let factor = gamma_lb / norm;
            col.mapv_inplace(|x| x * factor);
        }
    }
    DeviationMatrix::new(m)
}

/// Standard normal `N_x x K` perturbation matrix, drawn column by column so
/// each column is one particle's perturbation.
pub fn gaussian_perturbations<S: Scalar, R: Rng>(n_x: usize, k: usize, rng: &mut R) -> Array2<S> {
    let mut xi = Array2::zeros((n_x, k));
    for col in 0..k {
        for row in 0..n_x {
            let z: f64 = StandardNormal.sample(rng);
            xi[[row, col]] = S::cast(z);
        }
    }
    xi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_norm;
    use ndarray::array;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut StdRng, n: usize) -> Array2<f64> {
        let m = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        m.t().dot(&m) + Array2::<f64>::eye(n) * 0.1
    }

    #[test]
    fn zero_hessian_gives_jittered_identity() {
        let h = Array2::<f64>::zeros((3, 3));
        let pair = transform_matrix(&h.view(), 1.0, 1.0, 3).unwrap();
        let expected = 1.0 / (1.0 + SPECTRAL_JITTER);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { expected } else { 0.0 };
                assert!((pair.t()[[i, j]] - want).abs() < 1e-14);
                let want_sqrt = if i == j { expected.sqrt() } else { 0.0 };
                assert!((pair.t_sqrt()[[i, j]] - want_sqrt).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn scalar_transform_matches_arithmetic() {
        // h = 3, dt = 1, delta = 1, K = 1: M = 4, T = 1/(4 + jitter).
        let h = array![[3.0]];
        let pair = transform_matrix(&h.view(), 1.0, 1.0, 1).unwrap();
        assert!((pair.t()[[0, 0]] - 1.0 / (4.0 + SPECTRAL_JITTER)).abs() < 1e-18);
    }

    #[test]
    fn transform_multiplies_back_to_identity() {
        let mut rng = StdRng::seed_from_u64(4);
        for &k in &[2usize, 5, 12, 31] {
            let h = random_spd(&mut rng, k);
            let dt = 0.7;
            let delta = 0.3;
            let pair = transform_matrix(&h.view(), dt, delta, k).unwrap();

            let scale = dt / (delta * k as f64);
            let m = &h * scale + Array2::<f64>::eye(k);
            let prod = pair.t().dot(&m);
            for i in 0..k {
                for j in 0..k {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((prod[[i, j]] - want).abs() < 1e-6, "k={k} at ({i},{j})");
                }
            }
            let sq = pair.t_sqrt().dot(&pair.t_sqrt());
            let diff = frobenius_norm(&(&sq - &pair.t().to_owned()).view());
            assert!(diff < 1e-6 * frobenius_norm(&pair.t()).max(1.0), "k={k}");
        }
    }

    #[test]
    fn transform_pair_invariants_hold_for_random_spd_inputs() {
        let mut rng = StdRng::seed_from_u64(14);
        for &k in &[2usize, 8, 64] {
            let h = random_spd(&mut rng, k);
            let pair = transform_matrix(&h.view(), 1.0, 1.0, k).unwrap();

            let asym_t = frobenius_norm(&(&pair.t().to_owned() - &pair.t().t().to_owned()).view());
            assert!(asym_t < 1e-10, "k={k}: T not symmetric");
            let asym_s =
                frobenius_norm(&(&pair.t_sqrt().to_owned() - &pair.t_sqrt().t().to_owned()).view());
            assert!(asym_s < 1e-10, "k={k}: T^(1/2) not symmetric");

            // Eigenvalues of T lie in (0, 1 + eps] for PSD h_proj.
            let eig = crate::linalg::symmetric_eigen(&pair.t()).unwrap();
            for &w in eig.eigenvalues.iter() {
                assert!(w > 0.0, "k={k}: non-positive eigenvalue {w}");
                assert!(w <= 1.0 + 1e-6, "k={k}: expanding eigenvalue {w}");
            }
        }
    }

    #[test]
    fn indefinite_hessian_with_large_step_is_rejected() {
        // M = 1 + 2 * (-1) = -1 < 0.
        let h = array![[-1.0]];
        match transform_matrix(&h.view(), 2.0, 1.0, 1) {
            Err(Error::NonPositiveTransform { min_eigenvalue }) => {
                assert!(min_eigenvalue < 0.0);
            }
            other => panic!("expected NonPositiveTransform, got {other:?}"),
        }
    }

    #[test]
    fn zero_step_with_identity_pair_is_a_no_op() {
        let dev = DeviationMatrix::new(array![[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]]);
        let xi = Array2::from_elem((2, 3), 7.0);
        let out = deviations_step(
            &dev,
            &TransformPair::identity(3),
            0.0,
            UpdateVariant::EnKsgd,
            5.0,
            1.0,
            &xi.view(),
        )
        .unwrap();
        assert_eq!(out.matrix(), dev.matrix());
    }

    #[test]
    fn enkf_step_without_noise_and_identity_sqrt_is_a_no_op() {
        let dev = DeviationMatrix::new(array![[1.0, -2.0], [0.5, 3.0]]);
        let xi = Array2::zeros((2, 2));
        let out = deviations_step(
            &dev,
            &TransformPair::identity(2),
            0.8,
            UpdateVariant::EnKf,
            0.0,
            1.0,
            &xi.view(),
        )
        .unwrap();
        assert_eq!(out.matrix(), dev.matrix());
    }

    #[test]
    fn enksgd_step_applies_growth_factor() {
        let dev = DeviationMatrix::new(array![[1.0, -2.0], [0.5, 3.0]]);
        let xi = Array2::zeros((2, 2));
        let out = deviations_step(
            &dev,
            &TransformPair::identity(2),
            2.0,
            UpdateVariant::EnKsgd,
            0.0,
            1.0,
            &xi.view(),
        )
        .unwrap();
        let e = std::f64::consts::E;
        for (a, b) in out.matrix().iter().zip(dev.matrix().iter()) {
            assert!((a - e * b).abs() < 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn variants_agree_at_zero_step() {
        let dev = DeviationMatrix::new(array![[0.3, -0.7], [1.1, 0.2]]);
        let xi = Array2::from_elem((2, 2), 2.0);
        let pair = TransformPair::identity(2);
        let a = deviations_step(
            &dev,
            &pair,
            0.0,
            UpdateVariant::EnKsgd,
            1.0,
            1.0,
            &xi.view(),
        )
        .unwrap();
        let b =
            deviations_step(&dev, &pair, 0.0, UpdateVariant::EnKf, 1.0, 1.0, &xi.view()).unwrap();
        assert_eq!(a.matrix(), b.matrix());
    }

    #[test]
    fn negative_step_is_rejected() {
        let dev = DeviationMatrix::new(Array2::zeros((2, 2)));
        let xi = Array2::zeros((2, 2));
        assert!(deviations_step(
            &dev,
            &TransformPair::identity(2),
            -0.1,
            UpdateVariant::EnKf,
            0.0,
            1.0,
            &xi.view(),
        )
        .is_err());
    }

    #[test]
    fn clipping_rescales_oversized_columns_to_the_bare_bound() {
        // ||c|| = 5e4, ||c||/N_x = 2.5e4 > 1e4: rescaled to norm 1e4.
        let dev = DeviationMatrix::new(array![[3e4f64], [4e4]]);
        let out = clip_deviations(dev, 1e-4, 1e4, 2);
        assert!((out.matrix()[[0, 0]] - 6e3).abs() < 1e-9);
        assert!((out.matrix()[[1, 0]] - 8e3).abs() < 1e-9);
    }

    #[test]
    fn clipping_leaves_in_range_columns_alone() {
        let dev = DeviationMatrix::new(array![[1.0, -0.5], [2.0, 0.25]]);
        let out = clip_deviations(dev.clone(), 1e-4, 1e4, 2);
        assert_eq!(out.matrix(), dev.matrix());
    }

    #[test]
    fn clipping_ignores_zero_columns() {
        let dev = DeviationMatrix::new(array![[0.0, 1.0], [0.0, 1.0]]);
        let out = clip_deviations(dev, 1e-1, 1e4, 2);
        assert_eq!(out.matrix().column(0), array![0.0, 0.0]);
    }

    #[test]
    fn clipping_raises_undersized_columns() {
        // ||c|| = 1e-6, ||c||/N_x = 5e-7 < 1e-4: rescaled to norm 1e-4.
        let dev = DeviationMatrix::new(array![[1e-6f64], [0.0]]);
        let out = clip_deviations(dev, 1e-4, 1e4, 2);
        assert!((out.matrix()[[0, 0]] - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn perturbations_are_deterministic_given_the_seed() {
        let a: Array2<f64> = gaussian_perturbations(4, 3, &mut ChaCha8Rng::seed_from_u64(123));
        let b: Array2<f64> = gaussian_perturbations(4, 3, &mut ChaCha8Rng::seed_from_u64(123));
        assert_eq!(a, b);
        assert_eq!(a.dim(), (4, 3));
    }

    #[test]
    fn perturbation_moments_match_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let xi: Array2<f64> = gaussian_perturbations(250, 400, &mut rng);
        let n = xi.len() as f64;
        let mean = xi.iter().sum::<f64>() / n;
        let var = xi.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "sample mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "sample variance {var}");
    }
}
