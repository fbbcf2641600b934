//! Ensemble container and the exact linear-algebra primitives on particle
//! matrices: mean, deviations, projection, empirical covariance, and
//! recombination of deviations with a mean.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An ensemble of `K` particles in `N_x`-dimensional state space, stored as
/// the `N_x x K` matrix whose column `k` is particle `x^(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<S> {
    states: Array2<S>,
}

impl<S: Scalar> Ensemble<S> {
    /// Validates and wraps a particle matrix. Requires `K >= 2` and all
    /// entries finite; the offending particle index is reported otherwise.
    pub fn new(states: Array2<S>) -> Result<Self> {
        let k = states.ncols();
        if k < 2 {
            return Err(Error::InvalidEnsembleSize { k });
        }
        for (col, particle) in states.axis_iter(Axis(1)).enumerate() {
            if let Some(row) = particle.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("particle {col}, component {row}"),
                });
            }
        }
        Ok(Self { states })
    }

    pub fn n_x(&self) -> usize {
        self.states.nrows()
    }

    pub fn k_particles(&self) -> usize {
        self.states.ncols()
    }

    pub fn states(&self) -> ArrayView2<'_, S> {
        self.states.view()
    }

    pub fn particle(&self, k: usize) -> ArrayView1<'_, S> {
        self.states.column(k)
    }
}

/// Matrix of particle deviations from the ensemble mean.
///
/// [`ensemble_deviations`] produces columns that sum to zero. Optimizer
/// updates (random perturbations, clipping) may leave the columns off-center;
/// [`recombine`] re-applies the projection, which is what restores the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationMatrix<S> {
    deviations: Array2<S>,
}

impl<S: Scalar> DeviationMatrix<S> {
    pub fn new(deviations: Array2<S>) -> Self {
        Self { deviations }
    }

    pub fn n_x(&self) -> usize {
        self.deviations.nrows()
    }

    pub fn k_particles(&self) -> usize {
        self.deviations.ncols()
    }

    pub fn matrix(&self) -> ArrayView2<'_, S> {
        self.deviations.view()
    }

    pub fn into_matrix(self) -> Array2<S> {
        self.deviations
    }

    /// How far the sum of the columns is from the zero vector, relative to
    /// the largest column norm. Centered matrices return a tiny value.
    pub fn centering_defect(&self) -> S {
        let col_sum = self.deviations.sum_axis(Axis(1));
        let worst = col_sum.iter().fold(S::zero(), |m, &x| m.max(x.abs()));
        let max_norm = self
            .deviations
            .axis_iter(Axis(1))
            .map(|col| col.iter().map(|&x| x * x).sum::<S>().sqrt())
            .fold(S::zero(), S::max);
        if max_norm > S::zero() {
            worst / max_norm
        } else {
            worst
        }
    }
}

/// The symmetric `K x K` centering projection `Pi_K = I - w_u 1^T` with
/// uniform weights `w_u = (1/K, ..., 1/K)`.
pub fn projection_matrix<S: Scalar>(k: usize) -> Result<Array2<S>> {
    if k < 2 {
        return Err(Error::InvalidEnsembleSize { k });
    }
    let w = S::one() / S::cast_usize(k);
    let mut pi = Array2::from_elem((k, k), -w);
    for i in 0..k {
        pi[[i, i]] += S::one();
    }
    Ok(pi)
}

/// Empirical mean of the particle positions, `(1/K) sum_k x^(k)`.
pub fn ensemble_mean<S: Scalar>(ensemble: &Ensemble<S>) -> Array1<S> {
    let k_inv = S::one() / S::cast_usize(ensemble.k_particles());
    ensemble.states.sum_axis(Axis(1)) * k_inv
}

/// Deviations of the particles from their mean, column by column.
///
/// Computed by direct mean subtraction rather than multiplying by `Pi_K`;
/// the results agree to roundoff and this is one pass over the data.
pub fn ensemble_deviations<S: Scalar>(ensemble: &Ensemble<S>) -> DeviationMatrix<S> {
    let mean = ensemble_mean(ensemble);
    let mut dev = ensemble.states.clone();
    for mut col in dev.axis_iter_mut(Axis(1)) {
        col -= &mean;
    }
    DeviationMatrix::new(dev)
}

/// Empirical covariance `(1/K) Y Y^T` of the particle positions, where `Y`
/// is the deviation matrix. Symmetric positive semi-definite with rank at
/// most `min(N_x, K - 1)`.
pub fn empirical_covariance<S: Scalar>(ensemble: &Ensemble<S>) -> Array2<S> {
    let dev = ensemble_deviations(ensemble);
    let k_inv = S::one() / S::cast_usize(ensemble.k_particles());
    let y = dev.matrix();
    y.dot(&y.t()) * k_inv
}

/// Rebuilds particle states from deviations and a mean:
/// `X = (Y Pi_K) + mean 1^T`.
///
/// The projection is applied first, so the resulting ensemble mean equals
/// `mean` (to roundoff) even when the deviation columns do not sum to zero.
pub fn recombine<S: Scalar>(
    deviations: &DeviationMatrix<S>,
    mean: &ArrayView1<S>,
) -> Result<Ensemble<S>> {
    if deviations.n_x() != mean.len() {
        return Err(Error::DimensionMismatch {
            context: "recombine",
            expected: format!("mean of length {}", deviations.n_x()),
            actual: format!("mean of length {}", mean.len()),
        });
    }
    let k = deviations.k_particles();
    if k < 2 {
        return Err(Error::InvalidEnsembleSize { k });
    }
    let k_inv = S::one() / S::cast_usize(k);
    let col_mean = deviations.deviations.sum_axis(Axis(1)) * k_inv;
    let mut states = deviations.deviations.clone();
    for mut col in states.axis_iter_mut(Axis(1)) {
        col -= &col_mean;
        col += mean;
    }
    Ensemble::new(states)
}
