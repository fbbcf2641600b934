//! Monte Carlo projections of unavailable derivatives onto the ensemble.
//!
//! Stein's identity for Gaussian samples turns centered function values into
//! derivative estimates: the forward-map deviation matrix `Gamma` stands in
//! for `Y^T (DG)^T`, scalar deviation vectors stand in for `Y^T grad`, and
//! combining them with the loss derivatives yields the projected gradient
//! `q = Y^T grad Phi(xbar)` and the projected Hessian `Y^T B(xbar) Y`
//! without ever touching a Jacobian of the forward map. The estimates are
//! exact for linear forward maps.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::ensemble::DeviationMatrix;
use crate::error::{Error, Result};
use crate::problems::ProblemSpec;
use crate::scalar::Scalar;

/// Forward-map (and optional regularizer) values of every particle.
#[derive(Debug, Clone)]
pub struct EvaluatedEnsemble<S> {
    forward_values: Array2<S>,
    mean_forward: Array1<S>,
    reg_x_values: Option<Array1<S>>,
    reg_y_values: Option<Array1<S>>,
}

impl<S: Scalar> EvaluatedEnsemble<S> {
    /// Wraps the `N_y x K` matrix whose column `k` holds the forward value of
    /// particle `k`, computing the column mean. Non-finite values are
    /// rejected with the offending particle index.
    pub fn new(forward_values: Array2<S>) -> Result<Self> {
        let k = forward_values.ncols();
        if k < 2 {
            return Err(Error::InvalidEnsembleSize { k });
        }
        for (col, values) in forward_values.axis_iter(Axis(1)).enumerate() {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("forward value of particle {col}"),
                });
            }
        }
        let k_inv = S::one() / S::cast_usize(k);
        let mean_forward = forward_values.sum_axis(Axis(1)) * k_inv;
        Ok(Self {
            forward_values,
            mean_forward,
            reg_x_values: None,
            reg_y_values: None,
        })
    }

    /// Attaches per-particle state-regularizer values `R(x^(k))` for the
    /// sampled gradient fallback.
    pub fn with_reg_x_values(mut self, values: Array1<S>) -> Result<Self> {
        self.check_len(values.len(), "reg_x values")?;
        self.reg_x_values = Some(values);
        Ok(self)
    }

    /// Attaches per-particle observation-regularizer values `T(G(x^(k)))`.
    pub fn with_reg_y_values(mut self, values: Array1<S>) -> Result<Self> {
        self.check_len(values.len(), "reg_y values")?;
        self.reg_y_values = Some(values);
        Ok(self)
    }

    fn check_len(&self, len: usize, context: &'static str) -> Result<()> {
        if len != self.k_particles() {
            return Err(Error::DimensionMismatch {
                context,
                expected: format!("length {}", self.k_particles()),
                actual: format!("length {len}"),
            });
        }
        Ok(())
    }

    pub fn k_particles(&self) -> usize {
        self.forward_values.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.forward_values.nrows()
    }

    pub fn forward_values(&self) -> ndarray::ArrayView2<'_, S> {
        self.forward_values.view()
    }

    pub fn mean_forward(&self) -> ArrayView1<'_, S> {
        self.mean_forward.view()
    }

    pub fn reg_x_values(&self) -> Option<ArrayView1<'_, S>> {
        self.reg_x_values.as_ref().map(|v| v.view())
    }

    pub fn reg_y_values(&self) -> Option<ArrayView1<'_, S>> {
        self.reg_y_values.as_ref().map(|v| v.view())
    }
}

/// Projected derivatives of the objective at the ensemble mean.
#[derive(Debug, Clone)]
pub struct ProjectedDerivatives<S> {
    /// Stein estimate of `Y^T grad Phi(xbar)`, length `K`.
    pub q: Array1<S>,
    /// Forward value at the mean, `G(xbar)`.
    pub ybar_at_mean: Array1<S>,
    /// Symmetrized estimate of `Y^T B(xbar) Y`, `K x K`.
    pub h_proj: Array2<S>,
}

/// Forward-map deviations `Gamma`: column `k` is `G(x^(k))` minus the
/// particle mean of the forward values. Columns sum to zero.
pub fn forward_deviations<S: Scalar>(ev: &EvaluatedEnsemble<S>) -> Array2<S> {
    let mut gamma = ev.forward_values.clone();
    for mut col in gamma.axis_iter_mut(Axis(1)) {
        col -= &ev.mean_forward;
    }
    gamma
}

/// Centers a vector of per-particle scalar function values.
pub fn scalar_deviations<S: Scalar>(values: &ArrayView1<S>) -> Array1<S> {
    let k_inv = S::one() / S::cast_usize(values.len());
    let mean = values.iter().cloned().sum::<S>() * k_inv;
    values.mapv(|v| v - mean)
}

/// Stein estimate of the projected gradient
/// `q = Gamma^T grad D(ybar) + alpha_x (R term) + alpha_y (T term)`,
/// with `ybar = G(xbar)`. Regularizer terms use analytic gradients when
/// available and centered sampled values otherwise.
pub fn projected_gradient<S: Scalar>(
    dev: &DeviationMatrix<S>,
    ev: &EvaluatedEnsemble<S>,
    ybar: &ArrayView1<S>,
    mean: &ArrayView1<S>,
    problem: &ProblemSpec<S>,
) -> Result<Array1<S>> {
    let gamma = forward_deviations(ev);
    let grad_d = problem.loss().grad(ybar)?;
    let mut q = gamma.t().dot(&grad_d);

    let alpha_x = problem.alpha_x();
    if alpha_x > S::zero() {
        let reg = problem.reg_x().ok_or_else(|| {
            Error::UnsupportedProblem("alpha_x > 0 but no state regularizer supplied".into())
        })?;
        if let Some(grad_r) = reg.grad(mean) {
            q = q + dev.matrix().t().dot(&grad_r) * alpha_x;
        } else if let Some(values) = ev.reg_x_values() {
            q = q + scalar_deviations(&values) * alpha_x;
        } else {
            return Err(Error::UnsupportedProblem(
                "state regularizer has neither an analytic gradient nor sampled particle values"
                    .into(),
            ));
        }
    }

    let alpha_y = problem.alpha_y();
    if alpha_y > S::zero() {
        let reg = problem.reg_y().ok_or_else(|| {
            Error::UnsupportedProblem("alpha_y > 0 but no observation regularizer supplied".into())
        })?;
        if let Some(grad_t) = reg.grad(ybar) {
            q = q + gamma.t().dot(&grad_t) * alpha_y;
        } else if let Some(values) = ev.reg_y_values() {
            q = q + scalar_deviations(&values) * alpha_y;
        } else {
            return Err(Error::UnsupportedProblem(
                "observation regularizer has neither an analytic gradient nor sampled particle \
                 values"
                    .into(),
            ));
        }
    }

    Ok(q)
}

/// Stein estimate of the projected composite Hessian
/// `Gamma^T (hess D + alpha_y hess T) Gamma + alpha_x Y^T hess R Y`,
/// symmetrized. A regularizer without an analytic Hessian falls back to the
/// identity in state space, contributing `alpha Y^T Y`.
pub fn projected_hessian<S: Scalar>(
    dev: &DeviationMatrix<S>,
    ev: &EvaluatedEnsemble<S>,
    ybar: &ArrayView1<S>,
    mean: &ArrayView1<S>,
    problem: &ProblemSpec<S>,
) -> Result<Array2<S>> {
    let gamma = forward_deviations(ev);
    let mut inner = problem.loss().hess(ybar)?;

    // Weight on the Y^T Y fallback accumulated across both regularizers.
    let mut gram_weight = S::zero();

    let alpha_y = problem.alpha_y();
    if alpha_y > S::zero() {
        let reg = problem.reg_y().ok_or_else(|| {
            Error::UnsupportedProblem("alpha_y > 0 but no observation regularizer supplied".into())
        })?;
        match reg.hess(ybar) {
            Some(hess_t) => inner = inner + hess_t * alpha_y,
            None => gram_weight += alpha_y,
        }
    }

    let mut h = gamma.t().dot(&inner.dot(&gamma));

    let alpha_x = problem.alpha_x();
    if alpha_x > S::zero() {
        let reg = problem.reg_x().ok_or_else(|| {
            Error::UnsupportedProblem("alpha_x > 0 but no state regularizer supplied".into())
        })?;
        match reg.hess(mean) {
            Some(hess_r) => {
                let y = dev.matrix();
                h = h + y.t().dot(&hess_r.dot(&y)) * alpha_x;
            }
            None => gram_weight += alpha_x,
        }
    }

    if gram_weight > S::zero() {
        let y = dev.matrix();
        h = h + y.t().dot(&y) * gram_weight;
    }

    let half = S::cast(0.5);
    let sym = (&h + &h.t()) * half;
    Ok(sym)
}

/// Convenience bundle of [`projected_gradient`] and [`projected_hessian`].
pub fn project_derivatives<S: Scalar>(
    dev: &DeviationMatrix<S>,
    ev: &EvaluatedEnsemble<S>,
    ybar: &ArrayView1<S>,
    mean: &ArrayView1<S>,
    problem: &ProblemSpec<S>,
) -> Result<ProjectedDerivatives<S>> {
    Ok(ProjectedDerivatives {
        q: projected_gradient(dev, ev, ybar, mean, problem)?,
        ybar_at_mean: ybar.to_owned(),
        h_proj: projected_hessian(dev, ev, ybar, mean, problem)?,
    })
}
