//! Continuous-time covariance diagnostics.
//!
//! These routines exist to put the covariance-flow theory under executable
//! tests: the modified covariance ODE, its closed-form solution, and the
//! perturbed stationary eigenvalue relation. Nothing here feeds the
//! optimizer.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, min_eigenvalue, spd_inverse};
use crate::scalar::Scalar;

/// A covariance matrix together with the time it belongs to. The constructor
/// enforces symmetry and positive definiteness.
#[derive(Debug, Clone)]
pub struct CovarianceState<S> {
    pub p: Array2<S>,
    pub t: S,
}

impl<S: Scalar> CovarianceState<S> {
    pub fn new(p: Array2<S>, t: S) -> Result<Self> {
        let asym = frobenius_norm(&(&p - &p.t()).view());
        let scale = frobenius_norm(&p.view()).max(S::one());
        if asym > S::cast(1e-10) * scale {
            return Err(Error::NotSpd(format!(
                "asymmetry {:e} exceeds tolerance",
                asym.as_f64()
            )));
        }
        let min = min_eigenvalue(&p.view())?;
        if min <= S::zero() {
            return Err(Error::NotSpd(format!(
                "min eigenvalue {:e} is not positive",
                min.as_f64()
            )));
        }
        Ok(Self { p, t })
    }
}

/// Right-hand side of the perturbed covariance flow:
/// `P - (1/delta) P B P + beta delta I`. Setting `beta = 0` recovers the
/// unperturbed equation.
pub fn covariance_ode_rhs<S: Scalar>(
    p: &ArrayView2<S>,
    b: &ArrayView2<S>,
    delta: S,
    beta: S,
) -> Array2<S> {
    let n = p.nrows();
    let mut rhs = p.to_owned() - p.dot(&b.dot(p)) / delta;
    let shift = beta * delta;
    for i in 0..n {
        rhs[[i, i]] += shift;
    }
    rhs
}

/// Closed-form solution of the unperturbed covariance flow:
/// `P(t) = delta [ (1 - e^-t) B + delta e^-t P0^-1 ]^-1`.
pub fn closed_form_covariance<S: Scalar>(
    t: S,
    p0: &ArrayView2<S>,
    b: &ArrayView2<S>,
    delta: S,
) -> Result<Array2<S>> {
    if t < S::zero() || !t.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "time must be non-negative, got {t}"
        )));
    }
    if !delta.is_finite() || delta <= S::zero() {
        return Err(Error::InvalidConfig(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let p0_inv = spd_inverse(p0)?;
    if min_eigenvalue(b)? <= S::zero() {
        return Err(Error::NotSpd("B must be positive definite".into()));
    }
    let decay = (-t).exp();
    let combo = b.to_owned() * (S::one() - decay) + p0_inv * (delta * decay);
    Ok(spd_inverse(&combo.view())? * delta)
}

/// Stationary eigenvalue relation of the perturbed flow: an eigenvalue
/// `lambda` of `B` maps to the stationary covariance eigenvalue
/// `d = delta / (2 lambda) (1 + sqrt(1 + 4 beta lambda))`.
pub fn stationary_eigen_relation<S: Scalar>(lambda: S, delta: S, beta: S) -> S {
    let four = S::cast(4.0);
    let two = S::cast(2.0);
    delta / (two * lambda) * (S::one() + (S::one() + four * beta * lambda).sqrt())
}

/// Classical fixed-step fourth-order Runge-Kutta on a matrix ODE, with the
/// state symmetrized after every step. Fails if the state stops being
/// positive definite, which signals a step size too large.
pub fn integrate_matrix_ode<S, F>(
    rhs: F,
    p0: &ArrayView2<S>,
    t_end: S,
    n_steps: usize,
) -> Result<Array2<S>>
where
    S: Scalar,
    F: Fn(&ArrayView2<S>) -> Array2<S>,
{
    if n_steps == 0 {
        return Err(Error::InvalidConfig(
            "integration requires at least one step".into(),
        ));
    }
    let h = t_end / S::cast_usize(n_steps);
    let half = S::cast(0.5);
    let sixth = S::one() / S::cast(6.0);
    let two = S::cast(2.0);

    let mut p = p0.to_owned();
    for step in 0..n_steps {
        let k1 = rhs(&p.view());
        let p2 = &p + &(&k1 * (h * half));
        let k2 = rhs(&p2.view());
        let p3 = &p + &(&k2 * (h * half));
        let k3 = rhs(&p3.view());
        let p4 = &p + &(&k3 * h);
        let k4 = rhs(&p4.view());
        p = &p + &((&k1 + &(&k2 * two) + &(&k3 * two) + &k4) * (h * sixth));
        p = (&p + &p.t()) * half;

        if min_eigenvalue(&p.view())? <= S::zero() {
            return Err(Error::NotSpd(format!(
                "covariance lost positive definiteness at step {step}; step size too large"
            )));
        }
    }
    Ok(p)
}
