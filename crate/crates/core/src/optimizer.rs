//! The minimization procedures: the ensemble Kalman-Stein loop with
//! backtracking line search on the ensemble mean, and the central
//! finite-difference gradient descent baseline with the same search and the
//! same evaluation accounting.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{ensemble_deviations, recombine, DeviationMatrix, Ensemble};
use crate::error::{Error, Result};
use crate::problems::{Evaluator, ProblemSpec};
use crate::scalar::Scalar;
use crate::stein::{project_derivatives, EvaluatedEnsemble};
use crate::transform::{
    clip_deviations, deviations_step, gaussian_perturbations, transform_matrix, TransformPair,
    UpdateVariant,
};

/// All tunables of the minimization procedure. Line-search constants,
/// deviation bounds, and the initial deviation scale default to the
/// benchmark settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig<S> {
    /// Ensemble size `K >= 2`.
    pub k_particles: usize,
    /// Perturbation strength `beta >= 0`; breaks the subspace property.
    pub beta: S,
    /// Scale parameter `delta > 0` of the covariance flow.
    pub delta: S,
    /// Initial line-search step size `mu_ls > 0`.
    pub mu_ls: S,
    /// Sufficient-decrease constant `c_ls` in (0, 1).
    pub c_ls: S,
    /// Backtracking factor `tau_ls` in (0, 1).
    pub tau_ls: S,
    /// Maximum number of backtracks per iteration.
    pub l_max: usize,
    /// Lower deviation-column bound `gamma_lb >= 0`.
    pub gamma_lb: S,
    /// Upper deviation-column bound `gamma_ub > gamma_lb`.
    pub gamma_ub: S,
    /// Maximum number of iterations.
    pub n_max: usize,
    /// Deviation update rule.
    pub variant: UpdateVariant,
    /// Initial deviation scale `sigma_0 >= 0`.
    pub sigma_0: S,
    /// Optional cap on forward-map evaluations; the run stops after the
    /// iteration in which the cap is reached.
    pub budget: Option<u64>,
    /// Seed of the run's single random stream (initial deviations,
    /// perturbations, observation noise).
    pub seed: u64,
}

impl<S: Scalar> Default for OptimizerConfig<S> {
    fn default() -> Self {
        Self {
            k_particles: 20,
            beta: S::zero(),
            delta: S::one(),
            mu_ls: S::one(),
            c_ls: S::cast(1e-4),
            tau_ls: S::cast(0.1),
            l_max: 15,
            gamma_lb: S::cast(1e-4),
            gamma_ub: S::cast(1e4),
            n_max: 100,
            variant: UpdateVariant::EnKsgd,
            sigma_0: S::cast(1e-2),
            budget: None,
            seed: 0,
        }
    }
}

impl<S: Scalar> OptimizerConfig<S> {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.k_particles < 2 {
            return Err(Error::InvalidEnsembleSize {
                k: self.k_particles,
            });
        }
        if !self.beta.is_finite() || self.beta < S::zero() {
            return fail(format!("beta must be non-negative, got {}", self.beta));
        }
        if !self.delta.is_finite() || self.delta <= S::zero() {
            return fail(format!("delta must be positive, got {}", self.delta));
        }
        if !self.mu_ls.is_finite() || self.mu_ls <= S::zero() {
            return fail(format!("mu_ls must be positive, got {}", self.mu_ls));
        }
        if !(self.c_ls > S::zero() && self.c_ls < S::one()) {
            return fail(format!("c_ls must lie in (0, 1), got {}", self.c_ls));
        }
        if !(self.tau_ls > S::zero() && self.tau_ls < S::one()) {
            return fail(format!("tau_ls must lie in (0, 1), got {}", self.tau_ls));
        }
        if !self.gamma_lb.is_finite()
            || !self.gamma_ub.is_finite()
            || self.gamma_lb < S::zero()
            || self.gamma_ub <= self.gamma_lb
        {
            return fail(format!(
                "deviation bounds must satisfy 0 <= gamma_lb < gamma_ub, got [{}, {}]",
                self.gamma_lb, self.gamma_ub
            ));
        }
        if !self.sigma_0.is_finite() || self.sigma_0 < S::zero() {
            return fail(format!(
                "sigma_0 must be non-negative, got {}",
                self.sigma_0
            ));
        }
        Ok(())
    }
}

/// One completed iteration: the objective at the entering mean, the accepted
/// step size (zero on line-search exhaustion), the backtracks used, and the
/// forward-evaluation count after the iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord<S> {
    pub n: usize,
    pub phi_mean: S,
    pub dt: S,
    pub backtracks: usize,
    pub cumulative_evals: u64,
}

/// Full outcome of one optimization run. The trace ends with a terminal
/// record holding the objective at the final mean, so `terminal_phi` always
/// equals the last record's `phi_mean`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult<S> {
    pub trace: Vec<IterationRecord<S>>,
    pub terminal_mean: Array1<S>,
    pub terminal_phi: S,
    pub total_evals: u64,
}

/// Accepted step of a backtracking line search.
#[derive(Debug, Clone)]
pub struct LineSearchOutcome<S> {
    /// Accepted step size; zero when the search was exhausted.
    pub dt: S,
    pub mean_next: Array1<S>,
    /// Objective observed at `mean_next` (the accepted trial's value, or the
    /// entry value on exhaustion).
    pub phi_next: S,
    pub transform: TransformPair<S>,
    pub backtracks: usize,
    /// Number of trial objective evaluations consumed.
    pub trials: u64,
}

fn with_iteration(err: Error, n: usize) -> Error {
    match err {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("iteration {n}: {context}"),
        },
        Error::Domain(msg) => Error::Domain(format!("iteration {n}: {msg}")),
        other => other,
    }
}

/// Backtracking search over trial step sizes `mu_ls * tau_ls^l`: for each
/// trial the transform pair is rebuilt (it depends on the step size), the
/// proposed mean is `xbar - Y r'` with `r' = dt'/(delta K) T' q`, and the
/// proposal is accepted once the approximate sufficient-decrease condition
/// `Phi(xbar') <= Phi(xbar) - c_ls q^T r'` holds.
///
/// Exhaustion is a defined outcome: step zero, unchanged mean, exact identity
/// transform. Trial objectives that are non-finite or raise a domain error
/// count as rejections.
pub fn backtracking_line_search<S: Scalar, R: Rng>(
    evaluator: &mut Evaluator<'_, S, R>,
    phi_at_mean: S,
    q: &ArrayView1<S>,
    dev: &DeviationMatrix<S>,
    h_proj: &ArrayView2<S>,
    mean: &ArrayView1<S>,
    config: &OptimizerConfig<S>,
) -> Result<LineSearchOutcome<S>> {
    let k = dev.k_particles();
    let mut dt_trial = config.mu_ls;
    for backtracks in 0..config.l_max {
        let pair = transform_matrix(h_proj, dt_trial, config.delta, k)?;
        let scale = dt_trial / (config.delta * S::cast_usize(k));
        let r = pair.t().dot(q) * scale;
        let proposal = mean.to_owned() - dev.matrix().dot(&r);
        let predicted_decrease = q.dot(&r);

        match evaluator.objective(&proposal.view()) {
            Ok(phi_trial) if phi_trial <= phi_at_mean - config.c_ls * predicted_decrease => {
                return Ok(LineSearchOutcome {
                    dt: dt_trial,
                    mean_next: proposal,
                    phi_next: phi_trial,
                    transform: pair,
                    backtracks,
                    trials: backtracks as u64 + 1,
                });
            }
            Ok(_) | Err(Error::Domain(_)) => {
                dt_trial *= config.tau_ls;
            }
            Err(other) => return Err(other),
        }
    }
    Ok(LineSearchOutcome {
        dt: S::zero(),
        mean_next: mean.to_owned(),
        phi_next: phi_at_mean,
        transform: TransformPair::identity(k),
        backtracks: config.l_max,
        trials: config.l_max as u64,
    })
}

/// Runs the ensemble minimization procedure and also returns the mean
/// iterates `xbar_0, ..., xbar_N`.
///
/// `initial_deviations` overrides the default draw from
/// `N(0, sigma_0^2 I)`; its column count must match `config.k_particles`.
/// Every forward-map call (particles, mean, line-search trials) increments
/// the evaluation counter by one.
pub fn enksgd_minimize_traced<S: Scalar>(
    problem: &ProblemSpec<S>,
    x0: &ArrayView1<S>,
    initial_deviations: Option<&ArrayView2<S>>,
    config: &OptimizerConfig<S>,
) -> Result<(RunResult<S>, Vec<Array1<S>>)> {
    config.validate()?;
    let n_x = problem.n_x();
    let n_y = problem.n_y();
    let k = config.k_particles;
    if x0.len() != n_x {
        return Err(Error::DimensionMismatch {
            context: "enksgd_minimize initial mean",
            expected: format!("length {n_x}"),
            actual: format!("length {}", x0.len()),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dev0 = match initial_deviations {
        Some(d) => {
            if d.nrows() != n_x || d.ncols() != k {
                return Err(Error::DimensionMismatch {
                    context: "enksgd_minimize initial deviations",
                    expected: format!("{n_x} x {k}"),
                    actual: format!("{} x {}", d.nrows(), d.ncols()),
                });
            }
            d.to_owned()
        }
        None => gaussian_perturbations::<S, _>(n_x, k, &mut rng) * config.sigma_0,
    };
    let mut ensemble: Ensemble<S> = recombine(&DeviationMatrix::new(dev0), x0)?;
    // The mean is carried explicitly through the loop; the empirical mean of
    // the recombined ensemble equals it only to roundoff, and carrying it
    // keeps the accepted objective values exactly monotone on deterministic
    // problems.
    let mut mean: Array1<S> = x0.to_owned();
    let mut evaluator = Evaluator::new(problem, rng);

    let mut trace: Vec<IterationRecord<S>> = Vec::with_capacity(config.n_max + 1);
    let mut means: Vec<Array1<S>> = Vec::with_capacity(config.n_max + 1);
    means.push(x0.to_owned());
    let mut terminal_phi: Option<S> = None;

    for n in 0..config.n_max {
        let dev = ensemble_deviations(&ensemble);

        let mut forward_values = Array2::zeros((n_y, k));
        for p in 0..k {
            let y = evaluator.forward(&ensemble.particle(p));
            forward_values.column_mut(p).assign(&y);
        }
        let mut evaluated =
            EvaluatedEnsemble::new(forward_values).map_err(|e| with_iteration(e, n))?;

        // Sampled regularizer values feed the Stein fallback when the
        // analytic gradient is missing. Regularizer calls are not
        // forward-map calls and stay off the budget.
        if problem.alpha_x() > S::zero() {
            if let Some(reg) = problem.reg_x() {
                if !reg.has_grad() {
                    let mut values = Array1::zeros(k);
                    for p in 0..k {
                        values[p] = reg.value(&ensemble.particle(p)).ok_or_else(|| {
                            Error::UnsupportedProblem(
                                "state regularizer has neither gradient nor value callback".into(),
                            )
                        })?;
                    }
                    evaluated = evaluated.with_reg_x_values(values)?;
                }
            }
        }
        if problem.alpha_y() > S::zero() {
            if let Some(reg) = problem.reg_y() {
                if !reg.has_grad() {
                    let mut values = Array1::zeros(k);
                    for p in 0..k {
                        values[p] = reg
                            .value(&evaluated.forward_values().column(p))
                            .ok_or_else(|| {
                                Error::UnsupportedProblem(
                                    "observation regularizer has neither gradient nor value \
                                     callback"
                                        .into(),
                                )
                            })?;
                    }
                    evaluated = evaluated.with_reg_y_values(values)?;
                }
            }
        }

        let ybar = evaluator.forward(&mean.view());
        let phi_mean = problem
            .objective_given_forward(&mean.view(), &ybar.view())
            .map_err(|e| with_iteration(e, n))?;
        if !phi_mean.is_finite() {
            return Err(Error::NonFinite {
                context: format!("objective at the ensemble mean, iteration {n}"),
            });
        }

        let derivatives =
            project_derivatives(&dev, &evaluated, &ybar.view(), &mean.view(), problem)
                .map_err(|e| with_iteration(e, n))?;
        let search = backtracking_line_search(
            &mut evaluator,
            phi_mean,
            &derivatives.q.view(),
            &dev,
            &derivatives.h_proj.view(),
            &mean.view(),
            config,
        )?;

        let xi = gaussian_perturbations::<S, _>(n_x, k, &mut evaluator.rng);
        let stepped = deviations_step(
            &dev,
            &search.transform,
            search.dt,
            config.variant,
            config.beta,
            config.delta,
            &xi.view(),
        )?;
        let clipped = clip_deviations(stepped, config.gamma_lb, config.gamma_ub, n_x);
        ensemble =
            recombine(&clipped, &search.mean_next.view()).map_err(|e| with_iteration(e, n))?;

        mean = search.mean_next.clone();
        means.push(search.mean_next.clone());
        terminal_phi = Some(search.phi_next);
        trace.push(IterationRecord {
            n,
            phi_mean,
            dt: search.dt,
            backtracks: search.backtracks,
            cumulative_evals: evaluator.count(),
        });

        if let Some(budget) = config.budget {
            if evaluator.count() >= budget {
                break;
            }
        }
    }

    // Terminal record: the objective at the final mean. It is already known
    // from the last accepted trial (or carried over on exhaustion), so no
    // extra evaluation is charged; a zero-iteration run measures it directly.
    let terminal_phi = match terminal_phi {
        Some(phi) => phi,
        None => evaluator.objective(x0)?,
    };
    if !terminal_phi.is_finite() {
        return Err(Error::NonFinite {
            context: "objective at the terminal mean".into(),
        });
    }
    trace.push(IterationRecord {
        n: trace.len(),
        phi_mean: terminal_phi,
        dt: S::zero(),
        backtracks: 0,
        cumulative_evals: evaluator.count(),
    });

    Ok((
        RunResult {
            trace,
            terminal_mean: mean,
            terminal_phi,
            total_evals: evaluator.count(),
        },
        means,
    ))
}

/// Runs the ensemble minimization procedure.
pub fn enksgd_minimize<S: Scalar>(
    problem: &ProblemSpec<S>,
    x0: &ArrayView1<S>,
    config: &OptimizerConfig<S>,
) -> Result<RunResult<S>> {
    enksgd_minimize_traced(problem, x0, None, config).map(|(result, _)| result)
}

/// Central finite-difference gradient estimate with stencil `h`:
/// component `i` is `(Phi(x + h e_i) - Phi(x - h e_i)) / (2h)`. Costs
/// `2 N_x` forward evaluations.
pub fn cfd_gradient<S: Scalar, R: Rng>(
    evaluator: &mut Evaluator<'_, S, R>,
    x: &ArrayView1<S>,
    h: S,
) -> Result<Array1<S>> {
    if !h.is_finite() || h <= S::zero() {
        return Err(Error::InvalidConfig(format!(
            "stencil size must be positive, got {h}"
        )));
    }
    let two_h = S::cast(2.0) * h;
    let mut point = x.to_owned();
    let mut grad = Array1::zeros(x.len());
    for i in 0..x.len() {
        let center = point[i];
        point[i] = center + h;
        let plus = evaluator.objective(&point.view())?;
        point[i] = center - h;
        let minus = evaluator.objective(&point.view())?;
        point[i] = center;
        grad[i] = (plus - minus) / two_h;
    }
    Ok(grad)
}

/// Gradient descent on the CFD estimate with the same backtracking test,
/// acceptance rule `Phi(x') <= Phi(x) - c_ls dt' g^T g`, and evaluation
/// accounting as the ensemble procedure.
pub fn cfd_gd_minimize<S: Scalar>(
    problem: &ProblemSpec<S>,
    x0: &ArrayView1<S>,
    config: &OptimizerConfig<S>,
    h: S,
) -> Result<RunResult<S>> {
    config.validate()?;
    if x0.len() != problem.n_x() {
        return Err(Error::DimensionMismatch {
            context: "cfd_gd_minimize initial mean",
            expected: format!("length {}", problem.n_x()),
            actual: format!("length {}", x0.len()),
        });
    }

    let rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut evaluator = Evaluator::new(problem, rng);
    let mut mean = x0.to_owned();
    let mut trace: Vec<IterationRecord<S>> = Vec::with_capacity(config.n_max + 1);
    let mut terminal_phi: Option<S> = None;

    for n in 0..config.n_max {
        let phi_mean = evaluator
            .objective(&mean.view())
            .map_err(|e| with_iteration(e, n))?;
        if !phi_mean.is_finite() {
            return Err(Error::NonFinite {
                context: format!("objective at the current mean, iteration {n}"),
            });
        }
        let grad = cfd_gradient(&mut evaluator, &mean.view(), h)?;
        let grad_norm_sq = grad.dot(&grad);

        let mut accepted: Option<(S, Array1<S>, S, usize)> = None;
        let mut dt_trial = config.mu_ls;
        let mut backtracks_used = config.l_max;
        for backtracks in 0..config.l_max {
            let proposal = &mean - &(&grad * dt_trial);
            match evaluator.objective(&proposal.view()) {
                Ok(phi_trial) if phi_trial <= phi_mean - config.c_ls * dt_trial * grad_norm_sq => {
                    accepted = Some((dt_trial, proposal, phi_trial, backtracks));
                    break;
                }
                Ok(_) | Err(Error::Domain(_)) => {
                    dt_trial *= config.tau_ls;
                }
                Err(other) => return Err(other),
            }
            backtracks_used = backtracks + 1;
        }

        let (dt, backtracks) = match accepted {
            Some((dt, next, phi_next, backtracks)) => {
                mean = next;
                terminal_phi = Some(phi_next);
                (dt, backtracks)
            }
            None => {
                terminal_phi = Some(phi_mean);
                (S::zero(), backtracks_used)
            }
        };
        trace.push(IterationRecord {
            n,
            phi_mean,
            dt,
            backtracks,
            cumulative_evals: evaluator.count(),
        });

        if let Some(budget) = config.budget {
            if evaluator.count() >= budget {
                break;
            }
        }
    }

    let terminal_phi = match terminal_phi {
        Some(phi) => phi,
        None => evaluator.objective(&mean.view())?,
    };
    trace.push(IterationRecord {
        n: trace.len(),
        phi_mean: terminal_phi,
        dt: S::zero(),
        backtracks: 0,
        cumulative_evals: evaluator.count(),
    });

    Ok(RunResult {
        trace,
        terminal_mean: mean,
        terminal_phi,
        total_evals: evaluator.count(),
    })
}
