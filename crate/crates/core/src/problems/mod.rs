//! Black-box problem abstraction and the built-in benchmark problems.
//!
//! A problem is a forward map `G`, a loss `D` with analytic derivatives, and
//! optional state/observation regularizers `R` and `T` with weights
//! `alpha_x`, `alpha_y`. The objective is
//! `Phi(x) = D(G(x)) + alpha_x R(x) + alpha_y T(G(x))`.
//! Only `G` calls are charged against the evaluation budget.

mod builtins;

pub use builtins::{
    linear_ls_problem, nls_problem, poisson_regression_problem, signal_reconstruction_problem,
    target_signal, NLS_PROBLEM_NAMES,
};

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

type ValueFn<S> = Box<dyn Fn(&ArrayView1<S>) -> S + Send + Sync>;
type GradFn<S> = Box<dyn Fn(&ArrayView1<S>) -> Array1<S> + Send + Sync>;
type HessFn<S> = Box<dyn Fn(&ArrayView1<S>) -> Array2<S> + Send + Sync>;
type FallibleValueFn<S> = Box<dyn Fn(&ArrayView1<S>) -> Result<S> + Send + Sync>;
type FallibleGradFn<S> = Box<dyn Fn(&ArrayView1<S>) -> Result<Array1<S>> + Send + Sync>;
type FallibleHessFn<S> = Box<dyn Fn(&ArrayView1<S>) -> Result<Array2<S>> + Send + Sync>;
type ForwardFn<S> = Box<dyn Fn(&ArrayView1<S>) -> Array1<S> + Send + Sync>;

/// Loss function `D` on observation space. Value, gradient, and Hessian are
/// all required; the methods are fallible so losses with a restricted domain
/// (for example `-sum log y`) can reject invalid forward outputs.
pub struct Loss<S> {
    value: FallibleValueFn<S>,
    grad: FallibleGradFn<S>,
    hess: FallibleHessFn<S>,
}

impl<S: Scalar> Loss<S> {
    pub fn new(
        value: FallibleValueFn<S>,
        grad: FallibleGradFn<S>,
        hess: FallibleHessFn<S>,
    ) -> Self {
        Self { value, grad, hess }
    }

    /// The quadratic loss `D(y) = 1/2 ||y - y_obs||^2`.
    pub fn quadratic(y_obs: Array1<S>) -> Self {
        let n = y_obs.len();
        let obs_v = y_obs.clone();
        let obs_g = y_obs;
        Self {
            value: Box::new(move |y| {
                Ok((y - &obs_v).iter().map(|&r| r * r).sum::<S>() / S::cast(2.0))
            }),
            grad: Box::new(move |y| Ok(y - &obs_g)),
            hess: Box::new(move |_| Ok(Array2::eye(n))),
        }
    }

    pub fn value(&self, y: &ArrayView1<S>) -> Result<S> {
        (self.value)(y)
    }

    pub fn grad(&self, y: &ArrayView1<S>) -> Result<Array1<S>> {
        (self.grad)(y)
    }

    pub fn hess(&self, y: &ArrayView1<S>) -> Result<Array2<S>> {
        (self.hess)(y)
    }
}

/// Regularization function with independently optional value, gradient, and
/// Hessian callbacks. Missing derivatives trigger the sampled Stein fallback
/// in the estimator module.
#[derive(Default)]
pub struct Regularizer<S> {
    value: Option<ValueFn<S>>,
    grad: Option<GradFn<S>>,
    hess: Option<HessFn<S>>,
}

impl<S: Scalar> Regularizer<S> {
    pub fn new() -> Self {
        Self {
            value: None,
            grad: None,
            hess: None,
        }
    }

    pub fn with_value(mut self, f: ValueFn<S>) -> Self {
        self.value = Some(f);
        self
    }

    pub fn with_grad(mut self, f: GradFn<S>) -> Self {
        self.grad = Some(f);
        self
    }

    pub fn with_hess(mut self, f: HessFn<S>) -> Self {
        self.hess = Some(f);
        self
    }

    pub fn value(&self, x: &ArrayView1<S>) -> Option<S> {
        self.value.as_ref().map(|f| f(x))
    }

    pub fn grad(&self, x: &ArrayView1<S>) -> Option<Array1<S>> {
        self.grad.as_ref().map(|f| f(x))
    }

    pub fn hess(&self, x: &ArrayView1<S>) -> Option<Array2<S>> {
        self.hess.as_ref().map(|f| f(x))
    }

    pub fn has_value(&self) -> bool {
        self.value.is_some()
    }

    pub fn has_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn has_hess(&self) -> bool {
        self.hess.is_some()
    }
}

/// Additive Gaussian observation noise `eta ~ N(0, sigma^2 I)`, drawn fresh
/// on every forward-map call. `sigma = 0` is the deterministic map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel<S> {
    sigma: S,
}

impl<S: Scalar> NoiseModel<S> {
    pub fn new(sigma: S) -> Result<Self> {
        if !sigma.is_finite() || sigma < S::zero() {
            return Err(Error::InvalidConfig(format!(
                "noise sigma must be finite and non-negative, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    pub fn noiseless() -> Self {
        Self { sigma: S::zero() }
    }

    pub fn sigma(&self) -> S {
        self.sigma
    }

    pub fn is_active(&self) -> bool {
        self.sigma > S::zero()
    }

    /// Adds one fresh noise draw in place. Consumes no randomness when
    /// `sigma = 0`, so noiseless runs have reproducible streams regardless
    /// of how many evaluations they make.
    pub fn apply<R: Rng>(&self, y: &mut Array1<S>, rng: &mut R) {
        if !self.is_active() {
            return;
        }
        for v in y.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += self.sigma * S::cast(z);
        }
    }
}

/// Returns `y + eta` with a fresh draw from the noise model.
pub fn apply_noise<S: Scalar, R: Rng>(
    y: &ArrayView1<S>,
    model: &NoiseModel<S>,
    rng: &mut R,
) -> Array1<S> {
    let mut out = y.to_owned();
    model.apply(&mut out, rng);
    out
}

/// Monotone counter of forward-map calls; the unit of account for budgets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounter {
    count: u64,
}

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn increment(&mut self) {
        self.count += 1;
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

/// A generated dataset table, dumpable to CSV for inspection.
#[derive(Debug, Clone)]
pub struct NamedTable<S> {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<S>>,
}

/// Collection of tables describing a simulated dataset.
#[derive(Debug, Clone)]
pub struct Dataset<S> {
    pub tables: Vec<NamedTable<S>>,
}

impl<S> Default for Dataset<S> {
    fn default() -> Self {
        Self { tables: Vec::new() }
    }
}

impl<S: Scalar> Dataset<S> {
    /// Writes one `<table-name>.csv` per table into `dir`, creating it if
    /// needed.
    pub fn write_csv_dir(&self, dir: &Path) -> Result<()> {
        use std::io::Write;
        std::fs::create_dir_all(dir)?;
        for table in &self.tables {
            let path = dir.join(format!("{}.csv", table.name));
            let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(file, "{}", table.columns.join(","))?;
            for row in &table.rows {
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                writeln!(file, "{}", line.join(","))?;
            }
        }
        Ok(())
    }
}

/// A black-box optimization problem: forward map, loss, optional
/// regularizers, noise model, and the benchmark starting point.
pub struct ProblemSpec<S> {
    name: String,
    n_x: usize,
    n_y: usize,
    forward: ForwardFn<S>,
    loss: Loss<S>,
    reg_x: Option<Regularizer<S>>,
    reg_y: Option<Regularizer<S>>,
    alpha_x: S,
    alpha_y: S,
    noise: NoiseModel<S>,
    initial_mean: Array1<S>,
    dataset: Option<Dataset<S>>,
}

impl<S: Scalar> ProblemSpec<S> {
    pub fn new(
        name: impl Into<String>,
        n_x: usize,
        n_y: usize,
        forward: ForwardFn<S>,
        loss: Loss<S>,
        initial_mean: Array1<S>,
    ) -> Result<Self> {
        if n_x == 0 || n_y == 0 {
            return Err(Error::InvalidConfig(
                "problem dimensions must be positive".into(),
            ));
        }
        if initial_mean.len() != n_x {
            return Err(Error::DimensionMismatch {
                context: "ProblemSpec initial mean",
                expected: format!("length {n_x}"),
                actual: format!("length {}", initial_mean.len()),
            });
        }
        Ok(Self {
            name: name.into(),
            n_x,
            n_y,
            forward,
            loss,
            reg_x: None,
            reg_y: None,
            alpha_x: S::zero(),
            alpha_y: S::zero(),
            noise: NoiseModel::noiseless(),
            initial_mean,
            dataset: None,
        })
    }

    pub fn with_reg_x(mut self, alpha: S, reg: Regularizer<S>) -> Result<Self> {
        if !alpha.is_finite() || alpha < S::zero() {
            return Err(Error::InvalidConfig(format!(
                "alpha_x must be finite and non-negative, got {alpha}"
            )));
        }
        self.alpha_x = alpha;
        self.reg_x = Some(reg);
        Ok(self)
    }

    pub fn with_reg_y(mut self, alpha: S, reg: Regularizer<S>) -> Result<Self> {
        if !alpha.is_finite() || alpha < S::zero() {
            return Err(Error::InvalidConfig(format!(
                "alpha_y must be finite and non-negative, got {alpha}"
            )));
        }
        self.alpha_y = alpha;
        self.reg_y = Some(reg);
        Ok(self)
    }

    pub fn with_noise(mut self, noise: NoiseModel<S>) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_dataset(mut self, dataset: Dataset<S>) -> Self {
        self.dataset = Some(dataset);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn alpha_x(&self) -> S {
        self.alpha_x
    }

    pub fn alpha_y(&self) -> S {
        self.alpha_y
    }

    pub fn loss(&self) -> &Loss<S> {
        &self.loss
    }

    pub fn reg_x(&self) -> Option<&Regularizer<S>> {
        self.reg_x.as_ref()
    }

    pub fn reg_y(&self) -> Option<&Regularizer<S>> {
        self.reg_y.as_ref()
    }

    pub fn noise(&self) -> &NoiseModel<S> {
        &self.noise
    }

    pub fn initial_mean(&self) -> ArrayView1<'_, S> {
        self.initial_mean.view()
    }

    pub fn dataset(&self) -> Option<&Dataset<S>> {
        self.dataset.as_ref()
    }

    /// Deterministic forward map without noise or counting. Used for
    /// diagnostics, wrapping, and tests; optimizer code must go through an
    /// [`Evaluator`].
    pub fn forward_raw(&self, x: &ArrayView1<S>) -> Array1<S> {
        (self.forward)(x)
    }

    /// Assembles `Phi(x)` from an already-evaluated forward output.
    pub fn objective_given_forward(&self, x: &ArrayView1<S>, y: &ArrayView1<S>) -> Result<S> {
        let mut phi = self.loss.value(y)?;
        if self.alpha_x > S::zero() {
            let reg = self.reg_x.as_ref().ok_or_else(|| {
                Error::UnsupportedProblem("alpha_x > 0 but no state regularizer supplied".into())
            })?;
            let r = reg.value(x).ok_or_else(|| {
                Error::UnsupportedProblem(
                    "state regularizer has no value callback; objective not computable".into(),
                )
            })?;
            phi += self.alpha_x * r;
        }
        if self.alpha_y > S::zero() {
            let reg = self.reg_y.as_ref().ok_or_else(|| {
                Error::UnsupportedProblem(
                    "alpha_y > 0 but no observation regularizer supplied".into(),
                )
            })?;
            let t = reg.value(y).ok_or_else(|| {
                Error::UnsupportedProblem(
                    "observation regularizer has no value callback; objective not computable"
                        .into(),
                )
            })?;
            phi += self.alpha_y * t;
        }
        Ok(phi)
    }

    /// Noise-free objective value, uncounted. Diagnostic only.
    pub fn objective_noiseless(&self, x: &ArrayView1<S>) -> Result<S> {
        let y = self.forward_raw(x);
        self.objective_given_forward(x, &y.view())
    }
}

/// Counted, noise-aware access to a problem's forward map. One evaluator per
/// run; its RNG is the run's single stream for noise draws and ensemble
/// randomness.
pub struct Evaluator<'p, S, R> {
    problem: &'p ProblemSpec<S>,
    pub rng: R,
    counter: EvalCounter,
}

impl<'p, S: Scalar, R: Rng> Evaluator<'p, S, R> {
    pub fn new(problem: &'p ProblemSpec<S>, rng: R) -> Self {
        Self {
            problem,
            rng,
            counter: EvalCounter::new(),
        }
    }

    pub fn problem(&self) -> &'p ProblemSpec<S> {
        self.problem
    }

    /// One forward-map call: increments the counter and applies fresh noise.
    pub fn forward(&mut self, x: &ArrayView1<S>) -> Array1<S> {
        self.counter.increment();
        let mut y = self.problem.forward_raw(x);
        self.problem.noise.apply(&mut y, &mut self.rng);
        y
    }

    /// Objective at `x`, costing exactly one forward-map call.
    pub fn objective(&mut self, x: &ArrayView1<S>) -> Result<S> {
        let y = self.forward(x);
        self.problem.objective_given_forward(x, &y.view())
    }

    pub fn count(&self) -> u64 {
        self.counter.count()
    }
}

type ProblemBuilder<S> = Box<dyn Fn(u64) -> Result<ProblemSpec<S>> + Send + Sync>;

/// Name-indexed problem constructors: the built-in benchmark suite plus any
/// user-registered extensions. Builders receive the dataset seed; problems
/// without simulated data ignore it.
pub struct ProblemRegistry<S> {
    builders: BTreeMap<String, ProblemBuilder<S>>,
}

impl<S: Scalar> ProblemRegistry<S> {
    /// Registry preloaded with the built-in problems.
    pub fn with_builtins() -> Self {
        let mut registry = Self {
            builders: BTreeMap::new(),
        };
        registry.register("linear_ls", |_| linear_ls_problem(13, S::zero()));
        for name in NLS_PROBLEM_NAMES {
            registry.register(name, move |_| nls_problem(name));
        }
        registry.register("poisson_regression", poisson_regression_problem);
        registry.register("signal_reconstruction", signal_reconstruction_problem);
        registry
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        builder: impl Fn(u64) -> Result<ProblemSpec<S>> + Send + Sync + 'static,
    ) {
        self.builders.insert(name.into(), Box::new(builder));
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, dataset_seed: u64) -> Result<ProblemSpec<S>> {
        match self.builders.get(name) {
            Some(builder) => builder(dataset_seed),
            None => Err(Error::UnknownProblem {
                name: name.to_string(),
                available: self.names().join(", "),
            }),
        }
    }
}
