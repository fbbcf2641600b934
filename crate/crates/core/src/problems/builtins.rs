//! Built-in benchmark problems: an ill-conditioned diagonal linear least
//! squares instance, four classic nonlinear least squares test functions,
//! a simulated Poisson regression MLE, and a nonlinear-amplifier signal
//! reconstruction with Tikhonov-style regularization.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Dataset, Loss, NamedTable, NoiseModel, ProblemSpec, Regularizer};

/// Names accepted by [`nls_problem`].
pub const NLS_PROBLEM_NAMES: [&str; 4] = ["nls_rosenbrock", "hs25", "mgh11", "mgh18"];

/// Ill-conditioned linear least squares: diagonal forward map with entries
/// `g_ii = 10^(-2 + 0.5 (i - 1))` and loss `D(y) = 1/2 ||y||^2`. The
/// benchmark start is `10^5 * 1`.
pub fn linear_ls_problem<S: Scalar>(n: usize, sigma: S) -> Result<ProblemSpec<S>> {
    if n == 0 {
        return Err(Error::InvalidConfig(
            "linear_ls dimension must be positive".into(),
        ));
    }
    let diag: Array1<S> =
        Array1::from_iter((0..n).map(|i| S::cast(10.0f64.powf(-2.0 + 0.5 * i as f64))));
    let forward = Box::new(move |x: &ArrayView1<S>| &diag * x);
    let initial = Array1::from_elem(n, S::cast(1e5));
    let spec = ProblemSpec::new(
        "linear_ls",
        n,
        n,
        forward,
        Loss::quadratic(Array1::zeros(n)),
        initial,
    )?;
    Ok(spec.with_noise(NoiseModel::new(sigma)?))
}

/// Classic nonlinear least squares test problems in residual form with
/// `D(y) = 1/2 ||y||^2` and the source collections' standard starting points.
pub fn nls_problem<S: Scalar>(name: &str) -> Result<ProblemSpec<S>> {
    match name {
        "nls_rosenbrock" => {
            let forward = Box::new(|x: &ArrayView1<S>| {
                let ten = S::cast(10.0);
                Array1::from_vec(vec![S::one() - x[0], ten * (x[1] - x[0] * x[0])])
            });
            ProblemSpec::new(
                name,
                2,
                2,
                forward,
                Loss::quadratic(Array1::zeros(2)),
                Array1::from_vec(vec![S::cast(-1.2), S::one()]),
            )
        }
        "hs25" => {
            // Residuals -0.01 i + exp(-(u_i - x2)^x3 / x1),
            // u_i = 25 + (-50 ln(0.01 i))^(2/3), i = 1..99.
            let m = 99;
            let u: Vec<S> = (1..=m)
                .map(|i| S::cast(25.0 + (-50.0 * (0.01 * i as f64).ln()).powf(2.0 / 3.0)))
                .collect();
            let forward = Box::new(move |x: &ArrayView1<S>| {
                Array1::from_iter(u.iter().enumerate().map(|(idx, &ui)| {
                    let ti = S::cast(0.01 * (idx + 1) as f64);
                    (-(ui - x[1]).powf(x[2]) / x[0]).exp() - ti
                }))
            });
            ProblemSpec::new(
                name,
                3,
                m,
                forward,
                Loss::quadratic(Array1::zeros(m)),
                Array1::from_vec(vec![S::cast(100.0), S::cast(12.5), S::cast(3.0)]),
            )
        }
        "mgh11" => {
            // Gulf research and development: exp(-|u_i - x2|^x3 / x1) - t_i,
            // t_i = i/100, u_i = 25 + (-50 ln t_i)^(2/3), i = 1..99.
            let m = 99;
            let u: Vec<S> = (1..=m)
                .map(|i| S::cast(25.0 + (-50.0 * (0.01 * i as f64).ln()).powf(2.0 / 3.0)))
                .collect();
            let forward = Box::new(move |x: &ArrayView1<S>| {
                Array1::from_iter(u.iter().enumerate().map(|(idx, &ui)| {
                    let ti = S::cast(0.01 * (idx + 1) as f64);
                    (-(ui - x[1]).abs().powf(x[2]) / x[0]).exp() - ti
                }))
            });
            ProblemSpec::new(
                name,
                3,
                m,
                forward,
                Loss::quadratic(Array1::zeros(m)),
                Array1::from_vec(vec![S::cast(5.0), S::cast(2.5), S::cast(0.15)]),
            )
        }
        "mgh18" => {
            // Biggs EXP6: x3 e^(-t x1) - x4 e^(-t x2) + x6 e^(-t x5) - y_i,
            // t_i = 0.1 i, y_i = e^(-t_i) - 5 e^(-10 t_i) + 3 e^(-4 t_i), i = 1..13.
            let m = 13;
            let data: Vec<(S, S)> = (1..=m)
                .map(|i| {
                    let t = 0.1 * i as f64;
                    let y = (-t).exp() - 5.0 * (-10.0 * t).exp() + 3.0 * (-4.0 * t).exp();
                    (S::cast(t), S::cast(y))
                })
                .collect();
            let forward = Box::new(move |x: &ArrayView1<S>| {
                Array1::from_iter(data.iter().map(|&(t, y)| {
                    x[2] * (-t * x[0]).exp() - x[3] * (-t * x[1]).exp() + x[5] * (-t * x[4]).exp()
                        - y
                }))
            });
            ProblemSpec::new(
                name,
                6,
                m,
                forward,
                Loss::quadratic(Array1::zeros(m)),
                Array1::from_vec(vec![
                    S::one(),
                    S::cast(2.0),
                    S::one(),
                    S::one(),
                    S::one(),
                    S::one(),
                ]),
            )
        }
        other => Err(Error::UnknownProblem {
            name: other.to_string(),
            available: NLS_PROBLEM_NAMES.join(", "),
        }),
    }
}

/// `ln(n!)` via direct summation for small `n` and a Stirling series beyond.
fn ln_factorial(n: u64) -> f64 {
    if n <= 256 {
        (2..=n).map(|j| (j as f64).ln()).sum()
    } else {
        let x = n as f64;
        x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + 1.0 / (12.0 * x)
            - 1.0 / (360.0 * x.powi(3))
    }
}

/// Poisson regression MLE on a simulated dataset: 41 features, 189
/// observations, ill-conditioned feature covariance. Forward output `i` is
/// the Poisson probability of count `b_i` under rate `exp(a_i . x)`; the loss
/// is the negative log likelihood `-1^T log(y)`.
pub fn poisson_regression_problem<S: Scalar>(seed: u64) -> Result<ProblemSpec<S>> {
    let n_x = 41;
    let n_y = 189;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Feature covariance is diagonal with entries 10^(-5 + 0.1 (m - 1)).
    let feature_std: Vec<f64> = (0..n_x)
        .map(|m| 10.0f64.powf(-5.0 + 0.1 * m as f64).sqrt())
        .collect();
    let mut features = vec![vec![0.0f64; n_x]; n_y];
    for row in features.iter_mut() {
        for (m, value) in row.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *value = feature_std[m] * z;
        }
    }
    let x_star: Vec<f64> = (0..n_x).map(|_| StandardNormal.sample(&mut rng)).collect();
    let counts: Vec<u64> = features
        .iter()
        .map(|a| {
            let rate: f64 = a
                .iter()
                .zip(&x_star)
                .map(|(ai, xi)| ai * xi)
                .sum::<f64>()
                .exp();
            let draw: f64 = Poisson::new(rate).expect("positive rate").sample(&mut rng);
            draw.round() as u64
        })
        .collect();

    let a_matrix: Array2<S> = Array2::from_shape_fn((n_y, n_x), |(i, m)| S::cast(features[i][m]));
    let count_s: Array1<S> = Array1::from_iter(counts.iter().map(|&b| S::cast(b as f64)));
    let ln_b_factorial: Array1<S> =
        Array1::from_iter(counts.iter().map(|&b| S::cast(ln_factorial(b))));

    // Probability of datum i, computed in log space to survive large rates:
    // exp(b_i s_i - exp(s_i) - ln(b_i!)) with s_i = a_i . x.
    let forward = Box::new(move |x: &ArrayView1<S>| {
        let s = a_matrix.dot(x);
        Array1::from_iter(
            s.iter()
                .zip(count_s.iter())
                .zip(ln_b_factorial.iter())
                .map(|((&si, &bi), &lbf)| (bi * si - si.exp() - lbf).exp()),
        )
    });

    let check_domain = |y: &ArrayView1<S>| -> Result<()> {
        if let Some(pos) = y.iter().position(|&v| v <= S::zero() || !v.is_finite()) {
            return Err(Error::Domain(format!(
                "log-likelihood undefined: forward output component {pos} is not positive"
            )));
        }
        Ok(())
    };
    let loss = Loss::new(
        Box::new(move |y: &ArrayView1<S>| {
            check_domain(y)?;
            Ok(-y.iter().map(|&v| v.ln()).sum::<S>())
        }),
        Box::new(move |y: &ArrayView1<S>| {
            check_domain(y)?;
            Ok(y.mapv(|v| -S::one() / v))
        }),
        Box::new(move |y: &ArrayView1<S>| {
            check_domain(y)?;
            let mut h = Array2::zeros((y.len(), y.len()));
            for (i, &v) in y.iter().enumerate() {
                h[[i, i]] = S::one() / (v * v);
            }
            Ok(h)
        }),
    );

    let mut dataset = Dataset::default();
    dataset.tables.push(NamedTable {
        name: "features".into(),
        columns: (1..=n_x).map(|m| format!("a{m}")).collect(),
        rows: features
            .iter()
            .map(|row| row.iter().map(|&v| S::cast(v)).collect())
            .collect(),
    });
    dataset.tables.push(NamedTable {
        name: "counts".into(),
        columns: vec!["b".into()],
        rows: counts.iter().map(|&b| vec![S::cast(b as f64)]).collect(),
    });
    dataset.tables.push(NamedTable {
        name: "true_parameter".into(),
        columns: vec!["x_star".into()],
        rows: x_star.iter().map(|&v| vec![S::cast(v)]).collect(),
    });

    Ok(ProblemSpec::new(
        "poisson_regression",
        n_x,
        n_y,
        forward,
        loss,
        Array1::from_elem(n_x, S::cast(2.5)),
    )?
    .with_dataset(dataset))
}

/// Half-wave rectified sine `max(0, 20 sin(6 pi t))`, the signal the
/// reconstruction benchmark tries to recover.
pub fn target_signal<S: Scalar>(t: S) -> S {
    let arg = S::cast(6.0 * std::f64::consts::PI) * t;
    (S::cast(20.0) * arg.sin()).max(S::zero())
}

/// Signal reconstruction through a saturating amplifier
/// `G(x)_i = 100 tanh(x_i / 25)`: quadratic misfit against noisy
/// measurements, endpoint pinning `1/2 ||W x||^2` with weight `10^10`, and
/// smoothing `1/2 ||F G(x)||^2` with weight `5` where `F` is the forward
/// difference matrix.
pub fn signal_reconstruction_problem<S: Scalar>(seed: u64) -> Result<ProblemSpec<S>> {
    let n = 101;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let target: Array1<S> = Array1::from_iter(times.iter().map(|&t| target_signal(S::cast(t))));

    let amplify = |x: &ArrayView1<S>| -> Array1<S> {
        x.mapv(|v| S::cast(100.0) * (v / S::cast(25.0)).tanh())
    };
    let amplified = amplify(&target.view());
    let noise_std = S::cast(15.0);
    let y_obs: Array1<S> = Array1::from_iter(amplified.iter().map(|&v| {
        let z: f64 = StandardNormal.sample(&mut rng);
        v + noise_std * S::cast(z)
    }));

    // Endpoint regularizer: W is zero except 1 at diagonal positions 1 and n.
    let reg_x = Regularizer::new()
        .with_value(Box::new(move |x: &ArrayView1<S>| {
            (x[0] * x[0] + x[n - 1] * x[n - 1]) / S::cast(2.0)
        }))
        .with_grad(Box::new(move |x: &ArrayView1<S>| {
            let mut g = Array1::zeros(n);
            g[0] = x[0];
            g[n - 1] = x[n - 1];
            g
        }))
        .with_hess(Box::new(move |_x: &ArrayView1<S>| {
            let mut h = Array2::zeros((n, n));
            h[[0, 0]] = S::one();
            h[[n - 1, n - 1]] = S::one();
            h
        }));

    // Smoothing regularizer on observations via the (n-1) x n forward
    // difference matrix F.
    let ftf = {
        let mut h = Array2::<S>::zeros((n, n));
        for i in 0..n - 1 {
            h[[i, i]] += S::one();
            h[[i + 1, i + 1]] += S::one();
            h[[i, i + 1]] -= S::one();
            h[[i + 1, i]] -= S::one();
        }
        h
    };
    let ftf_grad = ftf.clone();
    let reg_y = Regularizer::new()
        .with_value(Box::new(move |y: &ArrayView1<S>| {
            let mut acc = S::zero();
            for i in 0..y.len() - 1 {
                let d = y[i] - y[i + 1];
                acc += d * d;
            }
            acc / S::cast(2.0)
        }))
        .with_grad(Box::new(move |y: &ArrayView1<S>| ftf_grad.dot(y)))
        .with_hess(Box::new(move |_y: &ArrayView1<S>| ftf.clone()));

    let mut dataset = Dataset::default();
    dataset.tables.push(NamedTable {
        name: "signal".into(),
        columns: vec![
            "t".into(),
            "target".into(),
            "amplified".into(),
            "y_obs".into(),
        ],
        rows: (0..n)
            .map(|i| vec![S::cast(times[i]), target[i], amplified[i], y_obs[i]])
            .collect(),
    });

    Ok(ProblemSpec::new(
        "signal_reconstruction",
        n,
        n,
        Box::new(move |x: &ArrayView1<S>| amplify(x)),
        Loss::quadratic(y_obs),
        Array1::zeros(n),
    )?
    .with_reg_x(S::cast(1e10), reg_x)?
    .with_reg_y(S::cast(5.0), reg_y)?
    .with_dataset(dataset))
}
