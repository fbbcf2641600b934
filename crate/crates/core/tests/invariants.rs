//! Property tests of the structural invariants: centering algebra,
//! covariance behavior under affine maps, mean preservation through the full
//! perturb-clip-recombine chain, Stein exactness on linear maps, and the
//! shrinking-deviation consistency of the gradient estimates.

use ndarray::{Array1, Array2, ArrayView1};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use enksgd::ensemble::{
    empirical_covariance, ensemble_deviations, ensemble_mean, projection_matrix, recombine,
    DeviationMatrix, Ensemble,
};
use enksgd::problems::{signal_reconstruction_problem, Loss, ProblemSpec};
use enksgd::stein::{projected_gradient, projected_hessian, EvaluatedEnsemble};
use enksgd::transform::{
    clip_deviations, deviations_step, gaussian_perturbations, transform_matrix, UpdateVariant,
};

fn rng_matrix(rng: &mut StdRng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

fn linear_problem(g: Array2<f64>, y_obs: Array1<f64>) -> ProblemSpec<f64> {
    let (n_y, n_x) = (g.nrows(), g.ncols());
    ProblemSpec::new(
        "linear",
        n_x,
        n_y,
        Box::new(move |x: &ArrayView1<f64>| g.dot(x)),
        Loss::quadratic(y_obs),
        Array1::zeros(n_x),
    )
    .unwrap()
}

fn evaluate_particles(problem: &ProblemSpec<f64>, ens: &Ensemble<f64>) -> EvaluatedEnsemble<f64> {
    let mut fw = Array2::zeros((problem.n_y(), ens.k_particles()));
    for k in 0..ens.k_particles() {
        fw.column_mut(k)
            .assign(&problem.forward_raw(&ens.particle(k)));
    }
    EvaluatedEnsemble::new(fw).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn covariance_is_translation_invariant(seed in 0u64..500, n in 2usize..6, k in 2usize..9) {
        let mut rng = StdRng::seed_from_u64(seed);
        let states = rng_matrix(&mut rng, n, k, 2.0);
        let shift = Array1::from_shape_fn(n, |_| rng.random_range(-5.0..5.0));

        let base = Ensemble::new(states.clone()).unwrap();
        let mut shifted_states = states;
        for mut col in shifted_states.columns_mut() {
            col += &shift;
        }
        let shifted = Ensemble::new(shifted_states).unwrap();

        let a = empirical_covariance(&base);
        let b = empirical_covariance(&shifted);
        let scale = a.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn covariance_conjugates_under_affine_maps(seed in 0u64..500, n in 2usize..5, k in 3usize..9) {
        let mut rng = StdRng::seed_from_u64(seed);
        let states = rng_matrix(&mut rng, n, k, 2.0);
        let a = rng_matrix(&mut rng, n, n, 1.0) + Array2::<f64>::eye(n) * 2.0;
        let b = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));

        let base = Ensemble::new(states.clone()).unwrap();
        let mut mapped = a.dot(&states);
        for mut col in mapped.columns_mut() {
            col += &b;
        }
        let transformed = Ensemble::new(mapped).unwrap();

        let lhs = empirical_covariance(&transformed);
        let rhs = a.dot(&empirical_covariance(&base)).dot(&a.t());
        let scale = rhs.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            prop_assert!((x - y).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn recentering_is_idempotent(seed in 0u64..500, n in 1usize..5, k in 2usize..8) {
        let mut rng = StdRng::seed_from_u64(seed);
        let raw = rng_matrix(&mut rng, n, k, 3.0);
        let mean = Array1::from_shape_fn(n, |_| rng.random_range(-2.0..2.0));

        let rebuilt = recombine(&DeviationMatrix::new(raw.clone()), &mean.view()).unwrap();
        let centered = ensemble_deviations(&rebuilt);

        // The deviations of the recombined ensemble equal raw * Pi_K.
        let pi = projection_matrix::<f64>(k).unwrap();
        let expected = raw.dot(&pi);
        for (x, y) in centered.matrix().iter().zip(expected.iter()) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }

        // Re-centering the centered matrix changes nothing further.
        let twice = recombine(&centered, &mean.view()).unwrap();
        let again = ensemble_deviations(&twice);
        for (x, y) in again.matrix().iter().zip(centered.matrix().iter()) {
            prop_assert!((x - y).abs() <= 1e-13 * y.abs().max(1.0));
        }
    }

    #[test]
    fn full_update_chain_preserves_the_requested_mean(
        seed in 0u64..500,
        n in 2usize..6,
        k in 2usize..8,
        dt in 0.0f64..2.0,
        beta in 0.0f64..0.5,
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let dev = DeviationMatrix::new(rng_matrix(&mut rng, n, k, 1.0));
        let target_mean = Array1::from_shape_fn(n, |_| rng.random_range(-3.0..3.0));

        // Random PSD projected Hessian.
        let half = rng_matrix(&mut rng, k, k, 1.0);
        let h = half.t().dot(&half);
        let pair = if dt > 0.0 {
            transform_matrix(&h.view(), dt, 1.0, k).unwrap()
        } else {
            enksgd::transform::TransformPair::identity(k)
        };
        let mut chacha = ChaCha8Rng::seed_from_u64(seed);
        let xi = gaussian_perturbations::<f64, _>(n, k, &mut chacha);

        let stepped = deviations_step(
            &dev, &pair, dt, UpdateVariant::EnKsgd, beta, 1.0, &xi.view(),
        ).unwrap();
        let clipped = clip_deviations(stepped, 1e-4, 1e4, n);
        let rebuilt = recombine(&clipped, &target_mean.view()).unwrap();
        let mean = ensemble_mean(&rebuilt);
        for i in 0..n {
            prop_assert!(
                (mean[i] - target_mean[i]).abs() <= 1e-12 * target_mean[i].abs().max(1.0),
                "component {}: {} vs {}", i, mean[i], target_mean[i]
            );
        }
    }

    #[test]
    fn stein_estimates_are_exact_on_linear_maps(
        seed in 0u64..500,
        n_x in 2usize..8,
        n_y in 2usize..8,
        k in 2usize..10,
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let g = rng_matrix(&mut rng, n_y, n_x, 1.0);
        let y_obs = Array1::from_shape_fn(n_y, |_| rng.random_range(-1.0..1.0));
        let problem = linear_problem(g.clone(), y_obs.clone());

        let states = rng_matrix(&mut rng, n_x, k, 1.5);
        let ens = Ensemble::new(states).unwrap();
        let mean = ensemble_mean(&ens);
        let dev = ensemble_deviations(&ens);
        let ev = evaluate_particles(&problem, &ens);
        let ybar = problem.forward_raw(&mean.view());

        let q = projected_gradient(&dev, &ev, &ybar.view(), &mean.view(), &problem).unwrap();
        let analytic_q = dev.matrix().t().dot(&g.t().dot(&(&g.dot(&mean) - &y_obs)));
        let q_scale = analytic_q.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        for (a, b) in q.iter().zip(analytic_q.iter()) {
            prop_assert!((a - b).abs() <= 1e-10 * q_scale);
        }

        let h = projected_hessian(&dev, &ev, &ybar.view(), &mean.view(), &problem).unwrap();
        let gy = g.dot(&dev.matrix());
        let analytic_h = gy.t().dot(&gy);
        let h_scale = analytic_h.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        for (a, b) in h.iter().zip(analytic_h.iter()) {
            prop_assert!((a - b).abs() <= 1e-10 * h_scale);
        }
    }

    #[test]
    fn projected_hessian_stays_positive_semidefinite(
        seed in 0u64..500,
        n_x in 2usize..6,
        n_y in 2usize..6,
        k in 2usize..8,
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let g = rng_matrix(&mut rng, n_y, n_x, 1.0);
        let problem = linear_problem(g, Array1::zeros(n_y));
        let states = rng_matrix(&mut rng, n_x, k, 1.0);
        let ens = Ensemble::new(states).unwrap();
        let mean = ensemble_mean(&ens);
        let dev = ensemble_deviations(&ens);
        let ev = evaluate_particles(&problem, &ens);
        let ybar = problem.forward_raw(&mean.view());

        let h = projected_hessian(&dev, &ev, &ybar.view(), &mean.view(), &problem).unwrap();
        let eig = enksgd::linalg::symmetric_eigen(&h.view()).unwrap();
        for &w in eig.eigenvalues.iter() {
            prop_assert!(w >= -1e-10, "negative eigenvalue {}", w);
        }
    }

    #[test]
    fn stein_quantities_are_affine_covariant(seed in 0u64..300) {
        // Replacing the ensemble by A X + b 1^T and the problem by
        // x -> Phi(A x + b) leaves Gamma, q, and h unchanged: both runs see
        // the same physical evaluation points.
        let mut rng = StdRng::seed_from_u64(seed);
        let (n_x, n_y, k) = (3usize, 4usize, 6usize);
        let g = rng_matrix(&mut rng, n_y, n_x, 1.0);
        let y_obs = Array1::from_shape_fn(n_y, |_| rng.random_range(-1.0..1.0));
        let a = rng_matrix(&mut rng, n_x, n_x, 0.5) + Array2::<f64>::eye(n_x) * 2.0;
        let b = Array1::from_shape_fn(n_x, |_| rng.random_range(-1.0..1.0));

        let base = linear_problem(g.clone(), y_obs.clone());
        let composed = {
            let g = g.clone();
            let a = a.clone();
            let b = b.clone();
            ProblemSpec::new(
                "composed",
                n_x,
                n_y,
                Box::new(move |x: &ArrayView1<f64>| g.dot(&(a.dot(x) + &b))),
                Loss::quadratic(y_obs.clone()),
                Array1::zeros(n_x),
            )
            .unwrap()
        };

        let states_tilde = rng_matrix(&mut rng, n_x, k, 1.0);
        let mut states = a.dot(&states_tilde);
        for mut col in states.columns_mut() {
            col += &b;
        }

        let physical = Ensemble::new(states).unwrap();
        let pulled_back = Ensemble::new(states_tilde).unwrap();

        let run = |problem: &ProblemSpec<f64>, ens: &Ensemble<f64>| {
            let mean = ensemble_mean(ens);
            let dev = ensemble_deviations(ens);
            let ev = evaluate_particles(problem, ens);
            let ybar = problem.forward_raw(&mean.view());
            (
                projected_gradient(&dev, &ev, &ybar.view(), &mean.view(), problem).unwrap(),
                projected_hessian(&dev, &ev, &ybar.view(), &mean.view(), problem).unwrap(),
            )
        };
        let (q_phys, h_phys) = run(&base, &physical);
        let (q_tilde, h_tilde) = run(&composed, &pulled_back);

        let q_scale = q_phys.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        for (x, y) in q_phys.iter().zip(q_tilde.iter()) {
            prop_assert!((x - y).abs() <= 1e-10 * q_scale);
        }
        let h_scale = h_phys.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        for (x, y) in h_phys.iter().zip(h_tilde.iter()) {
            prop_assert!((x - y).abs() <= 1e-10 * h_scale);
        }
    }
}

#[test]
fn stein_gradient_error_decays_as_deviations_shrink() {
    // On the amplifier problem (analytic regularizer derivatives available),
    // the estimate q must approach Y^T grad Phi(xbar) at least linearly as
    // the ensemble spread is halved.
    let problem = signal_reconstruction_problem::<f64>(13).unwrap();
    let n = problem.n_x();
    let k = 40;
    let mut rng = StdRng::seed_from_u64(5);
    let xbar = Array1::from_shape_fn(n, |i| 10.0 * (i as f64 / 25.0).sin());

    // Analytic gradient of the objective through the diagonal Jacobian of
    // the amplifier: J = diag(4 (1 - tanh^2(x/25))).
    let ybar = problem.forward_raw(&xbar.view());
    let jac_diag = xbar.mapv(|v| 4.0 * (1.0 - (v / 25.0).tanh().powi(2)));
    let grad_d = problem.loss().grad(&ybar.view()).unwrap();
    let grad_t = problem.reg_y().unwrap().grad(&ybar.view()).unwrap();
    let grad_r = problem.reg_x().unwrap().grad(&xbar.view()).unwrap();
    let full_grad =
        &(&jac_diag * &(&grad_d + &(&grad_t * problem.alpha_y()))) + &(&grad_r * problem.alpha_x());

    let base_dev = Array2::from_shape_fn((n, k), |_| rng.random_range(-1.0..1.0));
    let mut errors = Vec::new();
    for halvings in 0..4 {
        let sigma = 0.2 / f64::powi(2.0, halvings);
        let dev_raw = &base_dev * sigma;
        let ens = recombine(&DeviationMatrix::new(dev_raw), &xbar.view()).unwrap();
        let dev = ensemble_deviations(&ens);
        let mean = ensemble_mean(&ens);
        let ev = {
            let mut fw = Array2::zeros((n, k));
            for p in 0..k {
                fw.column_mut(p)
                    .assign(&problem.forward_raw(&ens.particle(p)));
            }
            EvaluatedEnsemble::new(fw).unwrap()
        };
        let ybar_run = problem.forward_raw(&mean.view());
        let q = projected_gradient(&dev, &ev, &ybar_run.view(), &mean.view(), &problem).unwrap();
        let reference = dev.matrix().t().dot(&full_grad);
        let err = (&q - &reference).iter().map(|v| v * v).sum::<f64>().sqrt()
            / reference.iter().map(|v| v * v).sum::<f64>().sqrt();
        errors.push(err);
    }
    for pair in errors.windows(2) {
        assert!(
            pair[1] <= 0.6 * pair[0] + 1e-12,
            "error sequence not decaying: {errors:?}"
        );
    }
}
