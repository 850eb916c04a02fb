mod common;

use bdml_core::active::{laplace_gamma, laplace_posterior, plugin_posterior, Sign};
use bdml_core::eval::knn_classify;
use bdml_core::spectral::{eigen_basis, Constraint, ConstraintFeatures, PairFeature, PairLabel};
use bdml_core::vb::{e_step, elbo, fit, fit_features};
use bdml_core::{BasisOptions, ConstraintSet, DataMatrix, FitOptions, KPolicy, MetricModel, PriorConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn bound_matches_reference_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let k = rng.random_range(1..=4);
        let m = rng.random_range(0..=8);
        let features = common::random_features(&mut rng, k, m);
        let xi: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..4.0)).collect();
        let prior = PriorConfig::new(rng.random_range(0.2..2.0), rng.random_range(0.3..3.0)).unwrap();
        let update = e_step(&features, &xi, &prior).unwrap();
        let ours = elbo(&features, &update.raw_mean, &update.covariance, &xi, &prior).unwrap();
        let reference = common::reference_bound(
            &features,
            update.raw_mean.as_slice(),
            &update.covariance,
            &xi,
            prior.gamma0,
            prior.delta,
        );
        assert!((ours - reference).abs() < 1e-9 * reference.abs().max(1.0));
    }
}

#[test]
fn e_step_is_stationary_for_the_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let k = rng.random_range(1..=3);
        let m = rng.random_range(1..=5);
        let features = common::random_features(&mut rng, k, m);
        let xi: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..3.0)).collect();
        let prior = PriorConfig::default();
        let update = e_step(&features, &xi, &prior).unwrap();
        let n = k + 1;
        // partials of the bound in μ vanish at the update
        let h = 1e-5;
        for a in 0..n {
            let mut up = update.raw_mean.clone();
            up[a] += h;
            let mut down = update.raw_mean.clone();
            down[a] -= h;
            let f = |mu: &DVector<f64>| {
                common::reference_bound(&features, mu.as_slice(), &update.covariance, &xi, 1.0, 1.0)
            };
            assert!(((f(&up) - f(&down)) / (2.0 * h)).abs() < 1e-5);
        }
        // and so do the partials in symmetric perturbations of Σ
        for a in 0..n {
            for b in 0..=a {
                let mut e = DMatrix::zeros(n, n);
                e[(a, b)] = 1.0;
                e[(b, a)] = 1.0;
                let f = |c: &DMatrix<f64>| {
                    common::reference_bound(&features, update.raw_mean.as_slice(), c, &xi, 1.0, 1.0)
                };
                let up = &update.covariance + &e * h;
                let down = &update.covariance - &e * h;
                assert!(((f(&up) - f(&down)) / (2.0 * h)).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn e_step_matches_numeric_maximizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let k = rng.random_range(1..=3);
        let m = rng.random_range(1..=5);
        let features = common::random_features(&mut rng, k, m);
        let xi: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..3.0)).collect();
        let prior = PriorConfig::new(1.0, 1.0).unwrap();
        let update = e_step(&features, &xi, &prior).unwrap();
        let (mean, cov) = common::numeric_e_step(&features, &xi, 1.0, 1.0);
        for a in 0..=k {
            assert!((update.raw_mean[a] - mean[a]).abs() < 1e-6);
            for b in 0..=k {
                assert!((update.covariance[(a, b)] - cov[(a, b)]).abs() < 1e-6);
            }
        }
    }
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&a * a.transpose() + DMatrix::identity(n, n) * 0.2) * scale
}

#[test]
fn laplace_mode_matches_orthant_minimizer_when_interior() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    while checked < 30 {
        let n = rng.random_range(2..=4);
        let mean = DVector::from_fn(n, |_, _| rng.random_range(1.0..3.0));
        let cov = random_spd(&mut rng, n, 0.05);
        let omega = PairFeature::new(DVector::from_fn(n, |i, _| if i == 0 { -1.0 } else { rng.random_range(0.0..2.0) })).unwrap();
        for sign in [Sign::Plus, Sign::Minus] {
            let ours = laplace_gamma(&mean, &cov, &omega, sign);
            let p = 1.0 / (1.0 + (-sign.value() * omega.dot(&mean)).exp());
            let mode = common::orthant_mode(&mean, &cov, omega.omega(), sign.value() * p);
            if mode.iter().any(|&g| g == 0.0) {
                continue;
            }
            assert!((ours - mode).amax() < 1e-10);
            checked += 1;
        }
    }
}

#[test]
fn laplace_mode_matches_orthant_minimizer_for_diagonal_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut clamped = 0;
    for _ in 0..50 {
        let n = rng.random_range(2..=4);
        let mean = DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0));
        let cov = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.1..3.0)));
        let omega = PairFeature::new(DVector::from_fn(n, |i, _| if i == 0 { -1.0 } else { rng.random_range(0.0..3.0) })).unwrap();
        for sign in [Sign::Plus, Sign::Minus] {
            let ours = laplace_gamma(&mean, &cov, &omega, sign);
            let p = 1.0 / (1.0 + (-sign.value() * omega.dot(&mean)).exp());
            let mode = common::orthant_mode(&mean, &cov, omega.omega(), sign.value() * p);
            clamped += ours.iter().filter(|&&g| g == 0.0).count();
            assert!((ours - mode).amax() < 1e-10);
        }
    }
    assert!(clamped > 0, "no instance exercised the clamp");
}

#[test]
fn two_cluster_fit_converges_and_improves_the_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let rows: Vec<Vec<f64>> = (0..20)
        .map(|r| {
            let offset = if r < 10 { 0.0 } else { 3.0 };
            (0..4).map(|c| noise.sample(&mut rng) + if c == 0 { offset } else { 0.0 }).collect()
        })
        .collect();
    let labels: Vec<i64> = (0..20).map(|r| (r >= 10) as i64).collect();
    let data = DataMatrix::from_rows(&rows, Some(labels.clone())).unwrap();
    let mut set = ConstraintSet::new(20);
    let mut added = 0;
    while added < 10 {
        let i = rng.random_range(0..20);
        let j = rng.random_range(0..20);
        if i == j || set.contains(i, j) {
            continue;
        }
        let label = if labels[i] == labels[j] { PairLabel::Similar } else { PairLabel::Dissimilar };
        set.push(Constraint { i, j, label }).unwrap();
        added += 1;
    }
    let basis = eigen_basis(&data, KPolicy::Explicit(3), &BasisOptions::default()).unwrap();
    let post = fit(&set, &data, &basis, &PriorConfig::default(), &FitOptions::default()).unwrap();
    assert!(post.converged);
    assert!(post.iterations <= 200);
    assert!(post.bound >= post.bound_trace[0]);
}

#[test]
fn single_similar_constraint_pushes_posterior_toward_similar() {
    // tiny squared distance: the single S label should dominate
    let omega = PairFeature::new(DVector::from_vec(vec![-1.0, 0.05, 0.02])).unwrap();
    let features = ConstraintFeatures::new(3, vec![omega.clone()], vec![PairLabel::Similar]).unwrap();
    let post = fit_features(&features, &PriorConfig::default(), &FitOptions::default()).unwrap();
    assert!(plugin_posterior(&post.mean, &omega) > 0.5);
    assert!(laplace_posterior(&post.mean, &post.covariance, &omega).unwrap() > 0.5);
}

#[test]
fn knn_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..50 {
        let d = rng.random_range(1..=5);
        let n_train = rng.random_range(1..=15);
        let n_query = rng.random_range(1..=10);
        let train_rows: Vec<Vec<f64>> = (0..n_train).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let query_rows: Vec<Vec<f64>> = (0..n_query).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let labels: Vec<i64> = (0..n_train).map(|_| rng.random_range(0..3)).collect();
        let train = DataMatrix::from_rows(&train_rows, Some(labels)).unwrap();
        let queries = DataMatrix::from_rows(&query_rows, None).unwrap();
        let model = if n_train >= 2 && rng.random_bool(0.7) {
            let basis = eigen_basis(&train, KPolicy::Explicit(1.max(d.min(n_train) / 2)), &BasisOptions::default()).unwrap();
            let weights = (0..basis.k()).map(|_| rng.random_range(0.0..2.0)).collect();
            MetricModel::new(basis, weights, 1.0).unwrap()
        } else {
            MetricModel::euclidean(d).unwrap()
        };
        assert_eq!(knn_classify(&model, &train, &queries).unwrap(), common::brute_force_1nn(&model, &train, &queries));
    }
}
