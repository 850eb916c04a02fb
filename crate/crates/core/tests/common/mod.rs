//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use bdml_core::spectral::{ConstraintFeatures, PairFeature, PairLabel};
use bdml_core::{DataMatrix, MetricModel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub fn lambda(xi: f64) -> f64 {
    if xi.abs() < 1e-6 {
        0.125
    } else {
        (1.0 / (1.0 + (-xi).exp()) - 0.5) / (2.0 * xi)
    }
}

/// Random pair features with the threshold slot fixed at -1.
pub fn random_features<R: Rng>(rng: &mut R, k: usize, m: usize) -> ConstraintFeatures {
    let features = (0..m)
        .map(|_| {
            let mut w = DVector::zeros(k + 1);
            w[0] = -1.0;
            for l in 1..=k {
                let z: f64 = rng.random_range(-1.5..1.5);
                w[l] = z * z;
            }
            PairFeature::new(w).unwrap()
        })
        .collect();
    let labels = (0..m)
        .map(|_| if rng.random_bool(0.5) { PairLabel::Similar } else { PairLabel::Dissimilar })
        .collect();
    ConstraintFeatures::new(k + 1, features, labels).unwrap()
}

/// Variational bound written out term by term with explicit loops.
pub fn reference_bound(
    features: &ConstraintFeatures,
    mean: &[f64],
    cov: &DMatrix<f64>,
    xi: &[f64],
    gamma0: f64,
    delta: f64,
) -> f64 {
    let n = mean.len();
    let chol = cov.clone().cholesky().expect("covariance must be SPD");
    let mut log_det = 0.0;
    for i in 0..n {
        log_det += 2.0 * chol.l()[(i, i)].ln();
    }
    let mut sq = 0.0;
    let mut tr = 0.0;
    for i in 0..n {
        sq += (mean[i] - gamma0).powi(2);
        tr += cov[(i, i)];
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut total = -0.5 * n as f64 * (two_pi / delta).ln() - 0.5 * delta * (sq + tr);
    total += 0.5 * n as f64 * (two_pi.ln() + 1.0) + 0.5 * log_det;
    for (c, (f, label)) in features.iter().enumerate() {
        let w = f.omega();
        let mut m = 0.0;
        let mut s = 0.0;
        for a in 0..n {
            m += mean[a] * w[a];
            for b in 0..n {
                s += w[a] * cov[(a, b)] * w[b];
            }
        }
        // log σ(-y z) >= log σ(ξ) + (-y z - ξ)/2 - λ(ξ)(z² - ξ²)
        let x = xi[c];
        total += log_sigmoid(x) + (-label.sign() * m - x) / 2.0 - lambda(x) * (m * m + s - x * x);
    }
    total
}

fn unpack(theta: &[f64], n: usize) -> (Vec<f64>, DMatrix<f64>) {
    let mean = theta[..n].to_vec();
    let mut l = DMatrix::zeros(n, n);
    let mut idx = n;
    for i in 0..n {
        for j in 0..=i {
            l[(i, j)] = if i == j { theta[idx].exp() } else { theta[idx] };
            idx += 1;
        }
    }
    let cov = &l * l.transpose();
    (mean, cov)
}

fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    let mut probe = x.to_vec();
    for i in 0..n {
        probe[i] = x[i] + h;
        let up = fd_gradient(f, &probe, h);
        probe[i] = x[i] - h;
        let down = fd_gradient(f, &probe, h);
        probe[i] = x[i];
        for j in 0..n {
            hess[(i, j)] = (up[j] - down[j]) / (2.0 * h);
        }
    }
    0.5 * (&hess + hess.transpose())
}

/// Maximize `f` by damped Newton steps on finite-difference derivatives.
pub fn newton_maximize(f: &dyn Fn(&[f64]) -> f64, start: Vec<f64>, iters: usize) -> Vec<f64> {
    let mut x = start;
    let mut value = f(&x);
    for _ in 0..iters {
        let g = fd_gradient(f, &x, 1e-6);
        if g.amax() < 1e-11 {
            break;
        }
        let neg_hess = -fd_hessian(f, &x, 1e-4);
        // push toward positive definiteness where the model is not concave
        let mut shift = 0.0;
        let step = loop {
            let mut m = neg_hess.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += shift;
            }
            if let Some(ch) = m.cholesky() {
                break ch.solve(&g);
            }
            shift = if shift == 0.0 { 1e-6 } else { shift * 10.0 };
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            let v = f(&trial);
            if v.is_finite() && v >= value {
                x = trial;
                value = v;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    x
}

/// Numerical maximizer of the reference bound over `(μ, Σ)` for fixed `ξ`.
pub fn numeric_e_step(
    features: &ConstraintFeatures,
    xi: &[f64],
    gamma0: f64,
    delta: f64,
) -> (Vec<f64>, DMatrix<f64>) {
    let n = features.dim();
    let objective = |theta: &[f64]| {
        let (mean, cov) = unpack(theta, n);
        reference_bound(features, &mean, &cov, xi, gamma0, delta)
    };
    let mut start = vec![gamma0; n];
    for i in 0..n {
        for j in 0..=i {
            start.push(if i == j { -0.5 * delta.ln() } else { 0.0 });
        }
    }
    let theta = newton_maximize(&objective, start, 200);
    unpack(&theta, n)
}

/// Minimizer of `½(γ-μ)ᵀΣ⁻¹(γ-μ) + c ωᵀγ` over `γ ≥ 0` by cyclic
/// coordinate descent.
pub fn orthant_mode(mean: &DVector<f64>, cov: &DMatrix<f64>, omega: &DVector<f64>, c: f64) -> DVector<f64> {
    let prec = cov.clone().try_inverse().expect("invertible covariance");
    let n = mean.len();
    let mut g = mean.map(|v| v.max(0.0));
    for _ in 0..100_000 {
        let mut moved = 0.0f64;
        for i in 0..n {
            let mut rest = c * omega[i];
            for j in 0..n {
                if j != i {
                    rest += prec[(i, j)] * (g[j] - mean[j]);
                }
            }
            let next = (mean[i] - rest / prec[(i, i)]).max(0.0);
            moved = moved.max((next - g[i]).abs());
            g[i] = next;
        }
        if moved < 1e-15 {
            break;
        }
    }
    g
}

/// Exhaustive 1NN under the model's metric; ties go to the lowest index.
pub fn brute_force_1nn(model: &MetricModel, train: &DataMatrix, queries: &DataMatrix) -> Vec<i64> {
    let basis = model.basis();
    let labels = train.labels().unwrap();
    let d = train.ncols();
    (0..queries.nrows())
        .map(|q| {
            let mut best = f64::INFINITY;
            let mut best_label = labels[0];
            for (t, &label) in labels.iter().enumerate() {
                let mut dist = 0.0;
                for (l, &w) in model.weights().iter().enumerate() {
                    let mut proj = 0.0;
                    for c in 0..d {
                        let diff = (queries.values()[(q, c)] - train.values()[(t, c)]) / basis.scale()[c];
                        proj += diff * basis.vectors()[(c, l)];
                    }
                    dist += w * proj * proj;
                }
                if dist < best {
                    best = dist;
                    best_label = label;
                }
            }
            best_label
        })
        .collect()
}
