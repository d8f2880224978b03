//! Gaussian-process checks against independently coded dense oracles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use robust_mobo::gp::*;
use robust_mobo::{seed, ControllerGains};

/// Matérn-5/2 written out directly from its textbook form.
fn oracle_matern(a: &[f64; 4], b: &[f64; 4], ls: &[f64], sigma: f64) -> f64 {
    let mut r2 = 0.0;
    for k in 0..4 {
        r2 += ((a[k] - b[k]) / ls[k]).powi(2);
    }
    let r = r2.sqrt();
    sigma * sigma * (1.0 + 5f64.sqrt() * r + 5.0 * r2 / 3.0) * (-(5f64.sqrt()) * r).exp()
}

/// Dense covariance of the stacked (output-major) vector, entry by entry.
fn oracle_cov(xs: &[[f64; 4]], h: &GpHyperparams, with_noise: bool) -> DMatrix<f64> {
    let n = xs.len();
    let d = h.output_dim();
    let l = h.coreg.factor();
    let b = &l * l.transpose();
    let mut k = DMatrix::zeros(n * d, n * d);
    for i in 0..d {
        for u in 0..n {
            for j in 0..d {
                for v in 0..n {
                    k[(i * n + u, j * n + v)] = b[(i, j)]
                        * oracle_matern(
                            &xs[u],
                            &xs[v],
                            &h.kernel.lengthscales,
                            h.kernel.signal_std,
                        );
                }
            }
            if with_noise {
                k[(i * n + u, i * n + u)] += h.noise.per_output_variance[i] + JITTER_START;
            }
        }
    }
    k
}

fn random_hyper<R: Rng>(rng: &mut R, d: usize) -> GpHyperparams {
    let mut factor = vec![vec![0.0; d]; d];
    for (i, row) in factor.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate().take(i + 1) {
            *v = if i == j {
                rng.random_range(0.3..1.5)
            } else {
                rng.random_range(-1.0..1.0)
            };
        }
    }
    GpHyperparams {
        kernel: KernelParams {
            lengthscales: (0..4).map(|_| rng.random_range(0.5..5.0)).collect(),
            signal_std: rng.random_range(0.3..2.0),
        },
        coreg: CoregionalizationMatrix::from_factor(factor).unwrap(),
        noise: NoiseModel {
            per_output_variance: (0..d).map(|_| rng.random_range(1e-4..0.1)).collect(),
        },
    }
}

fn random_data<R: Rng>(rng: &mut R, n: usize, d: usize) -> (Vec<[f64; 4]>, MultiOutputDataset) {
    let xs: Vec<[f64; 4]> = (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-5.0..5.0)))
        .collect();
    let mut data = MultiOutputDataset::new(d);
    for x in &xs {
        data.push(
            ControllerGains(*x),
            (0..d).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
    }
    (xs, data)
}

#[test]
fn icm_matches_kronecker_oracle() {
    let mut rng = seed::rng(11);
    for _ in 0..20 {
        let h = random_hyper(&mut rng, 2);
        let (xs, _) = random_data(&mut rng, 6, 2);
        let oracle = oracle_cov(&xs, &h, false);
        let n = xs.len();
        for i in 0..2 {
            for j in 0..2 {
                for u in 0..n {
                    for v in 0..n {
                        let got = icm_cov(&xs[u], &xs[v], i, j, &h.kernel, &h.coreg).unwrap();
                        assert!((got - oracle[(i * n + u, j * n + v)]).abs() < 1e-12);
                        let swapped = icm_cov(&xs[v], &xs[u], j, i, &h.kernel, &h.coreg).unwrap();
                        assert!((got - swapped).abs() < 1e-15);
                    }
                }
            }
        }
    }
}

#[test]
fn kernel_symmetry_and_gram_psd() {
    let mut rng = seed::rng(12);
    for trial in 0..20 {
        let h = random_hyper(&mut rng, 2);
        let n = 1 + (trial * 3) % 64;
        let (xs, data) = random_data(&mut rng, n, 2);
        for w in xs.windows(2) {
            let ab = matern52(&w[0], &w[1], &h.kernel).unwrap();
            let ba = matern52(&w[1], &w[0], &h.kernel).unwrap();
            assert_eq!(ab, ba);
        }
        let g = noisy_gram(&data, &h);
        let min_eig = g.symmetric_eigenvalues().min();
        assert!(min_eig >= -1e-8, "min eigenvalue {min_eig}");
    }
}

/// Posterior by explicit inversion of the dense oracle covariance.
fn oracle_posterior(
    xs: &[[f64; 4]],
    ys: &DVector<f64>,
    q: &[f64; 4],
    h: &GpHyperparams,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = xs.len();
    let d = h.output_dim();
    let l = h.coreg.factor();
    let b = &l * l.transpose();
    let kinv = oracle_cov(xs, h, true).cholesky().unwrap().inverse();
    let mut kstar = DMatrix::zeros(d, n * d);
    for i in 0..d {
        for j in 0..d {
            for v in 0..n {
                kstar[(i, j * n + v)] = b[(i, j)]
                    * oracle_matern(q, &xs[v], &h.kernel.lengthscales, h.kernel.signal_std);
            }
        }
    }
    let mean = &kstar * &kinv * ys;
    let prior = &b * oracle_matern(q, q, &h.kernel.lengthscales, h.kernel.signal_std);
    let cov = prior - &kstar * &kinv * kstar.transpose();
    (mean, cov)
}

#[test]
fn posterior_matches_dense_oracle() {
    let mut rng = seed::rng(13);
    for _ in 0..10 {
        let h = random_hyper(&mut rng, 2);
        let (xs, data) = random_data(&mut rng, 5, 2);
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
        let post = gp_posterior(&data, &ControllerGains(q), &h).unwrap();
        let (mean, cov) = oracle_posterior(&xs, &data.stacked_targets(), &q, &h);
        assert!((post.mean - mean).amax() < 1e-8);
        assert!((post.covariance - cov).amax() < 1e-8);
    }
}

#[test]
fn adding_noiseless_observation_never_increases_variance() {
    let mut rng = seed::rng(14);
    for _ in 0..10 {
        let mut h = random_hyper(&mut rng, 2);
        h.noise.per_output_variance = vec![0.0, 0.0];
        let (_, mut data) = random_data(&mut rng, 6, 2);
        let q = ControllerGains(std::array::from_fn(|_| rng.random_range(-5.0..5.0)));
        let before = gp_posterior(&data, &q, &h).unwrap();
        data.push(q, vec![0.3, 0.6]).unwrap();
        let after = gp_posterior(&data, &q, &h).unwrap();
        for i in 0..2 {
            assert!(after.covariance[(i, i)] <= before.covariance[(i, i)] + 1e-12);
        }
    }
}

fn finite_difference(data: &MultiOutputDataset, h: &GpHyperparams, step: f64) -> Vec<f64> {
    let v = h.to_vector();
    let d = h.output_dim();
    (0..v.len())
        .map(|k| {
            let mut plus = v.clone();
            let mut minus = v.clone();
            plus[k] += step;
            minus[k] -= step;
            let fp =
                log_marginal_likelihood(data, &GpHyperparams::from_vector(&plus, 4, d)).unwrap();
            let fm =
                log_marginal_likelihood(data, &GpHyperparams::from_vector(&minus, 4, d)).unwrap();
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

#[test]
fn likelihood_gradient_matches_central_differences() {
    let mut rng = seed::rng(15);
    for d in [1usize, 2] {
        for _ in 0..10 {
            let mut h = random_hyper(&mut rng, d);
            if d == 1 {
                h.coreg = CoregionalizationMatrix::identity(1);
            }
            let (_, data) = random_data(&mut rng, 12, d);
            let analytic = log_marginal_likelihood_gradient(&data, &h).unwrap();
            let fd = finite_difference(&data, &h, 1e-5);
            let num: f64 = analytic
                .iter()
                .zip(&fd)
                .map(|(a, f)| (a - f).powi(2))
                .sum::<f64>()
                .sqrt();
            let den: f64 = fd.iter().map(|f| f * f).sum::<f64>().sqrt();
            assert!(num / den <= 1e-5, "relative error {}", num / den);
            for (a, f) in analytic.iter().zip(&fd) {
                assert!((a - f).abs() <= 1e-5 * f.abs().max(1.0), "{a} vs {f}");
            }
        }
    }
}

#[test]
fn posterior_gradient_includes_prior_terms() {
    let mut rng = seed::rng(16);
    let h = random_hyper(&mut rng, 2);
    let (_, data) = random_data(&mut rng, 8, 2);
    let priors = Hyperpriors::default();
    let g = log_posterior_gradient(&data, &h, &priors).unwrap();
    let v = h.to_vector();
    for k in 0..v.len() {
        let step = 1e-5;
        let mut p = v.clone();
        let mut m = v.clone();
        p[k] += step;
        m[k] -= step;
        let fp =
            log_posterior_density(&data, &GpHyperparams::from_vector(&p, 4, 2), &priors).unwrap();
        let fm =
            log_posterior_density(&data, &GpHyperparams::from_vector(&m, 4, 2), &priors).unwrap();
        let fd = (fp - fm) / (2.0 * step);
        assert!(
            (g[k] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
            "coordinate {k}: {} vs {fd}",
            g[k]
        );
    }
}

#[test]
fn doubling_noise_on_pure_noise_data_matches_closed_form() {
    // inputs far apart relative to the lengthscales: the Gram matrix is diagonal
    let xs: Vec<[f64; 4]> = (0..6).map(|i| [1000.0 * i as f64, 0.0, 0.0, 0.0]).collect();
    let mut data = MultiOutputDataset::new(2);
    let mut rng = seed::rng(17);
    for x in &xs {
        data.push(
            ControllerGains(*x),
            vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
        )
        .unwrap();
    }
    let base = GpHyperparams {
        kernel: KernelParams {
            lengthscales: vec![1.0; 4],
            signal_std: 0.5,
        },
        coreg: CoregionalizationMatrix::from_factor(vec![vec![0.8, 0.0], vec![0.0, 1.3]]).unwrap(),
        noise: NoiseModel {
            per_output_variance: vec![0.05, 0.2],
        },
    };
    let closed_form = |h: &GpHyperparams| -> f64 {
        let b = h.coreg.b();
        let mut total = 0.0;
        for (u, y) in data.observations().iter().enumerate() {
            let _ = u;
            for i in 0..2 {
                let var = b[(i, i)] * 0.25 + h.noise.per_output_variance[i] + JITTER_START;
                total += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * y[i] * y[i] / var;
            }
        }
        total
    };
    let mut doubled = base.clone();
    for v in doubled.noise.per_output_variance.iter_mut() {
        *v *= 2.0;
    }
    let a = log_marginal_likelihood(&data, &base).unwrap();
    let b = log_marginal_likelihood(&data, &doubled).unwrap();
    assert!((a - closed_form(&base)).abs() < 1e-10);
    assert!((b - closed_form(&doubled)).abs() < 1e-10);
    assert!(((b - a) - (closed_form(&doubled) - closed_form(&base))).abs() < 1e-10);
}

/// Draws one GP sample at `xs` with the given hyperparameters.
fn sample_gp(xs: &[[f64; 4]], h: &GpHyperparams, seed: u64) -> MultiOutputDataset {
    let d = h.output_dim();
    let cov = oracle_cov(xs, h, true);
    let l = cov.cholesky().unwrap().l();
    let mut rng = robust_mobo::seed::rng(seed);
    let z = DVector::from_fn(xs.len() * d, |_, _| StandardNormal.sample(&mut rng));
    let y = l * z;
    let n = xs.len();
    let mut data = MultiOutputDataset::unbounded(d);
    for (u, x) in xs.iter().enumerate() {
        data.push(ControllerGains(*x), (0..d).map(|i| y[i * n + u]).collect())
            .unwrap();
    }
    data
}

fn spread_inputs(n: usize, width: f64, seed: u64) -> Vec<[f64; 4]> {
    // Latin-hypercube style design on [0, width]^4
    let mut rng = robust_mobo::seed::rng(seed);
    let cols: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            let mut c: Vec<f64> = (0..n)
                .map(|i| width * (i as f64 + rng.random_range(0.0..1.0)) / n as f64)
                .collect();
            for i in (1..n).rev() {
                c.swap(i, rng.random_range(0..=i));
            }
            c
        })
        .collect();
    (0..n)
        .map(|i| std::array::from_fn(|k| cols[k][i]))
        .collect()
}

fn truth() -> GpHyperparams {
    GpHyperparams {
        kernel: KernelParams {
            lengthscales: vec![1.5, 2.5, 2.0, 3.0],
            signal_std: 1.0,
        },
        coreg: CoregionalizationMatrix::identity(1),
        noise: NoiseModel {
            per_output_variance: vec![1e-4],
        },
    }
}

/// A single small draw rarely pins down all four lengthscales at once, so the
/// check is on the per-dimension median over independent replicates.
#[test]
fn map_recovers_lengthscales_within_factor_three() {
    let h = truth();
    let priors = Hyperpriors::default();
    let opts = FitOptions {
        max_evals: 3000,
        ..Default::default()
    };
    let replicates = 9;
    let mut fitted: Vec<Vec<f64>> = vec![Vec::new(); 4];
    for r in 0..replicates {
        let xs = spread_inputs(60, 6.0, 100 + r);
        let data = sample_gp(&xs, &h, 200 + r);
        let fit = fit_map(&data, &priors, &opts, None, 300 + r).unwrap();
        let at_truth = log_posterior_density(&data, &h, &priors).unwrap();
        assert!(
            fit.log_density >= at_truth - 1e-6,
            "replicate {r}: optimizer stopped below the truth"
        );
        for s in &fit.start_densities {
            assert!(fit.log_density >= *s);
        }
        for (k, l) in fit.hyper.kernel.lengthscales.iter().enumerate() {
            fitted[k].push(*l);
        }
    }
    for (k, mut ls) in fitted.into_iter().enumerate() {
        ls.sort_by(f64::total_cmp);
        let median = ls[ls.len() / 2];
        let want = h.kernel.lengthscales[k];
        assert!(
            median / want < 3.0 && want / median < 3.0,
            "dim {k}: median {median}, truth {want}, fits {ls:?}"
        );
    }
}

#[test]
fn map_on_twenty_points_is_at_least_as_probable_as_truth() {
    let h = truth();
    let priors = Hyperpriors::default();
    for r in 0..4 {
        let xs = spread_inputs(20, 6.0, 500 + r);
        let data = sample_gp(&xs, &h, 600 + r);
        let fit = fit_map(&data, &priors, &FitOptions::default(), None, 700 + r).unwrap();
        let at_truth = log_posterior_density(&data, &h, &priors).unwrap();
        assert!(
            fit.log_density >= at_truth - 1e-6,
            "replicate {r}: {} < {at_truth}",
            fit.log_density
        );
        assert!(fit.hyper.validate().is_ok());
    }
}
