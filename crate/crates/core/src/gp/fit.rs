use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal as NormalDist};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{log_posterior_density, nelder_mead, GpHyperparams, Hyperpriors, MultiOutputDataset};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub restarts: usize,
    /// Objective evaluations per restart.
    pub max_evals: usize,
    pub noise_var_min: f64,
    pub noise_var_max: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 8,
            max_evals: 600,
            noise_var_min: 1e-6,
            noise_var_max: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub hyper: GpHyperparams,
    pub log_density: f64,
    /// Log density at each start point, in restart order.
    pub start_densities: Vec<f64>,
    /// Set when every restart failed and the prior medians were returned.
    pub warning: Option<String>,
}

const LOG_LENGTHSCALE: (f64, f64) = (-4.605_170_185_988_091, 6.907_755_278_982_137); // [1e-2, 1e3]
const LOG_SIGNAL: (f64, f64) = (-6.907_755_278_982_137, 4.605_170_185_988_091); // [1e-3, 1e2]
const FACTOR_ENTRY: (f64, f64) = (-5.0, 5.0);
const DEFAULT_NOISE_VAR: f64 = 1e-2;

struct ParamBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParamBounds {
    fn new(input_dim: usize, output_dim: usize, opts: &FitOptions) -> Self {
        let mut lower = vec![LOG_LENGTHSCALE.0; input_dim];
        let mut upper = vec![LOG_LENGTHSCALE.1; input_dim];
        lower.push(LOG_SIGNAL.0);
        upper.push(LOG_SIGNAL.1);
        if output_dim > 1 {
            let m = output_dim * (output_dim + 1) / 2;
            lower.extend(std::iter::repeat_n(FACTOR_ENTRY.0, m));
            upper.extend(std::iter::repeat_n(FACTOR_ENTRY.1, m));
        }
        lower.extend(std::iter::repeat_n(opts.noise_var_min.ln(), output_dim));
        upper.extend(std::iter::repeat_n(opts.noise_var_max.ln(), output_dim));
        ParamBounds { lower, upper }
    }

    fn clamp(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| x.clamp(*lo, *hi))
            .collect()
    }
}

fn random_start<R: Rng + ?Sized>(
    rng: &mut R,
    priors: &Hyperpriors,
    input_dim: usize,
    output_dim: usize,
) -> Vec<f64> {
    let std_normal = NormalDist::new(0.0, 1.0).expect("unit normal");
    let mut v: Vec<f64> = (0..input_dim)
        .map(|_| priors.lengthscale.mu + std_normal.sample(rng))
        .collect();
    v.push(priors.signal_std.mu + 0.5 * std_normal.sample(rng));
    if output_dim > 1 {
        for i in 0..output_dim {
            for j in 0..=i {
                let base = if i == j { 1.0 } else { 0.0 };
                v.push(base + 0.5 * std_normal.sample(rng));
            }
        }
    }
    for _ in 0..output_dim {
        v.push(rng.random_range(1e-4f64.ln()..1e-1f64.ln()));
    }
    v
}

/// Maximum a posteriori hyperparameters by multi-start Nelder-Mead in
/// unconstrained coordinates (log scale for positive quantities).
///
/// Start 0 is `warm_start` when given, otherwise the prior medians; start 1
/// is the prior medians when a warm start was given; the remaining starts
/// are drawn from `seed`. Noise variances are confined to
/// `[noise_var_min, noise_var_max]`. The best restart wins, lowest index on
/// ties.
pub fn fit_map(
    data: &MultiOutputDataset,
    priors: &Hyperpriors,
    opts: &FitOptions,
    warm_start: Option<&GpHyperparams>,
    seed: u64,
) -> Result<FitOutcome> {
    if data.is_empty() {
        return Err(Error::invalid("MAP fit needs a nonempty dataset"));
    }
    if opts.restarts == 0 {
        return Err(Error::invalid("restarts must be >= 1"));
    }
    let input_dim = data.inputs()[0].0.len();
    let output_dim = data.output_dim();
    let bounds = ParamBounds::new(input_dim, output_dim, opts);
    let medians = priors
        .medians(input_dim, output_dim, DEFAULT_NOISE_VAR)
        .to_vector();

    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(opts.restarts);
    if let Some(w) = warm_start {
        if w.output_dim() != output_dim || w.kernel.lengthscales.len() != input_dim {
            return Err(Error::invalid("warm start has the wrong shape"));
        }
        starts.push(w.to_vector());
    }
    if starts.len() < opts.restarts {
        starts.push(medians.clone());
    }
    let mut rng = seed::rng(seed);
    while starts.len() < opts.restarts {
        starts.push(random_start(&mut rng, priors, input_dim, output_dim));
    }
    let starts: Vec<Vec<f64>> = starts.iter().map(|s| bounds.clamp(s)).collect();

    let objective = |v: &[f64]| -> f64 {
        let h = GpHyperparams::from_vector(&bounds.clamp(v), input_dim, output_dim);
        match log_posterior_density(data, &h, priors) {
            Ok(lp) if lp.is_finite() => -lp,
            _ => f64::INFINITY,
        }
    };

    let results: Vec<(f64, Vec<f64>, f64)> = starts
        .par_iter()
        .map(|s| {
            let start_value = objective(s);
            let r = nelder_mead(objective, s, 0.5, opts.max_evals, 1e-9);
            let (x, v) = if r.value <= start_value {
                (bounds.clamp(&r.x), r.value)
            } else {
                (s.clone(), start_value)
            };
            (-start_value, x, v)
        })
        .collect();

    let start_densities: Vec<f64> = results.iter().map(|r| r.0).collect();
    let best = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.2.is_finite())
        .min_by(|a, b| a.1 .2.total_cmp(&b.1 .2).then(a.0.cmp(&b.0)));

    match best {
        Some((_, (_, x, v))) => Ok(FitOutcome {
            hyper: GpHyperparams::from_vector(x, input_dim, output_dim),
            log_density: -v,
            start_densities,
            warning: None,
        }),
        None => {
            let message = format!(
                "MAP fit failed on all {} restarts; using prior medians",
                opts.restarts
            );
            warn!("{message}");
            let hyper = GpHyperparams::from_vector(&medians, input_dim, output_dim);
            let log_density =
                log_posterior_density(data, &hyper, priors).unwrap_or(f64::NEG_INFINITY);
            Ok(FitOutcome {
                hyper,
                log_density,
                start_densities,
                warning: Some(message),
            })
        }
    }
}
