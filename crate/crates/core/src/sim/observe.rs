use rand::Rng;

use super::{ObservationConfig, SensorNoiseModel, SimState};

/// Estimated `[alpha_hat, beta_hat, omega_hat, phi_hat]`.
pub type Observation = [f64; 4];

/// Memory of the velocity estimator between control steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterState {
    pub prev_alpha: f64,
    pub prev_beta: f64,
    pub omega: f64,
    pub phi: f64,
}

fn sample_offset<R: Rng + ?Sized>(model: &SensorNoiseModel, rng: &mut R) -> i32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in model.probabilities.iter().enumerate() {
        acc += p;
        if u < acc {
            return SensorNoiseModel::offset_of(i);
        }
    }
    // rounding in the cumulative sum; fall back to the last nonzero bin
    let last = model
        .probabilities
        .iter()
        .rposition(|p| *p > 0.0)
        .unwrap_or(4);
    SensorNoiseModel::offset_of(last)
}

fn quantize(angle: f64, resolution: f64) -> f64 {
    (angle / resolution).floor() * resolution
}

/// Encoder reading plus low-pass finite-difference velocity estimate.
///
/// With no previous filter state (first step of an episode) the velocity
/// estimates start at zero.
pub fn observe<R: Rng + ?Sized>(
    s: &SimState,
    prev: Option<&FilterState>,
    cfg: &ObservationConfig,
    sensor_noise: bool,
    rng: &mut R,
) -> (Observation, FilterState) {
    let res = cfg.resolution();
    let mut alpha_hat = quantize(s.alpha, res);
    let mut beta_hat = quantize(s.beta, res);
    if sensor_noise {
        alpha_hat += sample_offset(&cfg.sensor_noise, rng) as f64 * res;
        beta_hat += sample_offset(&cfg.sensor_noise, rng) as f64 * res;
    }

    let a = cfg.filter_coefficient;
    let next = match prev {
        None => FilterState {
            prev_alpha: alpha_hat,
            prev_beta: beta_hat,
            omega: 0.0,
            phi: 0.0,
        },
        Some(f) => FilterState {
            prev_alpha: alpha_hat,
            prev_beta: beta_hat,
            omega: a * f.omega + (1.0 - a) * (alpha_hat - f.prev_alpha) / cfg.control_period,
            phi: a * f.phi + (1.0 - a) * (beta_hat - f.prev_beta) / cfg.control_period,
        },
    };
    ([alpha_hat, beta_hat, next.omega, next.phi], next)
}
