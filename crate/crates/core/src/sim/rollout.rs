use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    observe, step_rk4, ControllerGains, Observation, ObservationConfig, PerturbationConfig,
    PhysicalParams, SimState,
};
use crate::error::{Error, Result};
use crate::seed;

/// RK4 substeps per control period.
pub const SUBSTEPS: usize = 5;

/// Episode start states are drawn uniformly from a box around upright.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialStateConfig {
    pub alpha_max_deg: f64,
    pub beta_max_deg: f64,
}

impl Default for InitialStateConfig {
    fn default() -> Self {
        InitialStateConfig {
            alpha_max_deg: 5.0,
            beta_max_deg: 3.0,
        }
    }
}

impl InitialStateConfig {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimState {
        let a = self.alpha_max_deg.to_radians();
        let b = self.beta_max_deg.to_radians();
        let alpha = if a > 0.0 {
            rng.random_range(-a..=a)
        } else {
            0.0
        };
        let beta = if b > 0.0 {
            rng.random_range(-b..=b)
        } else {
            0.0
        };
        SimState::new(alpha, beta, 0.0, 0.0)
    }
}

/// Recorded episode. All vectors have one entry per executed control step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub true_states: Vec<SimState>,
    pub observations: Vec<Observation>,
    pub voltages: Vec<f64>,
    pub control_period: f64,
    /// The integrator produced a non-finite state and recording stopped early.
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Time of the first step where `|beta|` exceeds `limit` radians.
    pub fn first_beta_exceedance(&self, limit: f64) -> Option<f64> {
        self.times
            .iter()
            .zip(&self.true_states)
            .find(|(_, s)| s.beta.abs() > limit)
            .map(|(t, _)| *t)
            .or_else(|| {
                self.diverged
                    .then(|| self.times.last().copied().unwrap_or(0.0))
            })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "t",
            "alpha",
            "beta",
            "omega",
            "phi",
            "alpha_hat",
            "beta_hat",
            "omega_hat",
            "phi_hat",
            "voltage",
        ])?;
        for i in 0..self.len() {
            let s = self.true_states[i];
            let o = self.observations[i];
            let row = [
                self.times[i],
                s.alpha,
                s.beta,
                s.omega,
                s.phi,
                o[0],
                o[1],
                o[2],
                o[3],
                self.voltages[i],
            ];
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Saturated motor voltage for one control step.
pub fn controller_action<R: Rng + ?Sized>(
    obs: &Observation,
    gains: &ControllerGains,
    pert: &PerturbationConfig,
    voltage_limit: f64,
    actuation_noise_std: f64,
    rng: &mut R,
) -> f64 {
    let mut v = pert.gain_factor * gains.dot(obs);
    if pert.actuation_noise && actuation_noise_std > 0.0 {
        let noise = Normal::new(0.0, actuation_noise_std).expect("validated std");
        v += noise.sample(rng);
    }
    v.clamp(-voltage_limit, voltage_limit)
}

/// Simulates one closed-loop episode.
///
/// Control is zero-order hold at `cfg.control_period` with [`SUBSTEPS`] RK4
/// substeps per period. An observation delay of `d` steps is realized with a
/// FIFO pre-filled with `d` copies of the first observation, so the voltage
/// at step `t` depends on the observation taken at step `t - d`.
pub fn rollout(
    gains: &ControllerGains,
    params: &PhysicalParams,
    cfg: &ObservationConfig,
    pert: &PerturbationConfig,
    duration: f64,
    init: SimState,
    seed: u64,
) -> Trajectory {
    let plant = params.perturbed(pert);
    let period = cfg.control_period;
    let n_steps = (duration / period).round() as usize;
    let dt = period / SUBSTEPS as f64;
    let mut rng = seed::rng(seed);

    let mut traj = Trajectory {
        times: Vec::with_capacity(n_steps),
        true_states: Vec::with_capacity(n_steps),
        observations: Vec::with_capacity(n_steps),
        voltages: Vec::with_capacity(n_steps),
        control_period: period,
        diverged: false,
    };

    let mut state = init;
    let mut filter = None;
    let mut delay_line: VecDeque<Observation> =
        VecDeque::with_capacity(pert.observation_delay_steps + 1);

    'steps: for k in 0..n_steps {
        let (obs, next_filter) = observe(&state, filter.as_ref(), cfg, pert.sensor_noise, &mut rng);
        filter = Some(next_filter);
        if k == 0 {
            delay_line.extend(std::iter::repeat_n(obs, pert.observation_delay_steps));
        }
        delay_line.push_back(obs);
        let delayed = delay_line
            .pop_front()
            .expect("delay line holds at least one entry");
        let voltage = controller_action(
            &delayed,
            gains,
            pert,
            plant.voltage_limit,
            cfg.actuation_noise_std,
            &mut rng,
        );

        traj.times.push(k as f64 * period);
        traj.true_states.push(state);
        traj.observations.push(obs);
        traj.voltages.push(voltage);

        for _ in 0..SUBSTEPS {
            match step_rk4(&state, voltage, &plant, dt) {
                Ok(next) => state = next,
                Err(_) => {
                    traj.diverged = true;
                    break 'steps;
                }
            }
        }
    }
    traj
}
