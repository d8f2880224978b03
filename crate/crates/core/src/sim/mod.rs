//! Nonlinear Furuta pendulum simulator.
//!
//! A horizontal rotary arm driven by a DC motor carries a free pendulum. The
//! state is `(alpha, beta, omega, phi)`: arm angle, pendulum angle (zero at
//! upright), and their rates. Observations go through a 2048-count encoder
//! quantizer and a first-order low-pass velocity estimator, and the linear
//! state-feedback controller acts on those estimates at a fixed control rate
//! with zero-order hold.

mod dynamics;
mod observe;
mod rollout;

pub use dynamics::{dynamics_deriv, step_rk4, total_energy, MassProperties};
pub use observe::{observe, FilterState, Observation};
pub use rollout::{controller_action, rollout, InitialStateConfig, Trajectory, SUBSTEPS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of the pendulum and its motor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalParams {
    /// kg
    pub arm_mass: f64,
    /// m
    pub arm_length: f64,
    /// kg
    pub pendulum_mass: f64,
    /// m
    pub pendulum_length: f64,
    /// N·m·s
    pub arm_damping: f64,
    /// N·m·s
    pub pendulum_damping: f64,
    /// Ω
    pub motor_resistance: f64,
    /// N·m/A
    pub motor_torque_constant: f64,
    /// V·s/rad
    pub motor_back_emf_constant: f64,
    /// m/s²
    pub gravity: f64,
    /// V
    pub voltage_limit: f64,
    /// Point mass at the pendulum tip, kg.
    pub added_tip_mass: f64,
    /// Extra pendulum length, m.
    pub added_length: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            arm_mass: 0.095,
            arm_length: 0.085,
            pendulum_mass: 0.024,
            pendulum_length: 0.129,
            arm_damping: 5.0e-4,
            pendulum_damping: 2.5e-5,
            motor_resistance: 8.4,
            motor_torque_constant: 0.042,
            motor_back_emf_constant: 0.042,
            gravity: 9.81,
            voltage_limit: 10.0,
            added_tip_mass: 0.0,
            added_length: 0.0,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("arm_mass", self.arm_mass),
            ("arm_length", self.arm_length),
            ("pendulum_mass", self.pendulum_mass),
            ("pendulum_length", self.pendulum_length),
            ("motor_resistance", self.motor_resistance),
            ("motor_torque_constant", self.motor_torque_constant),
            ("motor_back_emf_constant", self.motor_back_emf_constant),
            ("gravity", self.gravity),
            ("voltage_limit", self.voltage_limit),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(
                    key,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        let nonneg = [
            ("arm_damping", self.arm_damping),
            ("pendulum_damping", self.pendulum_damping),
            ("added_tip_mass", self.added_tip_mass),
        ];
        for (key, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(
                    key,
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        if !(self.added_length.is_finite() && self.pendulum_length + self.added_length > 0.0) {
            return Err(Error::config(
                "added_length",
                "effective pendulum length must be positive",
            ));
        }
        Ok(())
    }

    /// Copy with a perturbation's mass and length changes applied at the tip.
    pub fn perturbed(&self, pert: &PerturbationConfig) -> PhysicalParams {
        PhysicalParams {
            added_tip_mass: self.added_tip_mass + pert.mass_delta,
            added_length: self.added_length + pert.length_delta,
            ..self.clone()
        }
    }
}

/// Pendulum state. `beta` is never wrapped so a fall stays visible.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub alpha: f64,
    pub beta: f64,
    pub omega: f64,
    pub phi: f64,
}

impl SimState {
    pub const UPRIGHT: SimState = SimState {
        alpha: 0.0,
        beta: 0.0,
        omega: 0.0,
        phi: 0.0,
    };

    pub fn new(alpha: f64, beta: f64, omega: f64, phi: f64) -> Self {
        SimState {
            alpha,
            beta,
            omega,
            phi,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.alpha, self.beta, self.omega, self.phi]
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        SimState::new(x[0], x[1], x[2], x[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// State-feedback gains `u = theta · [alpha_hat, beta_hat, omega_hat, phi_hat]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControllerGains(pub [f64; 4]);

impl ControllerGains {
    pub fn dot(&self, obs: &[f64; 4]) -> f64 {
        self.0.iter().zip(obs).map(|(g, o)| g * o).sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Probabilities of an integer count offset in `[-4, 4]` added to each encoder reading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorNoiseModel {
    pub probabilities: [f64; 9],
}

impl Default for SensorNoiseModel {
    fn default() -> Self {
        let mut probabilities = [0.05; 9];
        probabilities[4] = 0.6;
        SensorNoiseModel { probabilities }
    }
}

impl SensorNoiseModel {
    pub const MAX_OFFSET: i32 = 4;

    pub fn offset_of(index: usize) -> i32 {
        index as i32 - Self::MAX_OFFSET
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    pub encoder_counts_per_rev: u32,
    /// s
    pub control_period: f64,
    /// Low-pass coefficient `a` of `v <- a v + (1 - a) dq/dt`.
    pub filter_coefficient: f64,
    pub sensor_noise: SensorNoiseModel,
    /// Standard deviation of additive motor-voltage noise, V.
    pub actuation_noise_std: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        ObservationConfig {
            encoder_counts_per_rev: 2048,
            control_period: 0.002,
            filter_coefficient: 0.7,
            sensor_noise: SensorNoiseModel::default(),
            actuation_noise_std: 0.5,
        }
    }
}

impl ObservationConfig {
    /// Encoder resolution in radians.
    pub fn resolution(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.encoder_counts_per_rev as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_counts_per_rev == 0 {
            return Err(Error::config("encoder_counts_per_rev", "must be >= 1"));
        }
        if !(self.control_period.is_finite() && self.control_period > 0.0) {
            return Err(Error::config("control_period", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.filter_coefficient) {
            return Err(Error::config("filter_coefficient", "must lie in [0, 1)"));
        }
        let p = &self.sensor_noise.probabilities;
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::config(
                "sensor_noise.probabilities",
                "must be nonnegative and sum to 1",
            ));
        }
        if !(self.actuation_noise_std.is_finite() && self.actuation_noise_std >= 0.0) {
            return Err(Error::config("actuation_noise_std", "must be >= 0"));
        }
        Ok(())
    }
}

/// Deviations from nominal deployment conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    /// Multiplier on the control action.
    pub gain_factor: f64,
    /// Observation delay in control steps.
    pub observation_delay_steps: usize,
    /// kg, attached at the pendulum tip.
    pub mass_delta: f64,
    /// m
    pub length_delta: f64,
    pub actuation_noise: bool,
    pub sensor_noise: bool,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            gain_factor: 1.0,
            observation_delay_steps: 0,
            mass_delta: 0.0,
            length_delta: 0.0,
            actuation_noise: false,
            sensor_noise: false,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain_factor.is_finite() && self.gain_factor > 0.0) {
            return Err(Error::config("gain_factor", "must be > 0"));
        }
        if !self.mass_delta.is_finite() || !self.length_delta.is_finite() {
            return Err(Error::config("mass_delta", "must be finite"));
        }
        Ok(())
    }
}
