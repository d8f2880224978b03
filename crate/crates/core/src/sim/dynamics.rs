use super::{PhysicalParams, SimState};
use crate::error::{Error, Result};

/// Lumped inertial quantities of the arm and pendulum.
///
/// The pendulum is a uniform rod of `pendulum_mass` over the effective length
/// plus an optional point mass at its tip; the arm is a uniform rod pivoting
/// at one end.
#[derive(Clone, Copy, Debug)]
pub struct MassProperties {
    /// Arm inertia about the motor axis.
    pub arm_inertia: f64,
    /// Total pendulum mass (rod + tip).
    pub pendulum_mass: f64,
    /// First mass moment of the pendulum about its pivot.
    pub first_moment: f64,
    /// Pendulum inertia about its pivot.
    pub pivot_inertia: f64,
}

impl MassProperties {
    pub fn of(p: &PhysicalParams) -> Self {
        let len = p.pendulum_length + p.added_length;
        let tip = p.added_tip_mass;
        MassProperties {
            arm_inertia: p.arm_mass * p.arm_length * p.arm_length / 3.0,
            pendulum_mass: p.pendulum_mass + tip,
            first_moment: p.pendulum_mass * len / 2.0 + tip * len,
            pivot_inertia: p.pendulum_mass * len * len / 3.0 + tip * len * len,
        }
    }
}

fn motor_torque(voltage: f64, omega: f64, p: &PhysicalParams) -> f64 {
    p.motor_torque_constant * (voltage - p.motor_back_emf_constant * omega) / p.motor_resistance
}

/// Time derivative `(omega, phi, omega_dot, phi_dot)` of the state under a
/// (pre-saturated) motor voltage.
pub fn dynamics_deriv(s: &SimState, voltage: f64, p: &PhysicalParams) -> Result<[f64; 4]> {
    let m = MassProperties::of(p);
    let (sb, cb) = s.beta.sin_cos();
    let lr = p.arm_length;

    let m11 = m.arm_inertia + m.pendulum_mass * lr * lr + m.pivot_inertia * sb * sb;
    let m12 = lr * m.first_moment * cb;
    let m22 = m.pivot_inertia;
    let det = m11 * m22 - m12 * m12;
    if !(det.is_finite() && det > 1e-16 * m11 * m22) {
        return Err(Error::Numerical(format!(
            "singular mass matrix (det = {det:e})"
        )));
    }

    let tau = motor_torque(voltage, s.omega, p);
    let rhs_arm = tau - p.arm_damping * s.omega - 2.0 * m.pivot_inertia * sb * cb * s.omega * s.phi
        + lr * m.first_moment * sb * s.phi * s.phi;
    let rhs_pend = -p.pendulum_damping * s.phi
        + m.pivot_inertia * sb * cb * s.omega * s.omega
        + p.gravity * m.first_moment * sb;

    let omega_dot = (m22 * rhs_arm - m12 * rhs_pend) / det;
    let phi_dot = (m11 * rhs_pend - m12 * rhs_arm) / det;
    Ok([s.omega, s.phi, omega_dot, phi_dot])
}

/// One classical Runge-Kutta step with the voltage held over `dt`.
///
/// A non-finite result is reported as a numerical failure; callers treat it
/// as divergence.
pub fn step_rk4(s: &SimState, voltage: f64, p: &PhysicalParams, dt: f64) -> Result<SimState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid(format!("dt must be > 0, got {dt}")));
    }
    let x = s.to_array();
    let at = |k: &[f64; 4], h: f64| SimState::from_array(std::array::from_fn(|i| x[i] + h * k[i]));
    let k1 = dynamics_deriv(s, voltage, p)?;
    let k2 = dynamics_deriv(&at(&k1, dt / 2.0), voltage, p)?;
    let k3 = dynamics_deriv(&at(&k2, dt / 2.0), voltage, p)?;
    let k4 = dynamics_deriv(&at(&k3, dt), voltage, p)?;
    let next = SimState::from_array(std::array::from_fn(|i| {
        x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    }));
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::Numerical(
            "non-finite state after integration step".into(),
        ))
    }
}

/// Kinetic plus gravitational potential energy, zero potential at the pivot height.
pub fn total_energy(s: &SimState, p: &PhysicalParams) -> f64 {
    let m = MassProperties::of(p);
    let (sb, cb) = s.beta.sin_cos();
    let lr = p.arm_length;
    let m11 = m.arm_inertia + m.pendulum_mass * lr * lr + m.pivot_inertia * sb * sb;
    let m12 = lr * m.first_moment * cb;
    let kinetic = 0.5
        * (m11 * s.omega * s.omega + 2.0 * m12 * s.omega * s.phi + m.pivot_inertia * s.phi * s.phi);
    kinetic + p.gravity * m.first_moment * cb
}
