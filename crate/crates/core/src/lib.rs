//! Robust model-free policy optimization for a simulated Furuta pendulum.
//!
//! Linear state-feedback controllers are tuned with multi-objective Bayesian
//! optimization: an intrinsic-coregionalization Gaussian process models
//! (performance, robustness) jointly, and the next controller maximizes the
//! expected hypervolume improvement over the current Pareto front. Robustness
//! is a data-driven delay margin or lower gain margin found by binary search
//! over closed-loop stability experiments. A scalar expected-improvement
//! optimizer over performance alone serves as the non-robust baseline.

pub mod error;
pub mod evaluation;
pub mod gp;
pub mod harness;
pub mod optimizer;
pub mod pareto;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
pub use sim::{ControllerGains, SimState};
