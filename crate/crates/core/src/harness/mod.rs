//! Run configuration, the perturbation test battery, and the file-level
//! commands behind the command-line interface.

mod battery;
mod commands;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use battery::{
    default_battery, run_battery, run_scenario, ScenarioReport, TestBattery, TestReport,
    TestScenario,
};
pub use commands::{
    elbow_index, export_plots, prepare_output_dir, read_front, select, train, verify_front,
    PlotSummary, SelectStrategy, Selected, TrainOptions, VerificationRow, CONFIG_FILE, PLOTS_DIR,
    POINTS_FILE, VERIFICATION_FILE,
};

use crate::error::{Error, Result};
use crate::evaluation::Environment;
use crate::optimizer::{Mode, OptimizerConfig};

/// Deliberate mismatch between the plant used for training and the nominal
/// plant used for testing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingGap {
    pub pendulum_mass_factor: f64,
    /// Applied to both joint dampings.
    pub damping_factor: f64,
}

impl Default for TrainingGap {
    fn default() -> Self {
        TrainingGap {
            pendulum_mass_factor: 0.95,
            damping_factor: 0.8,
        }
    }
}

/// Longer re-checks of the reported margins of Pareto points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerificationConfig {
    /// s
    pub episode_length: f64,
    pub trials: usize,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        VerificationConfig {
            episode_length: 20.0,
            trials: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Nominal plant and sensing; training uses it with `training_gap` applied.
    #[serde(default)]
    pub environment: Environment,
    #[serde(default)]
    pub training_gap: TrainingGap,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub test: TestBattery,
    #[serde(default)]
    pub verification: VerificationConfig,
}

impl RunConfig {
    pub fn new(mode: Mode, seed: u64) -> Self {
        RunConfig {
            mode,
            seed,
            output_dir: None,
            environment: Environment::default(),
            training_gap: TrainingGap::default(),
            optimizer: OptimizerConfig::default(),
            test: TestBattery::default(),
            verification: VerificationConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.environment
            .validate()
            .map_err(|e| prefix_key(e, "environment"))?;
        let gap = &self.training_gap;
        if !(gap.pendulum_mass_factor.is_finite() && gap.pendulum_mass_factor > 0.0) {
            return Err(Error::config(
                "training_gap.pendulum_mass_factor",
                "must be > 0",
            ));
        }
        if !(gap.damping_factor.is_finite() && gap.damping_factor >= 0.0) {
            return Err(Error::config("training_gap.damping_factor", "must be >= 0"));
        }
        self.optimizer.validate()?;
        self.test.validate()?;
        let length = self.verification.episode_length;
        if !(length.is_finite() && length > self.environment.criterion.window_start) {
            return Err(Error::config(
                "verification.episode_length",
                "must extend past the stability burn-in",
            ));
        }
        if self.verification.trials == 0 {
            return Err(Error::config("verification.trials", "must be >= 1"));
        }
        Ok(())
    }

    /// The plant the optimizer trains on.
    pub fn training_environment(&self) -> Environment {
        let mut env = self.environment.clone();
        let p = &mut env.physical;
        p.pendulum_mass *= self.training_gap.pendulum_mass_factor;
        p.arm_damping *= self.training_gap.damping_factor;
        p.pendulum_damping *= self.training_gap.damping_factor;
        env
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::Config {
                key: if key == "." { "<root>".into() } else { key },
                message: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn prefix_key(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { key, message } => Error::Config {
            key: format!("{prefix}.{key}"),
            message,
        },
        other => other,
    }
}
