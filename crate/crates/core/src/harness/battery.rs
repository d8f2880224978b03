use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{episode_return, Environment, RETURN_FLOOR};
use crate::seed::{self, tag};
use crate::sim::{ControllerGains, PerturbationConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestScenario {
    pub name: String,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
}

/// Deployment test of a fixed controller on the nominal plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestBattery {
    pub scenarios: Vec<TestScenario>,
    pub n_repeats: usize,
    /// A run fails once `|beta|` exceeds this many degrees.
    pub failure_threshold_deg: f64,
    /// s
    pub episode_length: f64,
}

/// Standard conditions, motor-voltage noise, encoder noise, and 2 g added at
/// the pendulum tip.
pub fn default_battery() -> Vec<TestScenario> {
    let base = PerturbationConfig::default();
    vec![
        TestScenario {
            name: "standard".into(),
            perturbation: base.clone(),
        },
        TestScenario {
            name: "motor-noise".into(),
            perturbation: PerturbationConfig {
                actuation_noise: true,
                ..base.clone()
            },
        },
        TestScenario {
            name: "sensor-noise".into(),
            perturbation: PerturbationConfig {
                sensor_noise: true,
                ..base.clone()
            },
        },
        TestScenario {
            name: "add-2g".into(),
            perturbation: PerturbationConfig {
                mass_delta: 0.002,
                ..base
            },
        },
    ]
}

impl Default for TestBattery {
    fn default() -> Self {
        TestBattery {
            scenarios: default_battery(),
            n_repeats: 5,
            failure_threshold_deg: 20.0,
            episode_length: 10.0,
        }
    }
}

impl TestBattery {
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::config(
                "test.scenarios",
                "need at least one scenario",
            ));
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            s.perturbation.validate().map_err(|e| match e {
                Error::Config { key, message } => Error::Config {
                    key: format!("test.scenarios[{i}].perturbation.{key}"),
                    message,
                },
                other => other,
            })?;
        }
        if self.n_repeats == 0 {
            return Err(Error::config("test.n_repeats", "must be >= 1"));
        }
        if !(self.failure_threshold_deg.is_finite() && self.failure_threshold_deg > 0.0) {
            return Err(Error::config("test.failure_threshold_deg", "must be > 0"));
        }
        if !(self.episode_length.is_finite() && self.episode_length > 0.0) {
            return Err(Error::config("test.episode_length", "must be > 0"));
        }
        Ok(())
    }
}

/// One row of the test report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub runs: usize,
    pub failures: usize,
    /// Mean raw (unscaled) return over all runs.
    pub mean_return: f64,
    /// Percent of runs that failed.
    pub failure_rate: f64,
    /// Mean first-crossing time over the failed runs; infinite without failures.
    #[serde(with = "infinite_as_string")]
    pub mean_fail_time: f64,
    pub fail_times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub controller: ControllerGains,
    pub scenarios: Vec<ScenarioReport>,
}

impl TestReport {
    pub fn total_runs(&self) -> usize {
        self.scenarios.iter().map(|s| s.runs).sum()
    }

    pub fn total_failures(&self) -> usize {
        self.scenarios.iter().map(|s| s.failures).sum()
    }

    pub fn fail_times(&self) -> Vec<f64> {
        self.scenarios
            .iter()
            .flat_map(|s| s.fail_times.iter().copied())
            .collect()
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "scenario",
            "runs",
            "failures",
            "mean_return",
            "failure_rate",
            "mean_fail_time",
        ])?;
        for s in &self.scenarios {
            w.write_record([
                s.scenario.clone(),
                s.runs.to_string(),
                s.failures.to_string(),
                s.mean_return.to_string(),
                s.failure_rate.to_string(),
                s.mean_fail_time.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

mod infinite_as_string {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Repr::Number(*v).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got {t}"
            ))),
        }
    }
}

/// Runs one scenario `n_repeats` times. Run `i` of scenario `s` uses seed
/// `derive(seed, [TEST_BATTERY, s, i])`.
pub fn run_scenario(
    gains: &ControllerGains,
    env: &Environment,
    battery: &TestBattery,
    scenario_index: usize,
    seed: u64,
) -> ScenarioReport {
    let scenario = &battery.scenarios[scenario_index];
    let limit = battery.failure_threshold_deg.to_radians();
    let runs: Vec<(f64, Option<f64>)> = (0..battery.n_repeats as u64)
        .into_par_iter()
        .map(|i| {
            let run_seed = seed::derive(seed, &[tag::TEST_BATTERY, scenario_index as u64, i]);
            let traj = env.episode(
                gains,
                &scenario.perturbation,
                battery.episode_length,
                run_seed,
            );
            let ret = episode_return(&traj, &env.reward).unwrap_or(RETURN_FLOOR);
            (ret, traj.first_beta_exceedance(limit))
        })
        .collect();
    let n = runs.len();
    let fail_times: Vec<f64> = runs.iter().filter_map(|r| r.1).collect();
    let mean_fail_time = if fail_times.is_empty() {
        f64::INFINITY
    } else {
        fail_times.iter().sum::<f64>() / fail_times.len() as f64
    };
    ScenarioReport {
        scenario: scenario.name.clone(),
        runs: n,
        failures: fail_times.len(),
        mean_return: runs.iter().map(|r| r.0).sum::<f64>() / n as f64,
        failure_rate: fail_times.len() as f64 / n as f64 * 100.0,
        mean_fail_time,
        fail_times,
    }
}

pub fn run_battery(
    gains: &ControllerGains,
    env: &Environment,
    battery: &TestBattery,
    seed: u64,
) -> Result<TestReport> {
    battery.validate()?;
    env.validate()?;
    Ok(TestReport {
        controller: *gains,
        scenarios: (0..battery.scenarios.len())
            .map(|s| run_scenario(gains, env, battery, s, seed))
            .collect(),
    })
}
