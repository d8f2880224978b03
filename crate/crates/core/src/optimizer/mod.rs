//! Outer optimization loops: multi-objective BO over (performance, margin)
//! with expected hypervolume improvement, and the single-objective EI
//! baseline over performance alone.
//!
//! Every controller evaluation is one iteration. The first `n_init`
//! iterations come from a Latin-hypercube design; afterwards the next
//! controller maximizes the acquisition under the current GP. The GP
//! hyperparameters are refit by MAP after every new observation.

mod persist;
mod search;

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub(crate) use persist::write_atomic;
pub use persist::{
    latest_checkpoint, load_checkpoint, write_checkpoint, write_outputs, AUDIT_FILE,
    BEST_TRACE_FILE, CHECKPOINT_DIR, FRONT_FILE, HV_TRACE_FILE, INCUMBENT_FILE, SET_FILE,
};
pub use search::{
    latin_hypercube, maximize_acquisition, shifted_halton, AcquisitionOptimum, AcquisitionSearch,
    SearchBox,
};

use crate::error::{Error, Result};
use crate::evaluation::{
    margin_binary_search, performance_estimate, Environment, MarginGrid, MarginKind, ProbeRecord,
};
use crate::gp::{fit_map, FitOptions, GpHyperparams, GpModel, Hyperpriors, MultiOutputDataset};
use crate::pareto::{
    ehi, ei, hypervolume_2d, pareto_extract, pareto_indices, ObjectiveVector, ParetoFront,
};
use crate::seed::{self, tag};
use crate::sim::ControllerGains;

/// Hypervolume reference point in scaled objective space.
pub const REFERENCE: ObjectiveVector = ObjectiveVector::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Performance and delay margin.
    #[serde(rename = "robust-dm")]
    RobustDelay,
    /// Performance and lower gain margin.
    #[serde(rename = "robust-gm")]
    RobustGain,
    /// Performance only, expected improvement.
    #[serde(rename = "scalar")]
    Scalar,
}

impl Mode {
    pub fn margin_kind(self) -> Option<MarginKind> {
        match self {
            Mode::RobustDelay => Some(MarginKind::Delay),
            Mode::RobustGain => Some(MarginKind::Gain),
            Mode::Scalar => None,
        }
    }

    pub fn output_dim(self) -> usize {
        if self == Mode::Scalar {
            1
        } else {
            2
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::RobustDelay => "robust-dm",
            Mode::RobustGain => "robust-gm",
            Mode::Scalar => "scalar",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "robust-dm" => Ok(Mode::RobustDelay),
            "robust-gm" => Ok(Mode::RobustGain),
            "scalar" => Ok(Mode::Scalar),
            other => Err(Error::config(
                "mode",
                format!("unknown mode `{other}` (expected robust-dm, robust-gm or scalar)"),
            )),
        }
    }
}

/// Stop once the maximal acquisition value stays below `threshold` for
/// `patience` consecutive acquisition-driven iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingRule {
    pub threshold: f64,
    pub patience: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule {
            threshold: 1e-4,
            patience: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub n_init: usize,
    /// Acquisition-driven iterations after the initial design.
    pub iterations: usize,
    pub performance_episodes: usize,
    pub probe_trials: usize,
    pub search_box: SearchBox,
    pub acquisition: AcquisitionSearch,
    pub delay_grid: MarginGrid,
    pub gain_grid: MarginGrid,
    pub priors: Hyperpriors,
    pub fit: FitOptions,
    pub stopping: Option<StoppingRule>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            n_init: 5,
            iterations: 200,
            performance_episodes: 10,
            probe_trials: 5,
            search_box: SearchBox::default(),
            acquisition: AcquisitionSearch::default(),
            delay_grid: MarginGrid::default_delay(),
            gain_grid: MarginGrid::default_gain(),
            priors: Hyperpriors::default(),
            fit: FitOptions::default(),
            stopping: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 {
            return Err(Error::config("optimizer.n_init", "must be >= 1"));
        }
        if self.performance_episodes == 0 {
            return Err(Error::config(
                "optimizer.performance_episodes",
                "must be >= 1",
            ));
        }
        if self.probe_trials == 0 {
            return Err(Error::config("optimizer.probe_trials", "must be >= 1"));
        }
        if self.acquisition.candidates == 0 {
            return Err(Error::config(
                "optimizer.acquisition.candidates",
                "must be >= 1",
            ));
        }
        if self.fit.restarts == 0 {
            return Err(Error::config("optimizer.fit.restarts", "must be >= 1"));
        }
        if !(self.fit.noise_var_min > 0.0 && self.fit.noise_var_min <= self.fit.noise_var_max) {
            return Err(Error::config(
                "optimizer.fit.noise_var_min",
                "need 0 < noise_var_min <= noise_var_max",
            ));
        }
        self.search_box.validate().map_err(|e| rekey(e, "optimizer"))?;
        self.delay_grid
            .validate()
            .map_err(|e| rekey(e, "optimizer.delay_grid"))?;
        if self.delay_grid.kind != MarginKind::Delay {
            return Err(Error::config(
                "optimizer.delay_grid.kind",
                "must be `delay`",
            ));
        }
        self.gain_grid
            .validate()
            .map_err(|e| rekey(e, "optimizer.gain_grid"))?;
        if self.gain_grid.kind != MarginKind::Gain {
            return Err(Error::config("optimizer.gain_grid.kind", "must be `gain`"));
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        self.n_init + self.iterations
    }

    pub fn grid(&self, kind: MarginKind) -> &MarginGrid {
        match kind {
            MarginKind::Delay => &self.delay_grid,
            MarginKind::Gain => &self.gain_grid,
        }
    }
}

fn rekey(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { key, message } => Error::Config {
            key: format!("{prefix}.{}", key.trim_start_matches("grid.")),
            message,
        },
        other => other,
    }
}

/// How an iteration chose its controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Design,
    Acquisition,
}

/// One entry of the JSON-lines audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    Probe {
        iteration: usize,
        controller: ControllerGains,
        #[serde(flatten)]
        record: ProbeRecord,
    },
    Iteration {
        iteration: usize,
        controller: ControllerGains,
        selection: Selection,
        acquisition: Option<f64>,
        performance: f64,
        robustness: Option<f64>,
        margin: Option<f64>,
        hypervolume: Option<f64>,
        best_performance: Option<f64>,
        fit_log_density: f64,
        fit_warning: Option<String>,
    },
}

/// Everything needed to continue a run. Seeds for iteration `k` are derived
/// from `(master_seed, purpose, k)`, so `iteration` is also the seed cursor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerState {
    pub mode: Mode,
    pub master_seed: u64,
    /// Completed controller evaluations.
    pub iteration: usize,
    pub dataset: MultiOutputDataset,
    pub hyperparams: Option<GpHyperparams>,
    /// Front hypervolume after each iteration (robust modes).
    pub hv_history: Vec<f64>,
    /// Best scaled performance so far after each iteration (scalar mode).
    pub best_history: Vec<f64>,
    /// Maximal acquisition value of each acquisition-driven iteration.
    pub acquisition_history: Vec<f64>,
    pub stopped_early: bool,
    pub audit: Vec<AuditEvent>,
}

impl OptimizerState {
    pub fn new(mode: Mode, master_seed: u64) -> Self {
        OptimizerState {
            mode,
            master_seed,
            iteration: 0,
            dataset: MultiOutputDataset::new(mode.output_dim()),
            hyperparams: None,
            hv_history: Vec::new(),
            best_history: Vec::new(),
            acquisition_history: Vec::new(),
            stopped_early: false,
            audit: Vec::new(),
        }
    }

    /// Observations as objective vectors (robust modes).
    pub fn objectives(&self) -> Vec<ObjectiveVector> {
        self.dataset
            .observations()
            .iter()
            .map(|y| ObjectiveVector::new(y[0], y.get(1).copied().unwrap_or(0.0)))
            .collect()
    }

    pub fn front(&self) -> ParetoFront {
        pareto_extract(&self.objectives())
    }

    /// Controllers whose observations form [`Self::front`], in the same order.
    pub fn pareto_set(&self) -> Vec<ControllerGains> {
        pareto_indices(&self.objectives())
            .into_iter()
            .map(|i| self.dataset.inputs()[i])
            .collect()
    }

    /// Best observed controller by scaled performance (lowest index on ties).
    pub fn incumbent(&self) -> Option<(ControllerGains, f64)> {
        let mut best: Option<(ControllerGains, f64)> = None;
        for (x, y) in self
            .dataset
            .inputs()
            .iter()
            .zip(self.dataset.observations())
        {
            if best.is_none_or(|(_, b)| y[0] > b) {
                best = Some((*x, y[0]));
            }
        }
        best
    }

    pub fn is_finished(&self, cfg: &OptimizerConfig) -> bool {
        self.stopped_early || self.iteration >= cfg.total_iterations()
    }
}

/// Result of the experiments on one controller.
struct Evaluation {
    performance: f64,
    margin: Option<(f64, Option<f64>)>,
    probes: Vec<ProbeRecord>,
}

fn evaluate(
    gains: &ControllerGains,
    mode: Mode,
    cfg: &OptimizerConfig,
    env: &Environment,
    master: u64,
    k: usize,
) -> Evaluation {
    let k = k as u64;
    let performance = match performance_estimate(
        gains,
        env,
        cfg.performance_episodes,
        seed::derive(master, &[tag::PERFORMANCE, k]),
    ) {
        Ok(v) if v.is_finite() => v.clamp(0.0, 1.0),
        Ok(_) | Err(_) => 0.0,
    };
    let Some(kind) = mode.margin_kind() else {
        return Evaluation {
            performance,
            margin: None,
            probes: Vec::new(),
        };
    };
    let est = margin_binary_search(
        gains,
        cfg.grid(kind),
        env,
        cfg.probe_trials,
        seed::derive(master, &[tag::ROBUSTNESS, k]),
    );
    let normalized = if est.normalized.is_finite() {
        est.normalized.clamp(0.0, 1.0)
    } else {
        0.0
    };
    Evaluation {
        performance,
        margin: Some((normalized, est.raw_value)),
        probes: est.probes,
    }
}

fn design_point(cfg: &OptimizerConfig, master: u64, k: usize) -> ControllerGains {
    let design = latin_hypercube(cfg.n_init, seed::derive(master, &[tag::INIT_DESIGN]));
    cfg.search_box.from_unit(&design[k])
}

/// Chooses the next controller: the design point during initialization,
/// the acquisition maximizer afterwards.
fn select(
    state: &OptimizerState,
    cfg: &OptimizerConfig,
    acquisition: impl Fn(&GpModel, &ControllerGains) -> f64 + Sync,
) -> Result<(ControllerGains, Selection, Option<f64>)> {
    let k = state.iteration;
    if k < cfg.n_init {
        return Ok((
            design_point(cfg, state.master_seed, k),
            Selection::Design,
            None,
        ));
    }
    let hyper = state
        .hyperparams
        .as_ref()
        .ok_or_else(|| Error::invalid("acquisition step before any hyperparameter fit"))?;
    let model = GpModel::condition(&state.dataset, hyper)?;
    let best = maximize_acquisition(
        |g| acquisition(&model, g),
        &cfg.search_box,
        &cfg.acquisition,
        seed::derive(state.master_seed, &[tag::ACQUISITION, k as u64]),
    )?;
    Ok((best.gains, Selection::Acquisition, Some(best.value)))
}

/// Appends an observation, refits hyperparameters (warm-started from the
/// previous fit) and records the iteration.
fn absorb(
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    gains: ControllerGains,
    selection: Selection,
    acq_value: Option<f64>,
    eval: Evaluation,
) -> Result<()> {
    let k = state.iteration;
    let mut y = vec![eval.performance];
    if let Some((r, _)) = eval.margin {
        y.push(r);
    }
    state.dataset.push(gains, y)?;

    let fit = fit_map(
        &state.dataset,
        &cfg.priors,
        &cfg.fit,
        state.hyperparams.as_ref(),
        seed::derive(state.master_seed, &[tag::HYPERPARAMS, k as u64]),
    )?;
    if let Some(w) = &fit.warning {
        warn!("iteration {k}: {w}");
    }
    state.hyperparams = Some(fit.hyper);

    let (hypervolume, best_performance) = if state.mode == Mode::Scalar {
        let best = state.incumbent().map_or(0.0, |(_, v)| v);
        state.best_history.push(best);
        (None, Some(best))
    } else {
        let hv = hypervolume_2d(&state.front(), &REFERENCE)?;
        state.hv_history.push(hv);
        (Some(hv), None)
    };
    if let Some(v) = acq_value {
        state.acquisition_history.push(v);
    }

    for record in eval.probes {
        state.audit.push(AuditEvent::Probe {
            iteration: k,
            controller: gains,
            record,
        });
    }
    state.audit.push(AuditEvent::Iteration {
        iteration: k,
        controller: gains,
        selection,
        acquisition: acq_value,
        performance: eval.performance,
        robustness: eval.margin.map(|m| m.0),
        margin: eval.margin.and_then(|m| m.1),
        hypervolume,
        best_performance,
        fit_log_density: fit.log_density,
        fit_warning: fit.warning,
    });
    state.iteration += 1;
    info!(
        "{} iteration {k}: performance {:.4}{}",
        state.mode.name(),
        eval.performance,
        eval.margin
            .map(|m| format!(", robustness {:.4}", m.0))
            .unwrap_or_default()
    );
    Ok(())
}

fn check_stopping(state: &mut OptimizerState, cfg: &OptimizerConfig) {
    let Some(rule) = &cfg.stopping else { return };
    let h = &state.acquisition_history;
    if rule.patience > 0
        && h.len() >= rule.patience
        && h[h.len() - rule.patience..]
            .iter()
            .all(|v| *v < rule.threshold)
    {
        state.stopped_early = true;
    }
}

/// One iteration of the multi-objective loop: pick a controller by EHI (or
/// from the initial design), measure performance and the robustness margin,
/// add the pair to the data and refit the GP.
pub fn robust_po_step(
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    env: &Environment,
    reference: &ObjectiveVector,
) -> Result<()> {
    if state.mode == Mode::Scalar {
        return Err(Error::invalid("robust_po_step needs a robust mode"));
    }
    let front = state.front();
    let (gains, selection, acq) = select(state, cfg, |model, g| {
        ehi(&model.predict(g), &front, reference).unwrap_or(0.0)
    })?;
    let eval = evaluate(
        &gains,
        state.mode,
        cfg,
        env,
        state.master_seed,
        state.iteration,
    );
    absorb(state, cfg, gains, selection, acq, eval)?;
    check_stopping(state, cfg);
    Ok(())
}

/// One iteration of the performance-only baseline with expected improvement
/// over the best observed scaled return.
pub fn scalar_bo_step(
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    env: &Environment,
) -> Result<()> {
    if state.mode != Mode::Scalar {
        return Err(Error::invalid("scalar_bo_step needs scalar mode"));
    }
    let best = state.incumbent().map_or(0.0, |(_, v)| v);
    let (gains, selection, acq) = select(state, cfg, |model, g| {
        let post = model.predict(g);
        ei(post.mean[0], post.std(0), best)
    })?;
    let eval = evaluate(
        &gains,
        state.mode,
        cfg,
        env,
        state.master_seed,
        state.iteration,
    );
    absorb(state, cfg, gains, selection, acq, eval)?;
    check_stopping(state, cfg);
    Ok(())
}

pub fn step(state: &mut OptimizerState, cfg: &OptimizerConfig, env: &Environment) -> Result<()> {
    match state.mode {
        Mode::Scalar => scalar_bo_step(state, cfg, env),
        _ => robust_po_step(state, cfg, env, &REFERENCE),
    }
}

/// Advances `state` until the budget is spent, the stopping rule fires, or
/// `max_steps` iterations have run in this call. With an output directory
/// the state is checkpointed and the result files are rewritten after every
/// iteration.
pub fn advance(
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    env: &Environment,
    out: Option<&std::path::Path>,
    max_steps: Option<usize>,
) -> Result<()> {
    cfg.validate()?;
    env.validate()?;
    let mut taken = 0;
    while !state.is_finished(cfg) && max_steps.is_none_or(|m| taken < m) {
        step(state, cfg, env)?;
        taken += 1;
        if let Some(dir) = out {
            write_checkpoint(state, dir)?;
            write_outputs(state, dir)?;
        }
    }
    if let Some(dir) = out {
        write_outputs(state, dir)?;
    }
    Ok(())
}

/// Runs a fresh optimization to completion.
pub fn run(
    mode: Mode,
    cfg: &OptimizerConfig,
    env: &Environment,
    master_seed: u64,
    out: Option<&std::path::Path>,
) -> Result<OptimizerState> {
    let mut state = OptimizerState::new(mode, master_seed);
    advance(&mut state, cfg, env, out, None)?;
    Ok(state)
}
