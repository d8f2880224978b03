//! Performance and robustness objectives.
//!
//! Performance is the mean scaled episode return over several seeded episodes.
//! Robustness is a delay margin or a lower gain margin, found by binary search
//! over a grid of perturbation severities where each probe asks whether the
//! controller keeps the pendulum in a box around upright for all trials.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::sim::{
    rollout, ControllerGains, InitialStateConfig, ObservationConfig, PerturbationConfig,
    PhysicalParams, SimState, Trajectory,
};

/// Raw returns are clipped to `[RETURN_FLOOR, 0]` before scaling.
pub const RETURN_FLOOR: f64 = -500.0;
/// Raw return mapped to 0.5 by [`scale_return`].
pub const RETURN_BREAKPOINT: f64 = -20.0;

/// Quadratic cost weights. Only the diagonal of the state weight is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub q: [f64; 4],
    pub r: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            q: [1.0, 10.0, 0.0, 0.0],
            r: 8.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        if self.q.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("reward.q", "entries must be >= 0"));
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(Error::config("reward.r", "must be > 0"));
        }
        Ok(())
    }
}

/// `-(x' Q x + R u^2)`, angles in radians.
pub fn reward(s: &SimState, u: f64, w: &RewardWeights) -> f64 {
    let x = s.to_array();
    let quad: f64 = x.iter().zip(&w.q).map(|(xi, qi)| qi * xi * xi).sum();
    -(quad + w.r * u * u)
}

/// Time-averaged reward of an episode (left Riemann sum over control steps).
/// Divergent episodes get the clip floor.
pub fn episode_return(traj: &Trajectory, w: &RewardWeights) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    if traj.diverged {
        return Ok(RETURN_FLOOR);
    }
    let total: f64 = traj
        .true_states
        .iter()
        .zip(&traj.voltages)
        .map(|(s, u)| reward(s, *u, w))
        .sum();
    Ok(total / traj.len() as f64)
}

/// Piecewise-linear map of a clipped return onto `[0, 1]`:
/// `[-500, -20] -> [0, 0.5]` and `[-20, 0] -> [0.5, 1]`.
pub fn scale_return(raw: f64) -> f64 {
    if raw.is_nan() {
        return 0.0;
    }
    let x = raw.clamp(RETURN_FLOOR, 0.0);
    if x <= RETURN_BREAKPOINT {
        0.5 * (x - RETURN_FLOOR) / (RETURN_BREAKPOINT - RETURN_FLOOR)
    } else {
        0.5 + 0.5 * (x - RETURN_BREAKPOINT) / -RETURN_BREAKPOINT
    }
}

/// Practical-stability test: the true state stays in a box over a window
/// that starts after a burn-in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityCriterion {
    pub arm_box_deg: f64,
    pub pend_box_deg: f64,
    pub window_start: f64,
    pub window_end: f64,
    pub episode_length: f64,
}

impl Default for StabilityCriterion {
    fn default() -> Self {
        StabilityCriterion {
            arm_box_deg: 8.0,
            pend_box_deg: 4.0,
            window_start: 4.0,
            window_end: 5.0,
            episode_length: 5.0,
        }
    }
}

impl StabilityCriterion {
    pub fn validate(&self) -> Result<()> {
        if !(self.arm_box_deg > 0.0 && self.pend_box_deg > 0.0) {
            return Err(Error::config("criterion", "boxes must be positive"));
        }
        if !(0.0 <= self.window_start
            && self.window_start < self.window_end
            && self.window_end <= self.episode_length)
        {
            return Err(Error::config(
                "criterion.window_start",
                "window must lie inside the episode",
            ));
        }
        Ok(())
    }

    /// Same boxes, evaluated from the usual burn-in to the end of a longer episode.
    pub fn extended(&self, episode_length: f64) -> Self {
        StabilityCriterion {
            window_end: episode_length,
            episode_length,
            ..self.clone()
        }
    }
}

pub fn is_stable(traj: &Trajectory, c: &StabilityCriterion) -> Result<bool> {
    if traj.diverged {
        return Ok(false);
    }
    let last = traj.times.last().copied().unwrap_or(f64::NEG_INFINITY);
    // the final sample sits one control period before the window end
    if last + traj.control_period < c.window_end - 1e-9 {
        return Err(Error::invalid(format!(
            "trajectory ends at {last} s, before the stability window ends at {} s",
            c.window_end
        )));
    }
    let arm = c.arm_box_deg.to_radians();
    let pend = c.pend_box_deg.to_radians();
    Ok(traj
        .times
        .iter()
        .zip(&traj.true_states)
        .filter(|(t, _)| **t >= c.window_start - 1e-9 && **t <= c.window_end + 1e-9)
        .all(|(_, s)| s.alpha.abs() <= arm && s.beta.abs() <= pend))
}

/// Everything needed to run closed-loop experiments on one plant.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Environment {
    pub physical: PhysicalParams,
    pub observation: ObservationConfig,
    /// Baseline deployment conditions; probes override the gain factor or delay.
    pub perturbation: PerturbationConfig,
    pub initial_state: InitialStateConfig,
    pub reward: RewardWeights,
    pub criterion: StabilityCriterion,
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        self.physical.validate()?;
        self.observation.validate()?;
        self.perturbation.validate()?;
        self.reward.validate()?;
        self.criterion.validate()
    }

    /// One seeded episode: the initial state and the noise stream come from
    /// distinct sub-seeds of `seed`.
    pub fn episode(
        &self,
        gains: &ControllerGains,
        pert: &PerturbationConfig,
        duration: f64,
        seed: u64,
    ) -> Trajectory {
        let mut init_rng = seed::rng(seed::derive(seed, &[0]));
        let init = self.initial_state.sample(&mut init_rng);
        rollout(
            gains,
            &self.physical,
            &self.observation,
            pert,
            duration,
            init,
            seed::derive(seed, &[1]),
        )
    }
}

/// Mean scaled return over `n_episodes` independent episodes.
pub fn performance_estimate(
    gains: &ControllerGains,
    env: &Environment,
    n_episodes: usize,
    seed: u64,
) -> Result<f64> {
    if n_episodes == 0 {
        return Err(Error::invalid("n_episodes must be >= 1"));
    }
    let scaled: Vec<f64> = (0..n_episodes as u64)
        .into_par_iter()
        .map(|ep| {
            let traj = env.episode(
                gains,
                &env.perturbation,
                env.criterion.episode_length,
                seed::derive(seed, &[ep]),
            );
            // empty only for zero-length episodes; treat as the floor
            scale_return(episode_return(&traj, &env.reward).unwrap_or(RETURN_FLOOR))
        })
        .collect();
    Ok(scaled.iter().sum::<f64>() / n_episodes as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginKind {
    /// Observation delay in control steps; larger is more severe.
    Delay,
    /// Multiplicative attenuation of the control action; smaller is more severe.
    Gain,
}

impl MarginKind {
    pub fn apply(&self, base: &PerturbationConfig, severity: f64) -> PerturbationConfig {
        match self {
            MarginKind::Delay => PerturbationConfig {
                observation_delay_steps: severity.round().max(0.0) as usize,
                ..base.clone()
            },
            MarginKind::Gain => PerturbationConfig {
                gain_factor: severity,
                ..base.clone()
            },
        }
    }

    /// The severity that leaves the plant unperturbed.
    pub fn identity(&self) -> f64 {
        match self {
            MarginKind::Delay => 0.0,
            MarginKind::Gain => 1.0,
        }
    }
}

/// Candidate severities ordered from mildest to most severe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginGrid {
    pub kind: MarginKind,
    pub candidates: Vec<f64>,
}

impl MarginGrid {
    pub fn new(kind: MarginKind, candidates: Vec<f64>) -> Result<Self> {
        let grid = MarginGrid { kind, candidates };
        grid.validate()?;
        Ok(grid)
    }

    /// Delays of 1..=16 control steps.
    pub fn default_delay() -> Self {
        MarginGrid {
            kind: MarginKind::Delay,
            candidates: (1..=16).map(f64::from).collect(),
        }
    }

    /// 16 gain factors spaced geometrically from 0.95 down to 0.2.
    pub fn default_gain() -> Self {
        let (hi, lo, m) = (0.95f64, 0.2f64, 16);
        MarginGrid {
            kind: MarginKind::Gain,
            candidates: (0..m)
                .map(|i| hi * (lo / hi).powf(i as f64 / (m - 1) as f64))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::config(
                "grid.candidates",
                "need at least one candidate",
            ));
        }
        if self.candidates.iter().any(|c| !c.is_finite()) {
            return Err(Error::config("grid.candidates", "must be finite"));
        }
        let monotone = self.candidates.windows(2).all(|w| match self.kind {
            MarginKind::Delay => w[1] > w[0],
            MarginKind::Gain => w[1] < w[0],
        });
        if !monotone {
            return Err(Error::config(
                "grid.candidates",
                "must be strictly increasing in severity",
            ));
        }
        match self.kind {
            MarginKind::Delay => {
                if self.candidates.iter().any(|c| *c < 0.0 || c.fract() != 0.0) {
                    return Err(Error::config(
                        "grid.candidates",
                        "delays must be nonnegative whole control steps",
                    ));
                }
            }
            MarginKind::Gain => {
                if self.candidates.iter().any(|c| !(*c > 0.0 && *c <= 1.0)) {
                    return Err(Error::config(
                        "grid.candidates",
                        "lower gain factors must lie in (0, 1]",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Upper bound on probes used by [`binary_search_monotone`] on this grid.
    pub fn max_probes(&self) -> usize {
        let m = self.len();
        (usize::BITS - (m - 1).leading_zeros()) as usize + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub kind: MarginKind,
    pub severity: f64,
    pub verdict: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginEstimate {
    /// Most severe candidate that passed; `None` is the below-minimum sentinel.
    pub raw_value: Option<f64>,
    pub index: Option<usize>,
    pub normalized: f64,
    pub trials_used: usize,
    pub probes: Vec<ProbeRecord>,
}

/// Largest index `i` with `probe(i) == true`, assuming the predicate is
/// monotone (true up to some threshold, false after). Returns the index and
/// the number of probes spent, which never exceeds `ceil(log2(m + 1))`.
pub fn binary_search_monotone(
    m: usize,
    mut probe: impl FnMut(usize) -> bool,
) -> (Option<usize>, usize) {
    // invariant: every index <= lo passed (lo = -1 means none known),
    // every index >= hi failed
    let mut lo: isize = -1;
    let mut hi: isize = m as isize;
    let mut probes = 0;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        probes += 1;
        if probe(mid as usize) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    ((lo >= 0).then_some(lo as usize), probes)
}

/// `true` iff all `n_trials` episodes at the given severity are stable.
/// Trial `k` uses sub-seed `derive(seed, [k])` at every severity.
pub fn stability_probe(
    gains: &ControllerGains,
    severity: f64,
    kind: MarginKind,
    env: &Environment,
    n_trials: usize,
    seed: u64,
) -> bool {
    probe_with(gains, severity, kind, env, &env.criterion, n_trials, seed)
}

fn probe_with(
    gains: &ControllerGains,
    severity: f64,
    kind: MarginKind,
    env: &Environment,
    criterion: &StabilityCriterion,
    n_trials: usize,
    seed: u64,
) -> bool {
    let pert = kind.apply(&env.perturbation, severity);
    let verdicts: Vec<bool> = (0..n_trials as u64)
        .into_par_iter()
        .map(|k| {
            let traj = env.episode(
                gains,
                &pert,
                criterion.episode_length,
                seed::derive(seed, &[k]),
            );
            is_stable(&traj, criterion).unwrap_or(false)
        })
        .collect();
    verdicts.iter().all(|v| *v)
}

/// Delay: `d* / d_max`. Lower gain: `(1 - k*) / (1 - k_grid_min)`. The
/// sentinel maps to 0.
pub fn normalize_margin(raw: Option<f64>, grid: &MarginGrid) -> f64 {
    let Some(v) = raw else { return 0.0 };
    let value = match grid.kind {
        MarginKind::Delay => {
            let d_max = grid.candidates.iter().copied().fold(0.0, f64::max);
            if d_max > 0.0 {
                v / d_max
            } else {
                1.0
            }
        }
        MarginKind::Gain => {
            let k_min = grid.candidates.iter().copied().fold(1.0, f64::min);
            if k_min < 1.0 {
                (1.0 - v) / (1.0 - k_min)
            } else {
                1.0
            }
        }
    };
    value.clamp(0.0, 1.0)
}

pub fn margin_binary_search(
    gains: &ControllerGains,
    grid: &MarginGrid,
    env: &Environment,
    n_trials: usize,
    seed: u64,
) -> MarginEstimate {
    let mut probes = Vec::new();
    let (index, _) = binary_search_monotone(grid.len(), |i| {
        let severity = grid.candidates[i];
        let verdict = stability_probe(gains, severity, grid.kind, env, n_trials, seed);
        probes.push(ProbeRecord {
            kind: grid.kind,
            severity,
            verdict,
            seed,
        });
        verdict
    });
    let raw_value = index.map(|i| grid.candidates[i]);
    MarginEstimate {
        raw_value,
        index,
        normalized: normalize_margin(raw_value, grid),
        trials_used: probes.len() * n_trials,
        probes,
    }
}

/// Re-checks a reported margin with longer episodes, judged from the usual
/// burn-in until the end of the episode. A sentinel margin passes trivially.
pub fn verify_margin(
    gains: &ControllerGains,
    raw: Option<f64>,
    kind: MarginKind,
    env: &Environment,
    episode_length: f64,
    n_trials: usize,
    seed: u64,
) -> bool {
    let Some(severity) = raw else { return true };
    let criterion = env.criterion.extended(episode_length);
    probe_with(gains, severity, kind, env, &criterion, n_trials, seed)
}
