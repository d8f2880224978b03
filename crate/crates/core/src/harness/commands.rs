use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::verify_margin;
use crate::optimizer::{
    self, advance, latest_checkpoint, load_checkpoint, AuditEvent, Mode, OptimizerState,
    AUDIT_FILE, BEST_TRACE_FILE, CHECKPOINT_DIR, FRONT_FILE, HV_TRACE_FILE, INCUMBENT_FILE,
    SET_FILE,
};
use crate::pareto::{pareto_indices, ObjectiveVector};
use crate::seed::{self, tag};
use crate::sim::ControllerGains;

pub const CONFIG_FILE: &str = "run_config.json";
pub const POINTS_FILE: &str = "evaluated_points.csv";
pub const PLOTS_DIR: &str = "plots";
pub const VERIFICATION_FILE: &str = "front_verification.csv";

const RUN_ARTIFACTS: [&str; 9] = [
    CONFIG_FILE,
    CHECKPOINT_DIR,
    FRONT_FILE,
    SET_FILE,
    AUDIT_FILE,
    HV_TRACE_FILE,
    BEST_TRACE_FILE,
    INCUMBENT_FILE,
    POINTS_FILE,
];

fn is_nonempty_dir(dir: &Path) -> Result<bool> {
    match fs::read_dir(dir) {
        Ok(mut it) => Ok(it.next().is_some()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(Error::io(dir, e)),
    }
}

fn remove_path(path: &Path) -> Result<()> {
    let res = if path.is_dir() {
        fs::remove_dir_all(path)
    } else {
        fs::remove_file(path)
    };
    match res {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Creates `dir` if needed. A non-empty directory is refused unless `force`
/// is set, in which case only files this tool writes are removed.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if is_nonempty_dir(dir)? {
        if !force {
            return Err(Error::OutputExists(dir.to_path_buf()));
        }
        for name in RUN_ARTIFACTS.iter().chain(&[PLOTS_DIR, VERIFICATION_FILE]) {
            remove_path(&dir.join(name))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub force: bool,
    /// Continue from the newest checkpoint in the output directory.
    pub resume: bool,
    /// Stop after this many iterations in this invocation.
    pub max_steps: Option<usize>,
}

#[derive(Serialize)]
struct PointRow {
    iteration: usize,
    theta_1: f64,
    theta_2: f64,
    theta_3: f64,
    theta_4: f64,
    performance: f64,
    robustness: Option<f64>,
    on_front: bool,
}

fn write_points(state: &OptimizerState, dir: &Path) -> Result<()> {
    let front: Vec<usize> = if state.mode == Mode::Scalar {
        Vec::new()
    } else {
        pareto_indices(&state.objectives())
    };
    let path = dir.join(POINTS_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    for (i, (g, y)) in state
        .dataset
        .inputs()
        .iter()
        .zip(state.dataset.observations())
        .enumerate()
    {
        w.serialize(PointRow {
            iteration: i + 1,
            theta_1: g.0[0],
            theta_2: g.0[1],
            theta_3: g.0[2],
            theta_4: g.0[3],
            performance: y[0],
            robustness: y.get(1).copied(),
            on_front: front.contains(&i),
        })?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Trains on the mis-parametrized plant and writes the run directory.
pub fn train(cfg: &RunConfig, out: &Path, opts: &TrainOptions) -> Result<OptimizerState> {
    cfg.validate()?;
    let env = cfg.training_environment();
    let mut state = if opts.resume && out.join(CONFIG_FILE).exists() {
        let stored = RunConfig::load(&out.join(CONFIG_FILE))?;
        let comparable = |c: &RunConfig| RunConfig {
            output_dir: None,
            ..c.clone()
        };
        if comparable(&stored) != comparable(cfg) {
            return Err(Error::config(
                "<root>",
                format!(
                    "configuration differs from the one stored in {}",
                    out.join(CONFIG_FILE).display()
                ),
            ));
        }
        match latest_checkpoint(out)? {
            Some(path) => {
                let state = load_checkpoint(&path)?;
                if state.mode != cfg.mode || state.master_seed != cfg.seed {
                    return Err(Error::Checkpoint {
                        path,
                        message: "mode or seed differs from the configuration".into(),
                    });
                }
                state
            }
            None => OptimizerState::new(cfg.mode, cfg.seed),
        }
    } else {
        prepare_output_dir(out, opts.force)?;
        optimizer::write_atomic(&out.join(CONFIG_FILE), cfg.to_json()?.as_bytes())?;
        OptimizerState::new(cfg.mode, cfg.seed)
    };
    advance(&mut state, &cfg.optimizer, &env, Some(out), opts.max_steps)?;
    write_points(&state, out)?;
    Ok(state)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectStrategy {
    Elbow,
    Index(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selected {
    pub index: usize,
    pub gains: ControllerGains,
    pub performance: f64,
    /// Absent for performance-only runs.
    pub robustness: Option<f64>,
}

/// Index of the elbow of a front sorted by ascending performance: the point
/// farthest from the chord between the two extremes. Ties prefer interior
/// points, then the point nearest the chord midpoint, then higher robustness
/// (lower index).
pub fn elbow_index(front: &[ObjectiveVector]) -> Option<usize> {
    let n = front.len();
    if n <= 1 {
        return (n == 1).then_some(0);
    }
    let (a, b) = (front[0], front[n - 1]);
    let (dx, dy) = (b.performance - a.performance, b.robustness - a.robustness);
    let chord = (dx * dx + dy * dy).sqrt();
    let mid = (
        0.5 * (a.performance + b.performance),
        0.5 * (a.robustness + b.robustness),
    );
    let key = |i: usize| {
        let p = front[i];
        let dist = if chord > 0.0 {
            (dx * (a.robustness - p.robustness) - dy * (a.performance - p.performance)).abs()
                / chord
        } else {
            0.0
        };
        let interior = i > 0 && i < n - 1;
        let to_mid = ((p.performance - mid.0).powi(2) + (p.robustness - mid.1).powi(2)).sqrt();
        (dist, interior, to_mid)
    };
    const TIE: f64 = 1e-12;
    let mut best = 0;
    for i in 1..n {
        let (d, inner, m) = key(i);
        let (bd, binner, bm) = key(best);
        let better = if (d - bd).abs() > TIE {
            d > bd
        } else if inner != binner {
            inner
        } else {
            m < bm - TIE
        };
        if better {
            best = i;
        }
    }
    Some(best)
}

#[derive(Deserialize)]
struct SetRow {
    theta_1: f64,
    theta_2: f64,
    theta_3: f64,
    theta_4: f64,
    performance: f64,
    robustness: f64,
}

/// Reads the Pareto set and front written by a robust run.
pub fn read_front(run_dir: &Path) -> Result<Vec<(ControllerGains, ObjectiveVector)>> {
    let path = run_dir.join(SET_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifacts(vec![path.display().to_string()]));
    }
    let mut r = csv::Reader::from_path(&path)?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        let row: SetRow = row?;
        rows.push((
            ControllerGains([row.theta_1, row.theta_2, row.theta_3, row.theta_4]),
            ObjectiveVector::new(row.performance, row.robustness),
        ));
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct Incumbent {
    gains: ControllerGains,
    performance: f64,
}

/// Picks a controller from a finished run: from the Pareto set of a robust
/// run, or the best observed controller of a performance-only run.
pub fn select(run_dir: &Path, strategy: SelectStrategy) -> Result<Selected> {
    let incumbent = run_dir.join(INCUMBENT_FILE);
    if !run_dir.join(SET_FILE).exists() && incumbent.exists() {
        let text = fs::read_to_string(&incumbent).map_err(|e| Error::io(&incumbent, e))?;
        let inc: Incumbent = serde_json::from_str(&text)?;
        return Ok(Selected {
            index: 0,
            gains: inc.gains,
            performance: inc.performance,
            robustness: None,
        });
    }
    let rows = read_front(run_dir)?;
    if rows.is_empty() {
        return Err(Error::invalid("the Pareto front is empty"));
    }
    let index = match strategy {
        SelectStrategy::Elbow => {
            let pts: Vec<ObjectiveVector> = rows.iter().map(|r| r.1).collect();
            elbow_index(&pts).expect("front is non-empty")
        }
        SelectStrategy::Index(i) if i < rows.len() => i,
        SelectStrategy::Index(i) => {
            return Err(Error::invalid(format!(
                "index {i} out of range for a front of {} points",
                rows.len()
            )))
        }
    };
    let (gains, y) = rows[index];
    Ok(Selected {
        index,
        gains,
        performance: y.performance,
        robustness: Some(y.robustness),
    })
}

fn load_latest_state(run_dir: &Path) -> Result<OptimizerState> {
    match latest_checkpoint(run_dir)? {
        Some(p) => load_checkpoint(&p),
        None => Err(Error::MissingArtifacts(vec![run_dir
            .join(CHECKPOINT_DIR)
            .display()
            .to_string()])),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationRow {
    pub theta_1: f64,
    pub theta_2: f64,
    pub theta_3: f64,
    pub theta_4: f64,
    pub performance: f64,
    pub robustness: f64,
    /// Raw margin that was re-checked; empty for the below-minimum sentinel.
    pub margin: Option<f64>,
    pub discarded: bool,
}

/// Re-probes every Pareto point at its reported margin with long episodes
/// on the training plant, and flags the points that fail.
pub fn verify_front(run_dir: &Path, force: bool) -> Result<Vec<VerificationRow>> {
    let out = run_dir.join(VERIFICATION_FILE);
    if out.exists() && !force {
        return Err(Error::OutputExists(out));
    }
    let cfg = RunConfig::load(&run_dir.join(CONFIG_FILE))?;
    let Some(kind) = cfg.mode.margin_kind() else {
        return Err(Error::invalid("front verification needs a robust run"));
    };
    let state = load_latest_state(run_dir)?;
    let env = cfg.training_environment();
    let margins: Vec<Option<f64>> = {
        let mut m = vec![None; state.iteration];
        for e in &state.audit {
            if let AuditEvent::Iteration {
                iteration, margin, ..
            } = e
            {
                m[*iteration] = *margin;
            }
        }
        m
    };
    let ys = state.objectives();
    let rows: Vec<VerificationRow> = pareto_indices(&ys)
        .into_iter()
        .map(|i| {
            let g = state.dataset.inputs()[i];
            let pass = verify_margin(
                &g,
                margins[i],
                kind,
                &env,
                cfg.verification.episode_length,
                cfg.verification.trials,
                seed::derive(cfg.seed, &[tag::VERIFY, i as u64]),
            );
            VerificationRow {
                theta_1: g.0[0],
                theta_2: g.0[1],
                theta_3: g.0[2],
                theta_4: g.0[3],
                performance: ys[i].performance,
                robustness: ys[i].robustness,
                margin: margins[i],
                discarded: !pass,
            }
        })
        .collect();
    let mut w = csv::Writer::from_path(&out)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&out, e))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotSummary {
    pub iterations: usize,
    pub curve: Vec<f64>,
    pub discarded: usize,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct ScatterRow {
    performance: f64,
    robustness: f64,
    on_front: bool,
    discarded: bool,
}

#[derive(Serialize)]
struct CurveRow {
    iteration: usize,
    value: f64,
}

fn read_curve(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let idx = r
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| {
            Error::Verification(format!("{} has no `{column}` column", path.display()))
        })?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: f64 = rec[idx].parse().map_err(|_| {
            Error::Verification(format!("non-numeric `{column}` in {}", path.display()))
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Emits plot data for a finished run and verifies that the logged
/// hypervolume (or best-so-far performance) never decreases and has one
/// entry per iteration.
pub fn export_plots(run_dir: &Path, force: bool) -> Result<PlotSummary> {
    let scalar = run_dir.join(BEST_TRACE_FILE).exists() && !run_dir.join(FRONT_FILE).exists();
    let required: &[&str] = if scalar {
        &[BEST_TRACE_FILE, CHECKPOINT_DIR]
    } else {
        &[FRONT_FILE, HV_TRACE_FILE, CHECKPOINT_DIR]
    };
    let missing: Vec<String> = required
        .iter()
        .filter(|f| !run_dir.join(f).exists())
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    let plots = run_dir.join(PLOTS_DIR);
    if is_nonempty_dir(&plots)? && !force {
        return Err(Error::OutputExists(plots));
    }
    let state = load_latest_state(run_dir)?;

    let curve = if scalar {
        read_curve(&run_dir.join(BEST_TRACE_FILE), "best_return")?
    } else {
        read_curve(&run_dir.join(HV_TRACE_FILE), "hypervolume")?
    };
    if curve.len() != state.iteration {
        return Err(Error::Verification(format!(
            "curve has {} entries for {} iterations",
            curve.len(),
            state.iteration
        )));
    }
    if let Some(k) = curve.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::Verification(format!(
            "{} decreases at iteration {}: {} -> {}",
            if scalar { "best return" } else { "hypervolume" },
            k + 2,
            curve[k],
            curve[k + 1]
        )));
    }

    fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    let mut files = Vec::new();
    let curve_path = plots.join(if scalar {
        "best_curve.csv"
    } else {
        "hv_curve.csv"
    });
    let mut w = csv::Writer::from_path(&curve_path)?;
    for (i, v) in curve.iter().enumerate() {
        w.serialize(CurveRow {
            iteration: i + 1,
            value: *v,
        })?;
    }
    w.flush().map_err(|e| Error::io(&curve_path, e))?;
    files.push(curve_path);

    let mut discarded = 0;
    if !scalar {
        let flagged: Vec<(f64, f64)> = match fs::metadata(run_dir.join(VERIFICATION_FILE)) {
            Ok(_) => {
                let mut r = csv::Reader::from_path(run_dir.join(VERIFICATION_FILE))?;
                let mut out = Vec::new();
                for row in r.deserialize() {
                    let row: VerificationRow = row?;
                    if row.discarded {
                        out.push((row.performance, row.robustness));
                    }
                }
                out
            }
            Err(_) => Vec::new(),
        };
        let ys = state.objectives();
        let front = pareto_indices(&ys);
        let scatter = plots.join("front_scatter.csv");
        let mut w = csv::Writer::from_path(&scatter)?;
        for (i, y) in ys.iter().enumerate() {
            let on_front = front.contains(&i);
            let is_discarded = on_front && flagged.contains(&(y.performance, y.robustness));
            discarded += usize::from(is_discarded);
            w.serialize(ScatterRow {
                performance: y.performance,
                robustness: y.robustness,
                on_front,
                discarded: is_discarded,
            })?;
        }
        w.flush().map_err(|e| Error::io(&scatter, e))?;
        files.push(scatter);
    }
    Ok(PlotSummary {
        iterations: state.iteration,
        curve,
        discarded,
        files,
    })
}
