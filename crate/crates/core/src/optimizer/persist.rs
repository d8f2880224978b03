//! Checkpoints and result files of an optimization run.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{Mode, OptimizerState};
use crate::error::{Error, Result};
use crate::pareto::write_front_csv;

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FRONT_FILE: &str = "pareto_front.csv";
pub const SET_FILE: &str = "pareto_set.csv";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const HV_TRACE_FILE: &str = "hv_trace.csv";
pub const BEST_TRACE_FILE: &str = "best_trace.csv";
pub const INCUMBENT_FILE: &str = "incumbent.json";

/// Writes `bytes` to a sibling temporary file and renames it into place, so
/// readers never observe a half-written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn checkpoint_name(iteration: usize) -> String {
    format!("iteration_{iteration:04}.json")
}

/// Saves the state as `checkpoints/iteration_NNNN.json`, where `NNNN` is the
/// number of completed iterations.
pub fn write_checkpoint(state: &OptimizerState, dir: &Path) -> Result<PathBuf> {
    let cdir = dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
    let path = cdir.join(checkpoint_name(state.iteration));
    write_atomic(&path, &serde_json::to_vec(state)?)?;
    Ok(path)
}

/// Newest checkpoint in a run directory, if any.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    let cdir = dir.join(CHECKPOINT_DIR);
    if !cdir.exists() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(&cdir).map_err(|e| Error::io(&cdir, e))? {
        let path = entry.map_err(|e| Error::io(&cdir, e))?.path();
        let Some(n) = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("iteration_")?.strip_suffix(".json"))
            .and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(b, _)| n > *b) {
            best = Some((n, path));
        }
    }
    Ok(best.map(|(_, p)| p))
}

pub fn load_checkpoint(path: &Path) -> Result<OptimizerState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let state: OptimizerState = serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let consistent = state.dataset.len() == state.iteration
        && state.dataset.output_dim() == state.mode.output_dim()
        && state.hyperparams.is_some() == (state.iteration > 0);
    if !consistent {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            message: "iteration counter, dataset and hyperparameters disagree".into(),
        });
    }
    Ok(state)
}

#[derive(Serialize)]
struct SetRow {
    theta_1: f64,
    theta_2: f64,
    theta_3: f64,
    theta_4: f64,
    performance: f64,
    robustness: f64,
}

#[derive(Serialize)]
struct HvRow {
    iteration: usize,
    hypervolume: f64,
}

#[derive(Serialize)]
struct BestRow {
    best_return: f64,
}

#[derive(Serialize)]
struct Incumbent {
    gains: crate::sim::ControllerGains,
    performance: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Rewrites the result files for the current state.
///
/// Robust modes: front, Pareto set and hypervolume trace. Scalar mode: the
/// best-so-far trace and the incumbent controller. Both: the audit log.
pub fn write_outputs(state: &OptimizerState, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if state.mode == Mode::Scalar {
        write_rows(
            &dir.join(BEST_TRACE_FILE),
            state
                .best_history
                .iter()
                .map(|v| BestRow { best_return: *v }),
        )?;
        if let Some((gains, performance)) = state.incumbent() {
            let json = serde_json::to_vec_pretty(&Incumbent { gains, performance })?;
            write_atomic(&dir.join(INCUMBENT_FILE), &json)?;
        }
    } else {
        let front = state.front();
        let tmp = dir.join(FRONT_FILE).with_extension("csv.tmp");
        write_front_csv(front.points(), &tmp)?;
        fs::rename(&tmp, dir.join(FRONT_FILE)).map_err(|e| Error::io(dir.join(FRONT_FILE), e))?;
        write_rows(
            &dir.join(SET_FILE),
            state
                .pareto_set()
                .iter()
                .zip(front.points())
                .map(|(g, y)| SetRow {
                    theta_1: g.0[0],
                    theta_2: g.0[1],
                    theta_3: g.0[2],
                    theta_4: g.0[3],
                    performance: y.performance,
                    robustness: y.robustness,
                }),
        )?;
        write_rows(
            &dir.join(HV_TRACE_FILE),
            state.hv_history.iter().enumerate().map(|(i, hv)| HvRow {
                iteration: i + 1,
                hypervolume: *hv,
            }),
        )?;
    }
    let mut audit = Vec::new();
    for event in &state.audit {
        serde_json::to_writer(&mut audit, event)?;
        audit.push(b'\n');
    }
    write_atomic(&dir.join(AUDIT_FILE), &audit)
}
