//! Space-filling designs and the inner acquisition maximizer.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::sim::ControllerGains;

/// Axis-aligned bounds on the controller gains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBox {
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

impl Default for SearchBox {
    fn default() -> Self {
        SearchBox {
            lower: [-5.0, 0.0, -3.0, -2.0],
            upper: [5.0, 50.0, 3.0, 8.0],
        }
    }
}

impl SearchBox {
    pub fn validate(&self) -> Result<()> {
        for k in 0..4 {
            let (lo, hi) = (self.lower[k], self.upper[k]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(
                    format!("search_box.lower[{k}]"),
                    format!("need finite lower < upper, got [{lo}, {hi}]"),
                ));
            }
        }
        Ok(())
    }

    pub fn contains(&self, g: &ControllerGains) -> bool {
        (0..4).all(|k| self.lower[k] <= g.0[k] && g.0[k] <= self.upper[k])
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[f64; 4]) -> ControllerGains {
        ControllerGains(std::array::from_fn(|k| {
            let v = self.lower[k] + u[k] * (self.upper[k] - self.lower[k]);
            v.clamp(self.lower[k], self.upper[k])
        }))
    }

    pub fn to_unit(&self, g: &ControllerGains) -> [f64; 4] {
        std::array::from_fn(|k| (g.0[k] - self.lower[k]) / (self.upper[k] - self.lower[k]))
    }

    pub fn diagonal(&self) -> f64 {
        (0..4)
            .map(|k| (self.upper[k] - self.lower[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

const HALTON_BASES: [u64; 4] = [2, 3, 5, 7];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut x = 0.0;
    while i > 0 {
        x += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    x
}

/// First `n` points of a Halton sequence in `[0,1)^4`, rotated by a seeded
/// random shift. Point `i` does not depend on `n`, so larger budgets extend
/// smaller ones.
pub fn shifted_halton(n: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = seed::rng(seed);
    let shift: [f64; 4] = std::array::from_fn(|_| rng.random());
    (0..n as u64)
        .map(|i| {
            std::array::from_fn(|k| {
                let v = radical_inverse(i + 1, HALTON_BASES[k]) + shift[k];
                v - v.floor()
            })
        })
        .collect()
}

/// Latin-hypercube design: each axis is cut into `n` equal strata and every
/// stratum holds exactly one point.
pub fn latin_hypercube(n: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = seed::rng(seed);
    let mut cols = [const { Vec::new() }; 4];
    for col in cols.iter_mut() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        *col = strata
            .into_iter()
            .map(|s| (s as f64 + rng.random::<f64>()) / n as f64)
            .collect::<Vec<f64>>();
    }
    (0..n)
        .map(|i| std::array::from_fn(|k| cols[k][i]))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionSearch {
    /// Quasi-random candidates evaluated before refinement.
    pub candidates: usize,
    /// Number of best candidates refined by coordinate search.
    pub refine_starts: usize,
    /// Acquisition evaluations allowed per refinement.
    pub refine_evals: usize,
}

impl Default for AcquisitionSearch {
    fn default() -> Self {
        AcquisitionSearch {
            candidates: 2048,
            refine_starts: 5,
            refine_evals: 120,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcquisitionOptimum {
    pub gains: ControllerGains,
    pub value: f64,
}

fn finite_or_neg_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Compass search along the unit-cube axes with a halving step.
fn refine(
    acq: &(impl Fn(&ControllerGains) -> f64 + Sync),
    bx: &SearchBox,
    start: [f64; 4],
    start_value: f64,
    max_evals: usize,
) -> ([f64; 4], f64) {
    let (mut x, mut fx) = (start, start_value);
    let mut step = 0.05;
    let mut evals = 0;
    while step >= 1e-4 && evals < max_evals {
        let mut improved = false;
        'axes: for k in 0..4 {
            for dir in [1.0, -1.0] {
                if evals >= max_evals {
                    break 'axes;
                }
                let mut y = x;
                y[k] = (y[k] + dir * step).clamp(0.0, 1.0);
                if y[k] == x[k] {
                    continue;
                }
                evals += 1;
                let fy = finite_or_neg_inf(acq(&bx.from_unit(&y)));
                if fy > fx {
                    x = y;
                    fx = fy;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

/// Maximizes `acq` over the box: evaluates a shifted Halton candidate set,
/// then refines the best few by coordinate search. Ties go to the lowest
/// candidate index, and refined points only replace a candidate when
/// strictly better.
pub fn maximize_acquisition(
    acq: impl Fn(&ControllerGains) -> f64 + Sync,
    bx: &SearchBox,
    opts: &AcquisitionSearch,
    seed: u64,
) -> Result<AcquisitionOptimum> {
    if opts.candidates == 0 {
        return Err(Error::invalid("acquisition budget must be >= 1"));
    }
    let units = shifted_halton(opts.candidates, seed);
    let values: Vec<f64> = units
        .par_iter()
        .map(|u| finite_or_neg_inf(acq(&bx.from_unit(u))))
        .collect();

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut best = (units[order[0]], values[order[0]]);

    let refined: Vec<([f64; 4], f64)> = order
        .iter()
        .take(opts.refine_starts)
        .copied()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&i| refine(&acq, bx, units[i], values[i], opts.refine_evals))
        .collect();
    for (x, v) in refined {
        if v > best.1 {
            best = (x, v);
        }
    }
    Ok(AcquisitionOptimum {
        gains: bx.from_unit(&best.0),
        value: best.1,
    })
}
