//! Pareto dominance, exact two-objective hypervolume, and the expected
//! (hypervolume) improvement acquisitions. Both objectives are maximized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::PosteriorGaussian;

/// Scaled `(performance, robustness)` pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub performance: f64,
    pub robustness: f64,
}

impl ObjectiveVector {
    pub const fn new(performance: f64, robustness: f64) -> Self {
        ObjectiveVector {
            performance,
            robustness,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.performance.is_finite() && self.robustness.is_finite()
    }

    pub fn shifted(&self, dx: f64, dy: f64) -> Self {
        ObjectiveVector::new(self.performance + dx, self.robustness + dy)
    }
}

/// Weak dominance: `a >= b` componentwise.
pub fn dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> bool {
    a.performance >= b.performance && a.robustness >= b.robustness
}

fn strictly_dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> bool {
    dominates(a, b) && a != b
}

/// Mutually non-dominated points sorted by ascending performance (hence
/// descending robustness).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    points: Vec<ObjectiveVector>,
}

impl ParetoFront {
    pub fn points(&self) -> &[ObjectiveVector] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Whether some front point weakly dominates `y`.
    pub fn covers(&self, y: &ObjectiveVector) -> bool {
        self.points.iter().any(|p| dominates(p, y))
    }
}

/// Indices into `ys` of the non-dominated points, one per distinct value
/// (first occurrence wins), ordered by ascending performance.
pub fn pareto_indices(ys: &[ObjectiveVector]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ys.len())
        .filter(|&i| {
            !ys.iter().any(|other| strictly_dominates(other, &ys[i]))
                && !ys[..i].iter().any(|earlier| *earlier == ys[i])
        })
        .collect();
    idx.sort_by(|&a, &b| {
        ys[a]
            .performance
            .total_cmp(&ys[b].performance)
            .then(a.cmp(&b))
    });
    idx
}

pub fn pareto_extract(ys: &[ObjectiveVector]) -> ParetoFront {
    ParetoFront {
        points: pareto_indices(ys).into_iter().map(|i| ys[i]).collect(),
    }
}

fn check_reference(front: &ParetoFront, r: &ObjectiveVector) -> Result<()> {
    match front.points.iter().find(|p| !dominates(p, r)) {
        Some(p) => Err(Error::invalid(format!(
            "front point ({}, {}) does not dominate the reference ({}, {})",
            p.performance, p.robustness, r.performance, r.robustness
        ))),
        None => Ok(()),
    }
}

/// Exact area dominated by the front and bounded below by `r`.
pub fn hypervolume_2d(front: &ParetoFront, r: &ObjectiveVector) -> Result<f64> {
    check_reference(front, r)?;
    // sweep right to left: each point adds the strip between its own
    // robustness and that of its right neighbour
    let pts = &front.points;
    let mut area = 0.0;
    for (i, p) in pts.iter().enumerate() {
        let floor = pts.get(i + 1).map_or(r.robustness, |q| q.robustness);
        area += (p.performance - r.performance) * (p.robustness - floor);
    }
    Ok(area)
}

/// `HV(front ∪ {y}) - HV(front)`. Zero when `y` is covered by the front or
/// does not dominate `r`.
pub fn hv_improvement(
    y: &ObjectiveVector,
    front: &ParetoFront,
    r: &ObjectiveVector,
) -> Result<f64> {
    check_reference(front, r)?;
    if !dominates(y, r) || front.covers(y) {
        return Ok(0.0);
    }
    let mut pts = front.points.clone();
    pts.push(*y);
    let merged = pareto_extract(&pts);
    let gain = hypervolume_2d(&merged, r)? - hypervolume_2d(front, r)?;
    Ok(gain.max(0.0))
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF via `erfc`, accurate in both tails.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Below this standard deviation a marginal is treated as a point mass.
pub const POINT_MASS_STD: f64 = 1e-6;

/// `E[max(Y - a, 0)]` for `Y ~ N(mean, std²)`.
fn expected_excess(a: f64, mean: f64, std: f64) -> f64 {
    if std <= POINT_MASS_STD {
        return (mean - a).max(0.0);
    }
    let t = (a - mean) / std;
    (std * (norm_pdf(t) - t * norm_cdf(-t))).max(0.0)
}

/// Expected improvement of `N(mean, std²)` over `best`.
pub fn ei(mean: f64, std: f64, best: f64) -> f64 {
    expected_excess(best, mean, std.max(0.0))
}

/// Expected hypervolume improvement under independent Gaussian marginals.
///
/// The non-dominated region above the front splits into vertical strips
/// between consecutive front abscissae; over strip `i` the improvement
/// integrand factorizes into `P(Y1 >= z1) P(Y2 >= z2)`, and each factor
/// integrates in closed form to a difference of expected excesses. Only the
/// diagonal of the posterior covariance enters.
pub fn ehi(posterior: &PosteriorGaussian, front: &ParetoFront, r: &ObjectiveVector) -> Result<f64> {
    check_reference(front, r)?;
    if posterior.mean.len() != 2 {
        return Err(Error::invalid("EHI needs a two-output posterior"));
    }
    let (m1, m2) = (posterior.mean[0], posterior.mean[1]);
    let s1 = posterior.covariance[(0, 0)].max(0.0).sqrt();
    let s2 = posterior.covariance[(1, 1)].max(0.0).sqrt();
    Ok(ehi_independent(m1, s1, m2, s2, front, r))
}

pub fn ehi_independent(
    m1: f64,
    s1: f64,
    m2: f64,
    s2: f64,
    front: &ParetoFront,
    r: &ObjectiveVector,
) -> f64 {
    let pts = front.points();
    let mut total = 0.0;
    let mut psi_left = expected_excess(r.performance, m1, s1);
    // strip i ends at point i's abscissa and sits above its robustness; the
    // last strip is unbounded on the right and sits above the reference
    for i in 0..=pts.len() {
        let (psi_right, height) = match pts.get(i) {
            Some(p) => (expected_excess(p.performance, m1, s1), p.robustness),
            None => (0.0, r.robustness),
        };
        let width_term = (psi_left - psi_right).max(0.0);
        if width_term > 0.0 {
            total += width_term * expected_excess(height, m2, s2);
        }
        psi_left = psi_right;
    }
    total.max(0.0)
}

/// Writes `performance,robustness` rows.
pub fn write_front_csv(front: &[ObjectiveVector], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in front {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
