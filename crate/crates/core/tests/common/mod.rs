//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{Matrix4, Vector4};
use robust_mobo::sim::{dynamics_deriv, PhysicalParams};
use robust_mobo::{ControllerGains, SimState};

/// Central finite-difference linearization `x' = A x + B u` about upright.
pub fn linearize_upright(p: &PhysicalParams) -> (Matrix4<f64>, Vector4<f64>) {
    let h = 1e-6;
    let f = |x: [f64; 4], u: f64| -> Vector4<f64> {
        Vector4::from(dynamics_deriv(&SimState::from_array(x), u, p).unwrap())
    };
    let mut a = Matrix4::zeros();
    for j in 0..4 {
        let mut xp = [0.0; 4];
        let mut xm = [0.0; 4];
        xp[j] = h;
        xm[j] = -h;
        let col = (f(xp, 0.0) - f(xm, 0.0)) / (2.0 * h);
        a.set_column(j, &col);
    }
    let b = (f([0.0; 4], h) - f([0.0; 4], -h)) / (2.0 * h);
    (a, b)
}

/// Ackermann pole placement for the single-input pair (A, B): returns K with
/// eig(A - B K) = `poles` (real poles only).
pub fn ackermann(a: &Matrix4<f64>, b: &Vector4<f64>, poles: [f64; 4]) -> [f64; 4] {
    let mut ctrb = Matrix4::zeros();
    let mut col = *b;
    for j in 0..4 {
        ctrb.set_column(j, &col);
        col = a * col;
    }
    // desired characteristic polynomial evaluated at A
    let id = Matrix4::identity();
    let phi = poles.iter().fold(id, |acc, &p| acc * (a - id * p));
    let inv = ctrb.try_inverse().expect("controllable");
    let last_row = inv.row(3);
    let k = last_row * phi;
    [k[0], k[1], k[2], k[3]]
}

pub const ORACLE_POLES: [f64; 4] = [-4.0, -5.0, -12.0, -14.0];

/// Stabilizing state-feedback gains for `p` by pole placement on the
/// finite-difference linearization (`u = theta · x`, so `theta = -K`).
pub fn pole_placement_gains(p: &PhysicalParams) -> ControllerGains {
    let (a, b) = linearize_upright(p);
    let k = ackermann(&a, &b, ORACLE_POLES);
    ControllerGains([-k[0], -k[1], -k[2], -k[3]])
}

pub fn max_real_eigenvalue(m: &Matrix4<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Area of the union of boxes `[r, p]` by brute force over the grid cells
/// induced by all coordinates. Points below `r` contribute nothing.
pub fn grid_union_area(points: &[(f64, f64)], r: (f64, f64)) -> f64 {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| (x.max(r.0), y.max(r.1)))
        .collect();
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).chain([r.0]).collect();
    let mut ys: Vec<f64> = pts.iter().map(|p| p.1).chain([r.1]).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    xs.dedup();
    ys.dedup();
    let mut area = 0.0;
    for i in 0..xs.len().saturating_sub(1) {
        for j in 0..ys.len().saturating_sub(1) {
            if pts.iter().any(|p| p.0 >= xs[i + 1] && p.1 >= ys[j + 1]) {
                area += (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j]);
            }
        }
    }
    area
}

/// Monte-Carlo estimate of the dominated area inside the unit square, with
/// its standard error.
pub fn mc_unit_square_area(
    points: &[(f64, f64)],
    n: usize,
    rng: &mut impl rand::Rng,
) -> (f64, f64) {
    let mut hits = 0usize;
    for _ in 0..n {
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        if points.iter().any(|p| p.0 >= u && p.1 >= v) {
            hits += 1;
        }
    }
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

/// Monte-Carlo estimate of the expected improvement of the grid area when a
/// point drawn from independent Gaussians joins `front`.
pub fn mc_expected_improvement(
    front: &[(f64, f64)],
    mean: (f64, f64),
    std: (f64, f64),
    r: (f64, f64),
    n: usize,
    rng: &mut impl rand::Rng,
) -> (f64, f64) {
    use rand_distr::{Distribution, StandardNormal};
    let base = grid_union_area(front, r);
    let mut with = front.to_vec();
    with.push((0.0, 0.0));
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        *with.last_mut().unwrap() = (mean.0 + std.0 * z1, mean.1 + std.1 * z2);
        let gain = grid_union_area(&with, r) - base;
        sum += gain;
        sum_sq += gain * gain;
    }
    let m = sum / n as f64;
    let var = (sum_sq / n as f64 - m * m).max(0.0);
    (m, (var / n as f64).sqrt())
}
