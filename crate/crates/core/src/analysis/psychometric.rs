//! Cumulative-Gaussian psychometric fits by box-constrained Levenberg-Marquardt.

use serde::Serialize;

use super::SpacingCurve;
use crate::error::{Error, Result};

/// Chance level for eight alternatives.
pub const CHANCE_FLOOR: f64 = 0.125;

const TOLERANCE: f64 = 1e-8;
const MAX_ITERATIONS: usize = 2000;
const MIN_SIGMA: f64 = 1e-3;
const MIN_GAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsychometricFit {
    pub mu: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Sum of squared residuals.
    pub residual: f64,
    pub floor_fixed: bool,
}

impl PsychometricFit {
    pub fn predict(&self, d: f64) -> f64 {
        psychometric(d, self.mu, self.sigma, self.gamma, self.lambda)
    }
}

fn phi_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn phi_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `gamma + (lambda - gamma) * Phi((d - mu) / sigma)`.
pub fn psychometric(d: f64, mu: f64, sigma: f64, gamma: f64, lambda: f64) -> f64 {
    gamma + (lambda - gamma) * phi_cdf((d - mu) / sigma)
}

/// Parameter vector `[mu, sigma, gamma, lambda]`; `gamma` is frozen when the
/// floor is fixed.
struct Problem<'a> {
    xs: &'a [f64],
    ys: &'a [f64],
    free: usize,
}

impl Problem<'_> {
    fn cost(&self, p: &[f64; 4]) -> f64 {
        self.xs
            .iter()
            .zip(self.ys)
            .map(|(&x, &y)| (psychometric(x, p[0], p[1], p[2], p[3]) - y).powi(2))
            .sum()
    }

    /// Normal equations `J^T J` and `J^T r` over the free parameters.
    fn normal_equations(&self, p: &[f64; 4]) -> ([[f64; 4]; 4], [f64; 4]) {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (&x, &y) in self.xs.iter().zip(self.ys) {
            let z = (x - p[0]) / p[1];
            let cdf = phi_cdf(z);
            let amp = (p[3] - p[2]) * phi_pdf(z) / p[1];
            let r = p[2] + (p[3] - p[2]) * cdf - y;
            let full = [-amp, -amp * z, 1.0 - cdf, cdf];
            let j = self.pick(&full);
            for a in 0..self.free {
                jtr[a] += j[a] * r;
                for b in 0..self.free {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        (jtj, jtr)
    }

    fn pick(&self, full: &[f64; 4]) -> [f64; 4] {
        if self.free == 4 {
            *full
        } else {
            [full[0], full[1], full[3], 0.0]
        }
    }

    fn param_index(&self, i: usize) -> usize {
        if self.free == 3 && i == 2 {
            3
        } else {
            i
        }
    }

    /// Whether free parameter `i` sits on a bound that a move along
    /// `direction` would cross, so it stays put this iteration.
    fn blocked(&self, p: &[f64; 4], i: usize, direction: f64) -> bool {
        let (lo, hi) = match self.param_index(i) {
            1 => (MIN_SIGMA, f64::INFINITY),
            2 => (0.0, p[3] - MIN_GAP),
            3 if self.free == 4 => (MIN_GAP, 1.0),
            3 => (p[2] + MIN_GAP, 1.0),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        };
        let v = p[self.param_index(i)];
        (v <= lo && direction < 0.0) || (v >= hi && direction > 0.0)
    }

    fn apply(&self, p: &[f64; 4], step: &[f64; 4]) -> [f64; 4] {
        let mut q = *p;
        q[0] += step[0];
        q[1] += step[1];
        if self.free == 4 {
            q[2] += step[2];
            q[3] += step[3];
        } else {
            q[3] += step[2];
        }
        project(q, self.free == 4)
    }
}

fn project(mut p: [f64; 4], free_floor: bool) -> [f64; 4] {
    p[1] = p[1].max(MIN_SIGMA);
    p[3] = p[3].clamp(MIN_GAP, 1.0);
    if free_floor {
        p[2] = p[2].clamp(0.0, p[3] - MIN_GAP);
    } else {
        p[3] = p[3].max(p[2] + MIN_GAP);
    }
    p
}

/// Solves `a x = b` for the leading `n` unknowns by Gaussian elimination with
/// partial pivoting. `None` when the system is singular.
fn solve(mut a: [[f64; 4]; 4], mut b: [f64; 4], n: usize) -> Option<[f64; 4]> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Runs LM from `start`; `None` if it fails to converge.
fn descend(problem: &Problem, start: [f64; 4]) -> Option<([f64; 4], f64)> {
    let mut p = project(start, problem.free == 4);
    let mut cost = problem.cost(&p);
    let mut damping = 1e-3;
    for _ in 0..MAX_ITERATIONS {
        let (jtj, jtr) = problem.normal_equations(&p);
        let mut a = jtj;
        let mut neg: [f64; 4] = jtr.map(|v| -v);
        for i in 0..problem.free {
            a[i][i] += damping * jtj[i][i].max(1e-12);
            if problem.blocked(&p, i, neg[i]) {
                for k in 0..problem.free {
                    a[i][k] = 0.0;
                    a[k][i] = 0.0;
                }
                a[i][i] = 1.0;
                neg[i] = 0.0;
            }
        }
        let Some(step) = solve(a, neg, problem.free) else {
            damping *= 10.0;
            if damping > 1e16 {
                return None;
            }
            continue;
        };
        let q = problem.apply(&p, &step);
        let change = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let trial = problem.cost(&q);
        if !trial.is_finite() {
            damping *= 10.0;
            continue;
        }
        if trial <= cost {
            p = q;
            cost = trial;
            damping = (damping / 3.0).max(1e-12);
            if change < TOLERANCE {
                return Some((p, cost));
            }
        } else {
            if change < TOLERANCE {
                return Some((p, cost));
            }
            damping *= 10.0;
            if damping > 1e16 {
                return None;
            }
        }
    }
    None
}

/// Fits `acc(d) = gamma + (lambda - gamma) * Phi((d - mu) / sigma)` to a
/// spacing curve by least squares, taking the best of several starts.
pub fn fit_psychometric(curve: &SpacingCurve, fix_floor_to_chance: bool) -> Result<PsychometricFit> {
    fit_points(&curve.distances(), &curve.accuracies(), fix_floor_to_chance)
}

/// Fits raw `(distance, accuracy)` points; see [`fit_psychometric`].
pub fn fit_points(xs: &[f64], ys: &[f64], fix_floor_to_chance: bool) -> Result<PsychometricFit> {
    let min_points = if fix_floor_to_chance { 3 } else { 4 };
    if xs.len() != ys.len() || xs.len() < min_points {
        return Err(Error::Fit(format!("need at least {min_points} points, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite data".into()));
    }
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let (ymin, ymax) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &y| (l.min(y), h.max(y)));
    if hi == lo || ymax - ymin < 1e-12 {
        return Err(Error::Fit("degenerate data: constant distances or accuracies".into()));
    }
    let problem = Problem {
        xs,
        ys,
        free: if fix_floor_to_chance { 3 } else { 4 },
    };
    let range = hi - lo;
    let gamma0 = if fix_floor_to_chance { CHANCE_FLOOR } else { ymin };
    let lambda0 = ymax.max(gamma0 + 0.01);
    let mut best: Option<([f64; 4], f64)> = None;
    for frac in [0.1, 0.5, 0.9] {
        for width in [2.0, 8.0] {
            let start = [lo + frac * range, width * range / 20.0, gamma0, lambda0];
            if let Some((p, cost)) = descend(&problem, start) {
                if best.map_or(true, |(_, c)| cost < c) {
                    best = Some((p, cost));
                }
            }
        }
    }
    let (p, residual) = best.ok_or_else(|| Error::Fit("no start converged".into()))?;
    Ok(PsychometricFit {
        mu: p[0],
        sigma: p[1],
        gamma: p[2],
        lambda: p[3],
        residual,
        floor_fixed: fix_floor_to_chance,
    })
}
