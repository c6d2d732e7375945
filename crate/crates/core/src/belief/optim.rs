// SPDX-License-Identifier: MIT OR Apache-2.0

//! Box-constrained limited-memory quasi-Newton minimizer.
//!
//! Projected L-BFGS: variables sitting on a bound with the gradient pushing
//! outward are frozen for the iteration, the two-loop recursion builds a
//! direction on the remaining variables, and a backtracking Armijo search runs
//! along the projected path. Stops when the infinity norm of the projected
//! gradient drops below `pg_tol` or after `max_iter` iterations.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Lower and upper bounds per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    /// Lower bounds.
    pub lower: Vec<f64>,
    /// Upper bounds.
    pub upper: Vec<f64>,
}

impl Bounds {
    /// Clamp `x` into the box in place.
    pub fn project(&self, x: &mut [f64]) {
        for ((xi, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(lo, hi);
        }
    }

    /// Infinity norm of the projected gradient `P(x - g) - x`.
    pub fn projected_gradient_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        x.iter()
            .zip(g)
            .zip(self.lower.iter().zip(&self.upper))
            .map(|((&xi, &gi), (&lo, &hi))| ((xi - gi).clamp(lo, hi) - xi).abs())
            .fold(0.0, f64::max)
    }
}

/// Stopping rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizerOptions {
    /// Correction pairs kept.
    pub memory: usize,
    /// Iteration cap.
    pub max_iter: usize,
    /// Projected-gradient tolerance.
    pub pg_tol: f64,
}

impl Default for MinimizerOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 500,
            pg_tol: 1e-8,
        }
    }
}

/// Why the minimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Projected gradient below tolerance.
    Converged,
    /// Iteration cap reached.
    MaxIterations,
    /// No decrease found along the steepest projected direction.
    NoProgress,
    /// The objective was not finite at the start point.
    NonFinite,
}

/// Result of one minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    /// Minimizer.
    pub x: Vec<f64>,
    /// Objective value at `x`.
    pub f: f64,
    /// Iterations performed.
    pub iterations: usize,
    /// Objective evaluations.
    pub evaluations: usize,
    /// Stop reason.
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize `objective` over the box from `x0`.
///
/// `objective(x, grad)` returns the value and writes the gradient into `grad`.
pub fn minimize<F>(mut objective: F, x0: &[f64], bounds: &Bounds, opts: &MinimizerOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g);
    let mut evaluations = 1;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Minimum {
            x,
            f,
            iterations: 0,
            evaluations,
            termination: Termination::NonFinite,
        };
    }

    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut free = vec![true; n];
    let mut alphas = vec![0.0; opts.memory];

    for iter in 0..opts.max_iter {
        if bounds.projected_gradient_norm(&x, &g) < opts.pg_tol {
            return Minimum {
                x,
                f,
                iterations: iter,
                evaluations,
                termination: Termination::Converged,
            };
        }
        for i in 0..n {
            let lo = bounds.lower[i];
            let hi = bounds.upper[i];
            let at_lo = x[i] <= lo + 1e-12 * (1.0 + lo.abs());
            let at_hi = x[i] >= hi - 1e-12 * (1.0 + hi.abs());
            free[i] = !((at_lo && g[i] > 0.0) || (at_hi && g[i] < 0.0));
        }

        let mut accepted = false;
        for attempt in 0..2 {
            let steepest = attempt == 1 || memory.is_empty();
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
            if !steepest {
                // Two-loop recursion on the free coordinates.
                for (j, (s, y, rho)) in memory.iter().enumerate().rev() {
                    let a = rho * dot(s, &d);
                    alphas[j] = a;
                    for i in 0..n {
                        d[i] -= a * y[i];
                    }
                }
                let (s, y, _) = memory.back().expect("memory is non-empty");
                let scale = dot(s, y) / dot(y, y);
                for v in d.iter_mut() {
                    *v *= scale;
                }
                for (j, (s, y, rho)) in memory.iter().enumerate() {
                    let b = rho * dot(y, &d);
                    for i in 0..n {
                        d[i] += (alphas[j] - b) * s[i];
                    }
                }
                for i in 0..n {
                    if !free[i] {
                        d[i] = 0.0;
                    }
                }
                if dot(&d, &g) >= 0.0 {
                    continue;
                }
            }
            let mut t = if steepest {
                let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if dmax > 0.0 { (0.1 / dmax).min(1.0) } else { 0.0 }
            } else {
                1.0
            };
            if t == 0.0 {
                break;
            }
            for _ in 0..60 {
                for i in 0..n {
                    x_new[i] = x[i] + t * d[i];
                }
                bounds.project(&mut x_new);
                let step: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                if step.iter().all(|v| *v == 0.0) {
                    break;
                }
                let f_new = objective(&x_new, &mut g_new);
                evaluations += 1;
                if f_new.is_finite() && f_new <= f + 1e-4 * dot(&g, &step) {
                    let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                    let sy = dot(&step, &y);
                    if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
                        if memory.len() == opts.memory {
                            memory.pop_front();
                        }
                        memory.push_back((step, y, 1.0 / sy));
                    }
                    std::mem::swap(&mut x, &mut x_new);
                    std::mem::swap(&mut g, &mut g_new);
                    f = f_new;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if accepted {
                break;
            }
            memory.clear();
        }
        if !accepted {
            return Minimum {
                x,
                f,
                iterations: iter,
                evaluations,
                termination: Termination::NoProgress,
            };
        }
    }
    let termination = if bounds.projected_gradient_norm(&x, &g) < opts.pg_tol {
        Termination::Converged
    } else {
        Termination::MaxIterations
    };
    Minimum {
        x,
        f,
        iterations: opts.max_iter,
        evaluations,
        termination,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let bounds = Bounds {
            lower: vec![-5.0, -5.0],
            upper: vec![5.0, 5.0],
        };
        let opts = MinimizerOptions {
            max_iter: 2000,
            ..Default::default()
        };
        let m = minimize(rosenbrock, &[-1.2, 1.0], &bounds, &opts);
        assert_eq!(m.termination, Termination::Converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn active_bound_is_respected() {
        // min (x-3)^2 + (y+1)^2 on [0,2]x[0,2] -> (2, 0)
        let bounds = Bounds {
            lower: vec![0.0, 0.0],
            upper: vec![2.0, 2.0],
        };
        let m = minimize(
            |x, g| {
                g[0] = 2.0 * (x[0] - 3.0);
                g[1] = 2.0 * (x[1] + 1.0);
                (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2)
            },
            &[1.0, 1.0],
            &bounds,
            &MinimizerOptions::default(),
        );
        assert_eq!(m.x, vec![2.0, 0.0]);
        assert_eq!(m.termination, Termination::Converged);
    }

    #[test]
    fn start_is_projected() {
        let bounds = Bounds {
            lower: vec![-1.0],
            upper: vec![1.0],
        };
        let m = minimize(
            |x, g| {
                g[0] = 2.0 * x[0];
                x[0] * x[0]
            },
            &[10.0],
            &bounds,
            &MinimizerOptions::default(),
        );
        assert!(m.x[0].abs() < 1e-8);
    }

    #[test]
    fn non_finite_start_is_reported() {
        let bounds = Bounds {
            lower: vec![-1.0],
            upper: vec![1.0],
        };
        let m = minimize(|_, g| {
            g[0] = 0.0;
            f64::NAN
        }, &[0.0], &bounds, &MinimizerOptions::default());
        assert_eq!(m.termination, Termination::NonFinite);
    }
}
