//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! Small and allocation-light: the objective writes its gradient into a
//! caller-provided buffer and the history is a ring of `(s, y)` pairs.

use std::collections::VecDeque;

#[derive(Clone, Copy, Debug)]
pub struct LbfgsOptions {
    /// Number of stored correction pairs.
    pub memory: usize,
    /// Stop once the gradient infinity-norm is at most this.
    pub tol: f64,
    pub max_iter: usize,
    /// Stop, unconverged, once `f` has dropped by at most `ftol · max(|f|, 1)`
    /// over the last [`STALL_WINDOW`] iterations. Zero disables the check.
    pub ftol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 10, tol: 1e-8, max_iter: 2000, ftol: 0.0 }
    }
}

pub const STALL_WINDOW: usize = 10;

#[derive(Clone, Debug)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_inf: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Stopped by the `ftol` rule.
    pub stalled: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 50;
/// Approximate Wolfe parameters, used once `f` stops resolving decreases.
const F_NOISE: f64 = 1e-12;
const CURVATURE: f64 = 0.9;
const APPROX_DELTA: f64 = 0.1;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Minimises `objective`, which returns `f(x)` and writes `∇f(x)` into its
/// second argument.
pub fn minimize<F>(mut objective: F, x0: Vec<f64>, opts: &LbfgsOptions) -> LbfgsReport
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alpha = vec![0.0; opts.memory.max(1)];
    let mut iterations = 0;
    let mut stalled = false;
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(STALL_WINDOW + 1);
    recent.push_back(f);

    while iterations < opts.max_iter {
        if inf_norm(&g) <= opts.tol || !f.is_finite() {
            break;
        }

        // Two-loop recursion: d = -H g.
        d.copy_from_slice(&g);
        for (k, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alpha[k] = a;
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
        }
        let gamma = match history.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / dot(&g, &g).sqrt().max(f64::MIN_POSITIVE),
        };
        d.iter_mut().for_each(|di| *di *= gamma);
        for (k, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &d);
            let c = alpha[k] - b;
            d.iter_mut().zip(s).for_each(|(di, si)| *di += c * si);
        }
        d.iter_mut().for_each(|di| *di = -*di);

        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            // Not a descent direction: restart from steepest descent.
            history.clear();
            let scale = 1.0 / dot(&g, &g).sqrt().max(f64::MIN_POSITIVE);
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi * scale);
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            x_new.iter_mut().zip(&x).zip(&d).for_each(|((xn, xi), di)| *xn = xi + step * di);
            let f_new = objective(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= f + ARMIJO * step * slope {
                accepted = Some(f_new);
                break;
            }
            // Near a minimiser the Armijo decrease falls below the rounding
            // level of `f`; fall back to approximate Wolfe conditions, which
            // only use the directional derivative.
            if f_new.is_finite() && f_new <= f + F_NOISE * f.abs() {
                let slope_new = dot(&g_new, &d);
                if slope_new >= CURVATURE * slope && slope_new <= (2.0 * APPROX_DELTA - 1.0) * slope {
                    accepted = Some(f_new);
                    break;
                }
            }
            // Safeguarded quadratic interpolation.
            let trial = if f_new.is_finite() {
                -slope * step * step / (2.0 * (f_new - f - slope * step))
            } else {
                0.1 * step
            };
            step = trial.clamp(0.1 * step, 0.5 * step);
        }

        iterations += 1;
        match accepted {
            Some(f_new) => {
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
                    if history.len() == opts.memory {
                        history.pop_front();
                    }
                    history.push_back((s, y, 1.0 / sy));
                }
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                f = f_new;
                recent.push_back(f);
                if recent.len() > STALL_WINDOW {
                    let old = recent.pop_front().expect("non-empty window");
                    if opts.ftol > 0.0 && old - f <= opts.ftol * f.abs().max(1.0) && inf_norm(&g) > opts.tol {
                        stalled = true;
                        break;
                    }
                }
            }
            None if !history.is_empty() => history.clear(),
            None => break,
        }
    }

    let grad_inf = inf_norm(&g);
    LbfgsReport { converged: grad_inf <= opts.tol, stalled, x, f, grad_inf, iterations }
}
