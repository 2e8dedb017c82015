//! Limited-memory BFGS with a weak Wolfe line search.
//!
//! The bracketing line search (expansion plus bisection) also behaves on
//! piecewise smooth objectives, where exact Wolfe conditions may never hold.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Sufficient decrease parameter.
    pub c1: f64,
    /// Curvature parameter of the weak Wolfe condition.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 12, max_iterations: 10_000, c1: 1e-4, c2: 0.9, max_line_search: 60 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStatus {
    Converged,
    /// No step satisfying the sufficient decrease condition was found.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `f` from `x0`.
///
/// `eval(x, grad)` returns the objective and writes the gradient.
/// `converged(x, value, grad)` is consulted after every accepted step and
/// before the first one.
pub fn lbfgs<E, C>(x0: Vec<f64>, mut eval: E, mut converged: C, opts: &LbfgsOptions) -> LbfgsReport
where
    E: FnMut(&[f64], &mut [f64]) -> f64,
    C: FnMut(&[f64], f64, &[f64]) -> bool,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = eval(&x, &mut g);
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alpha_buf = vec![0.0; opts.memory];

    for iter in 0..opts.max_iterations {
        if converged(&x, f, &g) {
            return LbfgsReport { x, value: f, iterations: iter, evaluations, status: LbfgsStatus::Converged };
        }
        // two-loop recursion
        d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
        for (k, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alpha_buf[k] = a;
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
        }
        let gamma = match history.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => {
                let gn = dot(&g, &g).sqrt();
                if gn > 0.0 {
                    1e-2 / gn
                } else {
                    1.0
                }
            }
        };
        d.iter_mut().for_each(|di| *di *= gamma);
        for (k, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (alpha_buf[k] - b) * si);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi * gamma.abs().max(1e-12));
            slope = dot(&g, &d);
            if !(slope < 0.0) {
                return LbfgsReport { x, value: f, iterations: iter, evaluations, status: LbfgsStatus::Stalled };
            }
        }

        // weak Wolfe bracketing; keep the last step with sufficient decrease
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut t = 1.0;
        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        for _ in 0..opts.max_line_search {
            x_new.iter_mut().zip(&x).zip(&d).for_each(|((xn, xi), di)| *xn = xi + t * di);
            let f_new = eval(&x_new, &mut g_new);
            evaluations += 1;
            if !(f_new <= f + opts.c1 * t * slope) {
                hi = t;
            } else {
                best = Some((f_new, x_new.clone(), g_new.clone()));
                if dot(&g_new, &d) >= opts.c2 * slope {
                    break;
                }
                lo = t;
            }
            t = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * t };
            if hi.is_finite() && hi - lo <= 1e-16 * hi {
                break;
            }
        }
        let Some((f_new, xb, gb)) = best else {
            return LbfgsReport { x, value: f, iterations: iter, evaluations, status: LbfgsStatus::Stalled };
        };
        x_new.copy_from_slice(&xb);
        g_new.copy_from_slice(&gb);

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
    }
    let status = if converged(&x, f, &g) { LbfgsStatus::Converged } else { LbfgsStatus::MaxIterations };
    LbfgsReport { x, value: f, iterations: opts.max_iterations, evaluations, status }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let eval = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let conv = |_: &[f64], _: f64, g: &[f64]| dot(g, g).sqrt() < 1e-10;
        let r = lbfgs(vec![-1.2, 1.0], eval, conv, &LbfgsOptions::default());
        assert_eq!(r.status, LbfgsStatus::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn nonsmooth_abs_reaches_the_kink() {
        // f = |x0| + 0.5 (x1 - 1)^2, minimiser at the kink
        let eval = |x: &[f64], g: &mut [f64]| {
            g[0] = if x[0] >= 0.0 { 1.0 } else { -1.0 };
            g[1] = x[1] - 1.0;
            x[0].abs() + 0.5 * (x[1] - 1.0).powi(2)
        };
        let r = lbfgs(vec![0.7, -2.0], eval, |_, _, _| false, &LbfgsOptions { max_iterations: 500, ..Default::default() });
        assert!(r.x[0].abs() < 1e-8, "{:?}", r.x);
        assert!((r.x[1] - 1.0).abs() < 1e-6);
    }
}
