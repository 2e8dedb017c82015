//! One-dimensional two-field bar: axial displacement `u` and transverse
//! displacement `v` on `n` linear elements, clamped at `x = 0` and displaced
//! to `(u_ext, v_ext)` at `x = L`.
//!
//! Element gradients are the dimensionless coordinates
//! `y = ((u_{j+1} - u_j) / h, (v_{j+1} - v_j) / h)` with `h = L / n`, and the
//! total energy is `W = sum_j h psi(y_j)` for either the condensed energy
//! `f^(r)` or its envelope `f_c`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{
    classify, condensed_energy, condensed_partials, relaxed_energy_at, relaxed_partials, Dissipation, EnergyError,
    EnergyPoint, EnvelopeParams, Region,
};
use crate::optim::{lbfgs, LbfgsOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Fem1dError {
    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),
    #[error("no convergence after {iterations} iterations (stationarity residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error(transparent)]
    Envelope(#[from] EnergyError),
}

/// Perturbation amplitude used when none is configured; see [`initial_guess`].
pub const DEFAULT_ALPHA: f64 = 0.01;

/// Axial end displacement of the default experiment (with `L = 1`), so that
/// `y1_ext` sits in the left half of the support where all four response
/// regimes occur along the `v_ext` axis.
pub const DEFAULT_U_EXT: f64 = -0.0455;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyKind {
    Condensed,
    Relaxed,
}

/// The four response regimes along a vertical slice of the strain plane.
///
/// * `A`: elastic, both energies convex at the boundary data.
/// * `B`: plastified but still below the yield radius `r`; laminates along
///   the boundary of the elastic domain.
/// * `C`: beyond the yield radius.
/// * `D`: inside the triangle where the envelope is affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    A,
    B,
    C,
    D,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::A => "a",
            Regime::B => "b",
            Regime::C => "c",
            Regime::D => "d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experiment1D {
    pub n: usize,
    pub length: f64,
    pub u_ext: f64,
    pub v_ext: f64,
    pub b: f64,
    pub alpha: f64,
    pub seed: u64,
    pub energy: EnergyKind,
    pub fit: QuadraticYieldFit,
}

impl Experiment1D {
    /// Default bar: 80 elements, unit length, the quadratic fit with
    /// `y_min = -0.058`, `y_max = 0.00107`, `y0 = -0.0385`, `r_max = 0.016` and
    /// `b = 0.095`.
    pub fn with_defaults(v_ext: f64, energy: EnergyKind, seed: u64) -> Self {
        Self {
            n: 80,
            length: 1.0,
            u_ext: DEFAULT_U_EXT,
            v_ext,
            b: 0.095,
            alpha: DEFAULT_ALPHA,
            seed,
            energy,
            fit: QuadraticYieldFit::new(-0.058, 0.00107, -0.0385, 0.016).expect("valid default fit"),
        }
    }

    pub fn validate(&self) -> Result<EnvelopeParams, Fem1dError> {
        if self.n < 2 {
            return Err(Fem1dError::InvalidExperiment(format!("need n >= 2, got {}", self.n)));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Fem1dError::InvalidExperiment(format!("need L > 0, got {}", self.length)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Fem1dError::InvalidExperiment(format!("need alpha >= 0, got {}", self.alpha)));
        }
        if !(self.u_ext.is_finite() && self.v_ext.is_finite()) {
            return Err(Fem1dError::InvalidExperiment("boundary data must be finite".into()));
        }
        Ok(EnvelopeParams::for_dissipation(self.b, &self.fit)?)
    }

    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Gradient of the affine solution.
    pub fn y_ext(&self) -> (f64, f64) {
        (self.u_ext / self.length, self.v_ext / self.length)
    }

    fn density(&self, p: &EnvelopeParams, y1: f64, y2: f64) -> f64 {
        match self.energy {
            EnergyKind::Condensed => condensed_energy(p, &self.fit, EnergyPoint::new(y1, y2)),
            EnergyKind::Relaxed => relaxed_energy_at(p, y1, y2),
        }
    }

    /// One-sided `y1` partials and the `y2` partial of the density.
    fn partials(&self, p: &EnvelopeParams, y1: f64, y2: f64) -> ([f64; 2], f64) {
        match self.energy {
            EnergyKind::Condensed => condensed_partials(p, &self.fit, EnergyPoint::new(y1, y2)),
            EnergyKind::Relaxed => relaxed_partials(p, EnergyPoint::new(y1, y2)),
        }
    }
}

/// Converged bar state.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSolution {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Element gradients `(y1, y2)`.
    pub gradients: Vec<(f64, f64)>,
    pub regions: Vec<Region>,
    pub energy: f64,
    pub iterations: usize,
    /// Nonsmooth stationarity residual at the returned state.
    pub residual: f64,
}

impl MeshSolution {
    pub fn element_midpoints(&self, length: f64) -> Vec<f64> {
        let n = self.gradients.len();
        (0..n).map(|j| (j as f64 + 0.5) * length / n as f64).collect()
    }
}

fn gradients(e: &Experiment1D, u: &[f64], v: &[f64]) -> Vec<(f64, f64)> {
    let h = e.h();
    (0..e.n).map(|j| ((u[j + 1] - u[j]) / h, (v[j + 1] - v[j]) / h)).collect()
}

/// `W(u, v) = sum_j h psi(y_j)` for nodal arrays of length `n + 1`.
pub fn total_energy(e: &Experiment1D, u: &[f64], v: &[f64]) -> Result<f64, Fem1dError> {
    let p = e.validate()?;
    if u.len() != e.n + 1 || v.len() != e.n + 1 {
        return Err(Fem1dError::InvalidExperiment(format!(
            "nodal arrays must have length {}, got {} and {}",
            e.n + 1,
            u.len(),
            v.len()
        )));
    }
    let h = e.h();
    Ok(gradients(e, u, v).iter().map(|&(a, b)| h * e.density(&p, a, b)).sum())
}

/// Affine interpolation of the boundary data plus `alpha h rand(-1, 1)` on
/// every interior node of both fields.
///
/// Random numbers are drawn from a ChaCha8 stream seeded with `e.seed`, first
/// for `u_1..u_{n-1}`, then for `v_1..v_{n-1}`.
pub fn initial_guess(e: &Experiment1D) -> (Vec<f64>, Vec<f64>) {
    let n = e.n;
    let h = e.h();
    let mut rng = ChaCha8Rng::seed_from_u64(e.seed);
    let mut u: Vec<f64> = (0..=n).map(|j| e.u_ext * j as f64 / n as f64).collect();
    let mut v: Vec<f64> = (0..=n).map(|j| e.v_ext * j as f64 / n as f64).collect();
    u[n] = e.u_ext;
    v[n] = e.v_ext;
    for field in [&mut u, &mut v] {
        for x in field.iter_mut().take(n).skip(1) {
            *x += e.alpha * h * rng.gen_range(-1.0..=1.0);
        }
    }
    (u, v)
}

/// Options of [`minimize_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    /// Stationarity tolerance relative to `1 + |W|`.
    pub tol: f64,
    /// Elements with `y1` closer than this to `y_min` or `y_max` use the full
    /// one-sided subdifferential.
    pub kink_tol: f64,
    /// Budget of the quasi-Newton phase on the nodal values.
    pub lbfgs_iterations: usize,
    /// Budget of the active-set phase.
    pub max_iterations: usize,
    /// Rounds of single-element phase exchanges after convergence; zero
    /// returns the first stationary point found.
    pub max_exchanges: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { tol: 1e-8, kink_tol: 1e-9, lbfgs_iterations: 1000, max_iterations: 10_000, max_exchanges: 200 }
    }
}

/// Nonsmooth stationarity residual of a nodal state.
///
/// Equilibrium of the bar requires one common element stress in each field.
/// In `y2` the partial derivative is continuous and the residual is its
/// spread over the elements; in `y1` every element contributes an interval
/// (a single point away from the kinks) and the residual is the gap between
/// the largest lower and the smallest upper end.
pub fn stationarity_residual(e: &Experiment1D, u: &[f64], v: &[f64], kink_tol: f64) -> Result<f64, Fem1dError> {
    let p = e.validate()?;
    Ok(residual_with(e, &p, &gradients(e, u, v), kink_tol))
}

fn residual_with(e: &Experiment1D, p: &EnvelopeParams, ys: &[(f64, f64)], kink_tol: f64) -> f64 {
    let (mut lo_max, mut hi_min) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut s2_min, mut s2_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(y1, y2) in ys {
        let at = if (y1 - p.y_min()).abs() <= kink_tol {
            p.y_min()
        } else if (y1 - p.y_max()).abs() <= kink_tol {
            p.y_max()
        } else {
            y1
        };
        let ([l, r], d2) = e.partials(p, at, y2);
        lo_max = lo_max.max(l.min(r));
        hi_min = hi_min.min(l.max(r));
        s2_min = s2_min.min(d2);
        s2_max = s2_max.max(d2);
    }
    (lo_max - hi_min).max(0.0).max(s2_max - s2_min)
}

/// Minimises the bar energy from [`initial_guess`] with default options.
pub fn minimize(e: &Experiment1D) -> Result<MeshSolution, Fem1dError> {
    minimize_with(e, &MinimizeOptions::default())
}

/// L-BFGS on the interior nodal values of both fields.
///
/// The search stops once the nonsmooth stationarity residual drops below
/// `tol (1 + |W|)`; a stalled line search is accepted if the residual test
/// passes at that point.
pub fn minimize_with(e: &Experiment1D, opts: &MinimizeOptions) -> Result<MeshSolution, Fem1dError> {
    let p = e.validate()?;
    let n = e.n;
    let h = e.h();
    let (u0, v0) = initial_guess(e);
    let m = n - 1;
    let mut x0 = Vec::with_capacity(2 * m);
    x0.extend_from_slice(&u0[1..n]);
    x0.extend_from_slice(&v0[1..n]);

    let unpack = |x: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut u = Vec::with_capacity(n + 1);
        u.push(0.0);
        u.extend_from_slice(&x[..m]);
        u.push(e.u_ext);
        let mut v = Vec::with_capacity(n + 1);
        v.push(0.0);
        v.extend_from_slice(&x[m..]);
        v.push(e.v_ext);
        (u, v)
    };
    let node = |x: &[f64], field: usize, j: usize| -> f64 {
        if j == 0 {
            0.0
        } else if j == n {
            if field == 0 {
                e.u_ext
            } else {
                e.v_ext
            }
        } else {
            x[field * m + j - 1]
        }
    };
    let eval = |x: &[f64], g: &mut [f64]| -> f64 {
        g.iter_mut().for_each(|gi| *gi = 0.0);
        let mut w = 0.0;
        for j in 0..n {
            let y1 = (node(x, 0, j + 1) - node(x, 0, j)) / h;
            let y2 = (node(x, 1, j + 1) - node(x, 1, j)) / h;
            w += h * e.density(&p, y1, y2);
            let ([_, d1], d2) = e.partials(&p, y1, y2);
            // d(h psi)/du_{j+1} = psi_1, d/du_j = -psi_1
            if j + 1 < n {
                g[j] += d1;
                g[m + j] += d2;
            }
            if j > 0 {
                g[j - 1] -= d1;
                g[m + j - 1] -= d2;
            }
        }
        w
    };
    let tol = opts.tol;
    let kink_tol = opts.kink_tol;
    let converged = |x: &[f64], w: f64, _: &[f64]| {
        let (u, v) = unpack(x);
        residual_with(e, &p, &gradients(e, &u, &v), kink_tol) <= tol * (1.0 + w.abs())
    };
    let lopts = LbfgsOptions { max_iterations: opts.lbfgs_iterations, ..LbfgsOptions::default() };
    let report = lbfgs(x0, eval, converged, &lopts);
    let (mut u, mut v) = unpack(&report.x);
    let mut ys = gradients(e, &u, &v);
    let mut residual = residual_with(e, &p, &ys, kink_tol);
    let mut energy = ys.iter().map(|&(a, b)| h * e.density(&p, a, b)).sum::<f64>();
    let mut iterations = report.iterations;
    if residual > tol * (1.0 + energy.abs()) {
        let (polished, extra) = active_set_descent(e, &p, &ys, opts);
        iterations += extra;
        (u, v) = nodes_from_gradients(e, &polished);
        ys = gradients(e, &u, &v);
        residual = residual_with(e, &p, &ys, kink_tol);
        energy = ys.iter().map(|&(a, b)| h * e.density(&p, a, b)).sum::<f64>();
    }
    // the relaxed density is convex, so its stationary points are already global
    if e.energy == EnergyKind::Condensed && opts.max_exchanges > 0 && residual <= tol * (1.0 + energy.abs()) {
        let (improved, extra) = exchange_phases(e, &p, ys, opts);
        iterations += extra;
        (u, v) = nodes_from_gradients(e, &improved);
        ys = gradients(e, &u, &v);
        residual = residual_with(e, &p, &ys, kink_tol);
        energy = ys.iter().map(|&(a, b)| h * e.density(&p, a, b)).sum::<f64>();
    }
    if residual > tol * (1.0 + energy.abs()) {
        return Err(Fem1dError::NoConvergence { iterations, residual });
    }
    let regions = ys.iter().map(|&(a, b)| classify(&p, a, b)).collect();
    Ok(MeshSolution { u, v, gradients: ys, regions, energy, iterations, residual })
}

fn nodes_from_gradients(e: &Experiment1D, ys: &[(f64, f64)]) -> (Vec<f64>, Vec<f64>) {
    let h = e.h();
    let mut u = vec![0.0; e.n + 1];
    let mut v = vec![0.0; e.n + 1];
    for (j, &(a, b)) in ys.iter().enumerate() {
        u[j + 1] = u[j] + h * a;
        v[j + 1] = v[j] + h * b;
    }
    u[e.n] = e.u_ext;
    v[e.n] = e.v_ext;
    (u, v)
}

/// Where an element sits relative to the two kinks of the density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pin {
    Free,
    Min,
    Max,
}

struct ActiveSet<'a> {
    e: &'a Experiment1D,
    p: &'a EnvelopeParams,
    h: f64,
    kinks: [f64; 2],
}

impl ActiveSet<'_> {
    fn energy(&self, ys: &[(f64, f64)]) -> f64 {
        ys.iter().map(|&(a, b)| self.h * self.e.density(self.p, a, b)).sum()
    }

    fn kink(&self, pin: Pin) -> f64 {
        match pin {
            Pin::Min => self.kinks[0],
            Pin::Max => self.kinks[1],
            Pin::Free => unreachable!(),
        }
    }

    /// Partials of a free element, taking the one-sided `y1` derivative on
    /// the side away from an adjacent kink.
    fn grad(&self, a: f64, b: f64) -> [f64; 2] {
        let ([l, r], d2) = self.e.partials(self.p, a, b);
        let d1 = if self.kinks.iter().any(|&k| a < k && k - a < 1e-9) { l } else { r };
        [d1, d2]
    }

    /// Hessian block by differences of the partials, one-sided in `y1` near
    /// a kink so that no difference straddles it.
    fn hessian(&self, a: f64, b: f64) -> [[f64; 2]; 2] {
        let s2 = 1e-7 * (1.0 + b.abs());
        let g = |x: f64, y: f64| self.grad(x, y);
        let (gp, gm) = (g(a, b + s2), g(a, b - s2));
        let s1 = 1e-7 * (1.0 + a.abs());
        let nearest = self.kinks.iter().copied().min_by(|x, y| (a - x).abs().total_cmp(&(a - y).abs())).unwrap();
        let (h11, h21) = if (a - nearest).abs() > 2.0 * s1 {
            let (fp, fm) = (g(a + s1, b), g(a - s1, b));
            ((fp[0] - fm[0]) / (2.0 * s1), (fp[1] - fm[1]) / (2.0 * s1))
        } else {
            let s = if a >= nearest { s1 } else { -s1 };
            let (f1, f2) = (g(a + s, b), g(a + 2.0 * s, b));
            ((f2[0] - f1[0]) / s, (f2[1] - f1[1]) / s)
        };
        let h12 = 0.5 * ((gp[0] - gm[0]) / (2.0 * s2) + h21);
        [[h11, h12], [h12, (gp[1] - gm[1]) / (2.0 * s2)]]
    }

    fn h22_pinned(&self, k: f64, b: f64) -> f64 {
        let s2 = 1e-7 * (1.0 + b.abs());
        (self.e.partials(self.p, k, b + s2).1 - self.e.partials(self.p, k, b - s2).1) / (2.0 * s2)
    }
}

/// Inverse of the absolute value of a symmetric 2x2 matrix, with
/// eigenvalues bounded away from zero.
fn saddle_free_inverse(m: [[f64; 2]; 2], floor: f64) -> [[f64; 2]; 2] {
    let (a, b, c) = (m[0][0], m[0][1], m[1][1]);
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (l1, l2) = (mean + rad, mean - rad);
    // unit eigenvector of l1
    let (vx, vy) = if rad == 0.0 {
        (1.0, 0.0)
    } else if (a - l2).abs() >= (c - l2).abs() {
        let n = (a - l2).hypot(b);
        ((a - l2) / n, b / n)
    } else {
        let n = b.hypot(c - l2);
        (b / n, (c - l2) / n)
    };
    let i1 = 1.0 / l1.abs().max(floor);
    let i2 = 1.0 / l2.abs().max(floor);
    [
        [i1 * vx * vx + i2 * vy * vy, (i1 - i2) * vx * vy],
        [(i1 - i2) * vx * vy, i1 * vy * vy + i2 * vx * vx],
    ]
}

/// Active-set descent in element-gradient space.
///
/// The bar energy only depends on the element gradients, subject to their
/// means matching the end displacements. Elements sitting on a kink are
/// pinned there in `y1`; every step solves the quadratic model built from
/// saddle-free 2x2 Hessian blocks, which reduces to a 2x2 Schur complement
/// for the constraint multipliers. Pins are released when the multiplier
/// leaves the element's one-sided interval, and the line search stops at the
/// first kink a free element would cross, pinning it there.
fn active_set_descent(
    e: &Experiment1D,
    p: &EnvelopeParams,
    start: &[(f64, f64)],
    opts: &MinimizeOptions,
) -> (Vec<(f64, f64)>, usize) {
    let s = ActiveSet { e, p, h: e.h(), kinks: [p.y_min(), p.y_max()] };
    let h = s.h;
    let (y1e, y2e) = e.y_ext();
    let mut pins: Vec<Pin> = start
        .iter()
        .map(|&(a, _)| {
            if (a - s.kinks[0]).abs() <= opts.kink_tol {
                Pin::Min
            } else if (a - s.kinks[1]).abs() <= opts.kink_tol {
                Pin::Max
            } else {
                Pin::Free
            }
        })
        .collect();
    let mut ys: Vec<(f64, f64)> =
        start.iter().zip(&pins).map(|(&(a, b), &pin)| if pin == Pin::Free { (a, b) } else { (s.kink(pin), b) }).collect();
    let mut w = s.energy(&ys);
    let floor = 1e-3 * e.b / (1.0 + e.b);
    // element released in the previous iteration, exempt from re-pinning once
    let mut released: Option<usize> = None;

    for iter in 0..opts.max_iterations {
        let c = [
            ys.iter().map(|g| g.0).sum::<f64>() * h - y1e * e.length,
            ys.iter().map(|g| g.1).sum::<f64>() * h - y2e * e.length,
        ];
        let feasible = c[0].abs().max(c[1].abs()) <= 1e-14 * (e.length + e.u_ext.abs() + e.v_ext.abs());
        if feasible && residual_with(e, p, &ys, opts.kink_tol) <= opts.tol * (1.0 + w.abs()) {
            return (ys, iter);
        }
        let grads: Vec<[f64; 2]> = ys
            .iter()
            .zip(&pins)
            .map(|(&(a, b), &pin)| match pin {
                Pin::Free => s.grad(a, b),
                _ => [0.0, e.partials(p, a, b).1],
            })
            .collect();
        let inverses: Vec<[[f64; 2]; 2]> = ys
            .iter()
            .zip(&pins)
            .map(|(&(a, b), &pin)| match pin {
                Pin::Free => saddle_free_inverse(s.hessian(a, b), floor),
                _ => [[0.0, 0.0], [0.0, 1.0 / s.h22_pinned(a, b).abs().max(floor)]],
            })
            .collect();
        let mut schur = [[0.0; 2]; 2];
        let mut rhs = [-c[0], -c[1]];
        for (m, g) in inverses.iter().zip(&grads) {
            for i in 0..2 {
                for j in 0..2 {
                    schur[i][j] += h * m[i][j];
                }
                rhs[i] += h * (m[i][0] * g[0] + m[i][1] * g[1]);
            }
        }
        let lam = if schur[0][0] == 0.0 {
            // every element pinned: y1 is fixed and its multiplier is free
            [ys.iter().map(|&(a, b)| e.partials(p, a, b).0[0]).fold(f64::NEG_INFINITY, f64::max), rhs[1] / schur[1][1]]
        } else {
            let det = schur[0][0] * schur[1][1] - schur[0][1] * schur[1][0];
            [(schur[1][1] * rhs[0] - schur[0][1] * rhs[1]) / det, (schur[0][0] * rhs[1] - schur[1][0] * rhs[0]) / det]
        };
        // release the pin that contradicts the multiplier most, then rebuild
        let worst = ys
            .iter()
            .zip(&pins)
            .enumerate()
            .filter(|(_, (_, &pin))| pin != Pin::Free)
            .map(|(k, (&(a, b), _))| {
                let ([l, r], _) = e.partials(p, a, b);
                (k, (l - lam[0]).max(lam[0] - r), lam[0] > r)
            })
            .filter(|&(_, v, _)| v > opts.tol)
            .max_by(|x, y| x.1.total_cmp(&y.1));
        if let Some((k, _, right)) = worst {
            ys[k].0 += if right { 1e-10 } else { -1e-10 };
            pins[k] = Pin::Free;
            released = Some(k);
            w = s.energy(&ys);
            continue;
        }
        let d: Vec<[f64; 2]> = inverses
            .iter()
            .zip(&grads)
            .map(|(m, g)| {
                let q = [lam[0] - g[0], lam[1] - g[1]];
                [m[0][0] * q[0] + m[0][1] * q[1], m[1][0] * q[0] + m[1][1] * q[1]]
            })
            .collect();
        let slope: f64 = d.iter().zip(&grads).map(|(di, g)| h * (di[0] * g[0] + di[1] * g[1])).sum();
        // first kink hit by a free element
        let mut t_block = f64::INFINITY;
        let mut blocker = None;
        for (k, (&(a, _), di)) in ys.iter().zip(&d).enumerate() {
            if pins[k] != Pin::Free || di[0] == 0.0 || released == Some(k) {
                continue;
            }
            for (pin, kv) in [(Pin::Min, s.kinks[0]), (Pin::Max, s.kinks[1])] {
                let t = (kv - a) / di[0];
                if t > 0.0 && t < t_block {
                    t_block = t;
                    blocker = Some((k, pin));
                }
            }
        }
        let mut t = t_block.min(1.0);
        let mut trial = ys.clone();
        let mut accepted = false;
        for _ in 0..60 {
            for (k, g) in trial.iter_mut().enumerate() {
                g.0 = ys[k].0 + t * d[k][0];
                g.1 = ys[k].1 + t * d[k][1];
            }
            let hit = if t == t_block { blocker } else { None };
            if let Some((k, pin)) = hit {
                trial[k].0 = s.kink(pin);
            }
            let wt = s.energy(&trial);
            // the constraint correction may raise the energy slightly
            let armijo = w + 1e-4 * t * slope.min(0.0) + (c[0].abs() + c[1].abs()) * 10.0;
            if wt <= armijo {
                if let Some((k, pin)) = hit {
                    pins[k] = pin;
                }
                accepted = true;
                w = wt;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return (ys, iter);
        }
        std::mem::swap(&mut ys, &mut trial);
        released = None;
    }
    (ys, opts.max_iterations)
}

/// Groups of elements sharing one gradient, as `(representative, members)`.
fn phases(ys: &[(f64, f64)], tol: f64) -> Vec<((f64, f64), Vec<usize>)> {
    let mut out: Vec<((f64, f64), Vec<usize>)> = Vec::new();
    for (k, &g) in ys.iter().enumerate() {
        match out.iter_mut().find(|(c, _)| (c.0 - g.0).abs().max((c.1 - g.1).abs()) <= tol) {
            Some((_, m)) => m.push(k),
            None => out.push((g, vec![k])),
        }
    }
    out
}

/// Lowers the energy of a stationary point by moving elements from one
/// gradient phase to another and re-running the active-set descent.
///
/// Single-element moves are tried first, then pairs of moves. A move is kept
/// only if the new stationary point has strictly lower energy. Gradient
/// descent alone cannot change how many elements sit in each phase once the
/// phases are separated by energy barriers.
fn exchange_phases(
    e: &Experiment1D,
    p: &EnvelopeParams,
    start: Vec<(f64, f64)>,
    opts: &MinimizeOptions,
) -> (Vec<(f64, f64)>, usize) {
    let h = e.h();
    let energy = |ys: &[(f64, f64)]| ys.iter().map(|&(a, b)| h * e.density(p, a, b)).sum::<f64>();
    let mut ys = start;
    let mut w = energy(&ys);
    let mut iterations = 0;
    // a candidate that does not settle quickly is not worth pursuing
    let trial_opts = MinimizeOptions { max_iterations: opts.max_iterations.min(200), ..*opts };
    for _ in 0..opts.max_exchanges {
        let mut groups = phases(&ys, 1e-6);
        groups.sort_by_key(|g| std::cmp::Reverse(g.1.len()));
        groups.truncate(6);
        let g = groups.len();
        let singles = (0..g).flat_map(|a| (0..g).filter(move |&b| b != a).map(move |b| vec![(a, b)]));
        let pairs = (0..g).flat_map(|a| {
            (0..g).filter(move |&b| b != a).flat_map(move |b| {
                (a..g).flat_map(move |c| (0..g).filter(move |&d| d != c && (c, d) >= (a, b)).map(move |d| vec![(a, b), (c, d)]))
            })
        });
        let mut improved = false;
        for moves in [singles.collect::<Vec<_>>(), pairs.collect::<Vec<_>>()] {
            let mut best: Option<(f64, Vec<(f64, f64)>)> = None;
            for mv in moves {
                let mut trial = ys.clone();
                let mut used = vec![0usize; g];
                let mut valid = true;
                for &(from, to) in &mv {
                    let members = &groups[from].1;
                    if used[from] >= members.len() {
                        valid = false;
                        break;
                    }
                    trial[members[used[from]]] = groups[to].0;
                    used[from] += 1;
                }
                if !valid {
                    continue;
                }
                let (cand, it) = active_set_descent(e, p, &trial, &trial_opts);
                iterations += it;
                if residual_with(e, p, &cand, opts.kink_tol) > opts.tol * (1.0 + w.abs()) {
                    continue;
                }
                let wc = energy(&cand);
                if wc < w - 1e-12 * (1.0 + w.abs()) && best.as_ref().is_none_or(|b| wc < b.0) {
                    best = Some((wc, cand));
                }
            }
            if let Some((wc, cand)) = best {
                w = wc;
                ys = cand;
                improved = true;
                break;
            }
        }
        if !improved {
            break;
        }
    }
    (ys, iterations)
}

/// Regime of the boundary data, from the envelope branch at `y_ext` and the
/// yield radius. `None` outside the four regimes (beyond the triangle or
/// outside the support).
pub fn regime_of(e: &Experiment1D) -> Result<Option<Regime>, Fem1dError> {
    let p = e.validate()?;
    let (y1, y2) = e.y_ext();
    Ok(match classify(&p, y1, y2) {
        Region::Y1 => Some(Regime::A),
        Region::Y2(_) if y2.abs() <= e.fit.eval(y1) => Some(Regime::B),
        Region::Y2(_) => Some(Regime::C),
        Region::Y3(_) => Some(Regime::D),
        _ => None,
    })
}

/// Result of clustering element gradients around the triangle corners.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerClusters {
    /// Corners `y*`, `y*_min`, `y*_max` on the side of `v_ext`.
    pub corners: [(f64, f64); 3],
    pub centers: [(f64, f64); 3],
    pub counts: [usize; 3],
    /// Largest distance of an element gradient from the corner its cluster
    /// was seeded at.
    pub max_distance: f64,
}

/// Three-means clustering of the element gradients seeded at the analytic
/// triangle corners.
pub fn cluster_corners(p: &EnvelopeParams, sol: &MeshSolution, v_ext: f64) -> CornerClusters {
    let t = crate::energy::touching_points(p, crate::energy::Sign::of(v_ext));
    let corners = [(t.apex[0], t.apex[1]), (t.at_min[0], t.at_min[1]), (t.at_max[0], t.at_max[1])];
    let mut centers = corners;
    let mut labels = vec![usize::MAX; sol.gradients.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (k, &(a, b)) in sol.gradients.iter().enumerate() {
            let best = (0..3)
                .min_by(|&i, &j| {
                    let di = (a - centers[i].0).hypot(b - centers[i].1);
                    let dj = (a - centers[j].0).hypot(b - centers[j].1);
                    di.total_cmp(&dj)
                })
                .unwrap();
            if labels[k] != best {
                labels[k] = best;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&(f64, f64)> =
                sol.gradients.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(g, _)| g).collect();
            if !members.is_empty() {
                let k = members.len() as f64;
                *center = (members.iter().map(|g| g.0).sum::<f64>() / k, members.iter().map(|g| g.1).sum::<f64>() / k);
            }
        }
        if !changed {
            break;
        }
    }
    let mut counts = [0usize; 3];
    let mut max_distance = 0.0_f64;
    for (g, &l) in sol.gradients.iter().zip(&labels) {
        counts[l] += 1;
        max_distance = max_distance.max((g.0 - corners[l].0).hypot(g.1 - corners[l].1));
    }
    CornerClusters { corners, centers, counts, max_distance }
}

/// Piecewise quadratic yield radius: two parabolic arcs joined at the peak
/// `(y0, r_max)` and vanishing at `y_min` and `y_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticYieldFit {
    y_min: f64,
    y_max: f64,
    y0: f64,
    r_max: f64,
}

impl QuadraticYieldFit {
    pub fn new(y_min: f64, y_max: f64, y0: f64, r_max: f64) -> Result<Self, EnergyError> {
        if !(y_min < y0 && y0 < y_max) || !(r_max > 0.0) {
            return Err(EnergyError::InvalidParams(format!(
                "quadratic fit needs y_min < y0 < y_max and r_max > 0, got ({y_min}, {y0}, {y_max}, {r_max})"
            )));
        }
        Ok(Self { y_min, y_max, y0, r_max })
    }

    pub fn peak(&self) -> (f64, f64) {
        (self.y0, self.r_max)
    }

    fn half_width(&self, y1: f64) -> f64 {
        if y1 < self.y0 {
            self.y0 - self.y_min
        } else {
            self.y_max - self.y0
        }
    }

    fn inner_slope(&self, y1: f64) -> f64 {
        let w = self.half_width(y1);
        -2.0 * self.r_max * (y1 - self.y0) / (w * w)
    }
}

impl Dissipation for QuadraticYieldFit {
    fn eval(&self, y1: f64) -> f64 {
        if y1 < self.y_min || y1 > self.y_max {
            return 0.0;
        }
        let w = self.half_width(y1);
        let t = (y1 - self.y0) / w;
        (self.r_max * (1.0 - t * t)).max(0.0)
    }

    fn support(&self) -> (f64, f64) {
        (self.y_min, self.y_max)
    }

    fn tag(&self) -> &str {
        "quadratic-fit"
    }

    fn one_sided_slopes(&self, y1: f64) -> (f64, f64) {
        let left = if y1 > self.y_min && y1 <= self.y_max { self.inner_slope(y1) } else { 0.0 };
        let right = if y1 >= self.y_min && y1 < self.y_max { self.inner_slope(y1) } else { 0.0 };
        (left, right)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_hits_its_anchor_points() {
        let r = QuadraticYieldFit::new(-0.058, 0.00107, -0.0385, 0.016).unwrap();
        assert_eq!(r.eval(-0.0385), 0.016);
        assert_eq!(r.eval(-0.058), 0.0);
        assert!(r.eval(0.00107).abs() < 1e-18);
        assert_eq!(r.eval(0.01), 0.0);
        assert!(crate::energy::validate_dissipation(&r).is_ok());
        let (l, rr) = r.one_sided_slopes(-0.058);
        assert_eq!(l, 0.0);
        assert!((rr - 2.0 * 0.016 / 0.0195).abs() < 1e-12);
        assert!(QuadraticYieldFit::new(0.0, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn affine_energies() {
        for kind in [EnergyKind::Condensed, EnergyKind::Relaxed] {
            let e = Experiment1D { alpha: 0.0, ..Experiment1D::with_defaults(0.05, kind, 1) };
            let p = e.validate().unwrap();
            let (u, v) = initial_guess(&e);
            let (y1, y2) = e.y_ext();
            let expect = match kind {
                EnergyKind::Condensed => condensed_energy(&p, &e.fit, EnergyPoint::new(y1, y2)),
                EnergyKind::Relaxed => relaxed_energy_at(&p, y1, y2),
            };
            let w = total_energy(&e, &u, &v).unwrap();
            assert!((w - e.length * expect).abs() < 1e-15, "{w} vs {expect}");
        }
        let e = Experiment1D { u_ext: 0.0, ..Experiment1D::with_defaults(0.0, EnergyKind::Condensed, 1) };
        let zeros = vec![0.0; e.n + 1];
        assert_eq!(total_energy(&e, &zeros, &zeros).unwrap(), 0.0);
    }

    #[test]
    fn initial_guess_contract() {
        let e = Experiment1D { alpha: 0.0, ..Experiment1D::with_defaults(0.02, EnergyKind::Relaxed, 3) };
        let (u, v) = initial_guess(&e);
        for j in 0..=e.n {
            assert!((u[j] - e.u_ext * j as f64 / e.n as f64).abs() < 1e-18);
            assert!((v[j] - e.v_ext * j as f64 / e.n as f64).abs() < 1e-18);
        }
        let e = Experiment1D { alpha: 1.0, ..e };
        let (u1, v1) = initial_guess(&e);
        let (u2, v2) = initial_guess(&e);
        assert_eq!((&u1, &v1), (&u2, &v2));
        assert_eq!((u1[0], u1[e.n], v1[0], v1[e.n]), (0.0, e.u_ext, 0.0, e.v_ext));
        for j in 0..=e.n {
            assert!((u1[j] - u[j]).abs() <= e.h() + 1e-18);
        }
        let other = initial_guess(&Experiment1D { seed: 4, ..e });
        assert_ne!(other.0, u1);
    }

    #[test]
    fn regimes_along_the_default_slice() {
        let r = |v: f64| regime_of(&Experiment1D::with_defaults(v, EnergyKind::Condensed, 0)).unwrap();
        assert_eq!(r(0.002), Some(Regime::A));
        assert_eq!(r(0.01), Some(Regime::B));
        assert_eq!(r(0.05), Some(Regime::C));
        assert_eq!(r(0.1), Some(Regime::D));
        assert_eq!(r(-0.1), Some(Regime::D));
        assert_eq!(r(0.2), None);
    }

    #[test]
    fn validation() {
        let good = Experiment1D::with_defaults(0.01, EnergyKind::Relaxed, 0);
        assert!(Experiment1D { n: 1, ..good }.validate().is_err());
        assert!(Experiment1D { length: 0.0, ..good }.validate().is_err());
        assert!(Experiment1D { alpha: -1.0, ..good }.validate().is_err());
        assert!(matches!(
            Experiment1D { b: 3.0, ..good }.validate(),
            Err(Fem1dError::Envelope(EnergyError::SmallBViolated { .. }))
        ));
    }

    #[test]
    fn relaxed_elastic_run_is_affine() {
        let e = Experiment1D::with_defaults(0.002, EnergyKind::Relaxed, 7);
        let sol = minimize(&e).unwrap();
        let p = e.validate().unwrap();
        let (y1, y2) = e.y_ext();
        assert!((sol.energy - relaxed_energy_at(&p, y1, y2)).abs() < 1e-12);
        for &(a, b) in &sol.gradients {
            assert!((a - y1).abs() < 1e-6 && (b - y2).abs() < 1e-6);
        }
    }

    #[test]
    fn condensed_runs_sit_between_relaxed_and_affine() {
        for v in [0.01, 0.05, 0.1] {
            let ec = Experiment1D::with_defaults(v, EnergyKind::Condensed, 11);
            let p = ec.validate().unwrap();
            let c = minimize(&ec).unwrap();
            let r = minimize(&Experiment1D { energy: EnergyKind::Relaxed, ..ec }).unwrap();
            let (y1, y2) = ec.y_ext();
            let affine = condensed_energy(&p, &ec.fit, EnergyPoint::new(y1, y2));
            assert!(r.energy <= c.energy, "v={v}");
            assert!(c.energy < affine, "v={v}");
            assert!((r.energy - relaxed_energy_at(&p, y1, y2)).abs() < 1e-12);
            assert_eq!(c.u[0], 0.0);
            assert_eq!(c.v[ec.n], v);
        }
    }

    #[test]
    fn condensed_gradients_live_where_the_envelope_touches() {
        let ec = Experiment1D::with_defaults(0.1, EnergyKind::Condensed, 2);
        let p = ec.validate().unwrap();
        let sol = minimize(&ec).unwrap();
        for &(a, b) in &sol.gradients {
            let gap = condensed_energy(&p, &ec.fit, EnergyPoint::new(a, b)) - relaxed_energy_at(&p, a, b);
            assert!(gap < 1e-5, "({a}, {b}) gap {gap}");
        }
        let cl = cluster_corners(&p, &sol, 0.1);
        assert!(cl.max_distance <= 0.1 * p.s_star(), "{cl:?}");
        assert_eq!(cl.counts.iter().sum::<usize>(), ec.n);
        assert!(cl.counts.iter().all(|&k| k > 0));
    }

    #[test]
    fn stationarity_residual_of_returned_state() {
        let ec = Experiment1D::with_defaults(0.05, EnergyKind::Condensed, 5);
        let sol = minimize(&ec).unwrap();
        let r = stationarity_residual(&ec, &sol.u, &sol.v, 1e-9).unwrap();
        assert!(r <= 1e-8 * (1.0 + sol.energy.abs()));
        // the affine state is stationary (equal element stresses), the perturbed start is not
        let (u, v) = initial_guess(&Experiment1D { alpha: 0.0, ..ec });
        assert!(stationarity_residual(&ec, &u, &v, 1e-9).unwrap() < 1e-12);
        let (u, v) = initial_guess(&ec);
        assert!(stationarity_residual(&ec, &u, &v, 1e-9).unwrap() > 1e-4);
    }

    #[test]
    fn relaxed_minimum_does_not_depend_on_the_mesh() {
        let e = Experiment1D::with_defaults(0.05, EnergyKind::Relaxed, 0);
        let a = minimize(&e).unwrap();
        let b = minimize(&Experiment1D { n: 160, ..e }).unwrap();
        assert!((a.energy - b.energy).abs() <= 1e-10);
    }

    #[test]
    fn without_exchanges_the_first_stationary_point_is_returned() {
        let ec = Experiment1D::with_defaults(0.1, EnergyKind::Condensed, 0);
        let opts = MinimizeOptions { max_exchanges: 0, ..MinimizeOptions::default() };
        let plain = minimize_with(&ec, &opts).unwrap();
        let full = minimize(&ec).unwrap();
        assert!(full.energy <= plain.energy);
        assert!(plain.residual <= 1e-8 * (1.0 + plain.energy));
    }
}
