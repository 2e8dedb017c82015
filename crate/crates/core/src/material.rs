//! Tensorial small-strain model with pressure-dependent yield radius.
//!
//! Free energy
//!
//! ```text
//! psi(eps, eps_p, p) = K/2 (tr eps)^2 + mu |dev eps - eps_p|^2 + rho(tr eps) p + beta/2 |eps_p|^2
//! ```
//!
//! with deviatoric plastic strain `eps_p` and equivalent plastic strain `p`.
//! One load increment minimises `psi` over `(eps_p, p)` subject to
//! `p - p_n >= |eps_p - eps_p_n|`; the minimiser and the minimum are available
//! in closed form.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::energy::Dissipation;
use crate::tensor::SymTensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("invalid material parameters: {0}")]
    InvalidParams(String),
    #[error("yield radius is not differentiable at tr eps = {tr}")]
    NondifferentiableRho { tr: f64 },
    #[error("plastic step requested along a zero trial direction")]
    DegenerateDirection,
}

/// Yield radius as a function of the trace strain, in stress units.
pub trait Rho: Send + Sync {
    fn value(&self, tr: f64) -> f64;

    /// `rho'(tr)`, or `None` at a kink.
    fn derivative(&self, tr: f64) -> Option<f64>;

    fn support(&self) -> (f64, f64);
}

/// `rho(tr) = 2 mu r(sqrt(K / 2mu) tr)` for a dimensionless yield radius `r`.
#[derive(Clone)]
pub struct ScaledDissipationRho {
    r: Arc<dyn Dissipation>,
    two_mu: f64,
    scale: f64,
}

impl ScaledDissipationRho {
    pub fn new(r: Arc<dyn Dissipation>, k: f64, mu: f64) -> Self {
        Self { r, two_mu: 2.0 * mu, scale: (k / (2.0 * mu)).sqrt() }
    }
}

impl fmt::Debug for ScaledDissipationRho {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScaledDissipationRho")
            .field("r", &self.r.tag())
            .field("two_mu", &self.two_mu)
            .field("scale", &self.scale)
            .finish()
    }
}

impl Rho for ScaledDissipationRho {
    fn value(&self, tr: f64) -> f64 {
        self.two_mu * self.r.eval(self.scale * tr)
    }

    fn derivative(&self, tr: f64) -> Option<f64> {
        let (l, r) = self.r.one_sided_slopes(self.scale * tr);
        if (l - r).abs() > 1e-9 * (1.0 + l.abs().max(r.abs())) {
            return None;
        }
        Some(self.two_mu * self.scale * 0.5 * (l + r))
    }

    fn support(&self) -> (f64, f64) {
        let (lo, hi) = self.r.support();
        (lo / self.scale, hi / self.scale)
    }
}

/// Bulk modulus `k`, shear modulus `mu`, hardening modulus `beta` and yield
/// radius `rho`.
#[derive(Clone)]
pub struct MaterialParams {
    pub k: f64,
    pub mu: f64,
    pub beta: f64,
    pub rho: Arc<dyn Rho>,
}

impl fmt::Debug for MaterialParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MaterialParams")
            .field("k", &self.k)
            .field("mu", &self.mu)
            .field("beta", &self.beta)
            .field("rho_support", &self.rho.support())
            .finish()
    }
}

impl MaterialParams {
    pub fn new(k: f64, mu: f64, beta: f64, rho: Arc<dyn Rho>) -> Result<Self, MaterialError> {
        for (name, v) in [("K", k), ("mu", mu), ("beta", beta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(MaterialError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        let (lo, hi) = rho.support();
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(MaterialError::InvalidParams(format!("rho support [{lo}, {hi}] is not bounded")));
        }
        Ok(Self { k, mu, beta, rho })
    }

    /// Dimensionless hardening ratio `beta / 2mu`.
    pub fn b(&self) -> f64 {
        self.beta / (2.0 * self.mu)
    }
}

/// Plastic strain (deviatoric) and equivalent plastic strain.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InternalState {
    pub eps_p: SymTensor,
    pub p: f64,
}

impl InternalState {
    pub fn new(eps_p: SymTensor, p: f64) -> Self {
        Self { eps_p, p }
    }
}

pub fn free_energy(m: &MaterialParams, eps: &SymTensor, s: &InternalState) -> f64 {
    let tr = eps.trace();
    let e = eps.dev() - s.eps_p;
    0.5 * m.k * tr * tr + m.mu * e.dot(&e) + m.rho.value(tr) * s.p + 0.5 * m.beta * s.eps_p.dot(&s.eps_p)
}

/// `sigma = (K tr eps + rho'(tr eps) p) I + 2 mu (dev eps - eps_p)`.
///
/// When `p = 0` the consolidation term vanishes and kinks of `rho` are harmless.
pub fn stress(m: &MaterialParams, eps: &SymTensor, s: &InternalState) -> Result<SymTensor, MaterialError> {
    let tr = eps.trace();
    let consolidation = if s.p == 0.0 {
        0.0
    } else {
        m.rho.derivative(tr).ok_or(MaterialError::NondifferentiableRho { tr })? * s.p
    };
    Ok(SymTensor::IDENTITY.scale(m.k * tr + consolidation) + (eps.dev() - s.eps_p).scale(2.0 * m.mu))
}

/// Relative stress `dev sigma - beta eps_p` that drives plastic flow.
fn driving_stress(m: &MaterialParams, eps: &SymTensor, eps_p: &SymTensor) -> SymTensor {
    (eps.dev() - *eps_p).scale(2.0 * m.mu) - eps_p.scale(m.beta)
}

/// `Phi = |dev sigma - beta eps_p| - rho(tr eps)`.
pub fn yield_function(m: &MaterialParams, eps: &SymTensor, s: &InternalState) -> f64 {
    driving_stress(m, eps, &s.eps_p).norm() - m.rho.value(eps.trace())
}

/// Exact minimiser of the incremental problem.
///
/// The trial driving stress `T = 2mu (dev eps - eps_p_n) - beta eps_p_n` is
/// evaluated at the previous plastic strain; the plastic increment is
/// `[|T| - rho]_+ / (2mu + beta)` along `T / |T|` and `p` grows by its norm.
pub fn incremental_update(
    m: &MaterialParams,
    eps: &SymTensor,
    s_n: &InternalState,
) -> Result<InternalState, MaterialError> {
    let t = driving_stress(m, eps, &s_n.eps_p);
    let t_norm = t.norm();
    let excess = t_norm - m.rho.value(eps.trace());
    if excess <= 0.0 {
        return Ok(*s_n);
    }
    if t_norm == 0.0 {
        return Err(MaterialError::DegenerateDirection);
    }
    let step = excess / (2.0 * m.mu + m.beta);
    let delta = t.scale(step / t_norm);
    let mut eps_p = s_n.eps_p + delta;
    // remove round-off volumetric drift
    eps_p = eps_p.dev();
    Ok(InternalState { eps_p, p: s_n.p + delta.norm() })
}

/// Incremental functional minimised by [`incremental_update`]: the free energy
/// at the candidate state, or `+inf` if the candidate violates
/// `p - p_n >= |eps_p - eps_p_n|`.
///
/// The dissipated work `rho (p - p_n)` is already part of the `rho p` term of
/// the free energy, so no separate dissipation distance is added.
pub fn incremental_functional(
    m: &MaterialParams,
    eps: &SymTensor,
    s_n: &InternalState,
    candidate: &InternalState,
) -> f64 {
    let dp = candidate.p - s_n.p;
    let jump = (candidate.eps_p - s_n.eps_p).norm();
    if dp < jump * (1.0 - 1e-14) - 1e-300 {
        return f64::INFINITY;
    }
    free_energy(m, eps, candidate)
}

/// Minimum of the incremental functional over `(eps_p, p)`, minus the
/// state-only constant `beta/2 |eps_p_n|^2`.
///
/// For `eps_p_n = 0` this is
/// `K/2 (tr eps)^2 + mu |dev eps|^2 + rho p_n - [2mu |dev eps| - rho]_+^2 / (2 (2mu + beta))`.
pub fn condensed_energy_3d(m: &MaterialParams, eps: &SymTensor, s_n: &InternalState) -> f64 {
    let tr = eps.trace();
    let rho = m.rho.value(tr);
    let d = eps.dev() - s_n.eps_p;
    let excess = (driving_stress(m, eps, &s_n.eps_p).norm() - rho).max(0.0);
    0.5 * m.k * tr * tr + m.mu * d.dot(&d) + rho * s_n.p - excess * excess / (2.0 * (2.0 * m.mu + m.beta))
}
