//! Material-point probe of the relaxed law along a strain path.
//!
//! The path is polygonal in `(tr eps, |dev eps|)` with a fixed deviatoric
//! direction; energy, stress and branch are recorded at every sample and
//! the stress is checked against central differences of the energy.

use relaxplast::material::InternalState;
use relaxplast::model3d::{relaxed_energy_3d, relaxed_stress_3d, RelaxedMaterial};
use relaxplast::tensor::SymTensor;
use serde::{Deserialize, Serialize};

use crate::config::{self, ConfigError, Dimension, MaterialData, Quantity};
use crate::output::{num, RunContext};
use crate::{prepare, Outcome, RunOptions};

/// Relative stress error of the central differences.
pub const FD_TOL: f64 = 1e-6;
/// Largest stress change between neighbouring samples, relative to the
/// largest stress on the path.
pub const CONTINUITY_TOL: f64 = 0.05;
/// Deviatoric stress on the hydrostatic part, relative to the stress.
pub const HYDROSTATIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub trace: Quantity,
    pub deviator: Quantity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Point3dConfig {
    pub material: MaterialData,
    /// Deviatoric direction `[xx, yy, zz, xy, yz, xz]`; its trace is
    /// removed and it is normalised.
    pub direction: [f64; 6],
    pub waypoints: Vec<Waypoint>,
    pub samples_per_segment: usize,
}

impl Default for Point3dConfig {
    fn default() -> Self {
        let w = |t: f64, a: f64| Waypoint { trace: Quantity::one(t), deviator: Quantity::one(a) };
        Self {
            material: MaterialData::default(),
            direction: [1.0, -1.0, 0.0, 0.5, 0.0, 0.0],
            // hydrostatic compression, then shear through all four branches
            waypoints: vec![w(0.0, 0.0), w(-0.0235, 0.0), w(-0.0235, 0.15)],
            samples_per_segment: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Point3dSummary {
    pub samples: usize,
    pub regions_visited: Vec<String>,
    pub max_fd_error: f64,
    pub max_stress_step: f64,
    pub max_hydrostatic_deviator: f64,
    pub skipped: usize,
    pub pass: bool,
}

pub struct Sample {
    pub segment: usize,
    pub eps: SymTensor,
    pub psi: f64,
    pub sigma: Option<SymTensor>,
    pub region: String,
    pub fd_error: Option<f64>,
}

fn fd_error(rm: &RelaxedMaterial, eps: &SymTensor, sigma: &SymTensor) -> Option<f64> {
    let s0 = InternalState::default();
    let h = 1e-9 * (1.0 + eps.norm());
    let mut worst: f64 = 0.0;
    for k in 0..6 {
        let mut e = [0.0; 6];
        e[k] = 1.0;
        let dir = SymTensor(e);
        let plus = relaxed_energy_3d(rm, &(*eps + dir.scale(h)), &s0).ok()?.0;
        let minus = relaxed_energy_3d(rm, &(*eps - dir.scale(h)), &s0).ok()?.0;
        let fd = (plus - minus) / (2.0 * h);
        worst = worst.max((fd - sigma.dot(&dir)).abs() / sigma.norm().max(f64::MIN_POSITIVE));
    }
    Some(worst)
}

pub fn compute(cfg: &Point3dConfig) -> Result<(Vec<Sample>, Point3dSummary), ConfigError> {
    let rm = cfg.material.material()?;
    if cfg.waypoints.len() < 2 || cfg.samples_per_segment == 0 {
        return Err(ConfigError("need two waypoints and at least one sample per segment".into()));
    }
    let dir = SymTensor(cfg.direction).dev();
    if !(dir.norm() > 0.0) || !dir.is_finite() {
        return Err(ConfigError("direction must have a nonzero deviatoric part".into()));
    }
    let dir = dir.scale(1.0 / dir.norm());
    let pts = cfg
        .waypoints
        .iter()
        .map(|w| {
            let a = w.deviator.si(Dimension::One, "deviator")?;
            if a < 0.0 {
                return Err(ConfigError("deviator magnitudes must not be negative".into()));
            }
            Ok((w.trace.si(Dimension::One, "trace")?, a))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let s0 = InternalState::default();
    let mut samples = Vec::new();
    for (seg, w) in pts.windows(2).enumerate() {
        let n = cfg.samples_per_segment;
        let first = if seg == 0 { 0 } else { 1 };
        for i in first..=n {
            let t = i as f64 / n as f64;
            let tr = w[0].0 + t * (w[1].0 - w[0].0);
            let a = w[0].1 + t * (w[1].1 - w[0].1);
            let eps = SymTensor::IDENTITY.scale(tr / 3.0) + dir.scale(a);
            let (psi, region) = relaxed_energy_3d(&rm, &eps, &s0).map_err(|e| ConfigError(e.to_string()))?;
            let sigma = relaxed_stress_3d(&rm, &eps, &s0).ok();
            let fd = sigma.as_ref().and_then(|s| fd_error(&rm, &eps, s));
            samples.push(Sample { segment: seg, eps, psi, sigma, region: region.label().to_owned(), fd_error: fd });
        }
    }
    let mut regions_visited: Vec<String> = Vec::new();
    for s in &samples {
        if regions_visited.last() != Some(&s.region) {
            regions_visited.push(s.region.clone());
        }
    }
    let scale = samples.iter().filter_map(|s| s.sigma.map(|x| x.norm())).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut max_step: f64 = 0.0;
    for w in samples.windows(2) {
        if let (Some(a), Some(b)) = (w[0].sigma, w[1].sigma) {
            max_step = max_step.max((b - a).norm() / scale);
        }
    }
    let mut hydro: f64 = 0.0;
    for s in &samples {
        if let (Some(sig), true) = (s.sigma, s.eps.dev().norm() == 0.0) {
            hydro = hydro.max(sig.dev().norm() / sig.norm().max(f64::MIN_POSITIVE));
        }
    }
    let max_fd = samples.iter().filter_map(|s| s.fd_error).fold(0.0, f64::max);
    let skipped = samples.iter().filter(|s| s.fd_error.is_none()).count();
    let summary = Point3dSummary {
        samples: samples.len(),
        regions_visited,
        max_fd_error: max_fd,
        max_stress_step: max_step,
        max_hydrostatic_deviator: hydro,
        skipped,
        pass: max_fd <= FD_TOL && max_step <= CONTINUITY_TOL && hydro <= HYDROSTATIC_TOL,
    };
    Ok((samples, summary))
}

pub fn run(opts: &RunOptions) -> anyhow::Result<Outcome> {
    let cfg: Point3dConfig = config::load(opts.config.as_deref())?;
    let (samples, summary) = compute(&cfg)?;
    prepare(opts)?;
    let ctx = RunContext { command: "point3d", out: opts.out.clone(), seed: opts.seed, config_hash: config::config_hash(&cfg) };
    let mut header = vec!["sample", "segment", "trace", "deviator"];
    header.extend(["eps_xx", "eps_yy", "eps_zz", "eps_xy", "eps_yz", "eps_xz", "psi"]);
    header.extend(["sigma_xx", "sigma_yy", "sigma_zz", "sigma_xy", "sigma_yz", "sigma_xz", "region", "fd_error"]);
    let mut csv = ctx.csv("point3d_path.csv", &header)?;
    for (k, s) in samples.iter().enumerate() {
        let mut row = vec![k.to_string(), s.segment.to_string(), num(s.eps.trace()), num(s.eps.dev().norm())];
        row.extend(s.eps.0.iter().map(|v| num(*v)));
        row.push(num(s.psi));
        match s.sigma {
            Some(sig) => row.extend(sig.0.iter().map(|v| num(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), 6)),
        }
        row.push(s.region.clone());
        row.push(s.fd_error.map(num).unwrap_or_default());
        csv.row(&row)?;
    }
    csv.finish()?;
    ctx.json("point3d_summary.json", &summary)?;
    eprintln!(
        "point3d: {} samples through {}; max FD error {:.2e}, max stress step {:.2e}",
        summary.samples,
        summary.regions_visited.join(" -> "),
        summary.max_fd_error,
        summary.max_stress_step
    );
    Ok(Outcome::from_checks(summary.pass))
}
