//! Bar experiments in the four response regimes, both energies.

use rayon::prelude::*;
use relaxplast::energy::relaxed_energy_at;
use relaxplast::fem1d::{
    cluster_corners, minimize, regime_of, EnergyKind, Experiment1D, Fem1dError, MeshSolution, QuadraticYieldFit, Regime,
    DEFAULT_ALPHA, DEFAULT_U_EXT,
};
use serde::{Deserialize, Serialize};

use crate::config::{self, ConfigError, Dimension, Quantity};
use crate::output::{num, RunContext};
use crate::{prepare, Outcome, RunOptions};

/// Equal minima in the elastic regime.
pub const ELASTIC_TOL: f64 = 1e-8;
/// Relaxed minimum against `L f_c(y_ext)`.
pub const AFFINE_TOL: f64 = 1e-8;
/// Upper end of the relative gap band of the plastic regimes.
pub const MAX_GAP: f64 = 0.30;
/// Corner clustering radius in units of `s*`.
pub const CLUSTER_RADIUS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseData {
    pub name: String,
    pub v_ext: Quantity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitData {
    pub y_min: Quantity,
    pub y_max: Quantity,
    pub y0: Quantity,
    pub r_max: Quantity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fem1dConfig {
    pub elements: usize,
    pub length: Quantity,
    pub u_ext: Quantity,
    pub b: Quantity,
    /// Amplitude of the random start, in units of the element size.
    pub alpha: Quantity,
    pub fit: FitData,
    pub cases: Vec<CaseData>,
    /// Runs per case and energy, with seeds `seed, seed + 1, ...`.
    pub seeds: usize,
}

impl Default for Fem1dConfig {
    fn default() -> Self {
        let case = |name: &str, v: f64| CaseData { name: name.into(), v_ext: Quantity::one(v) };
        Self {
            elements: 80,
            length: Quantity::one(1.0),
            u_ext: Quantity::one(DEFAULT_U_EXT),
            b: Quantity::one(0.095),
            alpha: Quantity::one(DEFAULT_ALPHA),
            fit: FitData {
                y_min: Quantity::one(-0.058),
                y_max: Quantity::one(0.00107),
                y0: Quantity::one(-0.0385),
                r_max: Quantity::one(0.016),
            },
            cases: vec![case("a", 0.002), case("b", 0.01), case("c", 0.05), case("d", 0.1)],
            seeds: 5,
        }
    }
}

impl Fem1dConfig {
    pub fn experiment(&self, case: &CaseData, energy: EnergyKind, seed: u64) -> Result<Experiment1D, ConfigError> {
        let one = |q: &Quantity, name: &str| q.si(Dimension::One, name);
        let fit = QuadraticYieldFit::new(
            one(&self.fit.y_min, "fit.y_min")?,
            one(&self.fit.y_max, "fit.y_max")?,
            one(&self.fit.y0, "fit.y0")?,
            one(&self.fit.r_max, "fit.r_max")?,
        )
        .map_err(|e| ConfigError(e.to_string()))?;
        let e = Experiment1D {
            n: self.elements,
            length: self.length.positive(Dimension::One, "length")?,
            u_ext: one(&self.u_ext, "u_ext")?,
            v_ext: one(&case.v_ext, "v_ext")?,
            b: self.b.positive(Dimension::One, "b")?,
            alpha: one(&self.alpha, "alpha")?,
            seed,
            energy,
            fit,
        };
        e.validate().map_err(|err| ConfigError(format!("case {}: {err}", case.name)))?;
        Ok(e)
    }
}

/// One case and seed with both energies (when both were run).
#[derive(Debug, Clone, Serialize)]
pub struct CaseCheck {
    pub case: String,
    pub regime: Option<Regime>,
    pub seed: u64,
    pub relaxed: Option<f64>,
    pub condensed: Option<f64>,
    /// `L f_c(y_ext)`.
    pub affine_relaxed: f64,
    /// `(condensed - relaxed) / relaxed`.
    pub gap: Option<f64>,
    pub cluster_distance: Option<f64>,
    pub cluster_radius: f64,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Fem1dSummary {
    pub runs: usize,
    pub convergence_failures: Vec<String>,
    pub checks: Vec<CaseCheck>,
    pub pass: bool,
}

pub struct Fem1dRun {
    pub summary: Fem1dSummary,
    /// `(case index, energy, seed, solution)` in a fixed order.
    pub solutions: Vec<(usize, EnergyKind, u64, Result<MeshSolution, Fem1dError>)>,
}

pub fn compute(cfg: &Fem1dConfig, seed: u64, energy: Option<EnergyKind>) -> Result<Fem1dRun, ConfigError> {
    if cfg.cases.is_empty() || cfg.seeds == 0 {
        return Err(ConfigError("need at least one case and one seed".into()));
    }
    let energies: Vec<EnergyKind> = match energy {
        Some(k) => vec![k],
        None => vec![EnergyKind::Condensed, EnergyKind::Relaxed],
    };
    let mut jobs = Vec::new();
    for (c, case) in cfg.cases.iter().enumerate() {
        for s in 0..cfg.seeds as u64 {
            for &k in &energies {
                jobs.push((c, k, seed + s, cfg.experiment(case, k, seed + s)?));
            }
        }
    }
    let solutions: Vec<_> = jobs.into_par_iter().map(|(c, k, s, e)| (c, k, s, minimize(&e))).collect();

    let mut checks = Vec::new();
    let mut convergence_failures = Vec::new();
    for (c, k, s, r) in &solutions {
        if let Err(e) = r {
            convergence_failures.push(format!("case {} {} seed {s}: {e}", cfg.cases[*c].name, label(*k)));
        }
    }
    for (c, case) in cfg.cases.iter().enumerate() {
        for s in 0..cfg.seeds as u64 {
            let find = |k: EnergyKind| {
                solutions.iter().find(|(cc, kk, ss, _)| *cc == c && *kk == k && *ss == seed + s).and_then(|x| x.3.as_ref().ok())
            };
            let e = cfg.experiment(case, EnergyKind::Relaxed, seed + s)?;
            let p = e.validate().map_err(|err| ConfigError(err.to_string()))?;
            let (y1, y2) = e.y_ext();
            let affine = e.length * relaxed_energy_at(&p, y1, y2);
            let regime = regime_of(&e).map_err(|err| ConfigError(err.to_string()))?;
            let relaxed = find(EnergyKind::Relaxed);
            let condensed = find(EnergyKind::Condensed);
            let mut failures = Vec::new();
            if let Some(r) = relaxed {
                if (r.energy - affine).abs() > AFFINE_TOL {
                    failures.push(format!("relaxed minimum {} differs from L f_c(y_ext) = {affine}", r.energy));
                }
            }
            let gap = match (relaxed, condensed) {
                (Some(r), Some(c)) => Some((c.energy - r.energy) / r.energy.abs()),
                _ => None,
            };
            if let (Some(r), Some(c), Some(g)) = (relaxed, condensed, gap) {
                match regime {
                    Some(Regime::A) => {
                        if (c.energy - r.energy).abs() > ELASTIC_TOL {
                            failures.push(format!("elastic minima differ by {:e}", c.energy - r.energy));
                        }
                    }
                    Some(_) => {
                        if !(g > 0.0 && g <= MAX_GAP) {
                            failures.push(format!("gap {g:e} outside (0, {MAX_GAP}]"));
                        }
                    }
                    None => {}
                }
            }
            let mut cluster_distance = None;
            if let (Some(Regime::D), Some(c)) = (regime, condensed) {
                let cl = cluster_corners(&p, c, e.v_ext);
                if cl.max_distance > CLUSTER_RADIUS * p.s_star() {
                    failures.push(format!("gradients {:e} away from the triangle corners", cl.max_distance));
                }
                cluster_distance = Some(cl.max_distance);
            }
            checks.push(CaseCheck {
                case: case.name.clone(),
                regime,
                seed: seed + s,
                relaxed: relaxed.map(|r| r.energy),
                condensed: condensed.map(|c| c.energy),
                affine_relaxed: affine,
                gap,
                cluster_distance,
                cluster_radius: CLUSTER_RADIUS * p.s_star(),
                failures,
            });
        }
    }
    let pass = convergence_failures.is_empty() && checks.iter().all(|c| c.failures.is_empty());
    let summary = Fem1dSummary { runs: solutions.len(), convergence_failures, checks, pass };
    Ok(Fem1dRun { summary, solutions })
}

fn label(k: EnergyKind) -> &'static str {
    match k {
        EnergyKind::Condensed => "condensed",
        EnergyKind::Relaxed => "relaxed",
    }
}

pub fn run(opts: &RunOptions) -> anyhow::Result<Outcome> {
    let cfg: Fem1dConfig = config::load(opts.config.as_deref())?;
    let run = compute(&cfg, opts.seed, opts.energy)?;
    prepare(opts)?;
    let ctx = RunContext { command: "fem1d", out: opts.out.clone(), seed: opts.seed, config_hash: config::config_hash(&cfg) };
    let length = cfg.length.si(Dimension::One, "length")?;

    // left column: y2 along the bar; right column: gradients in the strain plane
    let mut fields = ctx.csv("fem1d_fields.csv", &["case", "energy", "seed", "element", "x", "y1", "y2", "region"])?;
    let mut runs = ctx.csv("fem1d_runs.csv", &["case", "energy", "seed", "total_energy", "iterations", "residual", "status"])?;
    for (c, k, s, r) in &run.solutions {
        let name = &cfg.cases[*c].name;
        match r {
            Ok(sol) => {
                for (el, ((x, g), region)) in sol.element_midpoints(length).iter().zip(&sol.gradients).zip(&sol.regions).enumerate() {
                    fields.row(&[name.clone(), label(*k).into(), s.to_string(), el.to_string(), num(*x), num(g.0), num(g.1), region.label().into()])?;
                }
                runs.row(&[name.clone(), label(*k).into(), s.to_string(), num(sol.energy), sol.iterations.to_string(), num(sol.residual), "converged".into()])?;
            }
            Err(e) => {
                let status = e.to_string().replace(',', ";");
                runs.row(&[name.clone(), label(*k).into(), s.to_string(), String::new(), String::new(), String::new(), status])?;
            }
        }
    }
    fields.finish()?;
    runs.finish()?;
    ctx.json("fem1d_summary.json", &run.summary)?;
    for c in &run.summary.checks {
        let gap = c.gap.map_or("-".to_owned(), |g| format!("{:.3}%", 100.0 * g));
        let verdict = if c.failures.is_empty() { "ok".to_owned() } else { c.failures.join("; ") };
        eprintln!("fem1d: case {} seed {} regime {:?} gap {gap}: {verdict}", c.case, c.seed, c.regime.map(|r| r.label()));
    }
    Ok(if !run.summary.convergence_failures.is_empty() {
        Outcome::ConvergenceFailure
    } else {
        Outcome::from_checks(run.summary.pass)
    })
}
