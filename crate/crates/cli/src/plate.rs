//! Plate with a hole under compression on two nested meshes.

use std::path::PathBuf;

use relaxplast::fem2d::{
    default_monitors, mesh_independence, solve_program, write_vtk, DofMap, EnergyModel, Fem2dError, LoadProgram,
    NewtonOptions, PlaneStrainMesh, PlateGeometry, ProgramResult,
};
use relaxplast::fem1d::EnergyKind;
use relaxplast::Region;
use serde::{Deserialize, Serialize};

use crate::config::{self, ConfigError, Dimension, MaterialData, Quantity};
use crate::output::{num, RunContext};
use crate::{prepare, Outcome, RunOptions};

/// Coarse and fine monitored stresses, relative to the largest fine stress.
pub const MESH_TOL: f64 = 0.05;
/// Each halving can double the number of sub-steps.
pub const MAX_HALVINGS: u32 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryData {
    pub width: Quantity,
    pub height: Quantity,
    pub radius: Quantity,
    pub base_divisions: usize,
    /// Radial grading exponent of the element sizes (1 = uniform).
    pub grading: Quantity,
}

impl Default for GeometryData {
    fn default() -> Self {
        let g = PlateGeometry::default();
        Self {
            width: Quantity::new(g.width, "m"),
            height: Quantity::new(g.height, "m"),
            radius: Quantity::new(g.radius, "m"),
            base_divisions: g.base_divisions,
            grading: Quantity::one(g.grading),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonData {
    pub tolerance: Quantity,
    pub max_iterations: usize,
    pub max_halvings: u32,
}

impl Default for NewtonData {
    fn default() -> Self {
        let o = NewtonOptions::default();
        Self { tolerance: Quantity::one(o.tol), max_iterations: o.max_iterations, max_halvings: o.max_halvings }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateConfig {
    pub material: MaterialData,
    pub geometry: GeometryData,
    /// JSON mesh used instead of the built-in plate; runs a single mesh.
    pub mesh: Option<PathBuf>,
    pub steps: usize,
    /// Final `u_x` of the right edge.
    pub u_final: Quantity,
    /// Monitored elements of the coarsest mesh; the default picks two
    /// elements at the top of the hole.
    pub monitors: Option<Vec<usize>>,
    /// The fine mesh is one level above.
    pub coarse_level: u32,
    pub newton: NewtonData,
    pub write_vtk: bool,
}

impl Default for PlateConfig {
    fn default() -> Self {
        Self {
            material: MaterialData::default(),
            geometry: GeometryData::default(),
            mesh: None,
            steps: 20,
            u_final: Quantity::new(-0.6, "mm"),
            monitors: None,
            coarse_level: 0,
            newton: NewtonData::default(),
            write_vtk: true,
        }
    }
}

impl PlateConfig {
    pub fn geometry(&self) -> Result<PlateGeometry, ConfigError> {
        let g = &self.geometry;
        Ok(PlateGeometry {
            width: g.width.positive(Dimension::Length, "width")?,
            height: g.height.positive(Dimension::Length, "height")?,
            radius: g.radius.positive(Dimension::Length, "radius")?,
            base_divisions: g.base_divisions,
            grading: g.grading.si(Dimension::One, "grading")?,
        })
    }

    pub fn program(&self, g: &PlateGeometry) -> Result<LoadProgram, ConfigError> {
        let lp = LoadProgram {
            n_steps: self.steps,
            u_final: self.u_final.si(Dimension::Length, "u_final")?,
            monitors: self.monitors.clone().unwrap_or_else(|| default_monitors(g)),
        };
        lp.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(lp)
    }

    pub fn newton(&self) -> Result<NewtonOptions, ConfigError> {
        if self.newton.max_halvings > MAX_HALVINGS {
            return Err(ConfigError(format!("newton.max_halvings must not exceed {MAX_HALVINGS}")));
        }
        Ok(NewtonOptions {
            tol: self.newton.tolerance.positive(Dimension::One, "newton.tolerance")?,
            max_iterations: self.newton.max_iterations,
            max_halvings: self.newton.max_halvings,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MonitorReport {
    pub element: usize,
    /// First step whose mean strain lies outside `Y1`.
    pub first_plastic_step: Option<usize>,
    pub final_region: String,
    /// Starts in `Y1` and reaches `Y2`.
    pub y1_to_y2: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelReport {
    pub level: Option<u32>,
    pub elements: usize,
    pub equations: usize,
    pub newton_iterations: usize,
    pub error: Option<String>,
    pub monitors: Vec<MonitorReport>,
    /// Largest number of Gauss points in `Y3` or `Y4` over the steps, where
    /// the condensed and the relaxed energy differ.
    pub max_y3_y4_points: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlateSummary {
    pub energy: EnergyKind,
    pub levels: Vec<LevelReport>,
    pub mesh_difference: Option<f64>,
    pub mesh_tolerance: f64,
    pub note: Option<String>,
    pub pass: bool,
}

pub struct LevelRun {
    pub level: Option<u32>,
    pub mesh: PlaneStrainMesh,
    pub result: Result<ProgramResult, Fem2dError>,
}

fn monitor_reports(lp: &LoadProgram, r: &ProgramResult) -> Vec<MonitorReport> {
    lp.monitors
        .iter()
        .enumerate()
        .map(|(i, &element)| {
            let first_plastic_step = r.steps.iter().find(|s| s.monitors[i].region != Region::Y1).map(|s| s.step);
            let starts = r.steps.first().is_some_and(|s| s.monitors[i].region == Region::Y1);
            let reaches = r.steps.iter().any(|s| matches!(s.monitors[i].region, Region::Y2(_)));
            MonitorReport {
                element,
                first_plastic_step,
                final_region: r.steps.last().map_or("-".into(), |s| s.monitors[i].region.label().to_owned()),
                y1_to_y2: starts && reaches,
            }
        })
        .collect()
}

/// Runs the configured meshes; no files are written.
pub fn compute(cfg: &PlateConfig, energy: EnergyKind) -> Result<(Vec<LevelRun>, PlateSummary, LoadProgram), ConfigError> {
    let rm = cfg.material.material()?;
    let model = match energy {
        EnergyKind::Relaxed => EnergyModel::Relaxed(rm),
        EnergyKind::Condensed => EnergyModel::Condensed(rm),
    };
    let g = cfg.geometry()?;
    let lp = cfg.program(&g)?;
    let opts = cfg.newton()?;
    let meshes: Vec<(Option<u32>, PlaneStrainMesh)> = match &cfg.mesh {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
            let mesh: PlaneStrainMesh = serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
            mesh.validate().map_err(|e| ConfigError(e.to_string()))?;
            vec![(None, mesh)]
        }
        None => {
            let levels = match energy {
                EnergyKind::Relaxed => vec![cfg.coarse_level, cfg.coarse_level + 1],
                EnergyKind::Condensed => vec![cfg.coarse_level],
            };
            levels
                .into_iter()
                .map(|l| Ok((Some(l), PlaneStrainMesh::plate_with_hole(&g, l).map_err(|e| ConfigError(e.to_string()))?)))
                .collect::<Result<_, ConfigError>>()?
        }
    };
    let runs: Vec<LevelRun> = meshes
        .into_iter()
        .map(|(level, mesh)| {
            let result = solve_program(&mesh, &model, &lp, &opts);
            LevelRun { level, mesh, result }
        })
        .collect();
    if let Some(Err(Fem2dError::UnknownMonitor(m))) = runs.first().map(|r| &r.result) {
        return Err(ConfigError(format!("monitored element {m} does not exist")));
    }

    let levels: Vec<LevelReport> = runs
        .iter()
        .map(|r| LevelReport {
            level: r.level,
            elements: r.mesh.quads.len(),
            equations: DofMap::new(&r.mesh).n_equations(),
            newton_iterations: r.result.as_ref().map_or(0, |x| x.steps.iter().map(|s| s.newton_iterations).sum()),
            error: r.result.as_ref().err().map(|e| e.to_string()),
            monitors: r.result.as_ref().map_or(Vec::new(), |x| monitor_reports(&lp, x)),
            max_y3_y4_points: r
                .result
                .as_ref()
                .map_or(0, |x| x.steps.iter().map(|s| s.region_counts[3] + s.region_counts[4]).max().unwrap_or(0)),
        })
        .collect();
    let mesh_difference = match runs.as_slice() {
        [coarse, fine] => match (&coarse.result, &fine.result) {
            (Ok(c), Ok(f)) => Some(mesh_independence(&c.steps, &f.steps)),
            _ => None,
        },
        _ => None,
    };
    let converged = levels.iter().all(|l| l.error.is_none());
    let transitions = levels.iter().all(|l| l.monitors.iter().all(|m| m.y1_to_y2));
    let pass = converged && transitions && mesh_difference.is_none_or(|d| d <= MESH_TOL);
    let note = match energy {
        EnergyKind::Relaxed => None,
        EnergyKind::Condensed if !converged => Some("condensed energy did not converge (expected: it is not convex)".into()),
        EnergyKind::Condensed if levels.iter().all(|l| l.max_y3_y4_points == 0) => Some(
            "no Gauss point left Y1 and Y2, where the condensed energy equals the relaxed one; no instability could develop"
                .into(),
        ),
        EnergyKind::Condensed => Some("condensed energy converged although strains reached Y3 or Y4".into()),
    };
    let summary = PlateSummary { energy, levels, mesh_difference, mesh_tolerance: MESH_TOL, note, pass };
    Ok((runs, summary, lp))
}

fn steps_csv(ctx: &RunContext, name: &str, lp: &LoadProgram, r: &ProgramResult) -> anyhow::Result<()> {
    let mut header: Vec<String> = ["step", "load_factor", "u_ext"].map(String::from).to_vec();
    for m in &lp.monitors {
        for q in ["sigma_xx", "sigma_yy", "sigma_xy", "sigma_zz", "u_x", "region"] {
            header.push(format!("e{m}_{q}"));
        }
    }
    header.extend(["newton_iterations", "residual", "reaction_left", "reaction_right", "energy"].map(String::from));
    header.extend(["n_tilde", "n_y1", "n_y2", "n_y3", "n_y4"].map(String::from));
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = ctx.csv(name, &refs)?;
    for s in &r.steps {
        let mut row = vec![s.step.to_string(), num(s.load_factor), num(s.u_ext)];
        for m in &s.monitors {
            row.extend(m.stress.iter().map(|v| num(*v)));
            row.push(num(m.u_x));
            row.push(m.region.label().to_owned());
        }
        row.extend([s.newton_iterations.to_string(), num(s.residual), num(s.reaction_left), num(s.reaction_right), num(s.energy)]);
        row.extend(s.region_counts.iter().map(|c| c.to_string()));
        csv.row(&row)?;
    }
    csv.finish()
}

pub fn run(opts: &RunOptions) -> anyhow::Result<Outcome> {
    let mut cfg: PlateConfig = config::load(opts.config.as_deref())?;
    if let Some(l) = opts.refine {
        cfg.coarse_level = l;
    }
    let energy = opts.energy.unwrap_or(EnergyKind::Relaxed);
    let (runs, summary, lp) = compute(&cfg, energy)?;
    prepare(opts)?;
    let ctx = RunContext { command: "plate", out: opts.out.clone(), seed: opts.seed, config_hash: config::config_hash(&cfg) };
    let tag = match energy {
        EnergyKind::Relaxed => "",
        EnergyKind::Condensed => "condensed_",
    };
    for r in &runs {
        let stem = match r.level {
            Some(l) => format!("plate_{tag}level{l}"),
            None => format!("plate_{tag}mesh"),
        };
        if let Ok(result) = &r.result {
            steps_csv(&ctx, &format!("{stem}_steps.csv"), &lp, result)?;
            if cfg.write_vtk {
                let path = ctx.path(&format!("{stem}.vtk"));
                let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
                write_vtk(&mut out, &r.mesh, result, &ctx.provenance())?;
            }
        }
    }
    ctx.json(&format!("plate_{tag}summary.json"), &summary)?;
    for l in &summary.levels {
        match &l.error {
            Some(e) => eprintln!("plate: {} elements: {e}", l.elements),
            None => eprintln!("plate: {} elements, {} Newton iterations", l.elements, l.newton_iterations),
        }
    }
    if let Some(d) = summary.mesh_difference {
        eprintln!("plate: coarse/fine monitored stress difference {:.2}% (limit {:.0}%)", 100.0 * d, 100.0 * MESH_TOL);
    }
    if let Some(note) = &summary.note {
        eprintln!("plate: {note}");
    }
    if summary.levels.iter().any(|l| l.error.is_some()) {
        return Ok(Outcome::ConvergenceFailure);
    }
    Ok(Outcome::from_checks(summary.pass))
}
