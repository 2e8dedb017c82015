//! Plane-strain quasi-static solver for the plate with a hole.
//!
//! Bilinear quadrilaterals with 2x2 Gauss points; the 3D material law is
//! evaluated on strains with `eps_zz = eps_xz = eps_yz = 0`. Each load step
//! minimises the total energy by Newton's method with a line search on that
//! energy. The material is evaluated from the virgin state at every step, so
//! the load steps only provide initial guesses for each other.

mod skyline;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::Region;
use crate::material::{condensed_energy_3d, InternalState, MaterialParams};
use crate::model3d::{relaxed_energy_3d, relaxed_stress_3d, tangent_3d, Model3dError, RelaxedMaterial};
use crate::tensor::SymTensor;

use skyline::{reverse_cuthill_mckee, Envelope, Factor};

#[derive(Debug, Error)]
pub enum Fem2dError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid load program: {0}")]
    InvalidProgram(String),
    #[error("material evaluation failed in element {element}, Gauss point {point}: {source}")]
    Material {
        element: usize,
        point: usize,
        #[source]
        source: Model3dError,
    },
    #[error("Newton iteration did not converge at step {step} (load factor {load_factor}, residual {residual:e})")]
    NoConvergence { step: usize, load_factor: f64, residual: f64 },
    #[error("monitored element {0} is not an element of the unrefined mesh")]
    UnknownMonitor(usize),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

const GAUSS: f64 = 0.577_350_269_189_625_8;
const GAUSS_POINTS: [(f64, f64); 4] = [(-GAUSS, -GAUSS), (GAUSS, -GAUSS), (GAUSS, GAUSS), (-GAUSS, GAUSS)];

/// Nodes, counter-clockwise 4-node quadrilaterals and the two loaded edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneStrainMesh {
    pub nodes: Vec<[f64; 2]>,
    pub quads: Vec<[usize; 4]>,
    /// Fully clamped nodes.
    pub left: Vec<usize>,
    /// Nodes with prescribed `u_x`.
    pub right: Vec<usize>,
    /// Element of the unrefined mesh containing each element; empty when
    /// every element is its own parent.
    #[serde(default)]
    pub parent: Vec<usize>,
}

/// Geometry of the built-in plate: a rectangle with a centred circular hole.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateGeometry {
    pub width: f64,
    pub height: f64,
    pub radius: f64,
    /// Elements per block side at refinement level 0.
    pub base_divisions: usize,
    /// Radial grading exponent; 1 is uniform, larger values cluster
    /// elements at the hole.
    pub grading: f64,
}

impl Default for PlateGeometry {
    fn default() -> Self {
        Self { width: 1.0, height: 1.0, radius: 0.2, base_divisions: 10, grading: 1.5 }
    }
}

fn shape(xi: f64, eta: f64) -> ([f64; 4], [[f64; 2]; 4]) {
    let n = [
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 + eta),
    ];
    let d = [
        [-0.25 * (1.0 - eta), -0.25 * (1.0 - xi)],
        [0.25 * (1.0 - eta), -0.25 * (1.0 + xi)],
        [0.25 * (1.0 + eta), 0.25 * (1.0 + xi)],
        [-0.25 * (1.0 + eta), 0.25 * (1.0 - xi)],
    ];
    (n, d)
}

/// Shape-function gradients in physical coordinates and the Jacobian
/// determinant.
fn gradients(x: &[[f64; 2]; 4], xi: f64, eta: f64) -> ([[f64; 2]; 4], f64) {
    let (_, d) = shape(xi, eta);
    let mut j = [[0.0; 2]; 2];
    for a in 0..4 {
        for r in 0..2 {
            for c in 0..2 {
                j[r][c] += x[a][r] * d[a][c];
            }
        }
    }
    // j[r][c] = d x_r / d xi_c
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let inv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
    let mut g = [[0.0; 2]; 4];
    for a in 0..4 {
        for r in 0..2 {
            g[a][r] = d[a][0] * inv[0][r] + d[a][1] * inv[1][r];
        }
    }
    (g, det)
}

fn plane_strain(g: &[[f64; 2]; 4], ue: &[f64; 8]) -> SymTensor {
    let (mut exx, mut eyy, mut gxy) = (0.0, 0.0, 0.0);
    for a in 0..4 {
        exx += g[a][0] * ue[2 * a];
        eyy += g[a][1] * ue[2 * a + 1];
        gxy += g[a][1] * ue[2 * a] + g[a][0] * ue[2 * a + 1];
    }
    SymTensor::new(exx, eyy, 0.0, 0.5 * gxy, 0.0, 0.0)
}

impl PlaneStrainMesh {
    /// O-grid around the hole: four blocks, one per plate side, each with
    /// `base_divisions * 2^level` elements along the side and radially.
    /// Level 0 has 400 elements with the default geometry, level 1 has 1600.
    pub fn plate_with_hole(g: &PlateGeometry, level: u32) -> Result<Self, Fem2dError> {
        let (w, h, r) = (g.width, g.height, g.radius);
        if !(w > 0.0 && h > 0.0 && r > 0.0 && 2.0 * r < w.min(h)) {
            return Err(Fem2dError::InvalidMesh(format!("hole radius {r} does not fit a {w} x {h} plate")));
        }
        if g.base_divisions == 0 || !(g.grading >= 1.0) {
            return Err(Fem2dError::InvalidMesh("need base_divisions >= 1 and grading >= 1".into()));
        }
        let n = g.base_divisions << level;
        let m = 4 * n;
        let (cx, cy) = (0.5 * w, 0.5 * h);
        let mut nodes = Vec::with_capacity((n + 1) * m);
        for i in 0..=n {
            let t = (i as f64 / n as f64).powf(g.grading);
            for k in 0..m {
                let (block, s) = (k / n, (k % n) as f64 / n as f64);
                let theta = -std::f64::consts::FRAC_PI_4 + (block as f64 + s) * std::f64::consts::FRAC_PI_2;
                let inner = [cx + r * theta.cos(), cy + r * theta.sin()];
                let outer = match block {
                    0 => [w, h * s],
                    1 => [w * (1.0 - s), h],
                    2 => [0.0, h * (1.0 - s)],
                    _ => [w * s, 0.0],
                };
                nodes.push([inner[0] + t * (outer[0] - inner[0]), inner[1] + t * (outer[1] - inner[1])]);
            }
        }
        let id = |i: usize, k: usize| i * m + (k % m);
        let mut quads = Vec::with_capacity(n * m);
        let mut parent = Vec::with_capacity(n * m);
        for i in 0..n {
            for k in 0..m {
                quads.push([id(i, k), id(i + 1, k), id(i + 1, k + 1), id(i, k + 1)]);
                parent.push((i >> level) * (m >> level) + (k >> level));
            }
        }
        let left = (0..m).map(|k| id(n, k)).filter(|&v| nodes[v][0] == 0.0).collect();
        let right = (0..m).map(|k| id(n, k)).filter(|&v| nodes[v][0] == w).collect();
        let mesh = Self { nodes, quads, left, right, parent };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.nodes.len()
    }

    fn coords(&self, e: usize) -> [[f64; 2]; 4] {
        self.quads[e].map(|v| self.nodes[v])
    }

    /// Positive Jacobians at all Gauss points, valid node references and
    /// disjoint, non-empty boundary sets.
    pub fn validate(&self) -> Result<(), Fem2dError> {
        let nn = self.nodes.len();
        if self.quads.is_empty() {
            return Err(Fem2dError::InvalidMesh("no elements".into()));
        }
        for (e, q) in self.quads.iter().enumerate() {
            if q.iter().any(|&v| v >= nn) {
                return Err(Fem2dError::InvalidMesh(format!("element {e} references a missing node")));
            }
            let x = self.coords(e);
            for (k, &(xi, eta)) in GAUSS_POINTS.iter().enumerate() {
                let (_, det) = gradients(&x, xi, eta);
                if !(det > 0.0) {
                    return Err(Fem2dError::InvalidMesh(format!(
                        "element {e} has Jacobian {det:e} at Gauss point {k}"
                    )));
                }
            }
        }
        if self.left.is_empty() || self.right.is_empty() {
            return Err(Fem2dError::InvalidMesh("both boundary sets must be non-empty".into()));
        }
        if self.left.iter().chain(&self.right).any(|&v| v >= nn) {
            return Err(Fem2dError::InvalidMesh("boundary set references a missing node".into()));
        }
        if self.left.iter().any(|v| self.right.contains(v)) {
            return Err(Fem2dError::InvalidMesh("boundary sets overlap".into()));
        }
        if !self.parent.is_empty() && self.parent.len() != self.quads.len() {
            return Err(Fem2dError::InvalidMesh("need one parent per element".into()));
        }
        Ok(())
    }

    pub fn parent_of(&self, e: usize) -> usize {
        self.parent.get(e).copied().unwrap_or(e)
    }
}

/// Energy density used by the solver.
#[derive(Debug, Clone)]
pub enum EnergyModel {
    /// Relaxed energy of the triangle-radius material.
    Relaxed(RelaxedMaterial),
    /// Condensed (non-convex) energy of the same material.
    Condensed(RelaxedMaterial),
}

impl EnergyModel {
    pub fn material(&self) -> &RelaxedMaterial {
        match self {
            EnergyModel::Relaxed(rm) | EnergyModel::Condensed(rm) => rm,
        }
    }

    fn energy(&self, eps: &SymTensor) -> Result<f64, Model3dError> {
        let s = InternalState::default();
        match self {
            EnergyModel::Relaxed(rm) => Ok(relaxed_energy_3d(rm, eps, &s)?.0),
            EnergyModel::Condensed(rm) => Ok(condensed_energy_3d(&rm.material_params(), eps, &s)),
        }
    }

    fn stress(&self, eps: &SymTensor) -> Result<SymTensor, Model3dError> {
        let s = InternalState::default();
        match self {
            EnergyModel::Relaxed(rm) => relaxed_stress_3d(rm, eps, &s),
            EnergyModel::Condensed(rm) => condensed_stress(&rm.material_params(), eps),
        }
    }

    fn tangent(&self, eps: &SymTensor) -> Result<[[f64; 6]; 6], Model3dError> {
        match self {
            EnergyModel::Relaxed(rm) => Ok(tangent_3d(rm, eps, &InternalState::default(), None)?.matrix),
            EnergyModel::Condensed(_) => {
                let h = crate::model3d::default_step(eps);
                let mut c = [[0.0; 6]; 6];
                for j in 0..6 {
                    let mut v = [0.0; 6];
                    v[j] = h;
                    let de = SymTensor::from_voigt_strain(v);
                    let plus = self.stress(&(*eps + de))?;
                    let minus = self.stress(&(*eps - de))?;
                    for i in 0..6 {
                        c[i][j] = (plus.0[i] - minus.0[i]) / (2.0 * h);
                    }
                }
                for i in 0..6 {
                    for j in 0..i {
                        let s = 0.5 * (c[i][j] + c[j][i]);
                        c[i][j] = s;
                        c[j][i] = s;
                    }
                }
                Ok(c)
            }
        }
    }

    fn region(&self, eps: &SymTensor) -> Region {
        self.material().classify(eps, &InternalState::default())
    }
}

/// Strain derivative of the condensed energy from the virgin state.
fn condensed_stress(m: &MaterialParams, eps: &SymTensor) -> Result<SymTensor, Model3dError> {
    let tr = eps.trace();
    let d = eps.dev();
    let a = d.norm();
    let rho = m.rho.value(tr);
    let excess = 2.0 * m.mu * a - rho;
    let mut sigma = SymTensor::IDENTITY.scale(m.k * tr) + d.scale(2.0 * m.mu);
    if excess > 0.0 {
        let slope = m.rho.derivative(tr).ok_or(Model3dError::NondifferentiablePoint { tr })?;
        let c = excess / (2.0 * m.mu + m.beta);
        sigma = sigma - d.scale(2.0 * m.mu * c / a) + SymTensor::IDENTITY.scale(c * slope);
    }
    Ok(sigma)
}

/// Offset from a trace bound at which one-sided stresses are evaluated.
const KINK_OFFSET: f64 = 1e-13;

/// Largest number of Gauss points in the kink model of one Newton step.
const MAX_PINS: usize = 400;

/// Treatment of a Gauss point with respect to the trace bounds, where the
/// energy has a convex kink in `tr eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum GaussFlag {
    Free,
    /// Trace held at the bound; the pressure is a multiplier in the
    /// subdifferential.
    Pinned(f64),
    /// Just released from a bound towards the given side.
    Leaving { bound: f64, up: bool },
}

fn with_trace(eps: &SymTensor, tr: f64) -> SymTensor {
    *eps + SymTensor::IDENTITY.scale((tr - eps.trace()) / 3.0)
}

impl EnergyModel {
    fn kinks(&self) -> [f64; 2] {
        let (lo, hi) = self.material().trace_bounds();
        [lo, hi]
    }

    /// Strain at which the one-sided stress of a Gauss point is evaluated:
    /// pinned points use the side below the bound, points within `offset`
    /// of a bound are moved to their side.
    fn side_strain(&self, eps: &SymTensor, flag: GaussFlag, offset: f64) -> SymTensor {
        let tr = eps.trace();
        match flag {
            GaussFlag::Pinned(b) => with_trace(eps, b - offset),
            GaussFlag::Leaving { bound, up } if (tr - bound).abs() < offset => {
                with_trace(eps, if up { bound + offset } else { bound - offset })
            }
            _ => match self.kinks().into_iter().find(|b| (tr - b).abs() < offset) {
                Some(b) => with_trace(eps, if tr > b { b + offset } else { b - offset }),
                None => *eps,
            },
        }
    }

    /// Stress of a Gauss point; pinned points report the stress continued
    /// from below the bound.
    fn stress_at(&self, eps: &SymTensor, flag: GaussFlag) -> Result<SymTensor, Model3dError> {
        match flag {
            GaussFlag::Pinned(b) if eps.trace() >= b + KINK_OFFSET => {
                Ok(self.stress(eps)? - SymTensor::IDENTITY.scale(self.kink_jump(eps, b)?))
            }
            GaussFlag::Pinned(b) if eps.trace() <= b - KINK_OFFSET => self.stress(eps),
            _ => self.stress(&self.side_strain(eps, flag, KINK_OFFSET)),
        }
    }

    /// Pressure jump across the trace bound `b` at the deviator of `eps`.
    fn kink_jump(&self, eps: &SymTensor, b: f64) -> Result<f64, Model3dError> {
        let below = self.stress(&with_trace(eps, b - KINK_OFFSET))?;
        let above = self.stress(&with_trace(eps, b + KINK_OFFSET))?;
        Ok((0..3).map(|i| above.0[i] - below.0[i]).sum::<f64>() / 3.0)
    }

    fn tangent_at(&self, eps: &SymTensor, flag: GaussFlag) -> Result<[[f64; 6]; 6], Model3dError> {
        let h = crate::model3d::default_step(eps);
        self.tangent(&self.side_strain(eps, flag, 3.0 * h))
    }
}

/// Per-element flags of the Gauss points on a trace bound, kept between
/// Newton iterations and load steps.
#[derive(Debug, Clone, PartialEq)]
pub struct KinkSet {
    flags: Vec<[GaussFlag; 4]>,
}

impl KinkSet {
    pub fn new(mesh: &PlaneStrainMesh) -> Self {
        Self { flags: vec![[GaussFlag::Free; 4]; mesh.quads.len()] }
    }

    /// Number of Gauss points whose trace is held at a bound.
    pub fn pinned(&self) -> usize {
        self.flags.iter().flatten().filter(|f| matches!(f, GaussFlag::Pinned(_))).count()
    }
}

/// Internal force, energy and (optionally) tangent of one element.
struct ElementState {
    force: [f64; 8],
    stiffness: Option<[[f64; 8]; 8]>,
    energy: f64,
}

fn element_dofs(q: &[usize; 4]) -> [usize; 8] {
    std::array::from_fn(|k| 2 * q[k / 2] + k % 2)
}

fn b_matrix(g: &[[f64; 2]; 4]) -> [[f64; 8]; 3] {
    // rows: exx, eyy, gxy
    let mut b = [[0.0; 8]; 3];
    for a in 0..4 {
        b[0][2 * a] = g[a][0];
        b[1][2 * a + 1] = g[a][1];
        b[2][2 * a] = g[a][1];
        b[2][2 * a + 1] = g[a][0];
    }
    b
}

fn element_state(
    mesh: &PlaneStrainMesh,
    model: &EnergyModel,
    u: &[f64],
    e: usize,
    flags: &[GaussFlag; 4],
    with_tangent: bool,
) -> Result<ElementState, Fem2dError> {
    let x = mesh.coords(e);
    let dofs = element_dofs(&mesh.quads[e]);
    let ue: [f64; 8] = dofs.map(|d| u[d]);
    let mut force = [0.0; 8];
    let mut stiffness = with_tangent.then(|| [[0.0; 8]; 8]);
    let mut energy = 0.0;
    for (k, &(xi, eta)) in GAUSS_POINTS.iter().enumerate() {
        let wrap = |source| Fem2dError::Material { element: e, point: k, source };
        let (g, det) = gradients(&x, xi, eta);
        let eps = plane_strain(&g, &ue);
        energy += det * model.energy(&eps).map_err(wrap)?;
        let s = model.stress_at(&eps, flags[k]).map_err(wrap)?;
        let b = b_matrix(&g);
        let sv = [s.0[0], s.0[1], s.0[3]];
        for i in 0..8 {
            force[i] += det * (b[0][i] * sv[0] + b[1][i] * sv[1] + b[2][i] * sv[2]);
        }
        if let Some(kmat) = stiffness.as_mut() {
            let c6 = model.tangent_at(&eps, flags[k]).map_err(wrap)?;
            let idx = [0, 1, 3];
            let c: [[f64; 3]; 3] = std::array::from_fn(|r| std::array::from_fn(|q| c6[idx[r]][idx[q]]));
            let mut cb = [[0.0; 8]; 3];
            for r in 0..3 {
                for i in 0..8 {
                    cb[r][i] = c[r][0] * b[0][i] + c[r][1] * b[1][i] + c[r][2] * b[2][i];
                }
            }
            for i in 0..8 {
                for j in 0..8 {
                    kmat[i][j] += det * (b[0][i] * cb[0][j] + b[1][i] * cb[1][j] + b[2][i] * cb[2][j]);
                }
            }
        }
    }
    Ok(ElementState { force, stiffness, energy })
}

/// Internal force vector over all dofs and total energy.
pub fn internal_force(mesh: &PlaneStrainMesh, model: &EnergyModel, u: &[f64]) -> Result<(Vec<f64>, f64), Fem2dError> {
    let free = [GaussFlag::Free; 4];
    let states = (0..mesh.quads.len())
        .into_par_iter()
        .map(|e| element_state(mesh, model, u, e, &free, false))
        .collect::<Result<Vec<_>, _>>()?;
    let mut f = vec![0.0; mesh.n_dofs()];
    let mut w = 0.0;
    for (e, s) in states.iter().enumerate() {
        for (k, d) in element_dofs(&mesh.quads[e]).into_iter().enumerate() {
            f[d] += s.force[k];
        }
        w += s.energy;
    }
    Ok((f, w))
}

/// Total energy of a displacement field.
pub fn total_energy(mesh: &PlaneStrainMesh, model: &EnergyModel, u: &[f64]) -> Result<f64, Fem2dError> {
    let parts = (0..mesh.quads.len())
        .into_par_iter()
        .map(|e| {
            let x = mesh.coords(e);
            let ue = element_dofs(&mesh.quads[e]).map(|d| u[d]);
            let mut w = 0.0;
            for (k, &(xi, eta)) in GAUSS_POINTS.iter().enumerate() {
                let (g, det) = gradients(&x, xi, eta);
                let eps = plane_strain(&g, &ue);
                w += det
                    * model.energy(&eps).map_err(|source| Fem2dError::Material { element: e, point: k, source })?;
            }
            Ok(w)
        })
        .collect::<Result<Vec<f64>, Fem2dError>>()?;
    Ok(parts.iter().sum())
}

/// Equation numbering of the unconstrained dofs with a bandwidth-reducing
/// order and the envelope of the reduced stiffness matrix.
#[derive(Debug, Clone)]
pub struct DofMap {
    /// Equation of each dof, `None` if prescribed.
    eq: Vec<Option<usize>>,
    first: Vec<usize>,
    n_eq: usize,
}

impl DofMap {
    pub fn new(mesh: &PlaneStrainMesh) -> Self {
        let nn = mesh.nodes.len();
        let mut fixed = vec![[false; 2]; nn];
        for &v in &mesh.left {
            fixed[v] = [true, true];
        }
        for &v in &mesh.right {
            fixed[v][0] = true;
        }
        let mut adj = vec![Vec::new(); nn];
        for q in &mesh.quads {
            for &a in q {
                for &b in q {
                    if a != b && !adj[a].contains(&b) {
                        adj[a].push(b);
                    }
                }
            }
        }
        let order = reverse_cuthill_mckee(&adj);
        let mut eq = vec![None; 2 * nn];
        let mut n_eq = 0;
        for &v in &order {
            for c in 0..2 {
                if !fixed[v][c] {
                    eq[2 * v + c] = Some(n_eq);
                    n_eq += 1;
                }
            }
        }
        let mut first: Vec<usize> = (0..n_eq).collect();
        for q in &mesh.quads {
            let eqs: Vec<usize> = element_dofs(q).iter().filter_map(|&d| eq[d]).collect();
            let lo = eqs.iter().copied().min().unwrap_or(0);
            for &i in &eqs {
                first[i] = first[i].min(lo);
            }
        }
        Self { eq, first, n_eq }
    }

    pub fn n_equations(&self) -> usize {
        self.n_eq
    }

    /// Number of stored entries of the envelope.
    pub fn profile(&self) -> usize {
        self.first.iter().enumerate().map(|(i, &f)| i - f + 1).sum()
    }

    fn scatter(&self, reduced: &[f64], n_dofs: usize) -> Vec<f64> {
        let mut full = vec![0.0; n_dofs];
        for (d, e) in self.eq.iter().enumerate() {
            if let Some(i) = e {
                full[d] = reduced[*i];
            }
        }
        full
    }

    fn gather(&self, full: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.n_eq];
        for (d, e) in self.eq.iter().enumerate() {
            if let Some(i) = e {
                r[*i] = full[d];
            }
        }
        r
    }
}

/// Reduced system at a displacement state.
struct Linearisation {
    residual: Vec<f64>,
    full_force: Vec<f64>,
    matrix: Envelope,
    energy: f64,
}

fn linearise(
    mesh: &PlaneStrainMesh,
    model: &EnergyModel,
    map: &DofMap,
    u: &[f64],
    kinks: &KinkSet,
) -> Result<Linearisation, Fem2dError> {
    let states = (0..mesh.quads.len())
        .into_par_iter()
        .map(|e| element_state(mesh, model, u, e, &kinks.flags[e], true))
        .collect::<Result<Vec<_>, _>>()?;
    let mut f = vec![0.0; mesh.n_dofs()];
    let mut matrix = Envelope::new(map.first.clone());
    let mut energy = 0.0;
    for (e, s) in states.iter().enumerate() {
        let dofs = element_dofs(&mesh.quads[e]);
        let k = s.stiffness.as_ref().unwrap();
        for a in 0..8 {
            f[dofs[a]] += s.force[a];
            let Some(i) = map.eq[dofs[a]] else { continue };
            for b in 0..8 {
                let Some(j) = map.eq[dofs[b]] else { continue };
                if j <= i {
                    matrix.add(i, j, k[a][b]);
                }
            }
        }
        energy += s.energy;
    }
    Ok(Linearisation { residual: map.gather(&f), full_force: f, matrix, energy })
}

/// Public view of the assembled system, for checks and small problems.
#[derive(Debug, Clone)]
pub struct Assembled {
    /// Internal force restricted to the unconstrained dofs.
    pub residual: Vec<f64>,
    /// Internal force on every dof (reactions on the constrained ones).
    pub internal_force: Vec<f64>,
    /// Dense copy of the reduced tangent.
    pub tangent: Vec<Vec<f64>>,
    pub energy: f64,
    /// Equation index of each dof.
    pub equations: Vec<Option<usize>>,
}

/// Residual and tangent at `u`, the tangent returned densely.
pub fn assemble(mesh: &PlaneStrainMesh, model: &EnergyModel, u: &[f64]) -> Result<Assembled, Fem2dError> {
    let map = DofMap::new(mesh);
    let lin = linearise(mesh, model, &map, u, &KinkSet::new(mesh))?;
    let n = map.n_eq;
    let tangent = (0..n).map(|i| (0..n).map(|j| lin.matrix.get(i, j)).collect()).collect();
    Ok(Assembled {
        residual: lin.residual,
        internal_force: lin.full_force,
        tangent,
        energy: lin.energy,
        equations: map.eq.clone(),
    })
}

/// Prescribed part of the displacement: zero on the left edge, `ux` in `x`
/// on the right edge.
pub fn apply_boundary(mesh: &PlaneStrainMesh, u: &mut [f64], ux: f64) {
    for &v in &mesh.left {
        u[2 * v] = 0.0;
        u[2 * v + 1] = 0.0;
    }
    for &v in &mesh.right {
        u[2 * v] = ux;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Residual tolerance relative to `1 + |f_int|`.
    pub tol: f64,
    pub max_iterations: usize,
    /// Load-step halvings allowed before giving up.
    pub max_halvings: u32,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iterations: 60, max_halvings: 3 }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual: f64,
    pub energy: f64,
    /// Energies of the accepted iterates, starting with the initial guess.
    pub energies: Vec<f64>,
    /// Internal force including the pressure multipliers of pinned points.
    pub internal_force: Vec<f64>,
    /// Gauss points held at a trace bound.
    pub pinned: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Constraint row of a pinned Gauss point.
struct Pin {
    element: usize,
    point: usize,
    bound: f64,
    dofs: [usize; 8],
    /// Derivative of `det J * tr eps` with respect to the element dofs.
    row: [f64; 8],
    det: f64,
    value: f64,
    /// Pressure jump across the kink; admissible multipliers are `[0, jump]`.
    jump: f64,
    /// Stress magnitude for the multiplier tolerance.
    scale: f64,
}

impl Pin {
    fn dot_free(&self, map: &DofMap, v: &[f64]) -> f64 {
        (0..8).filter_map(|a| map.eq[self.dofs[a]].map(|i| self.row[a] * v[i])).sum()
    }

    fn dense(&self, map: &DofMap) -> Vec<f64> {
        let mut v = vec![0.0; map.n_eq];
        for a in 0..8 {
            if let Some(i) = map.eq[self.dofs[a]] {
                v[i] += self.row[a];
            }
        }
        v
    }
}

fn trace_row(g: &[[f64; 2]; 4], det: f64) -> [f64; 8] {
    std::array::from_fn(|k| det * g[k / 2][k % 2])
}

fn make_pin(
    mesh: &PlaneStrainMesh,
    model: &EnergyModel,
    u: &[f64],
    e: usize,
    k: usize,
    bound: f64,
) -> Result<Pin, Fem2dError> {
    let wrap = |source| Fem2dError::Material { element: e, point: k, source };
    let x = mesh.coords(e);
    let dofs = element_dofs(&mesh.quads[e]);
    let ue = dofs.map(|d| u[d]);
    let (xi, eta) = GAUSS_POINTS[k];
    let (g, det) = gradients(&x, xi, eta);
    let eps = plane_strain(&g, &ue);
    let below = model.stress(&with_trace(&eps, bound - KINK_OFFSET)).map_err(wrap)?;
    let jump = model.kink_jump(&eps, bound).map_err(wrap)?;
    Ok(Pin {
        element: e,
        point: k,
        bound,
        dofs,
        row: trace_row(&g, det),
        det,
        value: eps.trace() - bound,
        jump,
        scale: below.norm(),
    })
}

fn collect_pins(mesh: &PlaneStrainMesh, model: &EnergyModel, u: &[f64], kinks: &KinkSet) -> Result<Vec<Pin>, Fem2dError> {
    let mut pins = Vec::new();
    for (e, flags) in kinks.flags.iter().enumerate() {
        for (k, flag) in flags.iter().enumerate() {
            if let GaussFlag::Pinned(bound) = *flag {
                pins.push(make_pin(mesh, model, u, e, k, bound)?);
            }
        }
    }
    Ok(pins)
}

/// Admissible multipliers minimising the norm of the residual.
fn best_multipliers(map: &DofMap, residual: &[f64], pins: &[Pin], value_tol: f64) -> Vec<f64> {
    let range = |p: &Pin| {
        let j = p.jump.max(0.0);
        if p.value > value_tol {
            (j, j)
        } else if p.value < -value_tol {
            (0.0, 0.0)
        } else {
            (0.0, j)
        }
    };
    let mut r = residual.to_vec();
    let mut mu = vec![0.0; pins.len()];
    for (p, pin) in pins.iter().enumerate() {
        let (lo, _) = range(pin);
        if lo != 0.0 {
            for a in 0..8 {
                if let Some(i) = map.eq[pin.dofs[a]] {
                    r[i] += lo * pin.row[a];
                }
            }
            mu[p] = lo;
        }
    }
    let dense: Vec<Vec<f64>> = pins.iter().map(|p| p.dense(map)).collect();
    let m = pins.len();
    let gram: Vec<Vec<f64>> = (0..m).map(|p| (0..m).map(|q| pins[q].dot_free(map, &dense[p])).collect()).collect();
    // gradient of |r + G mu|^2 / 2 with respect to mu
    let mut grad: Vec<f64> = pins.iter().map(|p| p.dot_free(map, &r)).collect();
    for _ in 0..20_000 {
        let mut change: f64 = 0.0;
        for p in 0..m {
            if gram[p][p] <= 0.0 {
                continue;
            }
            let (lo, hi) = range(&pins[p]);
            let next = (mu[p] - grad[p] / gram[p][p]).clamp(lo, hi);
            let delta = next - mu[p];
            if delta != 0.0 {
                for q in 0..m {
                    grad[q] += delta * gram[q][p];
                }
                mu[p] = next;
            }
            change = change.max(delta.abs() / (pins[p].jump.abs() + pins[p].scale + f64::MIN_POSITIVE));
        }
        if change < 1e-16 {
            break;
        }
    }
    mu
}

/// Minimiser of the Newton model with the kinks of the pinned points,
/// `R.d + d.K.d/2 + sum jump (c + G.d)_+`, through its dual: a box
/// constrained quadratic program in the pressure multipliers. Returns the
/// direction, the trace change `c + G.d` of every pin and the directional
/// derivative of the energy.
fn kink_direction(
    factor: &Factor,
    map: &DofMap,
    residual: &[f64],
    pins: &[Pin],
) -> (Vec<f64>, Vec<f64>, f64) {
    let neg_r: Vec<f64> = residual.iter().map(|x| -x).collect();
    let y = factor.solve(&neg_r);
    let z: Vec<Vec<f64>> = pins.iter().map(|p| factor.solve(&p.dense(map))).collect();
    let m = pins.len();
    let mut s = vec![vec![0.0; m]; m];
    let mut rhs = vec![0.0; m];
    for p in 0..m {
        for q in 0..m {
            s[p][q] = pins[p].dot_free(map, &z[q]);
        }
        rhs[p] = pins[p].dot_free(map, &y) + pins[p].det * pins[p].value;
    }
    // projected Gauss-Seidel on the dual
    let mut lambda = vec![0.0; m];
    for _ in 0..10_000 {
        let mut change: f64 = 0.0;
        for p in 0..m {
            if s[p][p] <= 0.0 {
                continue;
            }
            let grad: f64 = (0..m).map(|q| s[p][q] * lambda[q]).sum::<f64>() - rhs[p];
            let next = (lambda[p] - grad / s[p][p]).clamp(0.0, pins[p].jump.max(0.0));
            change = change.max((next - lambda[p]).abs() / (pins[p].jump.abs() + pins[p].scale + f64::MIN_POSITIVE));
            lambda[p] = next;
        }
        if change < 1e-14 {
            break;
        }
    }
    let mut d = y;
    for p in 0..m {
        for (di, zi) in d.iter_mut().zip(&z[p]) {
            *di -= lambda[p] * zi;
        }
    }
    let mut slope = dot(residual, &d);
    let mut changes = Vec::with_capacity(m);
    for pin in pins {
        let change = pin.dot_free(map, &d) / pin.det;
        // secant of the kink term over the full step
        slope += pin.det * pin.jump.max(0.0) * ((pin.value + change).max(0.0) - pin.value.max(0.0));
        changes.push(pin.value + change);
    }
    (d, changes, slope)
}

/// Free Gauss points whose trace crosses a bound within the unit step
/// along `d`.
fn crossings(
    mesh: &PlaneStrainMesh,
    model: &EnergyModel,
    u: &[f64],
    d_full: &[f64],
    kinks: &KinkSet,
) -> Vec<(usize, usize, f64)> {
    let bounds = model.kinks();
    (0..mesh.quads.len())
        .into_par_iter()
        .flat_map_iter(|e| {
            let x = mesh.coords(e);
            let dofs = element_dofs(&mesh.quads[e]);
            let ue = dofs.map(|d| u[d]);
            let de = dofs.map(|d| d_full[d]);
            let flags = kinks.flags[e];
            let mut out = Vec::new();
            for (k, &(xi, eta)) in GAUSS_POINTS.iter().enumerate() {
                if matches!(flags[k], GaussFlag::Pinned(_)) {
                    continue;
                }
                let (g, _) = gradients(&x, xi, eta);
                let tr0 = plane_strain(&g, &ue).trace();
                let tr1 = tr0 + plane_strain(&g, &de).trace();
                for b in bounds {
                    if let GaussFlag::Leaving { bound, .. } = flags[k] {
                        if bound == b && (tr0 - b).abs() <= 10.0 * KINK_OFFSET {
                            continue;
                        }
                    }
                    if (tr0 - b) * (tr1 - b) < 0.0 {
                        out.push((e, k, b));
                    }
                }
            }
            out
        })
        .collect()
}

/// Minimises the energy over the unconstrained dofs starting from `u`
/// (whose prescribed entries must already hold the boundary values).
///
/// Directions come from the factorised tangent; if the tangent is not
/// positive definite or the direction is not a descent direction, a
/// diagonal shift is added until it is. Gauss points whose trace would
/// cross a kink of the energy during the step join a piecewise quadratic
/// model of it and stay there until clearly off the kink. Steps are
/// backtracked until the energy decreases (up to its round-off).
pub fn newton_solve(
    mesh: &PlaneStrainMesh,
    model: &EnergyModel,
    map: &DofMap,
    u: &mut [f64],
    kinks: &mut KinkSet,
    opts: &NewtonOptions,
) -> Result<NewtonReport, (NewtonReport, Fem2dError)> {
    let bounds = model.kinks();
    let value_tol = 1e-10 * (bounds[1] - bounds[0]).abs();
    let release_tol = 1e-6 * (bounds[1] - bounds[0]).abs();
    let failure = |report: NewtonReport, residual: f64| {
        let err = Fem2dError::NoConvergence { step: 0, load_factor: f64::NAN, residual };
        Err((report, err))
    };
    // pins only survive if the start satisfies them
    match collect_pins(mesh, model, u, kinks) {
        Ok(pins) => {
            for p in pins.iter().filter(|p| p.value.abs() > release_tol) {
                kinks.flags[p.element][p.point] = GaussFlag::Free;
            }
        }
        Err(e) => {
            let rep = NewtonReport {
                iterations: 0,
                residual: f64::INFINITY,
                energy: f64::NAN,
                energies: Vec::new(),
                internal_force: Vec::new(),
                pinned: 0,
            };
            return Err((rep, e));
        }
    }
    let mut energies = Vec::new();
    let mut last: Option<NewtonReport> = None;
    for it in 0..=opts.max_iterations {
        let state = linearise(mesh, model, map, u, kinks).and_then(|l| Ok((collect_pins(mesh, model, u, kinks)?, l)));
        let (pins, lin) = match state {
            Ok(s) => s,
            Err(e) => {
                let rep = last.unwrap_or(NewtonReport {
                    iterations: it,
                    residual: f64::INFINITY,
                    energy: f64::NAN,
                    energies: energies.clone(),
                    internal_force: Vec::new(),
                    pinned: 0,
                });
                return Err((rep, e));
            }
        };
        if energies.is_empty() {
            energies.push(lin.energy);
        }
        let mu = best_multipliers(map, &lin.residual, &pins, value_tol);
        let mut r_eff = lin.residual.clone();
        let mut f_eff = lin.full_force.clone();
        for (p, m) in pins.iter().zip(&mu) {
            for a in 0..8 {
                f_eff[p.dofs[a]] += m * p.row[a];
                if let Some(i) = map.eq[p.dofs[a]] {
                    r_eff[i] += m * p.row[a];
                }
            }
        }
        let r = norm(&r_eff);
        let report = NewtonReport {
            iterations: it,
            residual: r,
            energy: lin.energy,
            energies: energies.clone(),
            internal_force: f_eff.clone(),
            pinned: pins.len(),
        };
        if r <= opts.tol * (1.0 + norm(&f_eff)) {
            return Ok(report);
        }
        if it == opts.max_iterations {
            return failure(report, r);
        }
        last = Some(report);

        // Gauss points that would cross a bound during the step join the
        // kink model before the step is taken
        let diag = lin.matrix.max_abs_diagonal();
        let mut residual = lin.residual.clone();
        let mut pins = pins;
        let mut shift = 0.0;
        let mut direction = None;
        'shifts: for _ in 0..12 {
            let mut m = lin.matrix.clone();
            if shift > 0.0 {
                m.add_diagonal(shift);
            }
            if let Some((factor, 0)) = m.factor() {
                for _ in 0..20 {
                    let (d, changes, slope) = kink_direction(&factor, map, &residual, &pins);
                    let d_full = map.scatter(&d, u.len());
                    let new = crossings(mesh, model, u, &d_full, kinks);
                    if new.is_empty() || pins.len() + new.len() > MAX_PINS {
                        if slope < 0.0 {
                            direction = Some((d_full, changes, slope));
                            break 'shifts;
                        }
                        break;
                    }
                    for (e, k, b) in new {
                        let pin = match make_pin(mesh, model, u, e, k, b) {
                            Ok(p) => p,
                            Err(err) => return Err((last.unwrap(), err)),
                        };
                        if pin.value > 0.0 {
                            // the residual continues the stress from below
                            for a in 0..8 {
                                if let Some(i) = map.eq[pin.dofs[a]] {
                                    residual[i] -= pin.jump * pin.row[a];
                                }
                            }
                        }
                        kinks.flags[e][k] = GaussFlag::Pinned(b);
                        pins.push(pin);
                    }
                }
            }
            shift = if shift == 0.0 { 1e-8 * diag } else { shift * 10.0 };
        }
        let Some((d_full, changes, slope)) = direction else {
            return failure(last.unwrap(), r);
        };

        let noise = 1e-12 * lin.energy.abs().max(f64::MIN_POSITIVE);
        let mut t = 1.0;
        let mut trial = u.to_vec();
        let mut accepted = false;
        for _ in 0..40 {
            for dof in 0..u.len() {
                trial[dof] = u[dof] + t * d_full[dof];
            }
            if let Ok(w) = total_energy(mesh, model, &trial) {
                if w <= lin.energy + 1e-4 * t * slope + noise {
                    energies.push(w);
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return failure(last.unwrap(), r);
        }
        // the kink model covers both sides; pins are released once clearly off
        for (pin, &change) in pins.iter().zip(&changes) {
            let value = pin.value + t * (change - pin.value);
            if value.abs() > release_tol {
                kinks.flags[pin.element][pin.point] = GaussFlag::Leaving { bound: pin.bound, up: value > 0.0 };
            }
        }
        u.copy_from_slice(&trial);
    }
    unreachable!()
}

/// Load steps, final right-edge displacement and monitored points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProgram {
    pub n_steps: usize,
    /// Final `u_x` of the right edge (negative in compression).
    pub u_final: f64,
    /// Monitored elements, numbered in the unrefined mesh. Refined
    /// meshes report the average over the children of each.
    pub monitors: Vec<usize>,
}

impl LoadProgram {
    pub fn validate(&self) -> Result<(), Fem2dError> {
        if self.n_steps == 0 {
            return Err(Fem2dError::InvalidProgram("need at least one load step".into()));
        }
        if !self.u_final.is_finite() {
            return Err(Fem2dError::InvalidProgram("final displacement must be finite".into()));
        }
        Ok(())
    }
}

/// Default monitored elements of the built-in plate: the two elements
/// touching the hole just before its top, counter-clockwise from the
/// positive `x` axis.
pub fn default_monitors(g: &PlateGeometry) -> Vec<usize> {
    // sector k spans the angles -45 + 90 [k, k + 1] / n degrees
    let top = (3 * g.base_divisions).div_ceil(2);
    vec![top.saturating_sub(1), top.saturating_sub(2)]
}

/// Area averages over a monitored element: stress, `u_x` and the region
/// of the mean strain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorSample {
    /// `[xx, yy, xy, zz]`.
    pub stress: [f64; 4],
    pub u_x: f64,
    pub region: Region,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub load_factor: f64,
    pub u_ext: f64,
    pub monitors: Vec<MonitorSample>,
    /// Gauss points per region, in the order `Tilde, Y1, Y2, Y3, Y4`.
    pub region_counts: [usize; 5],
    pub newton_iterations: usize,
    pub residual: f64,
    /// `x` reactions summed over the left and the right edge.
    pub reaction_left: f64,
    pub reaction_right: f64,
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct ProgramResult {
    pub steps: Vec<StepRecord>,
    pub displacement: Vec<f64>,
    /// Per element: Gauss-point average of `[xx, yy, xy, zz]`.
    pub element_stress: Vec<[f64; 4]>,
    /// Per element: region index of each Gauss point.
    pub gauss_regions: Vec<[u8; 4]>,
}

fn sample(
    mesh: &PlaneStrainMesh,
    model: &EnergyModel,
    u: &[f64],
    kinks: &KinkSet,
    children: &[usize],
) -> Result<MonitorSample, Fem2dError> {
    let mut area = 0.0;
    let mut stress = [0.0; 4];
    let mut strain = SymTensor::ZERO;
    let mut u_x = 0.0;
    for &e in children {
        let x = mesh.coords(e);
        let ue = element_dofs(&mesh.quads[e]).map(|d| u[d]);
        for (k, &(xi, eta)) in GAUSS_POINTS.iter().enumerate() {
            let (g, det) = gradients(&x, xi, eta);
            let eps = plane_strain(&g, &ue);
            let s = model.stress_at(&eps, kinks.flags[e][k]).map_err(|source| Fem2dError::Material { element: e, point: k, source })?;
            for (a, v) in stress.iter_mut().zip([s.0[0], s.0[1], s.0[3], s.0[2]]) {
                *a += det * v;
            }
            strain = strain + eps.scale(det);
            let (n, _) = shape(xi, eta);
            u_x += det * (0..4).map(|a| n[a] * ue[2 * a]).sum::<f64>();
            area += det;
        }
    }
    Ok(MonitorSample {
        stress: stress.map(|v| v / area),
        u_x: u_x / area,
        region: model.region(&strain.scale(1.0 / area)),
    })
}

fn gauss_fields(mesh: &PlaneStrainMesh, model: &EnergyModel, u: &[f64], kinks: &KinkSet) -> Result<(Vec<[f64; 4]>, Vec<[u8; 4]>), Fem2dError> {
    let per = (0..mesh.quads.len())
        .into_par_iter()
        .map(|e| {
            let x = mesh.coords(e);
            let ue = element_dofs(&mesh.quads[e]).map(|d| u[d]);
            let mut avg = [0.0; 4];
            let mut regions = [0u8; 4];
            for (k, &(xi, eta)) in GAUSS_POINTS.iter().enumerate() {
                let (g, _) = gradients(&x, xi, eta);
                let eps = plane_strain(&g, &ue);
                let s = model.stress_at(&eps, kinks.flags[e][k]).map_err(|source| Fem2dError::Material { element: e, point: k, source })?;
                for (a, v) in avg.iter_mut().zip([s.0[0], s.0[1], s.0[3], s.0[2]]) {
                    *a += 0.25 * v;
                }
                regions[k] = model.region(&eps).index();
            }
            Ok((avg, regions))
        })
        .collect::<Result<Vec<_>, Fem2dError>>()?;
    Ok(per.into_iter().unzip())
}

/// Runs the load program from the unloaded state.
///
/// Each step starts from the previous solution scaled to the new load,
/// which is exact while the response is linear. A step that fails is split
/// in halves, at most `max_halvings` times.
pub fn solve_program(
    mesh: &PlaneStrainMesh,
    model: &EnergyModel,
    lp: &LoadProgram,
    opts: &NewtonOptions,
) -> Result<ProgramResult, Fem2dError> {
    lp.validate()?;
    mesh.validate()?;
    let mut located: Vec<Vec<usize>> = vec![Vec::new(); lp.monitors.len()];
    for e in 0..mesh.quads.len() {
        for (i, &m) in lp.monitors.iter().enumerate() {
            if mesh.parent_of(e) == m {
                located[i].push(e);
            }
        }
    }
    if let Some(i) = located.iter().position(|c| c.is_empty()) {
        return Err(Fem2dError::UnknownMonitor(lp.monitors[i]));
    }
    let map = DofMap::new(mesh);
    let mut u = vec![0.0; mesh.n_dofs()];
    let mut kinks = KinkSet::new(mesh);
    let mut lambda = 0.0;
    let mut steps = Vec::with_capacity(lp.n_steps);
    let left_x: Vec<usize> = mesh.left.iter().map(|&v| 2 * v).collect();
    let right_x: Vec<usize> = mesh.right.iter().map(|&v| 2 * v).collect();
    for step in 1..=lp.n_steps {
        let target = step as f64 / lp.n_steps as f64;
        let mut sub = 1usize;
        let mut halvings = 0;
        let report = loop {
            let mut ok = None;
            let mut u_try = u.clone();
            let mut kinks_try = kinks.clone();
            let mut l = lambda;
            let dl = (target - lambda) / sub as f64;
            let mut failure = None;
            for _ in 0..sub {
                let next = l + dl;
                if l > 0.0 {
                    let s = next / l;
                    u_try.iter_mut().for_each(|x| *x *= s);
                }
                apply_boundary(mesh, &mut u_try, next * lp.u_final);
                match newton_solve(mesh, model, &map, &mut u_try, &mut kinks_try, opts) {
                    Ok(r) => {
                        ok = Some(r);
                        l = next;
                    }
                    Err((r, e)) => {
                        failure = Some((r, e));
                        break;
                    }
                }
            }
            match failure {
                None => {
                    u = u_try;
                    kinks = kinks_try;
                    lambda = target;
                    break ok.unwrap();
                }
                Some((r, e)) => {
                    if halvings >= opts.max_halvings {
                        return Err(match e {
                            Fem2dError::NoConvergence { .. } => {
                                Fem2dError::NoConvergence { step, load_factor: target, residual: r.residual }
                            }
                            other => other,
                        });
                    }
                    halvings += 1;
                    sub *= 2;
                }
            }
        };
        let monitors = located.iter().map(|c| sample(mesh, model, &u, &kinks, c)).collect::<Result<Vec<_>, _>>()?;
        let (_, regions) = gauss_fields(mesh, model, &u, &kinks)?;
        let mut region_counts = [0usize; 5];
        for r in regions.iter().flatten() {
            region_counts[*r as usize] += 1;
        }
        let f = &report.internal_force;
        steps.push(StepRecord {
            step,
            load_factor: lambda,
            u_ext: lambda * lp.u_final,
            monitors,
            region_counts,
            newton_iterations: report.iterations,
            residual: report.residual,
            reaction_left: left_x.iter().map(|&d| f[d]).sum(),
            reaction_right: right_x.iter().map(|&d| f[d]).sum(),
            energy: report.energy,
        });
    }
    let (element_stress, gauss_regions) = gauss_fields(mesh, model, &u, &kinks)?;
    Ok(ProgramResult { steps, displacement: u, element_stress, gauss_regions })
}

/// Largest difference between two monitored stress histories, relative to
/// the largest stress magnitude of the reference history at that point.
///
/// Both runs must share the load program. Returns the worst value over
/// points and the components `xx, yy, xy`.
pub fn mesh_independence(coarse: &[StepRecord], fine: &[StepRecord]) -> f64 {
    assert_eq!(coarse.len(), fine.len(), "load programs differ");
    let n_points = fine.first().map_or(0, |s| s.monitors.len());
    let mut worst: f64 = 0.0;
    for p in 0..n_points {
        let scale = fine
            .iter()
            .flat_map(|s| s.monitors[p].stress[..3].iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        for (c, f) in coarse.iter().zip(fine) {
            for k in 0..3 {
                worst = worst.max((c.monitors[p].stress[k] - f.monitors[p].stress[k]).abs() / scale);
            }
        }
    }
    worst
}

/// Legacy VTK unstructured grid with displacements, element stresses and
/// the region index of every Gauss point.
pub fn write_vtk<W: Write>(out: &mut W, mesh: &PlaneStrainMesh, result: &ProgramResult, title: &str) -> std::io::Result<()> {
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{}", title.replace('\n', " "))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.nodes.len())?;
    for p in &mesh.nodes {
        writeln!(out, "{:.17e} {:.17e} 0", p[0], p[1])?;
    }
    let ne = mesh.quads.len();
    writeln!(out, "CELLS {} {}", ne, 5 * ne)?;
    for q in &mesh.quads {
        writeln!(out, "4 {} {} {} {}", q[0], q[1], q[2], q[3])?;
    }
    writeln!(out, "CELL_TYPES {ne}")?;
    for _ in 0..ne {
        writeln!(out, "9")?;
    }
    writeln!(out, "POINT_DATA {}", mesh.nodes.len())?;
    writeln!(out, "VECTORS displacement double")?;
    for v in 0..mesh.nodes.len() {
        writeln!(out, "{:.17e} {:.17e} 0", result.displacement[2 * v], result.displacement[2 * v + 1])?;
    }
    writeln!(out, "CELL_DATA {ne}")?;
    for (k, name) in ["sigma_xx", "sigma_yy", "sigma_xy", "sigma_zz"].iter().enumerate() {
        writeln!(out, "SCALARS {name} double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for s in &result.element_stress {
            writeln!(out, "{:.17e}", s[k])?;
        }
    }
    for k in 0..4 {
        writeln!(out, "SCALARS region_gp{k} int 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for r in &result.gauss_regions {
            writeln!(out, "{}", r[k])?;
        }
    }
    Ok(())
}
