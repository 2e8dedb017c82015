//! Brute-force convexification of sampled bivariate functions.
//!
//! [`lower_convex_hull`] computes the convex envelope of the piecewise affine
//! interpolant of a grid sample, i.e. the lower hull of the lifted points,
//! restricted back to the grid. It shares no code with the closed-form
//! envelope and serves as its ground truth.

mod quickhull;

use std::io::{BufRead, Write};

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("grid needs at least 3 samples per axis, got {n1} x {n2}")]
    TooFewSamples { n1: usize, n2: usize },
    #[error("degenerate domain [{a1}, {b1}] x [{a2}, {b2}]")]
    DegenerateDomain { a1: f64, b1: f64, a2: f64, b2: f64 },
    #[error("non-finite sample {value} at ({y1}, {y2})")]
    NonFiniteSample { y1: f64, y2: f64, value: f64 },
    #[error("malformed grid csv: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Tensor-grid samples on `[a1, b1] x [a2, b2]`, endpoints included.
///
/// `values[i * n2 + j]` holds the sample at `(y1_i, y2_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub domain: [f64; 4],
    pub n1: usize,
    pub n2: usize,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(domain: [f64; 4], n1: usize, n2: usize, values: Vec<f64>) -> Result<Self, OracleError> {
        check_layout(domain, n1, n2)?;
        if values.len() != n1 * n2 {
            return Err(OracleError::Parse(format!("expected {} values, got {}", n1 * n2, values.len())));
        }
        let g = Self { domain, n1, n2, values };
        for (k, &v) in g.values.iter().enumerate() {
            if !v.is_finite() {
                let (y1, y2) = g.node(k / n2, k % n2);
                return Err(OracleError::NonFiniteSample { y1, y2, value: v });
            }
        }
        Ok(g)
    }

    pub fn h1(&self) -> f64 {
        (self.domain[1] - self.domain[0]) / (self.n1 - 1) as f64
    }

    pub fn h2(&self) -> f64 {
        (self.domain[3] - self.domain[2]) / (self.n2 - 1) as f64
    }

    pub fn y1(&self, i: usize) -> f64 {
        if i == self.n1 - 1 {
            self.domain[1]
        } else {
            self.domain[0] + i as f64 * self.h1()
        }
    }

    pub fn y2(&self, j: usize) -> f64 {
        if j == self.n2 - 1 {
            self.domain[3]
        } else {
            self.domain[2] + j as f64 * self.h2()
        }
    }

    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (self.y1(i), self.y2(j))
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n2 + j]
    }

    /// Bilinear interpolation; `None` outside the domain.
    pub fn interpolate(&self, y1: f64, y2: f64) -> Option<f64> {
        let [a1, b1, a2, b2] = self.domain;
        let tol1 = 1e-12 * (b1 - a1);
        let tol2 = 1e-12 * (b2 - a2);
        if y1 < a1 - tol1 || y1 > b1 + tol1 || y2 < a2 - tol2 || y2 > b2 + tol2 {
            return None;
        }
        let s = ((y1 - a1) / self.h1()).clamp(0.0, (self.n1 - 1) as f64);
        let t = ((y2 - a2) / self.h2()).clamp(0.0, (self.n2 - 1) as f64);
        let i = (s.floor() as usize).min(self.n1 - 2);
        let j = (t.floor() as usize).min(self.n2 - 2);
        let (u, w) = (s - i as f64, t - j as f64);
        Some(
            (1.0 - u) * (1.0 - w) * self.at(i, j)
                + u * (1.0 - w) * self.at(i + 1, j)
                + (1.0 - u) * w * self.at(i, j + 1)
                + u * w * self.at(i + 1, j + 1),
        )
    }

    /// Writes `y1,y2,value` rows, preceded by a header and optional comment
    /// lines (each prefixed with `# `).
    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> Result<(), OracleError> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "y1,y2,value")?;
        for i in 0..self.n1 {
            for j in 0..self.n2 {
                let (y1, y2) = self.node(i, j);
                writeln!(out, "{y1},{y2},{}", self.at(i, j))?;
            }
        }
        Ok(())
    }

    /// Reads a grid written by [`GridFunction::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, OracleError> {
        let mut rows: Vec<(f64, f64, f64)> = Vec::new();
        let mut header = false;
        for line in input.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header {
                if line.replace(' ', "") != "y1,y2,value" {
                    return Err(OracleError::Parse(format!("unexpected header '{line}'")));
                }
                header = true;
                continue;
            }
            let mut it = line.split(',').map(|s| s.trim().parse::<f64>());
            match (it.next(), it.next(), it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b)), Some(Ok(c)), None) => rows.push((a, b, c)),
                _ => return Err(OracleError::Parse(format!("bad row '{line}'"))),
            }
        }
        let n2 = rows.iter().take_while(|r| r.0 == rows[0].0).count();
        if n2 == 0 || rows.len() % n2 != 0 {
            return Err(OracleError::Parse("rows do not form a tensor grid".into()));
        }
        let n1 = rows.len() / n2;
        let domain = [rows[0].0, rows[rows.len() - 1].0, rows[0].1, rows[n2 - 1].1];
        let g = GridFunction::new(domain, n1, n2, rows.iter().map(|r| r.2).collect())?;
        for (k, r) in rows.iter().enumerate() {
            let (y1, y2) = g.node(k / n2, k % n2);
            let tol = 1e-9 * (1.0 + y1.abs().max(y2.abs()));
            if (y1 - r.0).abs() > tol || (y2 - r.1).abs() > tol {
                return Err(OracleError::Parse(format!("row {k} is off the uniform grid")));
            }
        }
        Ok(g)
    }
}

fn check_layout(domain: [f64; 4], n1: usize, n2: usize) -> Result<(), OracleError> {
    if n1 < 3 || n2 < 3 {
        return Err(OracleError::TooFewSamples { n1, n2 });
    }
    let [a1, b1, a2, b2] = domain;
    if !(a1.is_finite() && b1.is_finite() && a2.is_finite() && b2.is_finite() && a1 < b1 && a2 < b2) {
        return Err(OracleError::DegenerateDomain { a1, b1, a2, b2 });
    }
    Ok(())
}

/// Samples `f` on a uniform `n1 x n2` grid over `domain = [a1, b1, a2, b2]`.
pub fn sample<F>(f: F, domain: [f64; 4], n1: usize, n2: usize) -> Result<GridFunction, OracleError>
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    check_layout(domain, n1, n2)?;
    let shell = GridFunction { domain, n1, n2, values: Vec::new() };
    let values: Vec<f64> = (0..n1 * n2)
        .into_par_iter()
        .map(|k| {
            let (y1, y2) = shell.node(k / n2, k % n2);
            f(y1, y2)
        })
        .collect();
    GridFunction::new(domain, n1, n2, values)
}

/// Convex envelope of the piecewise affine interpolant of `g`, evaluated at the
/// grid nodes.
///
/// The result never exceeds the input.
pub fn lower_convex_hull(g: &GridFunction) -> GridFunction {
    let (n1, n2) = (g.n1, g.n2);
    let mut out = vec![f64::INFINITY; n1 * n2];
    match quickhull::lower_hull_triangles(n1, n2, &g.values) {
        None => {
            // all samples on one plane: fit it through three corners
            let c00 = g.at(0, 0);
            let d1 = (g.at(n1 - 1, 0) - c00) / (n1 - 1) as f64;
            let d2 = (g.at(0, n2 - 1) - c00) / (n2 - 1) as f64;
            for i in 0..n1 {
                for j in 0..n2 {
                    out[i * n2 + j] = c00 + d1 * i as f64 + d2 * j as f64;
                }
            }
        }
        Some(tris) => {
            for t in &tris {
                rasterize(n2, t, &g.values, &mut out);
            }
        }
    }
    for (o, &v) in out.iter_mut().zip(&g.values) {
        debug_assert!(o.is_finite(), "grid node not covered by the lower hull");
        *o = o.min(v);
    }
    GridFunction { domain: g.domain, n1, n2, values: out }
}

/// Evaluates the plane of triangle `t` at every grid node inside its projection.
fn rasterize(n2: usize, t: &[u32; 3], values: &[f64], out: &mut [f64]) {
    let p = |k: u32| ((k as usize / n2) as i64, (k as usize % n2) as i64);
    let (a, b, c) = (p(t[0]), p(t[1]), p(t[2]));
    let area = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    if area == 0 {
        return;
    }
    let (va, vb, vc) = (values[t[0] as usize], values[t[1] as usize], values[t[2] as usize]);
    let edge = |u: (i64, i64), v: (i64, i64), q: (i64, i64)| (v.0 - u.0) * (q.1 - u.1) - (v.1 - u.1) * (q.0 - u.0);
    let i_lo = a.0.min(b.0).min(c.0);
    let i_hi = a.0.max(b.0).max(c.0);
    let j_lo = a.1.min(b.1).min(c.1);
    let j_hi = a.1.max(b.1).max(c.1);
    for i in i_lo..=i_hi {
        for j in j_lo..=j_hi {
            let q = (i, j);
            let wa = edge(b, c, q) * area.signum();
            let wb = edge(c, a, q) * area.signum();
            let wc = edge(a, b, q) * area.signum();
            if wa < 0 || wb < 0 || wc < 0 {
                continue;
            }
            let den = area.abs() as f64;
            let v = if wa == den as i64 {
                va
            } else if wb == den as i64 {
                vb
            } else if wc == den as i64 {
                vc
            } else {
                (wa as f64 * va + wb as f64 * vb + wc as f64 * vc) / den
            };
            let slot = &mut out[i as usize * n2 + j as usize];
            if v < *slot {
                *slot = v;
            }
        }
    }
}

/// Grid nodes where the plane `<v, y> + c` touches the sample within
/// `1e-8 (1 + |f|)`.
pub fn contact_nodes(g: &GridFunction, v: [f64; 2], c: f64) -> Vec<(usize, usize)> {
    let mut hits = Vec::new();
    for i in 0..g.n1 {
        for j in 0..g.n2 {
            let (y1, y2) = g.node(i, j);
            let f = g.at(i, j);
            if (f - (v[0] * y1 + v[1] * y2 + c)).abs() <= contact_tol(f) {
                hits.push((i, j));
            }
        }
    }
    hits
}

fn contact_tol(f: f64) -> f64 {
    1e-8 * (1.0 + f.abs())
}

/// True iff the plane `<v, y> + c` lies below every sample (within
/// `1e-8 (1 + |f|)`) and touches the bilinear interpolant at each of the
/// listed points. An empty point list never passes.
pub fn supporting_plane_check(g: &GridFunction, points: &[(f64, f64)], v: [f64; 2], c: f64) -> bool {
    if points.is_empty() {
        return false;
    }
    for i in 0..g.n1 {
        for j in 0..g.n2 {
            let (y1, y2) = g.node(i, j);
            let f = g.at(i, j);
            if f - (v[0] * y1 + v[1] * y2 + c) < -contact_tol(f) {
                return false;
            }
        }
    }
    points.iter().all(|&(y1, y2)| match g.interpolate(y1, y2) {
        Some(f) => (f - (v[0] * y1 + v[1] * y2 + c)).abs() <= contact_tol(f),
        None => false,
    })
}

/// Hull error constant: `max |hull - envelope| <= C h` on the double-well
/// fixture, with `h` the larger grid step. Frozen from [`calibrate`].
pub const HULL_ERROR_CONSTANT: f64 = 0.021;

/// Double well `(t1^2 - 1)^2 + t2^2 / 2` sampled with both wells half a cell
/// off the grid, and its convex envelope at the same nodes.
pub fn double_well_fixture() -> (GridFunction, GridFunction) {
    let domain = [-2.01, 1.99, -2.01, 1.99];
    let well = |t: f64| (t * t - 1.0).powi(2);
    let f = sample(|t1, t2| well(t1) + 0.5 * t2 * t2, domain, 201, 201).expect("fixed fixture");
    let env = sample(|t1, t2| if t1.abs() <= 1.0 { 0.0 } else { well(t1) } + 0.5 * t2 * t2, domain, 201, 201).expect("fixed fixture");
    (f, env)
}

/// Measured `max |hull - envelope| / h` on the double-well fixture.
pub fn calibrate() -> f64 {
    let (f, env) = double_well_fixture();
    let (max, _) = interior_error(&lower_convex_hull(&f), &env, 0);
    max / f.h1().max(f.h2())
}

/// Maximum and mean absolute difference of `a` and `b` over nodes at least
/// `margin` cells away from the boundary.
pub fn interior_error(a: &GridFunction, b: &GridFunction, margin: usize) -> (f64, f64) {
    assert_eq!((a.n1, a.n2), (b.n1, b.n2), "grids differ in shape");
    let mut max = 0.0_f64;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in margin..a.n1.saturating_sub(margin) {
        for j in margin..a.n2.saturating_sub(margin) {
            let d = (a.at(i, j) - b.at(i, j)).abs();
            max = max.max(d);
            sum += d;
            count += 1;
        }
    }
    (max, if count == 0 { 0.0 } else { sum / count as f64 })
}
