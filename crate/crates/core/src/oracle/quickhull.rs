//! Lower convex hull of a lifted grid.
//!
//! Grid indices are used as exact integer `x`, `y` coordinates and values are
//! quantised to 52-bit integers, so all orientation tests are carried out
//! exactly in `i128`. Coplanar points never count as outside, which keeps the
//! face structure consistent on data with large affine patches.

use std::collections::HashMap;

const QUANT_BITS: i32 = 52;

type P3 = [i128; 3];

struct Face {
    v: [u32; 3],
    adj: [u32; 3],
    normal: P3,
    offset: i128,
    outside: Vec<u32>,
    furthest: Option<(u32, i128)>,
    alive: bool,
}

fn sub(a: &P3, b: &P3) -> P3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &P3, b: &P3) -> P3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: &P3, b: &P3) -> i128 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

struct Hull<'a> {
    pts: &'a [P3],
    faces: Vec<Face>,
}

impl<'a> Hull<'a> {
    fn plane(&self, v: [u32; 3]) -> (P3, i128) {
        let a = &self.pts[v[0] as usize];
        let n = cross(&sub(&self.pts[v[1] as usize], a), &sub(&self.pts[v[2] as usize], a));
        let off = dot(&n, a);
        (n, off)
    }

    fn dist(&self, f: usize, p: u32) -> i128 {
        let face = &self.faces[f];
        dot(&face.normal, &self.pts[p as usize]) - face.offset
    }

    fn push_face(&mut self, v: [u32; 3], adj: [u32; 3]) -> usize {
        let (normal, offset) = self.plane(v);
        self.faces.push(Face { v, adj, normal, offset, outside: Vec::new(), furthest: None, alive: true });
        self.faces.len() - 1
    }

    fn assign(&mut self, candidates: impl IntoIterator<Item = u32>, targets: &[usize]) {
        for p in candidates {
            for &f in targets {
                let d = self.dist(f, p);
                if d > 0 {
                    let face = &mut self.faces[f];
                    face.outside.push(p);
                    if face.furthest.map_or(true, |(_, best)| d > best) {
                        face.furthest = Some((p, d));
                    }
                    break;
                }
            }
        }
    }

    fn edge_index(&self, f: usize, a: u32, b: u32) -> usize {
        let v = self.faces[f].v;
        (0..3).find(|&i| v[i] == a && v[(i + 1) % 3] == b).expect("adjacent face lacks shared edge")
    }

    fn add_point(&mut self, start: usize, eye: u32) {
        let mut visible = vec![start];
        let mut seen: HashMap<usize, bool> = HashMap::new();
        seen.insert(start, true);
        let mut horizon: Vec<(u32, u32, usize)> = Vec::new();
        let mut k = 0;
        while k < visible.len() {
            let f = visible[k];
            k += 1;
            for i in 0..3 {
                let nb = self.faces[f].adj[i] as usize;
                let vis = match seen.get(&nb) {
                    Some(&v) => v,
                    None => {
                        let v = self.dist(nb, eye) > 0;
                        seen.insert(nb, v);
                        if v {
                            visible.push(nb);
                        }
                        v
                    }
                };
                if !vis {
                    let v = self.faces[f].v;
                    horizon.push((v[i], v[(i + 1) % 3], nb));
                }
            }
        }

        let mut orphans: Vec<u32> = Vec::new();
        for &f in &visible {
            let face = &mut self.faces[f];
            face.alive = false;
            orphans.append(&mut face.outside);
            face.furthest = None;
        }

        let mut by_start: HashMap<u32, usize> = HashMap::with_capacity(horizon.len());
        let mut created = Vec::with_capacity(horizon.len());
        for &(a, b, outer) in &horizon {
            let nf = self.push_face([a, b, eye], [outer as u32, u32::MAX, u32::MAX]);
            let j = self.edge_index(outer, b, a);
            self.faces[outer].adj[j] = nf as u32;
            by_start.insert(a, nf);
            created.push(nf);
        }
        for &nf in &created {
            let b = self.faces[nf].v[1];
            let next = by_start[&b];
            self.faces[nf].adj[1] = next as u32;
            self.faces[next].adj[2] = nf as u32;
        }
        orphans.retain(|&p| p != eye);
        self.assign(orphans, &created);
    }
}

/// Returns the downward-facing hull triangles as grid-point indices
/// (`i * n2 + j`), or `None` if all lifted points are coplanar.
pub(crate) fn lower_hull_triangles(n1: usize, n2: usize, values: &[f64]) -> Option<Vec<[u32; 3]>> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    if range == 0.0 {
        return None;
    }
    let q = 2f64.powi(QUANT_BITS) / range;
    let pts: Vec<P3> = (0..n1 * n2)
        .map(|k| {
            let (i, j) = (k / n2, k % n2);
            [i as i128, j as i128, ((values[k] - lo) * q).round() as i128]
        })
        .collect();

    let a = 0u32;
    let b = ((n1 - 1) * n2) as u32;
    let c = (n2 - 1) as u32;
    let mut hull = Hull { pts: &pts, faces: Vec::new() };
    let (n, off) = hull.plane([a, b, c]);
    let (d, dd) = (0..pts.len() as u32)
        .map(|p| (p, dot(&n, &pts[p as usize]) - off))
        .max_by_key(|&(_, s)| s.abs())
        .unwrap();
    if dd == 0 {
        return None;
    }
    // orient the base so that d lies on its inner side
    let base = if dd > 0 { [a, c, b] } else { [a, b, c] };
    let [p0, p1, p2] = base;
    // faces: 0 = base, 1..3 = sides through d
    hull.push_face([p0, p1, p2], [1, 2, 3]);
    hull.push_face([p1, p0, d], [0, 3, 2]);
    hull.push_face([p2, p1, d], [0, 1, 3]);
    hull.push_face([p0, p2, d], [0, 2, 1]);
    let others: Vec<u32> = (0..pts.len() as u32).filter(|&p| p != p0 && p != p1 && p != p2 && p != d).collect();
    hull.assign(others, &[0, 1, 2, 3]);

    let mut stack: Vec<usize> = (0..4).collect();
    while let Some(f) = stack.pop() {
        if !hull.faces[f].alive {
            continue;
        }
        let Some((eye, _)) = hull.faces[f].furthest else { continue };
        let before = hull.faces.len();
        hull.add_point(f, eye);
        stack.extend(before..hull.faces.len());
    }

    Some(
        hull.faces
            .iter()
            .filter(|f| f.alive && f.normal[2] < 0)
            .map(|f| f.v)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_closed(n1: usize, n2: usize, values: &[f64]) {
        let tris = lower_hull_triangles(n1, n2, values).unwrap();
        // projected areas of the lower faces tile the rectangle
        let area2: i64 = tris
            .iter()
            .map(|t| {
                let p = |k: u32| ((k as usize / n2) as i64, (k as usize % n2) as i64);
                let (a, b, c) = (p(t[0]), p(t[1]), p(t[2]));
                ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).abs()
            })
            .sum();
        assert_eq!(area2, 2 * ((n1 - 1) * (n2 - 1)) as i64);
    }

    #[test]
    fn paraboloid_uses_every_node() {
        let (n1, n2) = (9, 7);
        let vals: Vec<f64> = (0..n1 * n2)
            .map(|k| {
                let (i, j) = ((k / n2) as f64, (k % n2) as f64);
                (i - 3.3).powi(2) + 2.0 * (j - 2.1).powi(2)
            })
            .collect();
        check_closed(n1, n2, &vals);
        let tris = lower_hull_triangles(n1, n2, &vals).unwrap();
        let mut used = vec![false; n1 * n2];
        for t in &tris {
            for &v in t {
                used[v as usize] = true;
            }
        }
        assert!(used.iter().all(|&u| u));
    }

    #[test]
    fn piecewise_affine_data_stays_consistent() {
        let (n1, n2) = (21, 17);
        let vals: Vec<f64> = (0..n1 * n2)
            .map(|k| {
                let (i, j) = ((k / n2) as f64, (k % n2) as f64);
                (i - 10.0).abs().max((j - 8.0).abs() * 0.5) + 0.1 * i
            })
            .collect();
        check_closed(n1, n2, &vals);
    }

    #[test]
    fn coplanar_points_are_detected() {
        let vals: Vec<f64> = (0..25).map(|k| (k / 5) as f64 - (k % 5) as f64).collect();
        assert!(lower_hull_triangles(5, 5, &vals).is_none());
    }
}
