//! Envelope storage and `LDL^T` factorisation of symmetric matrices.

use std::collections::VecDeque;

/// Symmetric matrix stored row by row from the first nonzero column up to
/// the diagonal.
#[derive(Debug, Clone)]
pub(crate) struct Envelope {
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
}

impl Envelope {
    /// `first[i]` is the smallest column index coupled to row `i`.
    pub(crate) fn new(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            debug_assert!(f <= i);
            start.push(acc);
            acc += i - f + 1;
        }
        start.push(acc);
        Self { first, start, values: vec![0.0; acc] }
    }

    pub(crate) fn dim(&self) -> usize {
        self.first.len()
    }

    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        debug_assert!(j >= self.first[i], "entry ({i}, {j}) outside the envelope");
        self.start[i] + j - self.first[i]
    }

    /// Adds `v` to entry `(i, j)`; call once per unordered pair.
    pub(crate) fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j);
        self.values[k] += v;
    }

    pub(crate) fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if j > i { (j, i) } else { (i, j) };
        if b < self.first[a] {
            0.0
        } else {
            self.values[self.index(a, b)]
        }
    }

    pub(crate) fn add_diagonal(&mut self, shift: f64) {
        for i in 0..self.dim() {
            let k = self.index(i, i);
            self.values[k] += shift;
        }
    }

    pub(crate) fn max_abs_diagonal(&self) -> f64 {
        (0..self.dim()).map(|i| self.values[self.index(i, i)].abs()).fold(0.0, f64::max)
    }

    #[cfg(test)]
    pub(crate) fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        for i in 0..self.dim() {
            let row = &self.values[self.start[i]..self.start[i + 1]];
            let f = self.first[i];
            for (off, &a) in row.iter().enumerate() {
                let j = f + off;
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// In-place `LDL^T` without pivoting. Returns the number of non-positive
    /// pivots, or `None` if a pivot vanishes.
    pub(crate) fn factor(mut self) -> Option<(Factor, usize)> {
        let n = self.dim();
        let mut d = vec![0.0; n];
        let mut negative = 0;
        let scale = self.max_abs_diagonal().max(f64::MIN_POSITIVE);
        let mut w = Vec::new();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let lo = fi.max(fj);
                let mut s = self.values[si + j - fi];
                for k in lo..j {
                    s -= self.values[si + k - fi] * self.values[sj + k - fj];
                }
                self.values[si + j - fi] = s;
            }
            // row i now holds u_ij = l_ij d_j
            w.clear();
            w.extend((fi..i).map(|j| self.values[si + j - fi]));
            let mut diag = self.values[si + i - fi];
            for (off, j) in (fi..i).enumerate() {
                let l = w[off] / d[j];
                diag -= w[off] * l;
                self.values[si + j - fi] = l;
            }
            if diag.abs() <= 1e-14 * scale {
                return None;
            }
            if diag < 0.0 {
                negative += 1;
            }
            d[i] = diag;
            self.values[si + i - fi] = 1.0;
        }
        Some((Factor { env: self, d }, negative))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Factor {
    env: Envelope,
    d: Vec<f64>,
}

impl Factor {
    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        let env = &self.env;
        let mut x = b.to_vec();
        for i in 0..n {
            let fi = env.first[i];
            let si = env.start[i];
            let mut s = x[i];
            for j in fi..i {
                s -= env.values[si + j - fi] * x[j];
            }
            x[i] = s;
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let fi = env.first[i];
            let si = env.start[i];
            let xi = x[i];
            for j in fi..i {
                x[j] -= env.values[si + j - fi] * xi;
            }
        }
        x
    }
}

/// Reverse Cuthill-McKee ordering of an undirected graph given as adjacency
/// lists. Returns `order[new] = old`.
pub(crate) fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let degree = |v: usize| adj[v].len();
    while order.len() < n {
        let seed = (0..n).filter(|&v| !visited[v]).min_by_key(|&v| (degree(v), v)).unwrap();
        let root = pseudo_peripheral(adj, seed);
        let start = order.len();
        visited[root] = true;
        order.push(root);
        let mut q = VecDeque::from([root]);
        while let Some(v) = q.pop_front() {
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (degree(u), u));
            for u in next {
                visited[u] = true;
                order.push(u);
                q.push_back(u);
            }
        }
        order[start..].reverse();
    }
    order
}

fn bfs_levels(adj: &[Vec<usize>], root: usize) -> Vec<usize> {
    let mut level = vec![usize::MAX; adj.len()];
    level[root] = 0;
    let mut q = VecDeque::from([root]);
    while let Some(v) = q.pop_front() {
        for &u in &adj[v] {
            if level[u] == usize::MAX {
                level[u] = level[v] + 1;
                q.push_back(u);
            }
        }
    }
    level
}

fn pseudo_peripheral(adj: &[Vec<usize>], seed: usize) -> usize {
    let mut root = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let level = bfs_levels(adj, root);
        let depth = level.iter().filter(|&&l| l != usize::MAX).max().copied().unwrap_or(0);
        if depth <= ecc && root != seed {
            break;
        }
        ecc = depth;
        root = (0..adj.len())
            .filter(|&v| level[v] == depth)
            .min_by_key(|&v| (adj[v].len(), v))
            .unwrap();
    }
    root
}
