//! Independent reference implementations used as test oracles.
//!
//! Everything here is written from the definitions, with plain loops over
//! coordinates, and never calls the crate's cluster, solver or derivative
//! routines. Only the lattice tables (coordinates, indices, edge lookup) and
//! the configuration bits are shared.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::VecDeque;
use std::sync::Arc;

use perchom::lattice::{CubeSpec, Lattice, Region};
use perchom::percolation::Configuration;

/// Lattice of the triadic cube of dimension `d` and level `m`.
pub fn cube_lattice(d: usize, m: u32) -> Arc<Lattice> {
    Arc::new(Lattice::new(CubeSpec::new(d, m).unwrap()))
}

/// Lattice of the centered box of dimension `d` and odd side `side`.
pub fn box_lattice(d: usize, side: i64) -> Arc<Lattice> {
    Arc::new(Lattice::centered_box(d, side).unwrap())
}

/// Neighbors of `v` joined by an open edge, found by shifting coordinates.
pub fn open_neighbors(a: &Configuration, v: usize) -> Vec<usize> {
    let lat = a.lattice();
    let x = lat.coords(v);
    let mut out = Vec::new();
    for axis in 0..lat.dim() {
        for step in [-1, 1] {
            let mut y = x.clone();
            y[axis] += step;
            if let Some(w) = lat.index(&y) {
                let e = lat
                    .edge_between(v, w)
                    .expect("adjacent vertices share an edge");
                if a.is_open(e) {
                    out.push(w);
                }
            }
        }
    }
    out
}

/// Whether `v` lies on the boundary of the lattice box, from coordinates.
pub fn on_box_boundary(lat: &Lattice, v: usize) -> bool {
    let x = lat.coords(v);
    let r = lat.region();
    (0..lat.dim()).any(|i| x[i] == r.lo()[i] || x[i] == r.hi()[i])
}

/// Component labels by breadth-first search, numbered in order of the
/// smallest vertex.
pub fn bfs_components(a: &Configuration) -> Vec<usize> {
    let n = a.lattice().num_vertices();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = next;
        let mut queue = VecDeque::from([s]);
        while let Some(x) = queue.pop_front() {
            for y in open_neighbors(a, x) {
                if label[y] == usize::MAX {
                    label[y] = next;
                    queue.push_back(y);
                }
            }
        }
        next += 1;
    }
    label
}

/// Vertices joined to the box boundary by an open path (boundary vertices
/// included), by breadth-first search.
pub fn bfs_cbc(a: &Configuration) -> Vec<bool> {
    let lat = a.lattice();
    let n = lat.num_vertices();
    let mut seen: Vec<bool> = (0..n).map(|v| on_box_boundary(lat, v)).collect();
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| seen[v]).collect();
    while let Some(x) = queue.pop_front() {
        for y in open_neighbors(a, x) {
            if !seen[y] {
                seen[y] = true;
                queue.push_back(y);
            }
        }
    }
    seen
}

/// Whether an open path inside `region` joins the two faces of `region`
/// orthogonal to every axis.
pub fn bfs_crossable(a: &Configuration, region: &Region) -> bool {
    let lat = a.lattice();
    let inside = |v: usize| region.contains(&lat.coords(v));
    (0..lat.dim()).all(|axis| {
        let n = lat.num_vertices();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        for v in 0..n {
            if inside(v) && lat.coords(v)[axis] == region.lo()[axis] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
        while let Some(x) = queue.pop_front() {
            if lat.coords(x)[axis] == region.hi()[axis] {
                return true;
            }
            for y in open_neighbors(a, x) {
                if inside(y) && !seen[y] {
                    seen[y] = true;
                    queue.push_back(y);
                }
            }
        }
        false
    })
}

/// `xi . x` at vertex `v`.
pub fn affine(lat: &Lattice, xi: &[f64], v: usize) -> f64 {
    lat.coords(v)
        .iter()
        .zip(xi)
        .map(|(&c, x)| c as f64 * x)
        .sum()
}

/// Solves the dense system `m x = b` by Gaussian elimination with partial pivoting.
pub fn dense_solve(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        b.swap(col, pivot);
        assert!(m[col][col].abs() > 1e-12, "singular system");
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / m[r][r];
    }
    x
}

/// The harmonic function of `a` with boundary data `xi . x`: values on the
/// boundary-connecting set, `NaN` elsewhere. Dense elimination on the
/// interior unknowns.
pub fn dense_harmonic(a: &Configuration, xi: &[f64]) -> Vec<f64> {
    let lat = a.lattice();
    let n = lat.num_vertices();
    let cbc = bfs_cbc(a);
    let unknowns: Vec<usize> = (0..n)
        .filter(|&v| cbc[v] && !on_box_boundary(lat, v))
        .collect();
    let mut slot = vec![usize::MAX; n];
    for (i, &v) in unknowns.iter().enumerate() {
        slot[v] = i;
    }
    let k = unknowns.len();
    let mut m = vec![vec![0.0; k]; k];
    let mut b = vec![0.0; k];
    for (i, &x) in unknowns.iter().enumerate() {
        for y in open_neighbors(a, x) {
            m[i][i] += 1.0;
            if slot[y] == usize::MAX {
                b[i] += affine(lat, xi, y);
            } else {
                m[i][slot[y]] -= 1.0;
            }
        }
    }
    let sol = dense_solve(m, b);
    (0..n)
        .map(|v| match (cbc[v], slot[v]) {
            (false, _) => f64::NAN,
            (true, usize::MAX) => affine(lat, xi, v),
            (true, s) => sol[s],
        })
        .collect()
}

/// Normalized energy of the dense harmonic function over open edges of the
/// boundary-connecting set.
pub fn dense_energy(a: &Configuration, xi: &[f64]) -> f64 {
    let lat = a.lattice();
    let u = dense_harmonic(a, xi);
    let mut s = 0.0;
    for x in 0..lat.num_vertices() {
        if u[x].is_nan() {
            continue;
        }
        for y in open_neighbors(a, x) {
            if y > x {
                s += (u[y] - u[x]).powi(2);
            }
        }
    }
    s / lat.num_vertices() as f64
}

/// `l^inf` distance between two vertices.
pub fn linf(lat: &Lattice, x: usize, y: usize) -> i64 {
    lat.coords(x)
        .iter()
        .zip(lat.coords(y))
        .map(|(a, b)| (a - b).abs())
        .max()
        .unwrap_or(0)
}

/// The canonical grain map by exhaustive search: a point of the
/// boundary-connecting set of `pert` is its own grain; every other point
/// maps to the vertex of `base_cbc` nearest (in `l^inf`) to its `pert`
/// cluster, the smallest index winning ties.
pub fn brute_grain(pert: &Configuration, base_cbc: &[bool]) -> Vec<usize> {
    let lat = pert.lattice();
    let n = lat.num_vertices();
    let cbc = bfs_cbc(pert);
    let comp = bfs_components(pert);
    (0..n)
        .map(|x| {
            if cbc[x] {
                return x;
            }
            let hole: Vec<usize> = (0..n).filter(|&z| comp[z] == comp[x]).collect();
            (0..n)
                .filter(|&y| base_cbc[y])
                .min_by_key(|&y| (hole.iter().map(|&z| linf(lat, y, z)).min().unwrap(), y))
                .unwrap()
        })
        .collect()
}

/// `v^H` for the base `a` and perturbation `h`: the dense harmonic function
/// of `a^H` extended to holes by the brute-force grain map of `a`.
pub fn dense_solution(a: &Configuration, xi: &[f64], h: &[usize]) -> Vec<f64> {
    let b = a.with_open(h);
    let u = dense_harmonic(&b, xi);
    let grain = brute_grain(&b, &bfs_cbc(a));
    grain.iter().map(|&g| u[g]).collect()
}

/// All `k`-element subsets of `pool`, each in the order of `pool`.
pub fn combinations(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if pool.len() < k {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, &e) in pool.iter().enumerate() {
        for mut rest in combinations(&pool[i + 1..], k - 1) {
            rest.insert(0, e);
            out.push(rest);
        }
    }
    out
}

/// `D_G f(a)` by inclusion-exclusion over the subsets of `g`, written
/// out with explicit bit masks.
pub fn brute_derivative<T>(
    f: impl Fn(&Configuration) -> Vec<T>,
    a: &Configuration,
    g: &[usize],
) -> Vec<f64>
where
    T: Into<f64> + Copy,
{
    let mut acc: Option<Vec<f64>> = None;
    for mask in 0u32..1 << g.len() {
        let opened: Vec<usize> = (0..g.len())
            .filter(|&i| mask >> i & 1 == 1)
            .map(|i| g[i])
            .collect();
        let sign = if (g.len() - opened.len()) % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        let val = f(&a.with_open(&opened));
        let acc = acc.get_or_insert_with(|| vec![0.0; val.len()]);
        for (s, x) in acc.iter_mut().zip(val) {
            *s += sign * x.into();
        }
    }
    acc.unwrap()
}

/// `V(F, j)` without any caching: for each `G` of `j` closed edges outside
/// `F`, the inclusion-exclusion sum of dense solutions over subsets of `F u G`.
pub fn uncached_v(a: &Configuration, xi: &[f64], f: &[usize], j: usize) -> Vec<f64> {
    let n = a.lattice().num_vertices();
    if f.iter().any(|&e| a.is_open(e)) {
        return vec![0.0; n];
    }
    let pool: Vec<usize> = (0..a.num_edges())
        .filter(|&e| !a.is_open(e) && !f.contains(&e))
        .collect();
    let mut total = vec![0.0; n];
    for g in combinations(&pool, j) {
        let mut h = f.to_vec();
        h.extend(g);
        let base = a.clone();
        let d = brute_derivative(
            |b: &Configuration| {
                let opened: Vec<usize> = (0..b.num_edges())
                    .filter(|&e| b.is_open(e) && !base.is_open(e))
                    .collect();
                dense_solution(&base, xi, &opened)
            },
            a,
            &h,
        );
        for (t, x) in total.iter_mut().zip(d) {
            *t += x;
        }
    }
    total
}

/// Largest absolute entry-wise difference.
pub fn max_diff(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}
