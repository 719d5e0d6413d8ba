//! Sparse symmetric positive definite solves for the cluster Laplacian.
//!
//! The conjugate-gradient driver accepts two preconditioners: Jacobi, and a
//! multilevel cycle built by aggregating the unknowns of each triadic block
//! of side 3 into its connected pieces, level after level.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Preconditioner of the conjugate-gradient solver.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioner {
    /// Diagonal scaling.
    Jacobi,
    /// Symmetric V-cycle over block aggregates.
    Multilevel,
    /// Jacobi below [`AUTO_THRESHOLD`] unknowns, multilevel above.
    #[default]
    Auto,
}

/// Number of unknowns from which [`Preconditioner::Auto`] switches to the
/// multilevel cycle.
pub const AUTO_THRESHOLD: usize = 4096;

/// Symmetric matrix stored as a diagonal plus off-diagonal rows.
#[derive(Clone, Debug)]
pub(crate) struct SymMatrix {
    pub diag: Vec<f64>,
    pub start: Vec<usize>,
    pub col: Vec<u32>,
    pub val: Vec<f64>,
}

impl SymMatrix {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.start[i]..self.start[i + 1];
        (&self.col[r.clone()], &self.val[r])
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.len() {
            let (cols, vals) = self.row(i);
            let mut s = self.diag[i] * x[i];
            for (&j, &v) in cols.iter().zip(vals) {
                s += v * x[j as usize];
            }
            y[i] = s;
        }
    }

    fn sweep(&self, b: &[f64], x: &mut [f64], forward: bool) {
        let n = self.len();
        for k in 0..n {
            let i = if forward { k } else { n - 1 - k };
            let (cols, vals) = self.row(i);
            let mut s = b[i];
            for (&j, &v) in cols.iter().zip(vals) {
                s -= v * x[j as usize];
            }
            x[i] = s / self.diag[i];
        }
    }
}

trait Precondition {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

struct Jacobi(Vec<f64>);

impl Precondition for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((z, r), d) in z.iter_mut().zip(r).zip(&self.0) {
            *z = r * d;
        }
    }
}

struct Level {
    a: SymMatrix,
    agg: Vec<u32>,
}

/// Lower-triangular Cholesky factor of a small dense matrix.
struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    fn new(a: &SymMatrix) -> DenseCholesky {
        let n = a.len();
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            l[i * n + i] = a.diag[i];
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                l[i * n + j as usize] = v;
            }
        }
        for j in 0..n {
            let mut d = l[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = l[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        DenseCholesky { n, l }
    }

    fn solve(&self, b: &[f64], x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
    }
}

/// Aggregation hierarchy with a symmetric Gauss-Seidel V-cycle.
struct Multilevel {
    levels: Vec<Level>,
    coarse: DenseCholesky,
}

const COARSE_SIZE: usize = 300;

/// Scaling of the coarse-grid correction. Piecewise-constant prolongation
/// underestimates smooth errors; any weight in `(0, 2)` keeps the cycle
/// symmetric positive definite.
const COARSE_WEIGHT: f64 = 1.8;

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

/// Groups unknowns with equal block keys that are linked by matrix entries.
fn aggregate(a: &SymMatrix, keys: &[u64]) -> (Vec<u32>, usize) {
    let n = a.len();
    let mut parent: Vec<u32> = (0..n as u32).collect();
    for i in 0..n {
        let (cols, _) = a.row(i);
        for &j in cols {
            if keys[j as usize] == keys[i] {
                let (ri, rj) = (find(&mut parent, i as u32), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj) as usize] = ri.min(rj);
                }
            }
        }
    }
    let mut id = vec![u32::MAX; n];
    let mut agg = vec![0u32; n];
    let mut count = 0u32;
    for i in 0..n {
        let r = find(&mut parent, i as u32) as usize;
        if id[r] == u32::MAX {
            id[r] = count;
            count += 1;
        }
        agg[i] = id[r];
    }
    (agg, count as usize)
}

/// Galerkin product `P^T A P` for the piecewise-constant prolongation `agg`.
fn galerkin(a: &SymMatrix, agg: &[u32], nc: usize) -> SymMatrix {
    let mut members_start = vec![0usize; nc + 1];
    for &g in agg {
        members_start[g as usize + 1] += 1;
    }
    for i in 0..nc {
        members_start[i + 1] += members_start[i];
    }
    let mut fill = members_start.clone();
    let mut members = vec![0u32; agg.len()];
    for (i, &g) in agg.iter().enumerate() {
        members[fill[g as usize]] = i as u32;
        fill[g as usize] += 1;
    }
    let mut marker = vec![u32::MAX; nc];
    let mut pos = vec![0usize; nc];
    let mut diag = vec![0.0; nc];
    let mut start = Vec::with_capacity(nc + 1);
    let mut col = Vec::new();
    let mut val = Vec::new();
    start.push(0);
    for c in 0..nc {
        for &i in &members[members_start[c]..members_start[c + 1]] {
            let i = i as usize;
            diag[c] += a.diag[i];
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let cj = agg[j as usize] as usize;
                if cj == c {
                    diag[c] += v;
                } else if marker[cj] == c as u32 {
                    val[pos[cj]] += v;
                } else {
                    marker[cj] = c as u32;
                    pos[cj] = col.len();
                    col.push(cj as u32);
                    val.push(v);
                }
            }
        }
        start.push(col.len());
    }
    SymMatrix {
        diag,
        start,
        col,
        val,
    }
}

impl Multilevel {
    /// `coords` holds `dim` nonnegative block coordinates per unknown.
    fn new(a: SymMatrix, mut coords: Vec<u32>, dim: usize) -> Multilevel {
        let mut levels = Vec::new();
        let mut a = a;
        loop {
            let n = a.len();
            if n <= COARSE_SIZE {
                break;
            }
            for c in coords.iter_mut() {
                *c /= 3;
            }
            let keys: Vec<u64> = coords
                .chunks(dim)
                .map(|c| c.iter().fold(0u64, |k, &x| (k << 21) | x as u64))
                .collect();
            let (agg, nc) = aggregate(&a, &keys);
            if 2 * nc > n && coords.iter().all(|&c| c == 0) {
                break;
            }
            let mut coarse_coords = vec![0u32; nc * dim];
            for (i, &g) in agg.iter().enumerate() {
                coarse_coords[g as usize * dim..(g as usize + 1) * dim]
                    .copy_from_slice(&coords[i * dim..(i + 1) * dim]);
            }
            let ac = galerkin(&a, &agg, nc);
            levels.push(Level { a, agg });
            a = ac;
            coords = coarse_coords;
        }
        let coarse = DenseCholesky::new(&a);
        levels.push(Level { a, agg: Vec::new() });
        Multilevel { levels, coarse }
    }

    fn cycle(&self, l: usize, b: &[f64], x: &mut [f64]) {
        let level = &self.levels[l];
        if l + 1 == self.levels.len() {
            self.coarse.solve(b, x);
            return;
        }
        let n = level.a.len();
        x.fill(0.0);
        level.a.sweep(b, x, true);
        let mut r = vec![0.0; n];
        level.a.apply(x, &mut r);
        let nc = self.levels[l + 1].a.len();
        let mut bc = vec![0.0; nc];
        for i in 0..n {
            bc[level.agg[i] as usize] += b[i] - r[i];
        }
        let mut xc = vec![0.0; nc];
        self.cycle(l + 1, &bc, &mut xc);
        for i in 0..n {
            x[i] += COARSE_WEIGHT * xc[level.agg[i] as usize];
        }
        level.a.sweep(b, x, false);
    }
}

impl Precondition for Multilevel {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.cycle(0, r, z);
    }
}

/// Outcome of a conjugate-gradient run.
#[derive(Clone, Copy, Debug)]
pub(crate) struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `A x = b` from the initial guess in `x`. `coords` supplies `dim`
/// block coordinates per unknown for the multilevel preconditioner.
#[allow(clippy::too_many_arguments)]
pub(crate) fn solve(
    a: &SymMatrix,
    b: &[f64],
    x: &mut [f64],
    coords: impl FnOnce() -> Vec<u32>,
    dim: usize,
    preconditioner: Preconditioner,
    tolerance: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let multilevel = match preconditioner {
        Preconditioner::Jacobi => false,
        Preconditioner::Multilevel => true,
        Preconditioner::Auto => a.len() >= AUTO_THRESHOLD,
    };
    if multilevel && a.len() > COARSE_SIZE {
        let m = Multilevel::new(a.clone(), coords(), dim);
        pcg(a, b, x, &m, tolerance, max_iter)
    } else {
        let m = Jacobi(a.diag.iter().map(|d| 1.0 / d).collect());
        pcg(a, b, x, &m, tolerance, max_iter)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pcg(
    a: &SymMatrix,
    b: &[f64],
    x: &mut [f64],
    m: &impl Precondition,
    tolerance: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = a.len();
    let bnorm = dot(b, b).sqrt();
    if n == 0 || bnorm == 0.0 {
        x.fill(0.0);
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut iterations = 0;
    // The recursively updated residual drifts from the true one, so the
    // iteration restarts from the true residual until that one is small.
    loop {
        a.apply(x, &mut q);
        for i in 0..n {
            r[i] = b[i] - q[i];
        }
        let rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= tolerance {
            return Ok(CgOutcome {
                iterations,
                relative_residual: rel,
            });
        }
        if iterations >= max_iter {
            return Err(Error::SolveFailed {
                iterations,
                residual: rel,
            });
        }
        m.apply(&r, &mut z);
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            a.apply(&p, &mut q);
            let alpha = rz / dot(&p, &q);
            let mut rr = 0.0;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
                rr += r[i] * r[i];
            }
            iterations += 1;
            if rr.sqrt() / bnorm <= 0.5 * tolerance {
                break;
            }
            m.apply(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dirichlet Laplacian on an `n x n` grid.
    fn grid(n: usize) -> (SymMatrix, Vec<u32>) {
        let mut diag = Vec::new();
        let mut start = vec![0];
        let mut col = Vec::new();
        let mut val = Vec::new();
        let mut coords = Vec::new();
        for i in 0..n {
            for j in 0..n {
                diag.push(4.0);
                for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if a >= 0 && b >= 0 && a < n as i64 && b < n as i64 {
                        col.push((a as usize * n + b as usize) as u32);
                        val.push(-1.0);
                    }
                }
                start.push(col.len());
                coords.extend([i as u32, j as u32]);
            }
        }
        (
            SymMatrix {
                diag,
                start,
                col,
                val,
            },
            coords,
        )
    }

    #[test]
    fn preconditioners_agree() {
        let (a, coords) = grid(90);
        let b: Vec<f64> = (0..a.len())
            .map(|i| ((i * 7919) % 13) as f64 - 6.0)
            .collect();
        let mut x1 = vec![0.0; a.len()];
        let mut x2 = vec![0.0; a.len()];
        let j = solve(
            &a,
            &b,
            &mut x1,
            || coords.clone(),
            2,
            Preconditioner::Jacobi,
            1e-12,
            100_000,
        )
        .unwrap();
        let m = solve(
            &a,
            &b,
            &mut x2,
            || coords.clone(),
            2,
            Preconditioner::Multilevel,
            1e-12,
            100_000,
        )
        .unwrap();
        assert!(m.iterations < j.iterations);
        for (u, v) in x1.iter().zip(&x2) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn dense_cholesky_solves() {
        let (a, _) = grid(5);
        let c = DenseCholesky::new(&a);
        let b = vec![1.0; 25];
        let mut x = vec![0.0; 25];
        c.solve(&b, &mut x);
        let mut y = vec![0.0; 25];
        a.apply(&x, &mut y);
        for v in y {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
}
