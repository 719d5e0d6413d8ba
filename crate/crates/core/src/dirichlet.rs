//! Elliptic problems on the boundary-connecting clusters of a configuration.
//!
//! Unknowns live on the interior vertices of the boundary-connecting set.
//! Boundary vertices carry Dirichlet data, and vertices off the
//! boundary-connecting set carry no equation: their value is copied from
//! their canonical grain (see [`crate::clusters::Grain`]). With this
//! extension every solution is harmonic at every interior vertex, because
//! each hole receives a constant.
//!
//! Conventions: `grad u(x, y) = u(y) - u(x)`, `div F(x) = sum_y F(x, y)`,
//! and edge fields are stored once per edge oriented from `tail` to `head`.

use std::sync::Arc;

use num_rational::Ratio;
use serde::Serialize;

use crate::clusters::{enlarged_cluster, ClusterLabeling, Grain};
use crate::exec::Exec;
use crate::lattice::{CubeSpec, Lattice};
use crate::partition::PyramidPartition;
use crate::percolation::{sample, Configuration};
pub use crate::solver::Preconditioner;
use crate::solver::{self, SymMatrix};
use crate::stats::Estimate;
use crate::{Error, Result};

/// Real values on the vertices of a cube, indexed like the lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexField(pub Vec<f64>);

impl VertexField {
    /// The zero field on `n` vertices.
    pub fn zeros(n: usize) -> VertexField {
        VertexField(vec![0.0; n])
    }

    /// Values by vertex.
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Largest absolute value.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &VertexField) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
    }
}

/// Antisymmetric values on oriented edges, stored on `(tail, head)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeField(pub Vec<f64>);

impl EdgeField {
    /// The zero field on `n` edges.
    pub fn zeros(n: usize) -> EdgeField {
        EdgeField(vec![0.0; n])
    }

    /// `grad u` on every edge.
    pub fn gradient(lat: &Lattice, u: &VertexField) -> EdgeField {
        EdgeField(
            (0..lat.num_edges())
                .map(|e| {
                    let (x, y) = lat.endpoints(e);
                    u.0[y] - u.0[x]
                })
                .collect(),
        )
    }

    /// Value on the oriented edge `(from, to)` of edge `e`.
    pub fn oriented(&self, lat: &Lattice, e: usize, from: usize) -> f64 {
        if lat.endpoints(e).0 == from {
            self.0[e]
        } else {
            -self.0[e]
        }
    }

    /// `div F(x) = sum_y F(x, y)` at every vertex.
    pub fn divergence(&self, lat: &Lattice) -> Vec<f64> {
        let mut div = vec![0.0; lat.num_vertices()];
        for (e, &f) in self.0.iter().enumerate() {
            let (x, y) = lat.endpoints(e);
            div[x] += f;
            div[y] -= f;
        }
        div
    }

    /// Values by edge.
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Largest absolute value.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Convergence record of one linear solve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SolveReport {
    /// Conjugate-gradient iterations performed.
    pub iterations: usize,
    /// Final `||b - A x|| / ||b||`, recomputed from scratch.
    pub relative_residual: f64,
    /// Number of unknowns.
    pub dof_count: usize,
}

/// Stopping rule of the conjugate-gradient solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Target relative residual.
    pub tolerance: f64,
    /// Iteration cap as a multiple of the number of unknowns.
    pub max_iter_factor: usize,
    /// Preconditioner.
    pub preconditioner: Preconditioner,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-10,
            max_iter_factor: 50,
            preconditioner: Preconditioner::Auto,
        }
    }
}

/// Checks that `xi` has unit Euclidean norm and matches the dimension.
pub fn check_direction(xi: &[f64], dim: usize) -> Result<()> {
    let norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    if xi.len() != dim || (norm - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "direction {xi:?} must be a unit vector of dimension {dim}"
        )));
    }
    Ok(())
}

/// The unit vector `e_axis` in dimension `dim`.
pub fn unit(dim: usize, axis: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[axis] = 1.0;
    v
}

/// The affine function `l_xi(x) = xi . x` on every vertex.
pub fn linear_function(lat: &Lattice, xi: &[f64]) -> VertexField {
    VertexField(
        (0..lat.num_vertices())
            .map(|v| (0..lat.dim()).map(|i| xi[i] * lat.coord(v, i) as f64).sum())
            .collect(),
    )
}

/// Graph Laplacian of the open edges restricted to the free vertices
/// (interior vertices of the boundary-connecting set).
struct ClusterSystem {
    dof_of: Vec<u32>,
    vertices: Vec<u32>,
    matrix: SymMatrix,
}

const FIXED: u32 = u32::MAX;

impl ClusterSystem {
    fn new(a: &Configuration, lab: &ClusterLabeling) -> ClusterSystem {
        let lat = a.lattice();
        let n = lat.num_vertices();
        let mut dof_of = vec![FIXED; n];
        let mut vertices = Vec::new();
        for v in 0..n {
            if lab.in_cbc(v) && !lat.is_boundary(v) {
                dof_of[v] = vertices.len() as u32;
                vertices.push(v as u32);
            }
        }
        let mut start = Vec::with_capacity(vertices.len() + 1);
        let mut col = Vec::new();
        let mut diag = Vec::with_capacity(vertices.len());
        start.push(0);
        for &v in &vertices {
            let mut deg = 0.0;
            lat.for_each_neighbor(v as usize, |w, e| {
                if a.is_open(e) {
                    deg += 1.0;
                    if dof_of[w] != FIXED {
                        col.push(dof_of[w]);
                    }
                }
            });
            diag.push(deg);
            start.push(col.len());
        }
        let val = vec![-1.0; col.len()];
        ClusterSystem {
            dof_of,
            vertices,
            matrix: SymMatrix {
                diag,
                start,
                col,
                val,
            },
        }
    }

    fn coords(&self, lat: &Lattice) -> Vec<u32> {
        let d = lat.dim();
        let mut out = Vec::with_capacity(self.vertices.len() * d);
        for &v in &self.vertices {
            out.extend((0..d).map(|i| lat.local(v as usize, i) as u32));
        }
        out
    }
}

/// Values of a solve on the boundary-connecting set of one environment,
/// before extension to its holes.
#[derive(Clone, Debug)]
pub struct ClusterSolution {
    /// Values on the boundary-connecting set; other entries are unspecified.
    pub values: Vec<f64>,
    /// Cluster labels of the environment.
    pub labeling: ClusterLabeling,
    /// Solver record.
    pub report: SolveReport,
}

impl ClusterSolution {
    /// Extends the values to every vertex with the canonical grains of the
    /// environment relative to the base indicator `base_cbc`.
    pub fn extend(&self, lat: &Lattice, base_cbc: &[bool]) -> VertexField {
        let grain = Grain::from_parts(lat, base_cbc, &self.labeling);
        VertexField(
            (0..lat.num_vertices())
                .map(|v| self.values[grain.get(v)])
                .collect(),
        )
    }
}

/// Solves `-div(a grad v) = -div w` on the interior of the boundary-connecting
/// set of `a` with `v = g` on the boundary. `boundary` gives `g` on every
/// vertex (only boundary entries are read); `source_div` is `div w` by vertex.
pub fn solve_on_cluster(
    a: &Configuration,
    boundary: &[f64],
    source_div: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<ClusterSolution> {
    let lat = a.lattice();
    let labeling = ClusterLabeling::new(a);
    let sys = ClusterSystem::new(a, &labeling);
    let n = sys.vertices.len();
    let mut b = vec![0.0; n];
    let mut x = vec![0.0; n];
    for (i, &v) in sys.vertices.iter().enumerate() {
        let v = v as usize;
        let mut s = source_div.map_or(0.0, |d| -d[v]);
        lat.for_each_neighbor(v, |w, e| {
            if a.is_open(e) && sys.dof_of[w] == FIXED {
                s += boundary[w];
            }
        });
        b[i] = s;
        x[i] = boundary[v];
    }
    let outcome = solver::solve(
        &sys.matrix,
        &b,
        &mut x,
        || sys.coords(lat),
        lat.dim(),
        opts.preconditioner,
        opts.tolerance,
        opts.max_iter_factor * n.max(20),
    )?;
    let report = SolveReport {
        iterations: outcome.iterations,
        relative_residual: outcome.relative_residual,
        dof_count: n,
    };
    let mut values = boundary.to_vec();
    for (i, &v) in sys.vertices.iter().enumerate() {
        values[v as usize] = x[i];
    }
    Ok(ClusterSolution {
        values,
        labeling,
        report,
    })
}

/// The harmonic function of `a` with affine boundary data `l_xi` on the
/// boundary-connecting set, extended to holes by canonical grains.
pub fn solve_harmonic(a: &Configuration, xi: &[f64]) -> Result<(VertexField, SolveReport)> {
    solve_harmonic_with(a, xi, &SolverOptions::default())
}

/// [`solve_harmonic`] with explicit solver options.
pub fn solve_harmonic_with(
    a: &Configuration,
    xi: &[f64],
    opts: &SolverOptions,
) -> Result<(VertexField, SolveReport)> {
    check_direction(xi, a.lattice().dim())?;
    let l = linear_function(a.lattice(), xi);
    let sol = solve_on_cluster(a, &l.0, None, opts)?;
    let base = sol.labeling.cbc_mask();
    Ok((sol.extend(a.lattice(), &base), sol.report))
}

/// Solves `-div(a grad v) = -div w` with zero boundary data on the
/// boundary-connecting set of `a`, extended to holes by canonical grains.
pub fn solve_poisson(a: &Configuration, w: &EdgeField) -> Result<(VertexField, SolveReport)> {
    solve_poisson_with(a, w, &SolverOptions::default())
}

/// [`solve_poisson`] with explicit solver options.
pub fn solve_poisson_with(
    a: &Configuration,
    w: &EdgeField,
    opts: &SolverOptions,
) -> Result<(VertexField, SolveReport)> {
    let lat = a.lattice();
    if w.0.len() != lat.num_edges() {
        return Err(Error::InvalidArgument(
            "edge field has the wrong length".into(),
        ));
    }
    let div = w.divergence(lat);
    let zero = vec![0.0; lat.num_vertices()];
    let sol = solve_on_cluster(a, &zero, Some(&div), opts)?;
    let base = sol.labeling.cbc_mask();
    Ok((sol.extend(lat, &base), sol.report))
}

/// `div(a grad u)` at every vertex.
pub fn weighted_divergence(a: &Configuration, u: &VertexField) -> Vec<f64> {
    let lat = a.lattice();
    let mut div = vec![0.0; lat.num_vertices()];
    for e in 0..lat.num_edges() {
        if a.is_open(e) {
            let (x, y) = lat.endpoints(e);
            let g = u.0[y] - u.0[x];
            div[x] += g;
            div[y] -= g;
        }
    }
    div
}

/// Largest `|div(a grad u)(x) - rhs(x)|` over interior vertices `x`.
pub fn interior_residual(a: &Configuration, u: &VertexField, rhs: Option<&[f64]>) -> f64 {
    let lat = a.lattice();
    let div = weighted_divergence(a, u);
    (0..lat.num_vertices())
        .filter(|&v| !lat.is_boundary(v))
        .map(|v| (div[v] - rhs.map_or(0.0, |r| r[v])).abs())
        .fold(0.0, f64::max)
}

/// Normalized Dirichlet energy `|cube|^{-1} sum a(e) |grad v(e)|^2` over the
/// intrinsic edges of the boundary-connecting set of `a`.
pub fn dirichlet_energy(a: &Configuration, v: &VertexField) -> f64 {
    let lat = a.lattice();
    let lab = ClusterLabeling::new(a);
    let mut s = 0.0;
    for e in 0..lat.num_edges() {
        let (x, y) = lat.endpoints(e);
        if a.is_open(e) && lab.in_cbc(x) {
            let g = v.0[y] - v.0[x];
            s += g * g;
        }
    }
    s / lat.num_vertices() as f64
}

/// Flux form of the energy, `|cube|^{-1} <grad l_xi, a grad v>`.
pub fn flux_energy(a: &Configuration, v: &VertexField, xi: &[f64]) -> f64 {
    let lat = a.lattice();
    let mut s = 0.0;
    for e in 0..lat.num_edges() {
        if a.is_open(e) {
            let (x, y) = lat.endpoints(e);
            s += xi[lat.edge_axis(e)] * (v.0[y] - v.0[x]);
        }
    }
    s / lat.num_vertices() as f64
}

/// Energy of `a` in direction `xi`: solve, then evaluate.
pub fn energy(a: &Configuration, xi: &[f64]) -> Result<f64> {
    let (v, _) = solve_harmonic(a, xi)?;
    Ok(dirichlet_energy(a, &v))
}

/// Per-sample energies `E(a_i)` for samples `0..samples`.
pub fn energy_samples(
    lattice: &Arc<Lattice>,
    p: f64,
    xi: &[f64],
    samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<f64>> {
    check_direction(xi, lattice.dim())?;
    exec.try_map(samples, |i| {
        let a = sample(lattice.clone(), p, seed, i as u64)?;
        energy(&a, xi).map_err(|e| match e {
            Error::SolveFailed { .. } => Error::InvalidArgument(format!("sample {i}: {e}")),
            other => other,
        })
    })
}

/// Monte Carlo estimate of `xi . abar_m(p) xi` with its standard error.
pub fn conductivity(
    cube: &CubeSpec,
    p: f64,
    xi: &[f64],
    samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<Estimate> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let lat = Arc::new(Lattice::new(cube.clone()));
    let e = energy_samples(&lat, p, xi, samples, seed, exec)?;
    Ok(Estimate::from_samples(&e))
}

/// The norms entering the Meyers-type inequality on one cube.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeyersReport {
    /// `L^{2+eps}` gradient norm on the enlarged cluster of `(4/3)cube`.
    pub lhs: f64,
    /// `L^2` gradient norm on the enlarged cluster of `rr cube`.
    pub rhs_gradient: f64,
    /// `L^{2+eps}` norm of `w` on the same set.
    pub rhs_source: f64,
    /// `lhs / (rhs_gradient + rhs_source)`, `None` when the denominator vanishes.
    pub ratio: Option<f64>,
}

fn cluster_norm(a: &Configuration, set: &[usize], f: &[f64], power: f64, volume: f64) -> f64 {
    let lat = a.lattice();
    let mut mask = vec![false; lat.num_vertices()];
    for &v in set {
        mask[v] = true;
    }
    let mut s = 0.0;
    for e in 0..lat.num_edges() {
        let (x, y) = lat.endpoints(e);
        if a.is_open(e) && mask[x] && mask[y] {
            s += f[e].abs().powf(power);
        }
    }
    (s / volume).powf(1.0 / power)
}

/// Evaluates both sides of the Meyers-type inequality for `(v, w)` on the
/// cube `base` of the configuration's cube, with enlargement factor `rr`.
pub fn meyers_diagnostic(
    a: &Configuration,
    base: &CubeSpec,
    rr: Ratio<i64>,
    epsilon: f64,
    v: &VertexField,
    w: &EdgeField,
) -> Result<MeyersReport> {
    let lat = a.lattice();
    let inner = enlarged_cluster(a, base, Ratio::new(4, 3)).map_err(|_| {
        Error::OutOfDomain("not applicable: base cube is not well-connected".into())
    })?;
    let outer = enlarged_cluster(a, base, rr)?;
    let grad = EdgeField::gradient(lat, v);
    let vol43 = base.scaled(Ratio::new(4, 3)).region().volume() as f64;
    let vol_rr = base.scaled(rr).region().volume() as f64;
    let q = 2.0 + epsilon;
    let lhs = cluster_norm(a, &inner, &grad.0, q, vol43);
    let rhs_gradient = cluster_norm(a, &outer, &grad.0, 2.0, vol_rr);
    let rhs_source = cluster_norm(a, &outer, &w.0, q, vol_rr);
    let den = rhs_gradient + rhs_source;
    Ok(MeyersReport {
        lhs,
        rhs_gradient,
        rhs_source,
        ratio: (den > 0.0).then(|| lhs / den),
    })
}

/// Both sides of the weighted energy inequality over pyramid level `h`:
/// `sum_cells |cell|^alpha sum |grad v|^2` on the enlarged clusters of the
/// level-`h` cells, and `sum_cells |cell| sum |w|^2` over level `h + 1`.
pub fn weighted_energy_diagnostic(
    a: &Configuration,
    pp: &PyramidPartition,
    rr: Ratio<i64>,
    alpha: f64,
    h: usize,
    v: &VertexField,
    w: &EdgeField,
) -> Result<(f64, f64)> {
    let lat = a.lattice();
    let grad = EdgeField::gradient(lat, v);
    let side = |cells: &[CubeSpec], f: &[f64], weight: &dyn Fn(&CubeSpec) -> f64| -> Result<f64> {
        let mut total = 0.0;
        for cell in cells {
            let set = enlarged_cluster(a, cell, rr)?;
            let sq = cluster_norm(a, &set, f, 2.0, 1.0).powi(2);
            total += weight(cell) * sq;
        }
        Ok(total)
    };
    let lower = pp
        .level(h)
        .ok_or_else(|| Error::InvalidArgument(format!("no level {h}")))?;
    let lhs = side(lower, &grad.0, &|c| (c.volume() as f64).powf(alpha))?;
    let rhs = match pp.level(h + 1) {
        Some(upper) => side(upper, &w.0, &|c| c.volume() as f64)?,
        None => side(std::slice::from_ref(pp.root()), &w.0, &|c| {
            c.volume() as f64
        })?,
    };
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percolation::CouplingSample;

    fn lat(d: usize, m: u32) -> Arc<Lattice> {
        Arc::new(Lattice::new(CubeSpec::new(d, m).unwrap()))
    }

    #[test]
    fn all_open_is_affine() {
        let l = lat(2, 2);
        let a = Configuration::open(l.clone());
        let xi = [0.6, 0.8];
        let (v, _) = solve_harmonic(&a, &xi).unwrap();
        let ell = linear_function(&l, &xi);
        for i in 0..v.0.len() {
            assert!((v.0[i] - ell.0[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn endpoint_energy() {
        // 3x3 all open, xi = e1: six unit-gradient edges over nine vertices.
        let a = Configuration::open(lat(2, 1));
        let (v, _) = solve_harmonic(&a, &unit(2, 0)).unwrap();
        assert!((dirichlet_energy(&a, &v) - 6.0 / 9.0).abs() < 1e-15);
        let c = Configuration::closed(lat(2, 2));
        let (v, _) = solve_harmonic(&c, &unit(2, 1)).unwrap();
        assert_eq!(dirichlet_energy(&c, &v), 0.0);
    }

    #[test]
    fn rejects_non_unit_direction() {
        let a = Configuration::open(lat(2, 1));
        assert!(solve_harmonic(&a, &[1.0, 1.0]).is_err());
        assert!(solve_harmonic(&a, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn energy_forms_agree_and_bounded() {
        let l = lat(2, 3);
        for i in 0..20 {
            let a = sample(l.clone(), 0.6, 5, i).unwrap();
            let xi = unit(2, (i % 2) as usize);
            let (v, rep) = solve_harmonic(&a, &xi).unwrap();
            assert!(rep.relative_residual <= 1e-10);
            let e1 = dirichlet_energy(&a, &v);
            let e2 = flux_energy(&a, &v, &xi);
            assert!((e1 - e2).abs() <= 1e-10 * e1.max(1e-300));
            assert!((0.0..=2.0).contains(&e1));
            assert!(interior_residual(&a, &v, None) < 1e-8);
        }
    }

    #[test]
    fn coupled_energies_are_monotone() {
        let l = lat(2, 3);
        for i in 0..10 {
            let c = CouplingSample::new(l.clone(), 3, i);
            let lo = energy(&c.threshold(0.55).unwrap(), &unit(2, 0)).unwrap();
            let hi = energy(&c.threshold(0.65).unwrap(), &unit(2, 0)).unwrap();
            assert!(lo <= hi);
        }
    }

    #[test]
    fn poisson_zero_source() {
        let l = lat(2, 2);
        let a = sample(l.clone(), 0.7, 1, 0).unwrap();
        let (v, _) = solve_poisson(&a, &EdgeField::zeros(l.num_edges())).unwrap();
        assert_eq!(v.max_abs(), 0.0);
    }

    #[test]
    fn conductivity_at_p_one() {
        let cube = CubeSpec::new(2, 2).unwrap();
        let est = conductivity(&cube, 1.0, &unit(2, 0), 3, 0, Exec::Sequential).unwrap();
        assert!((est.mean - 8.0 / 9.0).abs() < 1e-14);
        assert_eq!(est.std_error, 0.0);
    }
}
