//! Glauber derivatives and the identities built on them.
//!
//! For a functional `f` of the environment and a finite edge set `G`, the
//! Glauber derivative is the alternating sum
//! `D_G f(a) = sum_{G' in G} (-1)^{|G \ G'|} f(a^{G'})`, where `a^{G'}`
//! opens every edge of `G'`. Every quantity in this module is an exact
//! enumeration of such sums. The harmonic function `v^H` of each perturbed
//! environment `a^H` is solved once, extended to the holes of `a^H` by the
//! canonical grains of the base environment `a`, and kept in a
//! [`SolveCache`].
//!
//! `D_G f(a) = 0` exactly as soon as one edge of `G` is open in `a`: the
//! environments `a^{G'}` and `a^{G' + e}` then coincide and the terms cancel
//! in pairs. Sums over perturbation sets therefore only visit sets of closed
//! edges, and return an exact zero otherwise.
//!
//! Conventions: `grad u(x, y) = u(y) - u(x)` on each edge oriented from tail
//! to head, `div F(x) = sum_y F(x, y)`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use num_rational::Ratio;
use serde::Serialize;

use crate::clusters::{enlarged_cluster, growth_split, intrinsic_edges, ClusterLabeling, Grain};
use crate::dirichlet::{
    check_direction, dirichlet_energy, flux_energy, interior_residual, linear_function,
    solve_on_cluster, EdgeField, SolverOptions, VertexField,
};
use crate::exec::Exec;
use crate::lattice::{ratio, CubeSpec, Lattice, Region};
use crate::partition::PyramidPartition;
use crate::percolation::{k_subsets, Configuration, EdgeSet};
use crate::{Error, Result};

/// Values that Glauber derivatives can be taken of: anything supporting
/// `self += c * other` and a matching zero.
pub trait Combine: Sized {
    /// The zero value of the same shape as `self`.
    fn zero_like(&self) -> Self;
    /// `self += c * other`.
    fn add_scaled(&mut self, c: f64, other: &Self);
}

impl Combine for f64 {
    fn zero_like(&self) -> f64 {
        0.0
    }
    fn add_scaled(&mut self, c: f64, other: &f64) {
        *self += c * other;
    }
}

impl Combine for Vec<f64> {
    fn zero_like(&self) -> Vec<f64> {
        vec![0.0; self.len()]
    }
    fn add_scaled(&mut self, c: f64, other: &Vec<f64>) {
        assert_eq!(self.len(), other.len(), "shape mismatch");
        for (x, y) in self.iter_mut().zip(other) {
            *x += c * y;
        }
    }
}

impl Combine for VertexField {
    fn zero_like(&self) -> VertexField {
        VertexField::zeros(self.0.len())
    }
    fn add_scaled(&mut self, c: f64, other: &VertexField) {
        self.0.add_scaled(c, &other.0);
    }
}

impl Combine for EdgeField {
    fn zero_like(&self) -> EdgeField {
        EdgeField::zeros(self.0.len())
    }
    fn add_scaled(&mut self, c: f64, other: &EdgeField) {
        self.0.add_scaled(c, &other.0);
    }
}

/// Enumeration limits. Exceeding one is an error, never a silent sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Budget {
    /// Largest `|F| + j` (equivalently largest `|G|` in `D_G`).
    pub max_order: usize,
    /// Largest `j` in `V(F, j)`.
    pub max_j: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_order: 4,
            max_j: 2,
        }
    }
}

impl Budget {
    fn check_order(&self, order: usize) -> Result<()> {
        if order > self.max_order {
            return Err(Error::BudgetExceeded {
                what: "derivative order",
                requested: order,
                limit: self.max_order,
            });
        }
        Ok(())
    }

    fn check_v(&self, f_len: usize, j: usize) -> Result<()> {
        if j > self.max_j {
            return Err(Error::BudgetExceeded {
                what: "j",
                requested: j,
                limit: self.max_j,
            });
        }
        self.check_order(f_len + j)
    }
}

fn parity(n: usize) -> f64 {
    if n % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `D_G f(a)` by direct enumeration of the `2^|G|` environments.
pub fn glauber_derivative<T, F>(f: F, a: &Configuration, g: &EdgeSet, budget: &Budget) -> Result<T>
where
    T: Combine,
    F: Fn(&Configuration) -> Result<T>,
{
    g.validate(a.num_edges())?;
    budget.check_order(g.len())?;
    let base = f(a)?;
    if g.iter().any(|e| a.is_open(e)) {
        return Ok(base.zero_like());
    }
    let mut acc = base.zero_like();
    acc.add_scaled(parity(g.len()), &base);
    for mask in 1..1usize << g.len() {
        let sub = g.subset(mask);
        let val = f(&a.with_open(sub.as_slice()))?;
        acc.add_scaled(parity(g.len() - sub.len()), &val);
    }
    Ok(acc)
}

/// A real functional of the environment.
pub type Functional<'a> = dyn Fn(&Configuration) -> Result<f64> + Sync + 'a;

/// Largest residuals of the elementary Glauber identities on one instance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct GlauberIdentityReport {
    /// `|f(a^G) - sum_{G' in G} D_{G'} f(a)|`.
    pub telescope: f64,
    /// `|D_G(fg) - sum_{G' in G} D_{G'} f(a) D_{G \ G'} g(a^{G'})|`.
    pub leibniz1: f64,
    /// `|D_G(fg) - sum_{G1 u G2 = G} D_{G1} f D_{G2} g|`.
    pub leibniz2: f64,
    /// Largest edgewise `|(a^G - a) - sum_{e in G} (a^e - a)|`.
    pub a_local: f64,
    /// Largest `|D_e D_e f + D_e f|` over `e in G`.
    pub idempotent: f64,
    /// Largest `|D_e D_e' f - D_e' D_e f|` and `|D_e D_e' f - D_{e,e'} f|`
    /// over pairs of `G`.
    pub commute: f64,
}

impl GlauberIdentityReport {
    /// Largest of all residuals.
    pub fn max(&self) -> f64 {
        [
            self.telescope,
            self.leibniz1,
            self.leibniz2,
            self.a_local,
            self.idempotent,
            self.commute,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn single_difference<'a>(
    f: &'a Functional<'a>,
    e: usize,
) -> impl Fn(&Configuration) -> Result<f64> + Sync + 'a {
    move |b: &Configuration| Ok(f(&b.with_open(&[e]))? - f(b)?)
}

/// Checks telescoping, both Leibniz rules, locality of `a`, `D_e D_e = -D_e`
/// and commutativity for the functionals `f`, `g` and the edge set `G`.
pub fn verify_glauber_identities(
    a: &Configuration,
    g: &EdgeSet,
    f: &Functional<'_>,
    gf: &Functional<'_>,
    budget: &Budget,
) -> Result<GlauberIdentityReport> {
    g.validate(a.num_edges())?;
    budget.check_order(g.len())?;
    let n = g.len();
    let full = (1usize << n) - 1;
    let d = |fun: &Functional<'_>, base: &Configuration, set: &EdgeSet| {
        glauber_derivative(fun, base, set, budget)
    };
    let product = |b: &Configuration| Ok(f(b)? * gf(b)?);
    let mut report = GlauberIdentityReport::default();

    let df: Vec<f64> = (0..=full)
        .map(|m| d(f, a, &g.subset(m)))
        .collect::<Result<_>>()?;
    let dg: Vec<f64> = (0..=full)
        .map(|m| d(gf, a, &g.subset(m)))
        .collect::<Result<_>>()?;

    let ag = a.with_open(g.as_slice());
    report.telescope = (f(&ag)? - df.iter().sum::<f64>()).abs();

    let dfg = glauber_derivative(product, a, g, budget)?;
    let mut l1 = 0.0;
    for m in 0..=full {
        let shifted = a.with_open(g.subset(m).as_slice());
        l1 += df[m] * d(gf, &shifted, &g.subset(full & !m))?;
    }
    report.leibniz1 = (dfg - l1).abs();

    let mut l2 = 0.0;
    for m1 in 0..=full {
        for m2 in 0..=full {
            if m1 | m2 == full {
                l2 += df[m1] * dg[m2];
            }
        }
    }
    report.leibniz2 = (dfg - l2).abs();

    let mut local = 0.0f64;
    for e in 0..a.num_edges() {
        let lhs = ag.weight(e) - a.weight(e);
        let rhs: f64 = g
            .iter()
            .map(|x| a.with_open(&[x]).weight(e) - a.weight(e))
            .sum();
        local = local.max((lhs - rhs).abs());
    }
    report.a_local = local;

    for e in g.iter() {
        let de = single_difference(f, e);
        let dede = single_difference(&de, e);
        report.idempotent = report.idempotent.max((dede(a)? + de(a)?).abs());
    }
    for (i, e1) in g.iter().enumerate() {
        for e2 in g.iter().skip(i + 1) {
            let d1 = single_difference(f, e1);
            let d2 = single_difference(f, e2);
            let d21 = single_difference(&d1, e2)(a)?;
            let d12 = single_difference(&d2, e1)(a)?;
            let joint = d(f, a, &EdgeSet::from_sorted(vec![e1, e2]))?;
            report.commute = report
                .commute
                .max((d21 - d12).abs())
                .max((d21 - joint).abs());
        }
    }
    Ok(report)
}

/// Solutions keyed by configuration hash, with the configurations kept to
/// resolve collisions.
type CacheBuckets = HashMap<u64, Vec<(Configuration, Arc<VertexField>)>>;

/// Solutions of perturbed environments keyed by the configuration
/// fingerprint, with a full bit-array comparison on fingerprint collision.
///
/// Entries are revalidated on insertion: a field is stored only if its
/// interior residual passes the tolerance. Concurrent inserts of the same
/// key are benign. Every writer stores the same deterministic solution, and
/// the last one wins.
#[derive(Debug, Default)]
pub struct SolveCache {
    map: RwLock<CacheBuckets>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl SolveCache {
    /// An empty cache.
    pub fn new() -> SolveCache {
        SolveCache::default()
    }

    /// The stored solution for `b`, if any.
    pub fn get(&self, b: &Configuration) -> Option<Arc<VertexField>> {
        let map = self.map.read().expect("cache lock poisoned");
        let found = map
            .get(&b.fingerprint())
            .and_then(|bucket| bucket.iter().find(|(c, _)| c == b).map(|(_, v)| v.clone()));
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    /// Stores `v` as the solution for `b` after checking that
    /// `max |div(b grad v)| <= tolerance * (1 + max |v|)` at interior
    /// vertices. Returns the stored field.
    pub fn insert(
        &self,
        b: Configuration,
        v: VertexField,
        tolerance: f64,
    ) -> Result<Arc<VertexField>> {
        let residual = interior_residual(&b, &v, None);
        if residual > tolerance * (1.0 + v.max_abs()) {
            return Err(Error::SolveFailed {
                iterations: 0,
                residual,
            });
        }
        let v = Arc::new(v);
        let mut map = self.map.write().expect("cache lock poisoned");
        let bucket = map.entry(b.fingerprint()).or_default();
        match bucket.iter_mut().find(|(c, _)| *c == b) {
            Some(slot) => slot.1 = v.clone(),
            None => bucket.push((b, v.clone())),
        }
        Ok(v)
    }

    /// Number of stored environments.
    pub fn len(&self) -> usize {
        self.map
            .read()
            .expect("cache lock poisoned")
            .values()
            .map(Vec::len)
            .sum()
    }

    /// Whether nothing is stored.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lookups that found an entry.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    /// Lookups that found nothing.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

/// Relative solver tolerance used for identity checks. Tighter than the
/// energy default so that `1e-8` checks keep a wide margin.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

/// Residual bound applied when a solution enters the cache, relative to
/// `1 + max |v|`.
pub const REVALIDATION_TOLERANCE: f64 = 1e-9;

/// Scalings of the hole-separation geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HoleGeometry {
    /// Factor of the cube whose edges carry no Glauber derivative.
    pub rr: Ratio<i64>,
    /// Factor of the cube on which the local decomposition is checked.
    pub near: Ratio<i64>,
}

impl Default for HoleGeometry {
    fn default() -> Self {
        HoleGeometry {
            rr: ratio(19, 10),
            near: ratio(16, 15),
        }
    }
}

/// A base environment `a` with direction `xi`: the harmonic functions
/// `v^H` of all perturbations `a^H`, and the sums built from them.
#[derive(Debug)]
pub struct GlauberEnv {
    a: Configuration,
    xi: Vec<f64>,
    base_cbc: Vec<bool>,
    boundary: Vec<f64>,
    options: SolverOptions,
    budget: Budget,
    exec: Exec,
    cache: SolveCache,
}

impl GlauberEnv {
    /// Environment with the identity tolerance, default budgets and the
    /// parallel executor.
    pub fn new(a: Configuration, xi: &[f64]) -> Result<GlauberEnv> {
        let options = SolverOptions {
            tolerance: IDENTITY_TOLERANCE,
            ..SolverOptions::default()
        };
        GlauberEnv::with_settings(a, xi, options, Budget::default(), Exec::default())
    }

    /// Environment with explicit solver options, budgets and executor.
    pub fn with_settings(
        a: Configuration,
        xi: &[f64],
        options: SolverOptions,
        budget: Budget,
        exec: Exec,
    ) -> Result<GlauberEnv> {
        check_direction(xi, a.lattice().dim())?;
        let base_cbc = ClusterLabeling::new(&a).cbc_mask();
        let boundary = linear_function(a.lattice(), xi).0;
        Ok(GlauberEnv {
            a,
            xi: xi.to_vec(),
            base_cbc,
            boundary,
            options,
            budget,
            exec,
            cache: SolveCache::new(),
        })
    }

    /// The base environment.
    pub fn config(&self) -> &Configuration {
        &self.a
    }

    /// The lattice of the base environment.
    pub fn lattice(&self) -> &Arc<Lattice> {
        self.a.lattice()
    }

    /// The direction `xi`.
    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    /// The enumeration budget.
    pub fn budget(&self) -> &Budget {
        &self.budget
    }

    /// The solve cache.
    pub fn cache(&self) -> &SolveCache {
        &self.cache
    }

    /// Indicator of the boundary-connecting set of the base environment.
    pub fn base_cbc(&self) -> &[bool] {
        &self.base_cbc
    }

    /// Closed edges of the base environment.
    pub fn closed_edges(&self) -> Vec<usize> {
        self.a.closed_edges()
    }

    /// `v^H`: the harmonic function of `a^H` with boundary data `l_xi`,
    /// extended to the holes of `a^H` by canonical grains of `a`.
    pub fn solution(&self, h: &EdgeSet) -> Result<Arc<VertexField>> {
        let b = self.a.with_open(h.as_slice());
        if let Some(v) = self.cache.get(&b) {
            return Ok(v);
        }
        let sol = solve_on_cluster(&b, &self.boundary, None, &self.options)?;
        let v = sol.extend(b.lattice(), &self.base_cbc);
        self.cache.insert(b, v, REVALIDATION_TOLERANCE)
    }

    /// Energy `|cube|^{-1} sum_e a^H(e) |grad v^H(e)|^2` of `a^H`.
    pub fn energy_at(&self, h: &EdgeSet) -> Result<f64> {
        let v = self.solution(h)?;
        Ok(dirichlet_energy(&self.a.with_open(h.as_slice()), &v))
    }

    /// `(D_G v)(a^H) = sum_{G' in G} (-1)^{|G \ G'|} v^{H u G'}`.
    pub fn derivative_at(&self, h: &EdgeSet, g: &EdgeSet) -> Result<VertexField> {
        g.validate(self.a.num_edges())?;
        h.validate(self.a.num_edges())?;
        self.budget.check_order(g.len())?;
        let n = self.lattice().num_vertices();
        if g.iter().any(|e| self.a.is_open(e) || h.contains(e)) {
            return Ok(VertexField::zeros(n));
        }
        let mut acc = VertexField::zeros(n);
        for mask in 0..1usize << g.len() {
            let sub = g.subset(mask);
            acc.axpy(
                parity(g.len() - sub.len()),
                &*self.solution(&h.union(&sub))?,
            );
        }
        Ok(acc)
    }

    /// `D_F v` at the base environment.
    pub fn derivative(&self, f: &EdgeSet) -> Result<VertexField> {
        self.derivative_at(&EdgeSet::empty(), f)
    }

    /// `V(F, j) = sum_{|G| = j, G in E \ F} D_{F u G} v`; zero for `j < 0`.
    pub fn big_v(&self, f: &EdgeSet, j: i64) -> Result<VertexField> {
        self.big_v_excluding(f, j, &[])
    }

    /// `V(F, j | E')`: as [`GlauberEnv::big_v`] with `G` also avoiding the
    /// sorted edge list `excluded`.
    pub fn big_v_excluding(&self, f: &EdgeSet, j: i64, excluded: &[usize]) -> Result<VertexField> {
        let n = self.lattice().num_vertices();
        if j < 0 {
            return Ok(VertexField::zeros(n));
        }
        f.validate(self.a.num_edges())?;
        self.budget.check_v(f.len(), j as usize)?;
        if f.iter().any(|e| self.a.is_open(e)) {
            return Ok(VertexField::zeros(n));
        }
        let pool: Vec<usize> = self
            .a
            .closed_edges()
            .into_iter()
            .filter(|&e| !f.contains(e) && excluded.binary_search(&e).is_err())
            .collect();
        let sets = k_subsets(&pool, j as usize);
        self.sum_derivatives(f, &sets)
    }

    /// `V(F, j | cube)`: `G` avoids the edges of `region` clamped to the
    /// lattice (typically `rr * cube`).
    pub fn big_v_hole(&self, f: &EdgeSet, j: i64, region: &Region) -> Result<VertexField> {
        let excluded = self.lattice().edges_in(region);
        self.big_v_excluding(f, j, &excluded)
    }

    fn sum_derivatives(&self, f: &EdgeSet, sets: &[EdgeSet]) -> Result<VertexField> {
        const CHUNK: usize = 32;
        let n = self.lattice().num_vertices();
        let parts = self.exec.try_map(sets.len().div_ceil(CHUNK), |c| {
            let mut acc = VertexField::zeros(n);
            for g in &sets[c * CHUNK..((c + 1) * CHUNK).min(sets.len())] {
                acc.axpy(1.0, &self.derivative(&f.union(g))?);
            }
            Ok(acc)
        })?;
        let mut total = VertexField::zeros(n);
        for p in &parts {
            total.axpy(1.0, p);
        }
        Ok(total)
    }

    /// Grain map `x -> [x]^H` relative to the base environment.
    pub fn grain(&self, h: &EdgeSet) -> Grain {
        let pert = ClusterLabeling::new(&self.a.with_open(h.as_slice()));
        Grain::from_parts(self.lattice(), &self.base_cbc, &pert)
    }

    /// Anchored spatial difference
    /// `sum_{G in F_circ} (-1)^{|F_circ \ G|} field([x]^{anchor u G})` at
    /// every vertex. With an empty anchor this is the plain higher-order
    /// spatial difference along canonical grains.
    pub fn spatial_difference(
        &self,
        anchor: &EdgeSet,
        f_circ: &EdgeSet,
        field: &VertexField,
    ) -> Result<VertexField> {
        f_circ.validate(self.a.num_edges())?;
        self.budget.check_order(f_circ.len())?;
        let n = self.lattice().num_vertices();
        let mut out = VertexField::zeros(n);
        for mask in 0..1usize << f_circ.len() {
            let sub = f_circ.subset(mask);
            let grain = self.grain(&anchor.union(&sub));
            let s = parity(f_circ.len() - sub.len());
            for x in 0..n {
                out.0[x] += s * field.0[grain.get(x)];
            }
        }
        Ok(out)
    }
}

/// [`GlauberEnv::spatial_difference`] at a single vertex `x`.
pub fn spatial_difference_at(
    env: &GlauberEnv,
    anchor: &EdgeSet,
    f_circ: &EdgeSet,
    field: &VertexField,
    x: usize,
) -> Result<f64> {
    Ok(env.spatial_difference(anchor, f_circ, field)?.0[x])
}

/// Outcome of the growth-decomposition checks for one perturbation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthReport {
    /// Edges of `F` inside the boundary-connecting set of `a^F`.
    pub f_star: Vec<usize>,
    /// The remaining edges of `F`.
    pub f_circ: Vec<usize>,
    /// `max_x |D_F v(x) - (grad_{F_circ} D_{F_star} v)(x)|`.
    pub decomposition: f64,
    /// `max |D_F v|` on the boundary-connecting set of `a^F` when
    /// `F_circ` is non-empty.
    pub null_cluster: f64,
    /// Points where the first cancellation clause applies.
    pub null_cluster_points: usize,
    /// `max |D_F v(x)|` over holes `x` of `a^F` whose `a^{F_circ}`-cluster
    /// does not contain every edge of `F_circ`.
    pub null_hole: f64,
    /// Points where the second cancellation clause applies.
    pub null_hole_points: usize,
    /// `max |D_F v|`, for scale.
    pub scale: f64,
}

impl GrowthReport {
    /// Largest residual of the three checks.
    pub fn max(&self) -> f64 {
        self.decomposition
            .max(self.null_cluster)
            .max(self.null_hole)
    }
}

fn contains_all(lab: &ClusterLabeling, lat: &Lattice, x: usize, edges: &EdgeSet) -> bool {
    edges.iter().all(|e| {
        let (u, w) = lat.endpoints(e);
        lab.label(u) == lab.label(x) && lab.label(w) == lab.label(x)
    })
}

/// Checks `D_F v = grad_{F_circ} D_{F_star} v` at every vertex, with
/// grains anchored at `[x]^{F_star u G}`, together with its two
/// cancellation clauses.
pub fn verify_growth_decomposition(env: &GlauberEnv, f: &EdgeSet) -> Result<GrowthReport> {
    let a = env.config();
    let lat = env.lattice();
    let split = growth_split(a, f)?;
    let dfv = env.derivative(f)?;
    let dstar = env.derivative(&split.f_star)?;
    let rhs = env.spatial_difference(&split.f_star, &split.f_circ, &dstar)?;
    let decomposition = (0..dfv.0.len())
        .map(|x| (dfv.0[x] - rhs.0[x]).abs())
        .fold(0.0, f64::max);

    let lab_f = ClusterLabeling::new(&a.with_open(f.as_slice()));
    let lab_circ = ClusterLabeling::new(&a.with_open(split.f_circ.as_slice()));
    let (mut null_cluster, mut null_cluster_points) = (0.0f64, 0);
    let (mut null_hole, mut null_hole_points) = (0.0f64, 0);
    for x in 0..lat.num_vertices() {
        if lab_f.in_cbc(x) {
            if !split.f_circ.is_empty() {
                null_cluster = null_cluster.max(dfv.0[x].abs());
                null_cluster_points += 1;
            }
        } else if !contains_all(&lab_circ, lat, x, &split.f_circ) {
            null_hole = null_hole.max(dfv.0[x].abs());
            null_hole_points += 1;
        }
    }
    Ok(GrowthReport {
        f_star: split.f_star.as_slice().to_vec(),
        f_circ: split.f_circ.as_slice().to_vec(),
        decomposition,
        null_cluster,
        null_cluster_points,
        null_hole,
        null_hole_points,
        scale: dfv.max_abs(),
    })
}

/// How the perturbation set of a source term relates to `F`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SetChange {
    /// `F` itself.
    Same,
    /// `F u {e}` for `e` outside `F`.
    AddEdge,
    /// `F \ {e}` for `e` in `F`.
    RemoveEdge,
}

/// One term `sign * (a^e - a) grad V(F', j + j_shift)` of the corrector
/// source `W(F, j)`, summed over `e` outside `F` or inside `F`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct WTerm {
    /// Whether `e` ranges over `F` (otherwise over its complement).
    pub e_in_f: bool,
    /// The perturbation set `F'`.
    pub change: SetChange,
    /// `j' - j`.
    pub j_shift: i64,
    /// `+1` or `-1`.
    pub sign: i64,
}

impl WTerm {
    /// `|F'| + 2 j'` for the given `|F|` and `j`.
    pub fn degree(&self, f_len: usize, j: i64) -> i64 {
        let size = f_len as i64
            + match self.change {
                SetChange::Same => 0,
                SetChange::AddEdge => 1,
                SetChange::RemoveEdge => -1,
            };
        size + 2 * (j + self.j_shift)
    }
}

/// The five terms of the corrector source `W(F, j)`.
pub const W_TERMS: [WTerm; 5] = [
    WTerm {
        e_in_f: false,
        change: SetChange::Same,
        j_shift: -1,
        sign: 1,
    },
    WTerm {
        e_in_f: false,
        change: SetChange::AddEdge,
        j_shift: -2,
        sign: -1,
    },
    WTerm {
        e_in_f: false,
        change: SetChange::AddEdge,
        j_shift: -1,
        sign: 1,
    },
    WTerm {
        e_in_f: true,
        change: SetChange::RemoveEdge,
        j_shift: 0,
        sign: 1,
    },
    WTerm {
        e_in_f: true,
        change: SetChange::Same,
        j_shift: -1,
        sign: -1,
    },
];

/// The source `W(F, j)` of the perturbed corrector equation
/// `-div(a^F grad V(F, j)) = div W(F, j)`. Since `a^e - a` is the indicator
/// of `e` when `e` is closed and zero otherwise, `W` lives on closed edges.
pub fn corrector_source(env: &GlauberEnv, f: &EdgeSet, j: i64) -> Result<EdgeField> {
    let a = env.config();
    let lat = env.lattice();
    f.validate(a.num_edges())?;
    let mut w = EdgeField::zeros(lat.num_edges());
    let v_f_same: Vec<Option<EdgeField>> = W_TERMS
        .iter()
        .map(|t| match t.change {
            SetChange::Same if j + t.j_shift >= 0 => Some(
                env.big_v(f, j + t.j_shift)
                    .map(|v| EdgeField::gradient(lat, &v)),
            ),
            _ => None,
        })
        .map(Option::transpose)
        .collect::<Result<_>>()?;
    let closed: Vec<usize> = a.closed_edges();
    let values = env.exec.try_map(closed.len(), |i| {
        let e = closed[i];
        let in_f = f.contains(e);
        let mut s = 0.0;
        for (t, same) in W_TERMS.iter().zip(&v_f_same) {
            if t.e_in_f != in_f || j + t.j_shift < 0 {
                continue;
            }
            let g = match t.change {
                SetChange::Same => same.as_ref().expect("precomputed").0[e],
                SetChange::AddEdge => gradient_at(lat, &env.big_v(&f.with(e), j + t.j_shift)?, e),
                SetChange::RemoveEdge => {
                    gradient_at(lat, &env.big_v(&f.without(e), j + t.j_shift)?, e)
                }
            };
            s += t.sign as f64 * g;
        }
        Ok(s)
    })?;
    for (i, &e) in closed.iter().enumerate() {
        w.0[e] = values[i];
    }
    Ok(w)
}

fn gradient_at(lat: &Lattice, v: &VertexField, e: usize) -> f64 {
    let (x, y) = lat.endpoints(e);
    v.0[y] - v.0[x]
}

/// Residual of the perturbed corrector equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CorrectorReport {
    /// `max_x |div(a^F grad V(F, j))(x) + div W(F, j)(x)|` over interior `x`.
    pub residual: f64,
    /// `max(max |grad V|, max |W|)`.
    pub scale: f64,
}

impl CorrectorReport {
    /// `residual / (1 + scale)`.
    pub fn relative(&self) -> f64 {
        self.residual / (1.0 + self.scale)
    }
}

/// Evaluates the perturbed corrector equation for `V(F, j)`.
pub fn verify_corrector_equation(env: &GlauberEnv, f: &EdgeSet, j: i64) -> Result<CorrectorReport> {
    let lat = env.lattice();
    let v = env.big_v(f, j)?;
    let w = corrector_source(env, f, j)?;
    let af = env.config().with_open(f.as_slice());
    let rhs: Vec<f64> = w.divergence(lat).iter().map(|x| -x).collect();
    let residual = interior_residual(&af, &v, Some(&rhs));
    let scale = EdgeField::gradient(lat, &v).max_abs().max(w.max_abs());
    Ok(CorrectorReport { residual, scale })
}

/// Outcome of the hole-separation checks for one perturbation and cube.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HoleReport {
    /// `max |V(F, j) - sum_l sum_{|G| = l, G in E_d(rr cube) \ F} V(F u G, j - l | cube)|`.
    pub separation: f64,
    /// Whether `F` lies in `E_d(rr cube)`.
    pub f_inside: bool,
    /// Whether the grains on `near * cube` and the growth split of `F` are
    /// unchanged by every admissible far perturbation.
    pub far_stable: bool,
    /// `max |V(F, j | cube) - grad_{F_circ} V(F_star, j | cube)|` on
    /// `near * cube`, when both hypotheses hold.
    pub local: Option<f64>,
    /// Largest `|V(F, j | cube)|` where a local cancellation clause applies,
    /// when both hypotheses hold.
    pub local_null: Option<f64>,
    /// `max |V(F, j)|`, for scale.
    pub scale: f64,
}

/// Checks the hole-separation identity for `V(F, j)` and `cube`, and the
/// local decomposition on `near * cube` when its hypotheses hold.
///
/// The hypotheses are checked directly: `F` lies in `E_d(rr cube)`, and for
/// every far set `G'` (closed edges outside `F` and `E_d(rr cube)`,
/// `|G'| <= j`) and every `F' in F`, the grains `[x]^{F' u G'}` equal
/// `[x]^{F'}` on `near * cube` and the growth split of `F` over `a^{G'}`
/// equals the one over `a`.
pub fn verify_hole_separation(
    env: &GlauberEnv,
    f: &EdgeSet,
    j: i64,
    cube: &CubeSpec,
    geometry: &HoleGeometry,
) -> Result<HoleReport> {
    let a = env.config();
    let lat = env.lattice();
    f.validate(a.num_edges())?;
    let ambient = lat.region().clone();
    let inner = cube
        .scaled(geometry.rr)
        .clamped(&ambient)
        .ok_or_else(|| Error::InvalidRegion("cube does not meet the lattice".into()))?;
    let near = cube
        .scaled(geometry.near)
        .clamped(&ambient)
        .ok_or_else(|| Error::InvalidRegion("cube does not meet the lattice".into()))?;
    let excluded = lat.edges_in(&inner);

    let lhs = env.big_v(f, j)?;
    let n = lat.num_vertices();
    let mut rhs = VertexField::zeros(n);
    if j >= 0 {
        let local_pool: Vec<usize> = excluded
            .iter()
            .copied()
            .filter(|&e| !f.contains(e) && !a.is_open(e))
            .collect();
        for l in 0..=j {
            for g in k_subsets(&local_pool, l as usize) {
                rhs.axpy(1.0, &env.big_v_excluding(&f.union(&g), j - l, &excluded)?);
            }
        }
    }
    let separation = (0..n)
        .map(|x| (lhs.0[x] - rhs.0[x]).abs())
        .fold(0.0, f64::max);

    let f_inside = f.iter().all(|e| excluded.binary_search(&e).is_ok());
    let far_stable = f_inside && far_stable(env, f, j, &excluded, &near)?;
    let (local, local_null) = if far_stable {
        let (l, z) = local_decomposition(env, f, j, &excluded, &near)?;
        (Some(l), Some(z))
    } else {
        (None, None)
    };
    Ok(HoleReport {
        separation,
        f_inside,
        far_stable,
        local,
        local_null,
        scale: lhs.max_abs(),
    })
}

fn far_stable(
    env: &GlauberEnv,
    f: &EdgeSet,
    j: i64,
    excluded: &[usize],
    near: &Region,
) -> Result<bool> {
    let a = env.config();
    let lat = env.lattice();
    let near_pts = lat.vertices_in(near);
    let far: Vec<usize> = a
        .closed_edges()
        .into_iter()
        .filter(|&e| !f.contains(e) && excluded.binary_search(&e).is_err())
        .collect();
    let split = growth_split(a, f)?;
    let reference: Vec<Grain> = f.subsets().map(|sub| env.grain(&sub)).collect();
    for size in 1..=j.max(0) as usize {
        for g in k_subsets(&far, size) {
            let shifted = a.with_open(g.as_slice());
            if growth_split(&shifted, f)?.f_star != split.f_star {
                return Ok(false);
            }
            for (mask, grain) in reference.iter().enumerate() {
                let moved = env.grain(&f.subset(mask).union(&g));
                if near_pts.iter().any(|&x| moved.get(x) != grain.get(x)) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

fn local_decomposition(
    env: &GlauberEnv,
    f: &EdgeSet,
    j: i64,
    excluded: &[usize],
    near: &Region,
) -> Result<(f64, f64)> {
    let a = env.config();
    let lat = env.lattice();
    let split = growth_split(a, f)?;
    let vf = env.big_v_excluding(f, j, excluded)?;
    let vstar = env.big_v_excluding(&split.f_star, j, excluded)?;
    let rhs = env.spatial_difference(&split.f_star, &split.f_circ, &vstar)?;
    let lab_f = ClusterLabeling::new(&a.with_open(f.as_slice()));
    let lab_circ = ClusterLabeling::new(&a.with_open(split.f_circ.as_slice()));
    let (mut local, mut null) = (0.0f64, 0.0f64);
    for x in lat.vertices_in(near) {
        local = local.max((vf.0[x] - rhs.0[x]).abs());
        let vanishes = if lab_f.in_cbc(x) {
            !split.f_circ.is_empty()
        } else {
            !contains_all(&lab_circ, lat, x, &split.f_circ)
        };
        if vanishes {
            null = null.max(vf.0[x].abs());
        }
    }
    Ok((local, null))
}

/// `sum_{|G| = k-1} (D_G grad v)(a^e)` as an edge field.
pub fn vm_sum(env: &GlauberEnv, e: usize, k: usize) -> Result<EdgeField> {
    let lat = env.lattice();
    let a = env.config();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    env.budget().check_v(0, k - 1)?;
    let base = EdgeSet::single(e);
    let pool: Vec<usize> = a.closed_edges().into_iter().filter(|&x| x != e).collect();
    let mut acc = VertexField::zeros(lat.num_vertices());
    for g in k_subsets(&pool, k - 1) {
        acc.axpy(1.0, &env.derivative_at(&base, &g)?);
    }
    Ok(EdgeField::gradient(lat, &acc))
}

/// Largest edgewise residual of
/// `sum_{|G| = k-1} (D_G grad v)(a^e) = grad V(0, k-1) + grad V({e}, k-1) - grad V({e}, k-2)`.
pub fn verify_vm_simple(env: &GlauberEnv, e: usize, k: usize) -> Result<f64> {
    let lat = env.lattice();
    let lhs = vm_sum(env, e, k)?;
    let k = k as i64;
    let single = EdgeSet::single(e);
    let mut rhs = env.big_v(&EdgeSet::empty(), k - 1)?;
    rhs.axpy(1.0, &env.big_v(&single, k - 1)?);
    rhs.axpy(-1.0, &env.big_v(&single, k - 2)?);
    let rhs = EdgeField::gradient(lat, &rhs);
    Ok((0..lhs.0.len())
        .map(|i| (lhs.0[i] - rhs.0[i]).abs())
        .fold(0.0, f64::max))
}

/// Both sides of the expansion of `sum_{|F| = k} D_F E` for the energy `E`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DfmuReport {
    /// `sum_{|F| = k} D_F E(a)` by enumeration of energies.
    pub lhs: f64,
    /// `|cube|^{-1} <grad l, a V(0, k)> + |cube|^{-1} sum_e <grad l, (a^e - a) vm_sum(e, k)>`.
    pub rhs: f64,
}

impl DfmuReport {
    /// `|lhs - rhs|`.
    pub fn residual(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Evaluates both sides of the energy-derivative expansion for order `k >= 1`.
pub fn verify_dfmu(env: &GlauberEnv, k: usize) -> Result<DfmuReport> {
    let a = env.config();
    let lat = env.lattice();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    env.budget().check_order(k)?;
    let closed = a.closed_edges();
    let mut lhs = 0.0;
    for f in k_subsets(&closed, k) {
        for mask in 0..1usize << k {
            let sub = f.subset(mask);
            lhs += parity(k - sub.len()) * env.energy_at(&sub)?;
        }
    }
    let vk = env.big_v(&EdgeSet::empty(), k as i64)?;
    let mut rhs = flux_energy(a, &vk, env.xi());
    let volume = lat.num_vertices() as f64;
    for &e in &closed {
        let s = vm_sum(env, e, k)?;
        rhs += env.xi()[lat.edge_axis(e)] * s.0[e] / volume;
    }
    Ok(DfmuReport { lhs, rhs })
}

/// Which improved energy to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EnergyVariant {
    /// `V(F, j)` on all edges, or on `E_d(rr cube)` for each cell when a
    /// pyramid is given.
    Plain,
    /// `V(F, j)` on the intrinsic edges of the enlarged cluster of `rr cube`
    /// in `a^F`.
    Cluster,
    /// `V(F, j | cube)` on `E_d(near * cube)`.
    Hole,
}

/// Parameters of an improved energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImprovedEnergyRequest {
    /// `|F|`.
    pub i: usize,
    /// `j`.
    pub j: usize,
    /// Weight exponent `alpha >= 0` on `|cube|`.
    pub alpha: f64,
    /// Pyramid level of the cells.
    pub h: usize,
    /// Variant.
    pub variant: EnergyVariant,
    /// Scalings.
    pub geometry: HoleGeometry,
}

impl ImprovedEnergyRequest {
    /// The unweighted energy over all edges.
    pub fn plain(i: usize, j: usize) -> ImprovedEnergyRequest {
        ImprovedEnergyRequest {
            i,
            j,
            alpha: 0.0,
            h: 0,
            variant: EnergyVariant::Plain,
            geometry: HoleGeometry::default(),
        }
    }
}

fn cells_at(pp: &PyramidPartition, h: usize) -> Result<&[CubeSpec]> {
    if h == pp.depth() {
        return Ok(std::slice::from_ref(pp.root()));
    }
    pp.level(h)
        .ok_or_else(|| Error::InvalidArgument(format!("pyramid has no level {h}")))
}

fn squared_norm(grad: &EdgeField, edges: &[usize]) -> f64 {
    edges.iter().map(|&e| grad.0[e] * grad.0[e]).sum()
}

/// Evaluates the requested improved energy for the base environment:
/// `|cube_m|^{-1} sum_{|F| = i}` of the weighted squared gradient norms of
/// `V(F, j)` (or `V(F, j | cube)`). Sets `F` containing an open edge give
/// `V = 0` and are skipped.
pub fn improved_energy(
    env: &GlauberEnv,
    req: &ImprovedEnergyRequest,
    pp: Option<&PyramidPartition>,
) -> Result<f64> {
    let a = env.config();
    let lat = env.lattice();
    env.budget().check_v(req.i, req.j)?;
    if req.alpha < 0.0 {
        return Err(Error::InvalidArgument("alpha must be non-negative".into()));
    }
    let cells = match (req.variant, pp) {
        (EnergyVariant::Plain, None) => None,
        (_, Some(pp)) => Some(cells_at(pp, req.h)?),
        (_, None) => {
            return Err(Error::InvalidArgument(
                "weighted variants need a pyramid".into(),
            ))
        }
    };
    let ambient = lat.region().clone();
    let clamp = |c: &CubeSpec, factor: Ratio<i64>| -> Result<Region> {
        c.scaled(factor)
            .clamped(&ambient)
            .ok_or_else(|| Error::InvalidRegion("cell does not meet the lattice".into()))
    };
    let sets = k_subsets(&a.closed_edges(), req.i);
    let j = req.j as i64;
    let terms = env.exec.try_map(sets.len(), |idx| {
        let f = &sets[idx];
        let Some(cells) = cells else {
            let grad = EdgeField::gradient(lat, &env.big_v(f, j)?);
            return Ok(grad.0.iter().map(|g| g * g).sum::<f64>());
        };
        let mut total = 0.0;
        let plain_grad = match req.variant {
            EnergyVariant::Hole => None,
            _ => Some(EdgeField::gradient(lat, &env.big_v(f, j)?)),
        };
        let af = a.with_open(f.as_slice());
        for cell in cells {
            let weight = (cell.volume() as f64).powf(req.alpha);
            let s = match req.variant {
                EnergyVariant::Plain => squared_norm(
                    plain_grad.as_ref().expect("plain"),
                    &lat.edges_in(&clamp(cell, req.geometry.rr)?),
                ),
                EnergyVariant::Cluster => {
                    let set = enlarged_cluster(&af, cell, req.geometry.rr)?;
                    let mut mask = vec![false; lat.num_vertices()];
                    for v in set {
                        mask[v] = true;
                    }
                    squared_norm(
                        plain_grad.as_ref().expect("plain"),
                        &intrinsic_edges(&af, &mask),
                    )
                }
                EnergyVariant::Hole => {
                    let v = env.big_v_hole(f, j, &clamp(cell, req.geometry.rr)?)?;
                    let grad = EdgeField::gradient(lat, &v);
                    squared_norm(&grad, &lat.edges_in(&clamp(cell, req.geometry.near)?))
                }
            };
            total += weight * s;
        }
        Ok(total)
    })?;
    Ok(terms.iter().sum::<f64>() / lat.num_vertices() as f64)
}

/// Both sides of the domination of the weighted energy by hole-separated
/// energies one level up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DominationReport {
    /// `I_{alpha, h}(i, j)`.
    pub lhs: f64,
    /// `(j + 1) sum_{l <= j} I~_{alpha + l + 1, h + 1}(i + l, j - l)`.
    pub rhs: f64,
}

impl DominationReport {
    /// Whether `lhs <= rhs`.
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

/// Evaluates both sides of the hole-domination inequality.
pub fn hole_domination(
    env: &GlauberEnv,
    i: usize,
    j: usize,
    alpha: f64,
    h: usize,
    pp: &PyramidPartition,
    geometry: &HoleGeometry,
) -> Result<DominationReport> {
    let lhs = improved_energy(
        env,
        &ImprovedEnergyRequest {
            i,
            j,
            alpha,
            h,
            variant: EnergyVariant::Plain,
            geometry: *geometry,
        },
        Some(pp),
    )?;
    let mut rhs = 0.0;
    for l in 0..=j {
        rhs += improved_energy(
            env,
            &ImprovedEnergyRequest {
                i: i + l,
                j: j - l,
                alpha: alpha + l as f64 + 1.0,
                h: h + 1,
                variant: EnergyVariant::Hole,
                geometry: *geometry,
            },
            Some(pp),
        )?;
    }
    Ok(DominationReport {
        lhs,
        rhs: (j + 1) as f64 * rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirichlet::unit;
    use crate::percolation::sample;

    fn lat(d: usize, m: u32) -> Arc<Lattice> {
        Arc::new(Lattice::new(CubeSpec::new(d, m).unwrap()))
    }

    #[test]
    fn derivative_of_open_edge_is_zero() {
        let l = lat(2, 1);
        let a = Configuration::open(l);
        let f = |b: &Configuration| Ok(b.num_open() as f64);
        let d: f64 = glauber_derivative(f, &a, &EdgeSet::single(0), &Budget::default()).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn constant_functional_has_zero_derivatives() {
        let a = Configuration::closed(lat(2, 1));
        let g = EdgeSet::new(vec![0, 3, 5]).unwrap();
        let d: f64 =
            glauber_derivative(|_: &Configuration| Ok(2.5), &a, &g, &Budget::default()).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn budget_is_enforced() {
        let a = Configuration::closed(lat(2, 1));
        let g = EdgeSet::new(vec![0, 1, 2, 3, 4]).unwrap();
        let err = glauber_derivative(|_: &Configuration| Ok(0.0), &a, &g, &Budget::default())
            .unwrap_err();
        assert!(matches!(
            err,
            Error::BudgetExceeded {
                what: "derivative order",
                ..
            }
        ));
    }

    #[test]
    fn v_conventions() {
        let a = sample(lat(2, 1), 0.5, 3, 0).unwrap();
        let env = GlauberEnv::new(a, &unit(2, 0)).unwrap();
        let v0 = env.big_v(&EdgeSet::empty(), 0).unwrap();
        assert_eq!(v0, *env.solution(&EdgeSet::empty()).unwrap());
        assert_eq!(env.big_v(&EdgeSet::single(1), -1).unwrap().max_abs(), 0.0);
        let err = env.big_v(&EdgeSet::empty(), 3).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { what: "j", .. }));
    }

    #[test]
    fn w_degrees_decrease() {
        for f_len in 0..4 {
            for j in 0..3 {
                for t in &W_TERMS {
                    assert!(t.degree(f_len, j) < f_len as i64 + 2 * j);
                }
            }
        }
    }

    #[test]
    fn corrector_source_trivial_cases() {
        let a = sample(lat(2, 1), 0.5, 11, 2).unwrap();
        let env = GlauberEnv::new(a.clone(), &unit(2, 1)).unwrap();
        let w = corrector_source(&env, &EdgeSet::empty(), 0).unwrap();
        assert_eq!(w.max_abs(), 0.0);
        let e = a.closed_edges()[0];
        let w = corrector_source(&env, &EdgeSet::single(e), 0).unwrap();
        let grad = EdgeField::gradient(env.lattice(), &env.solution(&EdgeSet::empty()).unwrap());
        for x in 0..w.0.len() {
            let expected = if x == e { grad.0[e] } else { 0.0 };
            assert_eq!(w.0[x], expected);
        }
    }

    #[test]
    fn cache_revalidates() {
        let a = Configuration::open(lat(2, 1));
        let cache = SolveCache::new();
        let bad = VertexField(vec![0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(cache
            .insert(a.clone(), bad, REVALIDATION_TOLERANCE)
            .is_err());
        assert!(cache.is_empty());
    }
}
