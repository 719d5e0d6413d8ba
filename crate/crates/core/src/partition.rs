//! Partitions of good cubes into good subcubes.
//!
//! A [`GoodCubePredicate`] decides which triadic cubes are good. Given a
//! good parent cube, [`local_partition`] builds the partition whose cell at
//! `x` is the largest cube of `Gbar` containing `x` that has a successor
//! outside `Gbar`, where `Gbar` collects the cubes all of whose chain
//! relatives (the set `K`) are good. [`build_pyramid`] iterates the
//! construction with one predicate per level.
//!
//! Only cubes of side at least 3 take part in the construction, so a cube of
//! side 3 in `Gbar` is always a cell. A parent of side 1 is its own cell.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::clusters::{is_well_connected, very_well_connected_cluster, well_connected_cluster};
use crate::lattice::{pow3, CubeSpec, Region};
use crate::percolation::{binomial, k_subsets, Configuration};
use crate::{Error, Result};

type PredicateFn = dyn Fn(&Configuration, &CubeSpec) -> Result<bool> + Send + Sync;

/// A rule deciding whether a triadic cube is good under a configuration.
#[derive(Clone)]
pub struct GoodCubePredicate {
    name: String,
    locality_radius: Ratio<i64>,
    eval: Arc<PredicateFn>,
}

impl fmt::Debug for GoodCubePredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GoodCubePredicate")
            .field("name", &self.name)
            .field("locality_radius", &self.locality_radius)
            .finish()
    }
}

impl GoodCubePredicate {
    /// A predicate from a closure. `locality_radius` is the factor `c` such
    /// that the outcome depends only on edges inside `c` times the cube.
    pub fn new(
        name: impl Into<String>,
        locality_radius: Ratio<i64>,
        eval: impl Fn(&Configuration, &CubeSpec) -> Result<bool> + Send + Sync + 'static,
    ) -> GoodCubePredicate {
        GoodCubePredicate {
            name: name.into(),
            locality_radius,
            eval: Arc::new(eval),
        }
    }

    /// Every cube is good.
    pub fn always_true() -> GoodCubePredicate {
        GoodCubePredicate::new("always", Ratio::from_integer(1), |_, _| Ok(true))
    }

    /// Well-connectedness of the cube.
    pub fn well_connected() -> GoodCubePredicate {
        GoodCubePredicate::new("wc", Ratio::from_integer(1), |a, c| {
            is_well_connected(a, &c.region())
        })
    }

    /// Very-well-connectedness with side floor `floor`.
    pub fn very_well_connected(floor: i64) -> GoodCubePredicate {
        GoodCubePredicate::new(
            format!("vwc{floor}"),
            Ratio::from_integer(1),
            move |a, c| Ok(very_well_connected_cluster(a, c, floor)?.is_some()),
        )
    }

    /// The moment class `Lambda(inner, t, bound)`: the cube is good for
    /// `inner` and its local partition for `inner` passes [`lambda_check`].
    pub fn lambda(inner: GoodCubePredicate, t: f64, bound: f64) -> GoodCubePredicate {
        let name = format!("lambda({},{t},{bound})", inner.name);
        let radius = inner.locality_radius;
        GoodCubePredicate::new(name, radius, move |a, c| {
            if !inner.evaluate(a, c)? {
                return Ok(false);
            }
            lambda_check(a, c, &inner, t, bound)
        })
    }

    /// `inner` holds under `a^F` for every `F` of at most `n` edges of the
    /// cube (see [`n_stable_check`]).
    pub fn n_stable(inner: GoodCubePredicate, n: usize, budget: usize) -> GoodCubePredicate {
        let name = format!("stable{n}({})", inner.name);
        let radius = inner.locality_radius;
        GoodCubePredicate::new(name, radius, move |a, c| {
            Ok(n_stable_check(a, c, &inner, n, budget)?.stable)
        })
    }

    /// Identifier used in reports.
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Locality factor.
    pub fn locality_radius(&self) -> Ratio<i64> {
        self.locality_radius
    }

    /// Evaluates the predicate.
    pub fn evaluate(&self, a: &Configuration, cube: &CubeSpec) -> Result<bool> {
        (self.eval)(a, cube)
    }
}

/// Memoized evaluation of `G` and `Gbar` inside one root cube.
struct GoodCubes<'a> {
    a: &'a Configuration,
    pred: &'a GoodCubePredicate,
    root: CubeSpec,
    good: HashMap<CubeSpec, bool>,
    gbar: HashMap<CubeSpec, bool>,
}

impl<'a> GoodCubes<'a> {
    fn new(a: &'a Configuration, pred: &'a GoodCubePredicate, root: CubeSpec) -> GoodCubes<'a> {
        GoodCubes {
            a,
            pred,
            root,
            good: HashMap::new(),
            gbar: HashMap::new(),
        }
    }

    fn is_good(&mut self, q: &CubeSpec) -> Result<bool> {
        if let Some(&g) = self.good.get(q) {
            return Ok(g);
        }
        let g = self.pred.evaluate(self.a, q)?;
        self.good.insert(q.clone(), g);
        Ok(g)
    }

    /// First links of the chains defining `K(q)`: cubes `R` inside the root
    /// with `size(R) = 3 size(q)` and `dist(pred(R), q) <= 1`.
    fn first_links(&self, q: &CubeSpec) -> Vec<CubeSpec> {
        let l = q.level();
        let top = self.root.level();
        if l >= top {
            return Vec::new();
        }
        if l + 1 == top {
            return vec![self.root.clone()];
        }
        let grand = q.predecessor().predecessor();
        let step = pow3(l + 2);
        let d = q.dim();
        let offsets = Region::new(vec![-1; d], vec![1; d]).expect("box");
        let qr = q.region();
        let mut out = Vec::new();
        for o in offsets.points() {
            let center = grand
                .center()
                .iter()
                .zip(&o)
                .map(|(c, k)| c + k * step)
                .collect();
            let g2 = CubeSpec::with_center(l + 2, center).expect("triadic center");
            if g2.region().dist(&qr) > 1 {
                continue;
            }
            for r in g2.successors().expect("level at least 2") {
                if self.root.contains_cube(&r) {
                    out.push(r);
                }
            }
        }
        out
    }

    /// Membership in `Gbar`: `q` is good and so is every cube of `K(q)`.
    /// Uses `K(q) = {q} ∪ K(R)` over the first links `R` of `q`.
    fn in_gbar(&mut self, q: &CubeSpec) -> Result<bool> {
        if q.level() == 0 {
            return Ok(false);
        }
        if let Some(&g) = self.gbar.get(q) {
            return Ok(g);
        }
        let mut g = self.is_good(q)?;
        if g {
            for r in self.first_links(q) {
                if !self.in_gbar(&r)? {
                    g = false;
                    break;
                }
            }
        }
        self.gbar.insert(q.clone(), g);
        Ok(g)
    }

    fn collect_cells(&mut self, q: &CubeSpec, out: &mut Vec<CubeSpec>) -> Result<()> {
        if q.level() == 0 {
            out.push(q.clone());
            return Ok(());
        }
        let succ = q.successors()?;
        let mut all = true;
        for s in &succ {
            if !self.in_gbar(s)? {
                all = false;
                break;
            }
        }
        if !all {
            out.push(q.clone());
            return Ok(());
        }
        for s in &succ {
            self.collect_cells(s, out)?;
        }
        Ok(())
    }

    fn partition(&mut self) -> Result<LocalPartition> {
        let root = self.root.clone();
        if root.level() > 0 && !self.in_gbar(&root)? {
            return Err(Error::ParentNotGood);
        }
        if root.level() == 0 && !self.is_good(&root)? {
            return Err(Error::ParentNotGood);
        }
        let mut cells = Vec::new();
        self.collect_cells(&root, &mut cells)?;
        Ok(LocalPartition {
            parent: root,
            cells,
        })
    }
}

/// A partition of a parent cube into triadic cells.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LocalPartition {
    /// The partitioned cube.
    pub parent: CubeSpec,
    /// Cells in depth-first lexicographic order.
    pub cells: Vec<CubeSpec>,
}

impl LocalPartition {
    /// Index of the cell containing the point `x`.
    pub fn cell_of(&self, x: &[i64]) -> Option<usize> {
        self.cells.iter().position(|c| c.region().contains(x))
    }

    /// `|parent|^{-1} sum_x |cell(x)|^t`.
    pub fn moment(&self, t: f64) -> f64 {
        let total: f64 = self
            .cells
            .iter()
            .map(|c| {
                let v = c.volume() as f64;
                v * v.powf(t)
            })
            .sum();
        total / self.parent.volume() as f64
    }

    /// Largest cell side.
    pub fn max_side(&self) -> i64 {
        self.cells.iter().map(|c| c.side()).max().unwrap_or(0)
    }
}

/// The local partition of `parent` for the good cubes of `pred`.
pub fn local_partition(
    a: &Configuration,
    parent: &CubeSpec,
    pred: &GoodCubePredicate,
) -> Result<LocalPartition> {
    check_inside(a, parent)?;
    GoodCubes::new(a, pred, parent.clone()).partition()
}

fn check_inside(a: &Configuration, cube: &CubeSpec) -> Result<()> {
    let lat = a.lattice();
    if cube.dim() != lat.dim() || !lat.region().contains_region(&cube.region()) {
        return Err(Error::InvalidRegion(format!(
            "cube of side {} centered at {:?} is not inside the configuration's cube",
            cube.side(),
            cube.center()
        )));
    }
    Ok(())
}

/// Structural checks of a local partition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SoundnessReport {
    /// Cells lie in the parent, are pairwise disjoint and their volumes add up.
    pub disjoint_cover: bool,
    /// Every cell satisfies the predicate.
    pub all_good: bool,
    /// Largest side ratio between cells at `l^inf` distance at most 1.
    pub max_neighbor_ratio: f64,
}

impl SoundnessReport {
    /// Disjoint cover, goodness and neighbor ratio at most 3.
    pub fn passes(&self) -> bool {
        self.disjoint_cover && self.all_good && self.max_neighbor_ratio <= 3.0
    }
}

/// Checks that `part` is a disjoint cover of its parent by good cells whose
/// neighbors have comparable sizes.
pub fn partition_soundness(
    a: &Configuration,
    part: &LocalPartition,
    pred: &GoodCubePredicate,
) -> Result<SoundnessReport> {
    let regions: Vec<Region> = part.cells.iter().map(|c| c.region()).collect();
    let parent = part.parent.region();
    let volume: usize = part.cells.iter().map(|c| c.volume()).sum();
    let mut disjoint_cover =
        volume == part.parent.volume() && regions.iter().all(|r| parent.contains_region(r));
    let mut max_neighbor_ratio = 1.0f64;
    for i in 0..regions.len() {
        for j in i + 1..regions.len() {
            if regions[i].meets(&regions[j]) {
                disjoint_cover = false;
            }
            if regions[i].dist(&regions[j]) <= 1 {
                let (si, sj) = (part.cells[i].side() as f64, part.cells[j].side() as f64);
                max_neighbor_ratio = max_neighbor_ratio.max(si.max(sj) / si.min(sj));
            }
        }
    }
    let mut all_good = true;
    for c in &part.cells {
        all_good &= pred.evaluate(a, c)?;
    }
    Ok(SoundnessReport {
        disjoint_cover,
        all_good,
        max_neighbor_ratio,
    })
}

/// Quantities entering membership in the moment class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LambdaReport {
    /// `|cube|^{-1} sum_x |cell(x)|^t`; the smallest admissible constant.
    pub moment: f64,
    /// Largest cell side.
    pub max_side: i64,
    /// `size(cube)^{d / (d + t)}`.
    pub side_bound: f64,
}

impl LambdaReport {
    /// Whether both conditions hold with constant `bound`.
    pub fn passes(&self, bound: f64) -> bool {
        self.moment <= bound && self.max_side as f64 <= self.side_bound
    }
}

/// Moment and maximal-size data of the local partition of `cube`.
pub fn lambda_report(
    a: &Configuration,
    cube: &CubeSpec,
    pred: &GoodCubePredicate,
    t: f64,
) -> Result<LambdaReport> {
    let part = local_partition(a, cube, pred)?;
    let d = cube.dim() as f64;
    Ok(LambdaReport {
        moment: part.moment(t),
        max_side: part.max_side(),
        side_bound: (cube.side() as f64).powf(d / (d + t)),
    })
}

/// Whether `cube` (good for `pred`) satisfies the moment bound with
/// exponent `t` and constant `bound`, and the maximal cell-size bound.
pub fn lambda_check(
    a: &Configuration,
    cube: &CubeSpec,
    pred: &GoodCubePredicate,
    t: f64,
    bound: f64,
) -> Result<bool> {
    Ok(lambda_report(a, cube, pred, t)?.passes(bound))
}

/// Nested partitions of a root cube, one per predicate level.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PyramidPartition {
    root: CubeSpec,
    levels: Vec<Vec<CubeSpec>>,
    parents: Vec<Vec<usize>>,
}

impl PyramidPartition {
    /// The partitioned cube.
    pub fn root(&self) -> &CubeSpec {
        &self.root
    }

    /// Number of levels `k`.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Cells of level `h` (`0 <= h < k`).
    pub fn level(&self, h: usize) -> Option<&[CubeSpec]> {
        self.levels.get(h).map(|v| v.as_slice())
    }

    /// Index at level `h + 1` of the parent partition cube of cell `i` at
    /// level `h`; `None` on the top level.
    pub fn parent(&self, h: usize, i: usize) -> Option<usize> {
        self.parents.get(h).and_then(|p| p.get(i).copied())
    }

    /// Index of the level-`h` cell containing `x`.
    pub fn cell_of(&self, h: usize, x: &[i64]) -> Option<usize> {
        self.levels
            .get(h)?
            .iter()
            .position(|c| c.region().contains(x))
    }
}

/// Builds the pyramid with `preds[h]` the good cubes of level `h`
/// (`0 <= h < k`). The top level is the local partition of `root` for
/// `preds[k-1]`; each lower level partitions every cell of the level above.
pub fn build_pyramid(
    a: &Configuration,
    root: &CubeSpec,
    preds: &[GoodCubePredicate],
) -> Result<PyramidPartition> {
    check_inside(a, root)?;
    let k = preds.len();
    if k == 0 {
        return Err(Error::InvalidArgument(
            "a pyramid needs at least one level".into(),
        ));
    }
    let obstructed = |level: usize, cube: &CubeSpec| Error::PyramidObstructed {
        level,
        center: cube.center().to_vec(),
        side: cube.side(),
    };
    let mut levels: Vec<Vec<CubeSpec>> = vec![Vec::new(); k];
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); k];
    let top = GoodCubes::new(a, &preds[k - 1], root.clone())
        .partition()
        .map_err(|e| match e {
            Error::ParentNotGood => obstructed(k - 1, root),
            other => other,
        })?;
    levels[k - 1] = top.cells;
    for h in (0..k - 1).rev() {
        let mut cells = Vec::new();
        let mut links = Vec::new();
        for (i, cell) in levels[h + 1].iter().enumerate() {
            let part = GoodCubes::new(a, &preds[h], cell.clone())
                .partition()
                .map_err(|e| match e {
                    Error::ParentNotGood => obstructed(h, cell),
                    other => other,
                })?;
            links.extend(std::iter::repeat(i).take(part.cells.len()));
            cells.extend(part.cells);
        }
        levels[h] = cells;
        parents[h] = links;
    }
    Ok(PyramidPartition {
        root: root.clone(),
        levels,
        parents,
    })
}

/// Largest number of enlarged level-`h` cells `aa * cell` containing a
/// common point.
pub fn counting_diagnostic(pp: &PyramidPartition, aa: Ratio<i64>, h: usize) -> Result<usize> {
    let cells = pp
        .level(h)
        .ok_or_else(|| Error::InvalidArgument(format!("no level {h}")))?;
    let regions: Vec<Region> = cells.iter().map(|c| c.scaled(aa).region()).collect();
    let d = pp.root().dim();
    let Some(first) = regions.first() else {
        return Ok(0);
    };
    let mut lo = first.lo().to_vec();
    let mut hi = first.hi().to_vec();
    for r in &regions {
        for i in 0..d {
            lo[i] = lo[i].min(r.lo()[i]);
            hi[i] = hi[i].max(r.hi()[i]);
        }
    }
    let extents: Vec<usize> = (0..d).map(|i| (hi[i] - lo[i] + 1) as usize).collect();
    let mut strides = vec![1usize; d];
    for i in (0..d - 1).rev() {
        strides[i] = strides[i + 1] * extents[i + 1];
    }
    let mut count = vec![0u32; strides[0] * extents[0]];
    for r in &regions {
        for x in r.points() {
            let idx: usize = (0..d).map(|i| (x[i] - lo[i]) as usize * strides[i]).sum();
            count[idx] += 1;
        }
    }
    Ok(count.into_iter().max().unwrap_or(0) as usize)
}

/// The graph radius `L_aa` of the counting argument: 2 for `aa <= 5/3`,
/// and `2n` when `aa` is at most the `n`-th term of
/// `a_1 = 5/3, a_{n+1} = 4/3 + a_n / 3`. `None` outside `(1, 2)`.
pub fn counting_radius(aa: f64) -> Option<u32> {
    if !(aa > 1.0 && aa < 2.0) {
        return None;
    }
    let mut a = 5.0 / 3.0;
    let mut n = 1;
    while aa > a {
        a = 4.0 / 3.0 + a / 3.0;
        n += 1;
    }
    Some(2 * n)
}

/// The bound `C^{k-h}` with `C = (2d 3^{d-1})^{L_aa}`.
pub fn counting_bound(aa: f64, d: usize, k: usize, h: usize) -> Option<f64> {
    let l = counting_radius(aa)?;
    let c = ((2 * d) as f64 * 3f64.powi(d as i32 - 1)).powi(l as i32);
    Some(c.powi((k - h) as i32))
}

/// Outcome of an N-stability test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StabilityReport {
    /// Whether the predicate held under every tested perturbation.
    pub stable: bool,
    /// Number of perturbations tested, including the empty one.
    pub tested: usize,
    /// Whether every perturbation of at most `n` edges was tested.
    pub exhaustive: bool,
}

/// Tests `pred(a^F, cube)` for edge sets `F` of at most `n` edges of the
/// cube. Opening an open edge changes nothing, so only closed edges are
/// drawn. The test is exhaustive when the number of such sets is at most
/// `budget`; otherwise `budget` sets are drawn at random with a seed
/// derived from the configuration.
pub fn n_stable_check(
    a: &Configuration,
    cube: &CubeSpec,
    pred: &GoodCubePredicate,
    n: usize,
    budget: usize,
) -> Result<StabilityReport> {
    check_inside(a, cube)?;
    let lat = a.lattice();
    let closed: Vec<usize> = lat
        .edges_in(&cube.region())
        .into_iter()
        .filter(|&e| !a.is_open(e))
        .collect();
    let n = n.min(closed.len());
    let total: f64 = (0..=n).map(|k| binomial(closed.len(), k)).sum();
    let mut tested = 0;
    if total <= budget as f64 {
        for k in 0..=n {
            for f in k_subsets(&closed, k) {
                tested += 1;
                if !pred.evaluate(&a.with_open(f.as_slice()), cube)? {
                    return Ok(StabilityReport {
                        stable: false,
                        tested,
                        exhaustive: false,
                    });
                }
            }
        }
        return Ok(StabilityReport {
            stable: true,
            tested,
            exhaustive: true,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.fingerprint());
    for _ in 0..budget {
        let k = rng.random_range(0..=n);
        let mut pool = closed.clone();
        let mut f = Vec::with_capacity(k);
        for _ in 0..k {
            let j = rng.random_range(0..pool.len());
            f.push(pool.swap_remove(j));
        }
        tested += 1;
        if !pred.evaluate(&a.with_open(&f), cube)? {
            return Ok(StabilityReport {
                stable: false,
                tested,
                exhaustive: false,
            });
        }
    }
    Ok(StabilityReport {
        stable: true,
        tested,
        exhaustive: false,
    })
}

/// Counts of the maximal-cluster inclusion test over a pyramid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct InclusionReport {
    /// Pairs where both maximal clusters exist and were compared.
    pub checked: usize,
    /// Pairs where the inclusion failed.
    pub violations: usize,
    /// Pairs skipped because a maximal cluster is undefined.
    pub skipped: usize,
}

fn is_sorted_subset(small: &[usize], big: &[usize]) -> bool {
    small.iter().all(|x| big.binary_search(x).is_ok())
}

/// Checks `C_*(cell) ⊆ C_*(parent cell)` for every cell of every level
/// (the top level against the root) whenever both are well-connected.
pub fn nesting_check(a: &Configuration, pp: &PyramidPartition) -> Result<InclusionReport> {
    let mut rep = InclusionReport::default();
    let root_c = well_connected_cluster(a, &pp.root().region())?;
    let mut clusters: Vec<Vec<Option<Vec<usize>>>> = Vec::with_capacity(pp.depth());
    for h in 0..pp.depth() {
        clusters.push(
            pp.levels[h]
                .iter()
                .map(|c| well_connected_cluster(a, &c.region()))
                .collect::<Result<_>>()?,
        );
    }
    for h in 0..pp.depth() {
        for i in 0..pp.levels[h].len() {
            let outer = match pp.parent(h, i) {
                Some(j) => clusters[h + 1][j].as_ref(),
                None => root_c.as_ref(),
            };
            match (clusters[h][i].as_ref(), outer) {
                (Some(inner), Some(outer)) => {
                    rep.checked += 1;
                    if !is_sorted_subset(inner, outer) {
                        rep.violations += 1;
                    }
                }
                _ => rep.skipped += 1,
            }
        }
    }
    Ok(rep)
}

/// Checks the detour property on level `h`: every vertex of `C_*(root)`
/// inside `(16/15) cell` lies in `C_*((4/3) cell)`. Cells whose enlargement
/// leaves the root, or where a maximal cluster is undefined, are skipped.
pub fn detour_check(a: &Configuration, pp: &PyramidPartition, h: usize) -> Result<InclusionReport> {
    let lat = a.lattice();
    let cells = pp
        .level(h)
        .ok_or_else(|| Error::InvalidArgument(format!("no level {h}")))?;
    let mut rep = InclusionReport::default();
    let Some(root_c) = well_connected_cluster(a, &pp.root().region())? else {
        rep.skipped = cells.len();
        return Ok(rep);
    };
    let root_r = pp.root().region();
    for cell in cells {
        let big = cell.scaled(Ratio::new(4, 3)).region();
        if !root_r.contains_region(&big) {
            rep.skipped += 1;
            continue;
        }
        let Some(c43) = well_connected_cluster(a, &big)? else {
            rep.skipped += 1;
            continue;
        };
        let small = cell.scaled(Ratio::new(16, 15)).region();
        rep.checked += 1;
        let ok = root_c
            .iter()
            .filter(|&&v| lat.vertex_in(v, &small))
            .all(|v| c43.binary_search(v).is_ok());
        if !ok {
            rep.violations += 1;
        }
    }
    Ok(rep)
}
