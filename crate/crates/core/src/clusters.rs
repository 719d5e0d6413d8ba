//! Connected components of a configuration and the geometric predicates
//! built on them.
//!
//! All cluster computations use open edges only, and "within a region"
//! always means that both endpoints of every edge used lie in that region.
//! Distances are `l^inf`. The lexicographic order of vertices coincides with
//! their index order, so lexicographic tie-breaks reduce to taking the
//! smallest index.

use num_rational::Ratio;

use crate::lattice::{CubeSpec, Lattice, Region};
use crate::percolation::{Configuration, EdgeSet};
use crate::{Error, Result};

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    /// `n` singletons.
    pub fn new(n: usize) -> UnionFind {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    /// Representative of the set containing `x`.
    #[inline]
    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] as usize != x {
            let gp = self.parent[self.parent[x] as usize];
            self.parent[x] = gp;
            x = gp as usize;
        }
        x
    }

    /// Merges the sets of `x` and `y`.
    #[inline]
    pub fn union(&mut self, x: usize, y: usize) {
        let (mut rx, mut ry) = (self.find(x), self.find(y));
        if rx == ry {
            return;
        }
        if self.size[rx] < self.size[ry] {
            std::mem::swap(&mut rx, &mut ry);
        }
        self.parent[ry] = rx as u32;
        self.size[rx] += self.size[ry];
    }

    /// Dense labels `0..k`, numbered in order of first appearance.
    pub fn labels(&mut self) -> (Vec<u32>, usize) {
        let n = self.parent.len();
        let mut id = vec![u32::MAX; n];
        let mut label = vec![0u32; n];
        let mut next = 0u32;
        for x in 0..n {
            let r = self.find(x);
            if id[r] == u32::MAX {
                id[r] = next;
                next += 1;
            }
            label[x] = id[r];
        }
        (label, next as usize)
    }
}

/// Cluster labels of a configuration on its whole cube.
#[derive(Clone, Debug)]
pub struct ClusterLabeling {
    label: Vec<u32>,
    sizes: Vec<usize>,
    boundary_connecting: Vec<bool>,
    maximal: Option<u32>,
}

impl ClusterLabeling {
    /// Labels the clusters of `a`. Cluster ids follow the smallest vertex index.
    pub fn new(a: &Configuration) -> ClusterLabeling {
        let lat = a.lattice();
        let mut uf = UnionFind::new(lat.num_vertices());
        for e in 0..lat.num_edges() {
            if a.is_open(e) {
                let (x, y) = lat.endpoints(e);
                uf.union(x, y);
            }
        }
        let (label, k) = uf.labels();
        let mut sizes = vec![0usize; k];
        let mut boundary_connecting = vec![false; k];
        for (v, &c) in label.iter().enumerate() {
            sizes[c as usize] += 1;
            if lat.is_boundary(v) {
                boundary_connecting[c as usize] = true;
            }
        }
        let maximal = (0..k)
            .max_by(|&i, &j| sizes[i].cmp(&sizes[j]).then(j.cmp(&i)))
            .map(|c| c as u32);
        ClusterLabeling {
            label,
            sizes,
            boundary_connecting,
            maximal,
        }
    }

    /// Cluster id of vertex `v`.
    #[inline]
    pub fn label(&self, v: usize) -> usize {
        self.label[v] as usize
    }

    /// All labels by vertex.
    pub fn labels(&self) -> &[u32] {
        &self.label
    }

    /// Number of clusters.
    pub fn num_clusters(&self) -> usize {
        self.sizes.len()
    }

    /// Number of vertices in cluster `c`.
    pub fn size(&self, c: usize) -> usize {
        self.sizes[c]
    }

    /// Whether cluster `c` contains a boundary vertex.
    pub fn is_boundary_connecting(&self, c: usize) -> bool {
        self.boundary_connecting[c]
    }

    /// Whether vertex `v` lies in the boundary-connecting set.
    #[inline]
    pub fn in_cbc(&self, v: usize) -> bool {
        self.boundary_connecting[self.label[v] as usize]
    }

    /// Indicator of the boundary-connecting set by vertex.
    pub fn cbc_mask(&self) -> Vec<bool> {
        (0..self.label.len()).map(|v| self.in_cbc(v)).collect()
    }

    /// Largest cluster (ties resolved towards the smaller id).
    pub fn maximal_id(&self) -> Option<usize> {
        self.maximal.map(|c| c as usize)
    }

    /// Whether `x` and `y` are joined by an open path.
    pub fn connected(&self, x: usize, y: usize) -> bool {
        self.label[x] == self.label[y]
    }

    /// Vertices of cluster `c` in increasing order.
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.label.len())
            .filter(|&v| self.label[v] as usize == c)
            .collect()
    }
}

/// Labels the clusters of `a` over the whole cube.
pub fn label_clusters(a: &Configuration) -> ClusterLabeling {
    ClusterLabeling::new(a)
}

/// The boundary-connecting set: all vertices whose cluster meets the cube
/// boundary, including isolated boundary vertices. Sorted.
pub fn boundary_connecting(a: &Configuration) -> Vec<usize> {
    let lab = ClusterLabeling::new(a);
    (0..a.lattice().num_vertices())
        .filter(|&v| lab.in_cbc(v))
        .collect()
}

/// Open edges with both endpoints in `mask`, i.e. the intrinsic edges of
/// a vertex set made of whole clusters.
pub fn intrinsic_edges(a: &Configuration, mask: &[bool]) -> Vec<usize> {
    let lat = a.lattice();
    (0..lat.num_edges())
        .filter(|&e| {
            let (x, y) = lat.endpoints(e);
            a.is_open(e) && mask[x] && mask[y]
        })
        .collect()
}

/// Cluster labels of a configuration restricted to a box inside its cube.
#[derive(Clone, Debug)]
pub struct RegionLabeling {
    region: Region,
    extents: Vec<usize>,
    strides: Vec<usize>,
    global: Vec<u32>,
    label: Vec<u32>,
    num_clusters: usize,
}

impl RegionLabeling {
    /// Labels the open clusters of `a` using only edges with both endpoints in `region`.
    pub fn new(a: &Configuration, region: &Region) -> Result<RegionLabeling> {
        let lat = a.lattice();
        if !lat.region().contains_region(region) {
            return Err(Error::InvalidRegion(format!(
                "{region:?} is not inside the configuration cube"
            )));
        }
        let d = lat.dim();
        let extents: Vec<usize> = (0..d).map(|i| region.extent(i) as usize).collect();
        let mut strides = vec![1usize; d];
        for i in (0..d - 1).rev() {
            strides[i] = strides[i + 1] * extents[i + 1];
        }
        let n: usize = extents.iter().product();
        let base = lat.index(region.lo()).expect("inside");
        let mut global = Vec::with_capacity(n);
        let mut off = vec![0usize; d];
        for _ in 0..n {
            global.push((base + (0..d).map(|i| off[i] * lat.stride(i)).sum::<usize>()) as u32);
            let mut i = d;
            while i > 0 {
                i -= 1;
                off[i] += 1;
                if off[i] < extents[i] {
                    break;
                }
                off[i] = 0;
            }
        }
        let mut uf = UnionFind::new(n);
        for l in 0..n {
            let g = global[l] as usize;
            for axis in 0..d {
                if (l / strides[axis]) % extents[axis] + 1 < extents[axis] {
                    let e = lat.forward_edge(g, axis).expect("inside");
                    if a.is_open(e) {
                        uf.union(l, l + strides[axis]);
                    }
                }
            }
        }
        let (label, num_clusters) = uf.labels();
        Ok(RegionLabeling {
            region: region.clone(),
            extents,
            strides,
            global,
            label,
            num_clusters,
        })
    }

    /// The labeled box.
    pub fn region(&self) -> &Region {
        &self.region
    }

    /// Number of clusters in the box.
    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    /// Number of vertices in the box.
    pub fn len(&self) -> usize {
        self.global.len()
    }

    /// Whether the box is empty (never true for a valid box).
    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }

    /// Global vertex index of local index `l`.
    pub fn global(&self, l: usize) -> usize {
        self.global[l] as usize
    }

    /// Cluster id of local index `l`.
    pub fn label(&self, l: usize) -> usize {
        self.label[l] as usize
    }

    /// Local coordinate of local index `l` along `axis`.
    fn local(&self, l: usize, axis: usize) -> usize {
        (l / self.strides[axis]) % self.extents[axis]
    }

    /// Bit mask of the `2d` faces met by each cluster (bit `2i` = lower face
    /// on axis `i`, bit `2i + 1` = upper face).
    pub fn face_masks(&self) -> Vec<u32> {
        let d = self.extents.len();
        let mut masks = vec![0u32; self.num_clusters];
        for l in 0..self.len() {
            let c = self.label[l] as usize;
            for axis in 0..d {
                let x = self.local(l, axis);
                if x == 0 {
                    masks[c] |= 1 << (2 * axis);
                }
                if x + 1 == self.extents[axis] {
                    masks[c] |= 1 << (2 * axis + 1);
                }
            }
        }
        masks
    }

    /// Whether each pair of opposite faces is joined by a cluster.
    pub fn is_crossable(&self) -> bool {
        let masks = self.face_masks();
        (0..self.extents.len()).all(|axis| {
            let both = 0b11 << (2 * axis);
            masks.iter().any(|m| m & both == both)
        })
    }

    /// Clusters meeting all `2d` faces, in id order.
    pub fn crossing_clusters(&self) -> Vec<usize> {
        let all = (1u32 << (2 * self.extents.len())) - 1;
        self.face_masks()
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == all)
            .map(|(c, _)| c)
            .collect()
    }

    /// `l^inf` diameter of every cluster.
    pub fn diameters(&self) -> Vec<usize> {
        let d = self.extents.len();
        let mut lo = vec![usize::MAX; self.num_clusters * d];
        let mut hi = vec![0usize; self.num_clusters * d];
        for l in 0..self.len() {
            let c = self.label[l] as usize;
            for axis in 0..d {
                let x = self.local(l, axis);
                lo[c * d + axis] = lo[c * d + axis].min(x);
                hi[c * d + axis] = hi[c * d + axis].max(x);
            }
        }
        (0..self.num_clusters)
            .map(|c| {
                (0..d)
                    .map(|i| hi[c * d + i] - lo[c * d + i])
                    .max()
                    .unwrap_or(0)
            })
            .collect()
    }

    /// Global vertices of cluster `c`, sorted.
    pub fn members(&self, c: usize) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.len())
            .filter(|&l| self.label[l] as usize == c)
            .map(|l| self.global[l] as usize)
            .collect();
        v.sort_unstable();
        v
    }

    /// Local index of a global vertex inside the box.
    pub fn local_index(&self, lat: &Lattice, v: usize) -> Option<usize> {
        let mut l = 0;
        for axis in 0..self.extents.len() {
            let c = lat.coord(v, axis) - self.region.lo()[axis];
            if c < 0 || c as usize >= self.extents[axis] {
                return None;
            }
            l += c as usize * self.strides[axis];
        }
        Some(l)
    }
}

/// Whether each of the `d` pairs of opposite faces of `region` is joined by
/// an open path inside `region`.
pub fn is_crossable(a: &Configuration, region: &Region) -> Result<bool> {
    Ok(RegionLabeling::new(a, region)?.is_crossable())
}

/// Sub-cubes examined by the well-connectedness test of a cube of side `s`
/// centered at `center`: all odd sides in `[s/10, s/2]`, all positions inside
/// the cube meeting the `3/4` scaled cube.
fn wc_subcubes(region: &Region, s: i64) -> Vec<Region> {
    let d = region.dim();
    let center: Vec<i64> = (0..d)
        .map(|i| (region.lo()[i] + region.hi()[i]) / 2)
        .collect();
    let inner_side = 2 * ((3 * s).div_euclid(8)) + 1;
    let inner = Region::centered(&center, inner_side);
    let mut out = Vec::new();
    let mut side = 1;
    while 2 * side <= s {
        if 10 * side >= s {
            let span = Region::new(
                region.lo().to_vec(),
                region.hi().iter().map(|h| h - side + 1).collect(),
            )
            .expect("nonempty");
            for lo in span.points() {
                let hi: Vec<i64> = lo.iter().map(|c| c + side - 1).collect();
                let sub = Region::new(lo, hi).expect("nonempty");
                if sub.meets(&inner) {
                    out.push(sub);
                }
            }
        }
        side += 2;
    }
    out
}

/// Tests well-connectedness of the cube `region` and returns its maximal
/// cluster (sorted global vertex indices) when it holds.
///
/// The path condition is evaluated cluster-wise: every cluster of a
/// sub-cube with `l^inf` diameter at least `s/10` must meet the chosen
/// crossing cluster.
pub fn well_connected_cluster(a: &Configuration, region: &Region) -> Result<Option<Vec<usize>>> {
    let s = region
        .cube_side()
        .filter(|s| s % 2 == 1)
        .ok_or_else(|| Error::InvalidRegion("well-connectedness needs an odd cube".into()))?;
    let lab = RegionLabeling::new(a, region)?;
    let candidates = lab.crossing_clusters();
    if candidates.is_empty() {
        return Ok(None);
    }
    let lat = a.lattice();
    let mut required: Option<usize> = None;
    for sub in wc_subcubes(region, s) {
        let sl = RegionLabeling::new(a, &sub)?;
        if !sl.is_crossable() {
            return Ok(None);
        }
        let diams = sl.diameters();
        let mut seen = vec![false; sl.num_clusters()];
        for l in 0..sl.len() {
            let k = sl.label(l);
            if seen[k] {
                continue;
            }
            seen[k] = true;
            if 10 * diams[k] as i64 >= s {
                let outer = lab.label(lab.local_index(lat, sl.global(l)).expect("inside"));
                match required {
                    None => required = Some(outer),
                    Some(r) if r != outer => return Ok(None),
                    _ => {}
                }
            }
        }
    }
    let chosen = match required {
        None => candidates[0],
        Some(r) if candidates.contains(&r) => r,
        Some(_) => return Ok(None),
    };
    Ok(Some(lab.members(chosen)))
}

/// Whether the cube `region` is well-connected.
pub fn is_well_connected(a: &Configuration, region: &Region) -> Result<bool> {
    Ok(well_connected_cluster(a, region)?.is_some())
}

/// Very-well-connectedness of a triadic cube with a configurable size floor:
/// the cube and its successors of orders one to three (those that exist) are
/// well-connected and the side is at least `size_floor`. Returns the maximal
/// cluster of the cube when the predicate holds.
pub fn very_well_connected_cluster(
    a: &Configuration,
    cube: &CubeSpec,
    size_floor: i64,
) -> Result<Option<Vec<usize>>> {
    if cube.side() < size_floor {
        return Ok(None);
    }
    let Some(c) = well_connected_cluster(a, &cube.region())? else {
        return Ok(None);
    };
    for order in 1..=3.min(cube.level()) {
        for sub in cube.descendants(cube.level() - order) {
            if !is_well_connected(a, &sub.region())? {
                return Ok(None);
            }
        }
    }
    Ok(Some(c))
}

/// Whether a triadic cube is very-well-connected with the given size floor.
pub fn is_very_well_connected(a: &Configuration, cube: &CubeSpec, size_floor: i64) -> Result<bool> {
    Ok(very_well_connected_cluster(a, cube, size_floor)?.is_some())
}

/// The enlarged maximal cluster of `base` in `factor * base ∩ cube(a)`: the
/// cluster containing the maximal cluster of `base` together with every
/// cluster reaching the ambient boundary, connections taken inside the
/// clamped region. Sorted global vertex indices.
pub fn enlarged_cluster(
    a: &Configuration,
    base: &CubeSpec,
    factor: Ratio<i64>,
) -> Result<Vec<usize>> {
    let lat = a.lattice();
    let Some(core) = well_connected_cluster(a, &base.region())? else {
        return Err(Error::MaximalClusterUndefined);
    };
    let region = base
        .scaled(factor)
        .clamped(lat.region())
        .ok_or_else(|| Error::InvalidRegion("scaled cube misses the ambient cube".into()))?;
    let lab = RegionLabeling::new(a, &region)?;
    let mut keep = vec![false; lab.num_clusters()];
    keep[lab.label(lab.local_index(lat, core[0]).expect("inside"))] = true;
    for l in 0..lab.len() {
        if lat.is_boundary(lab.global(l)) {
            keep[lab.label(l)] = true;
        }
    }
    let mut out: Vec<usize> = (0..lab.len())
        .filter(|&l| keep[lab.label(l)])
        .map(|l| lab.global(l))
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// The canonical grain map `x -> [x]^F` of a base configuration `a` and a
/// perturbation `F`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grain {
    map: Vec<u32>,
}

impl Grain {
    /// Computes `[x]^F` for every vertex. Points of the boundary-connecting
    /// set of `a^F` map to themselves; every other point maps to the vertex
    /// of the boundary-connecting set of `a` closest to its `a^F`-cluster,
    /// ties broken by the smallest index.
    pub fn new(a: &Configuration, f: &EdgeSet) -> Result<Grain> {
        f.validate(a.num_edges())?;
        let base_cbc = ClusterLabeling::new(a).cbc_mask();
        let pert = ClusterLabeling::new(&a.with_open(f.as_slice()));
        Ok(Grain::from_parts(a.lattice(), &base_cbc, &pert))
    }

    /// Grain map from a precomputed base indicator and perturbed labeling.
    pub fn from_parts(lat: &Lattice, base_cbc: &[bool], pert: &ClusterLabeling) -> Grain {
        let n = lat.num_vertices();
        let mut map: Vec<u32> = (0..n as u32).collect();
        let mut holes: Vec<Vec<usize>> = vec![Vec::new(); pert.num_clusters()];
        for v in 0..n {
            if !pert.in_cbc(v) {
                holes[pert.label(v)].push(v);
            }
        }
        let mut search = ChessboardSearch::new(lat);
        for hole in holes.iter().filter(|h| !h.is_empty()) {
            let g = search.nearest(hole, base_cbc) as u32;
            for &v in hole {
                map[v] = g;
            }
        }
        Grain { map }
    }

    /// `[x]^F`.
    #[inline]
    pub fn get(&self, x: usize) -> usize {
        self.map[x] as usize
    }

    /// The full map by vertex.
    pub fn as_slice(&self) -> &[u32] {
        &self.map
    }
}

/// Breadth-first search in the `l^inf` metric of the grid (king moves).
struct ChessboardSearch<'a> {
    lat: &'a Lattice,
    stamp: Vec<u32>,
    generation: u32,
    offsets: Vec<Vec<i64>>,
}

impl<'a> ChessboardSearch<'a> {
    fn new(lat: &'a Lattice) -> Self {
        let d = lat.dim();
        let cube = Region::new(vec![-1; d], vec![1; d]).expect("box");
        let offsets = cube
            .points()
            .filter(|o| o.iter().any(|&c| c != 0))
            .collect();
        ChessboardSearch {
            lat,
            stamp: vec![0; lat.num_vertices()],
            generation: 0,
            offsets,
        }
    }

    /// Smallest-index vertex of `target` at minimal distance from `sources`.
    fn nearest(&mut self, sources: &[usize], target: &[bool]) -> usize {
        self.generation += 1;
        let gen = self.generation;
        let lat = self.lat;
        let d = lat.dim();
        let side = lat.side() as i64;
        let mut layer: Vec<usize> = sources.to_vec();
        for &v in &layer {
            self.stamp[v] = gen;
        }
        loop {
            let mut best = usize::MAX;
            let mut next = Vec::new();
            for &v in &layer {
                for o in &self.offsets {
                    let mut w = v as i64;
                    let mut inside = true;
                    for axis in 0..d {
                        let c = lat.local(v, axis) as i64 + o[axis];
                        if c < 0 || c >= side {
                            inside = false;
                            break;
                        }
                        w += o[axis] * lat.stride(axis) as i64;
                    }
                    let w = w as usize;
                    if inside && self.stamp[w] != gen {
                        self.stamp[w] = gen;
                        if target[w] {
                            best = best.min(w);
                        }
                        next.push(w);
                    }
                }
            }
            if best != usize::MAX {
                return best;
            }
            assert!(!next.is_empty(), "boundary-connecting set is never empty");
            layer = next;
        }
    }
}

/// Split of a perturbation `F` into edges inside the boundary-connecting
/// set of `a^F` and the rest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrowthSplit {
    /// Edges of `F` with both endpoints in the boundary-connecting set of `a^F`.
    pub f_star: EdgeSet,
    /// The remaining edges of `F`.
    pub f_circ: EdgeSet,
}

/// Computes the growth split of `F` for the base configuration `a`.
pub fn growth_split(a: &Configuration, f: &EdgeSet) -> Result<GrowthSplit> {
    f.validate(a.num_edges())?;
    let lab = ClusterLabeling::new(&a.with_open(f.as_slice()));
    let lat = a.lattice();
    let (star, circ): (Vec<usize>, Vec<usize>) = f.iter().partition(|&e| {
        let (x, y) = lat.endpoints(e);
        lab.in_cbc(x) && lab.in_cbc(y)
    });
    Ok(GrowthSplit {
        f_star: EdgeSet::from_sorted(star),
        f_circ: EdgeSet::from_sorted(circ),
    })
}
