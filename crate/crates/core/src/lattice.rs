//! Triadic-cube geometry of `Z^d`.
//!
//! A triadic cube of level `m` is `z + (-L/2, L/2)^d` intersected with `Z^d`,
//! where `L = 3^m` and `z` is a multiple of `L`. A [`Lattice`] is built on a
//! triadic cube or, for small identity checks, on an origin-centered box of
//! any odd side. Coordinates are signed
//! integers in the global frame. Vertices of a [`Lattice`] are indexed
//! lexicographically with axis 0 most significant; the edge `(x, x + e_i)`
//! is numbered by visiting vertices in that order and, for each vertex, the
//! axes in increasing order.

use num_rational::Ratio;
use serde::Serialize;

use crate::{Error, Result};

/// Largest supported dimension.
pub const MAX_DIM: usize = 6;

/// Marker for a missing edge in the forward-edge table.
const NO_EDGE: u32 = u32::MAX;

/// Integer power `3^k`.
pub fn pow3(k: u32) -> i64 {
    3i64.pow(k)
}

/// An axis-aligned box `lo <= x <= hi` (inclusive on every axis).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Region {
    lo: Vec<i64>,
    hi: Vec<i64>,
}

impl Region {
    /// Creates a box from inclusive corners; `lo[i] <= hi[i]` is required.
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Result<Region> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Err(Error::InvalidRegion(format!("empty box {lo:?}..{hi:?}")));
        }
        Ok(Region { lo, hi })
    }

    /// Cube of odd side `side` centered at `center`.
    pub fn centered(center: &[i64], side: i64) -> Region {
        debug_assert!(side >= 1 && side % 2 == 1);
        let r = (side - 1) / 2;
        Region {
            lo: center.iter().map(|c| c - r).collect(),
            hi: center.iter().map(|c| c + r).collect(),
        }
    }

    /// Dimension of the ambient space.
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Lower corner.
    pub fn lo(&self) -> &[i64] {
        &self.lo
    }

    /// Upper corner.
    pub fn hi(&self) -> &[i64] {
        &self.hi
    }

    /// Number of lattice points along `axis`.
    pub fn extent(&self, axis: usize) -> i64 {
        self.hi[axis] - self.lo[axis] + 1
    }

    /// The common side if the box is a cube.
    pub fn cube_side(&self) -> Option<i64> {
        let s = self.extent(0);
        (1..self.dim()).all(|i| self.extent(i) == s).then_some(s)
    }

    /// Number of lattice points in the box.
    pub fn volume(&self) -> usize {
        (0..self.dim()).map(|i| self.extent(i) as usize).product()
    }

    /// Whether `x` lies in the box.
    pub fn contains(&self, x: &[i64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(c, (l, h))| l <= c && c <= h)
    }

    /// Whether `other` is a subset of `self`.
    pub fn contains_region(&self, other: &Region) -> bool {
        self.contains(&other.lo) && self.contains(&other.hi)
    }

    /// Intersection of two boxes, `None` when empty.
    pub fn intersect(&self, other: &Region) -> Option<Region> {
        let lo: Vec<i64> = self
            .lo
            .iter()
            .zip(&other.lo)
            .map(|(a, b)| *a.max(b))
            .collect();
        let hi: Vec<i64> = self
            .hi
            .iter()
            .zip(&other.hi)
            .map(|(a, b)| *a.min(b))
            .collect();
        lo.iter()
            .zip(&hi)
            .all(|(l, h)| l <= h)
            .then_some(Region { lo, hi })
    }

    /// Whether the boxes share a point.
    pub fn meets(&self, other: &Region) -> bool {
        self.intersect(other).is_some()
    }

    /// `l^inf` distance between the two point sets.
    pub fn dist(&self, other: &Region) -> i64 {
        (0..self.dim())
            .map(|i| {
                (other.lo[i] - self.hi[i])
                    .max(self.lo[i] - other.hi[i])
                    .max(0)
            })
            .max()
            .unwrap_or(0)
    }

    /// Whether `x` lies on the box boundary, i.e. some coordinate is extremal.
    pub fn on_boundary(&self, x: &[i64]) -> bool {
        (0..self.dim()).any(|i| x[i] == self.lo[i] || x[i] == self.hi[i])
    }

    /// Lattice points of the box in lexicographic order.
    pub fn points(&self) -> Points<'_> {
        Points {
            region: self,
            next: Some(self.lo.clone()),
        }
    }
}

/// Lexicographic iterator over the points of a [`Region`].
pub struct Points<'a> {
    region: &'a Region,
    next: Option<Vec<i64>>,
}

impl Iterator for Points<'_> {
    type Item = Vec<i64>;

    fn next(&mut self) -> Option<Vec<i64>> {
        let cur = self.next.take()?;
        let mut nxt = cur.clone();
        let mut axis = self.region.dim();
        while axis > 0 {
            axis -= 1;
            if nxt[axis] < self.region.hi[axis] {
                nxt[axis] += 1;
                self.next = Some(nxt);
                return Some(cur);
            }
            nxt[axis] = self.region.lo[axis];
        }
        Some(cur)
    }
}

/// A triadic cube `z + (-3^m/2, 3^m/2)^d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct CubeSpec {
    dim: usize,
    level: u32,
    center: Vec<i64>,
}

impl CubeSpec {
    /// The cube of level `level` centered at the origin.
    pub fn new(dim: usize, level: u32) -> Result<CubeSpec> {
        CubeSpec::with_center(level, vec![0; dim])
    }

    /// The cube of level `level` centered at `center`, which must be a
    /// multiple of `3^level` on every axis.
    pub fn with_center(level: u32, center: Vec<i64>) -> Result<CubeSpec> {
        let dim = center.len();
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidDimension(dim));
        }
        let side = pow3(level);
        if center.iter().any(|c| c % side != 0) {
            return Err(Error::InvalidCenter { side });
        }
        Ok(CubeSpec { dim, level, center })
    }

    /// Dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Level `m`.
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Center `z`.
    pub fn center(&self) -> &[i64] {
        &self.center
    }

    /// Side length `3^m`.
    pub fn side(&self) -> i64 {
        pow3(self.level)
    }

    /// Number of vertices `3^{md}`.
    pub fn volume(&self) -> usize {
        (self.side() as usize).pow(self.dim as u32)
    }

    /// Number of edges with both endpoints inside, `d L^{d-1} (L-1)`.
    pub fn edge_count(&self) -> usize {
        let l = self.side() as usize;
        self.dim * l.pow(self.dim as u32 - 1) * (l - 1)
    }

    /// The vertex set as a box.
    pub fn region(&self) -> Region {
        Region::centered(&self.center, self.side())
    }

    /// The `3^d` subcubes of level `m - 1`, in lexicographic order of their centers.
    pub fn successors(&self) -> Result<Vec<CubeSpec>> {
        if self.level == 0 {
            return Err(Error::NoSuccessors);
        }
        let step = pow3(self.level - 1);
        let offsets = Region::new(vec![-1; self.dim], vec![1; self.dim])?;
        Ok(offsets
            .points()
            .map(|o| CubeSpec {
                dim: self.dim,
                level: self.level - 1,
                center: self
                    .center
                    .iter()
                    .zip(&o)
                    .map(|(c, k)| c + k * step)
                    .collect(),
            })
            .collect())
    }

    /// The unique triadic cube of level `m + 1` containing this one.
    pub fn predecessor(&self) -> CubeSpec {
        let big = pow3(self.level + 1);
        CubeSpec {
            dim: self.dim,
            level: self.level + 1,
            center: self
                .center
                .iter()
                .map(|&c| (c + (big - 1) / 2).div_euclid(big) * big)
                .collect(),
        }
    }

    /// All triadic subcubes of level `level` (at most `self.level`) in
    /// lexicographic order of their centers.
    pub fn descendants(&self, level: u32) -> Vec<CubeSpec> {
        assert!(level <= self.level);
        let step = pow3(level);
        let half = (pow3(self.level - level) - 1) / 2;
        let offsets = Region::new(vec![-half; self.dim], vec![half; self.dim]).expect("box");
        offsets
            .points()
            .map(|o| CubeSpec {
                dim: self.dim,
                level,
                center: self
                    .center
                    .iter()
                    .zip(&o)
                    .map(|(c, k)| c + k * step)
                    .collect(),
            })
            .collect()
    }

    /// Whether `other` is a subset of this cube.
    pub fn contains_cube(&self, other: &CubeSpec) -> bool {
        self.region().contains_region(&other.region())
    }

    /// The scaled cube `c` times this cube.
    pub fn scaled(&self, factor: Ratio<i64>) -> ScaledCube {
        ScaledCube::new(self.clone(), factor)
    }
}

/// The cube `c * base`: same center, side `2 floor(c L / 2) + 1`.
///
/// Cubes of side 1 are never scaled and keep side 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ScaledCube {
    base: CubeSpec,
    #[serde(serialize_with = "ser_ratio")]
    factor: Ratio<i64>,
    side: i64,
}

fn ser_ratio<S: serde::Serializer>(r: &Ratio<i64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

impl ScaledCube {
    /// Scales `base` by the positive factor `factor`.
    pub fn new(base: CubeSpec, factor: Ratio<i64>) -> ScaledCube {
        assert!(
            factor > Ratio::from_integer(0),
            "scaling factor must be positive"
        );
        let l = base.side();
        let side = if l == 1 {
            1
        } else {
            2 * ((factor.numer() * l).div_euclid(2 * factor.denom())) + 1
        };
        ScaledCube { base, factor, side }
    }

    /// The unscaled cube.
    pub fn base(&self) -> &CubeSpec {
        &self.base
    }

    /// The scaling factor.
    pub fn factor(&self) -> Ratio<i64> {
        self.factor
    }

    /// Side of the scaled cube.
    pub fn side(&self) -> i64 {
        self.side
    }

    /// The scaled cube as a box (not clamped).
    pub fn region(&self) -> Region {
        Region::centered(self.base.center(), self.side)
    }

    /// The scaled cube intersected with `ambient`.
    pub fn clamped(&self, ambient: &Region) -> Option<Region> {
        self.region().intersect(ambient)
    }
}

/// Shorthand for a rational number `n / d`.
pub fn ratio(n: i64, d: i64) -> Ratio<i64> {
    Ratio::new(n, d)
}

/// An edge `(tail, tail + e_axis)` of a lattice, with its ordinal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EdgeIndex {
    /// Position in the canonical edge order.
    pub ordinal: usize,
    /// Lexicographically smaller endpoint.
    pub tail: usize,
    /// Larger endpoint `tail + e_axis`.
    pub head: usize,
    /// Direction of the edge.
    pub axis: usize,
}

/// Vertex and edge tables of a triadic cube or of an odd-sided box.
#[derive(Clone, Debug)]
pub struct Lattice {
    cube: Option<CubeSpec>,
    dim: usize,
    region: Region,
    side: usize,
    strides: Vec<usize>,
    edges: Vec<[u32; 2]>,
    edge_axis: Vec<u8>,
    forward: Vec<u32>,
}

impl PartialEq for Lattice {
    fn eq(&self, other: &Lattice) -> bool {
        self.region == other.region
    }
}

impl Lattice {
    /// Builds the tables for `cube`.
    pub fn new(cube: CubeSpec) -> Lattice {
        let region = cube.region();
        Lattice::build(Some(cube), region)
    }

    /// Builds the tables for the box of odd side `side` centered at the
    /// origin. Boxes whose side is a power of three are triadic cubes.
    pub fn centered_box(dim: usize, side: i64) -> Result<Lattice> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidDimension(dim));
        }
        if side < 1 || side % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "box side {side} must be odd and positive"
            )));
        }
        let mut level = 0;
        while pow3(level) < side {
            level += 1;
        }
        if pow3(level) == side {
            return Ok(Lattice::new(CubeSpec::new(dim, level)?));
        }
        Ok(Lattice::build(None, Region::centered(&vec![0; dim], side)))
    }

    fn build(cube: Option<CubeSpec>, region: Region) -> Lattice {
        let d = region.dim();
        let side = region.extent(0) as usize;
        let n = region.volume();
        assert!(
            n < u32::MAX as usize,
            "cube too large for 32-bit vertex ids"
        );
        let strides: Vec<usize> = (0..d).map(|i| side.pow((d - 1 - i) as u32)).collect();
        let edge_count = d * side.pow(d as u32 - 1) * (side - 1);
        let mut edges = Vec::with_capacity(edge_count);
        let mut edge_axis = Vec::with_capacity(edge_count);
        let mut forward = vec![NO_EDGE; n * d];
        for v in 0..n {
            for (axis, &stride) in strides.iter().enumerate() {
                if (v / stride) % side + 1 < side {
                    forward[v * d + axis] = edges.len() as u32;
                    edges.push([v as u32, (v + stride) as u32]);
                    edge_axis.push(axis as u8);
                }
            }
        }
        Lattice {
            region,
            cube,
            dim: d,
            side,
            strides,
            edges,
            edge_axis,
            forward,
        }
    }

    /// The underlying triadic cube, or `None` for a box that is not one.
    pub fn cube(&self) -> Option<&CubeSpec> {
        self.cube.as_ref()
    }

    /// The vertex set as a box.
    pub fn region(&self) -> &Region {
        &self.region
    }

    /// Dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Side length.
    pub fn side(&self) -> usize {
        self.side
    }

    /// Index stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Number of vertices.
    pub fn num_vertices(&self) -> usize {
        self.forward.len() / self.dim()
    }

    /// Number of edges.
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Coordinate of vertex `v` along `axis`.
    #[inline]
    pub fn coord(&self, v: usize, axis: usize) -> i64 {
        ((v / self.strides[axis]) % self.side) as i64 + self.region.lo()[axis]
    }

    /// Local coordinate (offset from the lower corner) of `v` along `axis`.
    #[inline]
    pub fn local(&self, v: usize, axis: usize) -> usize {
        (v / self.strides[axis]) % self.side
    }

    /// Global coordinates of vertex `v`.
    pub fn coords(&self, v: usize) -> Vec<i64> {
        (0..self.dim()).map(|i| self.coord(v, i)).collect()
    }

    /// Index of the vertex with global coordinates `x`, if inside.
    pub fn index(&self, x: &[i64]) -> Option<usize> {
        if !self.region.contains(x) {
            return None;
        }
        Some(
            x.iter()
                .enumerate()
                .map(|(i, c)| (c - self.region.lo()[i]) as usize * self.strides[i])
                .sum(),
        )
    }

    /// Ordinal of edge `(v, v + e_axis)`, if that edge lies in the cube.
    #[inline]
    pub fn forward_edge(&self, v: usize, axis: usize) -> Option<usize> {
        let e = self.forward[v * self.dim() + axis];
        (e != NO_EDGE).then_some(e as usize)
    }

    /// Ordinal of edge `(v - e_axis, v)`, if that edge lies in the cube.
    #[inline]
    pub fn backward_edge(&self, v: usize, axis: usize) -> Option<usize> {
        if self.local(v, axis) == 0 {
            None
        } else {
            self.forward_edge(v - self.strides[axis], axis)
        }
    }

    /// Calls `f(neighbor, edge)` for each lattice neighbor of `v` inside the cube.
    #[inline]
    pub fn for_each_neighbor(&self, v: usize, mut f: impl FnMut(usize, usize)) {
        for axis in 0..self.dim() {
            let s = self.strides[axis];
            let l = self.local(v, axis);
            if l + 1 < self.side {
                f(v + s, self.forward[v * self.dim() + axis] as usize);
            }
            if l > 0 {
                f(v - s, self.forward[(v - s) * self.dim() + axis] as usize);
            }
        }
    }

    /// Endpoints `(tail, head)` of edge `e`, with `head = tail + e_axis`.
    #[inline]
    pub fn endpoints(&self, e: usize) -> (usize, usize) {
        let [a, b] = self.edges[e];
        (a as usize, b as usize)
    }

    /// Direction of edge `e`.
    #[inline]
    pub fn edge_axis(&self, e: usize) -> usize {
        self.edge_axis[e] as usize
    }

    /// Full description of edge `e`.
    pub fn edge(&self, e: usize) -> EdgeIndex {
        let (tail, head) = self.endpoints(e);
        EdgeIndex {
            ordinal: e,
            tail,
            head,
            axis: self.edge_axis(e),
        }
    }

    /// All edges in canonical order.
    pub fn enumerate_edges(&self) -> Vec<EdgeIndex> {
        (0..self.num_edges()).map(|e| self.edge(e)).collect()
    }

    /// Ordinal of the edge joining `x` and `y`, if they are lattice neighbors.
    pub fn edge_between(&self, x: usize, y: usize) -> Option<usize> {
        let (lo, hi) = if x < y { (x, y) } else { (y, x) };
        (0..self.dim()).find_map(|axis| {
            let e = self.forward_edge(lo, axis)?;
            (self.endpoints(e).1 == hi).then_some(e)
        })
    }

    /// Whether `v` lies on the boundary `cube \ int(cube)`.
    #[inline]
    pub fn is_boundary(&self, v: usize) -> bool {
        (0..self.dim()).any(|i| {
            let l = self.local(v, i);
            l == 0 || l + 1 == self.side
        })
    }

    /// Boundary vertices in increasing index order.
    pub fn boundary_vertices(&self) -> Vec<usize> {
        (0..self.num_vertices())
            .filter(|&v| self.is_boundary(v))
            .collect()
    }

    /// Whether vertex `v` lies in `region`.
    #[inline]
    pub fn vertex_in(&self, v: usize, region: &Region) -> bool {
        (0..self.dim()).all(|i| {
            let c = self.coord(v, i);
            region.lo()[i] <= c && c <= region.hi()[i]
        })
    }

    /// Vertices in `region` (clamped to the cube) in increasing index order.
    pub fn vertices_in(&self, region: &Region) -> Vec<usize> {
        match region.intersect(&self.region) {
            Some(r) => r
                .points()
                .map(|x| self.index(&x).expect("inside"))
                .collect(),
            None => Vec::new(),
        }
    }

    /// Edges with both endpoints in `region`, in increasing ordinal order.
    pub fn edges_in(&self, region: &Region) -> Vec<usize> {
        let mut out = Vec::new();
        for v in self.vertices_in(region) {
            for axis in 0..self.dim() {
                if let Some(e) = self.forward_edge(v, axis) {
                    if self.vertex_in(self.endpoints(e).1, region) {
                        out.push(e);
                    }
                }
            }
        }
        out
    }

    /// `l^inf` distance between two vertices.
    pub fn dist(&self, x: usize, y: usize) -> i64 {
        (0..self.dim())
            .map(|i| (self.coord(x, i) - self.coord(y, i)).abs())
            .max()
            .unwrap_or(0)
    }
}
