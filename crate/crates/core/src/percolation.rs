//! Bernoulli bond configurations, counter-based sampling and the monotone
//! coupling in `p`.
//!
//! Each edge carries a uniform `U(e)` in `[0, 1)` drawn from a ChaCha8
//! stream selected by the sample index. The position inside the stream is a
//! function of the edge's global coordinates `(x, axis)`, so the uniform of a
//! given physical edge does not depend on the cube it is sampled in: nested
//! cubes sampled with the same `(seed, index)` agree on shared edges. An edge
//! is open at parameter `p` iff `U(e) < p`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::check_probability;
use crate::lattice::{CubeSpec, Lattice};
use crate::{Error, Result};

/// Magic bytes of the binary configuration format.
pub const MAGIC: &[u8; 4] = b"PCHM";
/// Version byte of the binary configuration format.
pub const FORMAT_VERSION: u8 = 1;
/// Length of the binary header.
pub const HEADER_LEN: usize = 16;

/// A sorted set of distinct edge ordinals.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeSet(Vec<usize>);

impl EdgeSet {
    /// The empty set.
    pub fn empty() -> EdgeSet {
        EdgeSet(Vec::new())
    }

    /// Builds a set from ordinals in any order; duplicates are rejected.
    pub fn new(mut edges: Vec<usize>) -> Result<EdgeSet> {
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidEdge(w[0]));
        }
        Ok(EdgeSet(edges))
    }

    /// Builds a set from ordinals already sorted and distinct.
    pub fn from_sorted(edges: Vec<usize>) -> EdgeSet {
        debug_assert!(edges.windows(2).all(|w| w[0] < w[1]));
        EdgeSet(edges)
    }

    /// Single-edge set.
    pub fn single(e: usize) -> EdgeSet {
        EdgeSet(vec![e])
    }

    /// Checks every ordinal against the edge count of a lattice.
    pub fn validate(&self, num_edges: usize) -> Result<()> {
        match self.0.iter().find(|&&e| e >= num_edges) {
            Some(&e) => Err(Error::InvalidEdge(e)),
            None => Ok(()),
        }
    }

    /// Number of edges.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Whether the set is empty.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Ordinals in increasing order.
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Iterator over the ordinals.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    /// Membership test.
    pub fn contains(&self, e: usize) -> bool {
        self.0.binary_search(&e).is_ok()
    }

    /// `self ∪ other`.
    pub fn union(&self, other: &EdgeSet) -> EdgeSet {
        let mut v: Vec<usize> = self.0.iter().chain(&other.0).copied().collect();
        v.sort_unstable();
        v.dedup();
        EdgeSet(v)
    }

    /// `self \ other`.
    pub fn difference(&self, other: &EdgeSet) -> EdgeSet {
        EdgeSet(
            self.0
                .iter()
                .copied()
                .filter(|&e| !other.contains(e))
                .collect(),
        )
    }

    /// `self ∩ other`.
    pub fn intersection(&self, other: &EdgeSet) -> EdgeSet {
        EdgeSet(
            self.0
                .iter()
                .copied()
                .filter(|&e| other.contains(e))
                .collect(),
        )
    }

    /// `self ∪ {e}`.
    pub fn with(&self, e: usize) -> EdgeSet {
        let mut v = self.0.clone();
        if let Err(pos) = v.binary_search(&e) {
            v.insert(pos, e);
        }
        EdgeSet(v)
    }

    /// `self \ {e}`.
    pub fn without(&self, e: usize) -> EdgeSet {
        EdgeSet(self.0.iter().copied().filter(|&x| x != e).collect())
    }

    /// Whether `self ⊆ other`.
    pub fn is_subset(&self, other: &EdgeSet) -> bool {
        self.0.iter().all(|&e| other.contains(e))
    }

    /// The subset selected by the bits of `mask` (bit `i` selects the `i`-th smallest edge).
    pub fn subset(&self, mask: usize) -> EdgeSet {
        EdgeSet(
            self.0
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, &e)| e)
                .collect(),
        )
    }

    /// All `2^|self|` subsets, indexed by bit mask.
    pub fn subsets(&self) -> impl Iterator<Item = EdgeSet> + '_ {
        (0..1usize << self.len()).map(move |mask| self.subset(mask))
    }
}

impl FromIterator<usize> for EdgeSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> EdgeSet {
        let mut v: Vec<usize> = iter.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        EdgeSet(v)
    }
}

/// All `k`-element subsets of `pool` (which must be sorted), in lexicographic order.
pub fn k_subsets(pool: &[usize], k: usize) -> Vec<EdgeSet> {
    let n = pool.len();
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(EdgeSet(idx.iter().map(|&i| pool[i]).collect()));
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Binomial coefficient as `f64`.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Open/closed states of every edge of a triadic cube (bit set = open).
#[derive(Clone, Debug)]
pub struct Configuration {
    lattice: Arc<Lattice>,
    bits: Vec<u64>,
}

impl PartialEq for Configuration {
    fn eq(&self, other: &Configuration) -> bool {
        self.lattice.region() == other.lattice.region() && self.bits == other.bits
    }
}

impl Eq for Configuration {}

impl Hash for Configuration {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.lattice.region().hash(state);
        self.bits.hash(state);
    }
}

impl Configuration {
    /// All edges closed.
    pub fn closed(lattice: Arc<Lattice>) -> Configuration {
        let words = lattice.num_edges().div_ceil(64);
        Configuration {
            lattice,
            bits: vec![0; words],
        }
    }

    /// All edges open.
    pub fn open(lattice: Arc<Lattice>) -> Configuration {
        Configuration::from_fn(lattice, |_| true)
    }

    /// Edge `e` open iff `f(e)`.
    pub fn from_fn(lattice: Arc<Lattice>, mut f: impl FnMut(usize) -> bool) -> Configuration {
        let mut c = Configuration::closed(lattice);
        for e in 0..c.num_edges() {
            if f(e) {
                c.bits[e / 64] |= 1 << (e % 64);
            }
        }
        c
    }

    /// Configuration whose open edges are the set bits of `mask` (at most 64 edges).
    pub fn from_mask(lattice: Arc<Lattice>, mask: u64) -> Configuration {
        assert!(lattice.num_edges() <= 64);
        Configuration::from_fn(lattice, |e| mask >> e & 1 == 1)
    }

    /// Open edges as a bit mask (at most 64 edges).
    pub fn mask(&self) -> u64 {
        assert!(self.num_edges() <= 64);
        self.bits.first().copied().unwrap_or(0)
    }

    /// The lattice tables.
    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    /// The triadic cube, if the lattice is one.
    pub fn cube(&self) -> Option<&CubeSpec> {
        self.lattice.cube()
    }

    /// Number of edges.
    pub fn num_edges(&self) -> usize {
        self.lattice.num_edges()
    }

    /// State of edge `e`.
    #[inline]
    pub fn is_open(&self, e: usize) -> bool {
        self.bits[e / 64] >> (e % 64) & 1 == 1
    }

    /// Conductance `a(e)` as 0.0 or 1.0.
    #[inline]
    pub fn weight(&self, e: usize) -> f64 {
        if self.is_open(e) {
            1.0
        } else {
            0.0
        }
    }

    /// Sets the state of edge `e`.
    pub fn set(&mut self, e: usize, open: bool) {
        if open {
            self.bits[e / 64] |= 1 << (e % 64);
        } else {
            self.bits[e / 64] &= !(1 << (e % 64));
        }
    }

    /// Number of open edges.
    pub fn num_open(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Ordinals of the closed edges.
    pub fn closed_edges(&self) -> Vec<usize> {
        (0..self.num_edges())
            .filter(|&e| !self.is_open(e))
            .collect()
    }

    /// `a^G`: the configuration with every edge of `g` opened.
    pub fn open_set(&self, g: &EdgeSet) -> Result<Configuration> {
        g.validate(self.num_edges())?;
        Ok(self.with_open(g.as_slice()))
    }

    /// `a^G` for ordinals known to be valid.
    pub fn with_open(&self, g: &[usize]) -> Configuration {
        let mut c = self.clone();
        for &e in g {
            c.set(e, true);
        }
        c
    }

    /// Bitwise order `self <= other`.
    pub fn le(&self, other: &Configuration) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| a & !b == 0)
    }

    /// 64-bit fingerprint of the vertex box and the bit array.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }

    /// Serializes into the binary format: 16-byte header then edges packed
    /// eight per byte, least significant bit first, in ordinal order.
    /// Only configurations on triadic cubes are representable.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cube = self
            .cube()
            .ok_or_else(|| Error::Format("only triadic cubes can be serialized".into()))?;
        let mut out = Vec::with_capacity(HEADER_LEN + self.num_edges().div_ceil(8));
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.push(cube.dim() as u8);
        out.push(cube.level() as u8);
        out.extend_from_slice(&[0u8; 9]);
        for i in 0..self.num_edges().div_ceil(8) {
            out.push((self.bits[i / 8] >> (8 * (i % 8))) as u8);
        }
        Ok(out)
    }

    /// Decodes the binary format into a configuration on the origin-centered cube.
    pub fn from_bytes(bytes: &[u8]) -> Result<Configuration> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing PCHM header".into()));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {}", bytes[4])));
        }
        let cube = CubeSpec::new(bytes[5] as usize, bytes[6] as u32)?;
        let lattice = Arc::new(Lattice::new(cube));
        let n = lattice.num_edges();
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != n.div_ceil(8) {
            return Err(Error::Format(format!(
                "expected {} payload bytes, found {}",
                n.div_ceil(8),
                payload.len()
            )));
        }
        if n % 8 != 0 && payload[payload.len() - 1] >> (n % 8) != 0 {
            return Err(Error::Format("padding bits set".into()));
        }
        Ok(Configuration::from_fn(lattice, |e| {
            payload[e / 8] >> (e % 8) & 1 == 1
        }))
    }
}

/// Bits per coordinate in the stream position of an edge.
fn coord_bits(dim: usize) -> u32 {
    (60 / dim) as u32
}

/// Per-edge uniforms of one sample, the common source of every threshold.
#[derive(Clone, Debug)]
pub struct CouplingSample {
    lattice: Arc<Lattice>,
    uniforms: Vec<f64>,
}

impl CouplingSample {
    /// Draws the uniforms of sample `index` under master seed `seed`.
    pub fn new(lattice: Arc<Lattice>, seed: u64, index: u64) -> CouplingSample {
        let d = lattice.dim();
        let bits = coord_bits(d);
        let offset = 1i64 << (bits - 1);
        let region = lattice.region().clone();
        assert!(
            region.lo().iter().all(|&c| c > -offset) && region.hi().iter().all(|&c| c < offset),
            "cube exceeds the coordinate range of the sampler"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let mut uniforms = vec![0.0; lattice.num_edges()];
        let side = lattice.side();
        // Vertices along the last axis are consecutive in index order and
        // their stream positions are consecutive blocks of `d` draws.
        for row_start in (0..lattice.num_vertices()).step_by(side) {
            let mut packed: u128 = 0;
            for axis in 0..d {
                let c = (lattice.coord(row_start, axis) + offset) as u128;
                packed = (packed << bits) | c;
            }
            rng.set_word_pos(2 * packed * d as u128);
            for v in row_start..row_start + side {
                for axis in 0..d {
                    let u = rng.next_u64();
                    if let Some(e) = lattice.forward_edge(v, axis) {
                        uniforms[e] = (u >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                    }
                }
            }
        }
        CouplingSample { lattice, uniforms }
    }

    /// The lattice tables.
    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    /// Uniform attached to edge `e`.
    pub fn uniform(&self, e: usize) -> f64 {
        self.uniforms[e]
    }

    /// All uniforms in ordinal order.
    pub fn uniforms(&self) -> &[f64] {
        &self.uniforms
    }

    /// Edge open iff `U(e) < p`.
    pub fn threshold(&self, p: f64) -> Result<Configuration> {
        check_probability(p)?;
        Ok(Configuration::from_fn(self.lattice.clone(), |e| {
            self.uniforms[e] < p
        }))
    }

    /// The coupled configuration at `p + delta`: each edge closed at `p` opens
    /// with conditional probability `delta / (1 - p)`. Requires `0 <= delta <= 1 - p`.
    pub fn raise(&self, p: f64, delta: f64) -> Result<Configuration> {
        check_probability(p)?;
        if !(0.0..=1.0 - p).contains(&delta) {
            return Err(Error::OutOfDomain(format!(
                "coupling increment {delta} outside [0, 1 - p] for p = {p}"
            )));
        }
        self.threshold(p + delta)
    }
}

/// Samples configuration number `index` at parameter `p` under master seed `seed`.
pub fn sample(lattice: Arc<Lattice>, p: f64, seed: u64, index: u64) -> Result<Configuration> {
    check_probability(p)?;
    CouplingSample::new(lattice, seed, index).threshold(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(d: usize, m: u32) -> Arc<Lattice> {
        Arc::new(Lattice::new(CubeSpec::new(d, m).unwrap()))
    }

    #[test]
    fn degenerate_probabilities() {
        let l = lat(2, 2);
        assert_eq!(
            sample(l.clone(), 1.0, 3, 0).unwrap().num_open(),
            l.num_edges()
        );
        assert_eq!(sample(l.clone(), 0.0, 3, 0).unwrap().num_open(), 0);
        assert_eq!(sample(l, 1.5, 3, 0), Err(Error::InvalidProbability(1.5)));
    }

    #[test]
    fn sampling_is_deterministic() {
        let l = lat(3, 2);
        assert_eq!(
            sample(l.clone(), 0.4, 9, 5).unwrap(),
            sample(l.clone(), 0.4, 9, 5).unwrap()
        );
        assert_ne!(
            sample(l.clone(), 0.4, 9, 5).unwrap(),
            sample(l, 0.4, 9, 6).unwrap()
        );
    }

    #[test]
    fn nested_cubes_share_uniforms() {
        let small = lat(2, 2);
        let big = lat(2, 3);
        let a = CouplingSample::new(small.clone(), 11, 2);
        let b = CouplingSample::new(big.clone(), 11, 2);
        for e in 0..small.num_edges() {
            let (x, y) = small.endpoints(e);
            let bx = big.index(&small.coords(x)).unwrap();
            let by = big.index(&small.coords(y)).unwrap();
            let be = big.edge_between(bx, by).unwrap();
            assert_eq!(a.uniform(e), b.uniform(be));
        }
    }

    #[test]
    fn open_set_examples() {
        let l = lat(2, 1);
        let a = Configuration::closed(l.clone());
        assert_eq!(a.open_set(&EdgeSet::empty()).unwrap(), a);
        let b = a.open_set(&EdgeSet::single(0)).unwrap();
        assert_eq!(b.num_open(), 1);
        assert!(b.is_open(0));
        assert_eq!(
            a.open_set(&EdgeSet::single(12)),
            Err(Error::InvalidEdge(12))
        );
        let full = Configuration::open(l);
        assert_eq!(
            full.open_set(&EdgeSet::new(vec![3, 1]).unwrap()).unwrap(),
            full
        );
    }

    #[test]
    fn binary_round_trip() {
        let l = lat(2, 2);
        let a = sample(l, 0.5, 1, 0).unwrap();
        let bytes = a.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"PCHM");
        assert_eq!(bytes.len(), 16 + 144 / 8);
        assert_eq!(Configuration::from_bytes(&bytes).unwrap(), a);
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(Configuration::from_bytes(&bad).is_err());
    }

    #[test]
    fn k_subsets_counts() {
        let pool: Vec<usize> = (0..6).collect();
        assert_eq!(k_subsets(&pool, 0), vec![EdgeSet::empty()]);
        assert_eq!(k_subsets(&pool, 2).len(), 15);
        assert_eq!(k_subsets(&pool, 6).len(), 1);
        assert!(k_subsets(&pool, 7).is_empty());
        let s3 = k_subsets(&[2, 5, 7, 9], 3);
        assert_eq!(s3.len(), 4);
        assert_eq!(s3[0].as_slice(), &[2, 5, 7]);
        assert_eq!(s3[3].as_slice(), &[5, 7, 9]);
        assert_eq!(binomial(12, 3), 220.0);
    }

    #[test]
    fn raise_rejects_large_increment() {
        let c = CouplingSample::new(lat(2, 1), 0, 0);
        assert!(c.raise(0.7, 0.31).is_err());
        assert_eq!(c.raise(0.5, 0.2).unwrap(), c.threshold(0.7).unwrap());
    }

    #[test]
    fn open_fraction_matches_p() {
        // 10^4 samples of 144 edges at p = 1/2: the open fraction has standard
        // deviation sqrt(0.25 / 1.44e6) = 4.17e-4, so 3 sigma = 1.25e-3.
        let l = lat(2, 2);
        let total: usize = (0..10_000u64)
            .map(|i| sample(l.clone(), 0.5, 77, i).unwrap().num_open())
            .sum();
        let frac = total as f64 / (10_000.0 * 144.0);
        assert!((frac - 0.5).abs() < 1.25e-3, "open fraction {frac}");
    }
}
