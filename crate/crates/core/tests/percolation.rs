//! Sampling, the monotone coupling and Glauber edits.

mod common;

use perchom::percolation::{sample, Configuration, CouplingSample, EdgeSet};
use proptest::prelude::*;

#[test]
fn sampling_is_deterministic() {
    let lat = common::cube_lattice(2, 3);
    for i in 0..5 {
        let a = sample(lat.clone(), 0.6, 42, i).unwrap();
        let b = sample(lat.clone(), 0.6, 42, i).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    }
    assert_ne!(
        sample(lat.clone(), 0.6, 42, 0).unwrap(),
        sample(lat, 0.6, 43, 0).unwrap()
    );
}

#[test]
fn open_fraction_at_one_half() {
    let lat = common::cube_lattice(2, 4);
    let samples = 20;
    let n = (lat.num_edges() * samples) as f64;
    let open: usize = (0..samples as u64)
        .map(|i| sample(lat.clone(), 0.5, 9, i).unwrap().num_open())
        .sum();
    let sigma = (0.25 / n).sqrt();
    assert!((open as f64 / n - 0.5).abs() <= 3.0 * sigma);
}

#[test]
fn endpoint_probabilities() {
    let lat = common::cube_lattice(2, 2);
    assert_eq!(sample(lat.clone(), 0.0, 1, 0).unwrap().num_open(), 0);
    assert_eq!(
        sample(lat.clone(), 1.0, 1, 0).unwrap().num_open(),
        lat.num_edges()
    );
    assert!(sample(lat, 1.5, 1, 0).is_err());
}

#[test]
fn nested_cubes_share_uniforms() {
    let big = common::cube_lattice(2, 3);
    let cs = CouplingSample::new(big.clone(), 5, 2);
    for sub in big.cube().unwrap().successors().unwrap() {
        let small = std::sync::Arc::new(perchom::lattice::Lattice::new(sub));
        let cs_small = CouplingSample::new(small.clone(), 5, 2);
        for e in 0..small.num_edges() {
            let (x, y) = small.endpoints(e);
            let bx = big.index(&small.coords(x)).unwrap();
            let by = big.index(&small.coords(y)).unwrap();
            let eb = big.edge_between(bx, by).unwrap();
            assert_eq!(cs_small.uniform(e), cs.uniform(eb));
        }
    }
}

#[test]
fn raise_rejects_overshoot() {
    let cs = CouplingSample::new(common::cube_lattice(2, 1), 0, 0);
    assert!(cs.raise(0.6, 0.5).is_err());
    assert_eq!(cs.raise(0.6, 0.1).unwrap(), cs.threshold(0.7).unwrap());
}

#[test]
fn binary_round_trip() {
    let a = sample(common::cube_lattice(3, 1), 0.4, 3, 1).unwrap();
    let bytes = a.to_bytes().unwrap();
    assert_eq!(&bytes[..4], b"PCHM");
    assert_eq!(Configuration::from_bytes(&bytes).unwrap(), a);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Configuration::from_bytes(&bad).is_err());
}

proptest! {
    #[test]
    fn coupling_is_monotone(seed in any::<u64>(), p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0) {
        let (lo, hi) = (p1.min(p2), p1.max(p2));
        let cs = CouplingSample::new(common::cube_lattice(2, 2), seed, 0);
        let a = cs.threshold(lo).unwrap();
        let b = cs.threshold(hi).unwrap();
        prop_assert!(a.le(&b));
        // Restricted to the edges open at the lower level the two agree.
        for e in 0..a.num_edges() {
            if a.is_open(e) {
                prop_assert!(b.is_open(e));
            }
        }
    }

    #[test]
    fn open_set_commutes(
        seed in any::<u64>(),
        g1 in proptest::collection::btree_set(0usize..12, 0..6),
        g2 in proptest::collection::btree_set(0usize..12, 0..6),
    ) {
        let a = sample(common::cube_lattice(2, 1), 0.3, seed, 0).unwrap();
        let g1: Vec<usize> = g1.into_iter().collect();
        let g2: Vec<usize> = g2.into_iter().collect();
        let s1 = EdgeSet::new(g1.clone()).unwrap();
        let s2 = EdgeSet::new(g2.clone()).unwrap();
        let left = a.open_set(&s1).unwrap().open_set(&s2).unwrap();
        let right = a.open_set(&s1.union(&s2)).unwrap();
        prop_assert_eq!(&left, &right);
        let mut all = g1;
        all.extend(g2);
        prop_assert_eq!(&left, &a.with_open(&all));
        for e in 0..a.num_edges() {
            prop_assert_eq!(left.is_open(e), a.is_open(e) || all.contains(&e));
        }
    }
}

#[test]
fn edits() {
    let lat = common::cube_lattice(2, 1);
    let closed = Configuration::closed(lat.clone());
    let one = closed.with_open(&[3]);
    assert_eq!(one.num_open(), 1);
    assert!(one.is_open(3));
    let open = Configuration::open(lat);
    assert_eq!(open.with_open(&[0, 5]), open);
}
