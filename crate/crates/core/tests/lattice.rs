//! Lattice indexing, tilings and boundaries.

mod common;

use perchom::lattice::{ratio, CubeSpec, Lattice};
use proptest::prelude::*;

#[test]
fn edge_counts() {
    assert_eq!(CubeSpec::new(2, 1).unwrap().edge_count(), 12);
    assert_eq!(CubeSpec::new(3, 1).unwrap().edge_count(), 54);
    assert_eq!(Lattice::new(CubeSpec::new(2, 1).unwrap()).num_edges(), 12);
    assert_eq!(Lattice::new(CubeSpec::new(3, 1).unwrap()).num_edges(), 54);
    // d L^{d-1} (L - 1) for L = 9.
    assert_eq!(
        Lattice::new(CubeSpec::new(2, 2).unwrap()).num_edges(),
        2 * 9 * 8
    );
}

#[test]
fn dimension_below_two_is_rejected() {
    assert!(CubeSpec::new(1, 2).is_err());
    assert!(CubeSpec::new(0, 0).is_err());
}

#[test]
fn boundary_counts() {
    for (m, expected) in [(1, 8), (2, 32)] {
        let lat = Lattice::new(CubeSpec::new(2, m).unwrap());
        assert_eq!(lat.boundary_vertices().len(), expected);
        let oracle = (0..lat.num_vertices())
            .filter(|&v| common::on_box_boundary(&lat, v))
            .count();
        assert_eq!(oracle, expected);
    }
}

#[test]
fn successors_tile_the_parent() {
    for (d, m) in [(2, 1), (2, 2), (3, 1), (3, 2)] {
        let cube = CubeSpec::new(d, m).unwrap();
        let subs = cube.successors().unwrap();
        assert_eq!(subs.len(), 3usize.pow(d as u32));
        let lat = Lattice::new(cube.clone());
        let mut owners = vec![0usize; lat.num_vertices()];
        for s in &subs {
            assert_eq!(s.side(), cube.side() / 3);
            assert_eq!(s.predecessor(), cube);
            for v in lat.vertices_in(&s.region()) {
                owners[v] += 1;
            }
        }
        assert!(
            owners.iter().all(|&c| c == 1),
            "successors must tile d={d} m={m}"
        );
    }
}

#[test]
fn level_zero_has_no_successors() {
    assert!(CubeSpec::new(2, 0).unwrap().successors().is_err());
}

#[test]
fn scaled_cubes() {
    let cube = CubeSpec::new(2, 2).unwrap();
    assert_eq!(cube.scaled(ratio(1, 1)).side(), 9);
    assert_eq!(cube.scaled(ratio(4, 3)).side(), 13);
    assert_eq!(cube.scaled(ratio(19, 10)).side(), 17);
    let unit = CubeSpec::new(2, 0).unwrap();
    assert_eq!(unit.scaled(ratio(19, 10)).side(), 1);
    let ambient = cube.region();
    let clamped = cube.scaled(ratio(19, 10)).clamped(&ambient).unwrap();
    assert_eq!(clamped, ambient);
}

proptest! {
    #[test]
    fn edge_round_trip(d in 2usize..4, m in 0u32..3) {
        let lat = Lattice::new(CubeSpec::new(d, m).unwrap());
        for info in lat.enumerate_edges() {
            prop_assert_eq!(lat.edge_between(info.tail, info.head), Some(info.ordinal));
            prop_assert_eq!(lat.edge_between(info.head, info.tail), Some(info.ordinal));
            let mut x = lat.coords(info.tail);
            x[info.axis] += 1;
            prop_assert_eq!(lat.index(&x), Some(info.head));
        }
        for v in 0..lat.num_vertices() {
            prop_assert_eq!(lat.index(&lat.coords(v)), Some(v));
        }
    }

    #[test]
    fn scaled_side_is_monotone(m in 1u32..4, n1 in 1i64..40, n2 in 1i64..40) {
        let cube = CubeSpec::new(2, m).unwrap();
        let (lo, hi) = (n1.min(n2), n1.max(n2));
        prop_assert!(cube.scaled(ratio(lo, 10)).side() <= cube.scaled(ratio(hi, 10)).side());
    }
}
