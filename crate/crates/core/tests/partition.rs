//! Local and pyramid partitions checked by definitional post-conditions.

mod common;

use perchom::clusters::is_well_connected;
use perchom::lattice::{ratio, CubeSpec};
use perchom::partition::{
    build_pyramid, counting_diagnostic, lambda_report, local_partition, n_stable_check,
    nesting_check, partition_soundness, GoodCubePredicate, LocalPartition,
};
use perchom::percolation::{sample, Configuration};
use perchom::Error;

/// Disjoint cover checked vertex by vertex.
fn assert_covers(part: &LocalPartition, a: &Configuration) {
    let lat = a.lattice();
    let inside = lat.vertices_in(&part.parent.region());
    let mut owners = vec![0usize; lat.num_vertices()];
    for c in &part.cells {
        assert!(part.parent.contains_cube(c));
        for v in lat.vertices_in(&c.region()) {
            owners[v] += 1;
        }
    }
    for v in inside {
        assert_eq!(owners[v], 1);
    }
}

#[test]
fn always_true_gives_side_three_cells() {
    let lat = common::cube_lattice(2, 2);
    let a = Configuration::closed(lat);
    let pred = GoodCubePredicate::always_true();
    let part = local_partition(&a, a.cube().unwrap(), &pred).unwrap();
    assert_eq!(part.cells.len(), 9);
    assert!(part.cells.iter().all(|c| c.side() == 3));
    assert_covers(&part, &a);
    assert!(partition_soundness(&a, &part, &pred).unwrap().passes());
}

#[test]
fn parent_must_be_good() {
    let a = Configuration::closed(common::cube_lattice(2, 2));
    let pred = GoodCubePredicate::well_connected();
    assert_eq!(
        local_partition(&a, a.cube().unwrap(), &pred),
        Err(Error::ParentNotGood)
    );
}

#[test]
fn very_well_connected_partitions_are_sound() {
    let lat = common::cube_lattice(2, 3);
    let pred = GoodCubePredicate::very_well_connected(3);
    let mut built = 0;
    for i in 0..40 {
        let a = sample(lat.clone(), 0.95, 19, i).unwrap();
        match local_partition(&a, a.cube().unwrap(), &pred) {
            Ok(part) => {
                built += 1;
                assert_covers(&part, &a);
                let rep = partition_soundness(&a, &part, &pred).unwrap();
                assert!(rep.disjoint_cover && rep.all_good, "sample {i}");
                assert!(
                    rep.max_neighbor_ratio <= 3.0,
                    "sample {i}: {}",
                    rep.max_neighbor_ratio
                );
                assert!(part.cells.iter().all(|c| c.side() >= 3));
            }
            Err(Error::ParentNotGood) => {}
            Err(e) => panic!("{e}"),
        }
    }
    assert!(built >= 10, "only {built} roots were very well connected");
}

#[test]
fn lambda_examples() {
    // Singleton cells: the moment is 1 for every exponent.
    let parent = CubeSpec::new(2, 1).unwrap();
    let singletons = LocalPartition {
        cells: parent.descendants(0),
        parent,
    };
    assert_eq!(singletons.cells.len(), 9);
    assert_eq!(singletons.max_side(), 1);
    for t in [0.5, 2.0, 4.0] {
        assert_eq!(singletons.moment(t), 1.0);
    }

    // Only the root good: the partition is the root itself, which breaks
    // the maximal-size bound.
    let a = Configuration::open(common::cube_lattice(2, 2));
    let root = a.cube().unwrap().clone();
    let only_root = GoodCubePredicate::new("root", ratio(1, 1), {
        let root = root.clone();
        move |_, c| Ok(*c == root)
    });
    let part = local_partition(&a, &root, &only_root).unwrap();
    assert_eq!(part.cells, vec![root.clone()]);
    let rep = lambda_report(&a, &root, &only_root, 2.0).unwrap();
    assert_eq!(rep.max_side, 9);
    assert!(!rep.passes(f64::INFINITY));
}

#[test]
fn open_pyramid_nests() {
    let lat = common::cube_lattice(2, 4);
    let a = Configuration::open(lat);
    let root = a.cube().unwrap().clone();
    let preds = [
        GoodCubePredicate::very_well_connected(3),
        GoodCubePredicate::very_well_connected(9),
    ];
    let pp = build_pyramid(&a, &root, &preds).unwrap();
    assert_eq!(pp.depth(), 2);
    let top = pp.level(1).unwrap();
    let bottom = pp.level(0).unwrap();
    for (i, cell) in bottom.iter().enumerate() {
        let parent = &top[pp.parent(0, i).unwrap()];
        assert!(parent.contains_cube(cell));
        assert!(cell.side() >= 3);
    }
    assert!(top.iter().all(|c| c.side() >= 9 && root.contains_cube(c)));
    let rep = nesting_check(&a, &pp).unwrap();
    assert_eq!(rep.violations, 0);
    assert!(rep.checked > 0);
    // Slightly enlarged cells stay disjoint.
    assert_eq!(counting_diagnostic(&pp, ratio(1001, 1000), 0).unwrap(), 1);
    assert_eq!(counting_diagnostic(&pp, ratio(1001, 1000), 1).unwrap(), 1);
    assert!(counting_diagnostic(&pp, ratio(3, 2), 0).unwrap() >= 1);
}

#[test]
fn single_level_pyramid_is_the_local_partition() {
    let lat = common::cube_lattice(2, 3);
    let a = sample(lat, 0.97, 2, 0).unwrap();
    let pred = GoodCubePredicate::well_connected();
    let root = a.cube().unwrap().clone();
    let part = local_partition(&a, &root, &pred).unwrap();
    let pp = build_pyramid(&a, &root, std::slice::from_ref(&pred)).unwrap();
    assert_eq!(pp.level(0).unwrap(), part.cells.as_slice());
}

#[test]
fn obstructed_pyramid_reports_level() {
    let lat = common::cube_lattice(2, 3);
    let a = sample(lat, 0.2, 2, 0).unwrap();
    let preds = [
        GoodCubePredicate::well_connected(),
        GoodCubePredicate::well_connected(),
    ];
    match build_pyramid(&a, a.cube().unwrap(), &preds) {
        Err(Error::PyramidObstructed { level, side, .. }) => {
            assert_eq!(level, 1);
            assert_eq!(side, 27);
        }
        other => panic!("expected an obstruction, got {other:?}"),
    }
}

#[test]
fn n_stability_matches_brute_force() {
    let lat = common::cube_lattice(2, 3);
    let wc = GoodCubePredicate::well_connected();
    for i in 0..12 {
        let a = sample(lat.clone(), 0.8, 23, i).unwrap();
        for cube in a.cube().unwrap().successors().unwrap().into_iter().take(3) {
            let region = cube.region();
            let base = is_well_connected(&a, &region).unwrap();
            let zero = n_stable_check(&a, &cube, &wc, 0, 1000).unwrap();
            assert_eq!(zero.stable, base);
            let one = n_stable_check(&a, &cube, &wc, 1, 10_000).unwrap();
            let brute = base
                && lat
                    .edges_in(&region)
                    .into_iter()
                    .all(|e| is_well_connected(&a.with_open(&[e]), &region).unwrap());
            assert_eq!(one.stable, brute);
            if one.stable {
                assert!(one.exhaustive);
            }
        }
    }
    let open = Configuration::open(lat);
    let cube = open.cube().unwrap().clone();
    assert!(n_stable_check(&open, &cube, &wc, 3, 10).unwrap().stable);
}
