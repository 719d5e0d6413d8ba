//! Harmonic and Poisson solves against a dense elimination oracle, and
//! structural properties of the energy.

mod common;

use perchom::clusters::ClusterLabeling;
use perchom::dirichlet::{
    conductivity, dirichlet_energy, energy, flux_energy, interior_residual, linear_function,
    solve_harmonic, solve_poisson, unit, EdgeField,
};
use perchom::exec::Exec;
use perchom::lattice::CubeSpec;
use perchom::percolation::{sample, Configuration, CouplingSample};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn harmonic_matches_dense_solver() {
    let xis = [vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
    for side in [3, 5, 7] {
        let lat = common::box_lattice(2, side);
        for i in 0..30 {
            let a = sample(lat.clone(), 0.6, 8, i).unwrap();
            let xi = &xis[i as usize % 3];
            let (v, report) = solve_harmonic(&a, xi).unwrap();
            assert!(report.relative_residual <= 1e-10);
            let dense = common::dense_harmonic(&a, xi);
            let extended = common::dense_solution(&a, xi, &[]);
            for x in 0..lat.num_vertices() {
                if !dense[x].is_nan() {
                    assert!(
                        (v.0[x] - dense[x]).abs() <= 1e-9,
                        "side {side} sample {i} vertex {x}"
                    );
                }
                assert!((v.0[x] - extended[x]).abs() <= 1e-9);
            }
            let e = dirichlet_energy(&a, &v);
            assert!((e - common::dense_energy(&a, xi)).abs() <= 1e-10 * (1.0 + e));
        }
    }
}

#[test]
fn dense_oracle_in_three_dimensions() {
    let lat = common::cube_lattice(3, 1);
    for i in 0..20 {
        let a = sample(lat.clone(), 0.5, 2, i).unwrap();
        let xi = unit(3, i as usize % 3);
        let e = energy(&a, &xi).unwrap();
        assert!((e - common::dense_energy(&a, &xi)).abs() <= 1e-12);
    }
}

#[test]
fn closed_forms() {
    let lat = common::cube_lattice(2, 1);
    assert_eq!(
        energy(&Configuration::open(lat.clone()), &[1.0, 0.0]).unwrap(),
        2.0 / 3.0
    );
    assert_eq!(
        energy(&Configuration::closed(lat), &[1.0, 0.0]).unwrap(),
        0.0
    );
    for m in 1..=4 {
        let cube = CubeSpec::new(2, m).unwrap();
        let l = cube.side() as f64;
        let est = conductivity(&cube, 1.0, &[0.0, 1.0], 2, 0, Exec::Sequential).unwrap();
        assert!((est.mean - (l - 1.0) / l).abs() <= 1e-12);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(
            conductivity(&cube, 0.0, &[1.0, 0.0], 2, 0, Exec::Sequential)
                .unwrap()
                .mean,
            0.0
        );
    }
}

#[test]
fn energy_is_a_minimum() {
    let lat = common::cube_lattice(2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xi = [0.6, 0.8];
    for i in 0..10 {
        let a = sample(lat.clone(), 0.7, 12, i).unwrap();
        let (v, _) = solve_harmonic(&a, &xi).unwrap();
        let e = dirichlet_energy(&a, &v);
        let l = linear_function(&lat, &xi);
        for c in 0..50 {
            let scale = [1.0, 1e-3][c % 2];
            let start = if c % 4 < 2 { &v } else { &l };
            let mut u = start.clone();
            for x in 0..lat.num_vertices() {
                if !lat.is_boundary(x) {
                    u.0[x] += scale * rng.random_range(-1.0..1.0);
                }
            }
            let mut s = 0.0;
            for ed in 0..lat.num_edges() {
                if a.is_open(ed) {
                    let (x, y) = lat.endpoints(ed);
                    s += (u.0[y] - u.0[x]).powi(2);
                }
            }
            assert!(e <= s / lat.num_vertices() as f64 + 1e-12);
        }
    }
}

#[test]
fn quenched_monotonicity() {
    let lat = common::cube_lattice(2, 3);
    for i in 0..30 {
        let cs = CouplingSample::new(lat.clone(), 77, i);
        let mut prev = 0.0;
        for p in [0.4, 0.55, 0.7, 0.85, 1.0] {
            let e = energy(&cs.threshold(p).unwrap(), &[1.0, 0.0]).unwrap();
            assert!(prev <= e + 1e-12, "sample {i} at p = {p}");
            prev = e;
        }
    }
}

#[test]
fn dual_form_agrees() {
    for (d, m) in [(2, 3), (3, 2)] {
        let lat = common::cube_lattice(d, m);
        for i in 0..15 {
            let a = sample(lat.clone(), 0.65, 3, i).unwrap();
            let xi = unit(d, i as usize % d);
            let (v, _) = solve_harmonic(&a, &xi).unwrap();
            let e = dirichlet_energy(&a, &v);
            let f = flux_energy(&a, &v, &xi);
            assert!((e - f).abs() <= 1e-10 * e.abs().max(1e-300), "{e} vs {f}");
        }
    }
}

#[test]
fn poisson_residual() {
    let lat = common::cube_lattice(2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..10 {
        let a = sample(lat.clone(), 0.75, 6, i).unwrap();
        let lab = ClusterLabeling::new(&a);
        let mut w = EdgeField::zeros(lat.num_edges());
        for e in 0..lat.num_edges() {
            let (x, _) = lat.endpoints(e);
            if a.is_open(e) && lab.in_cbc(x) {
                w.0[e] = rng.random_range(-1.0..1.0);
            }
        }
        let (v, _) = solve_poisson(&a, &w).unwrap();
        let div = w.divergence(&lat);
        let r = interior_residual(&a, &v, Some(&div));
        let norm = div.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(r <= 1e-9 * norm, "{r} vs {norm}");
        for x in lat.boundary_vertices() {
            assert_eq!(v.0[x], 0.0);
        }
    }
}

#[test]
fn seeds_and_directions_agree() {
    let cube = CubeSpec::new(2, 4).unwrap();
    let a = conductivity(&cube, 0.7, &[1.0, 0.0], 40, 1, Exec::Parallel).unwrap();
    let b = conductivity(&cube, 0.7, &[1.0, 0.0], 40, 2, Exec::Parallel).unwrap();
    let c = conductivity(&cube, 0.7, &[0.0, 1.0], 40, 3, Exec::Parallel).unwrap();
    assert!((a.mean - b.mean).abs() <= 4.0 * a.combined_error(&b));
    assert!((a.mean - c.mean).abs() <= 4.0 * a.combined_error(&c));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn energy_is_bounded(seed in any::<u64>(), p in 0.0f64..=1.0, angle in 0.0f64..std::f64::consts::TAU) {
        let lat = common::cube_lattice(2, 2);
        let a = sample(lat, p, seed, 0).unwrap();
        let e = energy(&a, &[angle.cos(), angle.sin()]).unwrap();
        prop_assert!((0.0..=2.0).contains(&e));
    }
}
