//! Glauber derivatives, the fields `V(F, j)` and the corrector source
//! against uncached and literal re-implementations.

mod common;

use std::hash::{Hash, Hasher};

use perchom::dirichlet::{interior_residual, solve_harmonic, EdgeField, VertexField};
use perchom::glauber::{
    corrector_source, glauber_derivative, improved_energy, verify_vm_simple, Budget, GlauberEnv,
    ImprovedEnergyRequest, SetChange, SolveCache, REVALIDATION_TOLERANCE, W_TERMS,
};
use perchom::percolation::{sample, Configuration, EdgeSet};
use perchom::Result;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A pseudo-random functional of the configuration.
fn hashed(b: &Configuration) -> Result<f64> {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    b.hash(&mut h);
    Ok((h.finish() >> 11) as f64 / (1u64 << 53) as f64)
}

/// `D_e f(b) = f(b^e) - f(b)`, written from the definition.
fn d_single(f: &dyn Fn(&Configuration) -> Result<f64>, b: &Configuration, e: usize) -> Result<f64> {
    Ok(f(&b.with_open(&[e]))? - f(b)?)
}

#[test]
fn pair_derivative_is_the_composition_of_single_ones() {
    let budget = Budget::default();
    let lat = common::cube_lattice(2, 1);
    for i in 0..30 {
        let a = sample(lat.clone(), 0.4, 1, i).unwrap();
        for (e, e2) in [(0, 1), (3, 7), (5, 11), (2, 2)] {
            let inner = |b: &Configuration| d_single(&hashed, b, e2);
            let composed = d_single(&inner, &a, e).unwrap();
            let g = if e == e2 {
                EdgeSet::single(e)
            } else {
                EdgeSet::new(vec![e, e2]).unwrap()
            };
            let direct: f64 = glauber_derivative(hashed, &a, &g, &budget).unwrap();
            if e == e2 {
                // D_e D_e = -D_e.
                assert!((composed + direct).abs() <= 1e-15);
            } else {
                assert!((composed - direct).abs() <= 1e-15);
            }
        }
    }
}

#[test]
fn derivatives_commute_and_are_idempotent_up_to_sign() {
    let budget = Budget::default();
    let lat = common::box_lattice(2, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..20 {
        let a = sample(lat.clone(), 0.5, 4, i).unwrap();
        let es: Vec<usize> = (0..lat.num_edges())
            .collect::<Vec<_>>()
            .choose_multiple(&mut rng, 2)
            .copied()
            .collect();
        let (e, e2) = (EdgeSet::single(es[0]), EdgeSet::single(es[1]));
        let nested = |outer: &EdgeSet, inner: &EdgeSet| -> f64 {
            glauber_derivative(
                |b: &Configuration| glauber_derivative::<f64, _>(hashed, b, inner, &budget),
                &a,
                outer,
                &budget,
            )
            .unwrap()
        };
        assert_eq!(nested(&e, &e2), nested(&e2, &e));
        let once: f64 = glauber_derivative(hashed, &a, &e, &budget).unwrap();
        assert_eq!(nested(&e, &e), -once);
    }
}

#[test]
fn vector_valued_derivative_matches_brute_force() {
    let lat = common::box_lattice(2, 3);
    let budget = Budget::default();
    for i in 0..10 {
        let a = sample(lat.clone(), 0.3, 6, i).unwrap();
        let closed = a.closed_edges();
        let g: Vec<usize> = closed.iter().take(3).copied().collect();
        let f =
            |b: &Configuration| -> Result<VertexField> { Ok(solve_harmonic(b, &[1.0, 0.0])?.0) };
        let got: VertexField =
            glauber_derivative(f, &a, &EdgeSet::new(g.clone()).unwrap(), &budget).unwrap();
        let oracle =
            common::brute_derivative(|b| solve_harmonic(b, &[1.0, 0.0]).unwrap().0 .0, &a, &g);
        assert!(common::max_diff(&got.0, &oracle) <= 1e-12);
    }
}

#[test]
fn w_degree_bookkeeping() {
    // Three terms sum over e outside F and two over e inside F.
    assert_eq!(W_TERMS.iter().filter(|t| !t.e_in_f).count(), 3);
    assert_eq!(W_TERMS.iter().filter(|t| t.e_in_f).count(), 2);
    for t in &W_TERMS {
        match t.change {
            SetChange::AddEdge => assert!(!t.e_in_f),
            SetChange::RemoveEdge => assert!(t.e_in_f),
            SetChange::Same => {}
        }
        assert!(t.sign == 1 || t.sign == -1);
        for f_len in 1..6 {
            for j in 0..4 {
                assert!(
                    t.degree(f_len, j) < f_len as i64 + 2 * j,
                    "{t:?} at |F| = {f_len}, j = {j}"
                );
            }
        }
    }
}

#[test]
fn big_v_matches_uncached_oracle() {
    let xi = [0.6, 0.8];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (side, cases) in [(3, 12), (5, 4)] {
        let lat = common::box_lattice(2, side);
        for i in 0..cases {
            let a = sample(lat.clone(), [0.3, 0.6][i as usize % 2], 10, i).unwrap();
            let env = GlauberEnv::new(a.clone(), &xi).unwrap();
            let closed = a.closed_edges();
            for (f_len, j) in [(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (0, 2)] {
                if side == 5 && f_len + j > 2 {
                    continue;
                }
                let f: Vec<usize> = closed
                    .choose_multiple(&mut rng, f_len.min(closed.len()))
                    .copied()
                    .collect();
                let got = env
                    .big_v(&EdgeSet::new(f.clone()).unwrap(), j as i64)
                    .unwrap();
                let oracle = common::uncached_v(&a, &xi, &f, j);
                let scale = 1.0 + oracle.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                assert!(
                    common::max_diff(&got.0, &oracle) <= 1e-9 * scale,
                    "side {side} sample {i} |F| = {f_len} j = {j}"
                );
            }
        }
    }
}

#[test]
fn solution_is_the_grain_extended_dense_solution() {
    let xi = [1.0, 0.0];
    let lat = common::box_lattice(2, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..10 {
        let a = sample(lat.clone(), 0.45, 13, i).unwrap();
        let env = GlauberEnv::new(a.clone(), &xi).unwrap();
        let h: Vec<usize> = a
            .closed_edges()
            .choose_multiple(&mut rng, 2)
            .copied()
            .collect();
        let got = env.solution(&EdgeSet::new(h.clone()).unwrap()).unwrap();
        let oracle = common::dense_solution(&a, &xi, &h);
        assert!(common::max_diff(&got.0, &oracle) <= 1e-9);
    }
}

/// `W(F, j)` transliterated term by term: for a closed edge `e` outside `F`,
/// `grad V(F, j-1) - grad V(F u e, j-2) + grad V(F u e, j-1)`; for `e` in `F`,
/// `grad V(F \ e, j) - grad V(F, j-1)`; zero on open edges.
fn literal_w(env: &GlauberEnv, f: &EdgeSet, j: i64) -> EdgeField {
    let a = env.config();
    let lat = env.lattice();
    let grad = |v: &VertexField, e: usize| {
        let (x, y) = lat.endpoints(e);
        v.0[y] - v.0[x]
    };
    let v = |set: &EdgeSet, jj: i64| env.big_v(set, jj).unwrap();
    let mut w = EdgeField::zeros(lat.num_edges());
    for e in 0..lat.num_edges() {
        if a.is_open(e) {
            continue;
        }
        w.0[e] = if f.contains(e) {
            grad(&v(&f.without(e), j), e) - grad(&v(f, j - 1), e)
        } else {
            grad(&v(f, j - 1), e) - grad(&v(&f.with(e), j - 2), e) + grad(&v(&f.with(e), j - 1), e)
        };
    }
    w
}

#[test]
fn corrector_source_matches_literal_formula_and_solves_the_equation() {
    let xi = [1.0, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for side in [3, 5] {
        let lat = common::box_lattice(2, side);
        for i in 0..8 {
            let a = sample(lat.clone(), [0.3, 0.6, 0.9][i as usize % 3], 14, i).unwrap();
            let env = GlauberEnv::new(a.clone(), &xi).unwrap();
            let closed = a.closed_edges();
            for f_len in 0..=2usize {
                for j in 0..=1i64 {
                    let f: Vec<usize> = closed
                        .choose_multiple(&mut rng, f_len.min(closed.len()))
                        .copied()
                        .collect();
                    let f = EdgeSet::new(f).unwrap();
                    let w = corrector_source(&env, &f, j).unwrap();
                    let lit = literal_w(&env, &f, j);
                    assert!(common::max_diff(&w.0, &lit.0) <= 1e-12);
                    // -div(a^F grad V) = div W on interior vertices.
                    let vf = env.big_v(&f, j).unwrap();
                    let rhs: Vec<f64> = lit.divergence(&lat).iter().map(|x| -x).collect();
                    let r = interior_residual(&a.with_open(f.as_slice()), &vf, Some(&rhs));
                    assert!(
                        r <= 1e-8 * (1.0 + lit.max_abs()),
                        "side {side} sample {i} |F| = {f_len} j = {j}: {r}"
                    );
                }
            }
        }
    }
}

#[test]
fn vm_simple_against_uncached_sums() {
    let xi = [0.0, 1.0];
    let lat = common::box_lattice(2, 3);
    for i in 0..10 {
        let a = sample(lat.clone(), 0.5, 15, i).unwrap();
        let env = GlauberEnv::new(a.clone(), &xi).unwrap();
        for &e in a.closed_edges().iter().take(3) {
            for k in 1..=2usize {
                // Left side: sum over |G| = k - 1 of (D_G v)(a^e), G avoiding e.
                let pool: Vec<usize> = a.closed_edges().into_iter().filter(|&g| g != e).collect();
                let mut lhs = vec![0.0; lat.num_vertices()];
                for g in common::combinations(&pool, k - 1) {
                    let d = common::brute_derivative(
                        |b: &Configuration| {
                            let opened: Vec<usize> = (0..b.num_edges())
                                .filter(|&x| b.is_open(x) && !a.is_open(x))
                                .collect();
                            common::dense_solution(&a, &xi, &opened)
                        },
                        &a.with_open(&[e]),
                        &g,
                    );
                    for (s, x) in lhs.iter_mut().zip(d) {
                        *s += x;
                    }
                }
                let km = k as i64 - 1;
                let v0 = common::uncached_v(&a, &xi, &[], km as usize);
                let v1 = common::uncached_v(&a, &xi, &[e], km as usize);
                let v2 = if km >= 1 {
                    common::uncached_v(&a, &xi, &[e], km as usize - 1)
                } else {
                    vec![0.0; v0.len()]
                };
                let rhs: Vec<f64> = (0..v0.len()).map(|x| v0[x] + v1[x] - v2[x]).collect();
                assert!(common::max_diff(&lhs, &rhs) <= 1e-9);
                assert!(verify_vm_simple(&env, e, k).unwrap() <= 1e-9);
            }
        }
    }
}

#[test]
fn improved_energy_against_enumeration() {
    let xi = [1.0, 0.0];
    let lat = common::cube_lattice(2, 1);
    let n = lat.num_vertices() as f64;
    let plain = |a: &Configuration, i: usize, j: usize| -> f64 {
        let closed = a.closed_edges();
        let mut s = 0.0;
        for f in common::combinations(&closed, i) {
            let v = common::uncached_v(a, &xi, &f, j);
            for e in 0..a.num_edges() {
                let (x, y) = lat.endpoints(e);
                s += (v[y] - v[x]).powi(2);
            }
        }
        s / n
    };
    let mut configs = vec![Configuration::closed(lat.clone())];
    configs.extend((0..4).map(|i| sample(lat.clone(), 0.5, 16, i).unwrap()));
    for a in &configs {
        let env = GlauberEnv::new(a.clone(), &xi).unwrap();
        for (i, j) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let got = improved_energy(&env, &ImprovedEnergyRequest::plain(i, j), None).unwrap();
            let want = plain(a, i, j);
            assert!(
                (got - want).abs() <= 1e-9 * (1.0 + want),
                "({i}, {j}): {got} vs {want}"
            );
        }
    }
}

#[test]
fn concurrent_cache_use_is_benign() {
    let lat = common::box_lattice(2, 5);
    let a = sample(lat.clone(), 0.6, 17, 0).unwrap();
    let configs: Vec<Configuration> = a
        .closed_edges()
        .iter()
        .take(8)
        .map(|&e| a.with_open(&[e]))
        .collect();
    let solutions: Vec<VertexField> = configs
        .iter()
        .map(|b| solve_harmonic(b, &[1.0, 0.0]).unwrap().0)
        .collect();
    let cache = SolveCache::new();
    std::thread::scope(|s| {
        for t in 0..4 {
            let (cache, configs, solutions) = (&cache, &configs, &solutions);
            s.spawn(move || {
                for round in 0..20 {
                    let k = (t + round) % configs.len();
                    match cache.get(&configs[k]) {
                        Some(v) => assert_eq!(*v, solutions[k]),
                        None => {
                            let v = cache
                                .insert(
                                    configs[k].clone(),
                                    solutions[k].clone(),
                                    REVALIDATION_TOLERANCE,
                                )
                                .unwrap();
                            assert_eq!(*v, solutions[k]);
                        }
                    }
                }
            });
        }
    });
    assert_eq!(cache.len(), configs.len());
    for (b, v) in configs.iter().zip(&solutions) {
        assert_eq!(*cache.get(b).unwrap(), *v);
    }
    assert_eq!(cache.hits() + cache.misses(), 80 + configs.len());
}

#[test]
fn shared_environment_across_threads() {
    let lat = common::box_lattice(2, 5);
    let a = sample(lat.clone(), 0.5, 18, 0).unwrap();
    let xi = [1.0, 0.0];
    let env = GlauberEnv::new(a.clone(), &xi).unwrap();
    let f = EdgeSet::new(a.closed_edges().into_iter().take(2).collect()).unwrap();
    let fields: Vec<VertexField> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..4)
            .map(|_| s.spawn(|| env.big_v(&f, 1).unwrap()))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let fresh = GlauberEnv::new(a, &xi).unwrap().big_v(&f, 1).unwrap();
    for v in &fields {
        assert_eq!(*v, fresh);
    }
}
