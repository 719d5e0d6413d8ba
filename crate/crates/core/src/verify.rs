//! Randomized verification suites for the identities of [`crate::glauber`].
//!
//! Each suite samples configurations on centered boxes of the requested
//! sides and parameters, draws perturbation sets from a seeded stream, and
//! reports for every identity the largest residual over all instances.
//! Residuals are normalized by `1 + scale`, where the scale is the largest
//! magnitude of the compared quantities, so a single tolerance applies to
//! scalar and field identities alike.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::clusters::ClusterLabeling;
use crate::dirichlet::{unit, EdgeField, SolverOptions};
use crate::exec::Exec;
use crate::glauber::{
    self, Budget, EnergyVariant, Functional, GlauberEnv, HoleGeometry, ImprovedEnergyRequest,
};
use crate::lattice::{CubeSpec, Lattice};
use crate::partition::{build_pyramid, GoodCubePredicate};
use crate::percolation::{sample, Configuration, EdgeSet};
use crate::{Error, Result};

/// Stream tag separating perturbation draws from configuration draws.
const SUITE_TAG: u64 = 0x5645_5249;

/// A verification suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    /// Elementary Glauber identities, the `V` expansion of `(D_G grad v)(a^e)`
    /// and the energy-derivative expansion.
    Identities,
    /// The perturbed corrector equation.
    Corrector,
    /// The growth decomposition and its cancellation clauses.
    Growth,
    /// Hole separation and its local decomposition.
    Hole,
    /// Consistency and domination checks of the improved energies.
    Energies,
}

impl Suite {
    /// All suites.
    pub const ALL: [Suite; 5] = [
        Suite::Identities,
        Suite::Corrector,
        Suite::Growth,
        Suite::Hole,
        Suite::Energies,
    ];

    /// The identifier used on the command line and in output files.
    pub fn name(self) -> &'static str {
        match self {
            Suite::Identities => "identities",
            Suite::Corrector => "corrector",
            Suite::Growth => "growth",
            Suite::Hole => "hole",
            Suite::Energies => "energies",
        }
    }

    /// Parses an identifier.
    pub fn parse(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// Parameters of a suite run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteConfig {
    /// Dimension.
    pub d: usize,
    /// Box sides (odd).
    pub sides: Vec<i64>,
    /// Bond parameters.
    pub ps: Vec<f64>,
    /// Instances per `(side, p)`.
    pub trials: usize,
    /// Master seed.
    pub seed: u64,
    /// Pass threshold on normalized residuals.
    pub tolerance: f64,
    /// Largest `|F|` drawn by the corrector and growth suites.
    pub max_f: usize,
    /// Largest `j` used by the corrector and hole suites.
    pub max_j: i64,
    /// Enumeration budget.
    pub budget: Budget,
    /// Hole-separation scalings.
    #[serde(skip)]
    pub geometry: HoleGeometry,
}

impl SuiteConfig {
    /// Defaults for `suite`: `d = 2`, `p in {0.3, 0.6, 0.9}`, 50 trials,
    /// tolerance `1e-8`, and sides `{3, 5}` (identities, corrector),
    /// `{3, 5, 9}` (growth) or `{9}` (hole, energies).
    pub fn defaults(suite: Suite) -> SuiteConfig {
        let sides = match suite {
            Suite::Identities | Suite::Corrector => vec![3, 5],
            Suite::Growth => vec![3, 5, 9],
            Suite::Hole | Suite::Energies => vec![9],
        };
        let (max_f, max_j) = match suite {
            Suite::Growth => (3, 0),
            Suite::Hole => (1, 1),
            _ => (2, 1),
        };
        SuiteConfig {
            d: 2,
            sides,
            ps: vec![0.3, 0.6, 0.9],
            trials: 50,
            seed: 0,
            tolerance: 1e-8,
            max_f,
            max_j,
            budget: Budget::default(),
            geometry: HoleGeometry::default(),
        }
    }
}

/// Largest normalized residual of one identity over a batch of instances.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualRow {
    /// Suite identifier.
    pub suite: &'static str,
    /// Identity identifier.
    pub identity: &'static str,
    /// Box side.
    pub side: i64,
    /// Bond parameter.
    pub p: f64,
    /// Instances where the identity applied.
    pub instances: usize,
    /// Largest normalized residual (zero when no instance applied).
    pub max_residual: f64,
    /// Pass threshold.
    pub tolerance: f64,
    /// `max_residual <= tolerance`.
    pub pass: bool,
}

/// Residuals of one instance: `(identity, normalized residual)`; identities
/// whose hypotheses fail on the instance are omitted.
type Measurements = Vec<(&'static str, f64)>;

fn normalized(residual: f64, scale: f64) -> f64 {
    residual / (1.0 + scale)
}

fn instance_rng(seed: u64, side: i64, p: f64, trial: usize) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    let words = [
        seed,
        side as u64 ^ p.to_bits().rotate_left(17),
        trial as u64,
        SUITE_TAG,
    ];
    for (i, w) in words.iter().enumerate() {
        bytes[8 * i..8 * i + 8].copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// Draws `size` distinct closed edges. With `bridging`, the first edge is
/// chosen, when possible, among closed edges with no endpoint on the
/// boundary-connecting set, so that perturbations also merge holes.
pub fn draw_perturbation(
    a: &Configuration,
    size: usize,
    bridging: bool,
    rng: &mut ChaCha8Rng,
) -> EdgeSet {
    let lat = a.lattice();
    let closed = a.closed_edges();
    let mut chosen: Vec<usize> = Vec::new();
    if bridging && size > 0 {
        let lab = ClusterLabeling::new(a);
        let inner: Vec<usize> = closed
            .iter()
            .copied()
            .filter(|&e| {
                let (x, y) = lat.endpoints(e);
                !lab.in_cbc(x) && !lab.in_cbc(y)
            })
            .collect();
        if let Some(&e) = inner.choose(rng) {
            chosen.push(e);
        }
    }
    while chosen.len() < size.min(closed.len()) {
        let e = closed[rng.random_range(0..closed.len())];
        if !chosen.contains(&e) {
            chosen.push(e);
        }
    }
    chosen.into_iter().collect()
}

fn environment(a: &Configuration, xi: &[f64], budget: Budget) -> Result<GlauberEnv> {
    let options = SolverOptions {
        tolerance: glauber::IDENTITY_TOLERANCE,
        ..SolverOptions::default()
    };
    GlauberEnv::with_settings(a.clone(), xi, options, budget, Exec::Sequential)
}

fn identities_instance(
    a: &Configuration,
    cfg: &SuiteConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Measurements> {
    let d = cfg.d;
    let env1 = environment(a, &unit(d, 0), cfg.budget)?;
    let env2 = environment(a, &unit(d, 1), cfg.budget)?;
    let f: &Functional<'_> = &|b: &Configuration| crate::dirichlet::energy(b, &unit(d, 0));
    let g: &Functional<'_> = &|b: &Configuration| crate::dirichlet::energy(b, &unit(d, 1));
    let size = rng.random_range(0..=3usize.min(cfg.budget.max_order));
    let set = draw_perturbation(a, size, false, rng);
    let rep = glauber::verify_glauber_identities(a, &set, f, g, &cfg.budget)?;
    let scale = env1
        .energy_at(&EdgeSet::empty())?
        .max(env2.energy_at(&EdgeSet::empty())?);
    let mut out: Measurements = vec![
        ("telescope", normalized(rep.telescope, scale)),
        ("leibniz1", normalized(rep.leibniz1, scale * scale)),
        ("leibniz2", normalized(rep.leibniz2, scale * scale)),
        ("a_local", rep.a_local),
        ("idempotent", normalized(rep.idempotent, scale)),
        ("commute", normalized(rep.commute, scale)),
    ];
    let e = rng.random_range(0..a.num_edges());
    for (k, name) in [(1, "vm_simple_k1"), (2, "vm_simple_k2")] {
        let lhs = glauber::vm_sum(&env1, e, k)?;
        let residual = glauber::verify_vm_simple(&env1, e, k)?;
        out.push((name, normalized(residual, lhs.max_abs())));
    }
    for (k, name) in [(1, "dfmu_k1"), (2, "dfmu_k2")] {
        let rep = glauber::verify_dfmu(&env1, k)?;
        out.push((
            name,
            normalized(rep.residual(), rep.lhs.abs().max(rep.rhs.abs())),
        ));
    }
    Ok(out)
}

fn corrector_instance(
    a: &Configuration,
    cfg: &SuiteConfig,
    trial: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Measurements> {
    let env = environment(a, &unit(cfg.d, 0), cfg.budget)?;
    let size = trial % (cfg.max_f + 1);
    let set = draw_perturbation(a, size, trial % 2 == 1, rng);
    let mut out = Measurements::new();
    for j in 0..=cfg.max_j {
        let rep = glauber::verify_corrector_equation(&env, &set, j)?;
        let name = match j {
            0 => "corrector_j0",
            1 => "corrector_j1",
            _ => "corrector_j2",
        };
        out.push((name, rep.relative()));
    }
    Ok(out)
}

fn growth_instance(
    a: &Configuration,
    cfg: &SuiteConfig,
    trial: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Measurements> {
    let env = environment(a, &unit(cfg.d, 0), cfg.budget)?;
    let size = 1 + trial % cfg.max_f.max(1);
    let set = draw_perturbation(a, size, trial % 2 == 0, rng);
    let rep = glauber::verify_growth_decomposition(&env, &set)?;
    let mut out = vec![("decomposition", normalized(rep.decomposition, rep.scale))];
    if rep.null_cluster_points > 0 {
        out.push(("null_cluster", normalized(rep.null_cluster, rep.scale)));
    }
    if rep.null_hole_points > 0 {
        out.push(("null_hole", normalized(rep.null_hole, rep.scale)));
    }
    Ok(out)
}

/// A level-1 cube inside the box, chosen uniformly among those whose center
/// is a multiple of 3 and whose enlargement stays inside.
fn inner_cube(lat: &Lattice, rng: &mut ChaCha8Rng) -> Result<CubeSpec> {
    let region = lat.region();
    let centers: Vec<Vec<i64>> = region
        .points()
        .filter(|x| x.iter().all(|c| c % 3 == 0))
        .filter(|x| (0..x.len()).all(|i| x[i] > region.lo()[i] && x[i] < region.hi()[i]))
        .collect();
    let center = centers
        .choose(rng)
        .ok_or_else(|| Error::InvalidRegion("box too small for a side-3 cube".into()))?;
    CubeSpec::with_center(1, center.clone())
}

fn hole_instance(
    a: &Configuration,
    cfg: &SuiteConfig,
    trial: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Measurements> {
    let env = environment(a, &unit(cfg.d, 0), cfg.budget)?;
    let lat = a.lattice();
    let cube = inner_cube(lat, rng)?;
    let size = trial % (cfg.max_f + 1);
    // Draw F among closed edges of rr * cube, where the local decomposition applies.
    let inner = cube
        .scaled(cfg.geometry.rr)
        .clamped(lat.region())
        .expect("cube lies in the box");
    let pool: Vec<usize> = lat
        .edges_in(&inner)
        .into_iter()
        .filter(|&e| !a.is_open(e))
        .collect();
    let set: EdgeSet = pool
        .choose_multiple(rng, size.min(pool.len()))
        .copied()
        .collect();
    let mut out = Measurements::new();
    for j in 0..=cfg.max_j {
        let rep = glauber::verify_hole_separation(&env, &set, j, &cube, &cfg.geometry)?;
        out.push((
            ["separation_j0", "separation_j1", "separation_j2"][j.min(2) as usize],
            normalized(rep.separation, rep.scale),
        ));
        if let (Some(local), Some(null)) = (rep.local, rep.local_null) {
            out.push((
                ["local_j0", "local_j1", "local_j2"][j.min(2) as usize],
                normalized(local, rep.scale),
            ));
            out.push((
                ["local_null_j0", "local_null_j1", "local_null_j2"][j.min(2) as usize],
                normalized(null, rep.scale),
            ));
        }
    }
    Ok(out)
}

fn energies_instance(a: &Configuration, cfg: &SuiteConfig) -> Result<Measurements> {
    let env = environment(a, &unit(cfg.d, 0), cfg.budget)?;
    let lat = a.lattice();
    let root = lat
        .cube()
        .ok_or_else(|| Error::InvalidRegion("the energies suite needs a triadic box".into()))?
        .clone();
    let mut out = Measurements::new();

    let v = env.solution(&EdgeSet::empty())?;
    let direct: f64 = EdgeField::gradient(lat, &v)
        .0
        .iter()
        .map(|g| g * g)
        .sum::<f64>()
        / lat.num_vertices() as f64;
    let plain = glauber::improved_energy(&env, &ImprovedEnergyRequest::plain(0, 0), None)?;
    out.push(("plain_00", normalized((plain - direct).abs(), direct)));

    // The weighted energies need the maximal cluster of every cell; when a
    // cell is not well-connected only the unweighted check applies.
    match weighted_energies(&env, a, &root, cfg) {
        Ok(rows) => out.extend(rows),
        Err(Error::MaximalClusterUndefined) => {}
        Err(e) => return Err(e),
    }
    Ok(out)
}

fn weighted_energies(
    env: &GlauberEnv,
    a: &Configuration,
    root: &CubeSpec,
    cfg: &SuiteConfig,
) -> Result<Measurements> {
    let pp = build_pyramid(a, root, &[GoodCubePredicate::always_true()])?;
    let mut out = Measurements::new();
    for (i, j) in [(0usize, 0usize), (0, 1), (1, 0)] {
        let weighted = |variant| ImprovedEnergyRequest {
            i,
            j,
            alpha: 0.0,
            h: 0,
            variant,
            geometry: cfg.geometry,
        };
        let plain = glauber::improved_energy(env, &weighted(EnergyVariant::Plain), Some(&pp))?;
        let cluster = glauber::improved_energy(env, &weighted(EnergyVariant::Cluster), Some(&pp))?;
        out.push((
            "cluster_le_plain",
            normalized((cluster - plain).max(0.0), plain),
        ));
        let dom = glauber::hole_domination(env, i, j, 0.0, 0, &pp, &cfg.geometry)?;
        out.push((
            "domination",
            normalized((dom.lhs - dom.rhs).max(0.0), dom.rhs),
        ));
    }
    Ok(out)
}

/// Runs `suite` and returns one row per `(identity, side, p)`, identities
/// in order of first appearance.
pub fn run_suite(suite: Suite, cfg: &SuiteConfig, exec: Exec) -> Result<Vec<ResidualRow>> {
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &side in &cfg.sides {
        let lat = Arc::new(Lattice::centered_box(cfg.d, side)?);
        for &p in &cfg.ps {
            let per_trial = exec.try_map(cfg.trials, |t| {
                let a = sample(lat.clone(), p, cfg.seed, t as u64)?;
                let mut rng = instance_rng(cfg.seed, side, p, t);
                match suite {
                    Suite::Identities => identities_instance(&a, cfg, &mut rng),
                    Suite::Corrector => corrector_instance(&a, cfg, t, &mut rng),
                    Suite::Growth => growth_instance(&a, cfg, t, &mut rng),
                    Suite::Hole => hole_instance(&a, cfg, t, &mut rng),
                    Suite::Energies => energies_instance(&a, cfg),
                }
            })?;
            let mut names: Vec<&'static str> = Vec::new();
            for m in &per_trial {
                for (name, _) in m {
                    if !names.contains(name) {
                        names.push(name);
                    }
                }
            }
            for name in names {
                let values: Vec<f64> = per_trial
                    .iter()
                    .flat_map(|m| m.iter().filter(|(n, _)| *n == name).map(|(_, r)| *r))
                    .collect();
                let max_residual = values.iter().copied().fold(0.0, f64::max);
                rows.push(ResidualRow {
                    suite: suite.name(),
                    identity: name,
                    side,
                    p,
                    instances: values.len(),
                    max_residual,
                    tolerance: cfg.tolerance,
                    pass: max_residual <= cfg.tolerance,
                });
            }
        }
    }
    Ok(rows)
}
