//! Variable-speed random walks on percolation clusters.
//!
//! Every open edge carries an independent rate-1 exponential clock. The walk
//! at `x` waits an exponential time of rate `deg_a(x)` (the number of open
//! edges at `x`) and then crosses the edge whose clock rang. Each step draws
//! one `Exp(1)` clock per direction `(axis, side)`, in the order
//! `(0, -), (0, +), (1, -), (1, +), ...`, and moves along the open direction
//! with the smallest clock; by memorylessness this is the same law.
//!
//! The module also estimates the diffusivity from mean squared
//! displacements, the density of the largest cluster, and compares
//! `sigma^2 / 2` with `abar / theta`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::clusters::ClusterLabeling;
use crate::dirichlet::{check_direction, energy};
use crate::exec::Exec;
use crate::lattice::{ratio, CubeSpec, Lattice, MAX_DIM};
use crate::percolation::{sample, Configuration};
use crate::stats::Estimate;
use crate::{Error, Result};

/// Largest-cluster share of the volume below which a sample is rejected
/// as subcritical by [`estimate_sigma2`].
pub const MIN_CLUSTER_FRACTION: f64 = 0.1;

/// Largest stopped fraction for which a diffusivity estimate is valid.
pub const MAX_STOPPED_FRACTION: f64 = 0.1;

/// Stream tag separating walker randomness from configuration randomness.
const WALK_TAG: u64 = 0x5653_5257;

/// A recorded walk: the start and the jump events in time order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WalkPath {
    /// Start vertex.
    pub start: usize,
    /// `(time, vertex entered)` for every jump.
    pub events: Vec<(f64, usize)>,
}

impl WalkPath {
    /// Vertex occupied at the end of the horizon.
    pub fn end(&self) -> usize {
        self.events.last().map_or(self.start, |&(_, v)| v)
    }

    /// Checks that times increase strictly and every jump crosses an open edge.
    pub fn is_valid(&self, a: &Configuration) -> bool {
        let lat = a.lattice();
        let mut prev = self.start;
        let mut t = 0.0;
        for &(s, v) in &self.events {
            if s <= t {
                return false;
            }
            match lat.edge_between(prev, v) {
                Some(e) if a.is_open(e) => {}
                _ => return false,
            }
            prev = v;
            t = s;
        }
        true
    }
}

/// Summary of one walk without its event list.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkSummary {
    /// Vertex at time `horizon`, or at the exit time when stopped.
    pub end: usize,
    /// Number of jumps performed.
    pub jumps: usize,
    /// Whether the walk left the observation region before the horizon.
    pub stopped: bool,
}

/// The walk engine. `clocks` fills one `Exp(1)` value per direction;
/// `inside` (when given) stops the walk at the first vertex outside it;
/// `on_jump` sees every jump.
fn run(
    a: &Configuration,
    start: usize,
    horizon: f64,
    inside: Option<&[bool]>,
    clocks: &mut dyn FnMut(&mut [f64]),
    mut on_jump: impl FnMut(f64, usize),
) -> WalkSummary {
    let lat = a.lattice();
    let dirs = 2 * lat.dim();
    let mut buf = [0.0; 2 * MAX_DIM];
    let mut x = start;
    let mut t = 0.0;
    let mut jumps = 0;
    loop {
        let mut best: Option<(f64, usize)> = None;
        let mut any_open = false;
        for axis in 0..lat.dim() {
            any_open |= lat.backward_edge(x, axis).is_some_and(|e| a.is_open(e))
                || lat.forward_edge(x, axis).is_some_and(|e| a.is_open(e));
        }
        if !any_open {
            return WalkSummary {
                end: x,
                jumps,
                stopped: false,
            };
        }
        clocks(&mut buf[..dirs]);
        for (dir, &c) in buf[..dirs].iter().enumerate() {
            let axis = dir / 2;
            let edge = if dir % 2 == 0 {
                lat.backward_edge(x, axis)
            } else {
                lat.forward_edge(x, axis)
            };
            if let Some(e) = edge {
                if a.is_open(e) && best.map_or(true, |(b, _)| c < b) {
                    let (tail, head) = lat.endpoints(e);
                    best = Some((c, if tail == x { head } else { tail }));
                }
            }
        }
        let (dt, y) = best.expect("an open direction exists");
        if t + dt > horizon {
            return WalkSummary {
                end: x,
                jumps,
                stopped: false,
            };
        }
        t += dt;
        x = y;
        jumps += 1;
        on_jump(t, x);
        if inside.is_some_and(|m| !m[x]) {
            return WalkSummary {
                end: x,
                jumps,
                stopped: true,
            };
        }
    }
}

fn rng_clocks(rng: &mut ChaCha8Rng) -> impl FnMut(&mut [f64]) + '_ {
    move |buf: &mut [f64]| {
        for c in buf.iter_mut() {
            *c = rng.sample::<f64, _>(Exp1);
        }
    }
}

fn check_walk(a: &Configuration, start: usize, horizon: f64) -> Result<()> {
    if start >= a.lattice().num_vertices() {
        return Err(Error::InvalidStart);
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must be positive"
        )));
    }
    Ok(())
}

/// Simulates the walk on `a` from `start` up to time `horizon`, recording
/// every jump. An isolated start gives an empty event list.
pub fn simulate_vsrw(a: &Configuration, start: usize, horizon: f64, seed: u64) -> Result<WalkPath> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clocks = rng_clocks(&mut rng);
    simulate_vsrw_with_clocks(a, start, horizon, &mut clocks)
}

/// As [`simulate_vsrw`] with an explicit clock source: each call fills one
/// `Exp(1)` value per direction in the order described in the module docs.
pub fn simulate_vsrw_with_clocks(
    a: &Configuration,
    start: usize,
    horizon: f64,
    clocks: &mut dyn FnMut(&mut [f64]),
) -> Result<WalkPath> {
    check_walk(a, start, horizon)?;
    let mut events = Vec::new();
    run(a, start, horizon, None, clocks, |t, v| events.push((t, v)));
    Ok(WalkPath { start, events })
}

/// Runs the walk without storing events, stopping at the first vertex
/// outside `inside` when a mask is given.
pub fn run_vsrw(
    a: &Configuration,
    start: usize,
    horizon: f64,
    inside: Option<&[bool]>,
    rng: &mut ChaCha8Rng,
) -> Result<WalkSummary> {
    check_walk(a, start, horizon)?;
    let mut clocks = rng_clocks(rng);
    Ok(run(a, start, horizon, inside, &mut clocks, |_, _| {}))
}

/// Random stream of walker `walker` on configuration sample `index`.
pub fn walker_rng(seed: u64, index: u64, walker: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    for (i, w) in [seed, index, walker, WALK_TAG].iter().enumerate() {
        bytes[8 * i..8 * i + 8].copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// Diffusivity estimate from mean squared displacements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sigma2Estimate {
    /// `E|X_{t ^ tau}|^2 / (d t)`.
    pub sigma2: f64,
    /// Standard error over configuration samples.
    pub std_error: f64,
    /// Fraction of walks stopped at the exit of the observation region.
    pub stopped_fraction: f64,
    /// Whether the stopped fraction is below [`MAX_STOPPED_FRACTION`].
    pub valid: bool,
    /// Total number of walks.
    pub walkers: usize,
    /// Number of configuration samples.
    pub samples: usize,
}

/// Start vertices for the walks on one sample: vertices of the largest
/// cluster inside the central third of the cube. Fails when the largest
/// cluster is too small.
fn start_vertices(a: &Configuration, cube: &CubeSpec) -> Result<Vec<usize>> {
    let lat = a.lattice();
    let lab = ClusterLabeling::new(a);
    let c = lab.maximal_id().expect("non-empty lattice");
    let share = lab.size(c) as f64 / lat.num_vertices() as f64;
    if share < MIN_CLUSTER_FRACTION {
        return Err(Error::Subcritical(format!(
            "largest cluster holds {share:.3} of the volume"
        )));
    }
    let central = cube.scaled(ratio(1, 3)).region();
    let starts: Vec<usize> = lat
        .vertices_in(&central)
        .into_iter()
        .filter(|&v| lab.label(v) == c)
        .collect();
    if starts.is_empty() {
        return Err(Error::Subcritical(
            "largest cluster misses the central cube".into(),
        ));
    }
    Ok(starts)
}

fn observation_mask(lat: &Lattice, cube: &CubeSpec) -> Vec<bool> {
    let region = cube.scaled(ratio(2, 3)).region();
    (0..lat.num_vertices())
        .map(|v| region.contains(&lat.coords(v)))
        .collect()
}

fn squared_displacement(lat: &Lattice, x: usize, y: usize) -> f64 {
    (0..lat.dim())
        .map(|i| {
            let d = (lat.coord(y, i) - lat.coord(x, i)) as f64;
            d * d
        })
        .sum()
}

/// Per-sample mean squared displacement divided by `d t`, and the stopped count.
#[allow(clippy::too_many_arguments)]
fn sigma2_sample(
    lat: &Arc<Lattice>,
    cube: &CubeSpec,
    inside: &[bool],
    p: f64,
    t: f64,
    walkers: usize,
    seed: u64,
    index: u64,
) -> Result<(f64, usize)> {
    let a = sample(lat.clone(), p, seed, index)?;
    let starts = start_vertices(&a, cube)?;
    let mut msd = 0.0;
    let mut stopped = 0;
    for w in 0..walkers {
        let mut rng = walker_rng(seed, index, w as u64);
        let start = starts[rng.random_range(0..starts.len())];
        let s = run_vsrw(&a, start, t, Some(inside), &mut rng)?;
        msd += squared_displacement(lat, start, s.end);
        stopped += s.stopped as usize;
    }
    Ok((msd / (walkers as f64 * lat.dim() as f64 * t), stopped))
}

/// Estimates `sigma^2` at time `t`: `walkers` walks are spread evenly over
/// `samples` configurations, started uniformly on the largest cluster in
/// the central third of the cube, and stopped on leaving `(2/3)` of the cube.
#[allow(clippy::too_many_arguments)]
pub fn estimate_sigma2(
    d: usize,
    p: f64,
    m: u32,
    t: f64,
    walkers: usize,
    samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<Sigma2Estimate> {
    if samples == 0 || walkers < samples {
        return Err(Error::InvalidArgument(
            "need at least one sample and one walker per sample".into(),
        ));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("time {t} must be positive")));
    }
    let cube = CubeSpec::new(d, m)?;
    let lat = Arc::new(Lattice::new(cube.clone()));
    let inside = observation_mask(&lat, &cube);
    let per = walkers / samples;
    let rows = exec.try_map(samples, |i| {
        sigma2_sample(&lat, &cube, &inside, p, t, per, seed, i as u64)
    })?;
    let values: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let stopped: usize = rows.iter().map(|r| r.1).sum();
    let est = Estimate::from_samples(&values);
    let stopped_fraction = stopped as f64 / (per * samples) as f64;
    Ok(Sigma2Estimate {
        sigma2: est.mean,
        std_error: est.std_error,
        stopped_fraction,
        valid: stopped_fraction < MAX_STOPPED_FRACTION,
        walkers: per * samples,
        samples,
    })
}

/// Finite-volume stand-in for the density of the infinite cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaProxy {
    /// Fraction of vertices in the largest open cluster.
    LargestCluster,
    /// Probability that the center is joined to the boundary.
    CenterToBoundary,
}

impl ThetaProxy {
    /// The identifier used in output files.
    pub fn name(self) -> &'static str {
        match self {
            ThetaProxy::LargestCluster => "largest-cluster",
            ThetaProxy::CenterToBoundary => "center-to-boundary",
        }
    }

    fn evaluate(self, a: &Configuration, cube: &CubeSpec) -> f64 {
        let lat = a.lattice();
        let lab = ClusterLabeling::new(a);
        match self {
            ThetaProxy::LargestCluster => {
                let c = lab.maximal_id().expect("non-empty lattice");
                lab.size(c) as f64 / lat.num_vertices() as f64
            }
            ThetaProxy::CenterToBoundary => {
                let center = lat.index(cube.center()).expect("center lies in the cube");
                // A side-1 cube is its own boundary; otherwise the center is interior.
                if lab.in_cbc(center) && (lat.side() == 1 || lab.size(lab.label(center)) > 1) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Density estimate with its proxy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThetaEstimate {
    /// `p`.
    pub p: f64,
    /// Cube level.
    pub m: u32,
    /// Estimate in `[0, 1]`.
    pub value: f64,
    /// Standard error.
    pub std_error: f64,
    /// Proxy used.
    pub proxy: ThetaProxy,
}

/// Estimates the density proxy over `samples` configurations.
pub fn estimate_theta(
    d: usize,
    p: f64,
    m: u32,
    samples: usize,
    seed: u64,
    proxy: ThetaProxy,
    exec: Exec,
) -> Result<ThetaEstimate> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let cube = CubeSpec::new(d, m)?;
    let lat = Arc::new(Lattice::new(cube.clone()));
    let values = exec.try_map(samples, |i| {
        let a = sample(lat.clone(), p, seed, i as u64)?;
        Ok(proxy.evaluate(&a, &cube))
    })?;
    let est = Estimate::from_samples(&values);
    Ok(ThetaEstimate {
        p,
        m,
        value: est.mean,
        std_error: est.std_error,
        proxy,
    })
}

/// Both sides of the conductivity-diffusivity relation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EinsteinReport {
    /// Diffusivity estimate.
    pub sigma2: Sigma2Estimate,
    /// `xi . abar_m xi`.
    pub conductivity: Estimate,
    /// Density estimate (largest-cluster proxy).
    pub theta: ThetaEstimate,
    /// `sigma^2 / 2`.
    pub half_sigma2: f64,
    /// Standard error of `sigma^2 / 2`.
    pub half_sigma2_error: f64,
    /// `abar / theta`.
    pub ab_over_theta: f64,
    /// Standard error of `abar / theta` by the delta method.
    pub ab_over_theta_error: f64,
    /// `(sigma^2 / 2) / (abar / theta)`.
    pub ratio: f64,
    /// Standard error of the ratio by the delta method.
    pub ratio_error: f64,
}

/// Estimates `sigma^2 / 2` and `xi . abar_m xi / theta_m` on the same
/// configuration samples and reports their ratio.
#[allow(clippy::too_many_arguments)]
pub fn einstein_check(
    d: usize,
    p: f64,
    m: u32,
    xi: &[f64],
    t: f64,
    walkers: usize,
    samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<EinsteinReport> {
    check_direction(xi, d)?;
    let sigma2 = estimate_sigma2(d, p, m, t, walkers, samples, seed, exec)?;
    let cube = CubeSpec::new(d, m)?;
    let lat = Arc::new(Lattice::new(cube));
    let energies = exec.try_map(samples, |i| {
        energy(&sample(lat.clone(), p, seed, i as u64)?, xi)
    })?;
    let conductivity = Estimate::from_samples(&energies);
    let theta = estimate_theta(d, p, m, samples, seed, ThetaProxy::LargestCluster, exec)?;

    let half_sigma2 = sigma2.sigma2 / 2.0;
    let half_sigma2_error = sigma2.std_error / 2.0;
    let ab_over_theta = conductivity.mean / theta.value;
    let ab_over_theta_error = ab_over_theta
        * (conductivity.std_error / conductivity.mean).hypot(theta.std_error / theta.value);
    let ratio = half_sigma2 / ab_over_theta;
    let ratio_error =
        ratio * (half_sigma2_error / half_sigma2).hypot(ab_over_theta_error / ab_over_theta);
    Ok(EinsteinReport {
        sigma2,
        conductivity,
        theta,
        half_sigma2,
        half_sigma2_error,
        ab_over_theta,
        ab_over_theta_error,
        ratio,
        ratio_error,
    })
}
