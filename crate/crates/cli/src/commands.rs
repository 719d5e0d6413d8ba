//! Subcommand arguments, their defaults and their pipelines.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use perchom::derivatives::{
    chaos_derivative, exact_polynomial, finite_difference, DerivativeEstimate, Method,
};
use perchom::dirichlet::conductivity as conductivity_estimate;
use perchom::exec::Exec;
use perchom::glauber::{Budget, HoleGeometry};
use perchom::lattice::{CubeSpec, Lattice};
use perchom::partition::{build_pyramid, counting_diagnostic, GoodCubePredicate};
use perchom::percolation::{sample as sample_configuration, Configuration};
use perchom::verify::{run_suite, Suite, SuiteConfig};
use perchom::walk::{einstein_check, estimate_sigma2, estimate_theta, ThetaProxy};
use perchom::Error;

use crate::config::{direction_label, parse_direction, parse_ratio};
use crate::missing;
use crate::output::{emit, write_sidecar, Cell, Sidecar, Table};

/// Result of a subcommand that ran to completion.
#[derive(Debug)]
pub enum Outcome {
    /// Every check passed (or the command has none).
    Passed,
    /// A check failed; the output was still written.
    Failed(String),
}

/// Settings shared by every subcommand.
#[derive(Debug)]
pub struct Context {
    /// Subcommand name.
    pub name: &'static str,
    /// Output path.
    pub out: Option<PathBuf>,
    /// Requested worker count.
    pub threads: Option<usize>,
    /// Execution policy.
    pub exec: Exec,
}

impl Context {
    /// Writes the table and, with `--out`, the sidecar.
    fn finish<C: Serialize>(&self, table: &Table, config: &C, started: Instant) -> Result<()> {
        let csv = table.to_csv()?;
        emit(self.out.as_deref(), &csv)?;
        self.sidecar(config, started)
    }

    fn sidecar<C: Serialize>(&self, config: &C, started: Instant) -> Result<()> {
        if let Some(out) = &self.out {
            write_sidecar(
                out,
                &Sidecar {
                    command: self.name,
                    config,
                    version: env!("CARGO_PKG_VERSION"),
                    parallel: self.exec.is_parallel(),
                    threads: self.threads,
                    elapsed_seconds: started.elapsed().as_secs_f64(),
                },
            )?;
        }
        Ok(())
    }
}

fn check_dim(d: usize) -> Result<usize> {
    if !(2..=perchom::lattice::MAX_DIM).contains(&d) {
        bail!(
            "invalid --d {d}: expected 2 <= d <= {}",
            perchom::lattice::MAX_DIM
        );
    }
    Ok(d)
}

fn check_unit_interval(ps: &[f64]) -> Result<()> {
    if ps.is_empty() {
        bail!("--p needs at least one value");
    }
    if let Some(p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        bail!("invalid --p {p}: expected a value in [0, 1]");
    }
    Ok(())
}

fn resolve_direction(xi: &Option<String>, d: usize) -> Result<Vec<f64>> {
    let xi = parse_direction(xi.as_deref().unwrap_or("e1"), d)?;
    perchom::dirichlet::check_direction(&xi, d).context("invalid --xi")?;
    Ok(xi)
}

// ---------------------------------------------------------------- sample

/// Flags of `sample`.
#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleArgs {
    /// Dimension [default: 2].
    #[arg(long)]
    pub d: Option<usize>,
    /// Cube level; the side is `3^m` [default: 2].
    #[arg(long)]
    pub m: Option<u32>,
    /// Bond parameter (required unless --in is given).
    #[arg(long)]
    pub p: Option<f64>,
    /// Master seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sample index [default: 0].
    #[arg(long)]
    pub index: Option<u64>,
    /// Read a binary configuration instead of sampling one.
    #[arg(long = "in", value_name = "PATH")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct SampleConfig {
    d: usize,
    m: u32,
    p: Option<f64>,
    seed: u64,
    index: u64,
    input: Option<PathBuf>,
}

fn summary_row(a: &Configuration) -> Vec<Cell> {
    let cube = a.cube().expect("binary configurations live on cubes");
    vec![
        cube.dim().into(),
        cube.level().into(),
        a.num_edges().into(),
        a.num_open().into(),
        a.fingerprint().into(),
    ]
}

/// Samples a configuration (written to `--out` in binary form), or reads
/// one with `--in`, and prints a one-row summary.
pub fn sample(ctx: &Context, args: SampleArgs) -> Result<Outcome> {
    let started = Instant::now();
    let mut table = Table::new(&["d", "m", "edges", "open", "fingerprint"]);
    let config = SampleConfig {
        d: args.d.unwrap_or(2),
        m: args.m.unwrap_or(2),
        p: args.p,
        seed: args.seed.unwrap_or(0),
        index: args.index.unwrap_or(0),
        input: args.input.clone(),
    };
    if let Some(path) = &args.input {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let a = Configuration::from_bytes(&bytes)?;
        table.push(summary_row(&a));
        emit(None, &table.to_csv()?)?;
        return Ok(Outcome::Passed);
    }
    let Some(p) = config.p else {
        missing("sample", "p")
    };
    check_unit_interval(&[p])?;
    let cube = CubeSpec::new(check_dim(config.d)?, config.m)?;
    let a = sample_configuration(Arc::new(Lattice::new(cube)), p, config.seed, config.index)?;
    table.push(summary_row(&a));
    emit(None, &table.to_csv()?)?;
    if let Some(out) = &ctx.out {
        std::fs::write(out, a.to_bytes()?).with_context(|| format!("writing {}", out.display()))?;
    }
    ctx.sidecar(&config, started)?;
    Ok(Outcome::Passed)
}

// ---------------------------------------------------------- conductivity

/// Flags of `conductivity`.
#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConductivityArgs {
    /// Dimension [default: 2].
    #[arg(long)]
    pub d: Option<usize>,
    /// Cube level [default: 2].
    #[arg(long)]
    pub m: Option<u32>,
    /// Bond parameters, comma separated (required).
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<f64>>,
    /// Direction: `e1`, `e2`, ... or unit-vector components [default: e1].
    #[arg(long)]
    pub xi: Option<String>,
    /// Configuration samples per `p` [default: 100].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Master seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct ConductivityConfig {
    d: usize,
    m: u32,
    p: Vec<f64>,
    xi: Vec<f64>,
    samples: usize,
    seed: u64,
}

/// Estimates `xi . abar_m(p) xi` for each `p`.
pub fn conductivity(ctx: &Context, args: ConductivityArgs) -> Result<Outcome> {
    let started = Instant::now();
    let Some(p) = args.p else {
        missing("conductivity", "p")
    };
    let d = check_dim(args.d.unwrap_or(2))?;
    let cfg = ConductivityConfig {
        d,
        m: args.m.unwrap_or(2),
        xi: resolve_direction(&args.xi, d)?,
        p,
        samples: args.samples.unwrap_or(100),
        seed: args.seed.unwrap_or(0),
    };
    check_unit_interval(&cfg.p)?;
    let cube = CubeSpec::new(d, cfg.m)?;
    let mut table = Table::new(&["p", "m", "d", "xi", "samples", "mean", "stderr", "seed"]);
    for &p in &cfg.p {
        let est = conductivity_estimate(&cube, p, &cfg.xi, cfg.samples, cfg.seed, ctx.exec)?;
        table.push(vec![
            p.into(),
            cfg.m.into(),
            d.into(),
            direction_label(&cfg.xi).into(),
            cfg.samples.into(),
            est.mean.into(),
            est.std_error.into(),
            cfg.seed.into(),
        ]);
    }
    ctx.finish(&table, &cfg, started)?;
    Ok(Outcome::Passed)
}

// ------------------------------------------------------------ derivative

/// Flags of `derivative`.
#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivativeArgs {
    /// `exact-poly`, `chaos-mc` or `finite-diff` [default: chaos-mc].
    #[arg(long)]
    pub method: Option<String>,
    /// Dimension [default: 2].
    #[arg(long)]
    pub d: Option<usize>,
    /// Cube level [default: 1].
    #[arg(long)]
    pub m: Option<u32>,
    /// Bond parameters, comma separated (required).
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<f64>>,
    /// Derivative orders, comma separated [default: 1].
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Direction [default: e1].
    #[arg(long)]
    pub xi: Option<String>,
    /// Configuration samples for `chaos-mc` [default: 1000].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Master seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Step of the central differences for `finite-diff` [default: 0.001].
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, Serialize)]
struct DerivativeConfig {
    method: &'static str,
    d: usize,
    m: u32,
    p: Vec<f64>,
    k: Vec<usize>,
    xi: Vec<f64>,
    samples: usize,
    seed: u64,
    step: f64,
}

fn parse_method(s: &str) -> Result<Method> {
    [Method::ExactPoly, Method::ChaosMc, Method::FiniteDiff]
        .into_iter()
        .find(|m| m.name() == s)
        .with_context(|| {
            format!("invalid --method `{s}`: expected exact-poly, chaos-mc or finite-diff")
        })
}

/// Evaluates `xi . abar_m^{(k)}(p) xi` for every `(p, k)`.
pub fn derivative(ctx: &Context, args: DerivativeArgs) -> Result<Outcome> {
    let started = Instant::now();
    let Some(p) = args.p else {
        missing("derivative", "p")
    };
    let method = parse_method(args.method.as_deref().unwrap_or("chaos-mc"))?;
    let d = check_dim(args.d.unwrap_or(2))?;
    let cfg = DerivativeConfig {
        method: method.name(),
        d,
        m: args.m.unwrap_or(1),
        p,
        k: args.k.unwrap_or_else(|| vec![1]),
        xi: resolve_direction(&args.xi, d)?,
        samples: args.samples.unwrap_or(1000),
        seed: args.seed.unwrap_or(0),
        step: args.step.unwrap_or(1e-3),
    };
    check_unit_interval(&cfg.p)?;
    let cube = CubeSpec::new(d, cfg.m)?;
    let poly = match method {
        Method::ChaosMc => None,
        _ => Some(exact_polynomial(&cube, &cfg.xi, ctx.exec)?),
    };
    let mut table = Table::new(&[
        "method", "d", "m", "p", "k", "xi", "value", "stderr", "samples", "seed",
    ]);
    for &p in &cfg.p {
        for &k in &cfg.k {
            let (est, samples): (DerivativeEstimate, usize) = match (&poly, method) {
                (Some(poly), Method::ExactPoly) => (poly.derivative_estimate(k, p), 0),
                (Some(poly), _) => (finite_difference(poly, p, k, cfg.step), 0),
                (None, _) => (
                    chaos_derivative(&cube, p, &cfg.xi, k, cfg.samples, cfg.seed, ctx.exec)?,
                    cfg.samples,
                ),
            };
            table.push(vec![
                est.method.name().into(),
                d.into(),
                cfg.m.into(),
                p.into(),
                k.into(),
                direction_label(&cfg.xi).into(),
                est.value.into(),
                est.std_error.into(),
                samples.into(),
                cfg.seed.into(),
            ]);
        }
    }
    ctx.finish(&table, &cfg, started)?;
    Ok(Outcome::Passed)
}

// ---------------------------------------------------------------- verify

/// Flags of `verify`.
#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyArgs {
    /// `identities`, `corrector`, `growth`, `hole` or `energies` (required).
    #[arg(long)]
    pub suite: Option<String>,
    /// Dimension [default: 2].
    #[arg(long)]
    pub d: Option<usize>,
    /// Cube levels; the boxes have sides `3^m` [default: per suite].
    #[arg(long, value_delimiter = ',', conflicts_with = "sides")]
    pub m: Option<Vec<u32>>,
    /// Odd box sides [default: per suite].
    #[arg(long, value_delimiter = ',')]
    pub sides: Option<Vec<i64>>,
    /// Bond parameters [default: 0.3,0.6,0.9].
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<f64>>,
    /// Instances per (side, p) [default: 50].
    #[arg(long)]
    pub trials: Option<usize>,
    /// Master seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pass threshold on normalized residuals [default: 1e-8].
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Largest perturbation size [default: per suite].
    #[arg(long)]
    pub max_f: Option<usize>,
    /// Largest `j` [default: per suite].
    #[arg(long)]
    pub max_j: Option<i64>,
    /// Largest enumeration order [default: 4].
    #[arg(long)]
    pub max_order: Option<usize>,
    /// Enlargement factor `rr`, as `a/b` or a decimal [default: 19/10].
    #[arg(long)]
    pub rr: Option<String>,
}

/// Runs a verification suite; fails when any identity exceeds the tolerance.
pub fn verify(ctx: &Context, args: VerifyArgs) -> Result<Outcome> {
    let started = Instant::now();
    let Some(name) = args.suite else {
        missing("verify", "suite")
    };
    let suite = Suite::parse(&name).with_context(|| {
        format!(
            "invalid --suite `{name}`: expected identities, corrector, growth, hole or energies"
        )
    })?;
    let mut cfg = SuiteConfig::defaults(suite);
    cfg.d = check_dim(args.d.unwrap_or(cfg.d))?;
    if let Some(m) = args.m {
        cfg.sides = m.iter().map(|&m| perchom::lattice::pow3(m)).collect();
    }
    if let Some(sides) = args.sides {
        cfg.sides = sides;
    }
    if let Some(p) = args.p {
        cfg.ps = p;
    }
    check_unit_interval(&cfg.ps)?;
    cfg.trials = args.trials.unwrap_or(cfg.trials);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.tolerance = args.tolerance.unwrap_or(cfg.tolerance);
    cfg.max_f = args.max_f.unwrap_or(cfg.max_f);
    cfg.max_j = args.max_j.unwrap_or(cfg.max_j);
    if let Some(order) = args.max_order {
        cfg.budget = Budget {
            max_order: order,
            ..cfg.budget
        };
    }
    if let Some(rr) = &args.rr {
        cfg.geometry = HoleGeometry {
            rr: parse_ratio(rr)?,
            ..cfg.geometry
        };
    }
    let rows = run_suite(suite, &cfg, ctx.exec)?;
    let mut table = Table::new(&[
        "suite",
        "identity",
        "side",
        "p",
        "instances",
        "max_residual",
        "tolerance",
        "pass",
    ]);
    for r in &rows {
        table.push(vec![
            r.suite.into(),
            r.identity.into(),
            r.side.into(),
            r.p.into(),
            r.instances.into(),
            r.max_residual.into(),
            r.tolerance.into(),
            r.pass.into(),
        ]);
    }
    #[derive(Serialize)]
    struct Resolved<'a> {
        #[serde(flatten)]
        suite: &'a SuiteConfig,
        rr: String,
    }
    let resolved = Resolved {
        suite: &cfg,
        rr: cfg.geometry.rr.to_string(),
    };
    ctx.finish(&table, &resolved, started)?;
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} (side {}, p {})", r.identity, r.side, r.p))
        .collect();
    Ok(if failed.is_empty() {
        Outcome::Passed
    } else {
        Outcome::Failed(failed.join(", "))
    })
}

// ------------------------------------------------------------------ walk

/// Flags shared by `walk` and `einstein`.
#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkArgs {
    /// Dimension [default: 2].
    #[arg(long)]
    pub d: Option<usize>,
    /// Cube level [default: 5].
    #[arg(long)]
    pub m: Option<u32>,
    /// Bond parameters, comma separated (required).
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<f64>>,
    /// Time horizon [default: 500].
    #[arg(long)]
    pub t: Option<f64>,
    /// Walks in total [default: 2000].
    #[arg(long)]
    pub walkers: Option<usize>,
    /// Configuration samples [default: 20].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Master seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Direction for the conductivity [default: e1].
    #[arg(long)]
    pub xi: Option<String>,
    /// Density proxy: `largest-cluster` or `center-to-boundary` [default: largest-cluster].
    #[arg(long)]
    pub theta_proxy: Option<String>,
}

#[derive(Debug, Serialize)]
struct WalkConfig {
    d: usize,
    m: u32,
    p: Vec<f64>,
    t: f64,
    walkers: usize,
    samples: usize,
    seed: u64,
    xi: Vec<f64>,
    theta_proxy: &'static str,
}

fn resolve_walk(args: WalkArgs, subcommand: &str) -> Result<(WalkConfig, ThetaProxy)> {
    let Some(p) = args.p else {
        missing(subcommand, "p")
    };
    check_unit_interval(&p)?;
    let d = check_dim(args.d.unwrap_or(2))?;
    let proxy = match args.theta_proxy.as_deref().unwrap_or("largest-cluster") {
        "largest-cluster" => ThetaProxy::LargestCluster,
        "center-to-boundary" => ThetaProxy::CenterToBoundary,
        other => {
            bail!("invalid --theta-proxy `{other}`: expected largest-cluster or center-to-boundary")
        }
    };
    let cfg = WalkConfig {
        d,
        m: args.m.unwrap_or(5),
        p,
        t: args.t.unwrap_or(500.0),
        walkers: args.walkers.unwrap_or(2000),
        samples: args.samples.unwrap_or(20),
        seed: args.seed.unwrap_or(0),
        xi: resolve_direction(&args.xi, d)?,
        theta_proxy: proxy.name(),
    };
    Ok((cfg, proxy))
}

/// Estimates `sigma^2`, the density proxy and `abar / theta` for each `p`.
pub fn walk(ctx: &Context, args: WalkArgs) -> Result<Outcome> {
    let started = Instant::now();
    let (cfg, proxy) = resolve_walk(args, "walk")?;
    let cube = CubeSpec::new(cfg.d, cfg.m)?;
    let mut table = Table::new(&[
        "p",
        "m",
        "d",
        "t",
        "walkers",
        "sigma2",
        "stderr",
        "theta_proxy",
        "theta",
        "ab_over_theta",
        "ratio",
        "stopped_fraction",
        "seed",
    ]);
    for &p in &cfg.p {
        let s = estimate_sigma2(
            cfg.d,
            p,
            cfg.m,
            cfg.t,
            cfg.walkers,
            cfg.samples,
            cfg.seed,
            ctx.exec,
        )?;
        let theta = estimate_theta(cfg.d, p, cfg.m, cfg.samples, cfg.seed, proxy, ctx.exec)?;
        let ab = conductivity_estimate(&cube, p, &cfg.xi, cfg.samples, cfg.seed, ctx.exec)?;
        let ab_over_theta = ab.mean / theta.value;
        table.push(vec![
            p.into(),
            cfg.m.into(),
            cfg.d.into(),
            cfg.t.into(),
            s.walkers.into(),
            s.sigma2.into(),
            s.std_error.into(),
            proxy.name().into(),
            theta.value.into(),
            ab_over_theta.into(),
            (s.sigma2 / 2.0 / ab_over_theta).into(),
            s.stopped_fraction.into(),
            cfg.seed.into(),
        ]);
    }
    ctx.finish(&table, &cfg, started)?;
    Ok(Outcome::Passed)
}

// -------------------------------------------------------------- einstein

/// Flags of `einstein`.
#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EinsteinArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub walk: WalkArgs,
    /// Largest accepted `|ratio - 1|` [default: 0.15].
    #[arg(long)]
    pub tolerance: Option<f64>,
}

/// Compares `sigma^2 / 2` with `abar / theta`; fails when the ratio leaves
/// `1 +- tolerance` or too many walks were stopped.
pub fn einstein(ctx: &Context, args: EinsteinArgs) -> Result<Outcome> {
    let started = Instant::now();
    let tolerance = args.tolerance.unwrap_or(0.15);
    let (cfg, _) = resolve_walk(args.walk, "einstein")?;
    let mut table = Table::new(&[
        "p",
        "m",
        "d",
        "t",
        "walkers",
        "samples",
        "half_sigma2",
        "half_sigma2_stderr",
        "conductivity",
        "conductivity_stderr",
        "theta",
        "theta_stderr",
        "ab_over_theta",
        "ab_over_theta_stderr",
        "ratio",
        "ratio_stderr",
        "stopped_fraction",
        "pass",
        "seed",
    ]);
    let mut failed = Vec::new();
    for &p in &cfg.p {
        let r = einstein_check(
            cfg.d,
            p,
            cfg.m,
            &cfg.xi,
            cfg.t,
            cfg.walkers,
            cfg.samples,
            cfg.seed,
            ctx.exec,
        )?;
        let pass = (r.ratio - 1.0).abs() <= tolerance && r.sigma2.valid;
        if !pass {
            failed.push(format!(
                "p {p}: ratio {} (stopped fraction {})",
                r.ratio, r.sigma2.stopped_fraction
            ));
        }
        table.push(vec![
            p.into(),
            cfg.m.into(),
            cfg.d.into(),
            cfg.t.into(),
            r.sigma2.walkers.into(),
            cfg.samples.into(),
            r.half_sigma2.into(),
            r.half_sigma2_error.into(),
            r.conductivity.mean.into(),
            r.conductivity.std_error.into(),
            r.theta.value.into(),
            r.theta.std_error.into(),
            r.ab_over_theta.into(),
            r.ab_over_theta_error.into(),
            r.ratio.into(),
            r.ratio_error.into(),
            r.sigma2.stopped_fraction.into(),
            pass.into(),
            cfg.seed.into(),
        ]);
    }
    #[derive(Serialize)]
    struct Resolved<'a> {
        #[serde(flatten)]
        walk: &'a WalkConfig,
        tolerance: f64,
    }
    ctx.finish(
        &table,
        &Resolved {
            walk: &cfg,
            tolerance,
        },
        started,
    )?;
    Ok(if failed.is_empty() {
        Outcome::Passed
    } else {
        Outcome::Failed(failed.join("; "))
    })
}

// ------------------------------------------------------------- partition

/// Flags of `partition`.
#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionArgs {
    /// Dimension [default: 2].
    #[arg(long)]
    pub d: Option<usize>,
    /// Level of the partitioned cube [default: 4].
    #[arg(long)]
    pub m: Option<u32>,
    /// Bond parameter (required).
    #[arg(long)]
    pub p: Option<f64>,
    /// Configuration samples [default: 10].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Master seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Very-well-connectedness size floors, one per pyramid level from the
    /// bottom [default: 9,27].
    #[arg(long, value_delimiter = ',')]
    pub vwc_floor: Option<Vec<i64>>,
    /// Enlargement of the cells in the overlap count, as `a/b` or a decimal [default: 3/2].
    #[arg(long)]
    pub aa: Option<String>,
}

#[derive(Debug, Serialize)]
struct PartitionConfig {
    d: usize,
    m: u32,
    p: f64,
    samples: usize,
    seed: u64,
    vwc_floor: Vec<i64>,
    aa: String,
}

/// Builds a pyramid of very-well-connected partitions per sample and
/// reports, for each level, the number of cells of each side and the
/// largest overlap of the enlarged cells. An obstructed sample yields one
/// row at the obstructed level with `obstructed = 1`.
pub fn partition(ctx: &Context, args: PartitionArgs) -> Result<Outcome> {
    let started = Instant::now();
    let Some(p) = args.p else {
        missing("partition", "p")
    };
    check_unit_interval(&[p])?;
    let aa = parse_ratio(args.aa.as_deref().unwrap_or("3/2"))?;
    let cfg = PartitionConfig {
        d: check_dim(args.d.unwrap_or(2))?,
        m: args.m.unwrap_or(4),
        p,
        samples: args.samples.unwrap_or(10),
        seed: args.seed.unwrap_or(0),
        vwc_floor: args.vwc_floor.unwrap_or_else(|| vec![9, 27]),
        aa: aa.to_string(),
    };
    if cfg.vwc_floor.is_empty() {
        bail!("--vwc-floor needs at least one value");
    }
    let root = CubeSpec::new(cfg.d, cfg.m)?;
    let lat = Arc::new(Lattice::new(root.clone()));
    let preds: Vec<GoodCubePredicate> = cfg
        .vwc_floor
        .iter()
        .map(|&f| GoodCubePredicate::very_well_connected(f))
        .collect();
    let per_sample = ctx.exec.try_map(cfg.samples, |i| {
        let a = sample_configuration(lat.clone(), p, cfg.seed, i as u64)?;
        let mut rows: Vec<Vec<Cell>> = Vec::new();
        match build_pyramid(&a, &root, &preds) {
            Ok(pp) => {
                for h in 0..pp.depth() {
                    let cells = pp.level(h).expect("level exists");
                    let overlap = counting_diagnostic(&pp, aa, h)?;
                    let mut sides: Vec<i64> = cells.iter().map(|c| c.side()).collect();
                    sides.sort_unstable();
                    sides.dedup();
                    for side in sides {
                        let count = cells.iter().filter(|c| c.side() == side).count();
                        rows.push(vec![
                            i.into(),
                            h.into(),
                            cells.len().into(),
                            side.into(),
                            count.into(),
                            overlap.into(),
                            false.into(),
                        ]);
                    }
                }
            }
            Err(Error::PyramidObstructed { level, .. }) => {
                rows.push(vec![
                    i.into(),
                    level.into(),
                    0usize.into(),
                    0i64.into(),
                    0usize.into(),
                    0usize.into(),
                    true.into(),
                ]);
            }
            Err(e) => return Err(e),
        }
        Ok(rows)
    })?;
    let mut table = Table::new(&[
        "sample",
        "level",
        "cells",
        "side",
        "count",
        "max_overlap",
        "obstructed",
    ]);
    for row in per_sample.into_iter().flatten() {
        table.push(row);
    }
    ctx.finish(&table, &cfg, started)?;
    Ok(Outcome::Passed)
}
