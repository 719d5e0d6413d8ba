//! Derivatives of the finite-volume conductivity in `p`.
//!
//! Three routes are provided:
//!
//! - [`exact_polynomial`] enumerates every configuration of a small cube and
//!   solves each one exactly in rational arithmetic, giving
//!   `xi . abar_m(p) xi` as a polynomial with rational coefficients.
//! - [`chaos_derivative`] estimates the `k`-th derivative by Monte Carlo
//!   over `a` of `k!/(1-p)^k sum_{|F| = k} D_F E(a)`, with each `D_F`
//!   evaluated exactly by inclusion-exclusion.
//! - [`finite_difference`] differentiates the polynomial numerically and
//!   serves as an internal consistency check of the polynomial path.
//!
//! [`verify_derivative_bound`] compares the chaos estimate with the bound in
//! terms of improved energies, and [`convergence_study`] tracks estimates
//! across cube levels.

use std::collections::VecDeque;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;

use crate::dirichlet::{
    check_direction, dirichlet_energy, energy, energy_samples, solve_harmonic_with, SolverOptions,
};
use crate::exec::Exec;
use crate::glauber::{self, Budget, DfmuReport, GlauberEnv, ImprovedEnergyRequest};
use crate::lattice::{CubeSpec, Lattice};
use crate::percolation::{k_subsets, sample, Configuration, EdgeSet};
use crate::stats::{ols_slope, Estimate};
use crate::{Error, Result};

/// Largest edge count accepted by [`exact_polynomial`].
pub const MAX_EXACT_EDGES: usize = 20;

/// Largest edge count for which [`chaos_derivative`] tabulates the energy
/// of every configuration up front.
pub const TABLE_EDGES: usize = 16;

/// Largest number of energy evaluations `C(n, k) 2^k` per sample accepted
/// by [`chaos_derivative`] when the table is not used.
pub const MAX_CHAOS_TERMS: usize = 1 << 20;

/// Configurations handled per parallel chunk when enumerating.
const ENUM_CHUNK: usize = 256;

/// A polynomial in `p` with exact rational coefficients in the monomial basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<BigRational>,
}

impl Polynomial {
    /// Builds a polynomial from coefficients of `1, p, p^2, ...`; trailing zeros are dropped.
    pub fn new(mut coeffs: Vec<BigRational>) -> Polynomial {
        while coeffs.last().is_some_and(|c| c.is_zero()) {
            coeffs.pop();
        }
        Polynomial { coeffs }
    }

    /// The expectation `sum_o h_o p^o (1-p)^{n-o}` in the monomial basis,
    /// where `h_o` is the sum of the values over configurations with `o` open edges.
    pub fn from_open_count_sums(h: &[BigRational]) -> Polynomial {
        let n = h.len().saturating_sub(1);
        let mut coeffs = vec![BigRational::zero(); n + 1];
        for (o, ho) in h.iter().enumerate() {
            if ho.is_zero() {
                continue;
            }
            // p^o (1-p)^{n-o} = sum_t C(n-o, t) (-1)^t p^{o+t}
            let mut binom = BigInt::one();
            for t in 0..=n - o {
                let term = ho * BigRational::from_integer(binom.clone());
                if t % 2 == 0 {
                    coeffs[o + t] += term;
                } else {
                    coeffs[o + t] -= term;
                }
                binom = binom * BigInt::from(n - o - t) / BigInt::from(t + 1);
            }
        }
        Polynomial::new(coeffs)
    }

    /// Coefficients of `1, p, p^2, ...`.
    pub fn coefficients(&self) -> &[BigRational] {
        &self.coeffs
    }

    /// Degree (`0` for the zero polynomial).
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    /// Exact value at a rational point.
    pub fn eval_exact(&self, p: &BigRational) -> BigRational {
        self.coeffs
            .iter()
            .rev()
            .fold(BigRational::zero(), |acc, c| acc * p + c)
    }

    /// Value at `p`, evaluated exactly at the binary value of `p` and then rounded.
    pub fn eval(&self, p: f64) -> f64 {
        let exact = BigRational::from_float(p).expect("finite p");
        to_f64(&self.eval_exact(&exact))
    }

    /// The formal derivative.
    pub fn derivative(&self) -> Polynomial {
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| c * BigRational::from_integer(BigInt::from(i)))
                .collect(),
        )
    }

    /// The `k`-th formal derivative.
    pub fn nth_derivative(&self, k: usize) -> Polynomial {
        (0..k).fold(self.clone(), |q, _| q.derivative())
    }

    /// The `k`-th derivative at `p` as an exact estimate.
    pub fn derivative_estimate(&self, k: usize, p: f64) -> DerivativeEstimate {
        DerivativeEstimate {
            k,
            value: self.nth_derivative(k).eval(p),
            std_error: 0.0,
            method: Method::ExactPoly,
        }
    }
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// How a derivative was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Analytic derivative of the exact polynomial.
    ExactPoly,
    /// Monte Carlo estimate of the chaos expansion.
    ChaosMc,
    /// Central finite difference of the exact polynomial.
    FiniteDiff,
}

impl Method {
    /// The identifier used in output files.
    pub fn name(self) -> &'static str {
        match self {
            Method::ExactPoly => "exact-poly",
            Method::ChaosMc => "chaos-mc",
            Method::FiniteDiff => "finite-diff",
        }
    }
}

/// A derivative value with its uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DerivativeEstimate {
    /// Order of the derivative.
    pub k: usize,
    /// Estimated value of `xi . abar_m^{(k)}(p) xi`.
    pub value: f64,
    /// Standard error; zero exactly for [`Method::ExactPoly`].
    pub std_error: f64,
    /// Method.
    pub method: Method,
}

/// Converts a direction with dyadic rational components to exact rationals.
fn rational_direction(xi: &[f64]) -> Vec<BigRational> {
    xi.iter()
        .map(|&x| BigRational::from_float(x).expect("finite direction"))
        .collect()
}

/// The exact energy of `a` in direction `xi`: the harmonic function on the
/// boundary-connecting set is found by Gaussian elimination over the
/// rationals and the normalized Dirichlet sum is returned.
pub fn exact_energy(a: &Configuration, xi: &[f64]) -> Result<BigRational> {
    let lat = a.lattice();
    check_direction(xi, lat.dim())?;
    let xi = rational_direction(xi);
    let n = lat.num_vertices();

    // Boundary-connecting set by breadth-first search from the boundary.
    let mut reached = vec![false; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| lat.is_boundary(v)).collect();
    for &v in &queue {
        reached[v] = true;
    }
    while let Some(x) = queue.pop_front() {
        lat.for_each_neighbor(x, |y, e| {
            if a.is_open(e) && !reached[y] {
                reached[y] = true;
                queue.push_back(y);
            }
        });
    }

    let linear = |v: usize| -> BigRational {
        lat.coords(v)
            .iter()
            .zip(&xi)
            .map(|(&c, x)| x * BigRational::from_integer(BigInt::from(c)))
            .fold(BigRational::zero(), |s, t| s + t)
    };
    let unknowns: Vec<usize> = (0..n)
        .filter(|&v| reached[v] && !lat.is_boundary(v))
        .collect();
    let mut slot = vec![usize::MAX; n];
    for (i, &v) in unknowns.iter().enumerate() {
        slot[v] = i;
    }
    let m = unknowns.len();
    let mut mat = vec![vec![BigRational::zero(); m + 1]; m];
    for (i, &x) in unknowns.iter().enumerate() {
        lat.for_each_neighbor(x, |y, e| {
            if a.is_open(e) {
                mat[i][i] += BigRational::one();
                if slot[y] == usize::MAX {
                    mat[i][m] += linear(y);
                } else {
                    mat[i][slot[y]] -= BigRational::one();
                }
            }
        });
    }
    let sol = gauss_solve(mat);

    let mut value: Vec<BigRational> = vec![BigRational::zero(); n];
    for v in 0..n {
        if reached[v] {
            value[v] = if slot[v] == usize::MAX {
                linear(v)
            } else {
                sol[slot[v]].clone()
            };
        }
    }
    let mut s = BigRational::zero();
    for e in 0..lat.num_edges() {
        let (x, y) = lat.endpoints(e);
        if a.is_open(e) && reached[x] {
            let g = &value[y] - &value[x];
            s += &g * &g;
        }
    }
    Ok(s / BigRational::from_integer(BigInt::from(n)))
}

/// Solves the augmented system `[A | b]` for a non-singular `A`.
fn gauss_solve(mut mat: Vec<Vec<BigRational>>) -> Vec<BigRational> {
    let m = mat.len();
    for col in 0..m {
        let pivot = (col..m)
            .find(|&r| !mat[r][col].is_zero())
            .expect("boundary-connecting system is non-singular");
        mat.swap(col, pivot);
        let inv = mat[col][col].recip();
        for c in col..=m {
            mat[col][c] = &mat[col][c] * &inv;
        }
        for r in 0..m {
            if r != col && !mat[r][col].is_zero() {
                let factor = mat[r][col].clone();
                for c in col..=m {
                    let t = &factor * &mat[col][c];
                    mat[r][c] -= t;
                }
            }
        }
    }
    mat.into_iter().map(|row| row[m].clone()).collect()
}

/// Exact expectation of `f` under `Bernoulli(p)^n` as a polynomial in `p`.
/// `f` receives the open edges as a bit mask; masks are processed in fixed
/// chunks and reduced in order.
pub fn expectation_polynomial<F>(n: usize, f: F, exec: Exec) -> Result<Polynomial>
where
    F: Fn(u64) -> Result<BigRational> + Sync + Send,
{
    if n > MAX_EXACT_EDGES {
        return Err(Error::BudgetExceeded {
            what: "edge count for exact enumeration",
            requested: n,
            limit: MAX_EXACT_EDGES,
        });
    }
    let total = 1usize << n;
    let chunks = total.div_ceil(ENUM_CHUNK);
    let partial = exec.try_map(chunks, |c| {
        let mut h = vec![BigRational::zero(); n + 1];
        for mask in c * ENUM_CHUNK..((c + 1) * ENUM_CHUNK).min(total) {
            let value = f(mask as u64)?;
            h[mask.count_ones() as usize] += value;
        }
        Ok(h)
    })?;
    let mut h = vec![BigRational::zero(); n + 1];
    for part in partial {
        for (acc, x) in h.iter_mut().zip(part) {
            *acc += x;
        }
    }
    Ok(Polynomial::from_open_count_sums(&h))
}

/// `xi . abar_m(p) xi` as an exact polynomial, by enumerating all
/// `2^{|E|}` configurations of `cube` and solving each exactly.
pub fn exact_polynomial(cube: &CubeSpec, xi: &[f64], exec: Exec) -> Result<Polynomial> {
    check_direction(xi, cube.dim())?;
    let lat = Arc::new(Lattice::new(cube.clone()));
    let n = lat.num_edges();
    expectation_polynomial(
        n,
        |mask| exact_energy(&Configuration::from_mask(lat.clone(), mask), xi),
        exec,
    )
}

/// `k`-th central finite difference of `poly` at `p` with step `step`.
/// The sample points are the binary values of `p + (k/2 - i) step`; the
/// difference quotient is formed in exact arithmetic, so only the
/// truncation error of the stencil remains. The standard error is the change
/// of the estimate when the step is halved.
pub fn finite_difference(poly: &Polynomial, p: f64, k: usize, step: f64) -> DerivativeEstimate {
    let diff = |h: f64| -> f64 {
        let mut s = BigRational::zero();
        let mut binom = BigInt::one();
        for i in 0..=k {
            let x = p + (k as f64 / 2.0 - i as f64) * h;
            let fx = poly.eval_exact(&BigRational::from_float(x).expect("finite point"));
            let term = BigRational::from_integer(binom.clone()) * fx;
            if i % 2 == 0 {
                s += term;
            } else {
                s -= term;
            }
            binom = binom * BigInt::from(k - i) / BigInt::from(i + 1);
        }
        let h = BigRational::from_float(h).expect("finite step");
        to_f64(&(s / num_traits::pow(h, k)))
    };
    let value = diff(step);
    let std_error = (value - diff(step / 2.0))
        .abs()
        .max(f64::EPSILON * value.abs().max(1.0));
    DerivativeEstimate {
        k,
        value,
        std_error,
        method: Method::FiniteDiff,
    }
}

fn check_open_interval(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::OutOfDomain("formula requires p in (0,1)".into()));
    }
    Ok(())
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn parity(n: usize) -> f64 {
    if n % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Source of per-configuration energies for the chaos estimator.
enum EnergySource {
    /// Energies of every configuration, indexed by open-edge mask.
    Table(Vec<f64>),
    /// Solve on demand through a per-sample cache.
    Solve,
}

fn energy_table(lat: &Arc<Lattice>, xi: &[f64], exec: Exec) -> Result<Vec<f64>> {
    let options = SolverOptions {
        tolerance: glauber::IDENTITY_TOLERANCE,
        ..SolverOptions::default()
    };
    exec.try_map(1usize << lat.num_edges(), |mask| {
        let a = Configuration::from_mask(lat.clone(), mask as u64);
        let (v, _) = solve_harmonic_with(&a, xi, &options)?;
        Ok(dirichlet_energy(&a, &v))
    })
}

/// `sum_{|F| = k, F closed} D_F E(a)` for one configuration.
fn chaos_sum(a: &Configuration, xi: &[f64], k: usize, source: &EnergySource) -> Result<f64> {
    let closed = a.closed_edges();
    let sets = k_subsets(&closed, k);
    match source {
        EnergySource::Table(table) => {
            let base = a.mask();
            let mut s = 0.0;
            for f in &sets {
                let fmask: u64 = f.iter().map(|e| 1u64 << e).sum();
                // Enumerate sub-masks of fmask.
                let mut sub = fmask;
                loop {
                    let missing = (fmask & !sub).count_ones() as usize;
                    s += parity(missing) * table[(base | sub) as usize];
                    if sub == 0 {
                        break;
                    }
                    sub = (sub - 1) & fmask;
                }
            }
            Ok(s)
        }
        EnergySource::Solve => {
            let options = SolverOptions {
                tolerance: glauber::IDENTITY_TOLERANCE,
                ..SolverOptions::default()
            };
            let env = GlauberEnv::with_settings(
                a.clone(),
                xi,
                options,
                Budget::default(),
                Exec::Sequential,
            )?;
            let mut s = 0.0;
            for f in &sets {
                for mask in 0..1usize << k {
                    let sub: EdgeSet = f.subset(mask);
                    s += parity(k - sub.len()) * env.energy_at(&sub)?;
                }
            }
            Ok(s)
        }
    }
}

/// Per-sample values `sum_{|F| = k} D_F E(a_i)` (not yet scaled by `k!/(1-p)^k`).
pub fn chaos_samples(
    cube: &CubeSpec,
    p: f64,
    xi: &[f64],
    k: usize,
    samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<f64>> {
    check_direction(xi, cube.dim())?;
    let lat = Arc::new(Lattice::new(cube.clone()));
    let n = lat.num_edges();
    let budget = Budget::default();
    if k > budget.max_order {
        return Err(Error::BudgetExceeded {
            what: "derivative order",
            requested: k,
            limit: budget.max_order,
        });
    }
    let source = if n <= TABLE_EDGES {
        EnergySource::Table(energy_table(&lat, xi, exec)?)
    } else {
        let terms = crate::percolation::binomial(n, k) * (1u64 << k) as f64;
        if terms > MAX_CHAOS_TERMS as f64 {
            return Err(Error::BudgetExceeded {
                what: "chaos enumeration",
                requested: terms.min(usize::MAX as f64) as usize,
                limit: MAX_CHAOS_TERMS,
            });
        }
        EnergySource::Solve
    };
    exec.try_map(samples, |i| {
        let a = sample(lat.clone(), p, seed, i as u64)?;
        chaos_sum(&a, xi, k, &source)
    })
}

/// Monte Carlo estimate of `xi . abar_m^{(k)}(p) xi` from the chaos
/// expansion `k!/(1-p)^k sum_{|F| = k} E_p[D_F E]`.
pub fn chaos_derivative(
    cube: &CubeSpec,
    p: f64,
    xi: &[f64],
    k: usize,
    samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<DerivativeEstimate> {
    check_open_interval(p)?;
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let raw = chaos_samples(cube, p, xi, k, samples, seed, exec)?;
    let scale = factorial(k) / (1.0 - p).powi(k as i32);
    let est = Estimate::from_samples(&raw);
    Ok(DerivativeEstimate {
        k,
        value: scale * est.mean,
        std_error: scale * est.std_error,
        method: Method::ChaosMc,
    })
}

/// Outcome of [`verify_dfmu`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum DfmuOutcome {
    /// The expansion is stated for `k >= 1` only.
    NotApplicable,
    /// Both sides of the expansion.
    Checked(DfmuReport),
}

/// Evaluates both sides of the energy-derivative expansion of order `k` at `a`.
pub fn verify_dfmu(a: &Configuration, xi: &[f64], k: usize) -> Result<DfmuOutcome> {
    if k == 0 {
        return Ok(DfmuOutcome::NotApplicable);
    }
    let env = GlauberEnv::new(a.clone(), xi)?;
    Ok(DfmuOutcome::Checked(glauber::verify_dfmu(&env, k)?))
}

/// Comparison of a derivative estimate with the improved-energy bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    /// Order.
    pub k: usize,
    /// `p`.
    pub p: f64,
    /// `sum_i |e_i . abar^{(k)} e_i|` with its standard error.
    pub estimate: Estimate,
    /// `4 k!/(1-p)^k sum_i (1 + I(0,k) + I(0,k-1) + I(1,k-1) + I(1,k-2))`
    /// with its standard error.
    pub bound: Estimate,
    /// `k!/(1-p)^k`, reported so that the blow-up near `p = 1` is visible.
    pub prefactor: f64,
    /// Whether `estimate <= bound + 3 * combined standard error`; `None`
    /// when the prefactor is too large for a meaningful comparison.
    pub holds: Option<bool>,
}

/// Prefactors above this are reported without an assertion.
pub const SINGULAR_PREFACTOR: f64 = 1e8;

/// Improved energies of one configuration entering the derivative bound.
fn bound_terms(a: &Configuration, xi: &[f64], k: usize) -> Result<f64> {
    let options = SolverOptions {
        tolerance: glauber::IDENTITY_TOLERANCE,
        ..SolverOptions::default()
    };
    let env =
        GlauberEnv::with_settings(a.clone(), xi, options, Budget::default(), Exec::Sequential)?;
    let term = |i: usize, j: i64| -> Result<f64> {
        if j < 0 {
            return Ok(0.0);
        }
        glauber::improved_energy(&env, &ImprovedEnergyRequest::plain(i, j as usize), None)
    };
    let k = k as i64;
    Ok(1.0 + term(0, k)? + term(0, k - 1)? + term(1, k - 1)? + term(1, k - 2)?)
}

/// Estimates `|abar_m^{(k)}(p)|` and its bound in terms of improved
/// energies on the same samples, summing over the coordinate directions.
pub fn verify_derivative_bound(
    cube: &CubeSpec,
    p: f64,
    k: usize,
    samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<BoundReport> {
    check_open_interval(p)?;
    if samples < 2 {
        return Err(Error::InvalidArgument("samples must be at least 2".into()));
    }
    let d = cube.dim();
    let prefactor = factorial(k) / (1.0 - p).powi(k as i32);
    let mut value = 0.0;
    let mut var = 0.0;
    for axis in 0..d {
        let xi = crate::dirichlet::unit(d, axis);
        let est = chaos_derivative(cube, p, &xi, k, samples, seed, exec)?;
        value += est.value.abs();
        var += est.std_error * est.std_error;
    }
    let estimate = Estimate {
        mean: value,
        std_error: var.sqrt(),
        samples,
    };
    let lat = Arc::new(Lattice::new(cube.clone()));
    let per_sample = exec.try_map(samples, |i| {
        let a = sample(lat.clone(), p, seed, i as u64)?;
        let mut s = 0.0;
        for axis in 0..d {
            s += bound_terms(&a, &crate::dirichlet::unit(d, axis), k)?;
        }
        Ok(4.0 * prefactor * s)
    })?;
    let bound = Estimate::from_samples(&per_sample);
    let holds = (prefactor <= SINGULAR_PREFACTOR)
        .then(|| estimate.mean <= bound.mean + 3.0 * estimate.combined_error(&bound));
    Ok(BoundReport {
        k,
        p,
        estimate,
        bound,
        prefactor,
        holds,
    })
}

/// One level of a convergence study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    /// Cube level.
    pub m: u32,
    /// Estimate of `xi . abar_m^{(k)}(p) xi`.
    pub value: f64,
    /// Its standard error.
    pub std_error: f64,
}

/// Successive difference `Delta_m = |est_m - est_{m+1}|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DifferenceRow {
    /// Lower level `m`.
    pub m: u32,
    /// `Delta_m`.
    pub delta: f64,
    /// Standard error of `Delta_m` (paired across levels when `k = 0`).
    pub std_error: f64,
}

/// Result of [`convergence_study`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceTable {
    /// Order.
    pub k: usize,
    /// Per-level estimates.
    pub rows: Vec<ConvergenceRow>,
    /// Successive differences.
    pub differences: Vec<DifferenceRow>,
    /// `(Delta_m - Delta_{m+1}) / se` for consecutive differences.
    pub decrease_z: Vec<f64>,
    /// Least-squares slope of `ln Delta_m` against `m`, when at least two
    /// differences are positive.
    pub slope: Option<f64>,
}

impl ConvergenceTable {
    /// Whether every consecutive difference decreases by at least `z` standard errors.
    pub fn decreasing_at(&self, z: f64) -> bool {
        self.decrease_z.iter().all(|&s| s >= z)
    }
}

/// Energies of one sample on the cube of level `m + 1` and on each of its
/// `3^d` successors. The successors share the uniforms of the big cube on
/// their edges, so this is a coupled draw of `E_{m+1}` and of `3^d`
/// (dependent) copies of `E_m`.
fn nested_energies(
    big: &Arc<Lattice>,
    subs: &[Arc<Lattice>],
    p: f64,
    xi: &[f64],
    seed: u64,
    index: u64,
) -> Result<(f64, f64)> {
    let eb = energy(&sample(big.clone(), p, seed, index)?, xi)?;
    let mut es = 0.0;
    for l in subs {
        es += energy(&sample(l.clone(), p, seed, index)?, xi)?;
    }
    Ok((eb, es / subs.len() as f64))
}

/// Estimates `xi . abar_m^{(k)}(p) xi` for every `m` in `levels` and the
/// successive differences between consecutive levels.
///
/// For `k = 0`, sample `i` of the pair `(m, m + 1)` is a cube of level
/// `m + 1` together with its `3^d` successors, all sharing uniforms; the
/// difference is estimated from the paired values `E_{m+1} - mean E_m`.
/// Level rows come from the cubes of that level sampled directly (the
/// successors for the first level). Consecutive differences share the
/// sample indices, so the standard error of their gap is also paired.
/// For `k >= 1` the chaos estimator is used per level and errors are
/// combined as if independent.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    d: usize,
    p: f64,
    xi: &[f64],
    k: usize,
    levels: &[u32],
    samples: usize,
    seed: u64,
    exec: Exec,
) -> Result<ConvergenceTable> {
    if levels.is_empty() || levels.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::InvalidArgument(
            "levels must be consecutive and non-empty".into(),
        ));
    }
    if samples < 2 {
        return Err(Error::InvalidArgument("samples must be at least 2".into()));
    }
    check_direction(xi, d)?;
    let mut rows = Vec::new();
    let mut differences = Vec::new();
    // Signed paired differences per pair, for the gap errors.
    let mut signed: Vec<Vec<f64>> = Vec::new();
    if k == 0 {
        if levels.len() == 1 {
            let lat = Arc::new(Lattice::new(CubeSpec::new(d, levels[0])?));
            let est = Estimate::from_samples(&energy_samples(&lat, p, xi, samples, seed, exec)?);
            rows.push(ConvergenceRow {
                m: levels[0],
                value: est.mean,
                std_error: est.std_error,
            });
        }
        for (w, pair) in levels.windows(2).enumerate() {
            let big_cube = CubeSpec::new(d, pair[1])?;
            let big = Arc::new(Lattice::new(big_cube.clone()));
            let subs: Vec<Arc<Lattice>> = big_cube
                .successors()?
                .into_iter()
                .map(|c| Arc::new(Lattice::new(c)))
                .collect();
            let pairs = exec.try_map(samples, |i| {
                nested_energies(&big, &subs, p, xi, seed, i as u64)
            })?;
            let (eb, es): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if w == 0 {
                let est = Estimate::from_samples(&es);
                rows.push(ConvergenceRow {
                    m: pair[0],
                    value: est.mean,
                    std_error: est.std_error,
                });
            }
            let est = Estimate::from_samples(&eb);
            rows.push(ConvergenceRow {
                m: pair[1],
                value: est.mean,
                std_error: est.std_error,
            });
            let raw: Vec<f64> = es.iter().zip(&eb).map(|(x, y)| x - y).collect();
            let diff = Estimate::from_samples(&raw);
            let sign = if diff.mean >= 0.0 { 1.0 } else { -1.0 };
            signed.push(raw.into_iter().map(|x| sign * x).collect());
            differences.push(DifferenceRow {
                m: pair[0],
                delta: diff.mean.abs(),
                std_error: diff.std_error,
            });
        }
    } else {
        for &m in levels {
            let est = chaos_derivative(&CubeSpec::new(d, m)?, p, xi, k, samples, seed, exec)?;
            rows.push(ConvergenceRow {
                m,
                value: est.value,
                std_error: est.std_error,
            });
        }
        for w in rows.windows(2) {
            differences.push(DifferenceRow {
                m: w[0].m,
                delta: (w[0].value - w[1].value).abs(),
                std_error: w[0].std_error.hypot(w[1].std_error),
            });
        }
    }

    let mut decrease_z = Vec::new();
    for w in 0..differences.len().saturating_sub(1) {
        let gap = differences[w].delta - differences[w + 1].delta;
        let se = if k == 0 {
            let paired: Vec<f64> = signed[w]
                .iter()
                .zip(&signed[w + 1])
                .map(|(x, y)| x - y)
                .collect();
            Estimate::from_samples(&paired).std_error
        } else {
            differences[w].std_error.hypot(differences[w + 1].std_error)
        };
        decrease_z.push(if se > 0.0 {
            gap / se
        } else if gap > 0.0 {
            f64::INFINITY
        } else {
            0.0
        });
    }

    let pts: Vec<(f64, f64)> = differences
        .iter()
        .filter(|r| r.delta > 0.0)
        .map(|r| (r.m as f64, r.delta.ln()))
        .collect();
    let slope = (pts.len() >= 2).then(|| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        ols_slope(&xs, &ys)
    });
    Ok(ConvergenceTable {
        k,
        rows,
        differences,
        decrease_z,
        slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirichlet::unit;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn polynomial_from_open_counts() {
        // Two edges, f = number of open edges: E f = 2p.
        let h = vec![rat(0, 1), rat(2, 1), rat(2, 1)];
        let q = Polynomial::from_open_count_sums(&h);
        assert_eq!(q.coefficients(), &[rat(0, 1), rat(2, 1)]);
    }

    #[test]
    fn derivative_of_monomials() {
        let q = Polynomial::new(vec![rat(1, 1), rat(0, 1), rat(3, 1)]);
        assert_eq!(q.derivative().coefficients(), &[rat(0, 1), rat(6, 1)]);
        assert_eq!(q.nth_derivative(3).degree(), 0);
        assert!(q.nth_derivative(3).coefficients().is_empty());
    }

    #[test]
    fn exact_energy_endpoints() {
        let lat = Arc::new(Lattice::new(CubeSpec::new(2, 1).unwrap()));
        let xi = unit(2, 0);
        assert_eq!(
            exact_energy(&Configuration::open(lat.clone()), &xi).unwrap(),
            rat(2, 3)
        );
        assert_eq!(
            exact_energy(&Configuration::closed(lat), &xi).unwrap(),
            rat(0, 1)
        );
    }

    #[test]
    fn chaos_rejects_endpoints() {
        let cube = CubeSpec::new(2, 1).unwrap();
        for p in [0.0, 1.0] {
            let r = chaos_derivative(&cube, p, &unit(2, 0), 1, 10, 0, Exec::Sequential);
            assert!(matches!(r, Err(Error::OutOfDomain(_))));
        }
    }

    #[test]
    fn dfmu_not_applicable_at_zero() {
        let lat = Arc::new(Lattice::new(CubeSpec::new(2, 1).unwrap()));
        let a = Configuration::open(lat);
        assert_eq!(
            verify_dfmu(&a, &unit(2, 0), 0).unwrap(),
            DfmuOutcome::NotApplicable
        );
    }

    #[test]
    fn exact_enumeration_budget() {
        let r = expectation_polynomial(21, |_| Ok(BigRational::zero()), Exec::Sequential);
        assert!(matches!(r, Err(Error::BudgetExceeded { .. })));
    }
}
