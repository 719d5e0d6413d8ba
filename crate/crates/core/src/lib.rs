//! Numerical laboratory for homogenization of supercritical Bernoulli bond
//! percolation on triadic cubes of `Z^d`.
//!
//! The crate is organised bottom-up:
//!
//! - [`lattice`]: triadic cubes, boxes, vertex and edge indexing.
//! - [`percolation`]: configurations, counter-based sampling, the monotone
//!   coupling and the edit `a -> a^G`.
//! - [`clusters`]: cluster labeling, boundary-connecting clusters,
//!   crossability, well-connectedness, canonical grains and the
//!   cluster-growth split.
//! - [`partition`]: local partitions of good cubes, the moment class
//!   `Lambda`, pyramid partitions and overlap counting.
//! - [`dirichlet`]: harmonic and Poisson solves on boundary-connecting
//!   clusters, Dirichlet energies and finite-volume conductivities.
//! - [`glauber`]: Glauber derivatives, the fields `V(F, j)`, the perturbed
//!   corrector equation, growth and hole-separation identities.
//! - [`derivatives`]: exact polynomial oracle, chaos-expansion estimator
//!   and convergence studies for derivatives of the conductivity.
//! - [`walk`]: variable-speed random walks, diffusivity and density
//!   estimates, and the Einstein cross-check.
//! - [`verify`]: randomized suites reporting the largest residual of each
//!   identity.
//!
//! Data parallelism goes through [`exec`], which uses rayon when the
//! `parallel` feature is enabled and a sequential loop otherwise. All
//! reductions happen in a fixed order so results do not depend on the
//! schedule.

#![allow(clippy::needless_range_loop)]

pub mod clusters;
pub mod derivatives;
pub mod dirichlet;
pub mod error;
pub mod exec;
pub mod glauber;
pub mod lattice;
pub mod partition;
pub mod percolation;
mod solver;
pub mod stats;
pub mod verify;
pub mod walk;

pub use error::{Error, Result};
