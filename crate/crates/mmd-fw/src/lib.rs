//! Greedy particle approximation of Bayesian posteriors.
//!
//! The central algorithm grows a weighted particle set one point at a time by
//! running Frank-Wolfe on the squared maximum mean discrepancy between the
//! particle measure and the target posterior. Each outer iteration solves an
//! approximate linear minimization oracle by gradient descent and then
//! refreshes the particle weights, by default with empirical Bayesian
//! quadrature weights `K⁻¹ẑ`.
//!
//! The crate also ships the comparison methods the main algorithm is usually
//! benchmarked against (Stein variational gradient descent, greedy Stein
//! points, kernel herding), a small Hamiltonian Monte Carlo sampler used to
//! produce gold reference samples, and a config-driven experiment harness
//! with a CLI (`mmdfw run | eval | sample`).
//!
//! Modules follow the pipeline:
//!
//! * [`kernels`] — kernel functions, gradients, Gram solves, bandwidth selection
//! * [`targets`] — log-densities with gradients, MAP search
//! * [`discrepancy`] — weighted particles, MMD², Stein kernel, KSD
//! * [`fw`] — the Frank-Wolfe optimizer and its variants
//! * [`baselines`] — SVGD, Stein points, kernel herding
//! * [`sampling`] — Hamiltonian Monte Carlo reference sampler
//! * [`harness`] — experiment configs, result tables, file formats

pub(crate) mod linalg;
#[cfg(test)]
pub(crate) mod testutil;

pub mod baselines;
pub mod discrepancy;
pub mod fw;
pub mod harness;
pub mod kernels;
pub mod optim;
pub mod sampling;
pub mod targets;

pub use discrepancy::{ReferenceSamples, WeightedParticles};
pub use kernels::KernelSpec;
pub use targets::TargetDensity;
