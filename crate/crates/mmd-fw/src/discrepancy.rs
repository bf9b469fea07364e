//! Weighted particle sets and the discrepancies every algorithm in this crate
//! optimizes or reports: squared MMD against a reference sample, its Bayesian
//! quadrature posterior-variance form, and the kernelized Stein discrepancy.

use thiserror::Error;

use crate::kernels::{GramCholesky, KernelError, KernelSpec};
use crate::targets::TargetDensity;

#[derive(Debug, Error)]
pub enum DiscrepancyError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("invalid particle set: {0}")]
    InvalidParticles(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Discrete approximation `p̂(x) = Σ w_n δ(x, x_n)`.
///
/// Weights are not constrained to be non-negative or to sum to one: Bayesian
/// quadrature weights routinely violate both.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedParticles {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl WeightedParticles {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self, DiscrepancyError> {
        if points.is_empty() {
            return Err(DiscrepancyError::InvalidParticles(
                "need at least one particle".into(),
            ));
        }
        if points.len() != weights.len() {
            return Err(DiscrepancyError::InvalidParticles(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let d = points[0].len();
        for p in &points {
            if p.len() != d {
                return Err(DiscrepancyError::DimensionMismatch(p.len(), d));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(DiscrepancyError::InvalidParticles(
                    "non-finite particle coordinate".into(),
                ));
            }
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(DiscrepancyError::InvalidParticles(
                "non-finite weight".into(),
            ));
        }
        Ok(WeightedParticles { points, weights })
    }

    /// Uniform weights `w_i = 1/N` exactly.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self, DiscrepancyError> {
        let w = 1.0 / points.len() as f64;
        let weights = vec![w; points.len()];
        Self::new(points, weights)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weighted_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim()];
        for (p, w) in self.points.iter().zip(&self.weights) {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += w * v;
            }
        }
        mean
    }

}

/// Samples standing in for the target distribution, e.g. HMC draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSamples {
    samples: Vec<Vec<f64>>,
}

impl ReferenceSamples {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self, DiscrepancyError> {
        if samples.is_empty() {
            return Err(DiscrepancyError::InvalidParticles(
                "need at least one reference sample".into(),
            ));
        }
        let d = samples[0].len();
        for s in &samples {
            if s.len() != d {
                return Err(DiscrepancyError::DimensionMismatch(s.len(), d));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(DiscrepancyError::InvalidParticles(
                    "non-finite reference coordinate".into(),
                ));
            }
        }
        Ok(ReferenceSamples { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }
}

/// Neumaier-compensated accumulator; keeps the double sums below
/// reduction-order sensitivity.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Reference-side quantities that do not depend on the particles; computing
/// them once makes per-iteration MMD reporting O(n·M) instead of O(M²).
#[derive(Debug, Clone)]
pub struct ReferenceCache {
    /// `Ê[k] = (1/M²) Σ_ml k(y_m, y_l)`
    mean_kernel: f64,
    /// Mean feature vector of the reference, for finite-dimensional kernels.
    mean_features: Option<Vec<f64>>,
}

impl ReferenceCache {
    pub fn new(kernel: &KernelSpec, reference: &ReferenceSamples) -> Result<Self, KernelError> {
        if let Some(feats) = kernel.rff_features() {
            let m_inv = 1.0 / reference.len() as f64;
            let mut mean = vec![0.0; feats.num_features];
            for s in reference.samples() {
                for (acc, z) in mean.iter_mut().zip(feats.features(s)) {
                    *acc += m_inv * z;
                }
            }
            // For a feature kernel the V-statistic mean is exactly |z̄|².
            let mean_kernel = mean.iter().map(|v| v * v).sum();
            return Ok(ReferenceCache {
                mean_kernel,
                mean_features: Some(mean),
            });
        }
        Ok(ReferenceCache {
            mean_kernel: mean_reference_kernel(kernel, reference)?,
            mean_features: None,
        })
    }

    pub fn mean_kernel(&self) -> f64 {
        self.mean_kernel
    }

    pub(crate) fn mean_features(&self) -> Option<&[f64]> {
        self.mean_features.as_deref()
    }
}

/// Squared MMD between a weighted particle set and the empirical measure of a
/// reference sample, with the 1/2 coefficient:
///
/// `½ [ Σ_ij w_i w_j k(x_i,x_j) − (2/M) Σ_im w_i k(x_i,y_m) + (1/M²) Σ_ml k(y_m,y_l) ]`
pub fn mmd2_vs_samples(
    kernel: &KernelSpec,
    particles: &WeightedParticles,
    reference: &ReferenceSamples,
) -> Result<f64, DiscrepancyError> {
    let cache = ReferenceCache::new(kernel, reference)?;
    mmd2_vs_samples_cached(kernel, particles, reference, &cache)
}

/// As [`mmd2_vs_samples`] with the reference-only sums precomputed.
pub fn mmd2_vs_samples_cached(
    kernel: &KernelSpec,
    particles: &WeightedParticles,
    reference: &ReferenceSamples,
    cache: &ReferenceCache,
) -> Result<f64, DiscrepancyError> {
    if particles.dim() != reference.dim() {
        return Err(DiscrepancyError::DimensionMismatch(
            particles.dim(),
            reference.dim(),
        ));
    }
    // Finite-dimensional kernels admit an O(N·D) feature-space route.
    if let (Some(feats), Some(mean)) = (kernel.rff_features(), cache.mean_features()) {
        let mut diff = mean.iter().map(|v| -v).collect::<Vec<f64>>();
        for (p, w) in particles.points().iter().zip(particles.weights()) {
            for (acc, z) in diff.iter_mut().zip(feats.features(p)) {
                *acc += w * z;
            }
        }
        let sq: f64 = diff.iter().map(|v| v * v).sum();
        return Ok(0.5 * sq);
    }

    let m = reference.len() as f64;
    let mut pp = KahanSum::default();
    for (i, (xi, wi)) in particles.points().iter().zip(particles.weights()).enumerate() {
        for (xj, wj) in particles.points().iter().zip(particles.weights()).take(i) {
            pp.add(2.0 * wi * wj * kernel.eval(xi, xj)?);
        }
        pp.add(wi * wi * kernel.eval(xi, xi)?);
    }
    let mut pr = KahanSum::default();
    for (xi, wi) in particles.points().iter().zip(particles.weights()) {
        for ym in reference.samples() {
            pr.add(wi * kernel.eval(xi, ym)?);
        }
    }
    let value = 0.5 * (pp.value() - 2.0 / m * pr.value() + cache.mean_kernel);
    if value < 0.0 {
        if value > -1e-9 {
            return Ok(0.0);
        }
        return Err(DiscrepancyError::Numerical(format!(
            "squared MMD is negative beyond round-off: {value}"
        )));
    }
    Ok(value)
}

/// Mean kernel value over the reference set, `Ê[k] = (1/M²) Σ_ml k(y_m, y_l)`.
pub(crate) fn mean_reference_kernel(
    kernel: &KernelSpec,
    reference: &ReferenceSamples,
) -> Result<f64, KernelError> {
    let m = reference.len() as f64;
    let mut rr = KahanSum::default();
    for (i, ym) in reference.samples().iter().enumerate() {
        for yl in reference.samples().iter().take(i) {
            rr.add(2.0 * kernel.eval(ym, yl)?);
        }
        rr.add(kernel.eval(ym, ym)?);
    }
    Ok(rr.value() / (m * m))
}

/// Empirical kernel mean of the reference evaluated at each point,
/// `ẑ_i = (1/M) Σ_m k(x_i, y_m)`.
pub(crate) fn reference_z(
    kernel: &KernelSpec,
    points: &[Vec<f64>],
    reference: &ReferenceSamples,
) -> Result<Vec<f64>, KernelError> {
    let m = reference.len() as f64;
    points
        .iter()
        .map(|x| {
            let mut acc = KahanSum::default();
            for y in reference.samples() {
                acc.add(kernel.eval(x, y)?);
            }
            Ok(acc.value() / m)
        })
        .collect()
}

/// As [`reference_z`], using the cached mean feature vector when the kernel
/// is finite dimensional.
pub(crate) fn reference_z_cached(
    kernel: &KernelSpec,
    points: &[Vec<f64>],
    reference: &ReferenceSamples,
    cache: &ReferenceCache,
) -> Result<Vec<f64>, KernelError> {
    if let (Some(feats), Some(mean)) = (kernel.rff_features(), cache.mean_features()) {
        return Ok(points
            .iter()
            .map(|x| {
                feats
                    .features(x)
                    .iter()
                    .zip(mean)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect());
    }
    reference_z(kernel, points, reference)
}

/// Bayesian-quadrature posterior variance of the integral estimate:
/// `Ê[k(x,x')] − ẑᵀ K⁻¹ ẑ`, with both `Ê` and `ẑ` estimated from the
/// reference set. This equals the squared RKHS distance between the reference
/// embedding and its projection onto the particle features, so it is the
/// squared MMD achieved by the quadrature-optimal weights (without the 1/2
/// coefficient).
pub fn bq_variance(
    kernel: &KernelSpec,
    particles: &WeightedParticles,
    reference: &ReferenceSamples,
) -> Result<f64, DiscrepancyError> {
    if particles.dim() != reference.dim() {
        return Err(DiscrepancyError::DimensionMismatch(
            particles.dim(),
            reference.dim(),
        ));
    }
    let cache = ReferenceCache::new(kernel, reference)?;
    let z = reference_z_cached(kernel, particles.points(), reference, &cache)?;
    let chol = GramCholesky::factor(kernel, particles.points())?;
    let w = chol.solve(&z)?;
    let quad: f64 = z.iter().zip(&w).map(|(a, b)| a * b).sum();
    Ok((cache.mean_kernel() - quad).max(0.0))
}

/// The Stein kernel
/// `k_s(x,y) = Σ_d ∂²k/∂x_d∂y_d + ∇_x k·∇_y ln p(y) + ∇_y k·∇_x ln p(x)
///            + k(x,y)·∇_x ln p(x)·∇_y ln p(y)`.
pub fn stein_kernel(
    kernel: &KernelSpec,
    target: &dyn TargetDensity,
    x: &[f64],
    y: &[f64],
) -> Result<f64, DiscrepancyError> {
    let trace = kernel.grad_xy_trace(x, y)?;
    let k = kernel.eval(x, y)?;
    let gx = kernel.grad_x(x, y)?;
    let gy = kernel.grad_y(x, y)?;
    let sx = target.grad_log_density(x);
    let sy = target.grad_log_density(y);
    if sx.iter().chain(sy.iter()).any(|v| !v.is_finite()) {
        return Err(DiscrepancyError::Numerical(
            "non-finite target score".into(),
        ));
    }
    let gx_sy: f64 = gx.iter().zip(&sy).map(|(a, b)| a * b).sum();
    let gy_sx: f64 = gy.iter().zip(&sx).map(|(a, b)| a * b).sum();
    let sx_sy: f64 = sx.iter().zip(&sy).map(|(a, b)| a * b).sum();
    Ok(trace + gx_sy + gy_sx + k * sx_sy)
}

/// Kernelized Stein discrepancy `sqrt(Σ_ij w_i w_j k_s(x_i, x_j))`. Tiny
/// negative round-off under the root is clamped; anything below `-1e-10` is
/// treated as a failure.
pub fn ksd(
    particles: &WeightedParticles,
    target: &dyn TargetDensity,
    kernel: &KernelSpec,
) -> Result<f64, DiscrepancyError> {
    let n = particles.len();
    let points = particles.points();
    let weights = particles.weights();
    let mut acc = KahanSum::default();
    for i in 0..n {
        for j in 0..i {
            acc.add(2.0 * weights[i] * weights[j] * stein_kernel(kernel, target, &points[i], &points[j])?);
        }
        acc.add(weights[i] * weights[i] * stein_kernel(kernel, target, &points[i], &points[i])?);
    }
    let total = acc.value();
    if total < -1e-10 {
        return Err(DiscrepancyError::Numerical(format!(
            "squared KSD is negative beyond round-off: {total}"
        )));
    }
    Ok(total.max(0.0).sqrt())
}
