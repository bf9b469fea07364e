//! Frank-Wolfe minimization of squared MMD over the marginal polytope.
//!
//! Each outer iteration solves an approximate linear minimization oracle by
//! Adam descent on the linearized objective and then refreshes the particle
//! weights: constant-step and line-search rules blend the new vertex into a
//! convex combination, the fully-corrective rule recomputes all weights as
//! empirical Bayesian quadrature weights `K⁻¹ẑ`.

use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::discrepancy::{
    mmd2_vs_samples_cached, reference_z, reference_z_cached, DiscrepancyError, ReferenceCache,
    ReferenceSamples, WeightedParticles,
};
use crate::kernels::{gram_matrix, GramCholesky, KernelError, KernelSpec};
use crate::optim::{Adam, AdamConfig};
use crate::targets::{approx_map, MapConfig, TargetDensity, TargetError};

#[derive(Debug, Error)]
pub enum FwError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Discrepancy(#[from] DiscrepancyError),
    #[error("non-finite target score at {0:?}")]
    NonFiniteScore(Vec<f64>),
    #[error("every LMO restart produced a non-finite trajectory")]
    AllRestartsDiverged,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("block-coordinate LMO requires a kernel that factorizes over dimensions")]
    KernelNotProduct,
    #[error("blocks must partition the coordinate set: {0}")]
    InvalidBlocks(String),
}

/// A failed run together with whatever was computed before the failure.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct FwFailure {
    pub error: FwError,
    pub partial: Option<FwRun>,
}

impl From<FwError> for FwFailure {
    fn from(error: FwError) -> Self {
        FwFailure {
            error,
            partial: None,
        }
    }
}

/// Step-size policy for the outer Frank-Wolfe iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// `λ_n = 1/(n+1)`; keeps uniform weights over the vertices.
    Constant,
    /// Closed-form optimal blend, clipped to `[0, 1]`.
    LineSearch,
    /// Fully corrective: all weights recomputed as `K⁻¹ẑ` each iteration.
    EmpiricalBq,
}

/// Where the LMO inner loop starts from.
#[derive(Debug, Clone)]
pub enum InitPolicy {
    /// Diagonal Gaussian fitted to the current particles; falls back to the
    /// target's init draw while there is only one particle.
    ParticleFit,
    /// Draw from the target's init distribution (the prior, when it has one).
    PriorSample,
    /// Uniform over an axis-aligned box.
    RandomBox { lower: Vec<f64>, upper: Vec<f64> },
    /// A fixed starting point, identical for every restart.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct LmoConfig {
    /// Inner gradient steps `L`.
    pub inner_iterations: usize,
    pub optimizer: AdamConfig,
    pub init: InitPolicy,
    pub restarts: usize,
}

impl Default for LmoConfig {
    fn default() -> Self {
        LmoConfig {
            inner_iterations: 250,
            optimizer: AdamConfig::default(),
            init: InitPolicy::ParticleFit,
            restarts: 3,
        }
    }
}

/// Per-iteration diagnostics of a Frank-Wolfe run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub n_particles: usize,
    pub mmd2_vs_reference: Option<f64>,
    pub theorem1_residual: Option<f64>,
    pub lmo_objective_final: Option<f64>,
    pub wallclock_ms: u64,
}

/// Mutable optimizer state: the particle representation of the current mean
/// embedding plus cached per-particle scores.
pub struct FwState<'a> {
    pub target: &'a dyn TargetDensity,
    pub kernel: &'a KernelSpec,
    pub step_rule: StepRule,
    particles: Vec<Vec<f64>>,
    weights: Vec<f64>,
    /// `∇ log p` at each stored particle; refreshed only when the particle
    /// set changes, never during the inner loop.
    scores: Vec<Vec<f64>>,
    pub iteration: usize,
    pub diagnostics: Vec<RunRecord>,
}

impl<'a> FwState<'a> {
    pub fn new(
        target: &'a dyn TargetDensity,
        kernel: &'a KernelSpec,
        step_rule: StepRule,
        first_particle: Vec<f64>,
    ) -> Result<Self, FwError> {
        let mut state = FwState {
            target,
            kernel,
            step_rule,
            particles: Vec::new(),
            weights: Vec::new(),
            scores: Vec::new(),
            iteration: 0,
            diagnostics: Vec::new(),
        };
        state.push_particle(first_particle)?;
        state.weights = vec![1.0];
        state.iteration = 1;
        Ok(state)
    }

    /// Build a state from an existing weighted particle set.
    pub fn from_particles(
        target: &'a dyn TargetDensity,
        kernel: &'a KernelSpec,
        step_rule: StepRule,
        particles: &WeightedParticles,
    ) -> Result<Self, FwError> {
        let mut state = FwState {
            target,
            kernel,
            step_rule,
            particles: Vec::new(),
            weights: particles.weights().to_vec(),
            scores: Vec::new(),
            iteration: particles.len(),
            diagnostics: Vec::new(),
        };
        for p in particles.points() {
            state.push_particle(p.clone())?;
        }
        Ok(state)
    }

    fn push_particle(&mut self, x: Vec<f64>) -> Result<(), FwError> {
        if let Some(first) = self.particles.first() {
            if x.len() != first.len() {
                return Err(FwError::InvalidConfig(format!(
                    "particle dimension {} does not match {}",
                    x.len(),
                    first.len()
                )));
            }
        }
        let score = self.target.grad_log_density(&x);
        if score.iter().any(|v| !v.is_finite()) {
            return Err(FwError::NonFiniteScore(x));
        }
        self.particles.push(x);
        self.scores.push(score);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].len()
    }

    pub fn particles(&self) -> &[Vec<f64>] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn to_weighted_particles(&self) -> WeightedParticles {
        WeightedParticles::new(self.particles.clone(), self.weights.clone())
            .expect("state invariants keep particles valid")
    }
}

// ---------------------------------------------------------------------------
// LMO gradient and surrogate objective
// ---------------------------------------------------------------------------

/// Empirical gradient of the linearized objective
/// `Σ_i w_i k(x_i, x) − μ_p(x)` at the query point:
///
/// `(1/n) Σ_i w_i ( ∇_x k(x_i, x) − k(x, x_i)·∇ log p(x_i) )`
///
/// with the mean-embedding term estimated from the stored particles and
/// their cached scores. Descending this pushes the query away from the
/// current particles and toward regions the particle scores point at.
pub fn approx_lmo_gradient(state: &FwState, x: &[f64]) -> Result<Vec<f64>, FwError> {
    let n = state.particles.len();
    let d = x.len();
    let mut grad = vec![0.0; d];
    for i in 0..n {
        let xi = &state.particles[i];
        let k = state.kernel.eval(x, xi)?;
        let gk = state.kernel.grad_x(x, xi)?;
        let w = state.weights[i];
        let s = &state.scores[i];
        for dd in 0..d {
            grad[dd] += w * (gk[dd] - k * s[dd]);
        }
    }
    let inv_n = 1.0 / n as f64;
    for g in &mut grad {
        *g *= inv_n;
    }
    Ok(grad)
}

/// Computable surrogate of the linearized objective: the attraction term is
/// exact, the intractable `μ_p(x)` is reconstructed to first order from the
/// stored scores. Its gradient agrees with [`approx_lmo_gradient`] at the
/// particles up to the Taylor remainder.
pub fn lmo_surrogate(state: &FwState, x: &[f64]) -> Result<f64, FwError> {
    let n = state.particles.len();
    let mut acc = 0.0;
    for i in 0..n {
        let xi = &state.particles[i];
        let k = state.kernel.eval(x, xi)?;
        let s = &state.scores[i];
        let taylor: f64 = s.iter().zip(x.iter().zip(xi)).map(|(sv, (a, b))| sv * (a - b)).sum();
        acc += state.weights[i] * (k - k * taylor);
    }
    Ok(acc / n as f64)
}

/// Per-call gradient evaluator for the LMO inner loop. Feature kernels fold
/// the particle sums into feature space once, so an inner step costs O(D·d)
/// instead of O(n·D·d); the generic path delegates to
/// [`approx_lmo_gradient`] unchanged.
enum LmoGradient<'a, 'b> {
    Generic(&'b FwState<'a>),
    Features {
        feats: &'b crate::kernels::RffFeatures,
        inv_n: f64,
        /// `Σ_i w_i z(x_i)`
        weighted: Vec<f64>,
        /// Per coordinate `d`: `Σ_i w_i s_i[d] z(x_i)`
        weighted_scores: Vec<Vec<f64>>,
    },
}

impl<'a, 'b> LmoGradient<'a, 'b> {
    fn new(state: &'b FwState<'a>) -> Self {
        let Some(feats) = state.kernel.rff_features() else {
            return LmoGradient::Generic(state);
        };
        let d = state.dim();
        let mut weighted = vec![0.0; feats.num_features];
        let mut weighted_scores = vec![vec![0.0; feats.num_features]; d];
        for ((p, w), s) in state
            .particles
            .iter()
            .zip(&state.weights)
            .zip(&state.scores)
        {
            let z = feats.features(p);
            for (j, zj) in z.iter().enumerate() {
                weighted[j] += w * zj;
                for dd in 0..d {
                    weighted_scores[dd][j] += w * s[dd] * zj;
                }
            }
        }
        LmoGradient::Features {
            feats,
            inv_n: 1.0 / state.particles.len() as f64,
            weighted,
            weighted_scores,
        }
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, FwError> {
        match self {
            LmoGradient::Generic(state) => approx_lmo_gradient(state, x),
            LmoGradient::Features {
                feats,
                inv_n,
                weighted,
                weighted_scores,
            } => {
                let (cos, sin) = feats.cos_sin_features(x);
                let d = x.len();
                let mut grad = vec![0.0; d];
                for j in 0..cos.len() {
                    let pull = sin[j] * weighted[j];
                    for (dd, g) in grad.iter_mut().enumerate() {
                        *g -= pull * feats.freq(j, dd) + cos[j] * weighted_scores[dd][j];
                    }
                }
                for g in &mut grad {
                    *g *= inv_n;
                }
                Ok(grad)
            }
        }
    }
}

/// Result of one approximate LMO call.
#[derive(Debug, Clone)]
pub struct LmoOutcome {
    pub point: Vec<f64>,
    /// Surrogate value at the chosen restart's initialization.
    pub surrogate_init: f64,
    /// Surrogate value at the returned point.
    pub surrogate_final: f64,
    /// Set when no restart strictly decreased the surrogate; the returned
    /// point is then the initialization itself.
    pub degenerate: bool,
}

fn sample_init<R: Rng>(
    policy: &InitPolicy,
    state: &FwState,
    rng: &mut R,
) -> Result<Vec<f64>, FwError> {
    match policy {
        InitPolicy::PriorSample => Ok(state.target.init_sample(rng)),
        InitPolicy::Explicit(p) => {
            if p.len() != state.dim() {
                return Err(FwError::InvalidConfig(format!(
                    "explicit init has dimension {}, state has {}",
                    p.len(),
                    state.dim()
                )));
            }
            Ok(p.clone())
        }
        InitPolicy::RandomBox { lower, upper } => {
            if lower.len() != state.dim() || upper.len() != state.dim() {
                return Err(FwError::InvalidConfig("box bounds dimension mismatch".into()));
            }
            Ok(lower
                .iter()
                .zip(upper)
                .map(|(lo, hi)| rng.random_range(*lo..*hi))
                .collect())
        }
        InitPolicy::ParticleFit => {
            // A single particle has no spread to fit; propose at the kernel
            // length scale around it so the starting point is within kernel
            // range, where the gradient still carries signal. A prior draw
            // here can start arbitrarily far outside that range.
            let n = state.particles.len();
            let d = state.dim();
            let h = kernel_length_scale(state.kernel);
            let mut mean = vec![0.0; d];
            for p in &state.particles {
                for (m, v) in mean.iter_mut().zip(p) {
                    *m += v / n as f64;
                }
            }
            let mut sd = vec![0.0; d];
            for p in &state.particles {
                for (s, (v, m)) in sd.iter_mut().zip(p.iter().zip(&mean)) {
                    *s += (v - m) * (v - m) / n as f64;
                }
            }
            for s in &mut sd {
                *s = s.sqrt();
            }
            if n < 2 || sd.iter().all(|s| *s == 0.0) {
                sd = vec![h; d];
            }
            Ok(mean
                .iter()
                .zip(&sd)
                .map(|(m, s)| m + s * Distribution::<f64>::sample(&StandardNormal, rng))
                .collect())
        }
    }
}

/// Approximate linear minimization oracle: Adam descent of the linearized
/// objective from the best of `restarts` initializations. The returned point
/// strictly decreases the surrogate relative to its own initialization, or
/// the initialization is returned with the degenerate flag set.
pub fn approx_lmo<R: Rng>(
    state: &FwState,
    config: &LmoConfig,
    rng: &mut R,
) -> Result<LmoOutcome, FwError> {
    if config.restarts == 0 || config.inner_iterations == 0 {
        return Err(FwError::InvalidConfig(
            "need at least one restart and one inner iteration".into(),
        ));
    }
    let engine = LmoGradient::new(state);
    let mut best: Option<(f64, f64, Vec<f64>, Vec<f64>)> = None;
    for _ in 0..config.restarts {
        let init = sample_init(&config.init, state, rng)?;
        if init.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let mut x = init.clone();
        let mut adam = Adam::new(config.optimizer, x.len());
        let mut finite = true;
        for _ in 0..config.inner_iterations {
            let grad = engine.gradient(&x)?;
            if grad.iter().any(|g| !g.is_finite()) {
                finite = false;
                break;
            }
            adam.step(&mut x, &grad);
            if x.iter().any(|v| !v.is_finite()) {
                finite = false;
                break;
            }
        }
        if !finite {
            continue;
        }
        let s_init = lmo_surrogate(state, &init)?;
        let s_final = lmo_surrogate(state, &x)?;
        if best.as_ref().is_none_or(|(b, ..)| s_final < *b) {
            best = Some((s_final, s_init, x, init));
        }
    }
    let (s_final, s_init, x, init) = best.ok_or(FwError::AllRestartsDiverged)?;
    if s_final < s_init {
        Ok(LmoOutcome {
            point: x,
            surrogate_init: s_init,
            surrogate_final: s_final,
            degenerate: false,
        })
    } else {
        Ok(LmoOutcome {
            point: init,
            surrogate_init: s_init,
            surrogate_final: s_init,
            degenerate: true,
        })
    }
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// Empirical Bayesian quadrature weights `ŵ = K⁻¹ ẑ` with
/// `ẑ_m = (1/n) Σ_l k(x_l, x_m)` averaged over the particles themselves.
/// Returns the weights and the diagonal jitter used by the solve.
pub fn empirical_bq_weights(
    kernel: &KernelSpec,
    points: &[Vec<f64>],
) -> Result<(Vec<f64>, f64), FwError> {
    let n = points.len();
    if n == 0 {
        return Err(FwError::InvalidConfig("empty point set".into()));
    }
    let gram = gram_matrix(kernel, points)?;
    let z: Vec<f64> = (0..n)
        .map(|m| (0..n).map(|l| gram[l * n + m]).sum::<f64>() / n as f64)
        .collect();
    let chol = GramCholesky::factor_gram(gram, n)?;
    let weights = chol.solve(&z)?;
    Ok((weights, chol.jitter))
}

/// Line-search step toward a new vertex. All inner products with the target
/// embedding are estimated from the reference set when one is supplied, and
/// from the particles themselves otherwise.
#[derive(Debug, Clone, Copy)]
pub struct LineSearchStep {
    pub lambda: f64,
    /// Set when the denominator collapsed (vertex indistinguishable from the
    /// current embedding); `lambda` is then 0.
    pub degenerate: bool,
}

pub fn step_line_search(
    state: &FwState,
    new_vertex: &[f64],
    reference: Option<&ReferenceSamples>,
) -> Result<LineSearchStep, FwError> {
    let (lambda, degenerate) = line_search_lambda(
        state.kernel,
        &state.particles,
        &state.weights,
        new_vertex,
        reference,
    )?;
    Ok(LineSearchStep { lambda, degenerate })
}

/// Closed-form optimal blend coefficient, clipped to [0, 1]. Returns the
/// degenerate flag when the denominator collapses.
pub(crate) fn line_search_lambda(
    kernel: &KernelSpec,
    points: &[Vec<f64>],
    weights: &[f64],
    new_vertex: &[f64],
    reference: Option<&ReferenceSamples>,
) -> Result<(f64, bool), FwError> {
    let n = points.len();

    let mut emb_sq = 0.0; // ⟨μ̂, μ̂⟩
    for i in 0..n {
        for j in 0..n {
            emb_sq += weights[i] * weights[j] * kernel.eval(&points[i], &points[j])?;
        }
    }
    let mut emb_vertex = 0.0; // ⟨μ̂, g⟩
    for (i, wi) in weights.iter().enumerate() {
        emb_vertex += wi * kernel.eval(&points[i], new_vertex)?;
    }
    let vertex_sq = kernel.eval(new_vertex, new_vertex)?;

    // ⟨μ_p, μ̂⟩ and ⟨μ_p, g⟩, estimated.
    let (target_emb, target_vertex) = match reference {
        Some(r) => {
            let z = reference_z(kernel, points, r)?;
            let te: f64 = weights.iter().zip(&z).map(|(w, zi)| w * zi).sum();
            let vertex_owned = vec![new_vertex.to_vec()];
            let zv = reference_z(kernel, &vertex_owned, r)?[0];
            (te, zv)
        }
        None => {
            let mut te = 0.0;
            for (i, wi) in weights.iter().enumerate() {
                let mut zi = 0.0;
                for l in 0..n {
                    zi += kernel.eval(&points[l], &points[i])?;
                }
                te += wi * zi / n as f64;
            }
            let mut zv = 0.0;
            for l in 0..n {
                zv += kernel.eval(&points[l], new_vertex)?;
            }
            (te, zv / n as f64)
        }
    };

    let numerator = (emb_sq - emb_vertex) - (target_emb - target_vertex);
    let denominator = emb_sq - 2.0 * emb_vertex + vertex_sq;
    if denominator < 1e-12 {
        return Ok((0.0, true));
    }
    Ok(((numerator / denominator).clamp(0.0, 1.0), false))
}

// ---------------------------------------------------------------------------
// Theorem-1 diagnostic
// ---------------------------------------------------------------------------

/// Empirical step-size condition residual: the mean reference kernel value
/// minus the quadratic form `ẑᵀK⁻¹ẑ` of the reference kernel means at the
/// particles. Positive values indicate the reference embedding is not yet
/// fully explained by the particle features, the empirical analogue of the
/// condition required for geometric convergence.
pub fn theorem1_diagnostic(
    kernel: &KernelSpec,
    points: &[Vec<f64>],
    reference: &ReferenceSamples,
) -> Result<f64, FwError> {
    let cache = ReferenceCache::new(kernel, reference)?;
    theorem1_diagnostic_cached(kernel, points, reference, &cache)
}

pub(crate) fn theorem1_diagnostic_cached(
    kernel: &KernelSpec,
    points: &[Vec<f64>],
    reference: &ReferenceSamples,
    cache: &ReferenceCache,
) -> Result<f64, FwError> {
    let z = reference_z_cached(kernel, points, reference, cache)?;
    let chol = GramCholesky::factor(kernel, points)?;
    let w = chol.solve(&z)?;
    let quad: f64 = z.iter().zip(&w).map(|(a, b)| a * b).sum();
    Ok(cache.mean_kernel() - quad)
}

// ---------------------------------------------------------------------------
// The outer loop
// ---------------------------------------------------------------------------

/// How the first particle is produced.
#[derive(Debug, Clone)]
pub enum FwInit {
    /// Approximate MAP from the given start (zeros when `None`).
    Map {
        config: MapConfig,
        start: Option<Vec<f64>>,
    },
    /// Use this point as-is.
    Explicit(Vec<f64>),
}

impl Default for FwInit {
    fn default() -> Self {
        FwInit::Map {
            config: MapConfig::default(),
            start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MmdFwConfig {
    pub n_particles: usize,
    pub step_rule: StepRule,
    pub lmo: LmoConfig,
    pub init: FwInit,
    pub seed: u64,
    /// Optional dimension blocks for the synchronous block-coordinate LMO.
    pub blocks: Option<Vec<Vec<usize>>>,
}

impl MmdFwConfig {
    pub fn new(n_particles: usize, step_rule: StepRule, lmo: LmoConfig, seed: u64) -> Self {
        MmdFwConfig {
            n_particles,
            step_rule,
            lmo,
            init: FwInit::default(),
            seed,
            blocks: None,
        }
    }
}

/// A completed run: the final particles and one record per outer iteration.
#[derive(Debug, Clone)]
pub struct FwRun {
    pub particles: WeightedParticles,
    pub records: Vec<RunRecord>,
}

fn first_particle(target: &dyn TargetDensity, init: &FwInit) -> Result<Vec<f64>, FwError> {
    match init {
        FwInit::Explicit(p) => Ok(p.clone()),
        FwInit::Map { config, start } => {
            let start = start.clone().unwrap_or_else(|| vec![0.0; target.dim()]);
            Ok(approx_map(target, &start, config)?)
        }
    }
}

/// Nudge a vertex that coincides with an existing particle so the Gram
/// matrix stays solvable. Deterministic given the run RNG.
fn dedup_vertex<R: Rng>(
    vertex: &mut [f64],
    existing: &[Vec<f64>],
    kernel: &KernelSpec,
    rng: &mut R,
) {
    let coincides = existing.iter().any(|p| {
        p.iter()
            .zip(vertex.iter())
            .all(|(a, b)| (a - b).abs() <= 1e-8)
    });
    if coincides {
        let h = kernel_length_scale(kernel);
        let sd = (1e-6 * h * h).sqrt();
        for v in vertex.iter_mut() {
            *v += sd * Distribution::<f64>::sample(&StandardNormal, rng);
        }
    }
}

fn kernel_length_scale(kernel: &KernelSpec) -> f64 {
    match kernel {
        KernelSpec::Rbf { bandwidth } => *bandwidth,
        KernelSpec::Rff(r) => r.bandwidth,
        KernelSpec::Imq { alpha, .. } | KernelSpec::InvLog { alpha } => alpha.sqrt(),
        KernelSpec::ImqScore { .. } => 1.0,
    }
}

/// Apply the configured step rule for a fresh vertex.
fn apply_step_rule(state: &mut FwState, vertex: Vec<f64>, rule: StepRule) -> Result<(), FwError> {
    match rule {
        StepRule::EmpiricalBq => {
            state.push_particle(vertex)?;
            let (weights, _jitter) = empirical_bq_weights(state.kernel, &state.particles)?;
            state.weights = weights;
        }
        StepRule::Constant => {
            let lambda = 1.0 / (state.particles.len() + 1) as f64;
            blend_in(state, vertex, lambda)?;
        }
        StepRule::LineSearch => {
            let step = step_line_search(state, &vertex, None)?;
            blend_in(state, vertex, step.lambda)?;
        }
    }
    state.iteration = state.particles.len();
    Ok(())
}

fn blend_in(state: &mut FwState, vertex: Vec<f64>, lambda: f64) -> Result<(), FwError> {
    for w in &mut state.weights {
        *w *= 1.0 - lambda;
    }
    state.push_particle(vertex)?;
    state.weights.push(lambda);
    debug_assert!({
        let sum: f64 = state.weights.iter().sum();
        (sum - 1.0).abs() < 1e-12 && state.weights.iter().all(|w| *w >= 0.0)
    });
    Ok(())
}

fn record_iteration(
    state: &mut FwState,
    reference: Option<(&ReferenceSamples, &ReferenceCache)>,
    lmo_objective_final: Option<f64>,
    clock: &Instant,
) -> Result<(), FwError> {
    let (mmd2, residual) = match reference {
        Some((r, cache)) => {
            let particles = state.to_weighted_particles();
            let mmd2 = mmd2_vs_samples_cached(state.kernel, &particles, r, cache)?;
            let residual = theorem1_diagnostic_cached(state.kernel, state.particles(), r, cache)?;
            (Some(mmd2), Some(residual))
        }
        None => (None, None),
    };
    state.diagnostics.push(RunRecord {
        n_particles: state.particles.len(),
        mmd2_vs_reference: mmd2,
        theorem1_residual: residual,
        lmo_objective_final,
        wallclock_ms: clock.elapsed().as_millis() as u64,
    });
    Ok(())
}

fn run_outer_loop<F>(
    target: &dyn TargetDensity,
    kernel: &KernelSpec,
    config: &MmdFwConfig,
    reference: Option<&ReferenceSamples>,
    first: Vec<f64>,
    mut next_vertex: F,
) -> Result<FwRun, FwFailure>
where
    F: FnMut(&FwState, &mut ChaCha20Rng) -> Result<LmoOutcome, FwError>,
{
    let clock = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let cache = reference
        .map(|r| ReferenceCache::new(kernel, r).map_err(FwError::from))
        .transpose()?;
    let reference = reference.zip(cache.as_ref());
    let mut state = FwState::new(target, kernel, config.step_rule, first)?;
    record_iteration(&mut state, reference, None, &clock)?;

    for _ in 2..=config.n_particles {
        let step = (|| -> Result<(), FwError> {
            let outcome = next_vertex(&state, &mut rng)?;
            let mut vertex = outcome.point;
            dedup_vertex(&mut vertex, &state.particles, kernel, &mut rng);
            apply_step_rule(&mut state, vertex, config.step_rule)?;
            record_iteration(&mut state, reference, Some(outcome.surrogate_final), &clock)?;
            Ok(())
        })();
        if let Err(error) = step {
            return Err(FwFailure {
                error,
                partial: Some(FwRun {
                    particles: state.to_weighted_particles(),
                    records: state.diagnostics.clone(),
                }),
            });
        }
    }
    Ok(FwRun {
        particles: state.to_weighted_particles(),
        records: state.diagnostics,
    })
}

/// Greedy MMD minimization: grow a particle set to `n_particles`, one
/// approximate-LMO vertex per outer iteration, weights per the step rule.
/// When a reference sample is supplied, every iteration records the squared
/// MMD against it and the step-size condition residual.
pub fn mmd_fw(
    target: &dyn TargetDensity,
    kernel: &KernelSpec,
    config: &MmdFwConfig,
    reference: Option<&ReferenceSamples>,
) -> Result<FwRun, FwFailure> {
    if config.n_particles == 0 {
        return Err(FwError::InvalidConfig("need at least one particle".into()).into());
    }
    let first = first_particle(target, &config.init)?;
    match &config.blocks {
        None => run_outer_loop(target, kernel, config, reference, first, |state, rng| {
            approx_lmo(state, &config.lmo, rng)
        }),
        Some(blocks) => run_outer_loop(target, kernel, config, reference, first, |state, rng| {
            pbc_lmo(state, blocks, &config.lmo, rng)
        }),
    }
}

// ---------------------------------------------------------------------------
// Cached LMO variant
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CacheMmdFwConfig {
    pub n_particles: usize,
    pub step_rule: StepRule,
    pub lmo: LmoConfig,
    pub seed: u64,
}

/// Frank-Wolfe with a warm-start cache (typically SVGD output). Each outer
/// iteration picks the cached point with the smallest LMO gradient norm,
/// refines it with the inner loop, and removes it from the cache; fresh LMO
/// calls take over once the cache is exhausted. The first particle is the
/// cached point with the smallest score norm, refined by gradient ascent.
pub fn cache_mmd_fw(
    target: &dyn TargetDensity,
    kernel: &KernelSpec,
    cache: &WeightedParticles,
    config: &CacheMmdFwConfig,
    reference: Option<&ReferenceSamples>,
) -> Result<FwRun, FwFailure> {
    if config.n_particles == 0 {
        return Err(FwError::InvalidConfig("need at least one particle".into()).into());
    }
    let mut pool: Vec<Vec<f64>> = cache.points().to_vec();

    // First particle: near-stationary cache entry, polished toward the mode.
    let first = {
        let idx = argmin_by(&pool, |p| {
            let s = target.grad_log_density(p);
            s.iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .ok_or_else(|| FwError::InvalidConfig("empty cache".into()))?;
        let start = pool.remove(idx);
        approx_map(
            target,
            &start,
            &MapConfig {
                iterations: config.lmo.inner_iterations,
                optimizer: config.lmo.optimizer,
            },
        )
        .map_err(FwError::from)?
    };

    let outer = MmdFwConfig {
        n_particles: config.n_particles,
        step_rule: config.step_rule,
        lmo: config.lmo.clone(),
        init: FwInit::Explicit(first.clone()),
        seed: config.seed,
        blocks: None,
    };
    run_outer_loop(target, kernel, &outer, reference, first, |state, rng| {
        if pool.is_empty() {
            return approx_lmo(state, &config.lmo, rng);
        }
        let engine = LmoGradient::new(state);
        let idx = argmin_by(&pool, |p| {
            let g = engine.gradient(p).unwrap_or_else(|_| vec![f64::INFINITY]);
            g.iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .expect("pool checked nonempty");
        let init = pool.remove(idx);
        let mut x = init.clone();
        let mut adam = Adam::new(config.lmo.optimizer, x.len());
        for _ in 0..config.lmo.inner_iterations {
            let grad = engine.gradient(&x)?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(FwError::AllRestartsDiverged);
            }
            adam.step(&mut x, &grad);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(FwError::AllRestartsDiverged);
            }
        }
        let s_init = lmo_surrogate(state, &init)?;
        let s_final = lmo_surrogate(state, &x)?;
        if s_final < s_init {
            Ok(LmoOutcome {
                point: x,
                surrogate_init: s_init,
                surrogate_final: s_final,
                degenerate: false,
            })
        } else {
            Ok(LmoOutcome {
                point: init,
                surrogate_init: s_init,
                surrogate_final: s_init,
                degenerate: true,
            })
        }
    })
}

/// Index of the minimum by the given key, ties broken by the lowest index.
fn argmin_by<T, F: Fn(&T) -> f64>(items: &[T], key: F) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, item) in items.iter().enumerate() {
        let v = key(item);
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

// ---------------------------------------------------------------------------
// Synchronous block-coordinate LMO
// ---------------------------------------------------------------------------

/// Block-coordinate approximate LMO for product kernels. Within one
/// synchronous round every block descends the gradient restricted to its own
/// coordinates while the cross-block kernel factors stay frozen at the values
/// taken at the round's starting point; the blocks' results are combined only
/// after all of them finish, so block order cannot matter.
pub fn pbc_lmo<R: Rng>(
    state: &FwState,
    blocks: &[Vec<usize>],
    config: &LmoConfig,
    rng: &mut R,
) -> Result<LmoOutcome, FwError> {
    if !state.kernel.is_product() {
        return Err(FwError::KernelNotProduct);
    }
    let d = state.dim();
    let mut seen = vec![false; d];
    for block in blocks {
        for &dd in block {
            if dd >= d || seen[dd] {
                return Err(FwError::InvalidBlocks(format!(
                    "dimension {dd} out of range or repeated"
                )));
            }
            seen[dd] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(FwError::InvalidBlocks("some dimension is uncovered".into()));
    }
    if config.restarts == 0 || config.inner_iterations == 0 {
        return Err(FwError::InvalidConfig(
            "need at least one restart and one inner iteration".into(),
        ));
    }

    let n = state.particles.len();
    let mut best: Option<(f64, f64, Vec<f64>, Vec<f64>)> = None;
    for _ in 0..config.restarts {
        let init = sample_init(&config.init, state, rng)?;
        if init.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let mut combined = init.clone();
        let mut finite = true;
        'blocks: for block in blocks {
            let complement: Vec<usize> = (0..d).filter(|dd| !block.contains(dd)).collect();
            // Cross-block coefficients frozen at the round start.
            let mut frozen = Vec::with_capacity(n);
            for xi in &state.particles {
                frozen.push(state.kernel.eval_on_dims(xi, &init, &complement)?);
            }
            let mut xb: Vec<f64> = block.iter().map(|&dd| init[dd]).collect();
            let mut adam = Adam::new(config.optimizer, xb.len());
            let mut full = init.clone();
            for _ in 0..config.inner_iterations {
                for (bi, &dd) in block.iter().enumerate() {
                    full[dd] = xb[bi];
                }
                let mut grad = vec![0.0; xb.len()];
                for i in 0..n {
                    let xi = &state.particles[i];
                    let kb = state.kernel.eval_on_dims(&full, xi, block)?;
                    let w = state.weights[i];
                    let s = &state.scores[i];
                    for (bi, &dd) in block.iter().enumerate() {
                        let partial = state.kernel.block_partial(&full, xi, dd, kb);
                        grad[bi] += w * (frozen[i] * (partial - kb * s[dd]));
                    }
                }
                let inv_n = 1.0 / n as f64;
                for g in &mut grad {
                    *g *= inv_n;
                }
                if grad.iter().any(|g| !g.is_finite()) {
                    finite = false;
                    break 'blocks;
                }
                adam.step(&mut xb, &grad);
                if xb.iter().any(|v| !v.is_finite()) {
                    finite = false;
                    break 'blocks;
                }
            }
            for (bi, &dd) in block.iter().enumerate() {
                combined[dd] = xb[bi];
            }
        }
        if !finite {
            continue;
        }
        let s_init = lmo_surrogate(state, &init)?;
        let s_final = lmo_surrogate(state, &combined)?;
        if best.as_ref().is_none_or(|(b, ..)| s_final < *b) {
            best = Some((s_final, s_init, combined, init));
        }
    }
    let (s_final, s_init, x, init) = best.ok_or(FwError::AllRestartsDiverged)?;
    if s_final < s_init {
        Ok(LmoOutcome {
            point: x,
            surrogate_init: s_init,
            surrogate_final: s_final,
            degenerate: false,
        })
    } else {
        Ok(LmoOutcome {
            point: init,
            surrogate_init: s_init,
            surrogate_final: s_init,
            degenerate: true,
        })
    }
}
