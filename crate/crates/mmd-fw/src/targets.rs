//! Target log-densities `p(x) ∝ L(D|x)·p₀(x)` with gradients.
//!
//! Every target is smooth on all of `R^dim`: constrained hyperparameters
//! (precisions) live in log space and the Jacobian of the transform is folded
//! into the log-density, so gradient-based samplers and optimizers never see
//! a boundary.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use thiserror::Error;

use crate::linalg::{backward_solve_transposed, cholesky_lower, forward_solve};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite gradient encountered at {0:?}")]
    NonFiniteGradient(Vec<f64>),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Minibatch selector for stochastic gradients. The seed fixes a permutation
/// of the data, `index` picks one contiguous chunk of it, so disjoint batches
/// with the same seed tile the whole dataset.
#[derive(Debug, Clone, Copy)]
pub struct Minibatch {
    pub seed: u64,
    pub index: usize,
    pub size: usize,
}

/// An unnormalized log-density with gradient.
pub trait TargetDensity: Send + Sync {
    fn dim(&self) -> usize;

    /// Log-density up to an additive constant.
    fn log_density_unnorm(&self, x: &[f64]) -> f64;

    /// Gradient of [`Self::log_density_unnorm`]. The unknown normalizing
    /// constant never affects it.
    fn grad_log_density(&self, x: &[f64]) -> Vec<f64>;

    /// Minibatch estimate of the gradient, unbiased for dataset-backed
    /// targets. Targets without a dataset return `None`.
    fn stochastic_grad(&self, _x: &[f64], _batch: &Minibatch) -> Option<Vec<f64>> {
        None
    }

    /// Draw a starting point for optimizers and samplers. Defaults to a
    /// standard normal; Bayesian models override this with a prior draw.
    fn init_sample(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        (0..self.dim()).map(|_| standard_normal(rng)).collect()
    }
}

fn standard_normal(rng: &mut dyn rand::RngCore) -> f64 {
    StandardNormal.sample(&mut ScoreRng(rng))
}

// rand's distributions want a sized Rng; wrap the dyn reference.
struct ScoreRng<'a>(&'a mut dyn rand::RngCore);

impl rand::RngCore for ScoreRng<'_> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
}

// ---------------------------------------------------------------------------
// Gaussians and mixtures
// ---------------------------------------------------------------------------

/// Isotropic Gaussian `N(mean, variance·I)`.
#[derive(Debug, Clone)]
pub struct IsotropicGaussian {
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl IsotropicGaussian {
    pub fn new(mean: Vec<f64>, variance: f64) -> Result<Self, TargetError> {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(TargetError::InvalidParameter(format!(
                "variance must be positive, got {variance}"
            )));
        }
        Ok(IsotropicGaussian { mean, variance })
    }

    pub fn standard(dim: usize) -> Self {
        IsotropicGaussian {
            mean: vec![0.0; dim],
            variance: 1.0,
        }
    }

    pub fn sample(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        let sd = self.variance.sqrt();
        self.mean
            .iter()
            .map(|m| m + sd * standard_normal(rng))
            .collect()
    }
}

impl TargetDensity for IsotropicGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density_unnorm(&self, x: &[f64]) -> f64 {
        let mut sq = 0.0;
        for (xi, mi) in x.iter().zip(&self.mean) {
            let d = xi - mi;
            sq += d * d;
        }
        -0.5 * sq / self.variance
    }

    fn grad_log_density(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .map(|(xi, mi)| -(xi - mi) / self.variance)
            .collect()
    }

    fn init_sample(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        self.sample(rng)
    }
}

/// One mixture component with its Cholesky factor precomputed.
#[derive(Debug, Clone)]
struct GmmComponent {
    log_weight: f64,
    weight: f64,
    mean: Vec<f64>,
    /// Lower Cholesky factor of the covariance, row-major d×d.
    chol: Vec<f64>,
    log_det: f64,
}

/// Gaussian mixture with full SPD covariances.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    components: Vec<GmmComponent>,
    dim: usize,
}

impl GaussianMixture {
    /// `components` are `(weight, mean, covariance)` with row-major d×d
    /// covariances. Weights must be positive; they are normalized to sum to 1.
    pub fn new(components: Vec<(f64, Vec<f64>, Vec<f64>)>) -> Result<Self, TargetError> {
        if components.is_empty() {
            return Err(TargetError::InvalidParameter(
                "mixture needs at least one component".into(),
            ));
        }
        let dim = components[0].1.len();
        let total: f64 = components.iter().map(|(w, _, _)| w).sum();
        if !(total > 0.0) {
            return Err(TargetError::InvalidParameter(
                "mixture weights must be positive".into(),
            ));
        }
        let mut comps = Vec::with_capacity(components.len());
        for (w, mean, cov) in components {
            if mean.len() != dim || cov.len() != dim * dim {
                return Err(TargetError::DimensionMismatch {
                    expected: dim,
                    found: mean.len(),
                });
            }
            if !(w > 0.0) {
                return Err(TargetError::InvalidParameter(
                    "component weight must be positive".into(),
                ));
            }
            let chol = cholesky_lower(&cov, dim).ok_or_else(|| {
                TargetError::InvalidParameter("component covariance is not SPD".into())
            })?;
            let log_det = (0..dim).map(|i| 2.0 * chol[i * dim + i].ln()).sum();
            comps.push(GmmComponent {
                log_weight: (w / total).ln(),
                weight: w / total,
                mean,
                chol,
                log_det,
            });
        }
        Ok(GaussianMixture {
            components: comps,
            dim,
        })
    }

    /// Equal-weight mixture with `n_ring` components on a circle of the given
    /// radius plus one at the origin, each with covariance `variance·I`.
    /// Only defined in two dimensions.
    pub fn ring_with_center(n_ring: usize, radius: f64, variance: f64) -> Self {
        let mut comps = Vec::with_capacity(n_ring + 1);
        let cov = vec![variance, 0.0, 0.0, variance];
        for k in 0..n_ring {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / n_ring as f64;
            comps.push((1.0, vec![radius * angle.cos(), radius * angle.sin()], cov.clone()));
        }
        comps.push((1.0, vec![0.0, 0.0], cov));
        GaussianMixture::new(comps).expect("ring mixture is well formed")
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn component_means(&self) -> Vec<&[f64]> {
        self.components.iter().map(|c| c.mean.as_slice()).collect()
    }

    pub fn sample(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        let mut rng = ScoreRng(rng);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.components.len() - 1;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                chosen = k;
                break;
            }
        }
        let c = &self.components[chosen];
        let z: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut x = c.mean.clone();
        for i in 0..self.dim {
            for j in 0..=i {
                x[i] += c.chol[i * self.dim + j] * z[j];
            }
        }
        x
    }

    /// Per-component `log w_k + log N(x; μ_k, Σ_k)`.
    fn component_log_terms(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        self.components
            .iter()
            .map(|c| {
                let diff: Vec<f64> = x.iter().zip(&c.mean).map(|(a, b)| a - b).collect();
                let u = forward_solve(&c.chol, d, &diff);
                let quad: f64 = u.iter().map(|v| v * v).sum();
                c.log_weight - 0.5 * quad - 0.5 * c.log_det - d as f64 * half_log_2pi
            })
            .collect()
    }
}

impl TargetDensity for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_unnorm(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.component_log_terms(x))
    }

    fn grad_log_density(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let terms = self.component_log_terms(x);
        let lse = log_sum_exp(&terms);
        let mut grad = vec![0.0; d];
        for (c, term) in self.components.iter().zip(&terms) {
            let resp = (term - lse).exp();
            if resp == 0.0 {
                continue;
            }
            let diff: Vec<f64> = x.iter().zip(&c.mean).map(|(a, b)| a - b).collect();
            // Σ⁻¹(μ − x) via two triangular solves.
            let u = forward_solve(&c.chol, d, &diff);
            let v = backward_solve_transposed(&c.chol, d, &u);
            for i in 0..d {
                grad[i] -= resp * v[i];
            }
        }
        grad
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = terms.iter().map(|t| (t - m).exp()).sum();
    m + s.ln()
}

// ---------------------------------------------------------------------------
// Bayesian logistic regression
// ---------------------------------------------------------------------------

/// Bayesian logistic regression with weights `w ~ N(0, α⁻¹I)` and
/// `α ~ Gamma(1, rate)`. The parameter vector is `[w_1..w_d, log α]`, so the
/// posterior dimension is `d + 1`.
#[derive(Debug, Clone)]
pub struct BayesianLogisticRegression {
    features: Vec<Vec<f64>>,
    labels: Vec<u8>,
    prior_rate: f64,
}

impl BayesianLogisticRegression {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self, TargetError> {
        Self::with_prior_rate(features, labels, 0.01)
    }

    pub fn with_prior_rate(
        features: Vec<Vec<f64>>,
        labels: Vec<u8>,
        prior_rate: f64,
    ) -> Result<Self, TargetError> {
        if features.is_empty() {
            return Err(TargetError::InvalidParameter("empty dataset".into()));
        }
        let d = features[0].len();
        if features.iter().any(|row| row.len() != d) {
            return Err(TargetError::InvalidParameter(
                "ragged feature matrix".into(),
            ));
        }
        if features.len() != labels.len() {
            return Err(TargetError::DimensionMismatch {
                expected: features.len(),
                found: labels.len(),
            });
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(TargetError::InvalidParameter(
                "labels must be 0 or 1".into(),
            ));
        }
        Ok(BayesianLogisticRegression {
            features,
            labels,
            prior_rate,
        })
    }

    pub fn n_data(&self) -> usize {
        self.features.len()
    }

    pub fn n_features(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// `P(y = 1 | x, θ)` for one parameter vector.
    pub fn predict_prob(&self, theta: &[f64], x: &[f64]) -> f64 {
        let logit: f64 = theta[..x.len()].iter().zip(x).map(|(w, v)| w * v).sum();
        sigmoid(logit)
    }

    fn likelihood_grad_terms(&self, w: &[f64], rows: &[usize], grad_w: &mut [f64]) {
        for &i in rows {
            let x = &self.features[i];
            let logit: f64 = w.iter().zip(x).map(|(wj, xj)| wj * xj).sum();
            let resid = self.labels[i] as f64 - sigmoid(logit);
            for (g, xj) in grad_w.iter_mut().zip(x) {
                *g += resid * xj;
            }
        }
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl TargetDensity for BayesianLogisticRegression {
    fn dim(&self) -> usize {
        self.n_features() + 1
    }

    fn log_density_unnorm(&self, x: &[f64]) -> f64 {
        let d = self.n_features();
        let (w, s) = (&x[..d], x[d]);
        let alpha = s.exp();
        let mut ll = 0.0;
        for (row, &y) in self.features.iter().zip(&self.labels) {
            let logit: f64 = w.iter().zip(row).map(|(wj, xj)| wj * xj).sum();
            // y·ln σ + (1−y)·ln(1−σ), written with softplus for stability.
            ll += if y == 1 {
                -softplus(-logit)
            } else {
                -softplus(logit)
            };
        }
        let w_sq: f64 = w.iter().map(|v| v * v).sum();
        // Gaussian prior on w, Gamma(1, rate) on α, plus the log-space Jacobian.
        ll + 0.5 * d as f64 * s - 0.5 * alpha * w_sq - self.prior_rate * alpha + s
    }

    fn grad_log_density(&self, x: &[f64]) -> Vec<f64> {
        let d = self.n_features();
        let (w, s) = (&x[..d], x[d]);
        let alpha = s.exp();
        let mut grad = vec![0.0; d + 1];
        let rows: Vec<usize> = (0..self.n_data()).collect();
        self.likelihood_grad_terms(w, &rows, &mut grad[..d]);
        let w_sq: f64 = w.iter().map(|v| v * v).sum();
        for j in 0..d {
            grad[j] -= alpha * w[j];
        }
        grad[d] = 0.5 * d as f64 - 0.5 * alpha * w_sq - self.prior_rate * alpha + 1.0;
        grad
    }

    fn stochastic_grad(&self, x: &[f64], batch: &Minibatch) -> Option<Vec<f64>> {
        let n = self.n_data();
        if batch.size == 0 || batch.size > n {
            return None;
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(batch.seed);
        // Fisher-Yates, deterministic per seed.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let start = (batch.index * batch.size) % n;
        let end = (start + batch.size).min(n);
        let rows = &order[start..end];
        if rows.is_empty() {
            return None;
        }

        let d = self.n_features();
        let (w, s) = (&x[..d], x[d]);
        let alpha = s.exp();
        let mut grad = vec![0.0; d + 1];
        self.likelihood_grad_terms(w, rows, &mut grad[..d]);
        let scale = n as f64 / rows.len() as f64;
        let w_sq: f64 = w.iter().map(|v| v * v).sum();
        for j in 0..d {
            grad[j] = scale * grad[j] - alpha * w[j];
        }
        grad[d] = 0.5 * d as f64 - 0.5 * alpha * w_sq - self.prior_rate * alpha + 1.0;
        Some(grad)
    }

    fn init_sample(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        let mut rng = ScoreRng(rng);
        let gamma = Gamma::new(1.0, 1.0 / self.prior_rate).expect("valid gamma");
        let alpha: f64 = gamma.sample(&mut rng);
        let sd = (1.0 / alpha).sqrt();
        let mut x: Vec<f64> = (0..self.n_features())
            .map(|_| sd * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        x.push(alpha.ln());
        x
    }
}

/// A synthetic logistic-regression dataset together with the weights that
/// generated it.
#[derive(Debug, Clone)]
pub struct SyntheticLogreg {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub gold_weights: Vec<f64>,
    pub gold_alpha: f64,
}

impl SyntheticLogreg {
    pub fn target(&self) -> BayesianLogisticRegression {
        BayesianLogisticRegression::new(self.features.clone(), self.labels.clone())
            .expect("synthetic dataset is well formed")
    }
}

/// Draw weights from the conditional prior `p(w | α = 1) = N(0, I)`, features
/// from `N(0, I)` and labels from the logistic likelihood. Conditioning the
/// hierarchy at unit precision keeps the dataset learnably separable; the
/// marginal prior concentrates on near-zero weights and produces coin-flip
/// labels. Deterministic per seed.
pub fn make_synthetic_logreg(n: usize, d: usize, seed: u64) -> SyntheticLogreg {
    assert!(n >= 10 && d >= 1, "need n >= 10 and d >= 1");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let gold_alpha: f64 = 1.0;
    let sd = (1.0 / gold_alpha).sqrt();
    let gold_weights: Vec<f64> = (0..d)
        .map(|_| sd * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d)
            .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        let logit: f64 = gold_weights.iter().zip(&x).map(|(w, v)| w * v).sum();
        let y = if rng.random::<f64>() < sigmoid(logit) { 1 } else { 0 };
        features.push(x);
        labels.push(y);
    }
    SyntheticLogreg {
        features,
        labels,
        gold_weights,
        gold_alpha,
    }
}

// ---------------------------------------------------------------------------
// Bayesian neural-network regression
// ---------------------------------------------------------------------------

/// One-hidden-layer ReLU regression network with Gaussian weight priors and
/// Gamma(1, 0.1) priors on the weight and noise precisions (log-space).
///
/// Parameter layout: `[W1 (h×d row-major), b1 (h), w2 (h), b2, log λ, log γ]`.
#[derive(Debug, Clone)]
pub struct BayesianNnRegression {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    hidden: usize,
    prior_rate: f64,
}

impl BayesianNnRegression {
    pub fn new(
        inputs: Vec<Vec<f64>>,
        outputs: Vec<f64>,
        hidden: usize,
    ) -> Result<Self, TargetError> {
        if inputs.is_empty() || inputs.len() != outputs.len() {
            return Err(TargetError::InvalidParameter(
                "inputs and outputs must be nonempty and of equal length".into(),
            ));
        }
        if hidden == 0 {
            return Err(TargetError::InvalidParameter(
                "need at least one hidden unit".into(),
            ));
        }
        Ok(BayesianNnRegression {
            inputs,
            outputs,
            hidden,
            prior_rate: 0.1,
        })
    }

    pub fn n_weights(&self) -> usize {
        let d = self.inputs[0].len();
        self.hidden * d + self.hidden + self.hidden + 1
    }

    pub fn n_data(&self) -> usize {
        self.inputs.len()
    }

    fn unpack<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], f64, f64, f64) {
        let d = self.inputs[0].len();
        let h = self.hidden;
        let w1 = &theta[..h * d];
        let b1 = &theta[h * d..h * d + h];
        let w2 = &theta[h * d + h..h * d + 2 * h];
        let b2 = theta[h * d + 2 * h];
        let log_lambda = theta[h * d + 2 * h + 1];
        let log_gamma = theta[h * d + 2 * h + 2];
        (w1, b1, w2, b2, log_lambda, log_gamma)
    }

    /// Network output for one input.
    pub fn forward(&self, theta: &[f64], x: &[f64]) -> f64 {
        let d = x.len();
        let (w1, b1, w2, b2, _, _) = self.unpack(theta);
        let mut out = b2;
        for j in 0..self.hidden {
            let mut pre = b1[j];
            for k in 0..d {
                pre += w1[j * d + k] * x[k];
            }
            if pre > 0.0 {
                out += w2[j] * pre;
            }
        }
        out
    }
}

impl TargetDensity for BayesianNnRegression {
    fn dim(&self) -> usize {
        self.n_weights() + 2
    }

    fn log_density_unnorm(&self, theta: &[f64]) -> f64 {
        let (_, _, _, _, log_lambda, log_gamma) = self.unpack(theta);
        let lambda = log_lambda.exp();
        let gamma = log_gamma.exp();
        let p = self.n_weights() as f64;
        let n = self.n_data() as f64;

        let mut sq_resid = 0.0;
        for (x, y) in self.inputs.iter().zip(&self.outputs) {
            let r = y - self.forward(theta, x);
            sq_resid += r * r;
        }
        let w_sq: f64 = theta[..self.n_weights()].iter().map(|v| v * v).sum();

        0.5 * n * log_gamma - 0.5 * gamma * sq_resid + 0.5 * p * log_lambda
            - 0.5 * lambda * w_sq
            - self.prior_rate * lambda
            + log_lambda
            - self.prior_rate * gamma
            + log_gamma
    }

    fn grad_log_density(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.inputs[0].len();
        let h = self.hidden;
        let (w1, b1, w2, _, log_lambda, log_gamma) = self.unpack(theta);
        let lambda = log_lambda.exp();
        let gamma = log_gamma.exp();
        let p = self.n_weights();

        let mut grad = vec![0.0; self.dim()];
        let mut sq_resid = 0.0;
        for (x, y) in self.inputs.iter().zip(&self.outputs) {
            // forward with hidden activations kept for the backward pass
            let mut act = vec![0.0; h];
            let mut on = vec![false; h];
            let mut out = theta[h * d + 2 * h];
            for j in 0..h {
                let mut pre = b1[j];
                for k in 0..d {
                    pre += w1[j * d + k] * x[k];
                }
                if pre > 0.0 {
                    act[j] = pre;
                    on[j] = true;
                    out += w2[j] * pre;
                }
            }
            let r = y - out;
            sq_resid += r * r;
            let scale = gamma * r;
            for j in 0..h {
                if on[j] {
                    for k in 0..d {
                        grad[j * d + k] += scale * w2[j] * x[k];
                    }
                    grad[h * d + j] += scale * w2[j];
                    grad[h * d + h + j] += scale * act[j];
                }
            }
            grad[h * d + 2 * h] += scale;
        }

        let mut w_sq = 0.0;
        for i in 0..p {
            w_sq += theta[i] * theta[i];
            grad[i] -= lambda * theta[i];
        }
        grad[p] = 0.5 * p as f64 - 0.5 * lambda * w_sq - self.prior_rate * lambda + 1.0;
        grad[p + 1] =
            0.5 * self.n_data() as f64 - 0.5 * gamma * sq_resid - self.prior_rate * gamma + 1.0;
        grad
    }
}

/// Synthetic 1-D regression data `y = sin(πx) + 0.1ε`, deterministic per seed.
pub fn make_synthetic_regression(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random_range(-1.0..1.0);
        let noise: f64 = StandardNormal.sample(&mut rng);
        xs.push(vec![x]);
        ys.push((std::f64::consts::PI * x).sin() + 0.1 * noise);
    }
    (xs, ys)
}

// ---------------------------------------------------------------------------
// Approximate MAP search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MapConfig {
    pub iterations: usize,
    pub optimizer: AdamConfig,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            iterations: 2000,
            optimizer: AdamConfig::default(),
        }
    }
}

/// Gradient ascent on the log-density, returning the best point seen. The
/// result never has lower log-density than the initialization.
pub fn approx_map(
    target: &dyn TargetDensity,
    init: &[f64],
    config: &MapConfig,
) -> Result<Vec<f64>, TargetError> {
    if init.len() != target.dim() {
        return Err(TargetError::DimensionMismatch {
            expected: target.dim(),
            found: init.len(),
        });
    }
    let mut x = init.to_vec();
    let mut best = x.clone();
    let mut best_val = target.log_density_unnorm(&x);
    let mut adam = Adam::new(config.optimizer, x.len());
    let mut neg_grad = vec![0.0; x.len()];
    for _ in 0..config.iterations {
        let grad = target.grad_log_density(&x);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(TargetError::NonFiniteGradient(x));
        }
        for (ng, g) in neg_grad.iter_mut().zip(&grad) {
            *ng = -g;
        }
        adam.step(&mut x, &neg_grad);
        let val = target.log_density_unnorm(&x);
        if val > best_val {
            best_val = val;
            best.copy_from_slice(&x);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{assert_grad_matches_fd, central_diff};

    #[test]
    fn gaussian_score_is_exact() {
        let t = IsotropicGaussian::standard(2);
        let g = t.grad_log_density(&[1.0, 0.0]);
        assert_eq!(g, vec![-1.0, 0.0]);
    }

    #[test]
    fn gmm_single_component_score() {
        let gmm = GaussianMixture::new(vec![(
            1.0,
            vec![0.0, 0.0],
            vec![1.0, 0.0, 0.0, 1.0],
        )])
        .unwrap();
        let g = gmm.grad_log_density(&[1.0, 0.0]);
        assert!((g[0] + 1.0).abs() < 1e-12);
        assert!(g[1].abs() < 1e-12);
    }

    #[test]
    fn gmm_symmetric_midpoint_has_zero_score() {
        let gmm = GaussianMixture::new(vec![
            (0.5, vec![-1.0], vec![0.5]),
            (0.5, vec![1.0], vec![0.5]),
        ])
        .unwrap();
        let g = gmm.grad_log_density(&[0.0]);
        assert!(g[0].abs() < 1e-12, "score at midpoint = {}", g[0]);
    }

    #[test]
    fn gmm_three_component_grad_matches_fd() {
        let gmm = GaussianMixture::new(vec![
            (0.2, vec![-1.0], vec![0.3]),
            (0.5, vec![0.5], vec![0.8]),
            (0.3, vec![2.0], vec![0.5]),
        ])
        .unwrap();
        let x = [0.7];
        let g = gmm.grad_log_density(&x);
        let fd = central_diff(|p| gmm.log_density_unnorm(p), &x, 1e-6);
        let rel = (g[0] - fd[0]).abs() / fd[0].abs().max(1e-12);
        assert!(rel < 1e-6, "grad {} vs fd {}", g[0], fd[0]);
    }

    #[test]
    fn gmm_log_density_invariant_under_component_permutation() {
        let comps = vec![
            (0.2, vec![-1.0, 0.0], vec![0.3, 0.0, 0.0, 0.4]),
            (0.5, vec![0.5, 1.0], vec![0.8, 0.1, 0.1, 0.6]),
            (0.3, vec![2.0, -1.0], vec![0.5, 0.0, 0.0, 0.5]),
        ];
        let mut permuted = comps.clone();
        permuted.rotate_left(1);
        let a = GaussianMixture::new(comps).unwrap();
        let b = GaussianMixture::new(permuted).unwrap();
        for x in [[0.3, -0.2], [1.5, 0.8], [-2.0, 0.1]] {
            assert!((a.log_density_unnorm(&x) - b.log_density_unnorm(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn target_scores_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let gmm = GaussianMixture::ring_with_center(4, 1.5, 0.5);
        let data = make_synthetic_logreg(40, 3, 5);
        let logreg = data.target();
        for _ in 0..50 {
            let x2: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert_grad_matches_fd(&gmm, &x2, 1e-5, 1e-5);
            let x4: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
            assert_grad_matches_fd(&logreg, &x4, 1e-5, 1e-5);
        }
    }

    #[test]
    fn bnn_grad_matches_fd_away_from_relu_kinks() {
        let (xs, ys) = make_synthetic_regression(30, 3);
        let bnn = BayesianNnRegression::new(xs, ys, 4).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut checked = 0;
        'outer: while checked < 20 {
            let theta: Vec<f64> = (0..bnn.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            // Skip draws with a preactivation near zero: the ReLU kink breaks
            // the central-difference comparison there.
            for x in &bnn.inputs {
                let d = x.len();
                for j in 0..bnn.hidden {
                    let mut pre = theta[bnn.hidden * d + j];
                    for k in 0..d {
                        pre += theta[j * d + k] * x[k];
                    }
                    if pre.abs() < 1e-3 {
                        continue 'outer;
                    }
                }
            }
            assert_grad_matches_fd(&bnn, &theta, 1e-6, 1e-5);
            checked += 1;
        }
    }

    #[test]
    fn logreg_minibatch_gradients_average_to_full_gradient() {
        let data = make_synthetic_logreg(120, 2, 7);
        let target = data.target();
        let x = vec![0.3, -0.2, 0.1];
        let full = target.grad_log_density(&x);
        let batch_size = 30;
        let n_batches = 120 / batch_size;
        let mut avg = vec![0.0; x.len()];
        for index in 0..n_batches {
            let g = target
                .stochastic_grad(
                    &x,
                    &Minibatch {
                        seed: 99,
                        index,
                        size: batch_size,
                    },
                )
                .unwrap();
            for (a, gi) in avg.iter_mut().zip(&g) {
                *a += gi / n_batches as f64;
            }
        }
        // Likelihood parts tile the dataset exactly; prior parts are identical.
        for (a, f) in avg.iter().zip(&full) {
            assert!((a - f).abs() < 1e-9, "avg {a} vs full {f}");
        }
    }

    #[test]
    fn synthetic_logreg_is_deterministic_and_learnable() {
        let a = make_synthetic_logreg(200, 2, 42);
        let b = make_synthetic_logreg(200, 2, 42);
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        assert!(a.labels.iter().any(|&y| y == 0));
        assert!(a.labels.iter().any(|&y| y == 1));

        // Gold weights predict their own labels better than chance.
        let target = a.target();
        let mut theta = a.gold_weights.clone();
        theta.push(a.gold_alpha.ln());
        let correct = a
            .features
            .iter()
            .zip(&a.labels)
            .filter(|(x, &y)| (target.predict_prob(&theta, x) > 0.5) == (y == 1))
            .count();
        assert!(
            correct as f64 / 200.0 > 0.5,
            "gold accuracy {}",
            correct as f64 / 200.0
        );
    }

    #[test]
    fn approx_map_finds_gaussian_mode() {
        let t = IsotropicGaussian::standard(1);
        // An Adam step moves at most ~lr, so covering the distance from 3.0
        // needs iterations * lr comfortably above 3.
        let cfg = MapConfig {
            iterations: 2000,
            optimizer: AdamConfig::with_learning_rate(0.005),
        };
        let m = approx_map(&t, &[3.0], &cfg).unwrap();
        assert!(m[0].abs() < 0.05, "map = {}", m[0]);
    }

    #[test]
    fn approx_map_keeps_stationary_init() {
        let t = IsotropicGaussian::standard(2);
        let m = approx_map(&t, &[0.0, 0.0], &MapConfig::default()).unwrap();
        assert!(m[0].abs() < 1e-6 && m[1].abs() < 1e-6);
    }

    #[test]
    fn approx_map_stays_in_init_basin() {
        let gmm = GaussianMixture::new(vec![
            (0.5, vec![-4.0], vec![0.25]),
            (0.5, vec![4.0], vec![0.25]),
        ])
        .unwrap();
        let m = approx_map(&gmm, &[-3.0], &MapConfig::default()).unwrap();
        assert!((m[0] + 4.0).abs() < 0.1, "map = {}", m[0]);
    }

    #[test]
    fn approx_map_never_decreases_log_density() {
        let gmm = GaussianMixture::ring_with_center(4, 1.0, 0.2);
        let init = [0.7, 0.7];
        let cfg = MapConfig {
            iterations: 50,
            optimizer: AdamConfig::with_learning_rate(0.05),
        };
        let m = approx_map(&gmm, &init, &cfg).unwrap();
        assert!(gmm.log_density_unnorm(&m) >= gmm.log_density_unnorm(&init));
    }
}
