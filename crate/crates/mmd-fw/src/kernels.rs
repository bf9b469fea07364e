//! Kernel functions, their gradients, Gram-matrix algebra and bandwidth
//! selection.
//!
//! All kernels are symmetric. `grad_x` differentiates with respect to the
//! first argument; gradients with respect to the second argument follow from
//! symmetry as `grad_x(y, x)`.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::{cholesky_lower, cholesky_solve};
use crate::targets::TargetDensity;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate point set: all pairwise distances are zero")]
    DegeneratePoints,
    #[error("Gram solve failed after jitter escalation up to {max_jitter:e}")]
    GramSolveFailed { max_jitter: f64 },
    #[error("operation unsupported for this kernel: {0}")]
    Unsupported(&'static str),
}

/// Frozen random Fourier expansion of an RBF kernel: `D` cosine features with
/// frequencies drawn once from the RBF spectral measure. Features are scaled
/// by `sqrt(2/D)` so the expectation of `z(x)·z(y)` equals the exact kernel.
pub struct RffFeatures {
    pub bandwidth: f64,
    pub num_features: usize,
    pub seed: u64,
    pub dim: usize,
    /// `num_features × dim`, row-major.
    freqs: Vec<f64>,
    phases: Vec<f64>,
    scale: f64,
}

impl RffFeatures {
    fn new(bandwidth: f64, num_features: usize, seed: u64, dim: usize) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut freqs = Vec::with_capacity(num_features * dim);
        for _ in 0..num_features * dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            freqs.push(z / bandwidth);
        }
        let phases = (0..num_features)
            .map(|_| rng.random_range(0.0..2.0 * std::f64::consts::PI))
            .collect();
        RffFeatures {
            bandwidth,
            num_features,
            seed,
            dim,
            freqs,
            phases,
            scale: (2.0 / num_features as f64).sqrt(),
        }
    }

    /// The cosine feature map `z(x)`.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..self.num_features)
            .map(|j| {
                let mut arg = self.phases[j];
                for k in 0..d {
                    arg += self.freqs[j * d + k] * x[k];
                }
                self.scale * arg.cos()
            })
            .collect()
    }

    /// Scaled cosine and sine features in one pass; the sine half shows up in
    /// every derivative of the feature kernel.
    pub fn cos_sin_features(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let mut cos = Vec::with_capacity(self.num_features);
        let mut sin = Vec::with_capacity(self.num_features);
        for j in 0..self.num_features {
            let mut arg = self.phases[j];
            for k in 0..d {
                arg += self.freqs[j * d + k] * x[k];
            }
            let (s, c) = arg.sin_cos();
            cos.push(self.scale * c);
            sin.push(self.scale * s);
        }
        (cos, sin)
    }

    /// Frequency of feature `j` along coordinate `d`.
    pub(crate) fn freq(&self, j: usize, d: usize) -> f64 {
        self.freqs[j * self.dim + d]
    }

    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for j in 0..self.num_features {
            let mut ax = self.phases[j];
            let mut ay = self.phases[j];
            for k in 0..d {
                ax += self.freqs[j * d + k] * x[k];
                ay += self.freqs[j * d + k] * y[k];
            }
            acc += (self.scale * ax.cos()) * (self.scale * ay.cos());
        }
        acc
    }

    fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut grad = vec![0.0; d];
        for j in 0..self.num_features {
            let mut ax = self.phases[j];
            let mut ay = self.phases[j];
            for k in 0..d {
                ax += self.freqs[j * d + k] * x[k];
                ay += self.freqs[j * d + k] * y[k];
            }
            let coef = -self.scale * ax.sin() * self.scale * ay.cos();
            for k in 0..d {
                grad[k] += coef * self.freqs[j * d + k];
            }
        }
        grad
    }

    fn grad_xy_trace(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for j in 0..self.num_features {
            let mut ax = self.phases[j];
            let mut ay = self.phases[j];
            let mut omega_sq = 0.0;
            for k in 0..d {
                ax += self.freqs[j * d + k] * x[k];
                ay += self.freqs[j * d + k] * y[k];
                omega_sq += self.freqs[j * d + k] * self.freqs[j * d + k];
            }
            acc += self.scale * ax.sin() * self.scale * ay.sin() * omega_sq;
        }
        acc
    }
}

impl std::fmt::Debug for RffFeatures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RffFeatures")
            .field("bandwidth", &self.bandwidth)
            .field("num_features", &self.num_features)
            .field("seed", &self.seed)
            .field("dim", &self.dim)
            .finish()
    }
}

/// Tagged kernel description. Owns the kernel value and its gradient.
#[derive(Clone)]
pub enum KernelSpec {
    /// `exp(-|x-y|² / (2h²))`
    Rbf { bandwidth: f64 },
    /// `(alpha + |x-y|²)^beta`
    Imq { alpha: f64, beta: f64 },
    /// `(alpha + ln(1 + |x-y|²))⁻¹`
    InvLog { alpha: f64 },
    /// `(alpha + |∇log p(x) - ∇log p(y)|²)^beta`, bound to a target at
    /// construction time.
    ImqScore {
        alpha: f64,
        beta: f64,
        target: Arc<dyn TargetDensity>,
    },
    /// Finite-dimensional random Fourier approximation of an RBF kernel.
    Rff(Arc<RffFeatures>),
}

impl std::fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelSpec::Rbf { bandwidth } => write!(f, "Rbf {{ bandwidth: {bandwidth} }}"),
            KernelSpec::Imq { alpha, beta } => write!(f, "Imq {{ alpha: {alpha}, beta: {beta} }}"),
            KernelSpec::InvLog { alpha } => write!(f, "InvLog {{ alpha: {alpha} }}"),
            KernelSpec::ImqScore { alpha, beta, .. } => {
                write!(f, "ImqScore {{ alpha: {alpha}, beta: {beta} }}")
            }
            KernelSpec::Rff(r) => write!(f, "Rff({r:?})"),
        }
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), KernelError> {
    if x.len() != y.len() {
        return Err(KernelError::DimensionMismatch(x.len(), y.len()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(KernelError::NonFiniteInput);
    }
    Ok(())
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for (a, b) in x.iter().zip(y) {
        let d = a - b;
        s += d * d;
    }
    s
}

// Step used by the Hessian-vector products inside the score kernel gradient.
const SCORE_HVP_STEP: f64 = 1e-6;

impl KernelSpec {
    pub fn rbf(bandwidth: f64) -> Result<Self, KernelError> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(KernelError::InvalidParameter(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(KernelSpec::Rbf { bandwidth })
    }

    pub fn imq(alpha: f64, beta: f64) -> Result<Self, KernelError> {
        if !(alpha > 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(KernelError::InvalidParameter(format!(
                "need alpha > 0 and finite beta, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(KernelSpec::Imq { alpha, beta })
    }

    pub fn inv_log(alpha: f64) -> Result<Self, KernelError> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(KernelError::InvalidParameter(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        Ok(KernelSpec::InvLog { alpha })
    }

    pub fn imq_score(
        alpha: f64,
        beta: f64,
        target: Arc<dyn TargetDensity>,
    ) -> Result<Self, KernelError> {
        if !(alpha > 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(KernelError::InvalidParameter(format!(
                "need alpha > 0 and finite beta, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(KernelSpec::ImqScore {
            alpha,
            beta,
            target,
        })
    }

    pub fn rff(
        bandwidth: f64,
        num_features: usize,
        seed: u64,
        dim: usize,
    ) -> Result<Self, KernelError> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(KernelError::InvalidParameter(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        if num_features == 0 || dim == 0 {
            return Err(KernelError::InvalidParameter(
                "need num_features >= 1 and dim >= 1".into(),
            ));
        }
        Ok(KernelSpec::Rff(Arc::new(RffFeatures::new(
            bandwidth,
            num_features,
            seed,
            dim,
        ))))
    }

    /// The feature map when this is a random-feature kernel.
    pub fn rff_features(&self) -> Option<&RffFeatures> {
        match self {
            KernelSpec::Rff(r) => Some(r),
            _ => None,
        }
    }

    /// `k(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
        check_pair(x, y)?;
        match self {
            KernelSpec::Rbf { bandwidth } => {
                Ok((-sq_dist(x, y) / (2.0 * bandwidth * bandwidth)).exp())
            }
            KernelSpec::Imq { alpha, beta } => Ok((alpha + sq_dist(x, y)).powf(*beta)),
            KernelSpec::InvLog { alpha } => Ok(1.0 / (alpha + sq_dist(x, y).ln_1p())),
            KernelSpec::ImqScore {
                alpha,
                beta,
                target,
            } => {
                let sx = target.grad_log_density(x);
                let sy = target.grad_log_density(y);
                Ok((alpha + sq_dist(&sx, &sy)).powf(*beta))
            }
            KernelSpec::Rff(r) => {
                if x.len() != r.dim {
                    return Err(KernelError::DimensionMismatch(x.len(), r.dim));
                }
                Ok(r.eval(x, y))
            }
        }
    }

    /// `∇_x k(x, y)` — gradient with respect to the first argument.
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, KernelError> {
        check_pair(x, y)?;
        match self {
            KernelSpec::Rbf { bandwidth } => {
                let h2 = bandwidth * bandwidth;
                let k = (-sq_dist(x, y) / (2.0 * h2)).exp();
                Ok(x.iter().zip(y).map(|(a, b)| -(a - b) / h2 * k).collect())
            }
            KernelSpec::Imq { alpha, beta } => {
                let u = alpha + sq_dist(x, y);
                let coef = 2.0 * beta * u.powf(beta - 1.0);
                Ok(x.iter().zip(y).map(|(a, b)| coef * (a - b)).collect())
            }
            KernelSpec::InvLog { alpha } => {
                let r2 = sq_dist(x, y);
                let u = alpha + r2.ln_1p();
                let coef = -2.0 / (u * u * (1.0 + r2));
                Ok(x.iter().zip(y).map(|(a, b)| coef * (a - b)).collect())
            }
            KernelSpec::ImqScore {
                alpha,
                beta,
                target,
            } => {
                let sx = target.grad_log_density(x);
                let sy = target.grad_log_density(y);
                let v: Vec<f64> = sx.iter().zip(&sy).map(|(a, b)| a - b).collect();
                let u = alpha + v.iter().map(|d| d * d).sum::<f64>();
                let norm = v.iter().map(|d| d * d).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Ok(vec![0.0; x.len()]);
                }
                // ∇_x u = 2 H(x) (s(x) − s(y)); the Hessian-vector product is
                // taken by central differences of the score.
                let unit: Vec<f64> = v.iter().map(|d| d / norm).collect();
                let eps = SCORE_HVP_STEP;
                let plus: Vec<f64> = x.iter().zip(&unit).map(|(a, u)| a + eps * u).collect();
                let minus: Vec<f64> = x.iter().zip(&unit).map(|(a, u)| a - eps * u).collect();
                let sp = target.grad_log_density(&plus);
                let sm = target.grad_log_density(&minus);
                let coef = 2.0 * beta * u.powf(beta - 1.0) * norm / (2.0 * eps);
                Ok(sp.iter().zip(&sm).map(|(p, m)| coef * (p - m)).collect())
            }
            KernelSpec::Rff(r) => {
                if x.len() != r.dim {
                    return Err(KernelError::DimensionMismatch(x.len(), r.dim));
                }
                Ok(r.grad_x(x, y))
            }
        }
    }

    /// `∇_y k(x, y)`, via symmetry.
    pub fn grad_y(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, KernelError> {
        self.grad_x(y, x)
    }

    /// `Σ_d ∂²k/∂x_d∂y_d`, the trace term of the Stein kernel.
    pub fn grad_xy_trace(&self, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
        check_pair(x, y)?;
        let d = x.len() as f64;
        match self {
            KernelSpec::Rbf { bandwidth } => {
                let h2 = bandwidth * bandwidth;
                let r2 = sq_dist(x, y);
                let k = (-r2 / (2.0 * h2)).exp();
                Ok(k * (d / h2 - r2 / (h2 * h2)))
            }
            KernelSpec::Imq { alpha, beta } => {
                let r2 = sq_dist(x, y);
                let u = alpha + r2;
                Ok(-2.0 * beta * d * u.powf(beta - 1.0)
                    - 4.0 * beta * (beta - 1.0) * r2 * u.powf(beta - 2.0))
            }
            KernelSpec::InvLog { alpha } => {
                let r2 = sq_dist(x, y);
                let s = 1.0 + r2;
                let u = alpha + r2.ln_1p();
                let u2 = u * u;
                Ok(2.0 * d / (u2 * s) - 8.0 * r2 / (u2 * u * s * s) - 4.0 * r2 / (u2 * s * s))
            }
            KernelSpec::ImqScore { .. } => Err(KernelError::Unsupported(
                "second derivatives of the score kernel",
            )),
            KernelSpec::Rff(r) => {
                if x.len() != r.dim {
                    return Err(KernelError::DimensionMismatch(x.len(), r.dim));
                }
                Ok(r.grad_xy_trace(x, y))
            }
        }
    }

    /// Whether the kernel factorizes over coordinates (needed by the
    /// block-coordinate LMO).
    pub fn is_product(&self) -> bool {
        matches!(self, KernelSpec::Rbf { .. })
    }

    /// Product-kernel factor over a coordinate subset. For the full subset
    /// this is exactly `eval`.
    pub fn eval_on_dims(&self, x: &[f64], y: &[f64], dims: &[usize]) -> Result<f64, KernelError> {
        check_pair(x, y)?;
        match self {
            KernelSpec::Rbf { bandwidth } => {
                let mut s = 0.0;
                for &dd in dims {
                    let d = x[dd] - y[dd];
                    s += d * d;
                }
                Ok((-s / (2.0 * bandwidth * bandwidth)).exp())
            }
            _ => Err(KernelError::Unsupported(
                "coordinate factorization requires a product kernel",
            )),
        }
    }

    /// `∂/∂x_d` of the block factor, given the factor value.
    pub(crate) fn block_partial(&self, x: &[f64], y: &[f64], dim: usize, factor: f64) -> f64 {
        match self {
            KernelSpec::Rbf { bandwidth } => {
                let h2 = bandwidth * bandwidth;
                -(x[dim] - y[dim]) / h2 * factor
            }
            _ => unreachable!("block_partial is only called for product kernels"),
        }
    }
}

// ---------------------------------------------------------------------------
// Gram matrices
// ---------------------------------------------------------------------------

/// Result of a jittered Gram solve: the solution and the diagonal jitter that
/// was actually added.
#[derive(Debug, Clone)]
pub struct GramSolve {
    pub solution: Vec<f64>,
    pub jitter: f64,
}

/// Row-major Gram matrix `K[i,j] = k(x_i, x_j)`. Feature kernels go through
/// the feature matrix so the trigonometry is O(n·D) instead of O(n²·D).
pub fn gram_matrix(kernel: &KernelSpec, points: &[Vec<f64>]) -> Result<Vec<f64>, KernelError> {
    let n = points.len();
    let mut k = vec![0.0; n * n];
    if let Some(feats) = kernel.rff_features() {
        if points.iter().any(|p| p.len() != feats.dim) {
            return Err(KernelError::DimensionMismatch(points[0].len(), feats.dim));
        }
        let z: Vec<Vec<f64>> = points.iter().map(|p| feats.features(p)).collect();
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = z[i].iter().zip(&z[j]).map(|(a, b)| a * b).sum();
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        return Ok(k);
    }
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(&points[i], &points[j])?;
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    Ok(k)
}

/// Cholesky factorization of a Gram matrix with adaptive diagonal jitter.
/// Jitter starts at `1e-10·trace(K)/n` and is multiplied by 10 until the
/// factorization succeeds, failing above `1e-4·trace(K)/n`.
#[derive(Debug, Clone)]
pub struct GramCholesky {
    n: usize,
    lower: Vec<f64>,
    pub jitter: f64,
}

impl GramCholesky {
    pub fn factor(kernel: &KernelSpec, points: &[Vec<f64>]) -> Result<Self, KernelError> {
        let n = points.len();
        if n == 0 {
            return Err(KernelError::InvalidParameter("empty point set".into()));
        }
        let gram = gram_matrix(kernel, points)?;
        Self::factor_gram(gram, n)
    }

    pub(crate) fn factor_gram(gram: Vec<f64>, n: usize) -> Result<Self, KernelError> {
        let trace: f64 = (0..n).map(|i| gram[i * n + i]).sum();
        let base = trace / n as f64;
        if !(base > 0.0) || !base.is_finite() {
            return Err(KernelError::InvalidParameter(
                "Gram matrix has non-positive trace".into(),
            ));
        }
        let mut jitter = 1e-10 * base;
        let max_jitter = 1e-4 * base;
        let mut jittered = gram.clone();
        loop {
            for i in 0..n {
                jittered[i * n + i] = gram[i * n + i] + jitter;
            }
            if let Some(lower) = cholesky_lower(&jittered, n) {
                return Ok(GramCholesky { n, lower, jitter });
            }
            jitter *= 10.0;
            if jitter > max_jitter {
                return Err(KernelError::GramSolveFailed { max_jitter });
            }
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, KernelError> {
        if rhs.len() != self.n {
            return Err(KernelError::DimensionMismatch(rhs.len(), self.n));
        }
        Ok(cholesky_solve(&self.lower, self.n, rhs))
    }
}

/// Solve `(K + jitter·I) w = rhs` with the adaptive jitter policy, reporting
/// the jitter used.
pub fn gram_solve(
    kernel: &KernelSpec,
    points: &[Vec<f64>],
    rhs: &[f64],
) -> Result<GramSolve, KernelError> {
    let chol = GramCholesky::factor(kernel, points)?;
    let solution = chol.solve(rhs)?;
    Ok(GramSolve {
        solution,
        jitter: chol.jitter,
    })
}

// ---------------------------------------------------------------------------
// Bandwidth selection
// ---------------------------------------------------------------------------

/// How the raw pairwise-distance median is turned into a bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MedianScaling {
    /// `h = med`
    Plain,
    /// `h² = med² / (2·ln(n+1))`
    LogN,
}

/// Median of the `n(n-1)/2` pairwise Euclidean distances.
pub fn median_bandwidth(points: &[Vec<f64>]) -> Result<f64, KernelError> {
    median_bandwidth_scaled(points, MedianScaling::Plain)
}

pub fn median_bandwidth_scaled(
    points: &[Vec<f64>],
    scaling: MedianScaling,
) -> Result<f64, KernelError> {
    let n = points.len();
    if n < 2 {
        return Err(KernelError::InvalidParameter(
            "median bandwidth needs at least two points".into(),
        ));
    }
    let d = points[0].len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        if points[i].len() != d {
            return Err(KernelError::DimensionMismatch(points[i].len(), d));
        }
        for j in (i + 1)..n {
            dists.push(sq_dist(&points[i], &points[j]).sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let m = dists.len();
    let med = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if med == 0.0 {
        return Err(KernelError::DegeneratePoints);
    }
    Ok(match scaling {
        MedianScaling::Plain => med,
        MedianScaling::LogN => (med * med / (2.0 * ((n + 1) as f64).ln())).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::IsotropicGaussian;
    use crate::testutil::{assert_close_to_fd, central_diff};
    use rand::Rng;

    fn all_variants(dim: usize) -> Vec<KernelSpec> {
        vec![
            KernelSpec::rbf(1.0).unwrap(),
            KernelSpec::imq(1.0, -0.5).unwrap(),
            KernelSpec::inv_log(1.0).unwrap(),
            KernelSpec::imq_score(1.0, -0.5, Arc::new(IsotropicGaussian::standard(dim))).unwrap(),
            KernelSpec::rff(1.0, 512, 7, dim).unwrap(),
        ]
    }

    #[test]
    fn rbf_eval_matches_closed_form() {
        let k = KernelSpec::rbf(1.0).unwrap();
        assert_eq!(k.eval(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        let v = k.eval(&[0.0], &[2.0]).unwrap();
        assert!((v - (-2.0_f64).exp()).abs() < 1e-15, "got {v}");
    }

    #[test]
    fn imq_eval_at_zero_distance() {
        let k = KernelSpec::imq(1.0, -0.5).unwrap();
        assert_eq!(k.eval(&[0.0], &[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn eval_rejects_bad_input() {
        let k = KernelSpec::rbf(1.0).unwrap();
        assert!(matches!(
            k.eval(&[0.0, 1.0], &[0.0]),
            Err(KernelError::DimensionMismatch(2, 1))
        ));
        assert!(matches!(
            k.eval(&[f64::NAN], &[0.0]),
            Err(KernelError::NonFiniteInput)
        ));
    }

    #[test]
    fn rbf_grad_matches_closed_form() {
        let k = KernelSpec::rbf(1.0).unwrap();
        let g = k.grad_x(&[1.0], &[0.0]).unwrap();
        assert!((g[0] + (-0.5_f64).exp()).abs() < 1e-12, "got {}", g[0]);
        let zero = k.grad_x(&[0.5, -0.5], &[0.5, -0.5]).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
    }

    #[test]
    fn imq_grad_matches_symbolic_value() {
        // d/dx (1+(x-y)²)^(-1/2) at x=1, y=0 is -(2)^(-3/2)
        let k = KernelSpec::imq(1.0, -0.5).unwrap();
        let g = k.grad_x(&[1.0], &[0.0]).unwrap();
        assert!((g[0] + 2.0_f64.powf(-1.5)).abs() < 1e-12, "got {}", g[0]);
    }

    #[test]
    fn all_variants_are_symmetric() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for kernel in all_variants(3) {
            for _ in 0..50 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let a = kernel.eval(&x, &y).unwrap();
                let b = kernel.eval(&y, &x).unwrap();
                assert_eq!(a, b, "{kernel:?} not symmetric");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for kernel in all_variants(2) {
            for _ in 0..100 {
                let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
                let g = kernel.grad_x(&x, &y).unwrap();
                let fd = central_diff(|p| kernel.eval(p, &y).unwrap(), &x, 1e-5);
                assert_close_to_fd(&g, &fd, 1e-5);
            }
        }
    }

    #[test]
    fn trace_matches_nested_finite_differences() {
        let kernels = vec![
            KernelSpec::rbf(0.8).unwrap(),
            KernelSpec::imq(1.0, -0.5).unwrap(),
            KernelSpec::inv_log(1.0).unwrap(),
            KernelSpec::rff(1.0, 512, 11, 2).unwrap(),
        ];
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let h = 1e-4;
        for kernel in kernels {
            for _ in 0..25 {
                let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
                let y: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
                let got = kernel.grad_xy_trace(&x, &y).unwrap();
                let mut fd = 0.0;
                for dd in 0..2 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[dd] += h;
                    xm[dd] -= h;
                    let mut yp = y.clone();
                    let mut ym = y.clone();
                    yp[dd] += h;
                    ym[dd] -= h;
                    fd += (kernel.eval(&xp, &yp).unwrap() - kernel.eval(&xp, &ym).unwrap()
                        - kernel.eval(&xm, &yp).unwrap()
                        + kernel.eval(&xm, &ym).unwrap())
                        / (4.0 * h * h);
                }
                let denom = fd.abs().max(1e-3);
                assert!(
                    (got - fd).abs() / denom < 1e-4,
                    "{kernel:?}: trace {got} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn gram_solve_single_point_is_identity() {
        let k = KernelSpec::rbf(1.0).unwrap();
        let s = gram_solve(&k, &[vec![0.3]], &[2.0]).unwrap();
        assert!((s.solution[0] - 2.0).abs() < 1e-9);
        assert!(s.jitter > 0.0 && s.jitter < 1e-9);
    }

    #[test]
    fn gram_solve_two_point_closed_form() {
        // [[1, e^-0.5], [e^-0.5, 1]] w = (1,1) → w = 1/(1+e^-0.5)
        let k = KernelSpec::rbf(1.0).unwrap();
        let s = gram_solve(&k, &[vec![0.0], vec![1.0]], &[1.0, 1.0]).unwrap();
        let expect = 1.0 / (1.0 + (-0.5_f64).exp());
        assert!((s.solution[0] - expect).abs() < 1e-9, "{:?}", s.solution);
        assert!((s.solution[1] - expect).abs() < 1e-9);
    }

    #[test]
    fn gram_solve_preserves_symmetry() {
        let k = KernelSpec::rbf(1.0).unwrap();
        let s = gram_solve(&k, &[vec![-1.0], vec![1.0]], &[0.7, 0.7]).unwrap();
        assert!((s.solution[0] - s.solution[1]).abs() < 1e-12);
    }

    #[test]
    fn gram_solve_residual_is_small() {
        let k = KernelSpec::rbf(0.7).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let points: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let rhs: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gram = gram_matrix(&k, &points).unwrap();
        let s = gram_solve(&k, &points, &rhs).unwrap();
        for i in 0..12 {
            let mut acc = 0.0;
            for j in 0..12 {
                acc += gram[i * 12 + j] * s.solution[j];
            }
            assert!((acc - rhs[i]).abs() < 1e-8, "residual {}", acc - rhs[i]);
        }
    }

    #[test]
    fn gram_solve_survives_duplicate_points() {
        let k = KernelSpec::rbf(1.0).unwrap();
        let points = vec![vec![0.5], vec![0.5], vec![1.0]];
        match gram_solve(&k, &points, &[1.0, 1.0, 1.0]) {
            Ok(s) => assert!(s.solution.iter().all(|v| v.is_finite())),
            Err(KernelError::GramSolveFailed { .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn median_bandwidth_examples() {
        let one_d: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0], vec![3.0]];
        assert_eq!(median_bandwidth(&one_d).unwrap(), 2.0);
        let pair = vec![vec![0.0, 0.0], vec![3.0, 4.0]];
        assert_eq!(median_bandwidth(&pair).unwrap(), 5.0);
        let two = vec![vec![0.0], vec![0.25]];
        assert_eq!(median_bandwidth(&two).unwrap(), 0.25);
    }

    #[test]
    fn median_bandwidth_rejects_identical_points() {
        let pts = vec![vec![1.0], vec![1.0], vec![1.0]];
        assert!(matches!(
            median_bandwidth(&pts),
            Err(KernelError::DegeneratePoints)
        ));
    }

    #[test]
    fn median_log_scaling_divides_as_documented() {
        let pts: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0], vec![3.0]];
        let med = median_bandwidth(&pts).unwrap();
        let scaled = median_bandwidth_scaled(&pts, MedianScaling::LogN).unwrap();
        let expect = (med * med / (2.0 * 4.0_f64.ln())).sqrt();
        assert!((scaled - expect).abs() < 1e-15);
    }

    #[test]
    fn rff_is_deterministic_per_seed() {
        let a = KernelSpec::rff(1.0, 256, 42, 2).unwrap();
        let b = KernelSpec::rff(1.0, 256, 42, 2).unwrap();
        let x = [0.3, -0.7];
        let y = [1.1, 0.2];
        assert_eq!(a.eval(&x, &y).unwrap(), b.eval(&x, &y).unwrap());
        assert_eq!(a.eval(&x, &y).unwrap(), a.eval(&x, &y).unwrap());
    }

    #[test]
    fn rff_self_evaluation_is_near_one() {
        let k = KernelSpec::rff(1.0, 2048, 1, 2).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        for _ in 0..20 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v = k.eval(&x, &x).unwrap();
            assert!((v - 1.0).abs() <= 0.05, "k(x,x) = {v}");
        }
    }

    #[test]
    fn rff_concentrates_around_exact_rbf() {
        let exact = KernelSpec::rbf(1.0).unwrap();
        let approx = KernelSpec::rff(1.0, 2048, 2, 2).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut worst = 0.0_f64;
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let err = (exact.eval(&x, &y).unwrap() - approx.eval(&x, &y).unwrap()).abs();
            worst = worst.max(err);
        }
        assert!(worst <= 0.05, "max |rff - rbf| = {worst}");
    }

    #[test]
    fn rff_eval_matches_feature_inner_product() {
        let k = KernelSpec::rff(0.8, 128, 3, 2).unwrap();
        let feats = k.rff_features().unwrap();
        let x = [0.4, -1.2];
        let y = [-0.3, 0.9];
        let zx = feats.features(&x);
        let zy = feats.features(&y);
        let dot: f64 = zx.iter().zip(&zy).map(|(a, b)| a * b).sum();
        assert!((dot - k.eval(&x, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn block_evaluation_recovers_full_product() {
        let k = KernelSpec::rbf(0.6).unwrap();
        let x = [0.7, -0.4, 1.1];
        let y = [-0.2, 0.5, 0.3];
        let full = k.eval(&x, &y).unwrap();
        let all = k.eval_on_dims(&x, &y, &[0, 1, 2]).unwrap();
        assert_eq!(full, all);
        let a = k.eval_on_dims(&x, &y, &[0]).unwrap();
        let b = k.eval_on_dims(&x, &y, &[1, 2]).unwrap();
        assert!((a * b - full).abs() < 1e-15);
    }
}
