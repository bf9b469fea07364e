//! Config-driven experiment runner.
//!
//! `run_experiment` builds the target, kernel, method and reference sampler
//! from one TOML document, executes the method, and writes a result table
//! plus the final particle set (both atomically). `eval_mmd_curve` re-reads a
//! particle file and reports squared MMD for every prefix of the stored
//! particle sequence, replaying the stored weight rule.

pub mod config;
pub mod files;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::baselines::{
    kernel_herding, stein_points_greedy, svgd_run, BandwidthPolicy, SpSearchConfig, SvgdConfig,
    SvgdOptimizer,
};
use crate::discrepancy::{
    ksd, mmd2_vs_samples, mmd2_vs_samples_cached, ReferenceCache, ReferenceSamples,
    WeightedParticles,
};
use crate::fw::{
    cache_mmd_fw, empirical_bq_weights, line_search_lambda, mmd_fw, CacheMmdFwConfig, FwInit,
    FwRun, InitPolicy, LmoConfig, MmdFwConfig, StepRule,
};
use crate::kernels::{median_bandwidth, KernelSpec};
use crate::optim::AdamConfig;
use crate::sampling::{hmc_sample, HmcConfig};
use crate::targets::{
    make_synthetic_logreg, make_synthetic_regression, BayesianLogisticRegression,
    BayesianNnRegression, GaussianMixture, IsotropicGaussian, MapConfig, TargetDensity,
};

use config::{
    BandwidthConfig, EvaluationConfig, ExperimentConfig, InitConfig, InitPolicyName, KernelConfig,
    KernelVariant, MethodConfig, MethodName, MetricName, ReferenceConfig, ReferenceKind,
    StepRuleConfig, TargetConfig, TargetFamily, Timing,
};
use files::{read_particles, write_particles, ResultRow, ResultTable, StoredStepRule};

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Configuration problems: parse errors, invalid combinations, missing
    /// files referenced by the config. CLI exit code 1.
    #[error("config error: {0}")]
    Config(String),
    /// Runtime failures after validation. CLI exit code 2.
    #[error("runtime failure: {0}")]
    Runtime(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            // Bad configs and malformed input files are caller errors.
            HarnessError::Config(_) | HarnessError::Format(_) => 1,
            _ => 2,
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}

fn config_err<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Config(e.to_string())
}

// ---------------------------------------------------------------------------
// Target construction
// ---------------------------------------------------------------------------

pub(crate) enum BuiltTarget {
    Gaussian(IsotropicGaussian),
    Mixture(GaussianMixture),
    Logreg {
        model: BayesianLogisticRegression,
        test: Vec<(Vec<f64>, u8)>,
    },
    Bnn {
        model: BayesianNnRegression,
        test: Vec<(Vec<f64>, f64)>,
    },
}

impl BuiltTarget {
    pub(crate) fn density(&self) -> &dyn TargetDensity {
        match self {
            BuiltTarget::Gaussian(t) => t,
            BuiltTarget::Mixture(t) => t,
            BuiltTarget::Logreg { model, .. } => model,
            BuiltTarget::Bnn { model, .. } => model,
        }
    }

    fn arc_density(&self) -> Arc<dyn TargetDensity> {
        match self {
            BuiltTarget::Gaussian(t) => Arc::new(t.clone()),
            BuiltTarget::Mixture(t) => Arc::new(t.clone()),
            BuiltTarget::Logreg { model, .. } => Arc::new(model.clone()),
            BuiltTarget::Bnn { model, .. } => Arc::new(model.clone()),
        }
    }

    fn exact_samples(&self, n: usize, seed: u64) -> Option<ReferenceSamples> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let samples: Vec<Vec<f64>> = match self {
            BuiltTarget::Gaussian(t) => (0..n).map(|_| t.sample(&mut rng)).collect(),
            BuiltTarget::Mixture(t) => (0..n).map(|_| t.sample(&mut rng)).collect(),
            _ => return None,
        };
        Some(ReferenceSamples::new(samples).expect("sampler output is valid"))
    }

    fn default_metric(&self) -> Option<MetricName> {
        match self {
            BuiltTarget::Logreg { .. } => Some(MetricName::Accuracy),
            BuiltTarget::Bnn { .. } => Some(MetricName::Rmse),
            _ => None,
        }
    }

    /// Held-out predictive metric under the weighted particle posterior.
    /// Weights are used as-is (quadrature weights may be negative); predictive
    /// densities are floored at 1e-300 before any logarithm.
    fn metric(&self, metric: MetricName, particles: &WeightedParticles) -> Option<f64> {
        const FLOOR: f64 = 1e-300;
        match self {
            BuiltTarget::Logreg { model, test } => {
                if test.is_empty() {
                    return None;
                }
                let prob_one = |x: &[f64]| -> f64 {
                    particles
                        .points()
                        .iter()
                        .zip(particles.weights())
                        .map(|(theta, w)| w * model.predict_prob(theta, x))
                        .sum()
                };
                match metric {
                    MetricName::Accuracy => {
                        let correct = test
                            .iter()
                            .filter(|(x, y)| (prob_one(x) > 0.5) == (*y == 1))
                            .count();
                        Some(correct as f64 / test.len() as f64)
                    }
                    MetricName::LogLikelihood => {
                        let mut acc = 0.0;
                        for (x, y) in test {
                            let p = prob_one(x);
                            let py = if *y == 1 { p } else { 1.0 - p };
                            acc += py.max(FLOOR).ln();
                        }
                        Some(acc / test.len() as f64)
                    }
                    MetricName::Rmse => None,
                }
            }
            BuiltTarget::Bnn { model, test } => {
                if test.is_empty() {
                    return None;
                }
                match metric {
                    MetricName::Rmse => {
                        let mut acc = 0.0;
                        for (x, y) in test {
                            let pred: f64 = particles
                                .points()
                                .iter()
                                .zip(particles.weights())
                                .map(|(theta, w)| w * model.forward(theta, x))
                                .sum();
                            acc += (y - pred) * (y - pred);
                        }
                        Some((acc / test.len() as f64).sqrt())
                    }
                    MetricName::LogLikelihood => {
                        let p = model.n_weights();
                        let mut acc = 0.0;
                        for (x, y) in test {
                            let mut density = 0.0;
                            for (theta, w) in particles.points().iter().zip(particles.weights()) {
                                let gamma = theta[p + 1].exp();
                                let r = y - model.forward(theta, x);
                                let norm =
                                    (gamma / (2.0 * std::f64::consts::PI)).sqrt();
                                density += w * norm * (-0.5 * gamma * r * r).exp();
                            }
                            acc += density.max(FLOOR).ln();
                        }
                        Some(acc / test.len() as f64)
                    }
                    MetricName::Accuracy => None,
                }
            }
            _ => None,
        }
    }
}

fn require<T: Clone>(field: &Option<T>, what: &str) -> Result<T, HarnessError> {
    field
        .clone()
        .ok_or_else(|| HarnessError::Config(format!("missing target field `{what}`")))
}

/// Deterministic train/test split by seeded permutation.
fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rand::Rng::random_range(&mut rng, 0..=i);
        order.swap(i, j);
    }
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let test = order[..n_test].to_vec();
    let train = order[n_test..].to_vec();
    (train, test)
}

pub(crate) fn build_target(cfg: &TargetConfig) -> Result<BuiltTarget, HarnessError> {
    match cfg.family {
        TargetFamily::StandardGaussian => {
            let dim = require(&cfg.dim, "dim")?;
            Ok(BuiltTarget::Gaussian(IsotropicGaussian::standard(dim)))
        }
        TargetFamily::Gaussian => {
            let mean = require(&cfg.mean, "mean")?;
            let variance = require(&cfg.variance, "variance")?;
            Ok(BuiltTarget::Gaussian(
                IsotropicGaussian::new(mean, variance).map_err(config_err)?,
            ))
        }
        TargetFamily::GmmRing => {
            let ring = cfg.ring.unwrap_or(10);
            let radius = cfg.radius.unwrap_or(1.5);
            let variance = cfg.variance.unwrap_or(0.09);
            let center = cfg.center.unwrap_or(true);
            let mixture = if center {
                GaussianMixture::ring_with_center(ring, radius, variance)
            } else {
                let cov = vec![variance, 0.0, 0.0, variance];
                let comps = (0..ring)
                    .map(|k| {
                        let a = 2.0 * std::f64::consts::PI * k as f64 / ring as f64;
                        (1.0, vec![radius * a.cos(), radius * a.sin()], cov.clone())
                    })
                    .collect();
                GaussianMixture::new(comps).map_err(config_err)?
            };
            Ok(BuiltTarget::Mixture(mixture))
        }
        TargetFamily::Gmm => {
            let weights = require(&cfg.weights, "weights")?;
            let means = require(&cfg.means, "means")?;
            let covs = require(&cfg.covariances, "covariances")?;
            if weights.len() != means.len() || weights.len() != covs.len() {
                return Err(HarnessError::Config(
                    "weights, means and covariances must have equal length".into(),
                ));
            }
            let comps = weights
                .into_iter()
                .zip(means)
                .zip(covs)
                .map(|((w, m), c)| (w, m, c))
                .collect();
            Ok(BuiltTarget::Mixture(
                GaussianMixture::new(comps).map_err(config_err)?,
            ))
        }
        TargetFamily::SyntheticLogreg => {
            let n = require(&cfg.n, "n")?;
            let d = require(&cfg.d, "d")?;
            let data_seed = cfg.data_seed.unwrap_or(0);
            let test_fraction = cfg.test_fraction.unwrap_or(0.1);
            let data = make_synthetic_logreg(n, d, data_seed);
            let (train, test) = split_indices(n, test_fraction, data_seed);
            let model = BayesianLogisticRegression::new(
                train.iter().map(|&i| data.features[i].clone()).collect(),
                train.iter().map(|&i| data.labels[i]).collect(),
            )
            .map_err(config_err)?;
            let test = test
                .iter()
                .map(|&i| (data.features[i].clone(), data.labels[i]))
                .collect();
            Ok(BuiltTarget::Logreg { model, test })
        }
        TargetFamily::LogregCsv => {
            let path = require(&cfg.path, "path")?;
            let test_fraction = cfg.test_fraction.unwrap_or(0.1);
            let data_seed = cfg.data_seed.unwrap_or(0);
            let (features, labels) = load_logreg_csv(Path::new(&path))?;
            let (train, test) = split_indices(features.len(), test_fraction, data_seed);
            let model = BayesianLogisticRegression::new(
                train.iter().map(|&i| features[i].clone()).collect(),
                train.iter().map(|&i| labels[i]).collect(),
            )
            .map_err(config_err)?;
            let test = test
                .iter()
                .map(|&i| (features[i].clone(), labels[i]))
                .collect();
            Ok(BuiltTarget::Logreg { model, test })
        }
        TargetFamily::SyntheticBnn => {
            let n = require(&cfg.n, "n")?;
            let hidden = cfg.hidden.unwrap_or(4);
            let data_seed = cfg.data_seed.unwrap_or(0);
            let test_fraction = cfg.test_fraction.unwrap_or(0.1);
            let (xs, ys) = make_synthetic_regression(n, data_seed);
            let (train, test) = split_indices(n, test_fraction, data_seed);
            let model = BayesianNnRegression::new(
                train.iter().map(|&i| xs[i].clone()).collect(),
                train.iter().map(|&i| ys[i]).collect(),
                hidden,
            )
            .map_err(config_err)?;
            let test = test.iter().map(|&i| (xs[i].clone(), ys[i])).collect();
            Ok(BuiltTarget::Bnn { model, test })
        }
    }
}

/// CSV with a header row; feature columns first, the label column last.
fn load_logreg_csv(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<u8>), HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read dataset {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Config("empty dataset file".into()))?;
    let n_cols = header.split(',').count();
    if n_cols < 2 {
        return Err(HarnessError::Config(
            "dataset needs at least one feature column and a label column".into(),
        ));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n_cols {
            return Err(HarnessError::Config(format!(
                "dataset row {} has {} columns, expected {n_cols}",
                lineno + 2,
                cells.len()
            )));
        }
        let mut row = Vec::with_capacity(n_cols - 1);
        for c in &cells[..n_cols - 1] {
            row.push(c.parse::<f64>().map_err(|_| {
                HarnessError::Config(format!("bad feature value {c:?} on row {}", lineno + 2))
            })?);
        }
        let label = match cells[n_cols - 1].trim() {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(HarnessError::Config(format!(
                    "bad label {other:?} on row {} (expected 0 or 1)",
                    lineno + 2
                )))
            }
        };
        features.push(row);
        labels.push(label);
    }
    if features.is_empty() {
        return Err(HarnessError::Config("dataset has no rows".into()));
    }
    Ok((features, labels))
}

// ---------------------------------------------------------------------------
// Kernel and reference construction
// ---------------------------------------------------------------------------

pub(crate) fn build_kernel(
    cfg: &KernelConfig,
    dim: usize,
    target: Option<&BuiltTarget>,
    reference: Option<&ReferenceSamples>,
) -> Result<KernelSpec, HarnessError> {
    let bandwidth = |cfg: &KernelConfig| -> Result<f64, HarnessError> {
        match cfg
            .bandwidth
            .as_ref()
            .ok_or_else(|| HarnessError::Config("kernel needs a bandwidth".into()))?
        {
            BandwidthConfig::Fixed(h) => Ok(*h),
            BandwidthConfig::Named(name) if name == "median-of-reference" => {
                let r = reference.ok_or_else(|| {
                    HarnessError::Config(
                        "bandwidth \"median-of-reference\" needs a [reference] section".into(),
                    )
                })?;
                median_bandwidth(r.samples()).map_err(runtime)
            }
            BandwidthConfig::Named(other) => Err(HarnessError::Config(format!(
                "unknown bandwidth policy {other:?}"
            ))),
        }
    };
    let kernel = match cfg.variant {
        KernelVariant::Rbf => KernelSpec::rbf(bandwidth(cfg)?),
        KernelVariant::Imq => KernelSpec::imq(
            cfg.alpha.unwrap_or(1.0),
            cfg.beta.unwrap_or(-0.5),
        ),
        KernelVariant::InvLog => KernelSpec::inv_log(cfg.alpha.unwrap_or(1.0)),
        KernelVariant::ImqScore => {
            let target = target.ok_or_else(|| {
                HarnessError::Config(
                    "the score kernel binds a target and is unavailable here".into(),
                )
            })?;
            KernelSpec::imq_score(
                cfg.alpha.unwrap_or(1.0),
                cfg.beta.unwrap_or(-0.5),
                target.arc_density(),
            )
        }
        KernelVariant::Rff => {
            let features = cfg
                .num_features
                .ok_or_else(|| HarnessError::Config("rff kernel needs num_features".into()))?;
            KernelSpec::rff(bandwidth(cfg)?, features, cfg.feature_seed.unwrap_or(0), dim)
        }
    };
    kernel.map_err(config_err)
}

fn build_reference(
    cfg: &ReferenceConfig,
    target: &BuiltTarget,
    run_seed: u64,
) -> Result<ReferenceSamples, HarnessError> {
    let seed = cfg.ref_seed.unwrap_or_else(|| run_seed.wrapping_add(1));
    match cfg.kind {
        ReferenceKind::Exact => {
            let n = cfg
                .n_samples
                .ok_or_else(|| HarnessError::Config("exact reference needs n_samples".into()))?;
            target.exact_samples(n, seed).ok_or_else(|| {
                HarnessError::Config(
                    "exact sampling is only available for gaussian and mixture targets".into(),
                )
            })
        }
        ReferenceKind::Hmc => {
            let hmc = HmcConfig {
                step_size: cfg.step_size.unwrap_or(0.1),
                leapfrog_steps: cfg.leapfrog_steps.unwrap_or(20),
                n_samples: cfg
                    .n_samples
                    .ok_or_else(|| HarnessError::Config("hmc reference needs n_samples".into()))?,
                burn_in: cfg.burn_in.unwrap_or(500),
                thinning: cfg.thinning.unwrap_or(1),
                seed,
                auto_tune: cfg.auto_tune.unwrap_or(false),
                init: None,
            };
            Ok(hmc_sample(target.density(), &hmc).map_err(runtime)?.samples)
        }
        ReferenceKind::File => {
            let path = cfg
                .path
                .as_ref()
                .ok_or_else(|| HarnessError::Config("file reference needs a path".into()))?;
            let file = read_particles(Path::new(path))
                .map_err(|e| HarnessError::Config(format!("reference file: {e}")))?;
            ReferenceSamples::new(file.points).map_err(config_err)
        }
    }
}

// ---------------------------------------------------------------------------
// Weight replay
// ---------------------------------------------------------------------------

/// Recompute the weights a run would have assigned to this point prefix.
pub fn replay_weights(
    rule: StoredStepRule,
    kernel: &KernelSpec,
    points: &[Vec<f64>],
) -> Result<Vec<f64>, HarnessError> {
    let n = points.len();
    match rule {
        StoredStepRule::Uniform => Ok(vec![1.0 / n as f64; n]),
        StoredStepRule::EmpiricalBq => {
            Ok(empirical_bq_weights(kernel, points).map_err(runtime)?.0)
        }
        StoredStepRule::Constant => {
            let mut w = vec![1.0];
            for k in 2..=n {
                let lambda = 1.0 / k as f64;
                for v in &mut w {
                    *v *= 1.0 - lambda;
                }
                w.push(lambda);
            }
            Ok(w)
        }
        StoredStepRule::LineSearch => {
            let mut w = vec![1.0];
            for k in 2..=n {
                let (lambda, _) =
                    line_search_lambda(kernel, &points[..k - 1], &w, &points[k - 1], None)
                        .map_err(runtime)?;
                for v in &mut w {
                    *v *= 1.0 - lambda;
                }
                w.push(lambda);
            }
            Ok(w)
        }
    }
}

// ---------------------------------------------------------------------------
// Experiment execution
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct ExperimentOutput {
    pub table: ResultTable,
    pub particles: WeightedParticles,
    pub results_path: PathBuf,
    pub particles_path: PathBuf,
}

fn output_paths(output: &str) -> (PathBuf, PathBuf) {
    let base = match std::env::var("MMDFW_OUTPUT_DIR") {
        Ok(dir) if !dir.is_empty() => {
            let name = Path::new(output)
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| output.to_string());
            Path::new(&dir).join(name)
        }
        _ => PathBuf::from(output),
    };
    (
        base.with_extension("results.csv"),
        base.with_extension("particles.csv"),
    )
}

fn method_step_rule(cfg: &MethodConfig) -> (StepRule, StoredStepRule) {
    match cfg.step_rule.unwrap_or(StepRuleConfig::EmpiricalBq) {
        StepRuleConfig::Constant => (StepRule::Constant, StoredStepRule::Constant),
        StepRuleConfig::LineSearch => (StepRule::LineSearch, StoredStepRule::LineSearch),
        StepRuleConfig::EmpiricalBq => (StepRule::EmpiricalBq, StoredStepRule::EmpiricalBq),
    }
}

fn method_lmo(cfg: &MethodConfig, target: &BuiltTarget) -> Result<LmoConfig, HarnessError> {
    let init = match cfg.init_policy {
        None | Some(InitPolicyName::ParticleFit) => InitPolicy::ParticleFit,
        Some(InitPolicyName::Prior) => InitPolicy::PriorSample,
        Some(InitPolicyName::Box) => {
            let lower = cfg
                .box_lower
                .clone()
                .ok_or_else(|| HarnessError::Config("box init policy needs box_lower".into()))?;
            let upper = cfg
                .box_upper
                .clone()
                .ok_or_else(|| HarnessError::Config("box init policy needs box_upper".into()))?;
            if lower.len() != target.density().dim() || upper.len() != lower.len() {
                return Err(HarnessError::Config(
                    "box bounds must match the target dimension".into(),
                ));
            }
            InitPolicy::RandomBox { lower, upper }
        }
    };
    Ok(LmoConfig {
        inner_iterations: cfg.lmo_iterations.unwrap_or(250),
        optimizer: AdamConfig::with_learning_rate(cfg.learning_rate.unwrap_or(0.005)),
        init,
        restarts: cfg.restarts.unwrap_or(3),
    })
}

fn method_fw_init(cfg: &MethodConfig, dim: usize) -> Result<FwInit, HarnessError> {
    match &cfg.init {
        None => Ok(FwInit::Map {
            config: MapConfig {
                iterations: cfg.map_iterations.unwrap_or(2000),
                optimizer: AdamConfig::default(),
            },
            start: None,
        }),
        Some(InitConfig::Named(name)) if name == "map" => Ok(FwInit::Map {
            config: MapConfig {
                iterations: cfg.map_iterations.unwrap_or(2000),
                optimizer: AdamConfig::default(),
            },
            start: None,
        }),
        Some(InitConfig::Named(other)) => Err(HarnessError::Config(format!(
            "unknown init {other:?} (expected \"map\" or a point)"
        ))),
        Some(InitConfig::Point(p)) => {
            if p.len() != dim {
                return Err(HarnessError::Config(format!(
                    "init point has dimension {}, target has {dim}",
                    p.len()
                )));
            }
            Ok(FwInit::Explicit(p.clone()))
        }
    }
}

struct MethodOutput {
    particles: WeightedParticles,
    /// Rows without metric/ksd columns filled in yet.
    rows: Vec<ResultRow>,
    stored_rule: StoredStepRule,
    /// Prefix replay only makes sense for greedily grown particle sequences.
    prefix_semantics: bool,
    failure: Option<String>,
}

fn rows_from_fw_run(run: &FwRun) -> Vec<ResultRow> {
    run.records
        .iter()
        .enumerate()
        .map(|(i, r)| ResultRow {
            iteration: i + 1,
            n_particles: r.n_particles,
            mmd2: r.mmd2_vs_reference,
            ksd: None,
            theorem1_residual: r.theorem1_residual,
            test_metric: None,
            wallclock_ms: Some(r.wallclock_ms),
        })
        .collect()
}

fn run_method(
    config: &ExperimentConfig,
    target: &BuiltTarget,
    kernel: &KernelSpec,
    reference: Option<&ReferenceSamples>,
) -> Result<MethodOutput, HarnessError> {
    let m = &config.method;
    let density = target.density();
    match m.name {
        MethodName::MmdFw => {
            let (step_rule, stored) = method_step_rule(m);
            let fw_config = MmdFwConfig {
                n_particles: m.n_particles,
                step_rule,
                lmo: method_lmo(m, target)?,
                init: method_fw_init(m, density.dim())?,
                seed: config.seed,
                blocks: m.blocks.clone(),
            };
            match mmd_fw(density, kernel, &fw_config, reference) {
                Ok(run) => Ok(MethodOutput {
                    rows: rows_from_fw_run(&run),
                    particles: run.particles,
                    stored_rule: stored,
                    prefix_semantics: true,
                    failure: None,
                }),
                Err(failure) => {
                    let partial = failure.partial.ok_or_else(|| runtime(&failure.error))?;
                    Ok(MethodOutput {
                        rows: rows_from_fw_run(&partial),
                        particles: partial.particles,
                        stored_rule: stored,
                        prefix_semantics: true,
                        failure: Some(failure.error.to_string()),
                    })
                }
            }
        }
        MethodName::CacheMmdFw => {
            let (step_rule, stored) = method_step_rule(m);
            let svgd_cfg = SvgdConfig {
                n_particles: m.svgd_particles.unwrap_or(m.n_particles),
                iterations: m.svgd_iterations.unwrap_or(500),
                learning_rate: m.svgd_learning_rate.unwrap_or(0.05),
                optimizer: SvgdOptimizer::PlainAscent,
                bandwidth: if matches!(kernel, KernelSpec::Rbf { .. }) {
                    BandwidthPolicy::MedianPerIteration {
                        scaling: crate::kernels::MedianScaling::Plain,
                    }
                } else {
                    BandwidthPolicy::Fixed
                },
                init: None,
            };
            let cache = svgd_run(density, kernel, &svgd_cfg, config.seed.wrapping_add(2))
                .map_err(|e| runtime(e.error))?;
            let cache_cfg = CacheMmdFwConfig {
                n_particles: m.n_particles,
                step_rule,
                lmo: method_lmo(m, target)?,
                seed: config.seed,
            };
            match cache_mmd_fw(density, kernel, &cache, &cache_cfg, reference) {
                Ok(run) => Ok(MethodOutput {
                    rows: rows_from_fw_run(&run),
                    particles: run.particles,
                    stored_rule: stored,
                    prefix_semantics: true,
                    failure: None,
                }),
                Err(failure) => {
                    let partial = failure.partial.ok_or_else(|| runtime(&failure.error))?;
                    Ok(MethodOutput {
                        rows: rows_from_fw_run(&partial),
                        particles: partial.particles,
                        stored_rule: stored,
                        prefix_semantics: true,
                        failure: Some(failure.error.to_string()),
                    })
                }
            }
        }
        MethodName::Svgd => {
            let svgd_cfg = SvgdConfig {
                n_particles: m.n_particles,
                iterations: m.iterations.unwrap_or(3000),
                learning_rate: m.learning_rate.unwrap_or(0.05),
                optimizer: match m.optimizer {
                    Some(config::OptimizerName::Adam) => SvgdOptimizer::Adam,
                    _ => SvgdOptimizer::PlainAscent,
                },
                bandwidth: match m.bandwidth_policy {
                    Some(config::BandwidthPolicyName::Median) => {
                        BandwidthPolicy::MedianPerIteration {
                            scaling: crate::kernels::MedianScaling::Plain,
                        }
                    }
                    _ => BandwidthPolicy::Fixed,
                },
                init: None,
            };
            let clock = std::time::Instant::now();
            let particles =
                svgd_run(density, kernel, &svgd_cfg, config.seed).map_err(|e| runtime(e.error))?;
            let mmd2 = reference
                .map(|r| mmd2_vs_samples(kernel, &particles, r).map_err(runtime))
                .transpose()?;
            let rows = vec![ResultRow {
                iteration: 1,
                n_particles: particles.len(),
                mmd2,
                ksd: None,
                theorem1_residual: None,
                test_metric: None,
                wallclock_ms: Some(clock.elapsed().as_millis() as u64),
            }];
            Ok(MethodOutput {
                particles,
                rows,
                stored_rule: StoredStepRule::Uniform,
                prefix_semantics: false,
                failure: None,
            })
        }
        MethodName::SteinPoints => {
            let search = SpSearchConfig {
                candidates: m.candidates.unwrap_or(20),
                proposal_scale: m.proposal_scale.unwrap_or(1.0),
                bounding_box: match (&m.box_lower, &m.box_upper) {
                    (Some(lo), Some(hi)) => Some((lo.clone(), hi.clone())),
                    (None, None) => None,
                    _ => {
                        return Err(HarnessError::Config(
                            "bounding box needs both box_lower and box_upper".into(),
                        ))
                    }
                },
                map_iterations: m.map_iterations.unwrap_or(100),
                map_optimizer: AdamConfig::default(),
            };
            let clock = std::time::Instant::now();
            let particles =
                stein_points_greedy(density, kernel, m.n_particles, &search, config.seed)
                    .map_err(runtime)?;
            let rows = prefix_rows(kernel, &particles, StoredStepRule::Uniform, reference, &clock)?;
            Ok(MethodOutput {
                particles,
                rows,
                stored_rule: StoredStepRule::Uniform,
                prefix_semantics: true,
                failure: None,
            })
        }
        MethodName::Herding => {
            let pool = reference.ok_or_else(|| {
                HarnessError::Config("herding needs a [reference] section as its pool".into())
            })?;
            let clock = std::time::Instant::now();
            let points = kernel_herding(kernel, pool, m.n_particles).map_err(runtime)?;
            let particles = WeightedParticles::uniform(points).map_err(runtime)?;
            let rows = prefix_rows(kernel, &particles, StoredStepRule::Uniform, reference, &clock)?;
            Ok(MethodOutput {
                particles,
                rows,
                stored_rule: StoredStepRule::Uniform,
                prefix_semantics: true,
                failure: None,
            })
        }
    }
}

/// Per-prefix rows for greedy baselines (uniform weights).
fn prefix_rows(
    kernel: &KernelSpec,
    particles: &WeightedParticles,
    rule: StoredStepRule,
    reference: Option<&ReferenceSamples>,
    clock: &std::time::Instant,
) -> Result<Vec<ResultRow>, HarnessError> {
    let cache = reference
        .map(|r| ReferenceCache::new(kernel, r))
        .transpose()
        .map_err(runtime)?;
    let mut rows = Vec::with_capacity(particles.len());
    for n in 1..=particles.len() {
        let prefix = WeightedParticles::new(
            particles.points()[..n].to_vec(),
            replay_weights(rule, kernel, &particles.points()[..n])?,
        )
        .map_err(runtime)?;
        let mmd2 = reference
            .zip(cache.as_ref())
            .map(|(r, c)| mmd2_vs_samples_cached(kernel, &prefix, r, c).map_err(runtime))
            .transpose()?;
        rows.push(ResultRow {
            iteration: n,
            n_particles: n,
            mmd2,
            ksd: None,
            theorem1_residual: None,
            test_metric: None,
            wallclock_ms: Some(clock.elapsed().as_millis() as u64),
        });
    }
    Ok(rows)
}

/// Execute one configured experiment and write its outputs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    if config.method.n_particles == 0 {
        return Err(HarnessError::Config("n_particles must be at least 1".into()));
    }
    let target = build_target(&config.target)?;
    let reference = config
        .reference
        .as_ref()
        .map(|r| build_reference(r, &target, config.seed))
        .transpose()?;
    let kernel = build_kernel(
        &config.kernel,
        target.density().dim(),
        Some(&target),
        reference.as_ref(),
    )?;

    let mut out = run_method(config, &target, &kernel, reference.as_ref())?;

    // Per-iteration test metric and optional KSD, replayed over particle
    // prefixes for greedy methods, computed once for simultaneous ones.
    let metric = config
        .evaluation
        .as_ref()
        .map(|e: &EvaluationConfig| e.metric)
        .or_else(|| target.default_metric());
    for (i, row) in out.rows.iter_mut().enumerate() {
        let prefix_particles = if out.prefix_semantics {
            let n = row.n_particles.min(out.particles.len());
            if n == 0 {
                continue;
            }
            WeightedParticles::new(
                out.particles.points()[..n].to_vec(),
                replay_weights(out.stored_rule, &kernel, &out.particles.points()[..n])?,
            )
            .map_err(runtime)?
        } else {
            out.particles.clone()
        };
        if let Some(metric) = metric {
            row.test_metric = target.metric(metric, &prefix_particles);
        }
        if config.record_ksd {
            row.ksd = Some(
                ksd(&prefix_particles, target.density(), &kernel).map_err(runtime)?,
            );
        }
        let _ = i;
    }

    if config.timing == Timing::None {
        for row in &mut out.rows {
            row.wallclock_ms = None;
        }
    }

    let (results_path, particles_path) = output_paths(&config.output);
    let table = ResultTable { rows: out.rows };
    table.write(&results_path, out.failure.as_deref())?;
    write_particles(
        &particles_path,
        &out.particles,
        Some(&kernel),
        config.seed,
        out.stored_rule,
    )?;

    if let Some(msg) = out.failure {
        return Err(HarnessError::Runtime(format!(
            "method failed after writing partial results: {msg}"
        )));
    }
    Ok(ExperimentOutput {
        table,
        particles: out.particles,
        results_path,
        particles_path,
    })
}

/// Squared MMD against a reference file for every prefix of a stored particle
/// sequence, with weights replayed per the stored step rule.
pub fn eval_mmd_curve(
    particles_path: &Path,
    reference_path: &Path,
    kernel: &KernelSpec,
) -> Result<ResultTable, HarnessError> {
    let particle_file = read_particles(particles_path)?;
    let reference_file = read_particles(reference_path)?;
    if particle_file.dim != reference_file.dim {
        return Err(HarnessError::Config(format!(
            "particle dim {} does not match reference dim {}",
            particle_file.dim, reference_file.dim
        )));
    }
    let reference = ReferenceSamples::new(reference_file.points).map_err(config_err)?;
    let cache = ReferenceCache::new(kernel, &reference).map_err(runtime)?;
    let mut rows = Vec::with_capacity(particle_file.points.len());
    for n in 1..=particle_file.points.len() {
        let points = particle_file.points[..n].to_vec();
        let weights = replay_weights(particle_file.step_rule, kernel, &points)?;
        let prefix = WeightedParticles::new(points, weights).map_err(runtime)?;
        let mmd2 = mmd2_vs_samples_cached(kernel, &prefix, &reference, &cache).map_err(runtime)?;
        rows.push(ResultRow {
            iteration: n,
            n_particles: n,
            mmd2: Some(mmd2),
            ..ResultRow::default()
        });
    }
    Ok(ResultTable { rows })
}

/// `mmdfw eval`: build the kernel from a `[kernel]`-only document (dimension
/// taken from the particle file, median bandwidth from the reference file)
/// and report the prefix MMD curve.
pub fn run_eval_command(
    particles_path: &Path,
    reference_path: &Path,
    kernel_text: &str,
) -> Result<ResultTable, HarnessError> {
    let kernel_cfg = config::KernelOnlyConfig::from_toml(kernel_text)?;
    let particle_file = read_particles(particles_path)?;
    let reference_file = read_particles(reference_path)?;
    let reference = ReferenceSamples::new(reference_file.points).map_err(config_err)?;
    let kernel = build_kernel(
        &kernel_cfg.kernel,
        particle_file.dim,
        None,
        Some(&reference),
    )?;
    eval_mmd_curve(particles_path, reference_path, &kernel)
}

/// `mmdfw sample`: run HMC against a stand-alone target config and write the
/// draws as a uniform-weight particle file.
pub fn run_sample_command(
    target_text: &str,
    hmc_text: &str,
) -> Result<(PathBuf, f64), HarnessError> {
    let target_cfg = config::TargetOnlyConfig::from_toml(target_text)?;
    let hmc_cfg = config::HmcFileConfig::from_toml(hmc_text)?;
    let target = build_target(&target_cfg.target)?;
    let hmc = HmcConfig {
        step_size: hmc_cfg.step_size,
        leapfrog_steps: hmc_cfg.leapfrog_steps,
        n_samples: hmc_cfg.n_samples,
        burn_in: hmc_cfg.burn_in,
        thinning: hmc_cfg.thinning,
        seed: hmc_cfg.seed,
        auto_tune: hmc_cfg.auto_tune,
        init: None,
    };
    let run = hmc_sample(target.density(), &hmc).map_err(runtime)?;
    let particles = WeightedParticles::uniform(run.samples.samples().to_vec()).map_err(runtime)?;
    let path = match std::env::var("MMDFW_OUTPUT_DIR") {
        Ok(dir) if !dir.is_empty() => {
            let name = Path::new(&hmc_cfg.output)
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| hmc_cfg.output.clone());
            Path::new(&dir).join(name)
        }
        _ => PathBuf::from(&hmc_cfg.output),
    };
    write_particles(&path, &particles, None, hmc_cfg.seed, StoredStepRule::Uniform)?;
    Ok((path, run.acceptance_rate))
}

pub use config::ExperimentConfig as Config;

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_config(dir: &Path, timing: &str, seed: u64) -> ExperimentConfig {
        let text = format!(
            r#"
seed = {seed}
output = "{}/run"
timing = "{timing}"

[target]
family = "standard-gaussian"
dim = 1

[kernel]
variant = "rbf"
bandwidth = 1.0

[method]
name = "mmd-fw"
n_particles = 4
step_rule = "empirical-bq"
lmo_iterations = 30
restarts = 2

[reference]
kind = "exact"
n_samples = 100
ref_seed = 5
"#,
            dir.display()
        );
        ExperimentConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn single_particle_run_emits_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            r#"
seed = 1
output = "{}/one"

[target]
family = "standard-gaussian"
dim = 1

[kernel]
variant = "rbf"
bandwidth = 1.0

[method]
name = "mmd-fw"
n_particles = 1
"#,
            dir.path().display()
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.table.rows.len(), 1);
        assert_eq!(out.table.rows[0].n_particles, 1);
        assert!(out.results_path.exists());
        assert!(out.particles_path.exists());
    }

    #[test]
    fn identical_config_and_seed_are_byte_identical_with_timing_off() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = gaussian_config(dir.path(), "none", 7);
        run_experiment(&cfg).unwrap();
        let first_results = std::fs::read(dir.path().join("run.results.csv")).unwrap();
        let first_particles = std::fs::read(dir.path().join("run.particles.csv")).unwrap();
        run_experiment(&cfg).unwrap();
        let second_results = std::fs::read(dir.path().join("run.results.csv")).unwrap();
        let second_particles = std::fs::read(dir.path().join("run.particles.csv")).unwrap();
        assert_eq!(first_results, second_results);
        assert_eq!(first_particles, second_particles);
    }

    #[test]
    fn eval_final_prefix_matches_run_mmd2() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = gaussian_config(dir.path(), "none", 11);
        let out = run_experiment(&cfg).unwrap();
        // Reference file identical to the run's reference.
        let target = build_target(&cfg.target).unwrap();
        let reference = build_reference(cfg.reference.as_ref().unwrap(), &target, cfg.seed).unwrap();
        let ref_particles = WeightedParticles::uniform(reference.samples().to_vec()).unwrap();
        let ref_path = dir.path().join("reference.particles.csv");
        write_particles(&ref_path, &ref_particles, None, 5, StoredStepRule::Uniform).unwrap();

        let kernel = KernelSpec::rbf(1.0).unwrap();
        let curve = eval_mmd_curve(&out.particles_path, &ref_path, &kernel).unwrap();
        let run_final = out.table.rows.last().unwrap().mmd2.unwrap();
        let eval_final = curve.rows.last().unwrap().mmd2.unwrap();
        assert!(
            (run_final - eval_final).abs() < 1e-10,
            "run {run_final} vs eval {eval_final}"
        );
    }

    #[test]
    fn eval_against_itself_is_zero_at_full_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![vec![0.1], vec![-0.4], vec![0.9]];
        let particles = WeightedParticles::uniform(pts).unwrap();
        let path = dir.path().join("self.particles.csv");
        write_particles(&path, &particles, None, 0, StoredStepRule::Uniform).unwrap();
        let kernel = KernelSpec::rbf(1.0).unwrap();
        let curve = eval_mmd_curve(&path, &path, &kernel).unwrap();
        let last = curve.rows.last().unwrap().mmd2.unwrap();
        assert!(last.abs() < 1e-12, "full prefix mmd2 = {last}");
    }

    #[test]
    fn logreg_experiment_reports_accuracy() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            r#"
seed = 3
output = "{}/lr"
timing = "none"

[target]
family = "synthetic-logreg"
n = 100
d = 2
data_seed = 1
test_fraction = 0.2

[kernel]
variant = "rbf"
bandwidth = 1.0

[method]
name = "mmd-fw"
n_particles = 3
step_rule = "empirical-bq"
lmo_iterations = 25
restarts = 2
map_iterations = 300
"#,
            dir.path().display()
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let out = run_experiment(&cfg).unwrap();
        for row in &out.table.rows {
            let acc = row.test_metric.unwrap();
            assert!((0.0..=1.0).contains(&acc), "accuracy {acc}");
        }
    }

    #[test]
    fn herding_without_reference_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            r#"
seed = 3
output = "{}/herd"

[target]
family = "standard-gaussian"
dim = 1

[kernel]
variant = "rbf"
bandwidth = 1.0

[method]
name = "herding"
n_particles = 3
"#,
            dir.path().display()
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        match run_experiment(&cfg) {
            Err(e @ HarnessError::Config(_)) => assert_eq!(e.exit_code(), 1),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn csv_dataset_loads_and_splits() {
        let dir = tempfile::tempdir().unwrap();
        let data_path = dir.path().join("data.csv");
        let mut csv = String::from("f0,f1,label\n");
        for i in 0..40 {
            let x = i as f64 / 10.0 - 2.0;
            csv.push_str(&format!("{x},{},{}\n", -x, if x > 0.0 { 1 } else { 0 }));
        }
        std::fs::write(&data_path, csv).unwrap();
        let text = format!(
            r#"
seed = 3
output = "{}/csv"
timing = "none"

[target]
family = "logreg-csv"
path = "{}"
test_fraction = 0.25

[kernel]
variant = "rbf"
bandwidth = 1.0

[method]
name = "svgd"
n_particles = 5
iterations = 50
learning_rate = 0.05
"#,
            dir.path().display(),
            data_path.display()
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.table.rows.len(), 1);
        assert!(out.table.rows[0].test_metric.is_some());
    }
}
