//! Experiment configuration: one TOML document describes the target, the
//! kernel, the method, the reference sampler and the outputs. Unknown keys
//! are rejected so a typo cannot silently change an experiment.

use serde::Deserialize;

use super::HarnessError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output prefix; the runner writes `<output>.results.csv` and
    /// `<output>.particles.csv`.
    pub output: String,
    /// "real" stamps wall-clock milliseconds into the result table; "none"
    /// leaves the column empty so outputs are byte-reproducible.
    #[serde(default)]
    pub timing: Timing,
    /// Also report the kernelized Stein discrepancy per iteration.
    #[serde(default)]
    pub record_ksd: bool,
    pub target: TargetConfig,
    pub kernel: KernelConfig,
    pub method: MethodConfig,
    pub reference: Option<ReferenceConfig>,
    pub evaluation: Option<EvaluationConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Timing {
    #[default]
    Real,
    None,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub family: TargetFamily,
    /// standard-gaussian
    pub dim: Option<usize>,
    /// gaussian
    pub mean: Option<Vec<f64>>,
    pub variance: Option<f64>,
    /// gmm-ring
    pub ring: Option<usize>,
    pub radius: Option<f64>,
    pub center: Option<bool>,
    /// gmm (explicit): covariances are flattened row-major d×d blocks
    pub weights: Option<Vec<f64>>,
    pub means: Option<Vec<Vec<f64>>>,
    pub covariances: Option<Vec<Vec<f64>>>,
    /// synthetic-logreg / synthetic-bnn
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub data_seed: Option<u64>,
    pub test_fraction: Option<f64>,
    /// logreg-csv
    pub path: Option<String>,
    /// synthetic-bnn
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetFamily {
    StandardGaussian,
    Gaussian,
    GmmRing,
    Gmm,
    SyntheticLogreg,
    LogregCsv,
    SyntheticBnn,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub variant: KernelVariant,
    pub bandwidth: Option<BandwidthConfig>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub num_features: Option<usize>,
    pub feature_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelVariant {
    Rbf,
    Imq,
    InvLog,
    ImqScore,
    Rff,
}

/// A fixed bandwidth or the median trick over the reference samples.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum BandwidthConfig {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: MethodName,
    pub n_particles: usize,
    /// mmd-fw family
    pub step_rule: Option<StepRuleConfig>,
    pub lmo_iterations: Option<usize>,
    pub learning_rate: Option<f64>,
    pub restarts: Option<usize>,
    pub init: Option<InitConfig>,
    pub map_iterations: Option<usize>,
    pub init_policy: Option<InitPolicyName>,
    pub box_lower: Option<Vec<f64>>,
    pub box_upper: Option<Vec<f64>>,
    pub blocks: Option<Vec<Vec<usize>>>,
    /// cache-mmd-fw: the SVGD pre-run that fills the cache
    pub svgd_particles: Option<usize>,
    pub svgd_iterations: Option<usize>,
    pub svgd_learning_rate: Option<f64>,
    /// svgd
    pub iterations: Option<usize>,
    pub bandwidth_policy: Option<BandwidthPolicyName>,
    pub optimizer: Option<OptimizerName>,
    /// stein-points
    pub candidates: Option<usize>,
    pub proposal_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    MmdFw,
    CacheMmdFw,
    Svgd,
    SteinPoints,
    Herding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRuleConfig {
    Constant,
    LineSearch,
    EmpiricalBq,
}

/// Either the literal string "map" or an explicit starting point.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum InitConfig {
    Named(String),
    Point(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitPolicyName {
    ParticleFit,
    Prior,
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthPolicyName {
    Fixed,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerName {
    Plain,
    Adam,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub kind: ReferenceKind,
    pub n_samples: Option<usize>,
    pub ref_seed: Option<u64>,
    /// hmc
    pub step_size: Option<f64>,
    pub leapfrog_steps: Option<usize>,
    pub burn_in: Option<usize>,
    pub thinning: Option<usize>,
    pub auto_tune: Option<bool>,
    /// file
    pub path: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    Hmc,
    Exact,
    File,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub metric: MetricName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricName {
    Accuracy,
    Rmse,
    LogLikelihood,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// The `[kernel]`-only document used by `mmdfw eval`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelOnlyConfig {
    pub kernel: KernelConfig,
}

/// The `[target]`-only document used by `mmdfw sample`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetOnlyConfig {
    pub target: TargetConfig,
}

/// The stand-alone HMC document used by `mmdfw sample`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmcFileConfig {
    pub seed: u64,
    pub output: String,
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub n_samples: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thinning")]
    pub thinning: usize,
    #[serde(default)]
    pub auto_tune: bool,
}

fn default_burn_in() -> usize {
    500
}

fn default_thinning() -> usize {
    1
}

impl KernelOnlyConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

impl TargetOnlyConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

impl HmcFileConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let text = r#"
seed = 7
output = "out/run"

[target]
family = "standard-gaussian"
dim = 1

[kernel]
variant = "rbf"
bandwidth = 1.0

[method]
name = "mmd-fw"
n_particles = 5
step_rule = "empirical-bq"
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.method.n_particles, 5);
        assert_eq!(cfg.timing, Timing::Real);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"
seed = 7
output = "out/run"
definitely_not_a_key = 1

[target]
family = "standard-gaussian"
dim = 1

[kernel]
variant = "rbf"
bandwidth = 1.0

[method]
name = "svgd"
n_particles = 5
"#;
        assert!(ExperimentConfig::from_toml(text).is_err());
        let nested = r#"
seed = 7
output = "out/run"

[target]
family = "standard-gaussian"
dim = 1
oops = true

[kernel]
variant = "rbf"
bandwidth = 1.0

[method]
name = "svgd"
n_particles = 5
"#;
        assert!(ExperimentConfig::from_toml(nested).is_err());
    }

    #[test]
    fn bandwidth_accepts_number_or_name() {
        let fixed: BandwidthConfig = toml::from_str::<toml::Value>("x = 0.5")
            .unwrap()
            .get("x")
            .unwrap()
            .clone()
            .try_into()
            .unwrap();
        assert_eq!(fixed, BandwidthConfig::Fixed(0.5));
        let named: BandwidthConfig = toml::from_str::<toml::Value>("x = \"median-of-reference\"")
            .unwrap()
            .get("x")
            .unwrap()
            .clone()
            .try_into()
            .unwrap();
        assert_eq!(named, BandwidthConfig::Named("median-of-reference".into()));
    }
}
