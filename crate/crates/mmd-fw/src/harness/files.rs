//! On-disk formats.
//!
//! Result tables are CSV with the fixed header
//! `iteration,n_particles,mmd2,ksd,theorem1_residual,test_metric,wallclock_ms`;
//! absent values are empty cells. Particle files carry one metadata comment
//! line (`# mmdfw-particles dim=.. kernel=.. seed=.. step_rule=..`) followed
//! by a CSV table `index,weight,x0..x{d-1}`. Floats are printed in Rust's
//! shortest round-trip notation, so parsing a file recovers the exact bits
//! that were written. All writes go through a temp file plus rename, so an
//! interrupted run never leaves a truncated file at the final path.

use std::io::Write;
use std::path::Path;

use crate::discrepancy::WeightedParticles;
use crate::kernels::KernelSpec;

use super::HarnessError;

/// Shortest round-trip decimal rendering.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn parse_f64(s: &str) -> Result<f64, HarnessError> {
    s.parse::<f64>()
        .map_err(|_| HarnessError::Format(format!("bad float: {s:?}")))
}

/// Write through a sibling temp file and rename into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| HarnessError::Io(format!("mkdir {}: {e}", parent.display())))?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)
            .map_err(|e| HarnessError::Io(format!("create {}: {e}", tmp.display())))?;
        f.write_all(bytes)
            .map_err(|e| HarnessError::Io(format!("write {}: {e}", tmp.display())))?;
        f.sync_all()
            .map_err(|e| HarnessError::Io(format!("sync {}: {e}", tmp.display())))?;
    }
    std::fs::rename(&tmp, path)
        .map_err(|e| HarnessError::Io(format!("rename to {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Result tables
// ---------------------------------------------------------------------------

pub const RESULT_HEADER: &str =
    "iteration,n_particles,mmd2,ksd,theorem1_residual,test_metric,wallclock_ms";

#[derive(Debug, Clone, Default)]
pub struct ResultRow {
    pub iteration: usize,
    pub n_particles: usize,
    pub mmd2: Option<f64>,
    pub ksd: Option<f64>,
    pub theorem1_residual: Option<f64>,
    pub test_metric: Option<f64>,
    pub wallclock_ms: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    /// Render to CSV. A failure message becomes a trailing marker line so
    /// partial results stay distinguishable from completed runs.
    pub fn to_csv(&self, failure: Option<&str>) -> String {
        let mut out = String::from(RESULT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let opt = |v: &Option<f64>| v.map(fmt_f64).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iteration,
                r.n_particles,
                opt(&r.mmd2),
                opt(&r.ksd),
                opt(&r.theorem1_residual),
                opt(&r.test_metric),
                r.wallclock_ms.map(|v| v.to_string()).unwrap_or_default(),
            ));
        }
        if let Some(msg) = failure {
            out.push_str(&format!("# run-failed: {}\n", msg.replace('\n', " ")));
        }
        out
    }

    pub fn write(&self, path: &Path, failure: Option<&str>) -> Result<(), HarnessError> {
        atomic_write(path, self.to_csv(failure).as_bytes())
    }
}

// ---------------------------------------------------------------------------
// Particle files
// ---------------------------------------------------------------------------

/// The weight rule stored alongside a particle sequence; prefix evaluation
/// replays weights with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoredStepRule {
    Uniform,
    Constant,
    LineSearch,
    EmpiricalBq,
}

impl StoredStepRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            StoredStepRule::Uniform => "uniform",
            StoredStepRule::Constant => "constant",
            StoredStepRule::LineSearch => "line-search",
            StoredStepRule::EmpiricalBq => "empirical-bq",
        }
    }

    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "uniform" => Ok(StoredStepRule::Uniform),
            "constant" => Ok(StoredStepRule::Constant),
            "line-search" => Ok(StoredStepRule::LineSearch),
            "empirical-bq" => Ok(StoredStepRule::EmpiricalBq),
            other => Err(HarnessError::Format(format!("unknown step rule {other:?}"))),
        }
    }
}

/// Canonical kernel string for file metadata.
pub fn render_kernel(kernel: &KernelSpec) -> String {
    match kernel {
        KernelSpec::Rbf { bandwidth } => format!("rbf:bandwidth={}", fmt_f64(*bandwidth)),
        KernelSpec::Imq { alpha, beta } => {
            format!("imq:alpha={},beta={}", fmt_f64(*alpha), fmt_f64(*beta))
        }
        KernelSpec::InvLog { alpha } => format!("inv-log:alpha={}", fmt_f64(*alpha)),
        KernelSpec::ImqScore { alpha, beta, .. } => {
            format!("imq-score:alpha={},beta={}", fmt_f64(*alpha), fmt_f64(*beta))
        }
        KernelSpec::Rff(r) => format!(
            "rff:bandwidth={},features={},seed={},dim={}",
            fmt_f64(r.bandwidth),
            r.num_features,
            r.seed,
            r.dim
        ),
    }
}

/// Parse a kernel string; `"none"` means no kernel recorded. The score
/// kernel cannot be rebuilt from a string because it binds a target.
pub fn parse_kernel(s: &str) -> Result<Option<KernelSpec>, HarnessError> {
    if s == "none" {
        return Ok(None);
    }
    let (name, rest) = s.split_once(':').unwrap_or((s, ""));
    let mut fields = std::collections::BTreeMap::new();
    for pair in rest.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| HarnessError::Format(format!("bad kernel field {pair:?}")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<&String, HarnessError> {
        fields
            .get(k)
            .ok_or_else(|| HarnessError::Format(format!("kernel string missing field {k:?}")))
    };
    let kernel = match name {
        "rbf" => KernelSpec::rbf(parse_f64(get("bandwidth")?)?),
        "imq" => KernelSpec::imq(parse_f64(get("alpha")?)?, parse_f64(get("beta")?)?),
        "inv-log" => KernelSpec::inv_log(parse_f64(get("alpha")?)?),
        "rff" => {
            let bandwidth = parse_f64(get("bandwidth")?)?;
            let features = get("features")?
                .parse::<usize>()
                .map_err(|_| HarnessError::Format("bad rff feature count".into()))?;
            let seed = get("seed")?
                .parse::<u64>()
                .map_err(|_| HarnessError::Format("bad rff seed".into()))?;
            let dim = get("dim")?
                .parse::<usize>()
                .map_err(|_| HarnessError::Format("bad rff dim".into()))?;
            KernelSpec::rff(bandwidth, features, seed, dim)
        }
        "imq-score" => {
            return Err(HarnessError::Format(
                "the score kernel binds a target and cannot be rebuilt from a file".into(),
            ))
        }
        other => return Err(HarnessError::Format(format!("unknown kernel {other:?}"))),
    };
    kernel.map(Some).map_err(|e| HarnessError::Format(e.to_string()))
}

#[derive(Debug, Clone)]
pub struct ParticleFile {
    pub dim: usize,
    pub kernel: String,
    pub seed: u64,
    pub step_rule: StoredStepRule,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

pub fn render_particles(
    particles: &WeightedParticles,
    kernel: Option<&KernelSpec>,
    seed: u64,
    step_rule: StoredStepRule,
) -> String {
    let d = particles.dim();
    let kernel_str = kernel.map(render_kernel).unwrap_or_else(|| "none".into());
    let mut out = format!(
        "# mmdfw-particles dim={} kernel={} seed={} step_rule={}\n",
        d,
        kernel_str,
        seed,
        step_rule.as_str()
    );
    out.push_str("index,weight");
    for i in 0..d {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for (i, (p, w)) in particles.points().iter().zip(particles.weights()).enumerate() {
        out.push_str(&format!("{i},{}", fmt_f64(*w)));
        for v in p {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_particles(
    path: &Path,
    particles: &WeightedParticles,
    kernel: Option<&KernelSpec>,
    seed: u64,
    step_rule: StoredStepRule,
) -> Result<(), HarnessError> {
    atomic_write(path, render_particles(particles, kernel, seed, step_rule).as_bytes())
}

pub fn read_particles(path: &Path) -> Result<ParticleFile, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Io(format!("read {}: {e}", path.display())))?;
    parse_particles(&text)
}

pub fn parse_particles(text: &str) -> Result<ParticleFile, HarnessError> {
    let mut lines = text.lines();
    let meta = lines
        .next()
        .ok_or_else(|| HarnessError::Format("empty particle file".into()))?;
    let meta = meta
        .strip_prefix("# mmdfw-particles ")
        .ok_or_else(|| HarnessError::Format("missing particle metadata line".into()))?;
    let mut dim = None;
    let mut kernel = None;
    let mut seed = None;
    let mut step_rule = None;
    for field in meta.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| HarnessError::Format(format!("bad metadata field {field:?}")))?;
        match k {
            "dim" => {
                dim = Some(v.parse::<usize>().map_err(|_| {
                    HarnessError::Format(format!("bad dim {v:?}"))
                })?)
            }
            "kernel" => kernel = Some(v.to_string()),
            "seed" => {
                seed = Some(v.parse::<u64>().map_err(|_| {
                    HarnessError::Format(format!("bad seed {v:?}"))
                })?)
            }
            "step_rule" => step_rule = Some(StoredStepRule::parse(v)?),
            other => {
                return Err(HarnessError::Format(format!(
                    "unknown metadata field {other:?}"
                )))
            }
        }
    }
    let dim = dim.ok_or_else(|| HarnessError::Format("metadata missing dim".into()))?;
    let kernel = kernel.ok_or_else(|| HarnessError::Format("metadata missing kernel".into()))?;
    let seed = seed.ok_or_else(|| HarnessError::Format("metadata missing seed".into()))?;
    let step_rule =
        step_rule.ok_or_else(|| HarnessError::Format("metadata missing step_rule".into()))?;

    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Format("missing particle header".into()))?;
    let mut expect = String::from("index,weight");
    for i in 0..dim {
        expect.push_str(&format!(",x{i}"));
    }
    if header != expect {
        return Err(HarnessError::Format(format!(
            "particle header {header:?} does not match dim={dim}"
        )));
    }

    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != dim + 2 {
            return Err(HarnessError::Format(format!(
                "row {} has {} cells, expected {}",
                lineno,
                cells.len(),
                dim + 2
            )));
        }
        let idx: usize = cells[0]
            .parse()
            .map_err(|_| HarnessError::Format(format!("bad index {:?}", cells[0])))?;
        if idx != points.len() {
            return Err(HarnessError::Format(format!(
                "row index {idx} out of order at line {lineno}"
            )));
        }
        weights.push(parse_f64(cells[1])?);
        let mut p = Vec::with_capacity(dim);
        for c in &cells[2..] {
            p.push(parse_f64(c)?);
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(HarnessError::Format("particle file has no rows".into()));
    }
    Ok(ParticleFile {
        dim,
        kernel,
        seed,
        step_rule,
        points,
        weights,
    })
}
