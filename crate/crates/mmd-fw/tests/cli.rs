//! End-to-end tests of the `mmdfw` binary: subcommands, file outputs and
//! exit codes (0 success, 1 config error, 2 runtime failure).

use std::path::Path;
use std::process::Command;

fn mmdfw() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mmdfw"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn run_config(dir: &Path) -> String {
    format!(
        r#"
seed = 5
output = "{}/run"
timing = "none"

[target]
family = "standard-gaussian"
dim = 2

[kernel]
variant = "rbf"
bandwidth = 1.0

[method]
name = "mmd-fw"
n_particles = 5
step_rule = "empirical-bq"
lmo_iterations = 30
restarts = 2

[reference]
kind = "exact"
n_samples = 200
ref_seed = 9
"#,
        dir.display()
    )
}

#[test]
fn run_subcommand_writes_outputs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    write(&config, &run_config(dir.path()));

    let status = mmdfw().arg("run").arg(&config).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let results = dir.path().join("run.results.csv");
    let particles = dir.path().join("run.particles.csv");
    assert!(results.exists() && particles.exists());

    let first = (std::fs::read(&results).unwrap(), std::fs::read(&particles).unwrap());
    let status = mmdfw().arg("run").arg(&config).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let second = (std::fs::read(&results).unwrap(), std::fs::read(&particles).unwrap());
    assert_eq!(first, second, "same config and seed must be byte-identical");
}

#[test]
fn sample_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let target_cfg = dir.path().join("target.toml");
    write(
        &target_cfg,
        "[target]\nfamily = \"standard-gaussian\"\ndim = 2\n",
    );
    let hmc_cfg = dir.path().join("hmc.toml");
    write(
        &hmc_cfg,
        &format!(
            "seed = 3\noutput = \"{}/gold.particles.csv\"\nstep_size = 0.2\nleapfrog_steps = 10\nn_samples = 300\nburn_in = 100\n",
            dir.path().display()
        ),
    );
    let out = mmdfw()
        .arg("sample")
        .arg(&target_cfg)
        .arg(&hmc_cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let gold = dir.path().join("gold.particles.csv");
    assert!(gold.exists());

    // Run an experiment, then evaluate its particle file against the gold
    // sample with the eval subcommand.
    let config = dir.path().join("exp.toml");
    write(&config, &run_config(dir.path()));
    assert_eq!(mmdfw().arg("run").arg(&config).status().unwrap().code(), Some(0));

    let kernel_cfg = dir.path().join("kernel.toml");
    write(&kernel_cfg, "[kernel]\nvariant = \"rbf\"\nbandwidth = 1.0\n");
    let out = mmdfw()
        .arg("eval")
        .arg(dir.path().join("run.particles.csv"))
        .arg(&gold)
        .arg(&kernel_cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mut lines = stdout.lines();
    assert!(lines.next().unwrap().starts_with("iteration,n_particles,mmd2"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5, "one row per particle prefix");
    for row in rows {
        let mmd2: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!(mmd2.is_finite() && mmd2 >= 0.0);
    }
}

#[test]
fn config_errors_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    write(&config, "seed = 1\nnot_a_field = true\n");
    let out = mmdfw().arg("run").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());

    // Missing config file is also a caller error.
    let out = mmdfw()
        .arg("run")
        .arg(dir.path().join("missing.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("blowup.toml");
    // A step size this large overflows the leapfrog trajectory, so every
    // proposal is non-finite and the sampler gives up at runtime.
    write(
        &config,
        &format!(
            r#"
seed = 5
output = "{}/x"

[target]
family = "standard-gaussian"
dim = 2

[kernel]
variant = "rbf"
bandwidth = 1.0

[method]
name = "mmd-fw"
n_particles = 2
lmo_iterations = 10
restarts = 1

[reference]
kind = "hmc"
n_samples = 50
step_size = 1e200
leapfrog_steps = 10
burn_in = 0
"#,
            dir.path().display()
        ),
    );
    let out = mmdfw().arg("run").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_rejects_malformed_particle_files() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.particles.csv");
    write(&bad, "not a particle file\n");
    let kernel_cfg = dir.path().join("kernel.toml");
    write(&kernel_cfg, "[kernel]\nvariant = \"rbf\"\nbandwidth = 1.0\n");
    let out = mmdfw()
        .arg("eval")
        .arg(&bad)
        .arg(&bad)
        .arg(&kernel_cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
