//! End-to-end tests that drive the compiled binary.
//!
//! Each test builds its own input files in a temporary directory, so the
//! suite is hermetic: nothing here depends on files outside the crate.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qalysim"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should run")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Reads every file in a directory as (name, bytes), sorted by name.
fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .expect("output directory should exist")
        .map(|e| {
            let e = e.unwrap();
            let name = e.file_name().into_string().unwrap();
            let bytes = fs::read(e.path()).unwrap();
            (name, bytes)
        })
        .collect();
    files.sort();
    files
}

/// Writes a small three-state individual-level model: four patients, two
/// strategies, exponential transition times with fixed natural parameters.
fn write_indiv_fixture(dir: &Path) -> PathBuf {
    let w = |name: &str, body: &str| fs::write(dir.join(name), body).unwrap();
    w("strategies.csv", "strategy_id,name\n1,SOC\n2,New\n");
    w(
        "patients.csv",
        "patient_id,grp_id,weight\n1,1,1\n2,1,1\n3,2,1\n4,2,1\n",
    );
    w("states.csv", "state_id,name\n1,Stable\n2,Progressed\n");
    w("tmat.csv", ",1,2\n,,3\n,,\n");
    w("utility.csv", "state_id,dist,a\n1,fixed,0.8\n2,fixed,0.6\n");
    w(
        "drug.csv",
        "state_id,strategy_id,dist,a\n1,1,fixed,100\n2,1,fixed,100\n1,2,fixed,900\n2,2,fixed,900\n",
    );
    let config = r#"
model_type = "indiv-ctstm"
n_samples = 8
seed = 7

[context]
strategies = "strategies.csv"
patients = "patients.csv"
states = "states.csv"
tmat = "tmat.csv"

[discounting]
qalys = [0.03]
costs = [0.03]

[indiv]
clock = "reset"
max_t = 20.0
t_grid = { start = 0.0, stop = 20.0, step = 1.0 }

[[indiv.transitions]]
family = "exponential"
params = [0.3]

[[indiv.transitions]]
family = "exponential"
params = [0.05]

[[indiv.transitions]]
family = "exponential"
params = [0.4]

[values]
utility = "utility.csv"

[[values.costs]]
name = "drug"
table = "drug.csv"
"#;
    let path = dir.join("run.toml");
    fs::write(&path, config).unwrap();
    path
}

#[test]
fn simulate_is_deterministic_across_threads_and_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_indiv_fixture(tmp.path());
    let outs = [
        (tmp.path().join("a"), "1"),
        (tmp.path().join("b"), "4"),
        (tmp.path().join("c"), "2"),
    ];
    for (out_dir, threads) in &outs {
        let out = run(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(out.status.success(), "simulate failed: {}", stderr(&out));
    }
    let a = dir_contents(&outs[0].0);
    assert!(
        a.iter().any(|(n, _)| n == "disprog.csv"),
        "individual-level run should write trajectories"
    );
    for (out_dir, threads) in &outs[1..] {
        assert_eq!(
            a,
            dir_contents(out_dir),
            "outputs differ with --threads {threads}"
        );
    }
}

#[test]
fn missing_input_file_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_indiv_fixture(tmp.path());
    fs::remove_file(tmp.path().join("utility.csv")).unwrap();
    let out = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(
        msg.contains("utility.csv") && msg.contains("cannot read"),
        "stderr should name the missing file: {msg}"
    );
}

#[test]
fn unknown_model_type_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_indiv_fixture(tmp.path());
    let body = fs::read_to_string(&config)
        .unwrap()
        .replace("indiv-ctstm", "markov");
    fs::write(&config, body).unwrap();
    let out = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown model_type"));
}

#[test]
fn unconsumed_config_sections_warn_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_indiv_fixture(tmp.path());
    let mut body = fs::read_to_string(&config).unwrap();
    body.insert_str(0, "future_knob = 3\n");
    body.push_str("\n[cohort]\ntransitions = \"nowhere.csv\"\ncycle_length = 1.0\nn_cycles = 10\n");
    fs::write(&config, body).unwrap();
    let out = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "run failed: {}", stderr(&out));
    let msg = stderr(&out);
    assert!(
        msg.contains("config fields not used by model_type \"indiv-ctstm\": cohort"),
        "missing drift warning: {msg}"
    );
    assert!(
        msg.contains("unknown config fields: future_knob"),
        "missing unknown-key warning: {msg}"
    );
}

#[test]
fn unwritable_output_directory_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_indiv_fixture(tmp.path());
    // A file where a directory component should be makes create_dir_all fail
    // after validation has already passed.
    fs::write(tmp.path().join("blocker"), "").unwrap();
    let out = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("blocker/out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["simulate", "--help"]).status.code(), Some(0));
    assert_eq!(run(&["--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["simulate"]).status.code(), Some(1));
}

#[test]
fn cea_reports_the_value_of_information_from_handmade_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    fs::create_dir(&out_dir).unwrap();
    // Two strategies, two equally likely samples: strategy 1 yields 10 or 0
    // QALYs, strategy 2 yields 0 or 8, costs are zero. At k = 1 the expected
    // net benefits are 5 and 4, perfect information is worth (10 + 8) / 2 = 9,
    // so the expected value of perfect information is 4.
    fs::write(
        out_dir.join("ce_qalys.csv"),
        "dr,sample,strategy_id,grp_id,qalys\n\
         0,1,1,1,10\n0,2,1,1,0\n0,1,2,1,0\n0,2,2,1,8\n",
    )
    .unwrap();
    fs::write(
        out_dir.join("ce_costs.csv"),
        "category,dr,sample,strategy_id,grp_id,costs\n\
         total,0,1,1,1,0\ntotal,0,2,1,1,0\ntotal,0,1,2,1,0\ntotal,0,2,2,1,0\n",
    )
    .unwrap();
    let config = tmp.path().join("cea.toml");
    fs::write(
        &config,
        "[cea]\nk_grid = [1.0]\ncomparator = 1\ndr_qalys = 0.0\ndr_costs = 0.0\n",
    )
    .unwrap();
    let args = [
        "cea",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ];
    let out = run(&args);
    assert!(out.status.success(), "cea failed: {}", stderr(&out));
    let evpi = fs::read_to_string(out_dir.join("evpi.csv")).unwrap();
    assert_eq!(evpi, "k,grp_id,evpi\n1,1,4\n");
    let mce = fs::read_to_string(out_dir.join("mce.csv")).unwrap();
    assert!(
        mce.contains("1,1,1,0.5,1") && mce.contains("1,2,1,0.5,0"),
        "each strategy should win one sample: {mce}"
    );

    // A second run over the same inputs reproduces every output byte.
    let before = dir_contents(&out_dir);
    let out = run(&args);
    assert!(out.status.success(), "cea rerun failed: {}", stderr(&out));
    assert_eq!(before, dir_contents(&out_dir), "cea rerun changed outputs");
}

#[test]
fn simulate_then_cea_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_indiv_fixture(tmp.path());
    let mut body = fs::read_to_string(&config).unwrap();
    body.push_str(
        "\n[cea]\nk_grid = { start = 0.0, stop = 100000.0, step = 50000.0 }\n\
         comparator = 1\ndr_qalys = 0.03\ndr_costs = 0.03\n",
    );
    fs::write(&config, body).unwrap();
    let out_dir = tmp.path().join("out");
    for cmd in ["simulate", "cea"] {
        let out = run(&[
            cmd,
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{cmd} failed: {}", stderr(&out));
    }
    for name in ["icer.csv", "ceac.csv", "ceaf.csv", "evpi.csv", "mce.csv"] {
        assert!(out_dir.join(name).exists(), "{name} should be written");
    }
    let manifest = fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 7"));
    assert!(manifest.contains("\"config_hash\""));
}
