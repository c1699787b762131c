//! End-to-end tests driving the compiled binary: exit codes, text output,
//! the pinned JSON report schema, and generation determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_causaltest"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Fresh per-test scratch directory under the cargo-provided tmp root.
fn workdir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited normally")
}

fn generate_into(dir: &Path, builtin: &str, n: usize, seed: u64) -> PathBuf {
    let out = dir.join("data.csv");
    let result = bin()
        .args(["generate", "--builtin", builtin])
        .args(["--n", &n.to_string()])
        .args(["--seed", &seed.to_string()])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&result), 0, "generate failed: {}", stderr(&result));
    out
}

#[test]
fn identify_flags_unobserved_adjustment_variables() {
    let dir = workdir("identify-timing");
    let dag = dir.join("driving.dot");
    fs::write(&dag, causaltest_core::DRIVING_SIM_DAG).unwrap();

    let out = bin()
        .arg("identify")
        .arg(&dag)
        .args(["SimulationTime", "SystemTime"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("adjustment set: CARLAversion, NPCvehicles, Pedestrians"));
    assert!(text.contains("unobserved members: NPCvehicles, Pedestrians"));
    assert!(text.contains("feasible: no"));
}

#[test]
fn identify_with_no_confounding_exits_zero() {
    let dir = workdir("identify-trivial");
    let dag = dir.join("pair.dot");
    fs::write(&dag, "digraph pair { A -> B; }\n").unwrap();

    let out = bin()
        .arg("identify")
        .arg(&dag)
        .args(["A", "B"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("adjustment set: (none)"));
    assert!(text.contains("feasible: yes"));
}

#[test]
fn identify_rejects_malformed_dag_file() {
    let dir = workdir("identify-malformed");
    let dag = dir.join("broken.dot");
    fs::write(&dag, "this is not a graph\n").unwrap();

    let out = bin()
        .arg("identify")
        .arg(&dag)
        .args(["A", "B"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("error"));
}

#[test]
fn penalty_suite_passes_end_to_end() {
    let dir = workdir("suite-re1");
    fs::copy(fixture("re1.dot"), dir.join("re1.dot")).unwrap();
    fs::copy(fixture("re1_suite.toml"), dir.join("suite.toml")).unwrap();
    generate_into(&dir, "re1", 500, 7);

    let out = bin().arg("test").arg(dir.join("suite.toml")).output().unwrap();
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    let text = stdout(&out);
    for id in [
        "penalty-none",
        "penalty-red-light",
        "penalty-collisions-layout",
        "penalty-collisions-vehicle",
        "penalty-collisions-pedestrian",
    ] {
        assert!(text.contains(&format!("{id}: PASS")), "missing line for {id} in:\n{text}");
    }
    assert!(text.contains("summary: 5 PASS, 0 FAIL, 0 INSUFFICIENT_DATA, 0 INFEASIBLE"));
}

#[test]
fn planted_version_effect_fails_null_oracle() {
    let dir = workdir("suite-re2");
    fs::copy(fixture("re2.dot"), dir.join("re2.dot")).unwrap();
    fs::copy(fixture("re2_suite.toml"), dir.join("suite.toml")).unwrap();
    generate_into(&dir, "re2-effect", 2000, 3);

    let out = bin().arg("test").arg(dir.join("suite.toml")).output().unwrap();
    assert_eq!(code(&out), 1, "{}{}", stdout(&out), stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("version-no-effect: FAIL"));
    assert!(text.contains("1 FAIL"));
}

#[test]
fn suite_omitting_required_interaction_is_infeasible() {
    let dir = workdir("suite-re1-biased");
    fs::copy(fixture("re1.dot"), dir.join("re1.dot")).unwrap();
    fs::copy(fixture("re1_biased_suite.toml"), dir.join("suite.toml")).unwrap();
    generate_into(&dir, "re1", 500, 7);

    let out = bin().arg("test").arg(dir.join("suite.toml")).output().unwrap();
    assert_eq!(code(&out), 3, "{}{}", stdout(&out), stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("no-interaction: INFEASIBLE"));
    assert!(text.contains("required interaction"));
}

/// Strips run-dependent values: wall time and the directory part of input
/// paths. Digests stay, pinned by the seeded generator.
fn canonicalize(report: &mut serde_json::Value) {
    report["wall_time_ms"] = 0.into();
    for input in report["inputs"].as_array_mut().expect("inputs array") {
        let name = Path::new(input["path"].as_str().expect("path string"))
            .file_name()
            .unwrap()
            .to_str()
            .unwrap()
            .to_string();
        input["path"] = name.into();
    }
}

/// The JSON report is schema-versioned and stable: everything except wall
/// time and absolute paths must match the golden file byte for byte.
/// Regenerate with CLI_BLESS=1 after intentional schema changes.
#[test]
fn json_report_matches_golden_file() {
    let dir = workdir("suite-golden");
    fs::copy(fixture("re1.dot"), dir.join("re1.dot")).unwrap();
    fs::copy(fixture("re1_suite.toml"), dir.join("suite.toml")).unwrap();
    generate_into(&dir, "re1", 500, 7);

    let out = bin()
        .args(["test", "--format", "json"])
        .arg(dir.join("suite.toml"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));

    let mut actual: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    canonicalize(&mut actual);
    let rendered = format!("{}\n", serde_json::to_string_pretty(&actual).unwrap());

    let golden_path = fixture("re1_report.golden.json");
    if std::env::var_os("CLI_BLESS").is_some() {
        fs::write(&golden_path, &rendered).unwrap();
    }
    let golden = fs::read_to_string(&golden_path).expect("golden file; bless with CLI_BLESS=1");
    assert_eq!(rendered, golden, "JSON report drifted from the pinned schema");
}

#[test]
fn generation_is_byte_identical_across_runs() {
    let dir = workdir("generate-determinism");
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    for out in [&a, &b] {
        let result = bin()
            .args(["generate", "--builtin", "fig1", "--n", "1000", "--seed", "42", "--out"])
            .arg(out)
            .output()
            .unwrap();
        assert_eq!(code(&result), 0, "{}", stderr(&result));
    }
    let bytes_a = fs::read(&a).unwrap();
    assert_eq!(bytes_a, fs::read(&b).unwrap(), "same flags must give identical bytes");

    let text = String::from_utf8(bytes_a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("U,Z,X,Y"));
    assert_eq!(lines.count(), 1000);

    let dropped = dir.join("observed.csv");
    let result = bin()
        .args(["generate", "--builtin", "fig1", "--n", "1000", "--seed", "42"])
        .args(["--drop-unobserved", "--out"])
        .arg(&dropped)
        .output()
        .unwrap();
    assert_eq!(code(&result), 0, "{}", stderr(&result));
    let text = fs::read_to_string(&dropped).unwrap();
    assert_eq!(text.lines().next(), Some("Z,X,Y"), "hidden column must be gone");
}

#[test]
fn unknown_builtin_is_config_error() {
    let out = bin()
        .args(["generate", "--builtin", "nonesuch"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nonesuch"));
}

#[test]
fn estimate_needs_instrument_once_confounders_are_hidden() {
    let dir = workdir("estimate-re3");
    let dag = dir.join("re3.dot");
    fs::write(
        &dag,
        "digraph re3 {\n\
           NPCvehicles [unobserved=true];\n\
           Pedestrians [unobserved=true];\n\
           RouteLength -> SimulationTime;\n\
           CARLAversion -> SimulationTime;\n\
           CARLAversion -> SystemTime;\n\
           NPCvehicles -> SimulationTime;\n\
           NPCvehicles -> SystemTime;\n\
           Pedestrians -> SimulationTime;\n\
           Pedestrians -> SystemTime;\n\
           SimulationTime -> SystemTime;\n\
         }\n",
    )
    .unwrap();
    let data = dir.join("data.csv");
    let result = bin()
        .args(["generate", "--builtin", "re3", "--n", "800", "--seed", "5"])
        .args(["--drop-unobserved", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    assert_eq!(code(&result), 0, "{}", stderr(&result));

    let shared = |cmd: &mut Command| {
        cmd.arg("estimate")
            .arg("--dag")
            .arg(&dag)
            .arg("--data")
            .arg(&data)
            .args(["--treatment", "SimulationTime", "--outcome", "SystemTime"]);
    };

    let mut ols = bin();
    shared(&mut ols);
    let out = ols
        .args(["--term", "intercept", "--term", "SimulationTime", "--term", "CARLAversion"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 3, "{}{}", stdout(&out), stderr(&out));
    assert!(stdout(&out).contains("status: INFEASIBLE"));

    let mut iv = bin();
    shared(&mut iv);
    let out = iv
        .args(["--instrument", "RouteLength", "--group-by", "CARLAversion"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("status: OK"));
    assert!(text.contains("CARLAversion = 0.9.10: effect"));
    assert!(text.contains("CARLAversion = 0.9.11: effect"));
}
