//! Exit-code contract of the binary: each failure class maps to a stable
//! code, and stored records survive and fail verification as designed.

use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_resembed"))
}

fn workspace_config(name: &str) -> String {
    format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn isometrize_and_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&[
        "isometrize",
        "--config",
        &workspace_config("golden.toml"),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let result = out_dir.join("result.json");
    assert!(result.exists());
    assert!(out_dir.join("run_meta.json").exists());

    let verify = run(&["verify", result.to_str().unwrap()]);
    assert_eq!(code(&verify), 0, "{}", stderr(&verify));
}

#[test]
fn simulate_writes_all_sidecar_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
schema = 1

[source]
kind = "rotation"
theta = 1.0

[observation]
kind = "coordinate"
index = 0

[reservoir]
kind = "takens"
n = 5

[run]
washout = 50
samples = 60
sync_tol = 1e-9
"#,
    );
    let out_dir = dir.path().join("run");
    let out = run(&["simulate", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for file in [
        "result.json",
        "trajectory.csv",
        "sync_curve.csv",
        "sampled_gs.json",
        "embedding_report.json",
        "run_meta.json",
    ] {
        assert!(out_dir.join(file).exists(), "{file} missing");
    }
    let verify = run(&["verify", out_dir.join("result.json").to_str().unwrap()]);
    assert_eq!(code(&verify), 0, "{}", stderr(&verify));
}

#[test]
fn sweep_writes_summary_and_cells() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
schema = 1

[source]
kind = "rotation"
theta = 1.0

[observation]
kind = "coordinate"
index = 0

[reservoir]
kind = "linear_random"
spectral_radius = 0.5

[run]
seed = 9

[sweep]
seed_count = 3
n_values = [3, 5]
"#,
    );
    let out_dir = dir.path().join("run");
    let out = run(&["sweep", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(out_dir.join("sweep_summary.csv").exists());
    assert!(out_dir.join("cells/n3_t0.json").exists());
    assert!(out_dir.join("cells/n5_t2.json").exists());
    let verify = run(&["verify", out_dir.join("result.json").to_str().unwrap()]);
    assert_eq!(code(&verify), 0, "{}", stderr(&verify));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();

    let unknown_key = write_config(
        dir.path(),
        "schema = 1\n[source]\nkind = \"scaling\"\nfactor = 2.0\nbogus = 1\n\
         [observation]\nkind = \"coordinate\"\nindex = 0\n\
         [reservoir]\nkind = \"takens\"\nn = 3\n",
    );
    let out = run(&["simulate", "--config", &unknown_key]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let missing = dir.path().join("nope.toml");
    let out = run(&["simulate", "--config", missing.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let out = bin().args(["simulate"]).output().unwrap();
    assert_eq!(code(&out), 2, "clap usage errors share the config code");
}

#[test]
fn wrong_schema_version_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "schema = 99\n[source]\nkind = \"scaling\"\nfactor = 2.0\n\
         [observation]\nkind = \"coordinate\"\nindex = 0\n\
         [reservoir]\nkind = \"takens\"\nn = 3\n",
    );
    let out = run(&["simulate", "--config", &config]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("schema"), "{}", stderr(&out));
}

#[test]
fn divergent_series_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
schema = 1

[source]
kind = "scaling"
factor = 0.5

[observation]
kind = "linear"
coefficients = [1.0]

[reservoir]
kind = "linear_matrix"
a_rows = [[0.6]]
c = [1.0]
"#,
    );
    let out = run(&["isometrize", "--config", &config]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn unobserved_eigendirection_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
schema = 1

[source]
kind = "diagonal"
entries = [2.0, 3.0]

[observation]
kind = "linear"
coefficients = [1.0, 0.0]

[reservoir]
kind = "linear_matrix"
a_rows = [[0.3, 0.0], [0.0, 0.4]]
c = [1.0, 1.0]
"#,
    );
    let out = run(&["isometrize", "--config", &config]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn repeated_eigenvalues_exit_5() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"
schema = 1

[source]
kind = "diagonal"
entries = [2.0, 2.0]

[observation]
kind = "linear"
coefficients = [1.0, 1.0]

[reservoir]
kind = "linear_matrix"
a_rows = [[0.3, 0.0], [0.0, 0.4]]
c = [1.0, 1.0]
"#,
    );
    let out = run(&["isometrize", "--config", &config]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
}

#[test]
fn no_synchronization_exits_6() {
    let out = run(&["simulate", "--config", &workspace_config("esn_no_sync.toml")]);
    assert_eq!(code(&out), 6, "{}", stderr(&out));
    assert!(stderr(&out).contains("no synchronization"), "{}", stderr(&out));
}

fn golden_record(dir: &Path) -> std::path::PathBuf {
    let out_dir = dir.join("run");
    let out = run(&[
        "isometrize",
        "--config",
        &workspace_config("golden.toml"),
        "--out",
        out_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    out_dir.join("result.json")
}

fn reseal(value: &mut serde_json::Value) {
    value["checksum"] = serde_json::Value::String(String::new());
    let bytes = serde_json::to_vec(&value).unwrap();
    let digest = hex::encode(Sha256::digest(&bytes));
    value["checksum"] = serde_json::Value::String(digest);
}

#[test]
fn tampered_record_exits_7_on_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let path = golden_record(dir.path());
    let mut value: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    value["outputs"]["isometrize"]["isometry_defect"] = 0.5f64.into();
    std::fs::write(&path, serde_json::to_vec_pretty(&value).unwrap()).unwrap();

    let out = run(&["verify", path.to_str().unwrap()]);
    assert_eq!(code(&out), 7, "{}", stderr(&out));
    assert!(stderr(&out).contains("checksum"), "{}", stderr(&out));
}

#[test]
fn resealed_false_record_exits_7_on_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let path = golden_record(dir.path());
    let mut value: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    value["outputs"]["isometrize"]["a_star"]["data"][0] = 0.9f64.into();
    reseal(&mut value);
    std::fs::write(&path, serde_json::to_vec_pretty(&value).unwrap()).unwrap();

    let out = run(&["verify", path.to_str().unwrap()]);
    assert_eq!(code(&out), 7, "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("verification failed"), "{err}");
}

#[test]
fn truncated_record_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = golden_record(dir.path());
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();

    let out = run(&["verify", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn seed_override_changes_the_stored_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = workspace_config("circle_isometry.toml");
    let run_one = dir.path().join("a");
    let run_two = dir.path().join("b");
    let out = run(&["isometrize", "--config", &config, "--out", run_one.to_str().unwrap(), "-q"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = run(&[
        "isometrize",
        "--config",
        &config,
        "--out",
        run_two.to_str().unwrap(),
        "--seed",
        "99",
        "-q",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let value = |p: &Path| -> serde_json::Value {
        serde_json::from_slice(&std::fs::read(p.join("result.json")).unwrap()).unwrap()
    };
    let a = value(&run_one);
    let b = value(&run_two);
    assert_ne!(a["config_hash"], b["config_hash"]);
    assert_eq!(b["config"]["run"]["seed"], serde_json::json!(99));

    for p in [&run_one, &run_two] {
        let out = run(&["verify", p.join("result.json").to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
}

#[test]
fn quiet_suppresses_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&[
        "isometrize",
        "--config",
        &workspace_config("golden.toml"),
        "--out",
        out_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
}
