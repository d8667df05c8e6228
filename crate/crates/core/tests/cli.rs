use std::path::Path;
use std::process::{Command, Output};

fn dp_ipw(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dp-ipw"))
        .args(args)
        .args(["--out-dir", dir.to_str().unwrap()])
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = dir.join("data.csv");
    let data = data.to_str().unwrap();

    ok(&dp_ipw(dir, &["synth", "--d", "5", "--n-units", "400", "--tau", "2"]));
    let side = json(&dir.join("data.json"));
    assert_eq!(side["tau_true"], 2.0);
    assert_eq!(side["coefficients"]["a"].as_array().unwrap().len(), 5);

    ok(&dp_ipw(dir, &["fit", "--data", data, "--lambda", "0.1"]));
    let model = json(&dir.join("model.json"));
    assert_eq!(model["m_train"], 400);
    assert_eq!(model["converged"], true);

    let model_path = dir.join("model.json");
    let model_path = model_path.to_str().unwrap();
    ok(&dp_ipw(dir, &["privatize", "--model", model_path, "--epsilon", "0.5"]));
    let released = json(&dir.join("released_model.json"));
    assert!(released.get("base").is_none());
    assert_ne!(released["weights"], model["weights"]);

    let released_path = dir.join("released_model.json");
    ok(&dp_ipw(
        dir,
        &["estimate", "--data", data, "--model", released_path.to_str().unwrap(), "--trim", "0.05"],
    ));
    let est = json(&dir.join("estimate.json"));
    assert_eq!(est["estimand"], "ATE");
    assert!(est["value"].as_f64().unwrap().is_finite());

    ok(&dp_ipw(
        dir,
        &["estimate", "--data", data, "--model", model_path, "--private", "--epsilon", "0.5"],
    ));
    let est = json(&dir.join("estimate.json"));
    assert_eq!(est["stage"], "dp_wrt_all");
    assert!(est["sigma_n"].as_f64().unwrap() > 0.0);

    ok(&dp_ipw(
        dir,
        &["bound", "--data", data, "--model", model_path, "--epsilon", "0.5", "--trim", "0.05"],
    ));
    let theory = json(&dir.join("theory.json"));
    assert_eq!(theory["eta"]["kind"], "deterministic_trim");
    assert!(theory["g"]["g_value"].as_f64().is_some());
}

#[test]
fn experiment_writes_report_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "trials = 2\nepsilon_grid = [0.5]\nm_grid = [100]\nn_estimate = 100\ntau_grid = [2.0]\n[source]\nkind = \"synthetic\"\nd = 4\n",
    )
    .unwrap();
    let out = dp_ipw(tmp.path(), &["experiment", "--config", cfg.to_str().unwrap(), "--seed", "3"]);
    ok(&out);
    let report = json(&tmp.path().join("report.json"));
    assert_eq!(report["config"]["seed"], 3);
    assert_eq!(report["sweeps"][0]["cells"].as_array().unwrap().len(), 1);
    assert!(tmp.path().join("summary.csv").exists());
}

#[test]
fn failures_exit_nonzero_with_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dp_ipw(tmp.path(), &["fit", "--data", "/nonexistent/data.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error [load]"));

    ok(&dp_ipw(tmp.path(), &["synth", "--d", "2", "--n-units", "20"]));
    let model = tmp.path().join("model.json");
    std::fs::write(&model, r#"{"weights":[0.0,0.0],"lambda":0.1,"m_train":20,"converged":true,"iterations":0,"final_loss":0.0,"gradient_norm":0.0}"#).unwrap();
    let out = dp_ipw(tmp.path(), &["privatize", "--model", model.to_str().unwrap(), "--epsilon", "1.5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error [args]"));
}
