use std::path::Path;
use std::process::{Command, Output};

fn nngp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nngp")).args(args).env_remove("NNGP_THREADS").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, n: usize, extra: &[&str]) {
    let n = n.to_string();
    let mut args = vec!["simulate", "--output-dir", p(dir), "--n", &n, "--seed", "5"];
    args.extend_from_slice(extra);
    let out = nngp(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const LATENT: &str = r#"{
  "method": "latent", "n_neighbors": 8, "n_samples": 120, "seed": 4,
  "covariates": ["x1"],
  "priors": {"sigma.sq.IG": [2, 1], "tau.sq.IG": [2, 0.1], "phi.Unif": [3, 30]},
  "starting": {"phi": 6, "sigma.sq": 1, "tau.sq": 0.2},
  "tuning": {"phi": 0.5, "sigma.sq": 0.1, "tau.sq": 0.1},
  "theta.alpha": {"phi": 6, "alpha": 0.25}, "k.fold": 3, "fit.rep": true
}"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn fit_predict_diag_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, 150, &["--holdout-grid", "3"]);
    for f in ["train.csv", "holdout.csv", "truth.json", "train_w.csv"] {
        assert!(sim.join(f).exists(), "{f}");
    }
    let cfg = write_config(tmp.path(), LATENT);
    let run = tmp.path().join("run");
    let sidecar = tmp.path().join("nb.json");
    let out = nngp(&[
        "fit",
        "--input",
        p(&sim.join("train.csv")),
        "--config",
        p(&cfg),
        "--output-dir",
        p(&run),
        "--neighbor-info",
        p(&sidecar),
        "--threads",
        "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(sidecar.exists());
    for f in ["manifest.json", "samples.csv", "w_samples.bin", "neighbor_info.json", "fitted.csv", "replicates.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["method"], "latent");
    assert_eq!(manifest["input"]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["theta_names"], serde_json::json!(["sigma.sq", "tau.sq", "phi"]));
    let header = std::fs::read_to_string(run.join("samples.csv")).unwrap();
    assert!(header.starts_with("(Intercept),x1,sigma.sq,tau.sq,phi"));
    assert_eq!(header.lines().count(), 121);

    // the sidecar is reused by a second fit
    let run2 = tmp.path().join("run2");
    let out = nngp(&[
        "fit",
        "--input",
        p(&sim.join("train.csv")),
        "--config",
        p(&cfg),
        "--output-dir",
        p(&run2),
        "--neighbor-info",
        p(&sidecar),
        "--threads",
        "1",
    ]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(run.join("samples.csv")).unwrap(), std::fs::read(run2.join("samples.csv")).unwrap());

    let pred = tmp.path().join("pred");
    let out = nngp(&["predict", "--run", p(&run), "--input", p(&sim.join("holdout.csv")), "--output-dir", p(&pred)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(pred.join("predictions.csv")).unwrap();
    assert!(text.starts_with("x,y,mean,q2.5,q50,q97.5,w.mean"));
    assert_eq!(text.lines().count(), 10);
    assert!(pred.join("prediction_scores.json").exists());

    let out = nngp(&["diag", "--run", p(&run)]);
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stdout);
    for label in ["WAIC.1", "DIC", "GRS", "D"] {
        assert!(table.contains(label), "{label}");
    }
    assert!(run.join("diagnostics.json").exists());
}

#[test]
fn refused_diagnostics_and_bad_inputs_set_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, 80, &[]);
    let cfg = write_config(tmp.path(), &LATENT.replace("\"latent\"", "\"response\""));
    let run = tmp.path().join("run");
    let out = nngp(&["fit", "--input", p(&sim.join("train.csv")), "--config", p(&cfg), "--output-dir", p(&run)]);
    assert!(out.status.success());
    let out = nngp(&["diag", "--run", p(&run), "--waic"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("conditionally independent"));
    let out = nngp(&["diag", "--run", p(&run)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("refused"));

    let out =
        nngp(&["fit", "--input", p(&tmp.path().join("missing.csv")), "--config", p(&cfg), "--output-dir", p(&run)]);
    assert_eq!(out.status.code(), Some(3));
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"method": "latent", "n_samples": 10, "unknown_key": 1}"#).unwrap();
    let out = nngp(&["fit", "--input", p(&sim.join("train.csv")), "--config", p(&bad), "--output-dir", p(&run)]);
    assert_eq!(out.status.code(), Some(2));
    let out = nngp(&[
        "fit",
        "--input",
        p(&sim.join("train.csv")),
        "--config",
        p(&cfg),
        "--output-dir",
        p(&run),
        "--method",
        "binomial",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn conjugate_cv_writes_scores_and_predicts() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, 120, &["--holdout-grid", "2"]);
    let cfg = write_config(tmp.path(), LATENT);
    let grid = tmp.path().join("grid.csv");
    std::fs::write(&grid, "alpha,phi\n0.1,3\n0.25,6\n1,12\n").unwrap();
    let run = tmp.path().join("run");
    let out = nngp(&[
        "cv",
        "--input",
        p(&sim.join("train.csv")),
        "--config",
        p(&cfg),
        "--grid",
        p(&grid),
        "--output-dir",
        p(&run),
        "--score-rule",
        "crps",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scores = std::fs::read_to_string(run.join("cv_scores.csv")).unwrap();
    assert!(scores.starts_with("alpha,phi,rmspe,crps"));
    assert_eq!(scores.lines().count(), 4);
    let out = nngp(&["predict", "--run", p(&run), "--input", p(&sim.join("holdout.csv"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(run.join("predictions.csv")).unwrap();
    assert!(text.lines().next().unwrap().ends_with("location,scale,df"));
    let out = nngp(&["diag", "--run", p(&run), "--dic"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn binomial_and_variogram_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, 100, &["--trials", "4"]);
    let cfg = write_config(
        tmp.path(),
        r#"{"method": "binomial", "n_neighbors": 6, "n_samples": 60, "trials": "trials", "covariates": ["x1"],
            "priors": {"sigma.sq.IG": [2, 1], "phi.Unif": [3, 30]},
            "starting": {"phi": 6, "sigma.sq": 1}, "tuning": {"phi": 0.5, "sigma.sq": 0.1}}"#,
    );
    let run = tmp.path().join("run");
    let out = nngp(&["fit", "--input", p(&sim.join("train.csv")), "--config", p(&cfg), "--output-dir", p(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("omega_samples.bin").exists());
    let out = nngp(&["diag", "--run", p(&run), "--dic", "--waic"]);
    assert!(out.status.success());

    let vg = tmp.path().join("vg");
    let out = nngp(&["variogram", "--input", p(&sim.join("train.csv")), "--config", p(&cfg), "--output-dir", p(&vg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(vg.join("variogram.csv").exists());
    assert!(vg.join("variogram_fit.json").exists());
}
