use std::fs;

use mfbnn::config::{Profile, RunConfig};
use mfbnn::pipeline;
use mfbnn::suites;
use mfbnn::{Error, Stage};

const TINY: &str = r#"
seed = 5
[data]
generator = "inv1d"
lofi_count = 40
[pipeline.map]
steps = 300
[pipeline.vi]
steps = 300
[pipeline.hmc]
burn_in = 60
samples = 30
leapfrog_steps = 10
[eval]
points = 50
"#;

#[test]
fn tiny_run_writes_every_artifact_and_reloads() {
    let config = RunConfig::from_toml(TINY, Some(Profile::Desk)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = suites::execute(&config, dir.path()).unwrap();
    for f in [
        "predictions.csv",
        "predictions_f.csv",
        "exact.csv",
        "metrics.csv",
        "manifest.json",
        "samples.bin",
        "lowfi.bin",
        "lowfi_log.csv",
        "vi_log.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    assert!(report.get("k_mean").is_some());
    assert!(report.get("rmse_f").is_some());

    let text = fs::read_to_string(dir.path().join("predictions.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x,mean,std");
    assert_eq!(text.lines().count(), 51);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], config.hash().unwrap());
    assert_eq!(manifest["thinning"], 1);
    assert_eq!(manifest["bands"], "epistemic");

    // Reloaded archives reproduce the written predictions exactly.
    let loaded = pipeline::load_run(dir.path()).unwrap();
    let points: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| vec![l.split(',').next().unwrap().parse().unwrap()])
        .collect();
    let preds = loaded.predictor().predict(&points).unwrap();
    let mut buf = Vec::new();
    pipeline::write_predictions(&mut buf, &preds, &[]).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), text);
}

#[test]
fn same_seed_gives_identical_outputs() {
    let config = RunConfig::from_toml(TINY, Some(Profile::Desk)).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    suites::execute(&config, a.path()).unwrap();
    suites::execute(&config, b.path()).unwrap();
    for f in ["predictions.csv", "predictions_f.csv", "metrics.csv", "samples.bin"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let mut other = config.clone();
    other.seed = 6;
    let c = tempfile::tempdir().unwrap();
    suites::execute(&other, c.path()).unwrap();
    assert_ne!(
        fs::read(a.path().join("predictions.csv")).unwrap(),
        fs::read(c.path().join("predictions.csv")).unwrap()
    );
}

#[test]
fn empty_high_fidelity_data_fail_at_the_variational_stage() {
    let mut config = RunConfig::from_toml(TINY, Some(Profile::Desk)).unwrap();
    config.data.hifi_u_count = Some(0);
    config.data.hifi_f_count = Some(0);
    config.data.boundary_per_facet = Some(0);
    let dir = tempfile::tempdir().unwrap();
    let err = suites::execute(&config, dir.path()).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::VariationalPrior), "{err}");
    assert!(matches!(err, Error::Stage { .. }));
}
