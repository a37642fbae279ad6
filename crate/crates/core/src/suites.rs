//! Executes run configurations and the named benchmark suites.
//!
//! Outputs of a `predict`-mode run (all CSVs with header rows):
//!
//! - `predictions.csv`: `x` (or `x1..xd`), `mean`, `std` of `u` on the evaluation points
//! - `predictions_f.csv`: same for the forcing (inverse problems)
//! - `exact.csv`: exact `u` (and `f`) on the same points (generator data only)
//! - `metrics.csv`: `name,value`
//! - `single/predictions.csv`: single-fidelity ablation, when enabled
//! - `samples.bin`, `lowfi.bin`, `lowfi_log.csv`, `vi_log.csv`, `manifest.json`
//!
//! `active` mode additionally writes `active.csv` (one row per round) and the
//! final round's artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::active::{self, BenchmarkOracle, Evaluation};
use crate::config::{Mode, Profile, RunConfig};
use crate::data::{self, BiFidelityDataset};
use crate::error::{Error, Result, Stage, StageExt};
use crate::metrics;
use crate::pipeline::{self, Fidelity, MbnnRun, PipelineConfig, StageSeeds};
use crate::physics::ProblemSpec;
use crate::seed::derive_seed;

pub const SUITES: [&str; 6] = ["fn1d", "fn4d", "inv1d", "inv2d", "active-fn", "active-inv"];

/// The configuration a named suite runs with.
pub fn preset(name: &str, profile: Profile, seed: u64) -> Result<RunConfig> {
    let text = match name {
        "fn1d" => "[data]\ngenerator = \"fn1d-sinsq\"\n",
        "fn4d" => "[data]\ngenerator = \"fn4d\"\n[eval]\nablation = true\n",
        "inv1d" => "[data]\ngenerator = \"inv1d\"\n",
        "inv2d" => "[data]\ngenerator = \"inv2d\"\n",
        "active-fn" => {
            "mode = \"active\"\n\
             [data]\ngenerator = \"fn1d-sinsq\"\nhifi_u_count = 10\n\
             hifi_u_layout = { random-split = { cut = 0.44, above = 2 } }\n\
             [active]\nmax_rounds = 7\nstop_rule = true\n"
        }
        "active-inv" => {
            "mode = \"active\"\n\
             [data]\ngenerator = \"inv1d\"\nlofi_count = 100\nhifi_u_count = 3\nhifi_f_count = 10\nboundary_per_facet = 0\n\
             [pipeline.vi]\nlearn_sigma = false\ninitial_sigma = 1.4\n\
             [active]\nmax_rounds = 5\nstop_rule = false\n"
        }
        other => {
            return Err(Error::config(format!(
                "unknown suite '{other}' (expected one of {})",
                SUITES.join(", ")
            )))
        }
    };
    let mut c = RunConfig::from_toml(text, Some(profile))?;
    c.seed = seed;
    Ok(c)
}

/// Named scalar results of a run, in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Report {
    pub metrics: Vec<(String, f64)>,
}

impl Report {
    fn push(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "name,value")?;
        for (n, v) in &self.metrics {
            writeln!(w, "{n},{v}")?;
        }
        Ok(())
    }

    /// Two-column text table.
    pub fn table(&self) -> String {
        let width = self.metrics.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
        self.metrics
            .iter()
            .map(|(n, v)| format!("{n:<width$}  {v}\n"))
            .collect()
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    profile: &'static str,
    seed: u64,
    data_seed: u64,
    config_hash: String,
    config: &'a RunConfig,
    stage_seeds: Option<StageSeeds>,
    sigma: Option<f64>,
    acceptance_rate: Option<f64>,
    final_step: Option<f64>,
    divergences: Option<usize>,
    thinning: usize,
    prediction_std: &'static str,
    bands: &'static str,
    metrics: &'a [(String, f64)],
    rounds: Option<&'a [active::RoundRecord]>,
}

fn load_data(config: &RunConfig, problem: &ProblemSpec) -> Result<BiFidelityDataset> {
    let ds = match config.generator_spec() {
        Some(spec) => data::generate(&spec)?,
        None => data::load_bifidelity_csv(&config.csv_paths())?,
    };
    if ds.dim != problem.dim() {
        return Err(Error::config(format!(
            "data have dimension {}, problem has {}",
            ds.dim,
            problem.dim()
        )));
    }
    Ok(ds)
}

fn evaluation(config: &RunConfig, problem: &ProblemSpec) -> (Vec<Vec<f64>>, Option<Evaluation>) {
    let points = data::evaluation_points(&problem.bounds, config.eval.points, config.seed);
    let truth = config.data.generator.map(|b| {
        let k = config.generator_spec().map_or(1.0, |g| g.true_k);
        Evaluation::from_benchmark(b, points.clone(), k)
    });
    (points, truth)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Predictions, exact values and metrics of one fitted run.
fn evaluate_run(
    run: &MbnnRun,
    dir: &Path,
    points: &[Vec<f64>],
    truth: Option<&Evaluation>,
    data: &BiFidelityDataset,
    report: &mut Report,
    suffix: &str,
) -> Result<()> {
    let pred = run.predictor();
    let u = pred.predict(points)?;
    pipeline::write_predictions(create(&dir.join("predictions.csv"))?, &u, &[])?;
    let f = if run.problem.is_inverse() {
        let f = pred.predict_f(points)?;
        pipeline::write_predictions(create(&dir.join("predictions_f.csv"))?, &f, &[])?;
        Some(f)
    } else {
        None
    };
    let name = |n: &str| format!("{n}{suffix}");
    let mean_u: Vec<f64> = u.iter().map(|p| p.mean).collect();
    let std_u: Vec<f64> = u.iter().map(|p| p.std).collect();
    report.push(name("sigma"), run.prior.sigma);
    report.push(name("acceptance_rate"), run.samples.acceptance_rate);
    report.push(name("hmc_step"), run.samples.final_step);
    report.push(name("divergences"), run.samples.divergences as f64);
    if let Some(lf) = &run.lowfi {
        report.push(name("lowfi_final_loss"), lf.final_loss);
    }
    report.push(name("max_std_u"), std_u.iter().copied().fold(0.0, f64::max));
    // Mean predictive std at the high-fidelity u sensors.
    let sensors: Vec<Vec<f64>> = data.hifi_u.iter().map(|o| o.x.clone()).collect();
    if !sensors.is_empty() {
        let at = pred.predict(&sensors)?;
        report.push(name("mean_std_at_sensors"), at.iter().map(|p| p.std).sum::<f64>() / at.len() as f64);
    }
    for l in pred.lambda_summaries() {
        report.push(name(&format!("{}_mean", l.name)), l.mean);
        report.push(name(&format!("{}_std", l.name)), l.std);
    }
    if let Some(ev) = truth {
        report.push(name("rmse_u"), metrics::rmse(&ev.exact_u, &mean_u)?);
        report.push(name("picp_u"), metrics::picp(&ev.exact_u, &mean_u, &std_u)?);
        report.push(name("e_u"), metrics::error_e(&ev.exact_u, &mean_u)?);
        if let (Some(f), Some(exact_f)) = (&f, &ev.exact_f) {
            let mean_f: Vec<f64> = f.iter().map(|p| p.mean).collect();
            let std_f: Vec<f64> = f.iter().map(|p| p.std).collect();
            report.push(name("rmse_f"), metrics::rmse(exact_f, &mean_f)?);
            report.push(name("picp_f"), metrics::picp(exact_f, &mean_f, &std_f)?);
            report.push(name("e_f"), metrics::error_e(exact_f, &mean_f)?);
        }
    }
    Ok(())
}

fn write_exact(dir: &Path, ev: &Evaluation) -> Result<()> {
    let mut w = create(&dir.join("exact.csv"))?;
    let dim = ev.points.first().map_or(1, Vec::len);
    let mut header: Vec<String> = if dim == 1 {
        vec!["x".into()]
    } else {
        (1..=dim).map(|i| format!("x{i}")).collect()
    };
    header.push("u".into());
    if ev.exact_f.is_some() {
        header.push("f".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for (i, x) in ev.points.iter().enumerate() {
        let mut row: Vec<String> = x.iter().map(f64::to_string).collect();
        row.push(ev.exact_u[i].to_string());
        if let Some(f) = &ev.exact_f {
            row.push(f[i].to_string());
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

fn write_manifest(
    dir: &Path,
    config: &RunConfig,
    run: Option<&MbnnRun>,
    report: &Report,
    rounds: Option<&[active::RoundRecord]>,
) -> Result<()> {
    let m = Manifest {
        tool: "mfbnn",
        version: env!("CARGO_PKG_VERSION"),
        profile: config.profile.name(),
        seed: config.seed,
        data_seed: derive_seed(config.seed, "data"),
        config_hash: config.hash()?,
        config,
        stage_seeds: run.map(|r| r.seeds),
        sigma: run.map(|r| r.prior.sigma),
        acceptance_rate: run.map(|r| r.samples.acceptance_rate),
        final_step: run.map(|r| r.samples.final_step),
        divergences: run.map(|r| r.samples.divergences),
        thinning: 1,
        prediction_std: "population",
        bands: "epistemic",
        metrics: &report.metrics,
        rounds,
    };
    let mut w = create(&dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut w, &m)?;
    writeln!(w)?;
    Ok(())
}

/// Runs `config`, writing every artifact under `out`.
pub fn execute(config: &RunConfig, out: &Path) -> Result<Report> {
    config.validate()?;
    fs::create_dir_all(out)?;
    let problem = config.problem().in_stage(Stage::Data)?;
    let data = load_data(config, &problem).in_stage(Stage::Data)?;
    let (points, truth) = evaluation(config, &problem);
    if let Some(ev) = &truth {
        write_exact(out, ev)?;
    }
    let mut report = Report::default();
    match config.mode {
        Mode::Predict => {
            let run = pipeline::run_mbnn(&problem, &data, &config.pipeline, config.seed)?;
            run.persist(out)?;
            evaluate_run(&run, out, &points, truth.as_ref(), &data, &mut report, "")?;
            if config.eval.ablation && config.pipeline.fidelity == Fidelity::Multi {
                let single_dir = out.join("single");
                fs::create_dir_all(&single_dir)?;
                let sf = PipelineConfig {
                    fidelity: Fidelity::Single,
                    ..config.pipeline.clone()
                };
                let sf_run = pipeline::run_mbnn(&problem, &data, &sf, derive_seed(config.seed, "single-fidelity"))?;
                sf_run.persist(&single_dir)?;
                evaluate_run(&sf_run, &single_dir, &points, truth.as_ref(), &data, &mut report, "_single")?;
            }
            report.write_csv(create(&out.join("metrics.csv"))?)?;
            write_manifest(out, config, Some(&run), &report, None)?;
        }
        Mode::Active => {
            let b = config
                .data
                .generator
                .ok_or_else(|| Error::config("active mode needs a generator"))?;
            let g = config.generator_spec().expect("generator present");
            let mut oracle = BenchmarkOracle::new(b, g.hifi_u_noise, g.hifi_f_noise, g.true_k, derive_seed(config.seed, "oracle"));
            let state = active::run_active(
                &problem,
                data.clone(),
                None,
                &mut oracle,
                &config.pipeline,
                &config.active,
                truth.as_ref(),
                config.seed,
            )?;
            active::write_history(create(&out.join("active.csv"))?, problem.dim(), &state.history)?;
            let first = state.history.first();
            let last = state.history.last();
            report.push("rounds", state.history.len() as f64);
            report.push("added_points", state.added() as f64);
            report.push("stopped", f64::from(u8::from(state.stopped())));
            if let (Some(f), Some(l)) = (first, last) {
                report.push("max_var_u_first", f.max_var_u);
                report.push("max_var_u_last", l.max_var_u);
                for (tag, r) in [("first", f), ("last", l)] {
                    if let Some(v) = r.rmse_u {
                        report.push(format!("rmse_u_{tag}"), v);
                    }
                    if let Some(v) = r.e_u {
                        report.push(format!("e_u_{tag}"), v);
                    }
                    if let Some(v) = r.e_f {
                        report.push(format!("e_f_{tag}"), v);
                    }
                    if let Some(k) = r.lambdas.first() {
                        report.push(format!("{}_mean_{tag}", k.name), k.mean);
                        report.push(format!("{}_std_{tag}", k.name), k.std);
                    }
                }
            }
            if let Some(run) = &state.last_run {
                run.persist(out)?;
                let pred = run.predictor();
                pipeline::write_predictions(create(&out.join("predictions.csv"))?, &pred.predict(&points)?, &[])?;
            }
            report.write_csv(create(&out.join("metrics.csv"))?)?;
            write_manifest(out, config, state.last_run.as_ref(), &report, Some(&state.history))?;
            if let Some(msg) = state.aborted {
                return Err(Error::Stage {
                    stage: Stage::ActiveLearning,
                    source: Box::new(Error::Oracle(msg)),
                });
            }
        }
    }
    Ok(report)
}

/// Runs a named suite under `profile` with master `seed`.
pub fn run_suite(name: &str, profile: Profile, seed: u64, out: &Path) -> Result<Report> {
    let config = preset(name, profile, seed)?;
    execute(&config, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Layout;

    #[test]
    fn every_suite_has_a_preset() {
        for s in SUITES {
            let c = preset(s, Profile::Desk, 1).unwrap();
            assert_eq!(c.seed, 1);
        }
        assert!(preset("foo", Profile::Desk, 1).is_err());
    }

    #[test]
    fn active_presets() {
        let c = preset("active-fn", Profile::Desk, 1).unwrap();
        assert_eq!(c.mode, Mode::Active);
        assert_eq!(c.data.hifi_u_layout, Some(Layout::RandomSplit { cut: 0.44, above: 2 }));
        let c = preset("active-inv", Profile::Desk, 1).unwrap();
        assert!(!c.pipeline.vi.learn_sigma);
        assert_eq!(c.pipeline.vi.initial_sigma, 1.4);
        assert_eq!(c.active.max_rounds, 5);
    }

    #[test]
    fn report_table() {
        let mut r = Report::default();
        r.push("rmse_u", 0.5);
        assert_eq!(r.get("rmse_u"), Some(0.5));
        assert_eq!(r.table(), "rmse_u  0.5\n");
    }
}
