//! End-to-end run: low-fidelity MAP fit, VI prior, HMC, predictions.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::archive;
use crate::autodiff::Graph;
use crate::data::BiFidelityDataset;
use crate::error::{Error, Result, Stage, StageExt};
use crate::hmc::{self, HmcConfig, PosteriorSamples};
use crate::linalg::Matrix;
use crate::lowfi::{self, LowFiSurrogate, MapConfig};
use crate::mlp::{self, MlpParams, MlpSpec};
use crate::physics::{residual_graph, ProblemSpec, SurrogateInputs};
use crate::posterior::{self, BnnModel, PriorSpec};
use crate::seed::derive_seed;
use crate::vi::{self, ViConfig, ViResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fidelity {
    /// Network input `(x, u~_L(x))`.
    Multi,
    /// Network input `x`, high-fidelity data only; the low-fidelity stage is skipped.
    Single,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HmcInit {
    VariationalMean,
    PriorDraw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub fidelity: Fidelity,
    pub lofi_hidden: Vec<usize>,
    pub bnn_hidden: Vec<usize>,
    pub map: MapConfig,
    /// Replace `map.alpha` by `sigma_uL^2 / N_L` computed from the data.
    pub alpha_from_noise: bool,
    pub vi: ViConfig,
    pub hmc: HmcConfig,
    pub hmc_init: HmcInit,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fidelity: Fidelity::Multi,
            lofi_hidden: vec![20, 20],
            bnn_hidden: vec![50],
            map: MapConfig::default(),
            alpha_from_noise: true,
            vi: ViConfig::default(),
            hmc: HmcConfig::default(),
            hmc_init: HmcInit::VariationalMean,
        }
    }
}

impl PipelineConfig {
    pub fn bnn_spec(&self, dim: usize) -> Result<MlpSpec> {
        let n0 = match self.fidelity {
            Fidelity::Multi => dim + 1,
            Fidelity::Single => dim,
        };
        MlpSpec::with_hidden(n0, &self.bnn_hidden)
    }

    pub fn lofi_spec(&self, dim: usize) -> Result<MlpSpec> {
        MlpSpec::with_hidden(dim, &self.lofi_hidden)
    }
}

/// Seeds handed to each stage, recorded in manifests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub lowfi_map: u64,
    pub vi_init: u64,
    pub vi: u64,
    pub hmc_init: u64,
    pub hmc: u64,
}

impl StageSeeds {
    pub fn derive(master: u64) -> Self {
        Self {
            lowfi_map: derive_seed(master, "lowfi-map"),
            vi_init: derive_seed(master, "vi-init"),
            vi: derive_seed(master, "vi"),
            hmc_init: derive_seed(master, "hmc-init"),
            hmc: derive_seed(master, "hmc"),
        }
    }
}

/// Artifacts of one run.
#[derive(Clone, Debug)]
pub struct MbnnRun {
    pub problem: ProblemSpec,
    pub lowfi: Option<LowFiSurrogate>,
    pub bnn_spec: MlpSpec,
    pub prior: PriorSpec,
    pub vi: ViResult,
    pub samples: PosteriorSamples,
    pub seeds: StageSeeds,
    pub hmc: HmcConfig,
}

/// Step 1 alone: fits the low-fidelity network.
pub fn train_lowfi(
    problem: &ProblemSpec,
    data: &BiFidelityDataset,
    config: &PipelineConfig,
    seed: u64,
) -> Result<LowFiSurrogate> {
    let spec = config.lofi_spec(problem.dim()).in_stage(Stage::LowFidelityMap)?;
    let mut map = config.map.clone();
    if config.alpha_from_noise {
        map.alpha = lowfi::alpha_from_noise(data.lofi_noise(), data.lofi.len());
    }
    let s = lowfi::train_map::<f64>(&spec, &data.lofi, &map, seed).in_stage(Stage::LowFidelityMap)?;
    info!("low-fidelity fit: loss {} -> {}", s.initial_loss, s.final_loss);
    Ok(s)
}

/// Full run from a master seed.
pub fn run_mbnn(
    problem: &ProblemSpec,
    data: &BiFidelityDataset,
    config: &PipelineConfig,
    seed: u64,
) -> Result<MbnnRun> {
    let seeds = StageSeeds::derive(seed);
    let lowfi = match config.fidelity {
        Fidelity::Multi => Some(train_lowfi(problem, data, config, seeds.lowfi_map)?),
        Fidelity::Single => None,
    };
    run_mbnn_with_lowfi(problem, data, lowfi, config, seed)
}

/// Steps 2-4 with a given (frozen) low-fidelity surrogate.
pub fn run_mbnn_with_lowfi(
    problem: &ProblemSpec,
    data: &BiFidelityDataset,
    lowfi: Option<LowFiSurrogate>,
    config: &PipelineConfig,
    seed: u64,
) -> Result<MbnnRun> {
    let seeds = StageSeeds::derive(seed);
    problem.validate().in_stage(Stage::Data)?;
    data.validate(Some(problem)).in_stage(Stage::Data)?;
    if (config.fidelity == Fidelity::Multi) != lowfi.is_some() {
        return Err(Error::config("low-fidelity surrogate must be given exactly in multi-fidelity mode"))
            .in_stage(Stage::Data);
    }
    let bnn_spec = config.bnn_spec(problem.dim()).in_stage(Stage::Data)?;
    let model = BnnModel::<f64>::new(bnn_spec.clone(), problem, lowfi.as_ref(), data)
        .in_stage(Stage::Data)?;

    if data.hifi_count() == 0 {
        return Err(Error::config("high-fidelity dataset is empty")).in_stage(Stage::VariationalPrior);
    }
    let mut init_mu = MlpParams::<f64>::init_xavier(bnn_spec.clone(), seeds.vi_init).into_flat();
    init_mu.extend(std::iter::repeat_n(0.0, problem.n_unknowns()));
    let vi = vi::fit_vi(&model, init_mu, &config.vi, seeds.vi).in_stage(Stage::VariationalPrior)?;
    let prior = PriorSpec::new(vi.sigma).in_stage(Stage::VariationalPrior)?;
    info!("variational prior scale sigma = {}", prior.sigma);

    let init = match config.hmc_init {
        HmcInit::VariationalMean => vi.params.mu.clone(),
        HmcInit::PriorDraw => prior_draw(&model, prior.sigma, seeds.hmc_init),
    };
    let sigma = prior.sigma;
    let samples = hmc::sample(
        &config.hmc,
        |theta: &[f64]| posterior::log_posterior(&model, theta, sigma),
        &init,
        problem.n_unknowns(),
        seeds.hmc,
    )
    .in_stage(Stage::Hmc)?;
    info!(
        "HMC: acceptance {:.3}, step {:.3e}, {} divergences",
        samples.acceptance_rate, samples.final_step, samples.divergences
    );
    Ok(MbnnRun {
        problem: problem.clone(),
        lowfi,
        bnn_spec,
        prior,
        vi,
        samples,
        seeds,
        hmc: config.hmc.clone(),
    })
}

fn prior_draw(model: &BnnModel<f64>, sigma: f64, seed: u64) -> Vec<f64> {
    use crate::posterior::Model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; model.dim()];
    for b in model.prior_blocks() {
        let n = Normal::new(0.0, b.std(sigma)).expect("positive prior std");
        for v in &mut out[b.offset..b.offset + b.len] {
            *v = n.sample(&mut rng);
        }
    }
    out
}

impl MbnnRun {
    pub fn predictor(&self) -> Predictor<'_> {
        Predictor {
            problem: &self.problem,
            lowfi: self.lowfi.as_ref(),
            spec: &self.bnn_spec,
            samples: &self.samples,
        }
    }

    /// Writes the surrogate snapshot, training logs and the sample archive into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        if let Some(lf) = &self.lowfi {
            mlp::write_snapshot(lf.params(), BufWriter::new(File::create(dir.join("lowfi.bin"))?))?;
            let mut w = BufWriter::new(File::create(dir.join("lowfi_log.csv"))?);
            writeln!(w, "step,loss")?;
            for (s, l) in &lf.log {
                writeln!(w, "{s},{l}")?;
            }
        }
        let mut w = BufWriter::new(File::create(dir.join("vi_log.csv"))?);
        writeln!(w, "step,objective,sigma")?;
        for (s, o, sg) in &self.vi.log {
            writeln!(w, "{s},{o},{sg}")?;
        }
        archive::write_samples(
            &self.problem,
            &self.bnn_spec,
            self.prior.sigma,
            &self.hmc,
            &self.samples,
            BufWriter::new(File::create(dir.join("samples.bin"))?),
        )
    }
}

/// A persisted run read back from disk.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub header: archive::SampleHeader,
    pub lowfi: Option<LowFiSurrogate>,
    pub bnn_spec: MlpSpec,
    pub samples: PosteriorSamples,
}

impl LoadedRun {
    pub fn predictor(&self) -> Predictor<'_> {
        Predictor {
            problem: &self.header.problem,
            lowfi: self.lowfi.as_ref(),
            spec: &self.bnn_spec,
            samples: &self.samples,
        }
    }
}

/// Reads `samples.bin` and, when present, `lowfi.bin` from `dir`.
pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let open = |name: &str| {
        File::open(dir.join(name)).map_err(|e| Error::config(format!("cannot open {}: {e}", dir.join(name).display())))
    };
    let (header, samples) = archive::read_samples(std::io::BufReader::new(open("samples.bin")?))?;
    let bnn_spec = MlpSpec::new(header.bnn_layer_widths.clone())?;
    let lowfi = if dir.join("lowfi.bin").exists() {
        Some(LowFiSurrogate::from_params(mlp::read_snapshot(std::io::BufReader::new(open("lowfi.bin")?))?))
    } else {
        None
    };
    let expected = header.problem.dim() + usize::from(lowfi.is_some());
    if bnn_spec.input_dim() != expected {
        return Err(Error::config("sample archive and low-fidelity snapshot do not fit together"));
    }
    Ok(LoadedRun {
        header,
        lowfi,
        bnn_spec,
        samples,
    })
}

/// Posterior predictive summary at one location. `std` is the population
/// standard deviation over the retained samples (epistemic only).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub x: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub samples_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Mean and population std of each column of `rows` (one row per sample).
fn summarize(xs: &[Vec<f64>], per_sample: &[Vec<f64>]) -> Vec<Prediction> {
    let m = per_sample.len();
    xs.iter()
        .enumerate()
        .map(|(j, x)| {
            let mean = per_sample.iter().map(|r| r[j]).sum::<f64>() / m as f64;
            let var = per_sample.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / m as f64;
            Prediction {
                x: x.clone(),
                mean,
                std: var.sqrt(),
                samples_used: m,
            }
        })
        .collect()
}

/// Turns stored posterior samples into predictions.
#[derive(Clone, Copy, Debug)]
pub struct Predictor<'a> {
    pub problem: &'a ProblemSpec,
    pub lowfi: Option<&'a LowFiSurrogate>,
    pub spec: &'a MlpSpec,
    pub samples: &'a PosteriorSamples,
}

impl Predictor<'_> {
    fn check(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::config("no posterior samples"));
        }
        let expected = self.spec.param_count() + self.problem.n_unknowns();
        if self.samples.state_dim() != expected {
            return Err(Error::config(format!(
                "samples have {} coordinates, expected {expected}",
                self.samples.state_dim()
            )));
        }
        Ok(())
    }

    /// Surrogate output of every sample at every point: `[sample][point]`.
    pub fn sample_outputs(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check()?;
        if xs.is_empty() {
            return Ok(vec![Vec::new(); self.samples.len()]);
        }
        let inputs = SurrogateInputs::<f64>::build(self.lowfi, xs, self.problem.dim(), false)?;
        (0..self.samples.len())
            .map(|i| {
                let p = MlpParams::unflatten(self.spec.clone(), self.samples.theta(i).to_vec())?;
                p.forward_batch(&inputs.z0)
            })
            .collect()
    }

    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        let outs = self.sample_outputs(xs).in_stage(Stage::Prediction)?;
        Ok(summarize(xs, &outs))
    }

    /// Residual operator applied to every sample (with its own unknowns): `[sample][point]`.
    pub fn sample_forcing(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check()?;
        if !self.problem.is_inverse() {
            return Err(Error::Unsupported(
                "regression problems have no differential operator".into(),
            ));
        }
        if xs.is_empty() {
            return Ok(vec![Vec::new(); self.samples.len()]);
        }
        let inputs = SurrogateInputs::<f64>::build(self.lowfi, xs, self.problem.dim(), true)?;
        (0..self.samples.len())
            .map(|i| {
                let mut g = Graph::<f64>::new();
                let flat = g.constant(Matrix::column(self.samples.theta(i).to_vec()));
                let layers = mlp::layer_vars(&mut g, self.spec, flat, 0);
                let unknowns: Vec<_> = self
                    .samples
                    .lambda(i)
                    .iter()
                    .map(|&k| g.constant_scalar(k))
                    .collect();
                let (z0, dirs) = inputs.push(&mut g);
                let jet = mlp::forward_jet(&mut g, &layers, z0, &dirs, true);
                let f = residual_graph(&mut g, self.problem.kind, &jet, &unknowns)?;
                let row = g.value(f).as_slice().to_vec();
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::non_finite("forcing prediction"));
                }
                Ok(row)
            })
            .collect()
    }

    pub fn predict_f(&self, xs: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        let outs = self.sample_forcing(xs).in_stage(Stage::Prediction)?;
        Ok(summarize(xs, &outs))
    }

    pub fn lambda_summaries(&self) -> Vec<LambdaSummary> {
        let m = self.samples.len() as f64;
        self.problem
            .unknowns
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let mean = (0..self.samples.len()).map(|i| self.samples.lambda(i)[j]).sum::<f64>() / m;
                let var = (0..self.samples.len())
                    .map(|i| (self.samples.lambda(i)[j] - mean).powi(2))
                    .sum::<f64>()
                    / m;
                LambdaSummary {
                    name: name.clone(),
                    mean,
                    std: var.sqrt(),
                }
            })
            .collect()
    }
}

/// Writes `x` (or `x1..xd`), `mean`, `std`, then any extra named columns.
pub fn write_predictions(
    mut w: impl Write,
    preds: &[Prediction],
    extra: &[(&str, &[f64])],
) -> Result<()> {
    let dim = preds.first().map_or(1, |p| p.x.len());
    let mut header: Vec<String> = if dim == 1 {
        vec!["x".into()]
    } else {
        (1..=dim).map(|i| format!("x{i}")).collect()
    };
    header.extend(["mean".to_string(), "std".to_string()]);
    header.extend(extra.iter().map(|(n, _)| n.to_string()));
    writeln!(w, "{}", header.join(","))?;
    for (i, p) in preds.iter().enumerate() {
        let mut row: Vec<String> = p.x.iter().map(f64::to_string).collect();
        row.push(p.mean.to_string());
        row.push(p.std.to_string());
        row.extend(extra.iter().map(|(_, c)| c[i].to_string()));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
