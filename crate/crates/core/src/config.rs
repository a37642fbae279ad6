//! Run configuration files.
//!
//! TOML with one table per stage. Every key is optional: missing keys take the
//! defaults of the selected `profile`, which may also depend on the generator.
//!
//! ```toml
//! profile = "desk"          # "paper" (full budgets) or "desk" (reduced)
//! seed = 7                  # master seed, 0 <= seed < 2^63
//! out = "out/fn1d"          # output directory
//! mode = "predict"          # "predict" or "active"
//!
//! [data]
//! generator = "fn1d-sinsq"  # fn1d-sinsq | fn1d-bias | fn4d | inv1d | inv2d
//! lofi_count = 100
//! lofi_noise = 0.0
//! hifi_u_count = 14
//! hifi_u_noise = 0.01
//! # or, for scattered data on disk:
//! # problem = "regression"; bounds = [[0.0, 1.0]]
//! # lofi = "lofi.csv"; hifi_u = "hifi_u.csv"
//!
//! [pipeline]
//! fidelity = "multi"        # or "single"
//! lofi_hidden = [20, 20]
//! bnn_hidden = [50]
//! alpha_from_noise = true   # MAP weight decay sigma_uL^2 / N_L
//! hmc_init = "variational-mean"  # or "prior-draw"
//!
//! [pipeline.map]            # learning_rate, steps, alpha, log_every, decay, batch_size
//! [pipeline.vi]             # steps, learning_rate, n_mc, initial_sigma, initial_std, ...
//! [pipeline.hmc]            # burn_in, initial_step, leapfrog_steps, samples, target_accept, ...
//!
//! [active]                  # max_rounds, candidates, threshold_var, stop_rule
//!
//! [eval]
//! points = 1000             # evaluation grid for metrics
//! ablation = false          # also fit the single-fidelity model and compare
//! ```
//!
//! Profile multipliers: `desk` runs the MAP fit for 10,000 steps (paper
//! 50,000), VI for 20,000 (paper 200,000), HMC burn-in 2,000 (paper 10,000)
//! and keeps 500 samples (paper 1,000). For `fn4d` desk uses 5,000
//! low-fidelity points (paper 25,000) and trains the low-fidelity network on
//! minibatches of 256 for 150,000 steps at learning rate 3e-3, halved every
//! 30,000; for `inv2d`, 2,000 points (paper 6,000).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::active::ActiveConfig;
use crate::data::{Benchmark, CsvPaths, GeneratorSpec, Layout};
use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;
use crate::physics::{ProblemKind, ProblemSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Paper,
    Desk,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::config(format!("unknown profile '{other}' (expected paper or desk)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Predict,
    Active,
}

/// Where the data come from: a named generator (with overrides) or CSV files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub generator: Option<Benchmark>,
    pub lofi_count: Option<usize>,
    pub lofi_noise: Option<f64>,
    pub lofi_layout: Option<Layout>,
    pub hifi_u_count: Option<usize>,
    pub hifi_u_noise: Option<f64>,
    pub hifi_u_layout: Option<Layout>,
    pub hifi_f_count: Option<usize>,
    pub hifi_f_noise: Option<f64>,
    pub boundary_per_facet: Option<usize>,
    pub true_k: Option<f64>,
    pub problem: Option<ProblemKind>,
    pub bounds: Option<Vec<(f64, f64)>>,
    pub lofi: Option<PathBuf>,
    pub hifi_u: Option<PathBuf>,
    pub hifi_f: Option<PathBuf>,
    pub hifi_b: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub points: usize,
    /// Also fit the single-fidelity model on the high-fidelity data and compare.
    pub ablation: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            points: 1_000,
            ablation: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub mode: Mode,
    pub data: DataSection,
    pub pipeline: PipelineConfig,
    pub active: ActiveConfig,
    pub eval: EvalSection,
}

/// Paper architectures per generator: `(lofi_hidden, bnn_hidden)`.
fn architecture(b: Option<Benchmark>) -> (Vec<usize>, Vec<usize>) {
    match b {
        Some(Benchmark::Fn4d) => (vec![50, 50], vec![50]),
        Some(Benchmark::Inv2d) => (vec![40, 40], vec![50]),
        _ => (vec![20, 20], vec![50]),
    }
}

impl RunConfig {
    /// Fully populated defaults for `profile` and `generator`.
    pub fn defaults(profile: Profile, generator: Option<Benchmark>) -> Self {
        let mut pipeline = PipelineConfig::default();
        let (lofi_hidden, bnn_hidden) = architecture(generator);
        pipeline.lofi_hidden = lofi_hidden;
        pipeline.bnn_hidden = bnn_hidden;
        if profile == Profile::Desk {
            pipeline.map.steps = 10_000;
            pipeline.vi.steps = 20_000;
            pipeline.hmc.burn_in = 2_000;
            pipeline.hmc.samples = 500;
            if generator == Some(Benchmark::Fn4d) {
                // Full-batch Adam at 1e-3 stalls on the sin(12 pi x3) plateau
                // within any desk budget; minibatches buy the steps to escape it.
                pipeline.map.steps = 150_000;
                pipeline.map.learning_rate = 3e-3;
                pipeline.map.batch_size = Some(256);
                pipeline.map.decay = Some((0.5, 30_000));
            }
        }
        let data = match generator {
            Some(b) => {
                let mut g = GeneratorSpec::reference(b, 0);
                if profile == Profile::Desk {
                    match b {
                        Benchmark::Fn4d => g.lofi_count = 5_000,
                        Benchmark::Inv2d => g.lofi_count = 2_000,
                        _ => {}
                    }
                }
                DataSection {
                    generator: Some(b),
                    lofi_count: Some(g.lofi_count),
                    lofi_noise: Some(g.lofi_noise),
                    lofi_layout: Some(g.lofi_layout),
                    hifi_u_count: Some(g.hifi_u_count),
                    hifi_u_noise: Some(g.hifi_u_noise),
                    hifi_u_layout: Some(g.hifi_u_layout),
                    hifi_f_count: Some(g.hifi_f_count),
                    hifi_f_noise: Some(g.hifi_f_noise),
                    boundary_per_facet: Some(g.boundary_per_facet),
                    true_k: Some(g.true_k),
                    ..DataSection::default()
                }
            }
            None => DataSection::default(),
        };
        Self {
            profile,
            seed: 0,
            out: None,
            mode: Mode::Predict,
            data,
            pipeline,
            active: ActiveConfig::default(),
            eval: EvalSection::default(),
        }
    }

    /// Parses TOML text; `profile_override` wins over the file's `profile` key.
    pub fn from_toml(text: &str, profile_override: Option<Profile>) -> Result<Self> {
        let user: toml::Table =
            toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))?;
        let profile = match (profile_override, user.get("profile")) {
            (Some(p), _) => p,
            (None, Some(v)) => Profile::parse(
                v.as_str()
                    .ok_or_else(|| Error::config("'profile' must be a string"))?,
            )?,
            (None, None) => Profile::Paper,
        };
        let generator = match user.get("data").and_then(|d| d.get("generator")) {
            Some(v) => Some(Benchmark::parse(
                v.as_str()
                    .ok_or_else(|| Error::config("'data.generator' must be a string"))?,
            )?),
            None => None,
        };
        let defaults = Self::defaults(profile, generator);
        let mut merged = match toml::Value::try_from(&defaults) {
            Ok(toml::Value::Table(t)) => t,
            _ => return Err(Error::config("cannot encode defaults")),
        };
        merge(&mut merged, user);
        merged.insert("profile".into(), toml::Value::String(profile.name().into()));
        let config: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("config error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, profile_override: Option<Profile>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut c = Self::from_toml(&text, profile_override)?;
        // Data paths are relative to the config file.
        if let Some(dir) = path.parent() {
            for p in [&mut c.data.lofi, &mut c.data.hifi_u, &mut c.data.hifi_f, &mut c.data.hifi_b]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot encode config: {e}")))
    }

    /// SHA-256 of the canonical TOML encoding, as lowercase hex.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::config("seed must be below 2^63"));
        }
        let p = &self.pipeline;
        p.map.validate()?;
        p.vi.validate()?;
        p.hmc.validate()?;
        if self.eval.points == 0 {
            return Err(Error::config("eval.points must be >= 1"));
        }
        if self.mode == Mode::Active && self.active.max_rounds == 0 {
            return Err(Error::config("active.max_rounds must be >= 1"));
        }
        let d = &self.data;
        let has_files = d.lofi.is_some() || d.hifi_u.is_some() || d.hifi_f.is_some() || d.hifi_b.is_some();
        match (d.generator, has_files) {
            (Some(_), true) => Err(Error::config("give either data.generator or data files, not both")),
            (None, false) => Err(Error::config("no data: set data.generator or data file paths")),
            (None, true) if self.mode == Mode::Active => {
                Err(Error::config("active mode needs a generator to act as the oracle"))
            }
            _ => Ok(()),
        }
    }

    /// Generator spec with all overrides applied, seeded from the master seed.
    pub fn generator_spec(&self) -> Option<GeneratorSpec> {
        let d = &self.data;
        let b = d.generator?;
        let r = GeneratorSpec::reference(b, crate::seed::derive_seed(self.seed, "data"));
        Some(GeneratorSpec {
            lofi_count: d.lofi_count.unwrap_or(r.lofi_count),
            lofi_noise: d.lofi_noise.unwrap_or(r.lofi_noise),
            lofi_layout: d.lofi_layout.unwrap_or(r.lofi_layout),
            hifi_u_count: d.hifi_u_count.unwrap_or(r.hifi_u_count),
            hifi_u_noise: d.hifi_u_noise.unwrap_or(r.hifi_u_noise),
            hifi_u_layout: d.hifi_u_layout.unwrap_or(r.hifi_u_layout),
            hifi_f_count: d.hifi_f_count.unwrap_or(r.hifi_f_count),
            hifi_f_noise: d.hifi_f_noise.unwrap_or(r.hifi_f_noise),
            boundary_per_facet: d.boundary_per_facet.unwrap_or(r.boundary_per_facet),
            true_k: d.true_k.unwrap_or(r.true_k),
            ..r
        })
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let d = &self.data;
        if let Some(b) = d.generator {
            return Ok(b.problem());
        }
        let p = match (d.problem, &d.bounds) {
            (Some(ProblemKind::DiffusionReaction1d), None) => ProblemSpec::diffusion_reaction_1d(),
            (Some(ProblemKind::DiffusionReaction2d), None) => ProblemSpec::diffusion_reaction_2d(),
            (Some(ProblemKind::Regression) | None, Some(b)) => ProblemSpec::regression(b.clone()),
            (Some(kind), Some(b)) => {
                let mut p = match kind {
                    ProblemKind::DiffusionReaction1d => ProblemSpec::diffusion_reaction_1d(),
                    _ => ProblemSpec::diffusion_reaction_2d(),
                };
                p.bounds = b.clone();
                p
            }
            (_, None) => return Err(Error::config("regression data need data.bounds")),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn csv_paths(&self) -> CsvPaths {
        CsvPaths {
            lofi: self.data.lofi.clone(),
            hifi_u: self.data.hifi_u.clone(),
            hifi_f: self.data.hifi_f.clone(),
            hifi_b: self.data.hifi_b.clone(),
        }
    }
}

/// Recursively overlays `over` onto `base`.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
