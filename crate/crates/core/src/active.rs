//! Active learning: add high-fidelity sensors where the posterior variance peaks.

use std::io::Write;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Benchmark, BiFidelityDataset, Observation};
use crate::error::{Error, Result, Stage, StageExt};
use crate::lowfi::LowFiSurrogate;
use crate::metrics;
use crate::pipeline::{self, Fidelity, LambdaSummary, MbnnRun, PipelineConfig};
use crate::physics::ProblemSpec;
use crate::seed::derive_seed;

/// Index of the largest variance, ties to the smallest index; `None` when empty.
pub fn acquire(variances: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in variances.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// True when every variance is below `threshold`; an empty set stops (with a warning).
pub fn should_stop(variances: &[f64], threshold: f64) -> bool {
    if variances.is_empty() {
        warn!("no candidate points: stopping");
        return true;
    }
    variances.iter().all(|&v| v < threshold)
}

/// Evenly spaced points covering the domain: `n` in 1D, `ceil(n^(1/d))` per axis otherwise.
pub fn candidate_grid(bounds: &[(f64, f64)], n: usize) -> Vec<Vec<f64>> {
    let d = bounds.len();
    if d == 0 || n == 0 {
        return Vec::new();
    }
    let per_axis = if d == 1 {
        n
    } else {
        let mut k = (n as f64).powf(1.0 / d as f64).floor() as usize;
        while k.pow(d as u32) < n {
            k += 1;
        }
        k
    };
    let axis = |(lo, hi): (f64, f64), i: usize| {
        if per_axis == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (per_axis - 1) as f64
        }
    };
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut flat| {
            let mut idx = vec![0; d];
            for k in (0..d).rev() {
                idx[k] = flat % per_axis;
                flat /= per_axis;
            }
            idx.iter().zip(bounds).map(|(&i, &b)| axis(b, i)).collect()
        })
        .collect()
}

/// Source of new high-fidelity measurements.
pub trait Oracle {
    fn query_u(&mut self, x: &[f64]) -> Result<Observation>;
    fn query_f(&mut self, x: &[f64]) -> Result<Observation>;
}

/// Exact benchmark values plus Gaussian sensor noise.
#[derive(Clone, Debug)]
pub struct BenchmarkOracle {
    pub benchmark: Benchmark,
    pub sigma_u: f64,
    pub sigma_f: f64,
    pub true_k: f64,
    rng: ChaCha8Rng,
}

impl BenchmarkOracle {
    pub fn new(benchmark: Benchmark, sigma_u: f64, sigma_f: f64, true_k: f64, seed: u64) -> Self {
        Self {
            benchmark,
            sigma_u,
            sigma_f,
            true_k,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn noisy(&mut self, value: f64, sigma: f64) -> Result<f64> {
        let n = Normal::new(0.0, sigma).map_err(|e| Error::Oracle(format!("noise scale {sigma}: {e}")))?;
        Ok(value + n.sample(&mut self.rng))
    }
}

impl Oracle for BenchmarkOracle {
    fn query_u(&mut self, x: &[f64]) -> Result<Observation> {
        let value = self.noisy(self.benchmark.exact_hifi(x), self.sigma_u)?;
        Ok(Observation {
            x: x.to_vec(),
            value,
            sigma: self.sigma_u,
        })
    }

    fn query_f(&mut self, x: &[f64]) -> Result<Observation> {
        let exact = self
            .benchmark
            .exact_forcing(x, self.true_k)
            .ok_or_else(|| Error::Oracle(format!("{} has no forcing term", self.benchmark.name())))?;
        let value = self.noisy(exact, self.sigma_f)?;
        Ok(Observation {
            x: x.to_vec(),
            value,
            sigma: self.sigma_f,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveConfig {
    pub max_rounds: usize,
    pub candidates: usize,
    pub threshold_var: f64,
    /// Apply the variance stopping rule (otherwise only `max_rounds` stops the loop).
    pub stop_rule: bool,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        Self {
            max_rounds: 10,
            candidates: 1_000,
            threshold_var: 0.05 * 0.05,
            stop_rule: true,
        }
    }
}

/// Exact fields on a fixed set of points, for the per-round error metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub points: Vec<Vec<f64>>,
    pub exact_u: Vec<f64>,
    pub exact_f: Option<Vec<f64>>,
}

impl Evaluation {
    pub fn from_benchmark(b: Benchmark, points: Vec<Vec<f64>>, true_k: f64) -> Self {
        let exact_u = points.iter().map(|x| b.exact_hifi(x)).collect();
        let exact_f = b.problem().is_inverse().then(|| {
            points
                .iter()
                .map(|x| b.exact_forcing(x, true_k).expect("inverse benchmark"))
                .collect()
        });
        Self {
            points,
            exact_u,
            exact_f,
        }
    }
}

/// One fit of the loop and the acquisition that followed it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub seed: u64,
    pub hifi_u: usize,
    pub hifi_f: usize,
    pub sigma: f64,
    pub acceptance_rate: f64,
    pub max_var_u: f64,
    pub max_var_f: Option<f64>,
    /// Chosen locations; `None` when the stopping rule fired.
    pub x_u: Option<Vec<f64>>,
    pub x_f: Option<Vec<f64>>,
    pub e_u: Option<f64>,
    pub e_f: Option<f64>,
    pub rmse_u: Option<f64>,
    pub lambdas: Vec<LambdaSummary>,
    pub stopped: bool,
}

#[derive(Clone, Debug)]
pub struct AcquisitionState {
    pub round: usize,
    pub dataset: BiFidelityDataset,
    pub history: Vec<RoundRecord>,
    pub lowfi: Option<LowFiSurrogate>,
    /// Run of the last completed round.
    pub last_run: Option<MbnnRun>,
    /// Failure that ended the loop early, if any; `history` holds every completed round.
    pub aborted: Option<String>,
}

impl AcquisitionState {
    pub fn stopped(&self) -> bool {
        self.history.last().is_some_and(|r| r.stopped)
    }

    /// Points added so far.
    pub fn added(&self) -> usize {
        self.history
            .iter()
            .map(|r| usize::from(r.x_u.is_some()) + usize::from(r.x_f.is_some()))
            .sum()
    }
}

/// Fits, measures, acquires and grows the dataset for up to `active.max_rounds` rounds.
///
/// The low-fidelity surrogate is trained once (or taken from `lowfi`) and
/// reused unchanged. For inverse problems one `u` and one `f` sensor are
/// added per round, each at its own variance maximizer.
#[allow(clippy::too_many_arguments)]
pub fn run_active(
    problem: &ProblemSpec,
    initial: BiFidelityDataset,
    lowfi: Option<LowFiSurrogate>,
    oracle: &mut dyn Oracle,
    config: &PipelineConfig,
    active: &ActiveConfig,
    evaluation: Option<&Evaluation>,
    seed: u64,
) -> Result<AcquisitionState> {
    if active.max_rounds == 0 {
        return Err(Error::config("active learning needs max_rounds >= 1"));
    }
    let lowfi = match (config.fidelity, lowfi) {
        (Fidelity::Multi, None) => Some(pipeline::train_lowfi(
            problem,
            &initial,
            config,
            derive_seed(seed, "lowfi-map"),
        )?),
        (Fidelity::Single, _) => None,
        (_, given) => given,
    };
    let candidates = candidate_grid(&problem.bounds, active.candidates);
    let mut state = AcquisitionState {
        round: 0,
        dataset: initial,
        history: Vec::new(),
        lowfi,
        last_run: None,
        aborted: None,
    };
    for round in 1..=active.max_rounds {
        match one_round(problem, &mut state, oracle, config, active, evaluation, &candidates, round, seed) {
            Ok(true) => break,
            Ok(false) => {}
            Err(e) => {
                state.aborted = Some(e.to_string());
                break;
            }
        }
    }
    Ok(state)
}

#[allow(clippy::too_many_arguments)]
fn one_round(
    problem: &ProblemSpec,
    state: &mut AcquisitionState,
    oracle: &mut dyn Oracle,
    config: &PipelineConfig,
    active: &ActiveConfig,
    evaluation: Option<&Evaluation>,
    candidates: &[Vec<f64>],
    round: usize,
    seed: u64,
) -> Result<bool> {
    let round_seed = derive_seed(seed, &format!("round-{round}"));
    let run = pipeline::run_mbnn_with_lowfi(problem, &state.dataset, state.lowfi.clone(), config, round_seed)?;
    let pred = run.predictor();

    let var_u: Vec<f64> = pred
        .predict(candidates)?
        .iter()
        .map(|p| p.std * p.std)
        .collect();
    let var_f: Option<Vec<f64>> = if problem.is_inverse() {
        Some(pred.predict_f(candidates)?.iter().map(|p| p.std * p.std).collect())
    } else {
        None
    };
    let max_of = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);

    let (mut e_u, mut e_f, mut rmse_u) = (None, None, None);
    if let Some(ev) = evaluation {
        let mean_u: Vec<f64> = pred.predict(&ev.points)?.iter().map(|p| p.mean).collect();
        e_u = Some(metrics::error_e(&ev.exact_u, &mean_u)?);
        rmse_u = Some(metrics::rmse(&ev.exact_u, &mean_u)?);
        if let (Some(exact_f), true) = (&ev.exact_f, problem.is_inverse()) {
            let mean_f: Vec<f64> = pred.predict_f(&ev.points)?.iter().map(|p| p.mean).collect();
            e_f = Some(metrics::error_e(exact_f, &mean_f)?);
        }
    }

    let (fit_u, fit_f) = (state.dataset.hifi_u.len(), state.dataset.hifi_f.len());
    let stop = active.stop_rule && should_stop(&var_u, active.threshold_var);
    let (mut x_u, mut x_f) = (None, None);
    if !stop {
        if let Some(i) = acquire(&var_u) {
            let obs = oracle.query_u(&candidates[i]).in_stage(Stage::ActiveLearning)?;
            x_u = Some(obs.x.clone());
            state.dataset.hifi_u.push(obs);
        }
        if let Some(vf) = &var_f {
            if let Some(i) = acquire(vf) {
                let obs = oracle.query_f(&candidates[i]).in_stage(Stage::ActiveLearning)?;
                x_f = Some(obs.x.clone());
                state.dataset.hifi_f.push(obs);
            }
        }
    }
    state.history.push(RoundRecord {
        round,
        seed: round_seed,
        hifi_u: fit_u,
        hifi_f: fit_f,
        sigma: run.prior.sigma,
        acceptance_rate: run.samples.acceptance_rate,
        max_var_u: max_of(&var_u),
        max_var_f: var_f.as_deref().map(max_of),
        x_u,
        x_f,
        e_u,
        e_f,
        rmse_u,
        lambdas: pred.lambda_summaries(),
        stopped: stop,
    });
    info!(
        "round {round}: {fit_u} u / {fit_f} f sensors, max var u {:.3e}{}",
        max_of(&var_u),
        if stop { ", stopping" } else { "" }
    );
    state.round = round;
    state.last_run = Some(run);
    Ok(stop)
}

/// Per-round log: `round,hifi_u,hifi_f,x_u..,x_f..,max_var_u,max_var_f,E_u,E_f,rmse_u,k_mean,k_std,sigma,stopped,seed`.
pub fn write_history(mut w: impl Write, dim: usize, history: &[RoundRecord]) -> Result<()> {
    let coords = |prefix: &str| -> Vec<String> {
        if dim == 1 {
            vec![prefix.to_string()]
        } else {
            (1..=dim).map(|i| format!("{prefix}{i}")).collect()
        }
    };
    let mut header = vec!["round".to_string(), "hifi_u".into(), "hifi_f".into()];
    header.extend(coords("x_u"));
    header.extend(coords("x_f"));
    header.extend(
        ["max_var_u", "max_var_f", "E_u", "E_f", "rmse_u", "k_mean", "k_std", "sigma", "stopped", "seed"]
            .map(String::from),
    );
    writeln!(w, "{}", header.join(","))?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let pos = |p: &Option<Vec<f64>>| -> Vec<String> {
        match p {
            Some(x) => x.iter().map(f64::to_string).collect(),
            None => vec![String::new(); dim],
        }
    };
    for r in history {
        let mut row = vec![r.round.to_string(), r.hifi_u.to_string(), r.hifi_f.to_string()];
        row.extend(pos(&r.x_u));
        row.extend(pos(&r.x_f));
        row.push(r.max_var_u.to_string());
        row.push(opt(r.max_var_f));
        row.push(opt(r.e_u));
        row.push(opt(r.e_f));
        row.push(opt(r.rmse_u));
        row.push(opt(r.lambdas.first().map(|l| l.mean)));
        row.push(opt(r.lambdas.first().map(|l| l.std)));
        row.push(r.sigma.to_string());
        row.push(r.stopped.to_string());
        row.push(r.seed.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_with_ties() {
        assert_eq!(acquire(&[0.1, 0.3, 0.2]), Some(1));
        assert_eq!(acquire(&[0.2, 0.2, 0.2]), Some(0));
        assert_eq!(acquire(&[]), None);
    }

    #[test]
    fn stopping_threshold() {
        let t = 0.05 * 0.05;
        assert!(should_stop(&[0.04 * 0.04, 0.001], t));
        assert!(!should_stop(&[0.06 * 0.06], t));
        assert!(should_stop(&[], t));
    }

    #[test]
    fn grid_sizes() {
        let g1 = candidate_grid(&[(0.0, 1.0)], 1000);
        assert_eq!(g1.len(), 1000);
        assert_eq!((g1[0][0], g1[999][0]), (0.0, 1.0));
        let g2 = candidate_grid(&[(-1.0, 1.0), (-1.0, 1.0)], 1000);
        assert_eq!(g2.len(), 32 * 32);
        assert!(g2.contains(&vec![-1.0, 1.0]));
    }

    #[test]
    fn oracle_noise_matches_declared_scale() {
        let mut o = BenchmarkOracle::new(Benchmark::Inv1d, 0.01, 0.02, 1.0, 3);
        let u = o.query_u(&[0.3]).unwrap();
        assert_eq!(u.sigma, 0.01);
        let f = o.query_f(&[0.3]).unwrap();
        assert_eq!(f.sigma, 0.02);
        let mut r = BenchmarkOracle::new(Benchmark::Fn1dSinSq, 0.01, 0.01, 1.0, 3);
        assert!(matches!(r.query_f(&[0.3]), Err(Error::Oracle(_))));
    }
}
