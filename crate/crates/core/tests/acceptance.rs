//! Acceptance suite: criteria 1-9, one `[PASS]`/`[FAIL]` line each.
//!
//! Runs every gate at its pinned tolerance and runtime budget. Pass criterion
//! numbers as arguments to run a subset (`cargo test --test acceptance -- 4 9`).
//!
//! A red criterion is reported, not hidden: the summary line counts it and
//! `MFBNN_ACCEPTANCE_STRICT=1` turns any red line into a non-zero exit. A
//! panic inside the harness itself always fails the process.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use mfbnn::autodiff::{Graph, Var};
use mfbnn::config::Profile;
use mfbnn::data::Benchmark;
use mfbnn::hmc::{self, HmcConfig};
use mfbnn::lowfi;
use mfbnn::mlp::{MlpParams, MlpSpec};
use mfbnn::posterior::{self, BnnModel, Model, PriorBlock, PriorScale};
use mfbnn::suites::{self, Report};
use mfbnn::vi::{self, VariationalParams, ViConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 0;
const DRAWS: u64 = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

type Check = fn() -> mfbnn::Result<Outcome>;

fn out_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn bench(name: &str) -> mfbnn::Result<Report> {
    suites::run_suite(name, Profile::Desk, SEED, &out_dir(name))
}

fn metric(r: &Report, name: &str) -> f64 {
    r.get(name).unwrap_or(f64::NAN)
}

// ---- 1: gradients and input derivatives --------------------------------

fn bnn_case(b: Benchmark, multi: bool, seed: u64) -> BnnModel<f64> {
    let problem = b.problem();
    let lofi_widths: Vec<usize> = match b {
        Benchmark::Fn4d => vec![4, 50, 50, 1],
        Benchmark::Inv2d => vec![2, 40, 40, 1],
        _ => vec![1, 20, 20, 1],
    };
    let lf = multi.then(|| random_lowfi(&lofi_widths, seed + 7));
    let spec = MlpSpec::with_hidden(problem.dim() + usize::from(multi), &[50]).unwrap();
    BnnModel::new(spec, &problem, lf.as_ref(), &small_dataset(b, seed)).unwrap()
}

fn bnn_state(model: &BnnModel<f64>, seed: u64) -> Vec<f64> {
    let mut theta = random_params(model.spec().layer_widths(), seed).into_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..model.n_unknowns() {
        theta.push(rng.random_range(0.5..1.5));
    }
    theta
}

fn second_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - 2.0 * f(x) + f(&xm)) / (h * h)
        })
        .collect()
}

/// Central differences along `coords` only.
fn partial_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64, coords: &[usize]) -> Vec<f64> {
    let mut x = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let x0 = x[i];
            x[i] = x0 + h;
            let fp = f(&x);
            x[i] = x0 - h;
            let fm = f(&x);
            x[i] = x0;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `n` distinct random coordinates of a `d`-vector, plus the last one.
fn some_coords(d: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = rand::seq::index::sample(&mut rng, d, n.min(d)).into_vec();
    c.push(d - 1);
    c.sort_unstable();
    c.dedup();
    c
}

/// Log-posterior gradients are checked on every coordinate; the MAP and VI
/// objectives (up to 2,851 and 703 coordinates) on seeded subsets to fit the
/// budget. `tests/gradients.rs` sweeps every coordinate of all three.
fn gradients() -> mfbnn::Result<Outcome> {
    let h = 1e-5;
    let mut param_err: f64 = 0.0;
    for (t, widths) in [&[1usize, 20, 20, 1][..], &[4, 50, 50, 1], &[2, 40, 40, 1]].iter().enumerate() {
        let b = [Benchmark::Fn1dSinSq, Benchmark::Fn4d, Benchmark::Inv2d][t];
        for draw in 0..DRAWS {
            let params = random_params(widths, 100 * t as u64 + draw);
            let data = small_dataset(b, draw).lofi;
            let (_, grad) = lowfi::map_loss_gradient(&params, &data, 1e-3)?;
            let spec = params.spec().clone();
            let coords = some_coords(grad.len(), 200, draw);
            let fd = partial_diff(
                &mut |p| lowfi::map_loss(&MlpParams::unflatten(spec.clone(), p.to_vec()).unwrap(), &data, 1e-3).unwrap(),
                params.flatten(),
                h,
                &coords,
            );
            let grad: Vec<f64> = coords.iter().map(|&i| grad[i]).collect();
            param_err = param_err.max(rel_err(&grad, &fd));
        }
    }
    for b in [Benchmark::Fn1dSinSq, Benchmark::Fn4d, Benchmark::Inv1d, Benchmark::Inv2d] {
        for multi in [true, false] {
            for draw in 0..DRAWS {
                let model = bnn_case(b, multi, draw);
                let theta = bnn_state(&model, 31 * draw + 1);
                let (_, grad) = posterior::log_posterior(&model, &theta, 0.8)?;
                let fd = central_diff(&mut |t| posterior::log_posterior(&model, t, 0.8).unwrap().0, &theta, h);
                param_err = param_err.max(rel_err(&grad, &fd));

                let d = model.dim();
                let mut rng = ChaCha8Rng::seed_from_u64(draw);
                let rho: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..-2.0)).collect();
                let eps = vi::draw_noise::<f64>(&mut rng, 2, d);
                let vp = VariationalParams { mu: theta.clone(), rho: rho.clone() };
                let obj = vi::vi_objective(&model, &vp, 0.1, &eps)?;
                let mut packed = theta.clone();
                packed.extend(&rho);
                packed.push(0.1);
                let coords = some_coords(packed.len(), 60, draw);
                let fd = partial_diff(
                    &mut |p| {
                        let vp = VariationalParams { mu: p[..d].to_vec(), rho: p[d..2 * d].to_vec() };
                        vi::vi_objective(&model, &vp, p[2 * d], &eps).unwrap().value
                    },
                    &packed,
                    h,
                    &coords,
                );
                let mut grad = obj.grad_mu;
                grad.extend(obj.grad_rho);
                grad.push(obj.grad_log_sigma);
                let grad: Vec<f64> = coords.iter().map(|&i| grad[i]).collect();
                param_err = param_err.max(rel_err(&grad, &fd));
            }
        }
    }

    let hx = 1e-4;
    let mut input_err: f64 = 0.0;
    let topologies: [&[usize]; 9] = [
        &[1, 20, 20, 1],
        &[4, 50, 50, 1],
        &[2, 40, 40, 1],
        &[1, 50, 1],
        &[2, 50, 1],
        &[3, 50, 1],
        &[4, 50, 1],
        &[5, 50, 1],
        &[2, 50, 1],
    ];
    for widths in topologies {
        for draw in 0..DRAWS {
            let params = random_params(widths, 1000 + draw);
            let mut rng = ChaCha8Rng::seed_from_u64(draw);
            let x = random_point(&mut rng, widths[0]);
            let r = params.input_derivatives(&x, 2)?;
            let f = |p: &[f64]| params.forward(p).unwrap();
            let du = central_diff(&mut |p| f(p), &x, hx);
            input_err = input_err.max(rel_err(r.du_dx.as_ref().unwrap(), &du));
            input_err = input_err.max(rel_err(r.d2u_dx2.as_ref().unwrap(), &second_diff(&f, &x, hx)));
        }
    }
    Ok(Outcome::new(
        param_err < 1e-5 && input_err < 1e-4,
        format!("max rel err params {param_err:.2e} (< 1e-5), inputs {input_err:.2e} (< 1e-4)"),
    ))
}

// ---- 2: sampler ---------------------------------------------------------

fn std_normal(x: &[f64]) -> mfbnn::Result<(f64, Vec<f64>)> {
    Ok((-0.5 * x.iter().map(|v| v * v).sum::<f64>(), x.iter().map(|v| -v).collect()))
}

fn correlated(rho: f64) -> impl FnMut(&[f64]) -> mfbnn::Result<(f64, Vec<f64>)> {
    let det = 1.0 - rho * rho;
    move |x: &[f64]| {
        let g0 = -(x[0] - rho * x[1]) / det;
        let g1 = -(x[1] - rho * x[0]) / det;
        Ok((0.5 * (x[0] * g0 + x[1] * g1), vec![g0, g1]))
    }
}

/// Effective sample size from the initial positive sequence of autocorrelations.
fn ess(xs: &[f64]) -> f64 {
    let n = xs.len();
    let m = xs.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = xs.iter().map(|v| v - m).collect();
    let var = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let acf = |lag: usize| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * var);
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n / 2 {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    n as f64 / tau
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn sampler() -> mfbnn::Result<Outcome> {
    let config = HmcConfig {
        burn_in: 1000,
        samples: 2000,
        initial_step: 0.1,
        ..HmcConfig::default()
    };
    let s = hmc::sample(&config, std_normal, &[0.5; 10], 0, 11)?;
    let mut worst_z: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for i in 0..10 {
        let xs: Vec<f64> = s.states.iter().map(|st| st[i]).collect();
        let (m, v) = mean_var(&xs);
        worst_z = worst_z.max(m.abs() / (v / ess(&xs)).sqrt());
        worst_var = worst_var.max((v - 1.0).abs());
    }

    let rho = 0.9;
    let s = hmc::sample(&config, correlated(rho), &[1.0, -1.0], 0, 5)?;
    let x: Vec<f64> = s.states.iter().map(|st| st[0]).collect();
    let y: Vec<f64> = s.states.iter().map(|st| st[1]).collect();
    let (mx, vx) = mean_var(&x);
    let (my, vy) = mean_var(&y);
    let cxy = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (x.len() as f64 - 1.0);
    let worst_cov = [(vx, 1.0), (vy, 1.0), (cxy, rho)]
        .iter()
        .map(|(e, t)| (e - t).abs() / t)
        .fold(0.0, f64::max);

    let model = bnn_case(Benchmark::Inv1d, true, 2);
    let mut theta = bnn_state(&model, 4);
    let start = theta.clone();
    let mut p: Vec<f64> = (0..theta.len()).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
    let p0 = p.clone();
    let mut f = |t: &[f64]| posterior::log_posterior(&model, t, 1.0);
    hmc::leapfrog(&mut theta, &mut p, 1e-4, 50, &mut f)?;
    p.iter_mut().for_each(|v| *v = -*v);
    hmc::leapfrog(&mut theta, &mut p, 1e-4, 50, &mut f)?;
    let rev = theta
        .iter()
        .zip(&start)
        .map(|(a, b)| (a - b).abs())
        .chain(p.iter().zip(&p0).map(|(a, b)| (a + b).abs()))
        .fold(0.0, f64::max);

    let mut rates = Vec::new();
    for step in [0.5, 0.1, 0.01, 0.001] {
        let config = HmcConfig {
            burn_in: 1,
            samples: 300,
            initial_step: step,
            leapfrog_steps: 20,
            adapt: false,
            ..HmcConfig::default()
        };
        rates.push(hmc::sample(&config, correlated(rho), &[0.3, 0.2], 0, 2)?.acceptance_rate);
    }
    let to_one = rates[3] > 0.99 && rates.windows(2).all(|w| w[1] >= w[0] - 0.02);

    Ok(Outcome::new(
        worst_z < 4.0 && worst_var < 0.2 && worst_cov < 0.2 && rev < 1e-10 && to_one,
        format!(
            "mean |z| {worst_z:.2} (< 4), var err {worst_var:.3}, corr-cov err {worst_cov:.3} (< 0.2), \
             reversibility {rev:.1e} (< 1e-10), acceptance {rates:.3?}"
        ),
    ))
}

// ---- 3: variational inference --------------------------------------------

/// `theta ~ N(0, 1)`, one observation `y = 1` with unit noise: posterior `N(0.5, 0.5)`.
struct Conjugate {
    prior: Vec<PriorBlock>,
}

impl Model<f64> for Conjugate {
    fn dim(&self) -> usize {
        1
    }

    fn prior_blocks(&self) -> &[PriorBlock] {
        &self.prior
    }

    fn log_likelihood(&self, g: &mut Graph<f64>, theta: Var) -> mfbnn::Result<Option<Var>> {
        let r = g.offset(theta, -1.0);
        let sq = g.square(r);
        let s = g.sum(sq);
        let ll = g.scale(s, -0.5);
        Ok(Some(g.offset(ll, -0.5 * (2.0 * PI).ln())))
    }
}

fn variational() -> mfbnn::Result<Outcome> {
    let model = Conjugate {
        prior: vec![PriorBlock {
            offset: 0,
            len: 1,
            scale: PriorScale::Fixed(1.0),
        }],
    };
    let config = ViConfig {
        steps: 20_000,
        learn_sigma: false,
        ..ViConfig::default()
    };
    let r = vi::fit_vi(&model, vec![0.0], &config, 3)?;
    let mean = r.params.mu[0];
    let std = r.params.std()[0];
    Ok(Outcome::new(
        (mean - 0.5).abs() < 0.05 && (std - 0.5f64.sqrt()).abs() < 0.07,
        format!("mean {mean:.4} (0.5 +- 0.05), std {std:.4} (0.7071 +- 0.07)"),
    ))
}

// ---- 4-8: reproductions -------------------------------------------------

fn fn1d() -> mfbnn::Result<Outcome> {
    let r = bench("fn1d")?;
    let (rmse, picp) = (metric(&r, "rmse_u"), metric(&r, "picp_u"));
    Ok(Outcome::new(
        rmse < 0.05 && picp >= 0.85,
        format!("rmse {rmse:.4} (< 0.05), picp {picp:.3} (>= 0.85)"),
    ))
}

fn fn4d() -> mfbnn::Result<Outcome> {
    let r = bench("fn4d")?;
    let (picp, rmse, single) = (metric(&r, "picp_u"), metric(&r, "rmse_u"), metric(&r, "rmse_u_single"));
    Ok(Outcome::new(
        picp > 0.85 && rmse < single,
        format!(
            "picp {picp:.3} (> 0.85), rmse {rmse:.4} < single-fidelity {single:.4}, single-fidelity picp {:.3}",
            metric(&r, "picp_u_single")
        ),
    ))
}

fn inv1d() -> mfbnn::Result<Outcome> {
    let r = bench("inv1d")?;
    let (k, sd) = (metric(&r, "k_mean"), metric(&r, "k_std"));
    let (ru, rf) = (metric(&r, "rmse_u"), metric(&r, "rmse_f"));
    let dk = (k - 1.0).abs();
    Ok(Outcome::new(
        dk <= 0.15 && dk <= 3.0 * sd && ru < 0.1 && rf < 0.1,
        format!("k {k:.4} +- {sd:.4} (|k-1| <= 0.15 and <= 3 std), rmse u {ru:.4}, f {rf:.4} (< 0.1)"),
    ))
}

fn inv2d() -> mfbnn::Result<Outcome> {
    let r = bench("inv2d")?;
    let (k, sd) = (metric(&r, "k_mean"), metric(&r, "k_std"));
    Ok(Outcome::new(
        (k - 1.0).abs() <= 0.2,
        format!("k {k:.4} +- {sd:.4} (|k-1| <= 0.2)"),
    ))
}

fn active() -> mfbnn::Result<Outcome> {
    let f = bench("active-fn")?;
    let added = metric(&f, "added_points");
    let stopped = metric(&f, "stopped") == 1.0;
    let (r0, r1) = (metric(&f, "rmse_u_first"), metric(&f, "rmse_u_last"));
    let fn_ok = stopped && added <= 6.0 && r1 < r0;

    let i = bench("active-inv")?;
    let rounds = metric(&i, "rounds");
    let (eu0, eu1) = (metric(&i, "e_u_first"), metric(&i, "e_u_last"));
    let (ef0, ef1) = (metric(&i, "e_f_first"), metric(&i, "e_f_last"));
    let (k0, k1) = (metric(&i, "k_mean_first"), metric(&i, "k_mean_last"));
    let inv_ok = rounds == 5.0 && eu1 < eu0 && ef1 < ef0 && (k1 - 1.0).abs() < (k0 - 1.0).abs();

    Ok(Outcome::new(
        fn_ok && inv_ok,
        format!(
            "functions: stopped {stopped} after {added} added (<= 6), rmse {r0:.4} -> {r1:.4}; \
             inverse ({rounds} rounds): E_u {eu0:.2e} -> {eu1:.2e}, E_f {ef0:.2e} -> {ef1:.2e}, k {k0:.4} -> {k1:.4}"
        ),
    ))
}

// ---- 9: determinism -----------------------------------------------------

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                files.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    files
}

fn determinism() -> mfbnn::Result<Outcome> {
    let a = out_dir("determinism-a");
    let b = out_dir("determinism-b");
    suites::run_suite("fn1d", Profile::Desk, SEED, &a)?;
    suites::run_suite("fn1d", Profile::Desk, SEED, &b)?;
    let files = csv_files(&a);
    let differing: Vec<String> = files
        .iter()
        .filter(|f| fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    let same_set = files == csv_files(&b);
    Ok(Outcome::new(
        !files.is_empty() && same_set && differing.is_empty(),
        format!("fn1d rerun: {} CSV files, differing {differing:?}", files.len()),
    ))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, u64, Check); 9] = [
        (1, "numerical core vs finite differences", 10, gradients),
        (2, "HMC sampler on analytic targets", 30, sampler),
        (3, "VI on a conjugate Gaussian", 30, variational),
        (4, "1D function reproduction", 180, fn1d),
        (5, "4D function reproduction", 600, fn4d),
        (6, "1D inverse reproduction", 300, inv1d),
        (7, "2D inverse reproduction", 900, inv2d),
        (8, "active learning", 1200, active),
        (9, "determinism", 600, determinism),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let strict = std::env::var("MFBNN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");

    let mut ran = 0;
    let mut passed = 0;
    for (n, name, budget, check) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let in_time = took < Duration::from_secs(budget);
        let (pass, detail) = match result {
            Ok(o) => (o.pass && in_time, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        ran += 1;
        passed += usize::from(pass);
        println!(
            "[{}] {n}. {name}: {detail}; {:.1} s (budget {budget} s{})",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            if in_time { "" } else { ", exceeded" },
        );
    }
    println!("acceptance: {passed}/{ran} criteria passed");
    if strict && passed < ran {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
