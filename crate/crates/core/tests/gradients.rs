//! Reverse-mode gradients and input derivatives against central finite differences.

mod common;

use common::*;
use mfbnn::data::Benchmark;
use mfbnn::lowfi::{self, LowFiSurrogate};
use mfbnn::mlp::{MlpParams, MlpSpec};
use mfbnn::physics::{ProblemSpec, SurrogateComposition};
use mfbnn::posterior::{self, BnnModel, Model};
use mfbnn::vi::{self, VariationalParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DRAWS: u64 = 10;
const H_PARAMS: f64 = 1e-5;
const H_INPUTS: f64 = 1e-4;

/// Low-fidelity topologies of the reference experiments.
const LOFI_TOPOLOGIES: [&[usize]; 3] = [&[1, 20, 20, 1], &[4, 50, 50, 1], &[2, 40, 40, 1]];

#[test]
fn map_loss_gradient_matches_finite_differences() {
    for (t, widths) in LOFI_TOPOLOGIES.iter().enumerate() {
        let b = [Benchmark::Fn1dSinSq, Benchmark::Fn4d, Benchmark::Inv2d][t];
        for draw in 0..DRAWS {
            let params = random_params(widths, 100 * t as u64 + draw);
            let data = small_dataset(b, draw).lofi;
            let alpha = 1e-3;
            let (_, grad) = lowfi::map_loss_gradient(&params, &data, alpha).unwrap();
            let spec = params.spec().clone();
            let fd = central_diff(
                &mut |p| {
                    let q = MlpParams::unflatten(spec.clone(), p.to_vec()).unwrap();
                    lowfi::map_loss(&q, &data, alpha).unwrap()
                },
                params.flatten(),
                H_PARAMS,
            );
            let e = rel_err(&grad, &fd);
            assert!(e < 1e-5, "{widths:?} draw {draw}: rel err {e}");
        }
    }
}

/// `(benchmark, multi-fidelity)` cases for the log-posterior checks.
fn posterior_cases() -> Vec<(Benchmark, bool)> {
    let mut v = Vec::new();
    for b in [Benchmark::Fn1dSinSq, Benchmark::Fn4d, Benchmark::Inv1d, Benchmark::Inv2d] {
        v.push((b, true));
        v.push((b, false));
    }
    v
}

fn build_model(b: Benchmark, multi: bool, seed: u64) -> (BnnModel<f64>, ProblemSpec, Option<LowFiSurrogate>) {
    let problem = b.problem();
    let dim = problem.dim();
    let lofi_widths: Vec<usize> = match b {
        Benchmark::Fn4d => vec![4, 50, 50, 1],
        Benchmark::Inv2d => vec![2, 40, 40, 1],
        _ => vec![1, 20, 20, 1],
    };
    let lowfi = multi.then(|| random_lowfi(&lofi_widths, seed + 7));
    let spec = MlpSpec::with_hidden(dim + usize::from(multi), &[50]).unwrap();
    let data = small_dataset(b, seed);
    let model = BnnModel::new(spec, &problem, lowfi.as_ref(), &data).unwrap();
    (model, problem, lowfi)
}

fn random_state(model: &BnnModel<f64>, seed: u64) -> Vec<f64> {
    let mut theta = random_params(model.spec().layer_widths(), seed).into_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..model.n_unknowns() {
        theta.push(rng.random_range(0.5..1.5));
    }
    theta
}

#[test]
fn log_posterior_gradient_matches_finite_differences() {
    for (b, multi) in posterior_cases() {
        for draw in 0..DRAWS {
            let (model, _, _) = build_model(b, multi, draw);
            let theta = random_state(&model, 31 * draw + 1);
            let sigma = 0.5 + 0.1 * draw as f64;
            let (_, grad) = posterior::log_posterior(&model, &theta, sigma).unwrap();
            let fd = central_diff(
                &mut |t| posterior::log_posterior(&model, t, sigma).unwrap().0,
                &theta,
                H_PARAMS,
            );
            let e = rel_err(&grad, &fd);
            assert!(e < 1e-5, "{} multi={multi} draw {draw}: rel err {e}", b.name());
        }
    }
}

#[test]
fn vi_objective_gradient_matches_finite_differences() {
    for (b, multi) in posterior_cases() {
        for draw in 0..DRAWS {
            let (model, _, _) = build_model(b, multi, draw);
            let d = model.dim();
            let mu = random_state(&model, 17 * draw + 3);
            let mut rng = ChaCha8Rng::seed_from_u64(draw);
            let rho: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..-2.0)).collect();
            let eps = vi::draw_noise::<f64>(&mut rng, 2, d);
            let log_sigma: f64 = rng.random_range(-0.5..0.5);
            let obj = vi::vi_objective(&model, &VariationalParams { mu: mu.clone(), rho: rho.clone() }, log_sigma, &eps).unwrap();

            // Pack (mu, rho, log sigma) into one vector for the finite differences.
            let mut packed = mu.clone();
            packed.extend(&rho);
            packed.push(log_sigma);
            let fd = central_diff(
                &mut |p| {
                    let vp = VariationalParams { mu: p[..d].to_vec(), rho: p[d..2 * d].to_vec() };
                    vi::vi_objective(&model, &vp, p[2 * d], &eps).unwrap().value
                },
                &packed,
                H_PARAMS,
            );
            let mut grad = obj.grad_mu.clone();
            grad.extend(&obj.grad_rho);
            grad.push(obj.grad_log_sigma);
            let e = rel_err(&grad, &fd);
            assert!(e < 1e-5, "{} multi={multi} draw {draw}: rel err {e}", b.name());
        }
    }
}

#[test]
fn mlp_input_derivatives_match_finite_differences() {
    let topologies: [&[usize]; 6] = [
        &[1, 20, 20, 1],
        &[4, 50, 50, 1],
        &[2, 40, 40, 1],
        &[2, 50, 1],
        &[5, 50, 1],
        &[3, 50, 1],
    ];
    for widths in topologies {
        for draw in 0..DRAWS {
            let params = random_params(widths, 1000 + draw);
            let mut rng = ChaCha8Rng::seed_from_u64(draw);
            let x = random_point(&mut rng, widths[0]);
            let r = params.input_derivatives(&x, 2).unwrap();
            let f = |p: &[f64]| params.forward(p).unwrap();
            let du = central_diff(&mut |p| f(p), &x, H_INPUTS);
            let e = rel_err(r.du_dx.as_ref().unwrap(), &du);
            assert!(e < 1e-4, "{widths:?} draw {draw}: first derivative rel err {e}");
            let d2: Vec<f64> = (0..x.len())
                .map(|i| {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += H_INPUTS;
                    xm[i] -= H_INPUTS;
                    (f(&xp) - 2.0 * f(&x) + f(&xm)) / (H_INPUTS * H_INPUTS)
                })
                .collect();
            let e = rel_err(r.d2u_dx2.as_ref().unwrap(), &d2);
            assert!(e < 1e-4, "{widths:?} draw {draw}: second derivative rel err {e}");

            // The value's parameter gradient rides along.
            let spec = params.spec().clone();
            let fd = central_diff(
                &mut |p| MlpParams::unflatten(spec.clone(), p.to_vec()).unwrap().forward(&x).unwrap(),
                params.flatten(),
                H_PARAMS,
            );
            let e = rel_err(&r.grad_params, &fd);
            assert!(e < 1e-5, "{widths:?} draw {draw}: parameter gradient rel err {e}");
        }
    }
}

#[test]
fn composed_derivatives_follow_the_chain_rule() {
    let cases: [(&[usize], &[usize]); 2] = [(&[1, 20, 20, 1], &[2, 50, 1]), (&[2, 40, 40, 1], &[3, 50, 1])];
    for (lofi_w, bnn_w) in cases {
        for draw in 0..DRAWS {
            let lf = random_lowfi(lofi_w, draw);
            let bnn = random_params(bnn_w, 50 + draw);
            let comp = SurrogateComposition::new(Some(&lf), &bnn);
            let mut rng = ChaCha8Rng::seed_from_u64(draw);
            let x = random_point(&mut rng, lofi_w[0]);
            let d = comp.derivatives(&x).unwrap();
            assert!((d.u - comp.value(&x).unwrap()).abs() < 1e-12);
            let v = |p: &[f64]| comp.value(p).unwrap();
            let du = central_diff(&mut |p| v(p), &x, H_INPUTS);
            let e = rel_err(&d.du, &du);
            assert!(e < 1e-4, "draw {draw}: composed first derivative rel err {e}");
            let d2: Vec<f64> = (0..x.len())
                .map(|i| {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += H_INPUTS;
                    xm[i] -= H_INPUTS;
                    (v(&xp) - 2.0 * v(&x) + v(&xm)) / (H_INPUTS * H_INPUTS)
                })
                .collect();
            let e = rel_err(&d.d2u, &d2);
            assert!(e < 1e-4, "draw {draw}: composed second derivative rel err {e}");
        }
    }
}

#[test]
fn f32_gradient_agrees_with_f64() {
    let (model64, problem, lowfi) = build_model(Benchmark::Inv1d, true, 3);
    let data = small_dataset(Benchmark::Inv1d, 3);
    let model32 = BnnModel::<f32>::new(model64.spec().clone(), &problem, lowfi.as_ref(), &data).unwrap();
    let theta = random_state(&model64, 5);
    let theta32: Vec<f32> = theta.iter().map(|&v| v as f32).collect();
    let (v64, g64) = posterior::log_posterior(&model64, &theta, 1.0).unwrap();
    let (v32, g32) = posterior::log_posterior(&model32, &theta32, 1.0).unwrap();
    assert_eq!(model32.dim(), model64.dim());
    assert!(((v32 as f64) - v64).abs() / v64.abs() < 1e-3);
    let g32: Vec<f64> = g32.iter().map(|&v| v as f64).collect();
    assert!(rel_err(&g32, &g64) < 1e-3);
}
