#![allow(dead_code)]

use mfbnn::data::{self, Benchmark, BiFidelityDataset, GeneratorSpec, Layout};
use mfbnn::lowfi::LowFiSurrogate;
use mfbnn::mlp::{MlpParams, MlpSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central differences of a scalar function.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
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

/// `max |a - b| / max |b|`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Xavier draw with every entry (biases included) jittered, so no parameter sits at zero.
pub fn random_params(widths: &[usize], seed: u64) -> MlpParams<f64> {
    let spec = MlpSpec::new(widths.to_vec()).unwrap();
    let mut flat = MlpParams::<f64>::init_xavier(spec.clone(), seed).into_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    for v in &mut flat {
        *v += rng.random_range(-0.2..0.2);
    }
    MlpParams::unflatten(spec, flat).unwrap()
}

pub fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(0.05..0.95)).collect()
}

/// A low-fidelity network with random weights (a stand-in for a trained one).
pub fn random_lowfi(widths: &[usize], seed: u64) -> LowFiSurrogate {
    LowFiSurrogate::from_params(random_params(widths, seed))
}

/// Small dataset of the given benchmark, with every sensor class populated where it applies.
pub fn small_dataset(b: Benchmark, seed: u64) -> BiFidelityDataset {
    let mut g = GeneratorSpec::reference(b, seed);
    g.lofi_count = 20;
    g.lofi_layout = Layout::Random;
    g.hifi_u_count = 6;
    g.hifi_u_layout = Layout::Random;
    let inverse = g.hifi_f_count > 0;
    if inverse {
        g.hifi_f_count = 7;
        g.boundary_per_facet = 1;
    }
    let mut ds = data::generate(&g).unwrap();
    if inverse {
        // Exercise the separate boundary likelihood too.
        ds.hifi_b = ds.hifi_u.split_off(6);
    }
    ds
}
