//! Mean-field Gaussian variational inference that also fits the prior scale.
//!
//! The objective minimized is `E_Q[log Q(theta) - log P(theta) - log P(D | theta)]`
//! (the negated ELBO), estimated with reparameterized draws
//! `theta = mu + softplus(rho) * eps`. `log sigma` is optimized jointly with
//! `(mu, rho)` by a single Adam loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optim::Adam;
use crate::posterior::{log_joint_graph, Model};
use crate::scalar::Scalar;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Monte-Carlo draws per step.
    pub n_mc: usize,
    pub initial_sigma: f64,
    /// Initial per-coordinate standard deviation of `Q`.
    pub initial_std: f64,
    pub learn_sigma: bool,
    pub log_every: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for ViConfig {
    fn default() -> Self {
        Self {
            steps: 200_000,
            learning_rate: 1e-3,
            n_mc: 1,
            initial_sigma: 1.0,
            initial_std: 0.05,
            learn_sigma: true,
            log_every: 100,
            sigma_min: 1e-3,
            sigma_max: 1e3,
        }
    }
}

impl ViConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.n_mc == 0 {
            return Err(Error::config("VI needs steps >= 1 and n_mc >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("VI learning rate must be positive"));
        }
        if !(self.initial_std > 0.0) {
            return Err(Error::config("VI initial std must be positive"));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.initial_sigma && self.initial_sigma < self.sigma_max) {
            return Err(Error::config("VI needs 0 < sigma_min < initial_sigma < sigma_max"));
        }
        Ok(())
    }
}

/// `rho` such that `softplus(rho) = std`.
pub fn inverse_softplus(std: f64) -> f64 {
    // log(exp(s) - 1), stable for large s
    std + (-(-std).exp_m1()).ln()
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariationalParams<T = f64> {
    pub mu: Vec<T>,
    pub rho: Vec<T>,
}

impl<T: Scalar> VariationalParams<T> {
    pub fn new(mu: Vec<T>, initial_std: f64) -> Self {
        let rho = vec![T::lit(inverse_softplus(initial_std)); mu.len()];
        Self { mu, rho }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.rho.iter().map(|r| softplus(r.to_f64_lossy())).collect()
    }

    /// `mu + softplus(rho) * eps`.
    pub fn reparameterize(&self, eps: &[T]) -> Vec<T> {
        self.mu
            .iter()
            .zip(&self.rho)
            .zip(eps)
            .map(|((&m, &r), &e)| m + T::lit(softplus(r.to_f64_lossy())) * e)
            .collect()
    }
}

/// Standard-normal noise for `n` draws of dimension `dim`.
pub fn draw_noise<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<T>> {
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    T::lit(z)
                })
                .collect()
        })
        .collect()
}

/// Objective value and its gradients for fixed noise draws.
#[derive(Clone, Debug)]
pub struct ViObjective<T> {
    pub value: T,
    pub grad_mu: Vec<T>,
    pub grad_rho: Vec<T>,
    pub grad_log_sigma: T,
}

/// Monte-Carlo objective averaged over the given `eps` draws.
pub fn vi_objective<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    vp: &VariationalParams<T>,
    log_sigma: T,
    eps: &[Vec<T>],
) -> Result<ViObjective<T>> {
    let d = model.dim();
    if vp.dim() != d {
        return Err(Error::config(format!(
            "variational family has dimension {}, model has {d}",
            vp.dim()
        )));
    }
    if eps.is_empty() {
        return Err(Error::config("VI objective needs at least one draw"));
    }
    let mut g = Graph::new();
    let mu = g.param(Matrix::column(vp.mu.clone()));
    let rho = g.param(Matrix::column(vp.rho.clone()));
    let ls = g.param(Matrix::scalar(log_sigma));
    let s = g.softplus(rho);
    let log_s = g.log(s);
    let sum_log_s = g.sum(log_s);
    let inv_n = T::one() / T::lit(eps.len() as f64);
    let mut total = g.constant_scalar(T::zero());
    let mut constant = 0.0;
    for e in eps {
        let e_var = g.constant(Matrix::column(e.clone()));
        let se = g.mul(s, e_var);
        let theta = g.add(mu, se);
        let joint = log_joint_graph(&mut g, model, theta, ls)?;
        // log Q(theta) = -sum log s - sum eps^2/2 - d/2 log 2pi
        let eps_sq: f64 = e.iter().map(|v| v.to_f64_lossy().powi(2)).sum();
        constant += -0.5 * eps_sq - d as f64 * HALF_LN_2PI;
        let term = g.add(sum_log_s, joint);
        total = g.sub(total, term);
    }
    let total = g.offset(total, T::lit(constant));
    let objective = g.scale(total, inv_n);
    let value = g.scalar_value(objective);
    if !value.is_finite() {
        return Err(Error::non_finite("VI objective"));
    }
    let grads = g
        .backward(objective)
        .map_err(|_| Error::non_finite("VI objective gradient"))?;
    Ok(ViObjective {
        value,
        grad_mu: grads.to_vec(mu, d),
        grad_rho: grads.to_vec(rho, d),
        grad_log_sigma: grads.to_vec(ls, 1)[0],
    })
}

/// Deterministic-given-seed estimate of the objective (negated ELBO).
pub fn elbo_estimate<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    vp: &VariationalParams<T>,
    sigma: f64,
    n_mc: usize,
    seed: u64,
) -> Result<T> {
    if n_mc == 0 {
        return Err(Error::config("n_mc must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = draw_noise(&mut rng, n_mc, vp.dim());
    Ok(vi_objective(model, vp, T::lit(sigma.ln()), &eps)?.value)
}

#[derive(Clone, Debug)]
pub struct ViResult<T = f64> {
    pub sigma: f64,
    pub params: VariationalParams<T>,
    /// `(step, objective, sigma)` records.
    pub log: Vec<(usize, f64, f64)>,
}

/// Optimizes `(mu, rho, log sigma)` from means `init_mu`.
pub fn fit_vi<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    init_mu: Vec<T>,
    config: &ViConfig,
    seed: u64,
) -> Result<ViResult<T>> {
    config.validate()?;
    let d = model.dim();
    let mut vp = VariationalParams::new(init_mu, config.initial_std);
    if vp.dim() != d {
        return Err(Error::config(format!(
            "initial means have length {}, model has {d}",
            vp.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Packed as [mu, rho, log sigma] for one Adam state.
    let mut packed: Vec<T> = vp.mu.iter().chain(&vp.rho).copied().collect();
    packed.push(T::lit(config.initial_sigma.ln()));
    let mut adam = Adam::new(packed.len(), T::lit(config.learning_rate));
    let mut log = Vec::new();
    let mut grad = vec![T::zero(); packed.len()];
    for step in 0..config.steps {
        let eps = draw_noise(&mut rng, config.n_mc, d);
        let obj = vi_objective(model, &vp, packed[2 * d], &eps)?;
        let value = obj.value.to_f64_lossy();
        if step % config.log_every.max(1) == 0 {
            log.push((step, value, packed[2 * d].to_f64_lossy().exp()));
            if step % 1000 == 0 {
                log::debug!("VI step {step}: objective {value}, sigma {}", packed[2 * d].to_f64_lossy().exp());
            }
        }
        grad[..d].copy_from_slice(&obj.grad_mu);
        grad[d..2 * d].copy_from_slice(&obj.grad_rho);
        grad[2 * d] = if config.learn_sigma {
            obj.grad_log_sigma
        } else {
            T::zero()
        };
        adam.step(&mut packed, &grad);
        vp.mu.copy_from_slice(&packed[..d]);
        vp.rho.copy_from_slice(&packed[d..2 * d]);
        let sigma = packed[2 * d].to_f64_lossy().exp();
        if !(sigma >= config.sigma_min && sigma <= config.sigma_max) {
            return Err(Error::SigmaOutOfRange { step, sigma });
        }
    }
    Ok(ViResult {
        sigma: packed[2 * d].to_f64_lossy().exp(),
        params: vp,
        log,
    })
}
