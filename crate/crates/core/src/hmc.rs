//! Hamiltonian Monte Carlo with identity mass and dual-averaging step adaptation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Energy error beyond which a trajectory counts as divergent.
const MAX_ENERGY_ERROR: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmcConfig {
    pub burn_in: usize,
    pub initial_step: f64,
    /// Leapfrog steps per trajectory.
    pub leapfrog_steps: usize,
    pub samples: usize,
    pub target_accept: f64,
    /// Dual-averaging adaptation during burn-in; the step stays at `initial_step` when off.
    pub adapt: bool,
    /// Fraction of divergent post-burn-in trajectories that aborts the run.
    pub max_divergence_rate: f64,
    /// Post-burn-in acceptance rate below which the run aborts.
    pub min_accept: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            burn_in: 10_000,
            initial_step: 0.1,
            leapfrog_steps: 50,
            samples: 1_000,
            target_accept: 0.75,
            adapt: true,
            max_divergence_rate: 0.1,
            min_accept: 0.05,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.leapfrog_steps == 0 || self.samples == 0 {
            return Err(Error::config("HMC needs leapfrog_steps >= 1 and samples >= 1"));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::config("HMC initial step must be positive"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::config("HMC target acceptance must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Retained chain states `[theta, lambda]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSamples<T = f64> {
    pub states: Vec<Vec<T>>,
    /// Number of trailing coordinates that are unknown constants.
    pub n_lambda: usize,
    pub acceptance_rate: f64,
    pub final_step: f64,
    pub divergences: usize,
}

impl<T: Scalar> PosteriorSamples<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn theta(&self, i: usize) -> &[T] {
        let s = &self.states[i];
        &s[..s.len() - self.n_lambda]
    }

    pub fn lambda(&self, i: usize) -> &[T] {
        let s = &self.states[i];
        &s[s.len() - self.n_lambda..]
    }

    /// Sample mean and population std of every coordinate.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.state_dim();
        let n = self.len() as f64;
        let mut mean = vec![0.0; d];
        for s in &self.states {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v.to_f64_lossy();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for s in &self.states {
            for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
                *acc += (v.to_f64_lossy() - m).powi(2);
            }
        }
        (mean, var.into_iter().map(|v| (v / n).sqrt()).collect())
    }
}

/// End point of a leapfrog trajectory.
#[derive(Clone, Debug)]
pub struct LeapfrogEnd<T> {
    pub log_density: T,
    pub grad: Vec<T>,
    /// Set when the target became non-finite along the way.
    pub diverged: bool,
}

fn half_kick<T: Scalar>(p: &mut [T], grad: &[T], step: T) {
    let h = step * T::lit(0.5);
    for (p, &g) in p.iter_mut().zip(grad) {
        *p += h * g;
    }
}

/// Integrates from `(theta, momentum)` where the target has gradient `grad`.
///
/// `target` returns the log density and its gradient. Non-finite targets stop
/// the trajectory and mark it divergent instead of failing.
pub fn leapfrog_from<T: Scalar, F>(
    theta: &mut [T],
    momentum: &mut [T],
    grad: &[T],
    step: T,
    n_steps: usize,
    target: &mut F,
) -> Result<LeapfrogEnd<T>>
where
    F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
{
    let mut g = grad.to_vec();
    let mut logp = T::nan();
    for _ in 0..n_steps {
        half_kick(momentum, &g, step);
        for (x, &p) in theta.iter_mut().zip(momentum.iter()) {
            *x += step * p;
        }
        match target(theta) {
            Ok((lp, gr)) if lp.is_finite() && gr.iter().all(|v| v.is_finite()) => {
                logp = lp;
                g = gr;
            }
            Ok(_) | Err(Error::NonFinite { .. }) => {
                return Ok(LeapfrogEnd {
                    log_density: T::nan(),
                    grad: g,
                    diverged: true,
                })
            }
            Err(e) => return Err(e),
        }
        half_kick(momentum, &g, step);
    }
    let diverged = !momentum.iter().all(|v| v.is_finite());
    Ok(LeapfrogEnd {
        log_density: logp,
        grad: g,
        diverged,
    })
}

/// Half-kick / drift / half-kick integration of `n_steps` steps in place.
pub fn leapfrog<T: Scalar, F>(
    theta: &mut [T],
    momentum: &mut [T],
    step: T,
    n_steps: usize,
    target: &mut F,
) -> Result<LeapfrogEnd<T>>
where
    F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
{
    if !(step > T::zero()) {
        return Err(Error::config("leapfrog step must be positive"));
    }
    let (_, grad) = target(theta)?;
    leapfrog_from(theta, momentum, &grad, step, n_steps, target)
}

pub fn kinetic<T: Scalar>(p: &[T]) -> T {
    p.iter().map(|&v| v * v).sum::<T>() * T::lit(0.5)
}

/// Dual averaging of the log step size toward a target acceptance.
#[derive(Clone, Debug)]
pub struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_step: f64,
    log_step_bar: f64,
    m: usize,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(initial_step: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * initial_step).ln(),
            target,
            h_bar: 0.0,
            log_step: initial_step.ln(),
            log_step_bar: 0.0,
            m: 0,
        }
    }

    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn averaged_step(&self) -> f64 {
        self.log_step_bar.exp()
    }

    pub fn update(&mut self, accept_prob: f64) {
        self.m += 1;
        let m = self.m as f64;
        let w = 1.0 / (m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        self.log_step = self.mu - m.sqrt() / Self::GAMMA * self.h_bar;
        let eta = m.powf(-Self::KAPPA);
        self.log_step_bar = eta * self.log_step + (1.0 - eta) * self.log_step_bar;
    }
}

/// Runs one chain: `burn_in` adapted iterations (discarded) then `samples` retained ones.
pub fn sample<T: Scalar, F>(
    config: &HmcConfig,
    mut target: F,
    init: &[T],
    n_lambda: usize,
    seed: u64,
) -> Result<PosteriorSamples<T>>
where
    F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
{
    config.validate()?;
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::Sampler("initial state is not finite".into()));
    }
    if n_lambda > init.len() {
        return Err(Error::config("more unknown constants than state coordinates"));
    }
    let d = init.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = init.to_vec();
    let (mut logp, mut grad) = target(&theta)?;
    if !logp.is_finite() {
        return Err(Error::non_finite("log-posterior at the initial state"));
    }
    let mut adapt = DualAveraging::new(config.initial_step, config.target_accept);
    let mut step = config.initial_step;
    let mut states = Vec::with_capacity(config.samples);
    let (mut accepted, mut divergences) = (0usize, 0usize);
    let total = config.burn_in + config.samples;
    for it in 0..total {
        let burning = it < config.burn_in;
        if !burning && it == config.burn_in && config.adapt && config.burn_in > 0 {
            step = adapt.averaged_step();
            log::debug!("HMC burn-in done: step frozen at {step:.3e}");
        }
        if it % 500 == 0 {
            log::debug!("HMC iteration {it}/{total}: log density {}", logp.to_f64_lossy());
        }
        let mut p: Vec<T> = (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::lit(z)
            })
            .collect();
        let h0 = kinetic(&p).to_f64_lossy() - logp.to_f64_lossy();
        let mut proposal = theta.clone();
        let end = leapfrog_from(
            &mut proposal,
            &mut p,
            &grad,
            T::lit(step),
            config.leapfrog_steps,
            &mut target,
        )?;
        let h1 = kinetic(&p).to_f64_lossy() - end.log_density.to_f64_lossy();
        let delta = h1 - h0;
        let divergent = end.diverged || !delta.is_finite() || delta > MAX_ENERGY_ERROR;
        let accept_prob = if divergent { 0.0 } else { (-delta).exp().min(1.0) };
        let u: f64 = rng.random();
        if !divergent && u < accept_prob {
            theta = proposal;
            logp = end.log_density;
            grad = end.grad;
            if !burning {
                accepted += 1;
            }
        }
        if burning {
            if config.adapt {
                adapt.update(accept_prob);
                step = adapt.step();
            }
        } else {
            if divergent {
                divergences += 1;
            }
            states.push(theta.clone());
        }
    }
    let n = config.samples as f64;
    let acceptance_rate = accepted as f64 / n;
    if divergences as f64 > config.max_divergence_rate * n {
        return Err(Error::Sampler(format!(
            "{divergences} of {} retained trajectories diverged (step {step:.3e})",
            config.samples
        )));
    }
    if acceptance_rate < config.min_accept {
        return Err(Error::Sampler(format!(
            "acceptance rate {acceptance_rate:.3} after burn-in is below {} (step {step:.3e})",
            config.min_accept
        )));
    }
    Ok(PosteriorSamples {
        states,
        n_lambda,
        acceptance_rate,
        final_step: step,
        divergences,
    })
}
