//! Low-fidelity network trained by regularized least squares (MAP) with Adam.
//!
//! The loss is `(1/N) sum |u_L - u~_L|^2 + alpha * |w|^2`, where the penalty
//! covers weight matrices only, never biases. Training is full-batch unless a
//! minibatch size is configured.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::Observation;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mlp::{self, Direction, LayerVars, MlpParams, MlpSpec};
use crate::optim::Adam;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// L2 weight on the squared weights.
    pub alpha: f64,
    /// Loss is recorded every `log_every` steps (and at the last step).
    pub log_every: usize,
    /// Optional `(factor, every)` exponential step decay; off by default.
    pub decay: Option<(f64, usize)>,
    /// Minibatch size; `None` means full batch.
    pub batch_size: Option<usize>,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            steps: 50_000,
            alpha: 0.0,
            log_every: 100,
            decay: None,
            batch_size: None,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("MAP learning rate must be > 0"));
        }
        if self.steps == 0 {
            return Err(Error::config("MAP steps must be >= 1"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("MAP alpha must be >= 0"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("MAP batch size must be >= 1"));
        }
        Ok(())
    }
}

/// Regularization weight `sigma_uL^2 / N_L`.
pub fn alpha_from_noise(noise_std: f64, n_points: usize) -> f64 {
    if n_points == 0 {
        return 0.0;
    }
    noise_std * noise_std / n_points as f64
}

/// Frozen low-fidelity network `u~_L(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowFiSurrogate<T = f64> {
    params: MlpParams<T>,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// `(step, loss)` records.
    pub log: Vec<(usize, f64)>,
}

impl<T: Scalar> LowFiSurrogate<T> {
    pub fn from_params(params: MlpParams<T>) -> Self {
        Self {
            params,
            initial_loss: f64::NAN,
            final_loss: f64::NAN,
            log: Vec::new(),
        }
    }

    pub fn params(&self) -> &MlpParams<T> {
        &self.params
    }

    pub fn spec(&self) -> &MlpSpec {
        self.params.spec()
    }

    pub fn input_dim(&self) -> usize {
        self.spec().input_dim()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let xs: Vec<T> = x.iter().map(|&v| T::lit(v)).collect();
        Ok(self.params.forward(&xs)?.to_f64_lossy())
    }

    /// Values, first and diagonal second derivatives at every point.
    ///
    /// `first[d][p]` is `du/dx_d` at point `p`.
    pub fn eval_with_derivatives(&self, points: &[Vec<f64>]) -> Result<LowFiJets> {
        let d = self.input_dim();
        let xs = points_matrix::<T>(points, d)?;
        let n = points.len();
        let mut g = Graph::<T>::new();
        let flat = g.constant(Matrix::column(self.params.flatten().to_vec()));
        let layers = mlp::layer_vars(&mut g, self.spec(), flat, 0);
        let z0 = g.constant(xs);
        let dirs: Vec<Direction> = (0..d)
            .map(|k| Direction {
                first: g.constant(Matrix::from_fn(d, n, |r, _| {
                    if r == k {
                        T::one()
                    } else {
                        T::zero()
                    }
                })),
                second: None,
            })
            .collect();
        let jet = mlp::forward_jet(&mut g, &layers, z0, &dirs, true);
        let row = |v: Var| -> Vec<f64> {
            g.value(v).as_slice().iter().map(|x| x.to_f64_lossy()).collect()
        };
        let out = LowFiJets {
            values: row(jet.value),
            first: jet.first.iter().map(|&v| row(v)).collect(),
            second: jet.second.iter().map(|&v| row(v)).collect(),
        };
        let finite = out
            .values
            .iter()
            .chain(out.first.iter().flatten())
            .chain(out.second.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::non_finite("low-fidelity surrogate derivatives"));
        }
        Ok(out)
    }
}

/// Low-fidelity predictions with input derivatives, one entry per point.
#[derive(Clone, Debug, PartialEq)]
pub struct LowFiJets {
    pub values: Vec<f64>,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

/// `d x P` matrix whose columns are the points.
pub fn points_matrix<T: Scalar>(points: &[Vec<f64>], dim: usize) -> Result<Matrix<T>> {
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::config(format!(
            "point {:?} has dimension {}, expected {dim}",
            bad,
            bad.len()
        )));
    }
    Ok(Matrix::from_fn(dim, points.len(), |r, c| T::lit(points[c][r])))
}

struct MapData<T> {
    xs: Matrix<T>,
    ys: Matrix<T>,
}

fn map_data<T: Scalar>(spec: &MlpSpec, data: &[Observation]) -> Result<MapData<T>> {
    if data.is_empty() {
        return Err(Error::config("low-fidelity dataset is empty"));
    }
    let points: Vec<Vec<f64>> = data.iter().map(|o| o.x.clone()).collect();
    let xs = points_matrix(&points, spec.input_dim())?;
    let ys = Matrix::row(data.iter().map(|o| T::lit(o.value)).collect());
    Ok(MapData { xs, ys })
}

fn loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    spec: &MlpSpec,
    flat: Var,
    xs: Matrix<T>,
    ys: Matrix<T>,
    alpha: f64,
) -> Var {
    let n = xs.cols();
    let layers: Vec<LayerVars> = mlp::layer_vars(g, spec, flat, 0);
    let z0 = g.constant(xs);
    let out = mlp::forward(g, &layers, z0);
    let target = g.constant(ys);
    let r = g.sub(out, target);
    let r2 = g.square(r);
    let sse = g.sum(r2);
    let mut loss = g.scale(sse, T::one() / T::lit(n as f64));
    if alpha > 0.0 {
        for layer in &layers {
            let w2 = g.square(layer.weights);
            let s = g.sum(w2);
            let pen = g.scale(s, T::lit(alpha));
            loss = g.add(loss, pen);
        }
    }
    loss
}

/// Mean squared misfit plus `alpha` times the squared weight norm.
pub fn map_loss<T: Scalar>(params: &MlpParams<T>, data: &[Observation], alpha: f64) -> Result<T> {
    let d = map_data::<T>(params.spec(), data)?;
    let mut g = Graph::new();
    let flat = g.constant(Matrix::column(params.flatten().to_vec()));
    let loss = loss_graph(&mut g, params.spec(), flat, d.xs, d.ys, alpha);
    let v = g.scalar_value(loss);
    if !v.is_finite() {
        return Err(Error::non_finite("MAP loss"));
    }
    Ok(v)
}

/// Gradient of [`map_loss`] with respect to the flat parameters.
pub fn map_loss_gradient<T: Scalar>(
    params: &MlpParams<T>,
    data: &[Observation],
    alpha: f64,
) -> Result<(T, Vec<T>)> {
    let d = map_data::<T>(params.spec(), data)?;
    let mut g = Graph::new();
    let flat = g.param(Matrix::column(params.flatten().to_vec()));
    let loss = loss_graph(&mut g, params.spec(), flat, d.xs, d.ys, alpha);
    let grad = g.gradient(loss, flat)?;
    Ok((g.scalar_value(loss), grad))
}

/// Trains from a Xavier initialization drawn with `seed`.
pub fn train_map<T: Scalar>(
    spec: &MlpSpec,
    data: &[Observation],
    config: &MapConfig,
    seed: u64,
) -> Result<LowFiSurrogate<T>> {
    let init = MlpParams::init_xavier(spec.clone(), seed);
    train_map_from(init, data, config, seed)
}

/// Trains starting from the given parameters.
pub fn train_map_from<T: Scalar>(
    init: MlpParams<T>,
    data: &[Observation],
    config: &MapConfig,
    seed: u64,
) -> Result<LowFiSurrogate<T>> {
    config.validate()?;
    let spec = init.spec().clone();
    let full = map_data::<T>(&spec, data)?;
    let n = data.len();
    let mut theta = init.into_flat();
    let mut adam = Adam::new(theta.len(), T::lit(config.learning_rate));
    if let Some((factor, every)) = config.decay {
        adam = adam.with_decay(T::lit(factor), every);
    }
    let mut batch_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_705f_6261_7463);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;

    let mut log = Vec::new();
    let mut initial_loss = f64::NAN;
    let mut last_loss = f64::NAN;
    for step in 0..config.steps {
        let (xs, ys) = match config.batch_size {
            Some(b) if b < n => {
                if cursor + b > n {
                    order.shuffle(&mut batch_rng);
                    cursor = 0;
                }
                let idx = &order[cursor..cursor + b];
                cursor += b;
                let xs = Matrix::from_fn(full.xs.rows(), b, |r, c| full.xs.get(r, idx[c]));
                let ys = Matrix::from_fn(1, b, |_, c| full.ys.get(0, idx[c]));
                (xs, ys)
            }
            _ => (full.xs.clone(), full.ys.clone()),
        };
        let mut g = Graph::new();
        let flat = g.param(Matrix::column(theta.clone()));
        let loss = loss_graph(&mut g, &spec, flat, xs, ys, config.alpha);
        let value = g.scalar_value(loss).to_f64_lossy();
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        if step == 0 {
            initial_loss = value;
        }
        if step % config.log_every.max(1) == 0 {
            log.push((step, value));
        }
        if step % 1000 == 0 {
            log::debug!("MAP step {step}: loss {value}");
        }
        let grad = g
            .gradient(loss, flat)
            .map_err(|_| Error::Diverged { step, loss: value })?;
        adam.step(&mut theta, &grad);
        last_loss = value;
    }
    let params = MlpParams::unflatten(spec, theta)?;
    // Loss of the returned parameters (the loop records pre-update values).
    let final_loss = if config.batch_size.is_some_and(|b| b < n) {
        last_loss
    } else {
        map_loss(&params, data, config.alpha)
            .map_err(|_| Error::Diverged {
                step: config.steps,
                loss: f64::NAN,
            })?
            .to_f64_lossy()
    };
    log.push((config.steps, final_loss));
    Ok(LowFiSurrogate {
        params,
        initial_loss,
        final_loss,
        log,
    })
}
