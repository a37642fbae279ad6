//! Priors, likelihoods and the unnormalized log-posterior over `[theta, lambda]`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::{BiFidelityDataset, Observation};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lowfi::LowFiSurrogate;
use crate::mlp::{self, MlpSpec};
use crate::physics::{residual_graph, ProblemKind, ProblemSpec, SurrogateInputs};
use crate::scalar::Scalar;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Width rule of one contiguous block of the state vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PriorScale {
    /// `sigma / sqrt(fan_in)`.
    Sigma { fan_in: usize },
    /// A fixed standard deviation.
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorBlock {
    pub offset: usize,
    pub len: usize,
    pub scale: PriorScale,
}

impl PriorBlock {
    pub fn std(&self, sigma: f64) -> f64 {
        match self.scale {
            PriorScale::Sigma { fan_in } => sigma / (fan_in as f64).sqrt(),
            PriorScale::Fixed(s) => s,
        }
    }
}

/// Prior over the network weights (governed by one scale `sigma`) and the unknown constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub sigma: f64,
}

impl PriorSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!("prior scale must be positive, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    /// `(sigma_w, sigma_b)` per layer.
    pub fn layer_scales(&self, spec: &MlpSpec) -> Vec<(f64, f64)> {
        spec.layer_widths()[..spec.n_layers()]
            .iter()
            .map(|&fan_in| (self.sigma / (fan_in as f64).sqrt(), 1.0))
            .collect()
    }

    /// Blocks for a network followed by `n_unknowns` standard-normal constants.
    pub fn blocks(spec: &MlpSpec, n_unknowns: usize) -> Vec<PriorBlock> {
        let mut out = Vec::new();
        for (i, (w, b)) in spec.blocks().into_iter().enumerate() {
            out.push(PriorBlock {
                offset: w.offset,
                len: w.len(),
                scale: PriorScale::Sigma {
                    fan_in: spec.layer_widths()[i],
                },
            });
            out.push(PriorBlock {
                offset: b.offset,
                len: b.len(),
                scale: PriorScale::Fixed(1.0),
            });
        }
        if n_unknowns > 0 {
            out.push(PriorBlock {
                offset: spec.param_count(),
                len: n_unknowns,
                scale: PriorScale::Fixed(1.0),
            });
        }
        out
    }
}

/// A differentiable unnormalized posterior over a flat state vector.
pub trait Model<T: Scalar> {
    fn dim(&self) -> usize;

    fn prior_blocks(&self) -> &[PriorBlock];

    /// Log-likelihood of all data given `theta` (`dim x 1`); `None` when there are no data.
    fn log_likelihood(&self, g: &mut Graph<T>, theta: Var) -> Result<Option<Var>>;
}

/// Gaussian log-density of every block; `log_sigma` is a `1 x 1` node.
pub fn log_prior_graph<T: Scalar>(
    g: &mut Graph<T>,
    theta: Var,
    blocks: &[PriorBlock],
    log_sigma: Var,
) -> Var {
    let mut total = g.constant_scalar(T::zero());
    let mut constant = 0.0;
    for b in blocks {
        if b.len == 0 {
            continue;
        }
        let part = g.slice(theta, b.offset, b.len, 1);
        let sq = g.square(part);
        let ss = g.sum(sq);
        let n = b.len as f64;
        constant -= n * HALF_LN_2PI;
        let term = match b.scale {
            PriorScale::Fixed(s) => {
                constant -= n * s.ln();
                g.scale(ss, T::lit(-0.5 / (s * s)))
            }
            PriorScale::Sigma { fan_in } => {
                // log s = log sigma - 0.5 log fan_in; 1/s^2 = fan_in exp(-2 log sigma)
                let fan_in = fan_in as f64;
                constant += 0.5 * n * fan_in.ln();
                let m2 = g.scale(log_sigma, -T::lit(2.0));
                let inv_var = g.exp(m2);
                let quad = g.scale_by(ss, inv_var);
                let quad = g.scale(quad, T::lit(-0.5 * fan_in));
                let logs = g.scale(log_sigma, T::lit(-n));
                g.add(quad, logs)
            }
        };
        total = g.add(total, term);
    }
    g.offset(total, T::lit(constant))
}

/// `log P(theta) + log P(D | theta)` as a tape node.
pub fn log_joint_graph<T: Scalar, M: Model<T> + ?Sized>(
    g: &mut Graph<T>,
    model: &M,
    theta: Var,
    log_sigma: Var,
) -> Result<Var> {
    let lp = log_prior_graph(g, theta, model.prior_blocks(), log_sigma);
    if !g.scalar_value(lp).is_finite() {
        return Err(Error::non_finite("prior"));
    }
    match model.log_likelihood(g, theta)? {
        Some(ll) => Ok(g.add(lp, ll)),
        None => Ok(lp),
    }
}

/// Value and gradient of the log-posterior at `theta` for prior scale `sigma`.
pub fn log_posterior<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    theta: &[T],
    sigma: f64,
) -> Result<(T, Vec<T>)> {
    if theta.len() != model.dim() {
        return Err(Error::config(format!(
            "state has length {}, model expects {}",
            theta.len(),
            model.dim()
        )));
    }
    let mut g = Graph::new();
    let th = g.param(Matrix::column(theta.to_vec()));
    let ls = g.constant_scalar(T::lit(sigma.ln()));
    let lp = log_joint_graph(&mut g, model, th, ls)?;
    let grads = g
        .backward(lp)
        .map_err(|_| Error::non_finite("log-posterior gradient"))?;
    Ok((g.scalar_value(lp), grads.to_vec(th, theta.len())))
}

/// Sensor class of an observation block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SensorClass {
    U,
    F,
    B,
}

impl SensorClass {
    pub fn term(self) -> &'static str {
        match self {
            SensorClass::U => "likelihood:u",
            SensorClass::F => "likelihood:f",
            SensorClass::B => "likelihood:b",
        }
    }
}

#[derive(Clone, Debug)]
struct ObservationBlock<T> {
    class: SensorClass,
    inputs: SurrogateInputs<T>,
    targets: Matrix<T>,
    inv_sigma: Matrix<T>,
    log_norm: f64,
}

/// BNN surrogate likelihood; the state is `[network parameters, unknowns]`.
#[derive(Clone, Debug)]
pub struct BnnModel<T> {
    spec: MlpSpec,
    kind: ProblemKind,
    n_unknowns: usize,
    prior: Vec<PriorBlock>,
    blocks: Vec<ObservationBlock<T>>,
}

impl<T: Scalar> BnnModel<T> {
    /// With `lowfi` the network sees `(x, u~_L(x))`; without it, `x` only.
    pub fn new(
        spec: MlpSpec,
        problem: &ProblemSpec,
        lowfi: Option<&LowFiSurrogate>,
        data: &BiFidelityDataset,
    ) -> Result<Self> {
        problem.validate()?;
        let dim = problem.dim();
        if data.dim != dim {
            return Err(Error::config(format!(
                "dataset has dimension {}, problem has {dim}",
                data.dim
            )));
        }
        let expected = dim + usize::from(lowfi.is_some());
        if spec.input_dim() != expected {
            return Err(Error::config(format!(
                "surrogate network takes {} inputs, expected {expected}",
                spec.input_dim()
            )));
        }
        if !data.hifi_f.is_empty() && !problem.is_inverse() {
            return Err(Error::config("forcing data given for a regression problem"));
        }
        let mut blocks = Vec::new();
        let sets: [(SensorClass, &Vec<Observation>); 3] = [
            (SensorClass::U, &data.hifi_u),
            (SensorClass::F, &data.hifi_f),
            (SensorClass::B, &data.hifi_b),
        ];
        for (class, obs) in sets {
            if obs.is_empty() {
                continue;
            }
            if let Some(o) = obs.iter().find(|o| !(o.sigma > 0.0)) {
                return Err(Error::config(format!(
                    "{} sensor at {:?} has non-positive noise scale {}",
                    class.term(),
                    o.x,
                    o.sigma
                )));
            }
            if class == SensorClass::B {
                if let Some(o) = obs.iter().find(|o| !problem.on_boundary(&o.x, 1e-9)) {
                    return Err(Error::config(format!("boundary sensor at {:?} is off the boundary", o.x)));
                }
            }
            let points: Vec<Vec<f64>> = obs.iter().map(|o| o.x.clone()).collect();
            let inputs = SurrogateInputs::build(lowfi, &points, dim, class == SensorClass::F)?;
            blocks.push(ObservationBlock {
                class,
                inputs,
                targets: Matrix::row(obs.iter().map(|o| T::lit(o.value)).collect()),
                inv_sigma: Matrix::row(obs.iter().map(|o| T::lit(1.0 / o.sigma)).collect()),
                log_norm: -obs.iter().map(|o| o.sigma.ln() + HALF_LN_2PI).sum::<f64>(),
            });
        }
        let n_unknowns = problem.n_unknowns();
        Ok(Self {
            prior: PriorSpec::blocks(&spec, n_unknowns),
            spec,
            kind: problem.kind,
            n_unknowns,
            blocks,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn n_unknowns(&self) -> usize {
        self.n_unknowns
    }

    pub fn has_data(&self) -> bool {
        !self.blocks.is_empty()
    }
}

impl<T: Scalar> Model<T> for BnnModel<T> {
    fn dim(&self) -> usize {
        self.spec.param_count() + self.n_unknowns
    }

    fn prior_blocks(&self) -> &[PriorBlock] {
        &self.prior
    }

    fn log_likelihood(&self, g: &mut Graph<T>, theta: Var) -> Result<Option<Var>> {
        if self.blocks.is_empty() {
            return Ok(None);
        }
        let layers = mlp::layer_vars(g, &self.spec, theta, 0);
        let n_params = self.spec.param_count();
        let unknowns: Vec<Var> = (0..self.n_unknowns)
            .map(|j| g.slice(theta, n_params + j, 1, 1))
            .collect();
        let mut total: Option<Var> = None;
        for block in &self.blocks {
            let (z0, dirs) = block.inputs.push(g);
            let pred = match block.class {
                SensorClass::U | SensorClass::B => mlp::forward(g, &layers, z0),
                SensorClass::F => {
                    let jet = mlp::forward_jet(g, &layers, z0, &dirs, true);
                    residual_graph(g, self.kind, &jet, &unknowns)?
                }
            };
            let target = g.constant(block.targets.clone());
            let inv = g.constant(block.inv_sigma.clone());
            let r = g.sub(pred, target);
            let r = g.mul(r, inv);
            let r2 = g.square(r);
            let ss = g.sum(r2);
            let ll = g.scale(ss, T::lit(-0.5));
            let ll = g.offset(ll, T::lit(block.log_norm));
            if !g.scalar_value(ll).is_finite() {
                return Err(Error::non_finite(block.class.term()));
            }
            total = Some(match total {
                Some(t) => g.add(t, ll),
                None => ll,
            });
        }
        Ok(total)
    }
}
