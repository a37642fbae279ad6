//! Fully connected tanh networks with a scalar output.
//!
//! Parameters live in one flat vector. Layer `l` contributes its weight
//! matrix `W_l` (`N_{l+1} x N_l`, row-major) followed by its bias `b_l`
//! (`N_{l+1}`), for `l = 0..=L`. The same layout is used by the MAP trainer,
//! the variational family and the sampler state.
//!
//! Points are stored column-wise: a batch of `P` inputs is an `N_0 x P`
//! matrix, and the network output is a `1 x P` row.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    layer_widths: Vec<usize>,
}

/// Location of one weight matrix or bias vector inside the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Block {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

impl MlpSpec {
    /// `[N_0, N_1, ..., N_L, 1]` with at least one hidden layer.
    pub fn new(layer_widths: Vec<usize>) -> Result<Self> {
        if layer_widths.len() < 3 {
            return Err(Error::config(
                "network needs an input width, at least one hidden width and an output width",
            ));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::config("layer widths must be >= 1"));
        }
        if *layer_widths.last().expect("non-empty") != 1 {
            return Err(Error::config("output width must be exactly 1"));
        }
        Ok(Self { layer_widths })
    }

    /// Input width, hidden widths, output width 1.
    pub fn with_hidden(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(hidden);
        widths.push(1);
        Self::new(widths)
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    /// Number of affine layers (hidden layers + output layer).
    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    /// `(weights, bias)` blocks for every layer, in storage order.
    pub fn blocks(&self) -> Vec<(Block, Block)> {
        let mut offset = 0;
        self.layer_widths
            .windows(2)
            .map(|w| {
                let weights = Block {
                    offset,
                    rows: w[1],
                    cols: w[0],
                };
                offset += weights.len();
                let bias = Block {
                    offset,
                    rows: w[1],
                    cols: 1,
                };
                offset += bias.len();
                (weights, bias)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    spec: MlpSpec,
    flat: Vec<T>,
}

impl<T: Scalar> MlpParams<T> {
    pub fn unflatten(spec: MlpSpec, flat: Vec<T>) -> Result<Self> {
        if flat.len() != spec.param_count() {
            return Err(Error::config(format!(
                "parameter vector has length {}, network {:?} needs {}",
                flat.len(),
                spec.layer_widths(),
                spec.param_count()
            )));
        }
        Ok(Self { spec, flat })
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let flat = vec![T::zero(); spec.param_count()];
        Self { spec, flat }
    }

    /// Xavier-uniform weights (`U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`), zero biases.
    pub fn init_xavier(spec: MlpSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flat = vec![T::zero(); spec.param_count()];
        for (w, _) in spec.blocks() {
            let limit = (6.0 / (w.rows + w.cols) as f64).sqrt();
            for v in &mut flat[w.range()] {
                *v = T::lit(rng.random_range(-limit..limit));
            }
        }
        Self { spec, flat }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn flatten(&self) -> &[T] {
        &self.flat
    }

    pub fn into_flat(self) -> Vec<T> {
        self.flat
    }

    pub fn weight_matrix(&self, layer: usize) -> Matrix<T> {
        let (w, _) = self.spec.blocks()[layer];
        Matrix::from_vec(w.rows, w.cols, self.flat[w.range()].to_vec()).expect("block size")
    }

    pub fn bias(&self, layer: usize) -> &[T] {
        let (_, b) = self.spec.blocks()[layer];
        &self.flat[b.range()]
    }

    /// Network output at one input point.
    pub fn forward(&self, x: &[T]) -> Result<T> {
        let out = self.forward_batch(&Matrix::column(x.to_vec()))?;
        Ok(out[0])
    }

    /// Outputs at every column of `xs` (`N_0 x P`).
    pub fn forward_batch(&self, xs: &Matrix<T>) -> Result<Vec<T>> {
        check_input(&self.spec, xs.rows())?;
        let mut g = Graph::new();
        let flat = g.constant(Matrix::column(self.flat.clone()));
        let layers = layer_vars(&mut g, &self.spec, flat, 0);
        let z0 = g.constant(xs.clone());
        let out = forward(&mut g, &layers, z0);
        let value = g.value(out);
        if !value.is_finite() {
            return Err(Error::non_finite("network output"));
        }
        Ok(value.as_slice().to_vec())
    }

    /// Output, its parameter gradient, and (for `order >= 1`) the per-coordinate
    /// input derivatives `du/dx_i` and, for `order == 2`, `d2u/dx_i^2`.
    pub fn input_derivatives(&self, x: &[T], order: usize) -> Result<DiffResult<T>> {
        if order > 2 {
            return Err(Error::Unsupported(format!(
                "input derivatives of order {order} (at most 2)"
            )));
        }
        check_input(&self.spec, x.len())?;
        let n0 = x.len();
        let mut g = Graph::new();
        let flat = g.param(Matrix::column(self.flat.clone()));
        let layers = layer_vars(&mut g, &self.spec, flat, 0);
        let z0 = g.constant(Matrix::column(x.to_vec()));
        let dirs: Vec<Direction> = if order == 0 {
            Vec::new()
        } else {
            (0..n0)
                .map(|i| {
                    let e = Matrix::from_fn(n0, 1, |r, _| if r == i { T::one() } else { T::zero() });
                    Direction {
                        first: g.constant(e),
                        second: None,
                    }
                })
                .collect()
        };
        let jet = forward_jet(&mut g, &layers, z0, &dirs, order == 2);
        let value = g.scalar_value(jet.value);
        let grad_params = g.gradient(jet.value, flat)?;
        let du_dx = (order >= 1).then(|| jet.first.iter().map(|&v| g.scalar_value(v)).collect());
        let d2u_dx2 = (order == 2).then(|| jet.second.iter().map(|&v| g.scalar_value(v)).collect());
        let result = DiffResult {
            value,
            grad_params,
            du_dx,
            d2u_dx2,
        };
        if !result.is_finite() {
            return Err(Error::non_finite("input derivatives"));
        }
        Ok(result)
    }

    pub fn cast<U: Scalar>(&self) -> MlpParams<U> {
        MlpParams {
            spec: self.spec.clone(),
            flat: self.flat.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

fn check_input(spec: &MlpSpec, rows: usize) -> Result<()> {
    if rows != spec.input_dim() {
        return Err(Error::config(format!(
            "input has dimension {rows}, network expects {}",
            spec.input_dim()
        )));
    }
    Ok(())
}

/// Value and derivatives of a network output at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffResult<T> {
    pub value: T,
    /// Gradient of `value` with respect to the flat parameter vector.
    pub grad_params: Vec<T>,
    pub du_dx: Option<Vec<T>>,
    /// Diagonal second derivatives only.
    pub d2u_dx2: Option<Vec<T>>,
}

impl<T: Scalar> DiffResult<T> {
    fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad_params.iter().all(|v| v.is_finite())
            && self.du_dx.iter().flatten().all(|v| v.is_finite())
            && self.d2u_dx2.iter().flatten().all(|v| v.is_finite())
    }
}

/// Weight and bias nodes of one layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub weights: Var,
    pub bias: Var,
}

/// Slices the layers of a `spec`-shaped network out of `flat`, starting at `offset`.
pub fn layer_vars<T: Scalar>(g: &mut Graph<T>, spec: &MlpSpec, flat: Var, offset: usize) -> Vec<LayerVars> {
    spec.blocks()
        .into_iter()
        .map(|(w, b)| LayerVars {
            weights: g.slice(flat, offset + w.offset, w.rows, w.cols),
            bias: g.slice(flat, offset + b.offset, b.rows, b.cols),
        })
        .collect()
}

/// Plain forward pass: `1 x P` output for the `N_0 x P` input `z0`.
pub fn forward<T: Scalar>(g: &mut Graph<T>, layers: &[LayerVars], z0: Var) -> Var {
    let mut z = z0;
    for (i, layer) in layers.iter().enumerate() {
        let wz = g.matmul(layer.weights, z);
        let a = g.add_bias(wz, layer.bias);
        z = if i + 1 == layers.len() { a } else { g.tanh(a) };
    }
    z
}

/// Input-space direction along which derivatives are propagated.
///
/// For a path `x(t)` through input space, `first` holds `x'` and `second`
/// holds `x''` (`None` meaning zero), both `N_0 x P`. The jet then carries
/// `d/dt u(x(t))` and `d2/dt2 u(x(t))`, which is exactly what is needed to
/// differentiate a network whose inputs themselves depend on the spatial
/// coordinate.
#[derive(Clone, Copy, Debug)]
pub struct Direction {
    pub first: Var,
    pub second: Option<Var>,
}

/// Network output together with first (and optionally second) derivatives
/// along each requested [`Direction`]. All entries are `1 x P` rows.
#[derive(Clone, Debug)]
pub struct Jet {
    pub value: Var,
    pub first: Vec<Var>,
    pub second: Vec<Var>,
}

/// Forward-mode propagation of directional derivatives, built from tape
/// primitives so that their parameter gradients come from [`Graph::backward`].
///
/// With `z = tanh(a)` and `s = 1 - z^2`: `z' = s a'` and
/// `z'' = s a'' - 2 z s (a')^2`.
pub fn forward_jet<T: Scalar>(
    g: &mut Graph<T>,
    layers: &[LayerVars],
    z0: Var,
    dirs: &[Direction],
    second_order: bool,
) -> Jet {
    let mut z = z0;
    let mut dz: Vec<Var> = dirs.iter().map(|d| d.first).collect();
    let mut d2z: Vec<Option<Var>> = dirs.iter().map(|d| d.second).collect();
    let last = layers.len() - 1;
    for (i, layer) in layers.iter().enumerate() {
        let wz = g.matmul(layer.weights, z);
        let a = g.add_bias(wz, layer.bias);
        let da: Vec<Var> = dz.iter().map(|&d| g.matmul(layer.weights, d)).collect();
        let d2a: Vec<Option<Var>> = if second_order {
            d2z.iter()
                .map(|d| d.map(|d| g.matmul(layer.weights, d)))
                .collect()
        } else {
            Vec::new()
        };
        if i == last {
            let second = d2a
                .into_iter()
                .map(|d| d.expect("a hidden layer always produces a second-order term"))
                .collect();
            return Jet {
                value: a,
                first: da,
                second,
            };
        }
        z = g.tanh(a);
        let z2 = g.square(z);
        let neg_z2 = g.neg(z2);
        let slope = g.offset(neg_z2, T::one());
        dz = da.iter().map(|&d| g.mul(slope, d)).collect();
        if second_order {
            let zs = g.mul(z, slope);
            let curvature = g.scale(zs, -T::lit(2.0));
            d2z = da
                .iter()
                .zip(&d2a)
                .map(|(&d1, d2)| {
                    let d1sq = g.square(d1);
                    let bend = g.mul(curvature, d1sq);
                    Some(match d2 {
                        Some(d2) => {
                            let lin = g.mul(slope, *d2);
                            g.add(lin, bend)
                        }
                        None => bend,
                    })
                })
                .collect();
        }
    }
    unreachable!("network has at least one layer")
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    format: String,
    version: u32,
    layer_widths: Vec<usize>,
    param_count: usize,
}

const SNAPSHOT_FORMAT: &str = "mfbnn.mlp";

/// Writes a one-line JSON header followed by the parameters as little-endian `f64`.
pub fn write_snapshot<T: Scalar>(params: &MlpParams<T>, mut w: impl Write) -> Result<()> {
    let header = SnapshotHeader {
        format: SNAPSHOT_FORMAT.to_string(),
        version: 1,
        layer_widths: params.spec.layer_widths.clone(),
        param_count: params.flat.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    crate::archive::write_f64s(&mut w, params.flat.iter().map(|v| v.to_f64_lossy()))?;
    Ok(())
}

pub fn read_snapshot(mut r: impl Read) -> Result<MlpParams<f64>> {
    let line = crate::archive::read_header_line(&mut r)?;
    let header: SnapshotHeader = serde_json::from_str(&line)?;
    if header.format != SNAPSHOT_FORMAT {
        return Err(Error::config(format!("not a network snapshot: {}", header.format)));
    }
    let spec = MlpSpec::new(header.layer_widths)?;
    let flat = crate::archive::read_f64s(&mut r, header.param_count)?;
    MlpParams::unflatten(spec, flat)
}
