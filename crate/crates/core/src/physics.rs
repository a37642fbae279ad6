//! Physics-informed residuals of the high-fidelity surrogate.
//!
//! The surrogate is `u~(x) = B(x, u~_L(x); theta)` in multi-fidelity mode and
//! `B(x; theta)` in single-fidelity mode. Spatial derivatives are total
//! derivatives through the frozen low-fidelity network:
//!
//! ```text
//! du/dx   = B_x + B_u u_L'
//! d2u/dx2 = B_xx + 2 B_xu u_L' + B_uu (u_L')^2 + B_u u_L''
//! ```
//!
//! which is the second derivative of `B` along the input-space path
//! `t -> (x + t e_d, u_L(x + t e_d))`. [`SurrogateInputs`] precomputes the
//! path tangents `(e_d, u_L')` and curvatures `(0, u_L'')` for a fixed point
//! set; the network jet does the rest.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lowfi::{points_matrix, LowFiSurrogate};
use crate::mlp::{self, Direction, Jet, MlpParams};
use crate::scalar::Scalar;

/// Diffusion coefficient of the 1D operator, `1 / (192 pi^2)`.
pub fn diffusion_1d() -> f64 {
    1.0 / (192.0 * PI * PI)
}

/// Advection coefficient of the 1D operator, `1 / (24 pi)` (multiplied by `k`).
pub fn advection_1d() -> f64 {
    1.0 / (24.0 * PI)
}

/// Diffusion coefficient of the 2D operator.
pub const DIFFUSION_2D: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Regression,
    DiffusionReaction1d,
    DiffusionReaction2d,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Per-coordinate `[lo, hi]` bounds of the domain.
    pub bounds: Vec<(f64, f64)>,
    /// Names of unknown PDE constants; empty for regression.
    pub unknowns: Vec<String>,
}

impl ProblemSpec {
    pub fn regression(bounds: Vec<(f64, f64)>) -> Self {
        Self {
            kind: ProblemKind::Regression,
            bounds,
            unknowns: Vec::new(),
        }
    }

    /// `u_xx / (192 pi^2) - k/(24 pi) u u_x = f` on `[0, 1]`.
    pub fn diffusion_reaction_1d() -> Self {
        Self {
            kind: ProblemKind::DiffusionReaction1d,
            bounds: vec![(0.0, 1.0)],
            unknowns: vec!["k".into()],
        }
    }

    /// `0.01 (u_xx + u_yy) - k u^2 = f` on `[-1, 1]^2`.
    pub fn diffusion_reaction_2d() -> Self {
        Self {
            kind: ProblemKind::DiffusionReaction2d,
            bounds: vec![(-1.0, 1.0), (-1.0, 1.0)],
            unknowns: vec!["k".into()],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn n_unknowns(&self) -> usize {
        self.unknowns.len()
    }

    pub fn is_inverse(&self) -> bool {
        self.kind != ProblemKind::Regression
    }

    pub fn validate(&self) -> Result<()> {
        let expected_dim = match self.kind {
            ProblemKind::Regression => None,
            ProblemKind::DiffusionReaction1d => Some(1),
            ProblemKind::DiffusionReaction2d => Some(2),
        };
        if let Some(d) = expected_dim {
            if self.dim() != d {
                return Err(Error::config(format!(
                    "{:?} needs a {d}-dimensional domain",
                    self.kind
                )));
            }
        }
        if self.is_inverse() == self.unknowns.is_empty() {
            return Err(Error::config(
                "unknown constants must be declared exactly for inverse problems",
            ));
        }
        if self.kind != ProblemKind::Regression && self.n_unknowns() != 1 {
            return Err(Error::config("diffusion-reaction operators take exactly one unknown k"));
        }
        if self.bounds.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::config("domain bounds must satisfy lo < hi"));
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.bounds)
                .all(|(&v, &(lo, hi))| v >= lo - tol && v <= hi + tol)
    }

    pub fn on_boundary(&self, x: &[f64], tol: f64) -> bool {
        self.contains(x, tol)
            && x.iter()
                .zip(&self.bounds)
                .any(|(&v, &(lo, hi))| (v - lo).abs() <= tol || (v - hi).abs() <= tol)
    }
}

/// 1D operator applied to field values.
pub fn residual_1d_value<T: Scalar>(u: T, ux: T, uxx: T, k: T) -> T {
    T::lit(diffusion_1d()) * uxx - k * T::lit(advection_1d()) * u * ux
}

/// 2D operator applied to field values.
pub fn residual_2d_value<T: Scalar>(u: T, uxx: T, uyy: T, k: T) -> T {
    T::lit(DIFFUSION_2D) * (uxx + uyy) - k * u * u
}

/// Residual operator on tape nodes: `jet` rows are `1 x P`, `unknowns` are `1 x 1`.
pub fn residual_graph<T: Scalar>(
    g: &mut Graph<T>,
    kind: ProblemKind,
    jet: &Jet,
    unknowns: &[Var],
) -> Result<Var> {
    match kind {
        ProblemKind::Regression => Err(Error::Unsupported(
            "regression problems have no differential operator".into(),
        )),
        ProblemKind::DiffusionReaction1d => {
            let diff = g.scale(jet.second[0], T::lit(diffusion_1d()));
            let uux = g.mul(jet.value, jet.first[0]);
            let adv = g.scale_by(uux, unknowns[0]);
            let adv = g.scale(adv, T::lit(advection_1d()));
            Ok(g.sub(diff, adv))
        }
        ProblemKind::DiffusionReaction2d => {
            let lap = g.add(jet.second[0], jet.second[1]);
            let diff = g.scale(lap, T::lit(DIFFUSION_2D));
            let u2 = g.square(jet.value);
            let react = g.scale_by(u2, unknowns[0]);
            Ok(g.sub(diff, react))
        }
    }
}

/// Network inputs for a fixed set of points, with optional path derivatives.
#[derive(Clone, Debug)]
pub struct SurrogateInputs<T> {
    /// `N_0 x P`: rows are `x_1..x_D` and, in multi-fidelity mode, `u~_L`.
    pub z0: Matrix<T>,
    /// Per spatial dimension: tangent and curvature of the input path.
    pub tangents: Vec<Matrix<T>>,
    pub curvatures: Vec<Matrix<T>>,
}

impl<T: Scalar> SurrogateInputs<T> {
    pub fn build(
        lowfi: Option<&LowFiSurrogate>,
        points: &[Vec<f64>],
        dim: usize,
        with_derivatives: bool,
    ) -> Result<Self> {
        let xs = points_matrix::<f64>(points, dim)?;
        let n = points.len();
        let Some(lf) = lowfi else {
            let tangents = if with_derivatives {
                (0..dim).map(|d| unit_rows(dim, n, d)).collect()
            } else {
                Vec::new()
            };
            return Ok(Self {
                z0: xs.cast(),
                tangents,
                curvatures: Vec::new(),
            });
        };
        if lf.input_dim() != dim {
            return Err(Error::config(format!(
                "low-fidelity network takes {} inputs, domain has {dim}",
                lf.input_dim()
            )));
        }
        let rows = dim + 1;
        if !with_derivatives {
            let values: Vec<f64> = if n == 0 {
                Vec::new()
            } else {
                lf.params().forward_batch(&xs)?
            };
            let z0 = Matrix::from_fn(rows, n, |r, c| {
                T::lit(if r < dim { xs.get(r, c) } else { values[c] })
            });
            return Ok(Self {
                z0,
                tangents: Vec::new(),
                curvatures: Vec::new(),
            });
        }
        let jets = lf.eval_with_derivatives(points)?;
        let z0 = Matrix::from_fn(rows, n, |r, c| {
            T::lit(if r < dim { xs.get(r, c) } else { jets.values[c] })
        });
        let tangents = (0..dim)
            .map(|d| {
                Matrix::from_fn(rows, n, |r, c| {
                    if r == d {
                        T::one()
                    } else if r == dim {
                        T::lit(jets.first[d][c])
                    } else {
                        T::zero()
                    }
                })
            })
            .collect();
        let curvatures = (0..dim)
            .map(|d| {
                Matrix::from_fn(rows, n, |r, c| {
                    if r == dim {
                        T::lit(jets.second[d][c])
                    } else {
                        T::zero()
                    }
                })
            })
            .collect();
        Ok(Self {
            z0,
            tangents,
            curvatures,
        })
    }

    pub fn n_points(&self) -> usize {
        self.z0.cols()
    }

    pub fn has_derivatives(&self) -> bool {
        !self.tangents.is_empty()
    }

    /// Pushes the inputs as constants; returns the input node and directions.
    pub fn push(&self, g: &mut Graph<T>) -> (Var, Vec<Direction>) {
        let z0 = g.constant(self.z0.clone());
        let dirs = self
            .tangents
            .iter()
            .enumerate()
            .map(|(d, t)| Direction {
                first: g.constant(t.clone()),
                second: self.curvatures.get(d).map(|c| g.constant(c.clone())),
            })
            .collect();
        (z0, dirs)
    }
}

fn unit_rows<T: Scalar>(rows: usize, cols: usize, hot: usize) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |r, _| if r == hot { T::one() } else { T::zero() })
}

/// Field value and total spatial derivatives at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldDerivatives {
    pub u: f64,
    pub du: Vec<f64>,
    pub d2u: Vec<f64>,
}

/// High-fidelity surrogate: a BNN parameter draw wired to the frozen low-fidelity network.
#[derive(Clone, Copy, Debug)]
pub struct SurrogateComposition<'a> {
    pub lowfi: Option<&'a LowFiSurrogate>,
    pub bnn: &'a MlpParams<f64>,
}

impl<'a> SurrogateComposition<'a> {
    pub fn new(lowfi: Option<&'a LowFiSurrogate>, bnn: &'a MlpParams<f64>) -> Self {
        Self { lowfi, bnn }
    }

    fn spatial_dim(&self) -> usize {
        let n0 = self.bnn.spec().input_dim();
        if self.lowfi.is_some() {
            n0 - 1
        } else {
            n0
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let inputs = SurrogateInputs::<f64>::build(self.lowfi, &[x.to_vec()], self.spatial_dim(), false)?;
        Ok(self.bnn.forward_batch(&inputs.z0)?[0])
    }

    /// Total first and diagonal second derivatives, including the path through `u~_L`.
    pub fn derivatives(&self, x: &[f64]) -> Result<FieldDerivatives> {
        let dim = self.spatial_dim();
        let inputs = SurrogateInputs::<f64>::build(self.lowfi, &[x.to_vec()], dim, true)?;
        let mut g = Graph::new();
        let flat = g.constant(Matrix::column(self.bnn.flatten().to_vec()));
        let layers = mlp::layer_vars(&mut g, self.bnn.spec(), flat, 0);
        let (z0, dirs) = inputs.push(&mut g);
        let jet = mlp::forward_jet(&mut g, &layers, z0, &dirs, true);
        Ok(FieldDerivatives {
            u: g.scalar_value(jet.value),
            du: jet.first.iter().map(|&v| g.scalar_value(v)).collect(),
            d2u: jet.second.iter().map(|&v| g.scalar_value(v)).collect(),
        })
    }

    /// `u_xx / (192 pi^2) - k/(24 pi) u u_x` at `x`.
    pub fn residual_1d(&self, k: f64, x: f64) -> Result<f64> {
        let d = self.derivatives(&[x])?;
        Ok(residual_1d_value(d.u, d.du[0], d.d2u[0], k))
    }

    /// `0.01 (u_xx + u_yy) - k u^2` at `(x, y)`.
    pub fn residual_2d(&self, k: f64, x: f64, y: f64) -> Result<f64> {
        let d = self.derivatives(&[x, y])?;
        Ok(residual_2d_value(d.u, d.d2u[0], d.d2u[1], k))
    }

    /// Dirichlet boundary operator: the surrogate value at a boundary point.
    pub fn boundary_value(&self, problem: &ProblemSpec, x_b: &[f64]) -> Result<f64> {
        if !problem.on_boundary(x_b, 1e-9) {
            return Err(Error::config(format!("{x_b:?} is not on the domain boundary")));
        }
        self.value(x_b)
    }
}
