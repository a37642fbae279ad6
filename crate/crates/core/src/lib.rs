//! Multi-fidelity Bayesian neural networks.
//!
//! A low-fidelity network is fitted by regularized least squares and frozen;
//! its prediction becomes an extra input of a Bayesian network trained on
//! scarce high-fidelity data (and, for inverse problems, PDE residuals). The
//! prior scale comes from mean-field variational inference, the posterior
//! from Hamiltonian Monte Carlo.
//!
//! The numerical core (`autodiff`, `mlp`, `optim`, `lowfi`, `posterior`,
//! `vi`, `hmc`) is generic over [`Scalar`] (`f32` or `f64`); the end-to-end
//! pipeline works in `f64`.

pub mod active;
pub mod archive;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod hmc;
pub mod linalg;
pub mod lowfi;
pub mod metrics;
pub mod mlp;
pub mod optim;
pub mod physics;
pub mod pipeline;
pub mod posterior;
pub mod scalar;
pub mod seed;
pub mod suites;
pub mod vi;

pub use error::{Error, Result, Stage};
pub use scalar::Scalar;

pub type Real = f64;
pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type MlpParams64 = mlp::MlpParams<f64>;
pub type MlpParams32 = mlp::MlpParams<f32>;
pub type Samples64 = hmc::PosteriorSamples<f64>;
