//! Functional-input Gaussian-process emulation and Bayesian recovery of an
//! unknown functional input from a noisy simulator output.
//!
//! The pipeline:
//!
//! 1. [`reduction`] compresses vectorized simulator images with an uncentered
//!    principal-component basis.
//! 2. [`figp`] fits one functional-input GP per component score, choosing
//!    between the integral ([`KernelVariant::Linear`]) and L₂-distance
//!    ([`KernelVariant::Nonlinear`]) kernels by closed-form leave-one-out error.
//!    [`multifidelity`] couples a cheap and an accurate simulator through an
//!    autoregressive model instead.
//! 3. [`inverse`] samples the posterior of the input function, realized on a
//!    Sobol node set from [`quasirandom`], with a Gibbs/Metropolis–Hastings
//!    sampler under a Gaussian-process prior.
//!
//! [`synthetic`] supplies two-fidelity forward operators for end-to-end tests.

pub mod emulator;
pub mod error;
pub mod expr;
pub mod figp;
pub mod inverse;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod multifidelity;
mod optim;
pub mod quasirandom;
pub mod reduction;
mod sobol_table;
pub mod synthetic;

pub use emulator::{ComponentModel, Emulator, FitOptions, FitReport, Fidelity};
pub use error::{Error, Result};
pub use expr::FunctionExpr;
pub use figp::FigpModel;
pub use kernels::{FunctionalKernel, KernelVariant, MaternKernel, Smoothness};
pub use multifidelity::MultiFiModel;
pub use quasirandom::{realize, sobol, FunctionSample, NodeSet};
pub use reduction::PcaBasis;
