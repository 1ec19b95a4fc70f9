//! Edge-preserving Bayesian deconvolution of periodic 1-D signals.
//!
//! The unknown signal `u` and an edge-indicator field `v` live in the space of
//! continuous piecewise-linear functions on a dyadic mesh of the unit circle.
//! `v` carries a Gaussian smoothness prior centred at the constant one; given
//! `v`, `u` is Gaussian with a covariance that lets its derivative grow where
//! `v` dips towards zero. The posterior over both fields is explored with a
//! single-component adaptive Metropolis sampler and summarised by its
//! conditional mean.
//!
//! Modules, bottom up:
//! - [`circle`]: meshes, PL/PC functions, `D_q`, cell averaging, inner
//!   products, L² projection, Fourier/Sobolev utilities.
//! - [`bases`]: nested orthonormal bases, the change of basis `S`, and the
//!   conditional covariance `C(v)`.
//! - [`prior`]: samplers and log-densities of the hierarchical prior.
//! - [`forward`]: convolution kernels, the discretized blurring operator and
//!   synthetic measurements.
//! - [`posterior`]: the posterior energy and an incremental evaluation cache.
//! - [`scam`]: the adaptive Metropolis sampler and run reports.
//! - [`convergence`]: level-sweep diagnostics of the discretization.

pub mod bases;
pub mod binio;
pub mod circle;
pub mod convergence;
pub mod error;
pub mod forward;
pub mod io;
pub mod posterior;
pub mod prior;
pub mod quadrature;
pub mod scam;
pub mod signals;
pub mod welford;

pub use error::{Error, Result};
