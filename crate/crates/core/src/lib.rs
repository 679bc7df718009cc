//! Smoothed semiparametric likelihood estimation for finite multivariate
//! nonparametric mixtures whose within-component dependence is described by
//! a parametric copula.
//!
//! Each component density is `c(F_1(x_1), .., F_d(x_d); theta) * prod_j f_j(x_j)`
//! with nonparametric marginals `f_j` held on uniform grids. Fitting maximizes
//! the empirical smoothed log-likelihood `(1/n) sum_i log sum_k pi_k O f_k(x_i)`
//! where `O` replaces every marginal by its nonlinear (geometric) kernel smooth.
//!
//! Modules, bottom up:
//! - [`grid`]: gridded densities, CDFs, trapezoid quadrature;
//! - [`kernel`]: Gaussian kernel and the nonlinear smoother;
//! - [`copula`]: the FGM family (density, sampling, weighted ML update);
//! - [`marginal`]: weighted KDE updates of the marginals;
//! - [`engine`]: weights, objective, bound diagnostics and the fit loops;
//! - [`init`]: k-means based initialization;
//! - [`sim`]: data generation and the replication harness;
//! - [`cli`]: the `copmix` command line.

pub mod cli;
pub mod copula;
pub mod engine;
mod error;
pub mod grid;
pub mod init;
pub mod kernel;
pub mod marginal;
pub mod sim;

pub use error::{Error, Result};
