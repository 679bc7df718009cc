//! Gaussian kernel and the nonlinear (geometric) kernel smoother.
//!
//! The smoother maps a density `f` to
//!
//! ```text
//! N_h f(x) = exp( int_{-a h}^{a h} K_h(u) log max{ f(x - u), floor } du )
//! ```
//!
//! with a truncated window (`a = 1.96` by default) and a log floor (`1e-5`).
//! The window mass `2 Phi(a) - 1` is not renormalized, so `N_h` of a
//! constant `c` is `c^0.9500042`, not `c`.

use libm::erfc;
use serde::{Deserialize, Serialize};

use crate::grid::GriddedDensity;
use crate::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn gaussian_kernel(u: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * u * u).exp()
}

/// Standard normal CDF.
pub fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// A strictly positive, finite kernel bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(h: f64) -> Result<Self> {
        if h.is_finite() && h > 0.0 {
            Ok(Bandwidth(h))
        } else {
            Err(Error::InvalidInput(format!(
                "bandwidth must be positive and finite, got {h}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Bandwidth {
    type Error = Error;

    fn try_from(h: f64) -> Result<Self> {
        Bandwidth::new(h)
    }
}

impl From<Bandwidth> for f64 {
    fn from(h: Bandwidth) -> f64 {
        h.0
    }
}

/// `K_h(u) = K(u / h) / h`.
pub fn kernel_h(u: f64, h: Bandwidth) -> f64 {
    gaussian_kernel(u / h.0) / h.0
}

/// Tuning of the nonlinear smoother.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmootherConfig {
    /// Half-width of the integration window, in bandwidths.
    pub window: f64,
    /// Floor applied to `f` before taking the logarithm.
    pub log_floor: f64,
    /// Number of equal panels over the window.
    pub panels: usize,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            window: 1.96,
            log_floor: 1e-5,
            panels: 64,
        }
    }
}

/// Precomputed quadrature for the nonlinear smoother.
///
/// `log f` is interpolated linearly between `panels + 1` equally spaced
/// nodes of the standardized window `[-a, a]`, and the Gaussian kernel is
/// integrated exactly against each hat function. The weights therefore sum
/// to the exact window mass `2 Phi(a) - 1`.
#[derive(Debug, Clone)]
pub struct Smoother {
    config: SmootherConfig,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Smoother {
    pub fn new(config: SmootherConfig) -> Result<Self> {
        if !(config.window.is_finite() && config.window > 0.0) {
            return Err(Error::InvalidInput(format!(
                "window must be positive, got {}",
                config.window
            )));
        }
        if !(config.log_floor >= 0.0 && config.log_floor.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "log floor must be >= 0, got {}",
                config.log_floor
            )));
        }
        if config.panels < 2 {
            return Err(Error::InvalidInput("smoother needs at least 2 panels".into()));
        }
        let a = config.window;
        let p = config.panels;
        let delta = 2.0 * a / p as f64;
        let nodes: Vec<f64> = (0..=p).map(|i| -a + i as f64 * delta).collect();
        let mut weights = vec![0.0; p + 1];
        for i in 0..p {
            let (t0, t1) = (nodes[i], nodes[i + 1]);
            // mass and first moment of the standard normal on [t0, t1]
            let m0 = standard_normal_cdf(t1) - standard_normal_cdf(t0);
            let m1 = gaussian_kernel(t0) - gaussian_kernel(t1);
            weights[i] += (t1 * m0 - m1) / delta;
            weights[i + 1] += (m1 - t0 * m0) / delta;
        }
        Ok(Smoother { config, nodes, weights })
    }

    pub fn config(&self) -> &SmootherConfig {
        &self.config
    }

    /// Kernel mass captured by the truncated window.
    pub fn window_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Standardized quadrature nodes and their weights.
    pub fn rule(&self) -> (&[f64], &[f64]) {
        (&self.nodes, &self.weights)
    }

    /// `N_h f(x)` by the truncated, floored rule.
    pub fn smooth_at(&self, f: &GriddedDensity, h: Bandwidth, x: f64) -> Result<f64> {
        let floor = self.config.log_floor;
        let mut acc = 0.0;
        for (t, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f.eval(x - h.0 * t).max(floor).ln();
        }
        let out = acc.exp();
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::Numerical(format!("nonlinear smooth at {x} is {out}")))
        }
    }

    /// `N_h f` at every point of `f`'s grid; the result is not normalized.
    pub fn smooth_on_grid(&self, f: &GriddedDensity, h: Bandwidth) -> Result<Vec<f64>> {
        f.grid().points().map(|x| self.smooth_at(f, h, x)).collect()
    }
}

impl Default for Smoother {
    fn default() -> Self {
        Smoother::new(SmootherConfig::default()).expect("default smoother config is valid")
    }
}

/// `N_h f(x)` with the default window and floor.
pub fn nonlinear_smooth_at(f: &GriddedDensity, h: Bandwidth, x: f64) -> Result<f64> {
    Smoother::default().smooth_at(f, h, x)
}

pub fn smooth_on_grid(f: &GriddedDensity, h: Bandwidth) -> Result<Vec<f64>> {
    Smoother::default().smooth_on_grid(f, h)
}
