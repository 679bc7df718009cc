//! Nonparametric marginals: weighted kernel density updates and CDFs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grid::{Grid1D, GriddedCdf, GriddedDensity};
use crate::kernel::{gaussian_kernel, Bandwidth};
use crate::{Error, Result};

/// Pushed-forward CDF values are kept inside `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-10;

/// Beyond this many bandwidths the Gaussian kernel underflows to zero.
const KERNEL_SUPPORT: f64 = 39.0;

/// Weighted Gaussian KDE of `data_col` on `grid`, normalized by trapezoid.
pub fn update_marginal(data_col: &[f64], weights_col: &[f64], h: Bandwidth, grid: &Grid1D) -> Result<GriddedDensity> {
    if data_col.is_empty() || data_col.len() != weights_col.len() {
        return Err(Error::InvalidInput(format!(
            "need matching non-empty data and weights, got {} and {}",
            data_col.len(),
            weights_col.len()
        )));
    }
    let total: f64 = weights_col.iter().sum();
    if total.is_nan() || total <= 1e-12 {
        // the caller knows which component this is
        return Err(Error::EmptyComponent(0));
    }
    let hv = h.get();
    let inv_h = 1.0 / hv;
    let m = grid.len();
    let mut values = vec![0.0; m];
    for (&x, &w) in data_col.iter().zip(weights_col) {
        if w == 0.0 {
            continue;
        }
        let lo = ((x - KERNEL_SUPPORT * hv - grid.lo()) / grid.step()).floor().max(0.0) as usize;
        let hi = (((x + KERNEL_SUPPORT * hv - grid.lo()) / grid.step()).ceil() as usize).min(m - 1);
        let scale = w * inv_h;
        for (g, slot) in values.iter_mut().enumerate().take(hi + 1).skip(lo) {
            *slot += scale * gaussian_kernel((x - grid.point(g)) * inv_h);
        }
    }
    GriddedDensity::new(*grid, values)?.normalize()
}

/// `F(x)` by clamped interpolation, kept strictly inside `(0, 1)`.
#[inline]
pub fn push_forward(cdf: &GriddedCdf, x: f64) -> f64 {
    cdf.eval(x).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// One marginal `f_kj` with its CDF and fixed bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "MarginalRepr", into = "MarginalRepr")]
pub struct Marginal {
    density: GriddedDensity,
    cdf: GriddedCdf,
    bandwidth: Bandwidth,
}

#[derive(Serialize, Deserialize)]
struct MarginalRepr {
    bandwidth: Bandwidth,
    density: GriddedDensity,
}

impl From<MarginalRepr> for Marginal {
    fn from(r: MarginalRepr) -> Self {
        Marginal::new(r.density, r.bandwidth)
    }
}

impl From<Marginal> for MarginalRepr {
    fn from(m: Marginal) -> Self {
        MarginalRepr {
            bandwidth: m.bandwidth,
            density: m.density,
        }
    }
}

impl Marginal {
    pub fn new(density: GriddedDensity, bandwidth: Bandwidth) -> Self {
        let cdf = density.cdf();
        Marginal {
            density,
            cdf,
            bandwidth,
        }
    }

    pub fn density(&self) -> &GriddedDensity {
        &self.density
    }

    pub fn cdf(&self) -> &GriddedCdf {
        &self.cdf
    }

    pub fn bandwidth(&self) -> Bandwidth {
        self.bandwidth
    }

    pub fn grid(&self) -> &Grid1D {
        self.density.grid()
    }

    /// Same grid and bandwidth, new density.
    pub fn with_density(&self, density: GriddedDensity) -> Self {
        Marginal::new(density, self.bandwidth)
    }
}

/// The `K x d` table of marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSet {
    components: usize,
    dim: usize,
    entries: Vec<Marginal>,
}

impl MarginalSet {
    /// `entries[k][j]` is the marginal of component `k` in dimension `j`.
    pub fn new(entries: Vec<Vec<Marginal>>) -> Result<Self> {
        let components = entries.len();
        let dim = entries.first().map_or(0, Vec::len);
        if components == 0 || dim == 0 || entries.iter().any(|row| row.len() != dim) {
            return Err(Error::InvalidInput(
                "marginal table must be a non-empty K x d array".into(),
            ));
        }
        Ok(MarginalSet {
            components,
            dim,
            entries: entries.into_iter().flatten().collect(),
        })
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, k: usize, j: usize) -> &Marginal {
        &self.entries[k * self.dim + j]
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &Marginal)> {
        let d = self.dim;
        self.entries.iter().enumerate().map(move |(i, m)| ((i / d, i % d), m))
    }

    /// Builds a new set by mapping every `(k, j)` entry.
    pub fn try_map(&self, mut f: impl FnMut(usize, usize, &Marginal) -> Result<Marginal>) -> Result<Self> {
        let d = self.dim;
        let entries = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, m)| f(i / d, i % d, m))
            .collect::<Result<Vec<_>>>()?;
        Ok(MarginalSet {
            components: self.components,
            dim: self.dim,
            entries,
        })
    }

    /// Reorders components: new component `k` is old component `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let entries = perm
            .iter()
            .flat_map(|&k| (0..self.dim).map(move |j| (k, j)))
            .map(|(k, j)| self.get(k, j).clone())
            .collect();
        MarginalSet {
            components: self.components,
            dim: self.dim,
            entries,
        }
    }

    /// Writes `marginal_k{k}_d{j}.csv` (1-based indices) into `dir`.
    pub fn write_csvs(&self, dir: &Path) -> std::io::Result<()> {
        for ((k, j), m) in self.iter() {
            let path = dir.join(format!("marginal_k{}_d{}.csv", k + 1, j + 1));
            let file = std::io::BufWriter::new(std::fs::File::create(path)?);
            m.density().write_csv(file)?;
        }
        Ok(())
    }
}
