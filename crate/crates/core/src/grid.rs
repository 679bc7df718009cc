//! Uniform grids, gridded densities and CDFs, trapezoid quadrature.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smallest admissible number of grid points.
pub const MIN_GRID_POINTS: usize = 16;

/// Default number of grid points per marginal.
pub const DEFAULT_GRID_POINTS: usize = 512;

/// Half-width of the grid margin around the data, in bandwidths.
pub const GRID_MARGIN_BANDWIDTHS: f64 = 3.0;

/// A uniform grid `lo + j * step`, `j = 0..m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid1D {
    lo: f64,
    hi: f64,
    m: usize,
    step: f64,
}

#[derive(Serialize, Deserialize)]
struct GridSpec {
    lo: f64,
    hi: f64,
    m: usize,
}

impl TryFrom<GridSpec> for Grid1D {
    type Error = Error;

    fn try_from(spec: GridSpec) -> Result<Self> {
        Grid1D::new(spec.lo, spec.hi, spec.m)
    }
}

impl From<Grid1D> for GridSpec {
    fn from(g: Grid1D) -> Self {
        GridSpec {
            lo: g.lo,
            hi: g.hi,
            m: g.m,
        }
    }
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, m: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::InvalidInput(format!(
                "grid bounds must be finite with lo < hi, got [{lo}, {hi}]"
            )));
        }
        if m < MIN_GRID_POINTS {
            return Err(Error::InvalidInput(format!(
                "grid needs at least {MIN_GRID_POINTS} points, got {m}"
            )));
        }
        Ok(Grid1D {
            lo,
            hi,
            m,
            step: (hi - lo) / (m - 1) as f64,
        })
    }

    /// Grid spanning `[min - 3h, max + 3h]`.
    pub fn covering(min: f64, max: f64, h: f64, m: usize) -> Result<Self> {
        let margin = GRID_MARGIN_BANDWIDTHS * h;
        Grid1D::new(min - margin, max + margin, m)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    #[inline]
    pub fn point(&self, j: usize) -> f64 {
        self.lo + j as f64 * self.step
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.m).map(move |j| self.point(j))
    }
}

/// `step * (v0/2 + v1 + .. + v_{m-2} + v_{m-1}/2)`.
pub fn trapezoid_integral(values: &[f64], step: f64) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "trapezoid rule needs at least 2 values, got {}",
            values.len()
        )));
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    let ends = 0.5 * (values[0] + values[values.len() - 1]);
    Ok(step * (inner + ends))
}

/// Clamped linear interpolation of `values` tabulated on `grid`.
#[inline]
pub fn eval_linear(grid: &Grid1D, values: &[f64], x: f64) -> f64 {
    debug_assert_eq!(values.len(), grid.m);
    if x <= grid.lo {
        return values[0];
    }
    if x >= grid.hi {
        return values[grid.m - 1];
    }
    let pos = (x - grid.lo) / grid.step;
    let j = (pos.floor() as usize).min(grid.m - 2);
    let t = pos - j as f64;
    values[j] + t * (values[j + 1] - values[j])
}

/// A univariate density tabulated on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GriddedDensity {
    grid: Grid1D,
    values: Vec<f64>,
}

impl GriddedDensity {
    /// Wraps non-negative finite values; normalization is not enforced here.
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} density values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "density values must be finite and non-negative, found {bad}"
            )));
        }
        Ok(GriddedDensity { grid, values })
    }

    /// Tabulates `f` on `grid` and normalizes.
    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.points().map(f).collect();
        GriddedDensity::new(grid, values)?.normalize()
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn integral(&self) -> f64 {
        trapezoid_integral(&self.values, self.grid.step).expect("grid has >= 16 points")
    }

    pub fn eval(&self, x: f64) -> f64 {
        eval_linear(&self.grid, &self.values, x)
    }

    /// Rescales so the trapezoid integral is one.
    pub fn normalize(&self) -> Result<GriddedDensity> {
        let mass = self.integral();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::DegenerateDensity(format!(
                "cannot normalize a density with integral {mass}"
            )));
        }
        let scale = 1.0 / mass;
        Ok(GriddedDensity {
            grid: self.grid,
            values: self.values.iter().map(|v| v * scale).collect(),
        })
    }

    pub fn cdf(&self) -> GriddedCdf {
        cdf_from_density(self)
    }

    /// Trapezoid L1 distance to another density on the same grid.
    pub fn l1_distance(&self, other: &GriddedDensity) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::InvalidInput("densities live on different grids".into()));
        }
        let diff: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .collect();
        trapezoid_integral(&diff, self.grid.step)
    }

    /// Writes `x,value` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,value")?;
        for (x, v) in self.grid.points().zip(&self.values) {
            writeln!(out, "{x:.16e},{v:.16e}")?;
        }
        Ok(())
    }

    /// Reads the format produced by [`GriddedDensity::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<GriddedDensity> {
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "x,value" => {}
            _ => return Err(Error::InvalidInput("missing `x,value` header".into())),
        }
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::InvalidInput(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::InvalidInput(format!("malformed row `{line}`")))
            };
            xs.push(parse(parts.next())?);
            vs.push(parse(parts.next())?);
        }
        if xs.len() < 2 {
            return Err(Error::InvalidInput("too few rows".into()));
        }
        let grid = Grid1D::new(xs[0], xs[xs.len() - 1], xs.len())?;
        GriddedDensity::new(grid, vs)
    }
}

/// A non-decreasing CDF tabulated on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GriddedCdf {
    grid: Grid1D,
    values: Vec<f64>,
}

impl GriddedCdf {
    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        eval_linear(&self.grid, &self.values, x)
    }
}

/// Cumulative trapezoid sums of `d`; the last value equals `d`'s integral.
pub fn cdf_from_density(d: &GriddedDensity) -> GriddedCdf {
    let half_step = 0.5 * d.grid.step;
    let mut values = Vec::with_capacity(d.values.len());
    let mut acc = 0.0;
    values.push(0.0);
    for w in d.values.windows(2) {
        acc += half_step * (w[0] + w[1]);
        values.push(acc);
    }
    GriddedCdf { grid: d.grid, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid(m: usize) -> Grid1D {
        Grid1D::new(0.0, 1.0, m).unwrap()
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(Grid1D::new(1.0, 1.0, 32).is_err());
        assert!(Grid1D::new(0.0, 1.0, 15).is_err());
        assert!(Grid1D::new(0.0, f64::NAN, 32).is_err());
        let g = Grid1D::new(-2.0, 2.0, 17).unwrap();
        assert_eq!(g.step(), 0.25);
        assert_eq!(g.point(3), -1.25);
    }

    #[test]
    fn trapezoid_examples() {
        let g = unit_grid(101);
        let ones = vec![1.0; 101];
        assert!((trapezoid_integral(&ones, g.step()).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(trapezoid_integral(&[0.0; 101], g.step()).unwrap(), 0.0);
        let ident: Vec<f64> = g.points().collect();
        assert!((trapezoid_integral(&ident, g.step()).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(trapezoid_integral(&[1.0], 0.1), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn normalize_examples() {
        let g = unit_grid(101);
        let d = GriddedDensity::new(g, vec![2.0; 101]).unwrap().normalize().unwrap();
        assert!(d.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let again = d.normalize().unwrap();
        for (a, b) in d.values().iter().zip(again.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        // triangle of height 0.5 on [0,1] has area 0.25
        let tri: Vec<f64> = g.points().map(|x| 0.5 * (1.0 - (2.0 * x - 1.0).abs())).collect();
        let d = GriddedDensity::new(g, tri.clone()).unwrap();
        assert!((d.integral() - 0.25).abs() < 1e-12);
        let n = d.normalize().unwrap();
        for (a, b) in n.values().iter().zip(&tri) {
            assert!((a - 4.0 * b).abs() < 1e-12);
        }
        let zero = GriddedDensity::new(g, vec![0.0; 101]).unwrap();
        assert!(matches!(zero.normalize(), Err(Error::DegenerateDensity(_))));
    }

    #[test]
    fn density_rejects_negative_values() {
        let g = unit_grid(16);
        let mut v = vec![1.0; 16];
        v[3] = -1e-3;
        assert!(GriddedDensity::new(g, v).is_err());
    }

    #[test]
    fn cdf_examples() {
        let g = unit_grid(101);
        let u = GriddedDensity::new(g, vec![1.0; 101]).unwrap();
        let c = u.cdf();
        for (x, f) in g.points().zip(c.values()) {
            assert!((x - f).abs() < 1e-12);
        }
        let zero = GriddedDensity::new(g, vec![0.0; 101]).unwrap().cdf();
        assert!(zero.values().iter().all(|v| *v == 0.0));

        // symmetric bump about 0.5
        let bump = GriddedDensity::from_fn(g, |x| (-(x - 0.5).powi(2) / 0.02).exp()).unwrap();
        let c = bump.cdf();
        assert!((c.values()[50] - 0.5).abs() < 1e-9);
        assert!(c.values()[0].abs() < 1e-12);
        assert!((c.values()[100] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn eval_linear_examples() {
        let g = unit_grid(16);
        let v: Vec<f64> = (0..16).map(|j| (j * j) as f64).collect();
        assert_eq!(eval_linear(&g, &v, g.point(7)), 49.0);
        let mid = 0.5 * (g.point(3) + g.point(4));
        assert!((eval_linear(&g, &v, mid) - 12.5).abs() < 1e-12);
        assert_eq!(eval_linear(&g, &v, 6.0), 225.0);
        assert_eq!(eval_linear(&g, &v, -6.0), 0.0);
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let g = Grid1D::new(-1.3, 2.7, 32).unwrap();
        let d = GriddedDensity::from_fn(g, |x| (-x * x).exp()).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,value\n"));
        let back = GriddedDensity::read_csv(&buf[..]).unwrap();
        assert_eq!(back.values(), d.values());
        assert!((back.grid().step() - g.step()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn normalized_integrates_to_one(v in prop::collection::vec(0.0f64..10.0, 16..200)) {
            prop_assume!(v.iter().any(|x| *x > 1e-3));
            let g = Grid1D::new(-3.0, 5.0, v.len()).unwrap();
            let d = GriddedDensity::new(g, v).unwrap().normalize().unwrap();
            prop_assert!((d.integral() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn cdf_is_non_decreasing(v in prop::collection::vec(0.0f64..10.0, 16..200)) {
            let g = Grid1D::new(0.0, 1.0, v.len()).unwrap();
            let c = GriddedDensity::new(g, v).unwrap().cdf();
            prop_assert!(c.values().windows(2).all(|w| w[1] >= w[0]));
        }

        #[test]
        fn eval_linear_exact_on_nodes_and_monotone(
            mut v in prop::collection::vec(-5.0f64..5.0, 16..64),
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
        ) {
            v.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let g = Grid1D::new(0.0, 1.0, v.len()).unwrap();
            for j in 0..v.len() {
                prop_assert!((eval_linear(&g, &v, g.point(j)) - v[j]).abs() < 1e-12);
            }
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(eval_linear(&g, &v, lo) <= eval_linear(&g, &v, hi) + 1e-12);
        }

        #[test]
        fn trapezoid_exact_for_piecewise_linear(
            m in 16usize..200,
            kink in 0usize..16,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            // a + b |x - x_k| has its only kink on a node
            let g = Grid1D::new(-1.0, 2.0, m).unwrap();
            let xk = g.point(kink);
            let v: Vec<f64> = g.points().map(|x| a + b * (x - xk).abs()).collect();
            let exact = a * 3.0 + b * 0.5 * ((xk + 1.0).powi(2) + (2.0 - xk).powi(2));
            let t = trapezoid_integral(&v, g.step()).unwrap();
            prop_assert!((t - exact).abs() < 1e-10);
        }
    }
}
