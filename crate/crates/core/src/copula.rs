//! Copula families. Only the bivariate Farlie-Gumbel-Morgenstern family is
//! provided; the engine talks to it through [`CopulaFamily`].

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// An FGM dependence parameter, `|theta| <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CopulaParam(f64);

impl CopulaParam {
    pub const INDEPENDENCE: CopulaParam = CopulaParam(0.0);

    pub fn new(theta: f64) -> Result<Self> {
        if theta.is_finite() && theta.abs() <= 1.0 {
            Ok(CopulaParam(theta))
        } else {
            Err(Error::ParameterDomain(theta))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for CopulaParam {
    type Error = Error;

    fn try_from(theta: f64) -> Result<Self> {
        CopulaParam::new(theta)
    }
}

impl From<CopulaParam> for f64 {
    fn from(t: CopulaParam) -> f64 {
        t.0
    }
}

/// A parametric copula family with a scalar parameter.
pub trait CopulaFamily: Send + Sync {
    /// Dimension of the copula.
    fn dim(&self) -> usize;

    /// Copula density at `u` (length `dim()`).
    fn density(&self, u: &[f64], theta: CopulaParam) -> f64;

    /// Maps independent uniforms `unit` to a draw from the copula.
    fn sample(&self, theta: CopulaParam, unit: &[f64]) -> Result<Vec<f64>>;

    /// Maximizes `sum_i weights[i] * log c(us[i]; theta)` over the
    /// admissible parameter range.
    fn fit(&self, us: ArrayView2<'_, f64>, weights: &[f64]) -> Result<CopulaParam>;
}

/// `c(u, v; theta) = 1 + theta (1 - 2u)(1 - 2v)`.
pub fn fgm_density(u: f64, v: f64, theta: CopulaParam) -> f64 {
    1.0 + theta.0 * (1.0 - 2.0 * u) * (1.0 - 2.0 * v)
}

/// Checked variant of [`fgm_density`] for raw parameters.
pub fn fgm_density_checked(u: f64, v: f64, theta: f64) -> Result<f64> {
    Ok(fgm_density(u, v, CopulaParam::new(theta)?))
}

/// Conditional inversion: `u = w1`, `v` solves `v + a v (1 - v) = w2` with
/// `a = theta (1 - 2u)`.
pub fn fgm_sample(theta: CopulaParam, w1: f64, w2: f64) -> Result<(f64, f64)> {
    let u = w1;
    let a = theta.0 * (1.0 - 2.0 * u);
    if a.abs() < 1e-12 {
        return Ok((u, w2));
    }
    let b = 1.0 + a;
    let disc = b * b - 4.0 * a * w2;
    if disc < 0.0 {
        return Err(Error::Numerical(format!(
            "negative discriminant {disc} in FGM inversion"
        )));
    }
    Ok((u, (b - disc.sqrt()) / (2.0 * a)))
}

const GOLDEN_TOL: f64 = 1e-8;

/// Maximizes a concave function on `[lo, hi]` by golden-section search.
pub(crate) fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

fn fgm_weighted_loglik(scores: &[(f64, f64)], theta: f64) -> f64 {
    scores.iter().map(|&(w, a)| w * (theta * a).ln_1p()).sum()
}

/// Weighted FGM maximum likelihood over `[-1 + eps, 1 - eps]`.
///
/// The objective `sum_i w_i log(1 + theta a_i)`, `a_i = (1 - 2u_i)(1 - 2v_i)`,
/// is concave. A flat objective returns independence.
pub fn update_theta(us: &[(f64, f64)], weights: &[f64], bound_eps: f64) -> Result<CopulaParam> {
    if us.is_empty() || us.len() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "need matching non-empty pairs and weights, got {} and {}",
            us.len(),
            weights.len()
        )));
    }
    if !(bound_eps > 0.0 && bound_eps < 0.5) {
        return Err(Error::InvalidInput(format!(
            "bound_eps must lie in (0, 0.5), got {bound_eps}"
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
    }
    if weights.iter().all(|w| *w == 0.0) {
        return Err(Error::EmptyComponent(0));
    }
    let scores: Vec<(f64, f64)> = us
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(&(u, v), &w)| (w, (1.0 - 2.0 * u) * (1.0 - 2.0 * v)))
        .collect();
    if scores.iter().all(|&(w, a)| w * a == 0.0) {
        return Ok(CopulaParam::INDEPENDENCE);
    }
    let bound = 1.0 - bound_eps;
    let best = golden_section_max(|t| fgm_weighted_loglik(&scores, t), -bound, bound, GOLDEN_TOL);
    // never worse than independence
    if fgm_weighted_loglik(&scores, best) < fgm_weighted_loglik(&scores, 0.0) {
        return Ok(CopulaParam::INDEPENDENCE);
    }
    CopulaParam::new(best)
}

/// The bivariate FGM family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fgm {
    /// Distance kept from the `|theta| = 1` boundary when fitting.
    pub bound_eps: f64,
}

impl Default for Fgm {
    fn default() -> Self {
        Fgm { bound_eps: 1e-3 }
    }
}

impl CopulaFamily for Fgm {
    fn dim(&self) -> usize {
        2
    }

    #[inline]
    fn density(&self, u: &[f64], theta: CopulaParam) -> f64 {
        fgm_density(u[0], u[1], theta)
    }

    fn sample(&self, theta: CopulaParam, unit: &[f64]) -> Result<Vec<f64>> {
        let (u, v) = fgm_sample(theta, unit[0], unit[1])?;
        Ok(vec![u, v])
    }

    fn fit(&self, us: ArrayView2<'_, f64>, weights: &[f64]) -> Result<CopulaParam> {
        if us.ncols() != 2 {
            return Err(Error::InvalidInput(format!("FGM needs 2 columns, got {}", us.ncols())));
        }
        let pairs: Vec<(f64, f64)> = us.rows().into_iter().map(|r| (r[0], r[1])).collect();
        update_theta(&pairs, weights, self.bound_eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::rank::{kendall_tau, spearman_rho};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn th(t: f64) -> CopulaParam {
        CopulaParam::new(t).unwrap()
    }

    fn draws(theta: f64, n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let w1: f64 = rng.random_range(f64::EPSILON..1.0);
                let w2: f64 = rng.random_range(f64::EPSILON..1.0);
                fgm_sample(th(theta), w1, w2).unwrap()
            })
            .collect()
    }

    #[test]
    fn density_examples() {
        assert_eq!(fgm_density(0.5, 0.9, th(0.7)), 1.0);
        assert_eq!(fgm_density(0.0, 0.0, th(0.5)), 1.5);
        assert!((fgm_density(0.25, 0.75, th(-0.5)) - 1.125).abs() < 1e-15);
        assert!(matches!(
            fgm_density_checked(0.1, 0.1, 1.5),
            Err(Error::ParameterDomain(_))
        ));
        assert!(serde_json::from_str::<CopulaParam>("-1.01").is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        let m = 201;
        let step = 1.0 / (m - 1) as f64;
        for t in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let mut total = 0.0;
            for i in 0..m {
                for j in 0..m {
                    let wi = if i == 0 || i == m - 1 { 0.5 } else { 1.0 };
                    let wj = if j == 0 || j == m - 1 { 0.5 } else { 1.0 };
                    let c = fgm_density(i as f64 * step, j as f64 * step, th(t));
                    assert!(c >= 0.0);
                    total += wi * wj * c;
                }
            }
            assert!((total * step * step - 1.0).abs() < 1e-6, "theta {t}");
        }
    }

    #[test]
    fn sample_examples() {
        assert_eq!(fgm_sample(th(0.0), 0.3, 0.8).unwrap(), (0.3, 0.8));
        for t in [-1.0, -0.3, 0.9] {
            let (u, v) = fgm_sample(th(t), 0.5, 0.42).unwrap();
            assert_eq!((u, v), (0.5, 0.42));
        }
        // inverts the conditional CDF v + a v (1 - v)
        let (u, v) = fgm_sample(th(0.8), 0.1, 0.3).unwrap();
        let a = 0.8 * (1.0 - 2.0 * u);
        assert!((v + a * v * (1.0 - v) - 0.3).abs() < 1e-14);
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn sample_dependence_matches_fgm_relations() {
        let s = draws(1.0, 100_000, 11);
        let tau = kendall_tau(&s);
        assert!((tau - 2.0 / 9.0).abs() < 0.01, "tau {tau}");
        let rho = spearman_rho(&s);
        assert!((rho - 1.0 / 3.0).abs() < 0.01, "rho {rho}");
    }

    #[test]
    fn update_theta_flat_objective_returns_zero() {
        let us = vec![(0.5, 0.1), (0.5, 0.9), (0.2, 0.5)];
        assert_eq!(update_theta(&us, &[1.0, 2.0, 0.5], 1e-3).unwrap().get(), 0.0);
    }

    #[test]
    fn update_theta_pins_the_boundary() {
        let us = vec![(0.01, 0.01), (0.99, 0.99)];
        let t = update_theta(&us, &[1.0, 1.0], 1e-3).unwrap().get();
        assert!((t - 0.999).abs() < 1e-7, "{t}");
    }

    #[test]
    fn update_theta_errors() {
        let us = vec![(0.3, 0.3)];
        assert!(matches!(update_theta(&us, &[0.0], 1e-3), Err(Error::EmptyComponent(_))));
        assert!(update_theta(&us, &[1.0], 0.0).is_err());
        assert!(update_theta(&[], &[], 1e-3).is_err());
    }

    fn grid_argmax(us: &[(f64, f64)], w: &[f64], eps: f64) -> f64 {
        let scores: Vec<(f64, f64)> = us
            .iter()
            .zip(w)
            .map(|(&(u, v), &w)| (w, (1.0 - 2.0 * u) * (1.0 - 2.0 * v)))
            .collect();
        let bound = 1.0 - eps;
        (0..2001)
            .map(|i| -bound + 2.0 * bound * i as f64 / 2000.0)
            .map(|t| (t, fgm_weighted_loglik(&scores, t)))
            .fold((0.0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
            .0
    }

    #[test]
    fn update_theta_recovers_parameter() {
        let s = draws(0.5, 10_000, 5);
        let w = vec![1.0; s.len()];
        let t = update_theta(&s, &w, 1e-3).unwrap().get();
        assert!((0.35..=0.65).contains(&t), "{t}");
        assert!((t - grid_argmax(&s, &w, 1e-3)).abs() < 1e-3);
    }

    #[test]
    fn fgm_family_fit_matches_free_function() {
        let s = draws(-0.4, 500, 9);
        let w: Vec<f64> = (0..s.len()).map(|i| 0.1 + (i % 7) as f64 / 7.0).collect();
        let arr = ndarray::Array2::from_shape_fn((s.len(), 2), |(i, j)| if j == 0 { s[i].0 } else { s[i].1 });
        let fam = Fgm::default();
        assert_eq!(fam.fit(arr.view(), &w).unwrap(), update_theta(&s, &w, 1e-3).unwrap());
        assert_eq!(fam.density(&[0.25, 0.75], th(-0.5)), 1.125);
    }

    proptest! {
        #[test]
        fn density_non_negative(u in 0.0f64..=1.0, v in 0.0f64..=1.0, t in -1.0f64..=1.0) {
            prop_assert!(fgm_density(u, v, th(t)) >= 0.0);
        }

        #[test]
        fn sample_stays_in_unit_square(t in -1.0f64..=1.0, w1 in 1e-9f64..1.0, w2 in 1e-9f64..1.0) {
            let (u, v) = fgm_sample(th(t), w1, w2).unwrap();
            prop_assert!(u > 0.0 && u < 1.0 && (0.0..=1.0).contains(&v));
        }

        #[test]
        fn update_theta_beats_independence_and_is_swap_invariant(
            pts in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..2.0), 1..60),
        ) {
            prop_assume!(pts.iter().any(|p| p.2 > 0.0));
            let us: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.1)).collect();
            let swapped: Vec<(f64, f64)> = pts.iter().map(|p| (p.1, p.0)).collect();
            let w: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let t = update_theta(&us, &w, 1e-3).unwrap().get();
            let scores: Vec<(f64, f64)> = us.iter().zip(&w)
                .map(|(&(u, v), &w)| (w, (1.0 - 2.0 * u) * (1.0 - 2.0 * v))).collect();
            prop_assert!(fgm_weighted_loglik(&scores, t) >= fgm_weighted_loglik(&scores, 0.0));
            prop_assert_eq!(t, update_theta(&swapped, &w, 1e-3).unwrap().get());
        }
    }
}
