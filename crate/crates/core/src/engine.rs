//! Weights, the empirical smoothed log-likelihood, the three-term bound on
//! its decrease, and the fit loops.
//!
//! For a state `(pi, theta, phi)` and observation `x`, the smoothed
//! component density is
//!
//! ```text
//! O f_k(x) = c(F_k1(x_1), .., F_kd(x_d); theta_k) * prod_j N f_kj(x_j)
//! ```
//!
//! and the objective is `(1/n) sum_i log sum_k pi_k O f_k(x_i)`. For any
//! candidate state, Jensen's inequality bounds the decrease of the objective
//! by `psi1 + psi2 + psi3`, where each term only involves one block of
//! parameters (proportions, marginals, copula). The fit loops minimize each
//! term separately:
//!
//! - proportions: column means of the weights;
//! - marginals: weighted kernel density estimates;
//! - copula: weighted maximum likelihood on the pushed-forward data.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::copula::{CopulaFamily, CopulaParam, Fgm};
use crate::grid::eval_linear;
use crate::kernel::{Smoother, SmootherConfig};
use crate::marginal::{push_forward, update_marginal, MarginalSet};
use crate::{Error, Result};

/// Tolerance on the proportions summing to one.
const SIMPLEX_TOL: f64 = 1e-10;

/// Serializable part of a [`MixtureState`]; the smoothed marginals are
/// derived data and are rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub pi: Vec<f64>,
    pub thetas: Vec<CopulaParam>,
    pub marginals: MarginalSet,
}

/// The parameter triple `(pi, theta, phi)` with the nonlinear smooths of
/// every marginal tabulated on its grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState {
    pi: Vec<f64>,
    thetas: Vec<CopulaParam>,
    marginals: MarginalSet,
    smoothed: Vec<Vec<f64>>,
}

impl MixtureState {
    pub fn new(pi: Vec<f64>, thetas: Vec<CopulaParam>, marginals: MarginalSet, smoother: &Smoother) -> Result<Self> {
        let k = marginals.components();
        if pi.len() != k || thetas.len() != k {
            return Err(Error::InvalidInput(format!(
                "{k} components but {} proportions and {} copula parameters",
                pi.len(),
                thetas.len()
            )));
        }
        if pi.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidInput("proportions must be non-negative".into()));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidInput(format!("proportions sum to {total}, not 1")));
        }
        let smoothed = marginals
            .iter()
            .map(|(_, m)| smoother.smooth_on_grid(m.density(), m.bandwidth()))
            .collect::<Result<Vec<_>>>()?;
        Ok(MixtureState {
            pi,
            thetas,
            marginals,
            smoothed,
        })
    }

    pub fn from_snapshot(s: StateSnapshot, smoother: &Smoother) -> Result<Self> {
        MixtureState::new(s.pi, s.thetas, s.marginals, smoother)
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            pi: self.pi.clone(),
            thetas: self.thetas.clone(),
            marginals: self.marginals.clone(),
        }
    }

    pub fn components(&self) -> usize {
        self.pi.len()
    }

    pub fn dim(&self) -> usize {
        self.marginals.dim()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn thetas(&self) -> &[CopulaParam] {
        &self.thetas
    }

    pub fn marginals(&self) -> &MarginalSet {
        &self.marginals
    }

    /// `N f_kj` tabulated on the grid of marginal `(k, j)`.
    pub fn smoothed(&self, k: usize, j: usize) -> &[f64] {
        &self.smoothed[k * self.dim() + j]
    }

    /// Relabels components: new component `k` is old component `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.dim();
        MixtureState {
            pi: perm.iter().map(|&k| self.pi[k]).collect(),
            thetas: perm.iter().map(|&k| self.thetas[k]).collect(),
            marginals: self.marginals.permuted(perm),
            smoothed: perm
                .iter()
                .flat_map(|&k| (0..d).map(move |j| k * d + j))
                .map(|i| self.smoothed[i].clone())
                .collect(),
        }
    }

    fn with_pi(&self, pi: Vec<f64>) -> Self {
        MixtureState { pi, ..self.clone() }
    }

    fn with_thetas(&self, thetas: Vec<CopulaParam>) -> Self {
        MixtureState { thetas, ..self.clone() }
    }
}

/// Posterior-style weights `w[i][k]`; every row sums to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightMatrix(Array2<f64>);

impl WeightMatrix {
    /// Validates rows on the simplex.
    pub fn new(w: Array2<f64>) -> Result<Self> {
        for row in w.rows() {
            let s: f64 = row.sum();
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("weight row {row} is not on the simplex")));
            }
        }
        Ok(WeightMatrix(w))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.0.column(k).to_vec()
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }
}

/// `pi_k = (1/n) sum_i w[i][k]`.
pub fn update_pi(w: &WeightMatrix) -> Vec<f64> {
    let n = w.nrows() as f64;
    let mut pi: Vec<f64> = w.0.sum_axis(Axis(0)).iter().map(|s| s / n).collect();
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    pi
}

/// The three block terms bounding the decrease of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PsiTerms {
    pub psi1: f64,
    pub psi2: f64,
    pub psi3: f64,
}

impl PsiTerms {
    pub fn total(&self) -> f64 {
        self.psi1 + self.psi2 + self.psi3
    }
}

/// Per-observation logs of the two factors of `O f_k`, for all components.
#[derive(Debug, Clone)]
struct Evaluation {
    /// `sum_j log N f_kj(x_ij)`, `n x K`.
    log_smooth: Array2<f64>,
    /// `log c(F_k(x_i); theta_k)`, `n x K`.
    log_copula: Array2<f64>,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Fit loop settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub iters: usize,
    /// Tolerance for the monotonicity flag.
    pub precision: f64,
    /// Recompute weights from `(pi^t, theta^{t-1}, phi^t)` before the
    /// copula update. Off by default.
    pub refresh_weights_before_theta: bool,
    /// Estimate copula parameters in the full loop.
    pub estimate_theta: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iters: 50,
            precision: 1e-5,
            refresh_weights_before_theta: false,
            estimate_theta: true,
        }
    }
}

/// A fit step that aborted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub iteration: usize,
    pub error: String,
}

/// Outcome of a fit loop.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    /// Objective before the first and after every completed iteration.
    pub loglik_trajectory: Vec<f64>,
    pub psi1: Vec<f64>,
    pub psi2: Vec<f64>,
    pub psi3: Vec<f64>,
    /// `psi3` evaluated at the previous copula parameters and the new
    /// marginals: the value the copula update starts from.
    pub psi3_at_previous_theta: Vec<f64>,
    pub monotone: bool,
    pub precision: f64,
    pub iterations: usize,
    pub failures: Vec<FitFailure>,
    /// Trapezoid L1 distance between initial and final marginals, `K x d`.
    pub marginal_l1_change: Vec<Vec<f64>>,
    #[serde(serialize_with = "serialize_state")]
    pub final_state: MixtureState,
}

fn serialize_state<S: serde::Serializer>(state: &MixtureState, s: S) -> std::result::Result<S::Ok, S::Error> {
    state.snapshot().serialize(s)
}

impl FitReport {
    pub fn aborted(&self) -> bool {
        !self.failures.is_empty()
    }

    /// Consecutive objective differences.
    pub fn increments(&self) -> Vec<f64> {
        self.loglik_trajectory.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn final_loglik(&self) -> f64 {
        *self
            .loglik_trajectory
            .last()
            .expect("trajectory holds the initial value")
    }
}

/// Which blocks an iteration updates.
#[derive(Debug, Clone, Copy)]
struct Blocks {
    pi: bool,
    marginals: bool,
    theta: bool,
}

/// A copula family together with the nonlinear smoother; evaluates and fits
/// mixture states.
#[derive(Debug, Clone)]
pub struct Model<C: CopulaFamily = Fgm> {
    copula: C,
    smoother: Smoother,
}

impl Default for Model<Fgm> {
    fn default() -> Self {
        Model::new(Fgm::default(), SmootherConfig::default()).expect("default smoother is valid")
    }
}

impl<C: CopulaFamily> Model<C> {
    pub fn new(copula: C, smoother: SmootherConfig) -> Result<Self> {
        Ok(Model {
            copula,
            smoother: Smoother::new(smoother)?,
        })
    }

    pub fn smoother(&self) -> &Smoother {
        &self.smoother
    }

    pub fn copula(&self) -> &C {
        &self.copula
    }

    /// Builds a state, tabulating the smoothed marginals.
    pub fn state(&self, pi: Vec<f64>, thetas: Vec<CopulaParam>, marginals: MarginalSet) -> Result<MixtureState> {
        MixtureState::new(pi, thetas, marginals, &self.smoother)
    }

    fn check_data(&self, data: ArrayView2<'_, f64>, state: &MixtureState) -> Result<()> {
        if data.nrows() == 0 {
            return Err(Error::InvalidInput("no observations".into()));
        }
        if data.ncols() != state.dim() || state.dim() != self.copula.dim() {
            return Err(Error::InvalidInput(format!(
                "data has {} columns, state {} dimensions, copula {}",
                data.ncols(),
                state.dim(),
                self.copula.dim()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("data must be finite".into()));
        }
        Ok(())
    }

    /// Copula factor of `O f_k` at `x`, using the given parameter.
    fn copula_factor(&self, x: &[f64], k: usize, state: &MixtureState, theta: CopulaParam, u: &mut [f64]) -> f64 {
        for (j, slot) in u.iter_mut().enumerate() {
            *slot = push_forward(state.marginals.get(k, j).cdf(), x[j]);
        }
        self.copula.density(u, theta)
    }

    fn smooth_factor(&self, x: &[f64], k: usize, state: &MixtureState) -> f64 {
        (0..state.dim())
            .map(|j| eval_linear(state.marginals.get(k, j).grid(), state.smoothed(k, j), x[j]))
            .product()
    }

    /// `O f_k(x) = c(F_k(x); theta_k) prod_j N f_kj(x_j)`.
    pub fn component_smoothed_density(&self, x: &[f64], k: usize, state: &MixtureState) -> f64 {
        let mut u = vec![0.0; state.dim()];
        self.copula_factor(x, k, state, state.thetas[k], &mut u) * self.smooth_factor(x, k, state)
    }

    fn evaluate(&self, data: ArrayView2<'_, f64>, state: &MixtureState) -> Evaluation {
        self.evaluate_with_thetas(data, state, &state.thetas)
    }

    fn evaluate_with_thetas(
        &self,
        data: ArrayView2<'_, f64>,
        state: &MixtureState,
        thetas: &[CopulaParam],
    ) -> Evaluation {
        let (n, kk) = (data.nrows(), state.components());
        let mut log_smooth = Array2::zeros((n, kk));
        let mut log_copula = Array2::zeros((n, kk));
        let mut u = vec![0.0; state.dim()];
        let mut x = vec![0.0; state.dim()];
        for (i, row) in data.rows().into_iter().enumerate() {
            x.iter_mut().zip(row).for_each(|(a, b)| *a = *b);
            for k in 0..kk {
                log_smooth[[i, k]] = (0..state.dim())
                    .map(|j| eval_linear(state.marginals.get(k, j).grid(), state.smoothed(k, j), x[j]).ln())
                    .sum::<f64>();
                log_copula[[i, k]] = self.copula_factor(&x, k, state, thetas[k], &mut u).ln();
            }
        }
        Evaluation { log_smooth, log_copula }
    }

    fn log_joint<'a>(eval: &'a Evaluation, pi: &'a [f64], i: usize) -> impl Iterator<Item = f64> + Clone + 'a {
        pi.iter()
            .enumerate()
            .map(move |(k, p)| p.ln() + eval.log_smooth[[i, k]] + eval.log_copula[[i, k]])
    }

    fn loglik_of(eval: &Evaluation, pi: &[f64]) -> f64 {
        let n = eval.log_smooth.nrows();
        (0..n).map(|i| log_sum_exp(Self::log_joint(eval, pi, i))).sum::<f64>() / n as f64
    }

    fn weights_of(eval: &Evaluation, pi: &[f64]) -> WeightMatrix {
        let (n, kk) = eval.log_smooth.dim();
        let mut w = Array2::zeros((n, kk));
        for i in 0..n {
            let logs: Vec<f64> = Self::log_joint(eval, pi, i).collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (k, l) in logs.iter().enumerate() {
                let e = (l - max).exp();
                w[[i, k]] = e;
                total += e;
            }
            w.row_mut(i).mapv_inplace(|v| v / total);
        }
        WeightMatrix(w)
    }

    /// `w[i][k] = pi_k O f_k(x_i) / sum_l pi_l O f_l(x_i)`, in log space.
    pub fn compute_weights(&self, data: ArrayView2<'_, f64>, state: &MixtureState) -> Result<WeightMatrix> {
        self.check_data(data, state)?;
        Ok(Self::weights_of(&self.evaluate(data, state), &state.pi))
    }

    /// `(1/n) sum_i log sum_k pi_k O f_k(x_i)`.
    pub fn smoothed_loglik(&self, data: ArrayView2<'_, f64>, state: &MixtureState) -> Result<f64> {
        self.check_data(data, state)?;
        Ok(Self::loglik_of(&self.evaluate(data, state), &state.pi))
    }

    fn psi_of(old: &Evaluation, new: &Evaluation, pi_old: &[f64], pi_new: &[f64], w: &WeightMatrix) -> PsiTerms {
        let n = w.nrows() as f64;
        let col_means: Vec<f64> = w.0.sum_axis(Axis(0)).iter().map(|s| s / n).collect();
        let psi1 = -col_means
            .iter()
            .zip(pi_old.iter().zip(pi_new))
            .filter(|(m, _)| **m > 0.0)
            .map(|(m, (po, pn))| m * (pn / po).ln())
            .sum::<f64>();
        let weighted = |a: &Array2<f64>, b: &Array2<f64>| -> f64 {
            -ndarray::Zip::from(&w.0)
                .and(a)
                .and(b)
                .fold(0.0, |acc, &wv, &x, &y| if wv > 0.0 { acc + wv * (x - y) } else { acc })
                / n
        };
        PsiTerms {
            psi1,
            psi2: weighted(&new.log_smooth, &old.log_smooth),
            psi3: weighted(&new.log_copula, &old.log_copula),
        }
    }

    /// Block terms of the bound on `loglik(old) - loglik(new)`, with the
    /// weights `w_old` computed from `state_old`.
    pub fn psi_terms(
        &self,
        data: ArrayView2<'_, f64>,
        state_old: &MixtureState,
        state_new: &MixtureState,
        w_old: &WeightMatrix,
    ) -> Result<PsiTerms> {
        self.check_data(data, state_old)?;
        self.check_data(data, state_new)?;
        if state_old.components() != state_new.components() || w_old.nrows() != data.nrows() {
            return Err(Error::InvalidInput("states and weights do not match".into()));
        }
        let old = self.evaluate(data, state_old);
        let new = self.evaluate(data, state_new);
        Ok(Self::psi_of(&old, &new, &state_old.pi, &state_new.pi, w_old))
    }

    fn update_marginals(
        &self,
        data: ArrayView2<'_, f64>,
        state: &MixtureState,
        w: &WeightMatrix,
    ) -> Result<MarginalSet> {
        let columns: Vec<Vec<f64>> = (0..data.ncols()).map(|j| data.column(j).to_vec()).collect();
        let weights: Vec<Vec<f64>> = (0..w.ncols()).map(|k| w.column(k)).collect();
        state.marginals.try_map(|k, j, m| {
            let density = update_marginal(&columns[j], &weights[k], m.bandwidth(), m.grid()).map_err(|e| match e {
                Error::EmptyComponent(_) => Error::EmptyComponent(k),
                other => other,
            })?;
            Ok(m.with_density(density))
        })
    }

    fn update_thetas(
        &self,
        data: ArrayView2<'_, f64>,
        state: &MixtureState,
        w: &WeightMatrix,
    ) -> Result<Vec<CopulaParam>> {
        let d = state.dim();
        (0..state.components())
            .map(|k| {
                let us = Array2::from_shape_fn((data.nrows(), d), |(i, j)| {
                    push_forward(state.marginals.get(k, j).cdf(), data[[i, j]])
                });
                self.copula.fit(us.view(), &w.column(k)).map_err(|e| match e {
                    Error::EmptyComponent(_) => Error::EmptyComponent(k),
                    other => other,
                })
            })
            .collect()
    }

    fn run(
        &self,
        data: ArrayView2<'_, f64>,
        init: &MixtureState,
        config: &FitConfig,
        blocks: Blocks,
    ) -> Result<FitReport> {
        self.check_data(data, init)?;
        if config.iters == 0 {
            return Err(Error::InvalidInput("at least one iteration is required".into()));
        }
        let mut state = init.clone();
        let mut eval = self.evaluate(data, &state);
        let mut weights = Self::weights_of(&eval, &state.pi);
        let mut report = FitReport {
            loglik_trajectory: vec![Self::loglik_of(&eval, &state.pi)],
            psi1: Vec::new(),
            psi2: Vec::new(),
            psi3: Vec::new(),
            psi3_at_previous_theta: Vec::new(),
            monotone: true,
            precision: config.precision,
            iterations: 0,
            failures: Vec::new(),
            marginal_l1_change: Vec::new(),
            final_state: init.clone(),
        };
        for t in 1..=config.iters {
            match self.step(data, &state, &eval, &weights, config, blocks) {
                Ok((next, next_eval, psi, psi3_base)) => {
                    report.psi1.push(psi.psi1);
                    report.psi2.push(psi.psi2);
                    report.psi3.push(psi.psi3);
                    report.psi3_at_previous_theta.push(psi3_base);
                    report.loglik_trajectory.push(Self::loglik_of(&next_eval, &next.pi));
                    report.iterations = t;
                    weights = Self::weights_of(&next_eval, &next.pi);
                    state = next;
                    eval = next_eval;
                }
                Err(e) => {
                    report.failures.push(FitFailure {
                        iteration: t,
                        error: e.to_string(),
                    });
                    break;
                }
            }
        }
        report.monotone = report.increments().iter().all(|d| *d >= -config.precision);
        report.marginal_l1_change = (0..state.components())
            .map(|k| {
                (0..state.dim())
                    .map(|j| {
                        state
                            .marginals
                            .get(k, j)
                            .density()
                            .l1_distance(init.marginals.get(k, j).density())
                            .unwrap_or(f64::NAN)
                    })
                    .collect()
            })
            .collect();
        report.final_state = state;
        Ok(report)
    }

    /// One cycle: proportions, then marginals and CDFs, then copula
    /// parameters against the new CDFs, all from the same weights.
    fn step(
        &self,
        data: ArrayView2<'_, f64>,
        state: &MixtureState,
        eval: &Evaluation,
        weights: &WeightMatrix,
        config: &FitConfig,
        blocks: Blocks,
    ) -> Result<(MixtureState, Evaluation, PsiTerms, f64)> {
        let pi = if blocks.pi {
            update_pi(weights)
        } else {
            state.pi.clone()
        };
        let mut next = if blocks.marginals {
            let marginals = self.update_marginals(data, state, weights)?;
            MixtureState::new(pi, state.thetas.clone(), marginals, &self.smoother)?
        } else {
            state.with_pi(pi)
        };
        // copula factor at the previous parameters and the new marginals
        let baseline = self.evaluate(data, &next);
        let psi3_base = Self::psi_of(eval, &baseline, &state.pi, &next.pi, weights).psi3;
        let next_eval = if blocks.theta {
            let theta_weights = if config.refresh_weights_before_theta {
                Self::weights_of(&baseline, &next.pi)
            } else {
                weights.clone()
            };
            next = next.with_thetas(self.update_thetas(data, &next, &theta_weights)?);
            self.evaluate(data, &next)
        } else {
            baseline
        };
        let psi = Self::psi_of(eval, &next_eval, &state.pi, &next.pi, weights);
        Ok((next, next_eval, psi, psi3_base))
    }

    /// Full algorithm: proportions, marginals and copula parameters.
    pub fn fit_full(&self, data: ArrayView2<'_, f64>, init: &MixtureState, config: &FitConfig) -> Result<FitReport> {
        let blocks = Blocks {
            pi: true,
            marginals: true,
            theta: config.estimate_theta,
        };
        self.run(data, init, config, blocks)
    }

    /// Copula parameters only; proportions and marginals stay fixed.
    pub fn fit_copula_only(
        &self,
        data: ArrayView2<'_, f64>,
        pi_fixed: Vec<f64>,
        marginals_fixed: MarginalSet,
        theta_init: Vec<CopulaParam>,
        config: &FitConfig,
    ) -> Result<FitReport> {
        let init = self.state(pi_fixed, theta_init, marginals_fixed)?;
        let blocks = Blocks {
            pi: false,
            marginals: false,
            theta: true,
        };
        self.run(data, &init, config, blocks)
    }

    /// Marginals only; proportions and copula parameters stay fixed.
    pub fn fit_marginals_only(
        &self,
        data: ArrayView2<'_, f64>,
        pi_fixed: Vec<f64>,
        theta_fixed: Vec<CopulaParam>,
        marginals_init: MarginalSet,
        config: &FitConfig,
    ) -> Result<FitReport> {
        let init = self.state(pi_fixed, theta_fixed, marginals_init)?;
        let blocks = Blocks {
            pi: false,
            marginals: true,
            theta: false,
        };
        self.run(data, &init, config, blocks)
    }
}
