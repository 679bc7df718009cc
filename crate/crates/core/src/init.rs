//! Starting values: k-means split, per-cluster Silverman bandwidths, plain
//! KDE marginals, independence copulas and k-means proportions.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::copula::{CopulaFamily, CopulaParam};
use crate::engine::{MixtureState, Model};
use crate::grid::Grid1D;
use crate::kernel::Bandwidth;
use crate::marginal::{update_marginal, Marginal, MarginalSet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansResult {
    pub labels: Vec<usize>,
    /// `K x d`.
    pub centers: Vec<Vec<f64>>,
    pub proportions: Vec<f64>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lowest index.
fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // all remaining mass is zero: take the first unused index
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn centers_of(points: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| s.into_iter().map(|v| v / c.max(1) as f64).collect())
        .collect()
}

/// Moves the farthest point of a multi-member cluster into each empty one.
fn reseed_empty(points: &[Vec<f64>], labels: &mut [usize], centers: &mut [Vec<f64>]) {
    let k = centers.len();
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let donor = points
            .iter()
            .enumerate()
            .filter(|(i, _)| counts[labels[*i]] > 1)
            .map(|(i, p)| (i, sq_dist(p, &centers[labels[i]])))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        let Some((i, _)) = donor else {
            return;
        };
        labels[i] = empty;
        centers[empty] = points[i].clone();
    }
}

/// Lloyd's algorithm with k-means++ seeding.
pub fn kmeans(data: ArrayView2<'_, f64>, k: usize, seed: u64, max_iter: usize) -> Result<KmeansResult> {
    let n = data.nrows();
    if k == 0 || n < k {
        return Err(Error::InvalidInput(format!(
            "k-means needs 1 <= K <= n, got K = {k}, n = {n}"
        )));
    }
    let points: Vec<Vec<f64>> = data.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_seeds(&points, k, &mut rng);
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
    reseed_empty(&points, &mut labels, &mut centers);
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        centers = centers_of(&points, &labels, k);
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        reseed_empty(&points, &mut next, &mut centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    centers = centers_of(&points, &labels, k);
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    if counts.contains(&0) {
        return Err(Error::InvalidInput("k-means left an empty cluster".into()));
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    Ok(KmeansResult {
        proportions: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        labels,
        centers,
        inertia,
        iterations,
    })
}

/// Sample quantile with linear interpolation between order statistics.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// A selected bandwidth and whether the constant-column fallback was used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthChoice {
    pub h: Bandwidth,
    pub fallback: bool,
}

/// Silverman's rule `0.9 min(sd, IQR / 1.34) n^(-1/5)`.
///
/// A cluster with fewer than two distinct values falls back to
/// `1e-3 * full_range`, where `full_range` is the range of the whole column.
pub fn select_bandwidth(cluster_col: &[f64], full_range: f64) -> Result<BandwidthChoice> {
    let n = cluster_col.len();
    let distinct = cluster_col.iter().any(|v| *v != cluster_col[0]);
    if n < 2 || !distinct {
        return Ok(BandwidthChoice {
            h: Bandwidth::new(1e-3 * full_range)?,
            fallback: true,
        });
    }
    let mean = cluster_col.iter().sum::<f64>() / n as f64;
    let sd = (cluster_col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = cluster_col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(BandwidthChoice {
        h: Bandwidth::new(0.9 * spread * (n as f64).powf(-0.2))?,
        fallback: false,
    })
}

/// Initial state plus the information used to build it.
#[derive(Debug, Clone)]
pub struct Initialization {
    pub state: MixtureState,
    pub kmeans: KmeansResult,
    /// `K x d` bandwidth choices.
    pub bandwidths: Vec<Vec<BandwidthChoice>>,
}

impl Initialization {
    pub fn used_fallback(&self) -> bool {
        self.bandwidths.iter().flatten().any(|b| b.fallback)
    }
}

pub const DEFAULT_KMEANS_MAX_ITER: usize = 100;

/// k-means split, per `(k, j)` bandwidths from cluster members, grids over
/// the full column, plain KDE of each cluster, `theta = 0`, `pi` from the
/// cluster shares.
pub fn init_state<C: CopulaFamily>(
    model: &Model<C>,
    data: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    grid_size: usize,
) -> Result<Initialization> {
    init_state_with(model, data, k, seed, grid_size, DEFAULT_KMEANS_MAX_ITER)
}

pub fn init_state_with<C: CopulaFamily>(
    model: &Model<C>,
    data: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    grid_size: usize,
    kmeans_max_iter: usize,
) -> Result<Initialization> {
    let km = kmeans(data, k, seed, kmeans_max_iter)?;
    let d = data.ncols();
    let columns: Vec<Vec<f64>> = (0..d).map(|j| data.column(j).to_vec()).collect();
    let ranges: Vec<(f64, f64)> = columns
        .iter()
        .map(|c| {
            c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            })
        })
        .collect();
    let indicator: Array2<f64> =
        Array2::from_shape_fn((data.nrows(), k), |(i, c)| if km.labels[i] == c { 1.0 } else { 0.0 });
    let mut bandwidths = Vec::with_capacity(k);
    let mut rows = Vec::with_capacity(k);
    for c in 0..k {
        let weights = indicator.column(c).to_vec();
        let mut bw_row = Vec::with_capacity(d);
        let mut row = Vec::with_capacity(d);
        for (j, col) in columns.iter().enumerate() {
            let members: Vec<f64> = col
                .iter()
                .zip(&km.labels)
                .filter(|(_, l)| **l == c)
                .map(|(v, _)| *v)
                .collect();
            let (lo, hi) = ranges[j];
            let choice = select_bandwidth(&members, hi - lo)?;
            let grid = Grid1D::covering(lo, hi, choice.h.get(), grid_size)?;
            let density = update_marginal(col, &weights, choice.h, &grid)?;
            row.push(Marginal::new(density, choice.h));
            bw_row.push(choice);
        }
        rows.push(row);
        bandwidths.push(bw_row);
    }
    let state = model.state(
        km.proportions.clone(),
        vec![CopulaParam::INDEPENDENCE; k],
        MarginalSet::new(rows)?,
    )?;
    Ok(Initialization {
        state,
        kmeans: km,
        bandwidths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((100, 2), |(i, _)| {
            let c = if i < 50 { -10.0 } else { 10.0 };
            let z: f64 = StandardNormal.sample(&mut rng);
            c + z
        })
    }

    fn inertia_of(points: &Array2<f64>, labels: &[usize], k: usize) -> f64 {
        let pts: Vec<Vec<f64>> = points.rows().into_iter().map(|r| r.to_vec()).collect();
        let centers = centers_of(&pts, labels, k);
        pts.iter().zip(labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum()
    }

    #[test]
    fn one_point_per_cluster() {
        let data = array![[0.0, 0.0], [1.0, 5.0], [-3.0, 2.0], [4.0, -1.0]];
        let r = kmeans(data.view(), 4, 1, 50).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut l = r.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2, 3]);
    }

    #[test]
    fn separated_blobs_match_best_partition() {
        let data = blobs(4);
        let r = kmeans(data.view(), 2, 7, 100).unwrap();
        let truth: Vec<usize> = (0..100).map(|i| usize::from(i >= 50)).collect();
        let agree = r.labels.iter().zip(&truth).filter(|(a, b)| a == b).count();
        assert!(agree == 100 || agree == 0);
        // no single move improves on the blob split
        let base = inertia_of(&data, &truth, 2);
        for i in 0..100 {
            let mut moved = truth.clone();
            moved[i] = 1 - moved[i];
            assert!(inertia_of(&data, &moved, 2) >= base);
        }
        assert!((r.inertia - base).abs() < 1e-9);
    }

    #[test]
    fn brute_force_best_partition_on_small_instance() {
        let data = array![
            [0.0, 0.1],
            [0.3, -0.2],
            [0.1, 0.2],
            [5.0, 5.1],
            [5.2, 4.9],
            [4.8, 5.3],
            [5.1, 5.0]
        ];
        let r = kmeans(data.view(), 2, 3, 100).unwrap();
        let n = data.nrows();
        let best = (1u32..(1 << n) - 1)
            .map(|mask| {
                let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
                inertia_of(&data, &labels, 2)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((r.inertia - best).abs() < 1e-12);
    }

    #[test]
    fn identical_points_give_degenerate_split() {
        let data = Array2::from_elem((6, 2), 1.5);
        let r = kmeans(data.view(), 2, 0, 20).unwrap();
        assert!(r.proportions.iter().all(|p| *p > 0.0));
        assert!((r.proportions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(kmeans(data.view(), 7, 0, 20).is_err());
    }

    #[test]
    fn kmeans_is_deterministic() {
        let data = blobs(9);
        assert_eq!(
            kmeans(data.view(), 3, 5, 100).unwrap(),
            kmeans(data.view(), 3, 5, 100).unwrap()
        );
    }

    #[test]
    fn silverman_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let h = select_bandwidth(&xs, 1.0).unwrap();
        assert!(!h.fallback);
        let oracle = 0.9 * 10_000f64.powf(-0.2);
        assert!((h.h.get() - oracle).abs() < 0.01, "{}", h.h.get());
        assert!((oracle - 0.143).abs() < 1e-3);
    }

    #[test]
    fn silverman_scale_equivariance_and_edges() {
        let xs = [0.3, -1.2, 2.2, 0.9, 1.1, -0.4, 0.05];
        let scaled: Vec<f64> = xs.iter().map(|x| 3.5 * x).collect();
        let a = select_bandwidth(&xs, 1.0).unwrap().h.get();
        let b = select_bandwidth(&scaled, 1.0).unwrap().h.get();
        assert!((b - 3.5 * a).abs() < 1e-12);
        let two = select_bandwidth(&[1.0, 2.0], 1.0).unwrap();
        assert!(two.h.get() > 0.0 && two.h.get().is_finite() && !two.fallback);
        let flat = select_bandwidth(&[4.0, 4.0, 4.0], 20.0).unwrap();
        assert!(flat.fallback);
        assert!((flat.h.get() - 0.02).abs() < 1e-15);
        assert!(select_bandwidth(&[4.0, 4.0], 0.0).is_err());
    }

    #[test]
    fn initial_state_properties() {
        let model = Model::default();
        let data = blobs(21);
        let init = init_state(&model, data.view(), 2, 3, 128).unwrap();
        let s = &init.state;
        assert!(s.thetas().iter().all(|t| t.get() == 0.0));
        assert!((s.pi().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(s.pi(), &init.kmeans.proportions[..]);
        for (_, m) in s.marginals().iter() {
            assert!((m.density().integral() - 1.0).abs() < 1e-6);
            assert!(m.bandwidth().get() > 0.0);
            // grid covers the full column with a 3h margin
            assert!(m.grid().lo() < -12.0 && m.grid().hi() > 12.0);
        }
        let again = init_state(&model, data.view(), 2, 3, 128).unwrap();
        assert_eq!(
            serde_json::to_string(&again.state.snapshot()).unwrap(),
            serde_json::to_string(&s.snapshot()).unwrap()
        );
    }
}
