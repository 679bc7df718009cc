//! Rank dependence measures for bivariate samples.

/// Kendall's tau-b in `O(n log n)` (Knight's algorithm).
pub fn kendall_tau(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len();
    if n < 2 {
        return 0.0;
    }
    let mut v: Vec<(f64, f64)> = pairs.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n * (n - 1) / 2) as f64;
    let (mut tied_x, mut tied_xy) = (0f64, 0f64);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && v[j].0 == v[i].0 {
            j += 1;
        }
        let run = (j - i) as f64;
        tied_x += run * (run - 1.0) / 2.0;
        let mut a = i;
        while a < j {
            let mut b = a + 1;
            while b < j && v[b].1 == v[a].1 {
                b += 1;
            }
            let r = (b - a) as f64;
            tied_xy += r * (r - 1.0) / 2.0;
            a = b;
        }
        i = j;
    }

    let mut ys: Vec<f64> = v.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf) as f64;

    let mut tied_y = 0f64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && ys[j] == ys[i] {
            j += 1;
        }
        let run = (j - i) as f64;
        tied_y += run * (run - 1.0) / 2.0;
        i = j;
    }
    let concordant_minus_discordant = n0 - tied_x - tied_y + tied_xy - 2.0 * swaps;
    let denom = ((n0 - tied_x) * (n0 - tied_y)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        concordant_minus_discordant / denom
    }
}

/// Sorts `v` and returns the number of inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left_buf, right_buf) = buf.split_at_mut(mid);
    let mut count = {
        let (l, r) = v.split_at_mut(mid);
        merge_count(l, left_buf) + merge_count(r, right_buf)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            count += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    count
}

/// Average ranks, 1-based.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && xs[idx[j]] == xs[idx[i]] {
            j += 1;
        }
        let r = 0.5 * ((i + 1) + j) as f64;
        for &k in &idx[i..j] {
            out[k] = r;
        }
        i = j;
    }
    out
}

/// Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman's rho: Pearson correlation of the ranks.
pub fn spearman_rho(pairs: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    pearson(&ranks(&xs), &ranks(&ys))
}
