use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Binary entropy in bits; `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let h = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
    h(p) + h(1.0 - p)
}

/// Indices of the `k` nearest rows to row `i` by Euclidean distance,
/// excluding `i` itself. Ties go to the lower index.
pub fn nearest_neighbors(x: ArrayView2<f64>, i: usize, k: usize) -> Vec<usize> {
    let row = x.row(i);
    let mut d: Vec<(f64, usize)> = x
        .rows()
        .into_iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, r)| (r.iter().zip(row.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), j))
        .collect();
    let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, by_dist);
        d.truncate(k);
    }
    d.sort_unstable_by(by_dist);
    d.into_iter().map(|(_, j)| j).collect()
}

/// Mean over points of the binary entropy of the source share among the
/// point's `k` nearest neighbors. `is_source[i]` tags row `i`.
///
/// Returns 0 (with a warning) when only one domain is present.
pub fn mixing_entropy(x: ArrayView2<f64>, is_source: &[bool], k: usize) -> Result<f64> {
    let n = x.nrows();
    if is_source.len() != n {
        return Err(Error::Shape(format!("{} domain tags for {n} points", is_source.len())));
    }
    if k == 0 || k >= n {
        return Err(Error::Config(format!("k must be in [1, {n}), got {k}")));
    }
    let n_source = is_source.iter().filter(|&&s| s).count();
    if n_source == 0 || n_source == n {
        log::warn!("mixing entropy of a single-domain set is defined as 0");
        return Ok(0.0);
    }
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let hits = nearest_neighbors(x, i, k).into_iter().filter(|&j| is_source[j]).count();
            binary_entropy(hits as f64 / k as f64)
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / n as f64)
}
