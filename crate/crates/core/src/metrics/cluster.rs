use std::collections::HashMap;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    pub iterations: usize,
}

fn assign(x: ArrayView2<f64>, centroids: &Array2<f64>, labels: &mut [usize]) -> (f64, bool) {
    let mut inertia = 0.0;
    let mut changed = false;
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut best = (0, f64::INFINITY);
        for (c, centroid) in centroids.rows().into_iter().enumerate() {
            let d = sq_dist(row, centroid);
            if d < best.1 {
                best = (c, d);
            }
        }
        if labels[i] != best.0 {
            labels[i] = best.0;
            changed = true;
        }
        inertia += best.1;
    }
    (inertia, changed)
}

/// k-means++ seeding.
fn seed_centroids<R: Rng + ?Sized>(x: ArrayView2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    centroids.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            d2.iter()
                .position(|&d| {
                    u -= d;
                    u < 0.0
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, r) in x.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, centroids.row(c)));
        }
    }
    centroids
}

fn lloyd<R: Rng + ?Sized>(x: ArrayView2<f64>, k: usize, max_iter: usize, rng: &mut R) -> KMeans {
    let n = x.nrows();
    let mut centroids = seed_centroids(x, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut inertia = assign(x, &centroids, &mut labels).0;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, row) in x.rows().into_iter().enumerate() {
            sums.row_mut(labels[i]).scaled_add(1.0, &row);
            counts[labels[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                // Reseed an empty cluster at the point farthest from its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(x.row(a), centroids.row(labels[a]));
                        let db = sq_dist(x.row(b), centroids.row(labels[b]));
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("non-empty input");
                centroids.row_mut(c).assign(&x.row(far));
            }
        }
        let (new_inertia, changed) = assign(x, &centroids, &mut labels);
        inertia = new_inertia;
        if !changed {
            break;
        }
    }
    KMeans { labels, centroids, inertia, iterations }
}

/// Lloyd's k-means with `restarts` seeded k-means++ initializations; the
/// lowest-inertia run wins (earliest on ties).
pub fn kmeans(x: ArrayView2<f64>, k: usize, restarts: usize, max_iter: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || k > x.nrows() || restarts == 0 || max_iter == 0 {
        return Err(Error::Config(format!(
            "kmeans needs 1 <= k <= n and positive restarts/iterations (k={k}, n={}, restarts={restarts}, max_iter={max_iter})",
            x.nrows()
        )));
    }
    let mut best: Option<KMeans> = None;
    for r in 0..restarts {
        let run = lloyd(x, k, max_iter, &mut rng::stage_rng(seed, "kmeans", &[&(r as u64).to_le_bytes()]));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Relabel to `0..k` in order of first appearance.
fn dense_labels<T: Eq + std::hash::Hash>(labels: &[T]) -> (Vec<usize>, usize) {
    let mut ids = HashMap::new();
    let dense = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect();
    (dense, ids.len())
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index between two labelings, from the contingency table.
/// Both trivial cases where the expected and maximum index coincide return
/// 1.
pub fn adjusted_rand_index<A, B>(a: &[A], b: &[B]) -> Result<f64>
where
    A: Eq + std::hash::Hash,
    B: Eq + std::hash::Hash,
{
    if a.len() != b.len() {
        return Err(Error::Shape(format!("labelings have lengths {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Config("ARI of empty labelings".into()));
    }
    let (la, na) = dense_labels(a);
    let (lb, nb) = dense_labels(b);
    let mut table = vec![vec![0u64; nb]; na];
    for (&i, &j) in la.iter().zip(&lb) {
        table[i][j] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..nb).map(|j| choose2(table.iter().map(|r| r[j]).sum())).sum();
    let expected = rows * cols / choose2(a.len() as u64).max(1.0);
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// ARI between a 2-means clustering of `x` and the domain tags.
///
/// All-identical rows carry no cluster structure; the result is 0 with a
/// warning.
pub fn ari_two_means(
    x: ArrayView2<f64>,
    is_source: &[bool],
    restarts: usize,
    max_iter: usize,
    seed: u64,
) -> Result<f64> {
    let n = x.nrows();
    if is_source.len() != n {
        return Err(Error::Shape(format!("{} domain tags for {n} points", is_source.len())));
    }
    if n < 4 {
        return Err(Error::Config(format!("ARI needs at least 4 points, got {n}")));
    }
    if is_source.iter().all(|&s| s) || !is_source.iter().any(|&s| s) {
        return Err(Error::Config("ARI needs both domains present".into()));
    }
    let first = x.row(0);
    if x.rows().into_iter().all(|r| r == first) {
        log::warn!("all embeddings identical; ARI defined as 0");
        return Ok(0.0);
    }
    let km = kmeans(x, 2, restarts, max_iter, seed)?;
    adjusted_rand_index(&km.labels, is_source)
}
