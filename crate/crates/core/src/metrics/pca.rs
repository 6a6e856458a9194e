use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 10_000;
const TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// Per-row (pc1, pc2) coordinates of the centered data.
    pub coords: Vec<[f64; 2]>,
    /// Unit loadings, rows = components.
    pub components: Array2<f64>,
    /// Variance along each component (population normalization).
    pub explained_variance: [f64; 2],
    pub total_variance: f64,
}

/// Gram-Schmidt with one re-orthogonalization pass. A column that is
/// numerically inside the span of the earlier ones is set to zero.
fn orthonormalize(q: &mut Array2<f64>) {
    for c in 0..q.ncols() {
        let start = q.column(c).dot(&q.column(c)).sqrt();
        for _ in 0..2 {
            for p in 0..c {
                let prev = q.column(p).to_owned();
                let proj = q.column(c).dot(&prev);
                q.column_mut(c).scaled_add(-proj, &prev);
            }
        }
        let norm = q.column(c).dot(&q.column(c)).sqrt();
        if norm > 1e-10 * start {
            q.column_mut(c).mapv_inplace(|v| v / norm);
        } else {
            q.column_mut(c).fill(0.0);
        }
    }
}

/// Top-2 principal components by orthogonal (block power) iteration on the
/// covariance, finished with a 2x2 Rayleigh-Ritz rotation. Each loading
/// vector is signed so its first nonzero entry is positive.
pub fn pca_project_2d(x: ArrayView2<f64>) -> Result<Pca> {
    let (n, d) = x.dim();
    if n < 3 {
        return Err(Error::Config(format!("PCA needs at least 3 rows, got {n}")));
    }
    if d < 2 {
        return Err(Error::Config(format!("PCA to 2-D needs at least 2 columns, got {d}")));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    let total_variance = cov.diag().sum();
    if total_variance <= 0.0 {
        return Err(Error::DegenerateData("zero-variance input to PCA".into()));
    }

    // Deterministic start with components in every direction.
    let mut q = Array2::from_shape_fn((d, 2), |(i, c)| 1.0 + ((i * 7 + c * 3 + 1) as f64).sin() * 0.5);
    orthonormalize(&mut q);
    for _ in 0..MAX_SWEEPS {
        let mut next = cov.dot(&q);
        orthonormalize(&mut next);
        let delta = (&next - &q).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        q = next;
        if delta < TOLERANCE {
            break;
        }
    }
    // A rank-1 covariance leaves the second column at zero; give it any
    // direction orthogonal to the first.
    if q.column(1).dot(&q.column(1)) < 0.5 {
        let j = (0..d).min_by(|&a, &b| q[[a, 0]].abs().total_cmp(&q[[b, 0]].abs())).expect("d >= 2");
        q.column_mut(1).fill(0.0);
        q[[j, 1]] = 1.0;
        orthonormalize(&mut q);
    }

    let b = q.t().dot(&cov).dot(&q);
    let (b00, b01, b11) = (b[[0, 0]], 0.5 * (b[[0, 1]] + b[[1, 0]]), b[[1, 1]]);
    let theta = 0.5 * (2.0 * b01).atan2(b00 - b11);
    let (c, s) = (theta.cos(), theta.sin());
    let mut components = Array2::zeros((2, d));
    components.row_mut(0).assign(&(&q.column(0) * c + &q.column(1) * s));
    components.row_mut(1).assign(&(&q.column(1) * c - &q.column(0) * s));
    for mut row in components.rows_mut() {
        if let Some(first) = row.iter().find(|v| v.abs() > 1e-12).copied() {
            if first < 0.0 {
                row.mapv_inplace(|v| -v);
            }
        }
    }
    let var = |r: usize| {
        let v: Array1<f64> = components.row(r).to_owned();
        v.dot(&cov.dot(&v))
    };
    let mut explained_variance = [var(0), var(1)];
    if explained_variance[1] > explained_variance[0] {
        let swapped = components.select(Axis(0), &[1, 0]);
        components = swapped;
        explained_variance.swap(0, 1);
    }
    let projected = centered.dot(&components.t());
    let coords = projected.rows().into_iter().map(|r| [r[0], r[1]]).collect();
    Ok(Pca {
        coords,
        components,
        explained_variance,
        total_variance,
    })
}
