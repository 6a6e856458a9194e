use ndarray::{Array1, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

const PROBE_STEPS: usize = 500;
const PROBE_LR: f64 = 0.5;
const PROBE_L2: f64 = 1e-3;

/// ROC AUC of `scores` for positives vs negatives, via midranks (ties count
/// one half).
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), positive.len())));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Config("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// L2-regularized logistic regression by full-batch gradient descent on
/// standardized features.
struct Logistic {
    mean: Array1<f64>,
    scale: Array1<f64>,
    w: Array1<f64>,
    b: f64,
}

impl Logistic {
    fn fit(x: ArrayView2<f64>, y: &[bool]) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
        let z = (&x - &mean) / &scale;
        let t = Array1::from_iter(y.iter().map(|&p| if p { 1.0 } else { 0.0 }));
        let n = x.nrows() as f64;
        let mut w = Array1::zeros(x.ncols());
        let mut b = 0.0;
        for _ in 0..PROBE_STEPS {
            let p = (z.dot(&w) + b).mapv(|v| 1.0 / (1.0 + (-v).exp()));
            let err = &p - &t;
            let gw = z.t().dot(&err) / n + &w * PROBE_L2;
            w.scaled_add(-PROBE_LR, &gw);
            b -= PROBE_LR * err.sum() / n;
        }
        Self { mean, scale, w, b }
    }

    fn score(&self, x: ArrayView2<f64>) -> Array1<f64> {
        ((&x - &self.mean) / &self.scale).dot(&self.w) + self.b
    }
}

/// Fit a logistic domain probe on a stratified random half and report the
/// ROC AUC on the other half.
pub fn domain_probe_auc(x: ArrayView2<f64>, is_source: &[bool], seed: u64) -> Result<f64> {
    if is_source.len() != x.nrows() {
        return Err(Error::Shape(format!("{} domain tags for {} points", is_source.len(), x.nrows())));
    }
    let mut rng = rng::stage_rng(seed, "domain-probe", &[]);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for domain in [true, false] {
        let mut idx: Vec<usize> = (0..x.nrows()).filter(|&i| is_source[i] == domain).collect();
        if idx.len() < 2 {
            return Err(Error::Config("domain probe needs at least 2 points per domain".into()));
        }
        idx.shuffle(&mut rng);
        let half = idx.len() / 2;
        train.extend_from_slice(&idx[..half]);
        test.extend_from_slice(&idx[half..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let tags = |rows: &[usize]| rows.iter().map(|&i| is_source[i]).collect::<Vec<_>>();
    let model = Logistic::fit(x.select(Axis(0), &train).view(), &tags(&train));
    let scores = model.score(x.select(Axis(0), &test).view());
    roc_auc(scores.as_slice().expect("contiguous"), &tags(&test))
}

/// Fraction of points the 0.5-thresholded `outputs` place on the right side
/// (`>= 0.5` means source).
pub fn threshold_accuracy(outputs: &[f64], is_source: &[bool]) -> f64 {
    let correct = outputs.iter().zip(is_source).filter(|(o, s)| (**o >= 0.5) == **s).count();
    correct as f64 / outputs.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn auc_closed_forms() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.5; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert!(roc_auc(&[0.5; 2], &[true, true]).is_err());
    }

    #[test]
    fn auc_is_rank_invariant() {
        let mut r = rng::rng_from(2);
        let s: Vec<f64> = (0..50).map(|_| r.random_range(-3.0..3.0)).collect();
        let y: Vec<bool> = (0..50).map(|_| r.random_bool(0.4)).collect();
        let t: Vec<f64> = s.iter().map(|v| (v * 2.0).exp() + 7.0).collect();
        assert_eq!(roc_auc(&s, &y).unwrap(), roc_auc(&t, &y).unwrap());
    }

    #[test]
    fn separable_domains_probe_near_one() {
        let mut r = rng::rng_from(5);
        let n = 200;
        let tags: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let x = Array2::from_shape_fn((n, 5), |(i, j)| {
            r.random_range(-1.0..1.0) + if j == 0 && tags[i] { 3.0 } else { 0.0 }
        });
        assert!(domain_probe_auc(x.view(), &tags, 1).unwrap() > 0.99);
    }

    #[test]
    fn identical_domains_probe_near_half() {
        let mut r = rng::rng_from(6);
        let base = Array2::from_shape_fn((400, 5), |_| r.random_range(-1.0..1.0));
        let x = ndarray::concatenate(Axis(0), &[base.view(), base.view()]).unwrap();
        let tags: Vec<bool> = (0..800).map(|i| i < 400).collect();
        let auc = domain_probe_auc(x.view(), &tags, 3).unwrap();
        assert!((auc - 0.5).abs() < 0.05, "{auc}");
    }
}
