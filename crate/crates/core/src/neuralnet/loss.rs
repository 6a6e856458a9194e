use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Mean squared error over every element, with its gradient wrt `pred`.
pub fn mse(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "mse: prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("mse of an empty batch".into()));
    }
    let n = pred.len() as f64;
    let diff = &pred - &target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

/// [`mse`] against a matrix filled with `value`.
pub fn mse_to_constant(pred: ArrayView2<f64>, value: f64) -> Result<(f64, Array2<f64>)> {
    let target = Array2::from_elem(pred.raw_dim(), value);
    mse(pred, target.view())
}

/// Row-wise softmax, shifted by the row max for stability.
pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Batch-mean cross-entropy of softmax(`logits`) against class indices,
/// with its gradient wrt the logits.
pub fn cross_entropy_softmax(logits: ArrayView2<f64>, classes: &[usize]) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != classes.len() {
        return Err(Error::Shape(format!(
            "cross-entropy: {} rows vs {} labels",
            logits.nrows(),
            classes.len()
        )));
    }
    if classes.is_empty() {
        return Err(Error::Shape("cross-entropy of an empty batch".into()));
    }
    if let Some(&bad) = classes.iter().find(|&&c| c >= logits.ncols()) {
        return Err(Error::Range(format!(
            "class index {bad} outside [0, {})",
            logits.ncols()
        )));
    }
    let n = classes.len() as f64;
    let max: Array1<f64> = logits.map_axis(Axis(1), |r| r.fold(f64::NEG_INFINITY, |m, &v| m.max(v)));
    let mut loss = 0.0;
    for ((row, &c), &m) in logits.rows().into_iter().zip(classes).zip(&max) {
        let log_sum = row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln() + m;
        loss += log_sum - row[c];
    }
    let mut grad = softmax(logits);
    for (mut row, &c) in grad.rows_mut().into_iter().zip(classes) {
        row[c] -= 1.0;
    }
    grad /= n;
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mse_of_identical_inputs_is_zero() {
        let x = array![[1.0, 2.0], [3.0, -4.0]];
        let (loss, grad) = mse(x.view(), x.view()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mse_value() {
        let (loss, grad) = mse_to_constant(array![[0.5], [0.5]].view(), 1.0).unwrap();
        assert!((loss - 0.25).abs() < 1e-15);
        assert_eq!(grad, array![[-0.5], [-0.5]]);
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Array2::from_elem((3, 38), 0.7);
        let (loss, _) = cross_entropy_softmax(logits.view(), &[0, 17, 37]).unwrap();
        assert!((loss - 38f64.ln()).abs() < 1e-12);
        assert!((loss - 3.6376).abs() < 1e-4);
    }

    #[test]
    fn large_logits_stay_finite() {
        let logits = array![[1000.0, -1000.0, 0.0]];
        let (loss, grad) = cross_entropy_softmax(logits.view(), &[1]).unwrap();
        assert!(loss.is_finite() && (loss - 2000.0).abs() < 1e-9);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn bad_class_and_shape_rejected() {
        let logits = Array2::zeros((2, 3));
        assert!(matches!(cross_entropy_softmax(logits.view(), &[0, 3]), Err(Error::Range(_))));
        assert!(matches!(cross_entropy_softmax(logits.view(), &[0]), Err(Error::Shape(_))));
        assert!(mse(logits.view(), Array2::zeros((3, 2)).view()).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(array![[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]].view());
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
