//! Predictive metrics.

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, Matrix};

/// Log pointwise predictive density from log densities laid out one row
/// per observation and one column per posterior draw:
/// `(1/n) sum_i log((1/U) sum_u p(y_i | theta_u))`.
pub fn lppd(log_densities: &Matrix) -> Result<f64> {
    let (n, u) = (log_densities.rows(), log_densities.cols());
    if u == 0 {
        return Err(Error::input("lppd needs at least one draw"));
    }
    if n == 0 {
        return Err(Error::input("lppd needs at least one observation"));
    }
    let ln_u = (u as f64).ln();
    let total: f64 = log_densities
        .iter_rows()
        .map(|r| log_sum_exp(r) - ln_u)
        .sum();
    Ok(total / n as f64)
}

/// Root mean squared error. With `y_std` given, the error is reported on
/// the original target scale (`y_std` times the standardized error).
pub fn rmse(predictions: &[f64], targets: &[f64], y_std: Option<f64>) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Dimension {
            what: "predictions",
            expected: targets.len(),
            got: predictions.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::input("rmse of an empty set"));
    }
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / targets.len() as f64;
    Ok(mse.sqrt() * y_std.unwrap_or(1.0))
}

/// Fraction of rows whose largest logit is at the label's index.
pub fn accuracy(logits: &Matrix, labels: &[f64]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(Error::Dimension {
            what: "labels",
            expected: logits.rows(),
            got: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::input("accuracy of an empty set"));
    }
    let hits = logits
        .iter_rows()
        .zip(labels)
        .filter(|(r, &l)| argmax(r) as f64 == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

fn argmax(r: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in r.iter().enumerate() {
        if *v > r[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lppd_examples() {
        let one = Matrix::from_rows(&[vec![-0.5 * (2.0 * std::f64::consts::PI).ln()]]).unwrap();
        assert!((lppd(&one).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
        let two = Matrix::from_rows(&[vec![-1.0, -3.0]]).unwrap();
        let want = ((-1f64).exp() + (-3f64).exp()).ln() - 2f64.ln();
        assert!((lppd(&two).unwrap() - want).abs() < 1e-14);
        assert!((lppd(&two).unwrap() + 1.5662).abs() < 1e-4);
        let dup = Matrix::from_rows(&[vec![-1.0, -3.0, -1.0, -3.0]]).unwrap();
        assert!((lppd(&dup).unwrap() - lppd(&two).unwrap()).abs() < 1e-14);
        let tiny = Matrix::from_rows(&[vec![-700.0, -700.0]]).unwrap();
        assert!((lppd(&tiny).unwrap() + 700.0).abs() < 1e-12);
        assert!(lppd(&Matrix::zeros(3, 0)).is_err());
    }

    #[test]
    fn best_single_draw_dominates_worse_draw() {
        let best = Matrix::from_rows(&[vec![-0.2], vec![-0.4]]).unwrap();
        let worse = Matrix::from_rows(&[vec![-1.2], vec![-0.9]]).unwrap();
        assert!(lppd(&best).unwrap() >= lppd(&worse).unwrap());
    }

    #[test]
    fn rmse_and_accuracy() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0], None).unwrap(), 0.0);
        assert!((rmse(&[1.5, 2.5, -0.5], &[1.0, 2.0, -1.0], None).unwrap() - 0.5).abs() < 1e-15);
        assert!((rmse(&[1.5], &[1.0], Some(4.0)).unwrap() - 2.0).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0], None).is_err());
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            let label = i % 3;
            let mut r = vec![0.0; 3];
            r[if i == 4 { (label + 1) % 3 } else { label }] = 1.0;
            rows.push(r);
            labels.push(label as f64);
        }
        let m = Matrix::from_rows(&rows).unwrap();
        assert!((accuracy(&m, &labels).unwrap() - 0.9).abs() < 1e-15);
    }
}
