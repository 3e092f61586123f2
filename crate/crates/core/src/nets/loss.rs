//! Softmax, cross-entropy and the numerically stable helpers around them.

use ndarray::Array2;

use crate::scalar::Scalar;

/// Lower clamp applied to predicted probabilities before taking the log.
pub const LOG_EPS: f64 = 1e-12;

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let mut max = row[0];
        for &v in row.iter() {
            if v.value() > max.value() {
                max = v;
            }
        }
        row.mapv_inplace(|v| (v - max).exp());
        let total: T = row.iter().copied().sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// Per-row `−Σ_i y_i log ŷ_i` with ŷ clamped below at [`LOG_EPS`].
pub fn cross_entropy_rows(y: &Array2<f64>, y_hat: &Array2<f64>) -> Vec<f64> {
    y.rows()
        .into_iter()
        .zip(y_hat.rows())
        .map(|(yr, pr)| {
            -yr.iter()
                .zip(pr.iter())
                .filter(|(&t, _)| t != 0.0)
                .map(|(&t, &p)| t * p.max(LOG_EPS).ln())
                .sum::<f64>()
        })
        .collect()
}

/// Batch cross-entropy: the mean of [`cross_entropy_rows`].
pub fn cross_entropy(y: &Array2<f64>, y_hat: &Array2<f64>) -> f64 {
    let rows = cross_entropy_rows(y, y_hat);
    rows.iter().sum::<f64>() / rows.len() as f64
}

/// Gradient of `scale · Σ_rows CE` w.r.t. the logits: `scale · (ŷ − y)`.
pub fn cross_entropy_logit_grad<T: Scalar>(probs: &Array2<T>, y: &Array2<f64>, scale: f64) -> Array2<T> {
    let s = T::from_f64(scale);
    let mut g = probs.clone();
    g.zip_mut_with(y, |p, &t| *p = (*p - T::from_f64(t)) * s);
    g
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_logits_give_uniform_rows() {
        let p = softmax(&Array2::<f64>::zeros((2, 4)));
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn dominant_logit_saturates() {
        let p = softmax(&arr2(&[[50.0, 0.0, 0.0]]));
        assert!((p[[0, 0]] - 1.0).abs() < 1e-6);
        assert!(p[[0, 1]] < 1e-6 && p[[0, 2]] < 1e-6);
    }

    #[test]
    fn softmax_matches_exp_normalize_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Array2::from_shape_fn((5, 7), |_| rng.gen_range(-6.0..6.0));
        let p = softmax(&logits);
        for (lrow, prow) in logits.rows().into_iter().zip(p.rows()) {
            let z: f64 = lrow.iter().map(|v| v.exp()).sum();
            for (l, q) in lrow.iter().zip(prow.iter()) {
                assert!((l.exp() / z - q).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let y = arr2(&[[1.0, 0.0, 0.0]]);
        assert_eq!(cross_entropy(&y, &arr2(&[[1.0, 0.0, 0.0]])), 0.0);
        let mut y10 = Array2::zeros((1, 10));
        y10[[0, 3]] = 1.0;
        let uniform = Array2::from_elem((1, 10), 0.1);
        assert!((cross_entropy(&y10, &uniform) - 10f64.ln()).abs() < 1e-12);
        // log(0) is clamped
        assert!((cross_entropy(&y, &arr2(&[[0.0, 1.0, 0.0]])) + LOG_EPS.ln()).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits = Array2::from_shape_fn((6, 5), |_| rng.gen_range(-3.0..3.0));
        let p = softmax(&logits);
        let labels: Vec<usize> = (0..6).map(|_| rng.gen_range(0..5)).collect();
        let y = crate::datamodel::onehot(&labels, 5).unwrap();
        let mut oracle = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            oracle -= p[[i, l]].ln();
        }
        oracle /= 6.0;
        assert!((cross_entropy(&y, &p) - oracle).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(v in prop::collection::vec(-500.0f64..500.0, 12)) {
            let p = softmax(&Array2::from_shape_vec((3, 4), v).unwrap());
            for row in p.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|&q| q >= 0.0));
            }
        }

        #[test]
        fn cross_entropy_is_nonnegative(v in prop::collection::vec(-30.0f64..30.0, 8), l in 0usize..4) {
            let p = softmax(&Array2::from_shape_vec((2, 4), v).unwrap());
            let y = crate::datamodel::onehot(&[l, l], 4).unwrap();
            prop_assert!(cross_entropy(&y, &p) >= 0.0);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((sigmoid(-800.0)).is_finite());
    }
}
