//! Reference predictors: median of per-window predictions, mean-pooled
//! features with a ridge probe or a small feed-forward network.

mod ffn;
mod ridge;

pub use ffn::{ffn_fit, ffn_loss_and_grad, FfnConfig, FfnModel};
pub use ridge::{ridge_fit, ridge_fit_with, RidgeModel, RidgeOptions};

use crate::embedding::EmbeddingSequence;
use crate::error::{Error, Result};

/// Median of per-window scalar predictions; even counts average the two
/// middle values.
pub fn median_aggregate(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("median of an empty list"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("window predictions".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Ok(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}

/// Arithmetic mean of the sequence's true rows.
pub fn mean_pool(seq: &EmbeddingSequence) -> Vec<f64> {
    let d = seq.dim();
    let mut out = vec![0.0; d];
    for t in 0..seq.len() {
        for (o, &v) in out.iter_mut().zip(seq.row(t)) {
            *o += v as f64;
        }
    }
    let n = seq.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::PaddedBatch;
    use proptest::prelude::*;

    #[test]
    fn median_examples() {
        assert_eq!(median_aggregate(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median_aggregate(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
        assert_eq!(median_aggregate(&[7.0; 5]).unwrap(), 7.0);
        assert!(median_aggregate(&[]).is_err());
        assert!(median_aggregate(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn mean_pool_examples() {
        let one = EmbeddingSequence::from_rows("a", &[vec![1.5, -2.0]]).unwrap();
        assert_eq!(mean_pool(&one), vec![1.5, -2.0]);
        let two = EmbeddingSequence::from_rows("b", &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(mean_pool(&two), vec![0.5, 0.5]);
        // padding lives outside the sequence and never reaches the pool
        let batch = PaddedBatch::from_sequences(&[&two], Some(6)).unwrap();
        assert_eq!(batch.lengths, vec![2]);
        assert_eq!(mean_pool(&two), vec![0.5, 0.5]);
    }

    proptest! {
        #[test]
        fn median_matches_sort_oracle(mut v in proptest::collection::vec(-1e6f64..1e6, 1..60), seed in 0u64..1000) {
            let got = median_aggregate(&v).unwrap();
            // oracle: selection by counting rather than the implementation's sort
            let n = v.len();
            let kth = |k: usize| -> f64 {
                *v.iter().find(|&&x| {
                    let below = v.iter().filter(|&&y| y < x).count();
                    let equal = v.iter().filter(|&&y| y == x).count();
                    below <= k && k < below + equal
                }).unwrap()
            };
            let expect = if n % 2 == 1 { kth(n / 2) } else { (kth(n / 2 - 1) + kth(n / 2)) / 2.0 };
            prop_assert_eq!(got, expect);
            let k = (seed as usize) % n;
            v.rotate_left(k);
            prop_assert_eq!(median_aggregate(&v).unwrap(), got);
        }
    }
}
