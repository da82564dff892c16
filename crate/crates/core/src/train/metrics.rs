use std::sync::Arc;

use super::TrainError;
use crate::engine::{Expr, Real, Tensor};

fn check_mask(mask: &[usize], n: usize) -> Result<(), TrainError> {
    if mask.is_empty() {
        return Err(TrainError::EmptyMask);
    }
    match mask.iter().find(|&&i| i >= n) {
        Some(&i) => Err(TrainError::Shape(format!("mask index {i} outside {n} rows"))),
        None => Ok(()),
    }
}

/// Mean over `mask` of `-log softmax(logits)[label]`, as a graph.
pub fn cross_entropy<T: Real>(logits: &Expr<T>, labels: &[usize], mask: &[usize]) -> Result<Expr<T>, TrainError> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(TrainError::Shape(format!(
            "logits {shape:?} for {} labels",
            labels.len()
        )));
    }
    check_mask(mask, shape[0])?;
    let c = shape[1];
    let mut onehot = vec![T::zero(); mask.len() * c];
    for (r, &i) in mask.iter().enumerate() {
        if labels[i] >= c {
            return Err(TrainError::Shape(format!("label {} with {c} classes", labels[i])));
        }
        onehot[r * c + labels[i]] = T::one();
    }
    let rows = logits.gather_rows(Arc::new(mask.to_vec()));
    let picked = rows
        .mul(&Expr::constant(Tensor::new(&[mask.len(), c], onehot)?))
        .sum_cols();
    Ok(rows
        .logsumexp_rows()
        .sub(&picked)
        .sum()
        .scale(T::one() / T::lit(mask.len() as f64)))
}

/// Numeric [`cross_entropy`].
pub fn cross_entropy_value<T: Real>(logits: &Tensor<T>, labels: &[usize], mask: &[usize]) -> Result<f64, TrainError> {
    let loss = cross_entropy(&Expr::constant(logits.clone()), labels, mask)?;
    Ok(crate::engine::forward(&loss, &crate::engine::Bindings::new())?
        .item()
        .as_f64())
}

/// Mean binary cross-entropy of logits against positive and negative pairs.
pub fn link_loss<T: Real>(pos: &Expr<T>, neg: &Expr<T>) -> Expr<T> {
    let total = (pos.shape()[0] + neg.shape()[0]) as f64;
    pos.neg()
        .softplus()
        .sum()
        .add(&neg.softplus().sum())
        .scale(T::one() / T::lit(total))
}

pub fn accuracy(preds: &[usize], labels: &[usize], mask: &[usize]) -> Result<f64, TrainError> {
    if preds.len() != labels.len() {
        return Err(TrainError::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    check_mask(mask, labels.len())?;
    let hits = mask.iter().filter(|&&i| preds[i] == labels[i]).count();
    Ok(hits as f64 / mask.len() as f64)
}

/// Area under the ROC curve from average ranks; tied scores count one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, TrainError> {
    if scores.len() != labels.len() {
        return Err(TrainError::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(TrainError::Metric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(TrainError::Metric("ROC-AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let l = Tensor::<f64>::zeros(&[3, 4]);
        let v = cross_entropy_value(&l, &[0, 1, 3], &[0, 1, 2]).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-15);
        assert!(matches!(
            cross_entropy_value(&l, &[0, 1, 3], &[]),
            Err(TrainError::EmptyMask)
        ));
    }

    #[test]
    fn margin_drives_loss_down() {
        let mut last = f64::INFINITY;
        for m in [1.0, 5.0, 10.0] {
            let l = Tensor::new(&[1, 3], vec![m, 0.0, 0.0]).unwrap();
            let v = cross_entropy_value(&l, &[0], &[0]).unwrap();
            assert!(v < last && v > 0.0);
            last = v;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn matches_extended_precision_oracle() {
        let l = Tensor::new(
            &[5, 3],
            vec![
                -1.409338, -2.793207, 1.207476, -3.42051, 0.287056, -1.074489, -3.536009, 0.059486, -3.700035,
                -0.530835, -3.441157, -3.274296, -0.603846, 2.614817, -3.009584,
            ],
        )
        .unwrap();
        let labels = [0, 2, 2, 2, 0];
        // 50-digit reference values
        let all = cross_entropy_value(&l, &labels, &[0, 1, 2, 3, 4]).unwrap();
        assert!((all - 2.847869178560192532520515).abs() <= 1e-12);
        let some = cross_entropy_value(&l, &labels, &[1, 3, 4]).unwrap();
        assert!((some - 2.575369855143498353701303).abs() <= 1e-12);
    }

    #[test]
    fn accuracy_examples() {
        let labels = [0, 1, 1, 0, 1, 0, 0, 1, 1, 0];
        let all: Vec<usize> = (0..10).collect();
        assert_eq!(accuracy(&labels, &labels, &all).unwrap(), 1.0);
        let flipped: Vec<usize> = labels.iter().map(|l| 1 - l).collect();
        assert_eq!(accuracy(&flipped, &labels, &all).unwrap(), 0.0);
        let mut half = labels;
        for v in half.iter_mut().take(5) {
            *v = 1 - *v;
        }
        assert_eq!(accuracy(&half, &labels, &all).unwrap(), 0.5);
        assert!(accuracy(&labels, &labels, &[]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(
            roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(),
            1.0
        );
        assert_eq!(
            roc_auc(&[0.9, 0.7, 0.8, 0.6], &[true, true, false, false]).unwrap(),
            0.75
        );
        assert_eq!(
            roc_auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(),
            0.5
        );
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn auc_agrees_with_pair_counting() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(2..40);
            // coarse scores force ties
            let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..5u8))).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if labels[i] && !labels[j] {
                        den += 1.0;
                        num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                            std::cmp::Ordering::Greater => 1.0,
                            std::cmp::Ordering::Equal => 0.5,
                            std::cmp::Ordering::Less => 0.0,
                        };
                    }
                }
            }
            assert!((roc_auc(&scores, &labels).unwrap() - num / den).abs() < 1e-12);
        }
    }
}
