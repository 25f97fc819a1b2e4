use crate::error::{Error, Result};

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_logits_two_classes() {
        let (loss, grad) = softmax_cross_entropy(&[0.3, 0.3], 1).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(grad, vec![0.5, -0.5]);
    }

    #[test]
    fn extreme_logits_do_not_overflow() {
        let (loss, grad) = softmax_cross_entropy(&[1000.0, -1000.0], 0).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.is_finite()));
        let (loss, _) = softmax_cross_entropy(&[1000.0, -1000.0], 1).unwrap();
        assert!((loss - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        assert!(softmax_cross_entropy(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = [0.7, -1.3, 2.2, 0.05];
        for label in 0..4 {
            let (_, grad) = softmax_cross_entropy(&logits, label).unwrap();
            for i in 0..4 {
                let h = 1e-5;
                let mut up = logits;
                let mut dn = logits;
                up[i] += h;
                dn[i] -= h;
                let fd = (softmax_cross_entropy(&up, label).unwrap().0
                    - softmax_cross_entropy(&dn, label).unwrap().0)
                    / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-7);
            }
        }
    }
}
