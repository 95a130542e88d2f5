//! Elementwise and loss operations shared by the baseline and the merger.

use crate::error::{Error, Result};
use crate::nn::Rng;

/// Inverted dropout: at training time each element is zeroed independently
/// with probability `rate` and survivors are scaled by 1/(1-rate), so the
/// inference path needs no rescaling at all.
pub fn dropout(x: &[f64], rate: f64, rng: &mut Rng, training: bool) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if !training {
        return Ok(x.to_vec());
    }
    let keep_scale = 1.0 / (1.0 - rate);
    Ok(x.iter()
        .map(|&v| if rng.next_f64() < rate { 0.0 } else { v * keep_scale })
        .collect())
}

/// Multiplier mask for one dropout draw: 0.0 for dropped positions,
/// 1/(1-rate) for survivors. Kept separate so training code can reuse the
/// exact mask in its backward pass.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    debug_assert!((0.0..1.0).contains(&rate));
    let keep_scale = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep_scale })
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax cross-entropy with the max-subtraction trick. Returns the loss
/// and its gradient w.r.t. the logits, `softmax(logits) - one_hot(label)`.
pub fn softmax_ce(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::dim("softmax_ce label", logits.len(), label));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut grad: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = grad.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    for g in &mut grad {
        *g /= sum;
    }
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut rng = Rng::new(0);
        let x = vec![0.5, -1.0, 2.0];
        assert_eq!(dropout(&x, 0.0, &mut rng, true).unwrap(), x);
    }

    #[test]
    fn dropout_inference_is_identity() {
        let mut rng = Rng::new(0);
        let x = vec![0.5, -1.0, 2.0];
        assert_eq!(dropout(&x, 0.9, &mut rng, false).unwrap(), x);
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let mut rng = Rng::new(0);
        assert!(matches!(
            dropout(&[1.0], 1.0, &mut rng, true),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dropout_preserves_mean_at_high_rate() {
        // Law of large numbers on the inverted scaling: 1e5 ones at rate
        // 0.75 keep their mean within 3%.
        let mut rng = Rng::new(2024);
        let x = vec![1.0; 100_000];
        let y = dropout(&x, 0.75, &mut rng, true).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((0.97..=1.03).contains(&mean), "mean = {mean}");
    }

    #[test]
    fn softmax_ce_uniform_two_class() {
        let (loss, grad) = softmax_ce(&[0.0, 0.0], 0).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
        assert!((grad[0] + 0.5).abs() < 1e-12);
        assert!((grad[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn softmax_ce_confident_correct_is_near_zero() {
        let (loss, _) = softmax_ce(&[10.0, -10.0], 0).unwrap();
        assert!(loss < 1e-8, "loss = {loss}");
    }

    #[test]
    fn softmax_ce_label_out_of_range() {
        assert!(softmax_ce(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn softmax_ce_gradient_matches_finite_differences() {
        let mut rng = Rng::new(31);
        for case in 0..100 {
            let n = 20;
            let logits: Vec<f64> = (0..n).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let label = rng.below(n);
            let (_, grad) = softmax_ce(&logits, label).unwrap();
            let h = 1e-5;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                let mut plus = logits.clone();
                plus[i] += h;
                let mut minus = logits.clone();
                minus[i] -= h;
                let fd = (softmax_ce(&plus, label).unwrap().0
                    - softmax_ce(&minus, label).unwrap().0)
                    / (2.0 * h);
                num += (grad[i] - fd) * (grad[i] - fd);
                den += fd * fd;
            }
            let rel = (num / den.max(1e-300)).sqrt();
            assert!(rel < 1e-5, "case {case}: rel err {rel}");
        }
    }
}
