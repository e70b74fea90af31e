use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub dice_smooth: f64,
    /// Probabilities are clamped to `[eps, 1 - eps]` inside the log terms.
    pub bce_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            dice_smooth: 1.0,
            bce_eps: 1e-7,
        }
    }
}

fn check<F>(pred: &[F], target: &[F]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("empty prediction".into()));
    }
    Ok(())
}

struct DiceTerms {
    intersection: f64,
    pred_sum: f64,
    target_sum: f64,
}

fn dice_terms<F: Scalar>(pred: &[F], target: &[F]) -> DiceTerms {
    let mut t = DiceTerms {
        intersection: 0.0,
        pred_sum: 0.0,
        target_sum: 0.0,
    };
    for (&p, &y) in pred.iter().zip(target) {
        let (p, y) = (p.to_f64_lossy(), y.to_f64_lossy());
        t.intersection += p * y;
        t.pred_sum += p;
        t.target_sum += y;
    }
    t
}

/// `1 - (2 * sum(p * y) + s) / (sum(p) + sum(y) + s)` over every pixel of the batch.
pub fn dice_loss<F: Scalar>(pred: &[F], target: &[F], smooth: f64) -> Result<f64> {
    check(pred, target)?;
    let t = dice_terms(pred, target);
    Ok(1.0 - (2.0 * t.intersection + smooth) / (t.pred_sum + t.target_sum + smooth))
}

/// Mean binary cross-entropy with clamped probabilities.
pub fn bce_loss<F: Scalar>(pred: &[F], target: &[F], eps: f64) -> Result<f64> {
    check(pred, target)?;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.to_f64_lossy().clamp(eps, 1.0 - eps);
            let y = y.to_f64_lossy();
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn combined_loss<F: Scalar>(pred: &[F], target: &[F], cfg: &LossConfig) -> Result<f64> {
    Ok(bce_loss(pred, target, cfg.bce_eps)? + dice_loss(pred, target, cfg.dice_smooth)?)
}

/// Loss value and its gradient with respect to every prediction.
pub fn combined_loss_grad<F: Scalar>(pred: &[F], target: &[F], cfg: &LossConfig) -> Result<(f64, Vec<F>)> {
    let loss = combined_loss(pred, target, cfg)?;
    let n = pred.len() as f64;
    let t = dice_terms(pred, target);
    let num = 2.0 * t.intersection + cfg.dice_smooth;
    let den = t.pred_sum + t.target_sum + cfg.dice_smooth;
    let eps = cfg.bce_eps;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let (p, y) = (p.to_f64_lossy(), y.to_f64_lossy());
            // The clamp is flat outside [eps, 1 - eps].
            let bce = if p > eps && p < 1.0 - eps {
                (-y / p + (1.0 - y) / (1.0 - p)) / n
            } else {
                0.0
            };
            let dice = -(2.0 * y * den - num) / (den * den);
            F::from_f64_lossy(bce + dice)
        })
        .collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_of_exact_hard_match_is_zero() {
        let y: Vec<f64> = (0..64).map(|i| f64::from(i % 5 == 0)).collect();
        assert!(dice_loss(&y, &y, 1.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn dice_of_disjoint_masks_approaches_one() {
        let p: Vec<f64> = (0..10_000).map(|i| f64::from(i < 5000)).collect();
        let y: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
        let l = dice_loss(&p, &y, 1.0).unwrap();
        assert!((l - (1.0 - 1.0 / 10_001.0)).abs() < 1e-12);
    }

    #[test]
    fn half_probability_against_half_foreground() {
        let n = 1000;
        let p = vec![0.5f64; n];
        let y: Vec<f64> = (0..n).map(|i| f64::from(i % 2 == 0)).collect();
        assert!((dice_loss(&p, &y, 1e-8).unwrap() - 0.5).abs() < 1e-9);
        assert!((bce_loss(&p, &y, 1e-7).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let total = combined_loss(&p, &y, &LossConfig { dice_smooth: 1e-8, bce_eps: 1e-7 }).unwrap();
        assert!((total - 1.1931).abs() < 1e-4);
    }

    #[test]
    fn near_perfect_prediction_has_tiny_loss() {
        let eps = 1e-7;
        let y: Vec<f64> = (0..100).map(|i| f64::from(i % 3 == 0)).collect();
        let p: Vec<f64> = y.iter().map(|&v| if v == 1.0 { 1.0 - eps } else { eps }).collect();
        let l = combined_loss(&p, &y, &LossConfig::default()).unwrap();
        assert!((0.0..1e-5).contains(&l), "{l}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p: Vec<f64> = (0..16).map(|i| 0.05 + 0.9 * ((i * 7 % 16) as f64 / 15.0)).collect();
        let y: Vec<f64> = (0..16).map(|i| f64::from(i % 3 != 1)).collect();
        let cfg = LossConfig::default();
        let (_, g) = combined_loss_grad(&p, &y, &cfg).unwrap();
        let h = 1e-6;
        for i in 0..16 {
            let mut up = p.clone();
            up[i] += h;
            let mut dn = p.clone();
            dn[i] -= h;
            let fd = (combined_loss(&up, &y, &cfg).unwrap() - combined_loss(&dn, &y, &cfg).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(dice_loss(&[0.5f32], &[1.0, 0.0], 1.0).is_err());
    }
}
