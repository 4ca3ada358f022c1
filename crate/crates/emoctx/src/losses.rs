//! Training objectives.
//!
//! The model is trained on a weighted sum of two terms:
//!
//! * a discrete term over the 26 category scores: squared error per
//!   category scaled by a per-category weight, averaged over the batch;
//! * a continuous term over the 3 affect dimensions: the smooth-l1
//!   (Huber-style) error averaged over all `3 * batch` elements.
//!
//! Losses and their gradients are computed in f64. The model itself runs
//! in f32; keeping the objective in f64 makes gradient checks and the
//! oracle comparisons in the test suite exact to tight tolerances, at a
//! cost that is negligible next to the convolutions.

use crate::dataset::CATEGORY_COUNT;
use crate::error::{Error, Result};

/// Mixing weights for the two loss terms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub discrete: f64,
    pub continuous: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            discrete: 0.5,
            continuous: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (i, v) in [self.discrete, self.continuous].into_iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::NonPositiveWeight { index: i, value: v });
            }
        }
        if self.discrete == 0.0 && self.continuous == 0.0 {
            return Err(Error::InvalidConfig {
                msg: "both loss weights are zero".to_string(),
            });
        }
        Ok(())
    }
}

/// Per-category weights that damp frequent categories:
/// `w_k = 1 / ln(c + p_k)` where `p_k` is the category's share of all
/// labels and `c = 1.2` keeps the logarithm positive at `p_k = 0`.
pub fn make_category_weights(category_counts: &[u64]) -> Result<Vec<f64>> {
    if category_counts.len() != CATEGORY_COUNT {
        return Err(Error::LengthMismatch {
            context: "make_category_weights",
            left: category_counts.len(),
            right: CATEGORY_COUNT,
        });
    }
    let total: u64 = category_counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidConfig {
            msg: "category weight estimation needs at least one label".to_string(),
        });
    }
    const C: f64 = 1.2;
    Ok(category_counts
        .iter()
        .map(|&n| 1.0 / (C + n as f64 / total as f64).ln())
        .collect())
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.len() != CATEGORY_COUNT {
        return Err(Error::LengthMismatch {
            context: "category weights",
            left: weights.len(),
            right: CATEGORY_COUNT,
        });
    }
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w <= 0.0 {
            return Err(Error::NonPositiveWeight { index: i, value: w });
        }
    }
    Ok(())
}

fn check_batch(
    context: &'static str,
    pred: &[f64],
    target: &[f64],
    row: usize,
) -> Result<usize> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            context,
            left: pred.len(),
            right: target.len(),
        });
    }
    if pred.is_empty() || pred.len() % row != 0 {
        return Err(Error::ShapeMismatch {
            context,
            expected: format!("nonempty multiple of {row}"),
            actual: pred.len().to_string(),
        });
    }
    Ok(pred.len() / row)
}

/// Discrete-category loss over a batch laid out row-major as
/// `[batch, 26]`: `(1/B) * sum_i sum_k w_k * (pred_ik - target_ik)^2`.
pub fn discrete_loss(pred: &[f64], target: &[f64], weights: &[f64]) -> Result<f64> {
    check_weights(weights)?;
    let batch = check_batch("discrete_loss", pred, target, CATEGORY_COUNT)?;
    let mut acc = 0.0;
    for i in 0..batch {
        for k in 0..CATEGORY_COUNT {
            let d = pred[i * CATEGORY_COUNT + k] - target[i * CATEGORY_COUNT + k];
            acc += weights[k] * d * d;
        }
    }
    Ok(acc / batch as f64)
}

/// Gradient of [`discrete_loss`] with respect to `pred`, same layout.
pub fn discrete_loss_grad(pred: &[f64], target: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    check_weights(weights)?;
    let batch = check_batch("discrete_loss", pred, target, CATEGORY_COUNT)?;
    let scale = 2.0 / batch as f64;
    Ok(pred
        .iter()
        .zip(target)
        .enumerate()
        .map(|(j, (p, t))| scale * weights[j % CATEGORY_COUNT] * (p - t))
        .collect())
}

/// Smooth-l1 penalty: quadratic inside the unit interval, linear outside,
/// with matching value and slope at the joint.
#[inline]
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

/// Derivative of [`smooth_l1`].
#[inline]
pub fn smooth_l1_deriv(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Continuous-affect loss over a batch laid out as `[batch, 3]`: the
/// mean smooth-l1 error over all `3 * batch` elements.
pub fn continuous_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    let _ = check_batch("continuous_loss", pred, target, 3)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| smooth_l1(p - t))
        .sum::<f64>()
        / n)
}

/// Gradient of [`continuous_loss`] with respect to `pred`.
pub fn continuous_loss_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    let _ = check_batch("continuous_loss", pred, target, 3)?;
    let inv_n = 1.0 / pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| inv_n * smooth_l1_deriv(p - t))
        .collect())
}

/// The full objective:
/// `lambda_d * discrete + lambda_c * continuous`.
pub fn combined_loss(
    pred_disc: &[f64],
    target_disc: &[f64],
    weights: &[f64],
    pred_cont: &[f64],
    target_cont: &[f64],
    lambdas: LossWeights,
) -> Result<f64> {
    lambdas.validate()?;
    let b_disc = check_batch("discrete_loss", pred_disc, target_disc, CATEGORY_COUNT)?;
    let b_cont = check_batch("continuous_loss", pred_cont, target_cont, 3)?;
    if b_disc != b_cont {
        return Err(Error::LengthMismatch {
            context: "combined_loss batch",
            left: b_disc,
            right: b_cont,
        });
    }
    Ok(lambdas.discrete * discrete_loss(pred_disc, target_disc, weights)?
        + lambdas.continuous * continuous_loss(pred_cont, target_cont)?)
}

/// Gradients of [`combined_loss`] with respect to both prediction heads.
pub fn combined_loss_grad(
    pred_disc: &[f64],
    target_disc: &[f64],
    weights: &[f64],
    pred_cont: &[f64],
    target_cont: &[f64],
    lambdas: LossWeights,
) -> Result<(Vec<f64>, Vec<f64>)> {
    lambdas.validate()?;
    let mut gd = discrete_loss_grad(pred_disc, target_disc, weights)?;
    let mut gc = continuous_loss_grad(pred_cont, target_cont)?;
    for g in &mut gd {
        *g *= lambdas.discrete;
    }
    for g in &mut gc {
        *g *= lambdas.continuous;
    }
    Ok((gd, gc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_weights() -> Vec<f64> {
        vec![1.0; CATEGORY_COUNT]
    }

    fn random_batch(rng: &mut ChaCha8Rng, batch: usize, row: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..batch * row).map(|_| rng.gen_range(lo..hi)).collect()
    }

    #[test]
    fn discrete_loss_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = 9;
        let pred = random_batch(&mut rng, batch, CATEGORY_COUNT, -2.0, 2.0);
        let target = random_batch(&mut rng, batch, CATEGORY_COUNT, 0.0, 1.0);
        let weights: Vec<f64> = (0..CATEGORY_COUNT).map(|k| 0.5 + 0.1 * k as f64).collect();

        // Independent accumulation, one element at a time.
        let mut want = 0.0;
        for i in 0..batch {
            for k in 0..CATEGORY_COUNT {
                let d = pred[i * CATEGORY_COUNT + k] - target[i * CATEGORY_COUNT + k];
                want += weights[k] * d.powi(2);
            }
        }
        want /= batch as f64;

        let got = discrete_loss(&pred, &target, &weights).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn discrete_loss_single_element_case() {
        // One sample, all-zero target, weight 1: loss is sum of squares.
        let mut pred = vec![0.0; CATEGORY_COUNT];
        pred[0] = 0.3;
        pred[1] = -0.4;
        let target = vec![0.0; CATEGORY_COUNT];
        let got = discrete_loss(&pred, &target, &uniform_weights()).unwrap();
        assert_abs_diff_eq!(got, 0.09 + 0.16, epsilon = 1e-12);
    }

    #[test]
    fn continuous_loss_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let batch = 7;
        let pred = random_batch(&mut rng, batch, 3, -3.0, 3.0);
        let target = random_batch(&mut rng, batch, 3, 1.0, 10.0);
        let mut want = 0.0;
        for j in 0..batch * 3 {
            let x: f64 = pred[j] - target[j];
            want += if x.abs() < 1.0 { 0.5 * x * x } else { x.abs() - 0.5 };
        }
        want /= (batch * 3) as f64;
        let got = continuous_loss(&pred, &target).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn smooth_l1_is_continuous_and_smooth_at_the_joint() {
        for joint in [1.0f64, -1.0] {
            let eps = 1e-9;
            let inside = smooth_l1(joint - joint.signum() * eps);
            let outside = smooth_l1(joint + joint.signum() * eps);
            assert_abs_diff_eq!(inside, outside, epsilon = 1e-8);
            assert_abs_diff_eq!(smooth_l1(joint), 0.5, epsilon = 1e-15);
            let din = smooth_l1_deriv(joint - joint.signum() * eps);
            let dout = smooth_l1_deriv(joint + joint.signum() * eps);
            assert_abs_diff_eq!(din, dout, epsilon = 1e-8);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let batch = 4;
        let mut pred_d = random_batch(&mut rng, batch, CATEGORY_COUNT, -1.5, 1.5);
        let target_d = random_batch(&mut rng, batch, CATEGORY_COUNT, 0.0, 1.0);
        let weights: Vec<f64> = (0..CATEGORY_COUNT).map(|k| 0.4 + 0.07 * k as f64).collect();
        let mut pred_c = random_batch(&mut rng, batch, 3, 1.0, 10.0);
        let target_c = random_batch(&mut rng, batch, 3, 1.0, 10.0);
        let lambdas = LossWeights::default();

        let (gd, gc) = combined_loss_grad(
            &pred_d, &target_d, &weights, &pred_c, &target_c, lambdas,
        )
        .unwrap();

        let h = 1e-4;
        let check = |analytic: f64, f: &mut dyn FnMut(f64) -> f64, at: f64| {
            let fd = (f(at + h) - f(at - h)) / (2.0 * h);
            let denom = analytic.abs().max(fd.abs()).max(1e-8);
            assert!(
                ((analytic - fd) / denom).abs() < 1e-3,
                "analytic {analytic} vs fd {fd}"
            );
        };

        for j in 0..batch * CATEGORY_COUNT {
            let at = pred_d[j];
            let mut f = |v: f64| {
                pred_d[j] = v;
                let l = combined_loss(
                    &pred_d, &target_d, &weights, &pred_c, &target_c, lambdas,
                )
                .unwrap();
                l
            };
            let analytic = gd[j];
            check(analytic, &mut f, at);
            pred_d[j] = at;
        }
        for j in 0..batch * 3 {
            let at = pred_c[j];
            let mut f = |v: f64| {
                pred_c[j] = v;
                combined_loss(&pred_d, &target_d, &weights, &pred_c, &target_c, lambdas)
                    .unwrap()
            };
            let analytic = gc[j];
            check(analytic, &mut f, at);
            pred_c[j] = at;
        }
    }

    #[test]
    fn combined_loss_scales_linearly_in_lambdas() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let pred_d = random_batch(&mut rng, 3, CATEGORY_COUNT, -1.0, 1.0);
        let target_d = random_batch(&mut rng, 3, CATEGORY_COUNT, 0.0, 1.0);
        let pred_c = random_batch(&mut rng, 3, 3, 1.0, 10.0);
        let target_c = random_batch(&mut rng, 3, 3, 1.0, 10.0);
        let w = uniform_weights();

        let ld = discrete_loss(&pred_d, &target_d, &w).unwrap();
        let lc = continuous_loss(&pred_c, &target_c).unwrap();
        for (a, b) in [(0.5, 0.5), (1.0, 0.0), (0.0, 1.0), (2.0, 3.0)] {
            let got = combined_loss(
                &pred_d,
                &target_d,
                &w,
                &pred_c,
                &target_c,
                LossWeights {
                    discrete: a,
                    continuous: b,
                },
            )
            .unwrap();
            assert_abs_diff_eq!(got, a * ld + b * lc, epsilon = 1e-12);
        }
    }

    #[test]
    fn batch_mean_is_invariant_to_duplication() {
        // Doubling every row must leave both means unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let pred_d = random_batch(&mut rng, 5, CATEGORY_COUNT, -1.0, 1.0);
        let target_d = random_batch(&mut rng, 5, CATEGORY_COUNT, 0.0, 1.0);
        let w = uniform_weights();
        let doubled_p: Vec<f64> = pred_d.iter().chain(&pred_d).copied().collect();
        let doubled_t: Vec<f64> = target_d.iter().chain(&target_d).copied().collect();
        assert_abs_diff_eq!(
            discrete_loss(&pred_d, &target_d, &w).unwrap(),
            discrete_loss(&doubled_p, &doubled_t, &w).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn category_weights_follow_inverse_log_frequency() {
        let mut counts = [0u64; CATEGORY_COUNT];
        counts[0] = 75;
        counts[1] = 25;
        let w = make_category_weights(&counts).unwrap();
        assert_abs_diff_eq!(w[0], 1.0 / (1.2f64 + 0.75).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 1.0 / (1.2f64 + 0.25).ln(), epsilon = 1e-12);
        // Unseen category: p = 0.
        assert_abs_diff_eq!(w[5], 1.0 / 1.2f64.ln(), epsilon = 1e-12);
        // Rarer categories weigh more.
        assert!(w[1] > w[0]);
        assert!(w[5] > w[1]);
        assert!(w.iter().all(|&x| x.is_finite() && x > 0.0));
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let pred = vec![0.0; CATEGORY_COUNT];
        let mut w = uniform_weights();
        w[3] = 0.0;
        assert!(matches!(
            discrete_loss(&pred, &pred, &w).unwrap_err(),
            Error::NonPositiveWeight { index: 3, .. }
        ));
        assert!(LossWeights {
            discrete: -0.1,
            continuous: 0.5
        }
        .validate()
        .is_err());
        assert!(LossWeights {
            discrete: 0.0,
            continuous: 0.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let a = vec![0.0; CATEGORY_COUNT];
        let b = vec![0.0; CATEGORY_COUNT * 2];
        assert!(discrete_loss(&a, &b, &uniform_weights()).is_err());
        assert!(continuous_loss(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(continuous_loss(&[], &[]).is_err());
    }
}
