//! Cross-entropy and task-aware temperature-scaled cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logits split at the old/new class boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsSplit {
    pub z_old: Vec<f64>,
    pub z_new: Vec<f64>,
}

impl LogitsSplit {
    pub fn len(&self) -> usize {
        self.z_old.len() + self.z_new.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn concat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.z_old);
        v.extend_from_slice(&self.z_new);
        v
    }
}

/// Temperatures and group weights for old (replayed) and new samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtsParams {
    pub tau_old: f64,
    pub tau_new: f64,
    pub w_old: f64,
    pub w_new: f64,
}

impl Default for TtsParams {
    fn default() -> Self {
        Self {
            tau_old: 0.9,
            tau_new: 1.1,
            w_old: 1.1,
            w_new: 0.9,
        }
    }
}

impl TtsParams {
    pub const NEUTRAL: TtsParams = TtsParams {
        tau_old: 1.0,
        tau_new: 1.0,
        w_old: 1.0,
        w_new: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_old", self.tau_old),
            ("tau_new", self.tau_new),
            ("w_old", self.w_old),
            ("w_new", self.w_new),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Stable softmax; returns probabilities and `log Σ exp`.
pub(crate) fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let lse = max + sum.ln();
    (exps.into_iter().map(|e| e / sum).collect(), lse)
}

/// `-log softmax(logits)[label]` and its gradient `softmax - one_hot`.
pub fn ce_loss(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let (mut p, lse) = softmax(logits);
    let loss = lse - logits[label];
    p[label] -= 1.0;
    Ok((loss, p))
}

/// Mean cross-entropy over a batch; gradients are of the mean.
pub fn ce_batch_loss(logits: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} logit rows for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let scale = 1.0 / logits.len() as f64;
    let mut sum = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, &y) in logits.iter().zip(labels) {
        let (loss, g) = ce_loss(z, y)?;
        sum += loss;
        grads.push(g.into_iter().map(|v| scale * v).collect());
    }
    Ok((scale * sum, grads))
}

/// Temperature-scaled, group-weighted cross-entropy.
///
/// Returns the total loss and its gradient with respect to the raw logits
/// (in `concat(z_old, z_new)` order).
pub fn tts_loss(
    batch: &[LogitsSplit],
    labels: &[usize],
    is_old_sample: &[bool],
    params: &TtsParams,
) -> Result<(f64, Vec<Vec<f64>>)> {
    tts_loss_weighted(batch, labels, is_old_sample, params, None)
}

/// [`tts_loss`] with optional per-sample multipliers on each sample's term.
pub fn tts_loss_weighted(
    batch: &[LogitsSplit],
    labels: &[usize],
    is_old_sample: &[bool],
    params: &TtsParams,
    sample_weights: Option<&[f64]>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    params.validate()?;
    let n = batch.len();
    if n == 0 || labels.len() != n || is_old_sample.len() != n {
        return Err(Error::InvalidArgument(format!(
            "batch of {n} logits with {} labels and {} old flags",
            labels.len(),
            is_old_sample.len()
        )));
    }
    if sample_weights.is_some_and(|w| w.len() != n) {
        return Err(Error::InvalidArgument(
            "sample weight count mismatch".into(),
        ));
    }
    let n_old = is_old_sample.iter().filter(|&&o| o).count();
    let n_new = n - n_old;
    let old_scale = if n_old > 0 {
        params.w_old / n_old as f64
    } else {
        0.0
    };
    let new_scale = if n_new > 0 {
        params.w_new / n_new as f64
    } else {
        0.0
    };

    let mut old_sum = 0.0;
    let mut new_sum = 0.0;
    let mut grads = Vec::with_capacity(n);
    for (i, (z, &y)) in batch.iter().zip(labels).enumerate() {
        let boundary = z.z_old.len();
        let scaled: Vec<f64> = z
            .z_old
            .iter()
            .map(|v| v / params.tau_old)
            .chain(z.z_new.iter().map(|v| v / params.tau_new))
            .collect();
        let (loss, g) = ce_loss(&scaled, y)?;
        let extra = sample_weights.map_or(1.0, |w| w[i]);
        let scale = if is_old_sample[i] {
            old_scale
        } else {
            new_scale
        };
        if is_old_sample[i] {
            old_sum += extra * loss;
        } else {
            new_sum += extra * loss;
        }
        let grad = g
            .into_iter()
            .enumerate()
            .map(|(j, gj)| {
                let tau = if j < boundary {
                    params.tau_old
                } else {
                    params.tau_new
                };
                extra * scale * gj / tau
            })
            .collect();
        grads.push(grad);
    }
    let total = if n_old > 0 { old_scale * old_sum } else { 0.0 }
        + if n_new > 0 { new_scale * new_sum } else { 0.0 };
    Ok((total, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(old: &[f64], new: &[f64]) -> LogitsSplit {
        LogitsSplit {
            z_old: old.to_vec(),
            z_new: new.to_vec(),
        }
    }

    #[test]
    fn ce_uniform_four_way() {
        let (loss, _) = ce_loss(&[0.0; 4], 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ce_saturated() {
        let (loss, _) = ce_loss(&[100.0, 0.0], 0).unwrap();
        assert!(loss <= 1e-8);
    }

    #[test]
    fn ce_grad_sums_to_zero() {
        let (_, g) = ce_loss(&[0.3, -2.0, 5.5, 1.0], 1).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn ce_label_out_of_range() {
        assert!(ce_loss(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn tts_uniform_binary() {
        let params = TtsParams::NEUTRAL;
        let (loss, _) = tts_loss(&[split(&[], &[0.0, 0.0])], &[0], &[false], &params).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn tts_sharpened_old_sample() {
        let params = TtsParams {
            tau_old: 0.5,
            tau_new: 1.0,
            w_old: 1.0,
            w_new: 1.0,
        };
        let (loss, _) = tts_loss(&[split(&[2.0], &[0.0])], &[0], &[true], &params).unwrap();
        let want = (1.0 + (-4f64).exp()).ln();
        assert!((loss - want).abs() < 1e-15);
        assert!((loss - 0.018150).abs() < 1e-6);
    }

    #[test]
    fn tts_neutral_all_new_is_mean_ce() {
        let batch = vec![split(&[0.5], &[1.0, -1.0]), split(&[2.0], &[0.0, 0.3])];
        let labels = [2, 0];
        let (tts, g_tts) = tts_loss(&batch, &labels, &[false, false], &TtsParams::NEUTRAL).unwrap();
        let raw: Vec<Vec<f64>> = batch.iter().map(LogitsSplit::concat).collect();
        let (ce, g_ce) = ce_batch_loss(&raw, &labels).unwrap();
        assert_eq!(tts.to_bits(), ce.to_bits());
        assert_eq!(g_tts, g_ce);
    }

    #[test]
    fn tts_rejects_bad_params_and_labels() {
        let bad = TtsParams {
            tau_old: 0.0,
            ..TtsParams::NEUTRAL
        };
        assert!(tts_loss(&[split(&[1.0], &[1.0])], &[0], &[true], &bad).is_err());
        assert!(tts_loss(&[split(&[1.0], &[1.0])], &[2], &[true], &TtsParams::NEUTRAL).is_err());
        assert!(tts_loss(&[], &[], &[], &TtsParams::NEUTRAL).is_err());
    }

    #[test]
    fn tts_finite_for_huge_logits() {
        let params = TtsParams::default();
        let (loss, g) =
            tts_loss(&[split(&[1e4, -1e4], &[5e3, 0.0])], &[1], &[true], &params).unwrap();
        assert!(loss.is_finite());
        assert!(g[0].iter().all(|v| v.is_finite()));
    }
}
