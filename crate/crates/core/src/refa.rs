//! Reference-free group-contrastive objective.
//!
//! Each selected response gets the score
//! `beta * (log p_i + alpha * |r_i - mean_S(r)|)` and the loss is
//! `-log(sum_{S+} exp(s) / sum_{S+ u S-} exp(s))`. The toy policy is a
//! softmax over logits, so `log p = log_softmax(logits)` and the gradient
//! with respect to the logits has a closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefaConfig {
    /// Scale of the reward-deviation bonus.
    pub alpha: f64,
    /// Multiplies every score before the contrastive softmax.
    pub inverse_temperature: f64,
}

impl Default for RefaConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            inverse_temperature: 1.0,
        }
    }
}

impl RefaConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "alpha must be finite and nonnegative, got {}",
                self.alpha
            )));
        }
        if !(self.inverse_temperature.is_finite() && self.inverse_temperature > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "inverse temperature must be positive, got {}",
                self.inverse_temperature
            )));
        }
        Ok(())
    }
}

/// `log(sum exp(x))` with max subtraction; `-inf` for an empty input.
pub fn log_sum_exp<I: IntoIterator<Item = f64> + Clone>(xs: I) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits.iter().copied());
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Scores for `subset` (indices into `logprobs`/`rewards`), in subset order.
/// The reward mean is taken over the subset.
pub fn refa_scores(logprobs: &[f64], rewards: &[f64], subset: &[usize], config: &RefaConfig) -> Result<Vec<f64>> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let len = logprobs.len().min(rewards.len());
    if let Some(&bad) = subset.iter().find(|&&i| i >= len) {
        return Err(Error::IndexOutOfRange { index: bad, len });
    }
    let mean = subset.iter().map(|&i| rewards[i]).sum::<f64>() / subset.len() as f64;
    Ok(subset
        .iter()
        .map(|&i| config.inverse_temperature * (logprobs[i] + config.alpha * (rewards[i] - mean).abs()))
        .collect())
}

fn check_disjoint(positives: &[usize], negatives: &[usize]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for &i in positives.iter().chain(negatives) {
        if !seen.insert(i) {
            return Err(Error::OverlappingSets(i));
        }
    }
    Ok(())
}

/// Contrastive loss over `scores`; the index sets point into `scores`.
pub fn refa_loss(scores: &[f64], positives: &[usize], negatives: &[usize]) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::EmptySubset);
    }
    check_disjoint(positives, negatives)?;
    if let Some(&bad) = positives.iter().chain(negatives).find(|&&i| i >= scores.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: scores.len(),
        });
    }
    if negatives.is_empty() {
        return Ok(0.0);
    }
    let pos = log_sum_exp(positives.iter().map(|&i| scores[i]));
    let all = log_sum_exp(positives.iter().chain(negatives).map(|&i| scores[i]));
    let gap = all - pos;
    Ok(if gap < 0.0 { 0.0 } else { gap })
}

/// Loss and gradient with respect to the policy logits.
///
/// `positives` and `negatives` are candidate indices into `logits` and
/// `rewards`. Writing `q` for the softmax of the scores over `S+ u S-`
/// and `q+` for the softmax over `S+`, the score gradient is
/// `g_i = q_i - [i in S+] q+_i`, and the chain rule through the score
/// scale and `log_softmax` gives `beta * (g_m - pi_m * sum_i g_i)`.
pub fn refa_loss_grad(
    logits: &[f64],
    rewards: &[f64],
    positives: &[usize],
    negatives: &[usize],
    config: &RefaConfig,
) -> Result<(f64, Vec<f64>)> {
    if logits.len() != rewards.len() {
        return Err(Error::InvalidParameter(format!(
            "{} logits but {} rewards",
            logits.len(),
            rewards.len()
        )));
    }
    if positives.is_empty() {
        return Err(Error::EmptySubset);
    }
    check_disjoint(positives, negatives)?;
    let subset: Vec<usize> = positives.iter().chain(negatives).copied().collect();
    let logprobs = log_softmax(logits);
    let scores = refa_scores(&logprobs, rewards, &subset, config)?;
    let n_pos = positives.len();
    let pos_idx: Vec<usize> = (0..n_pos).collect();
    let neg_idx: Vec<usize> = (n_pos..subset.len()).collect();
    let loss = refa_loss(&scores, &pos_idx, &neg_idx)?;

    let all = log_sum_exp(scores.iter().copied());
    let pos = log_sum_exp(scores[..n_pos].iter().copied());
    let mut score_grad = vec![0.0; logits.len()];
    for (slot, &cand) in subset.iter().enumerate() {
        let mut g = (scores[slot] - all).exp();
        if slot < n_pos {
            g -= (scores[slot] - pos).exp();
        }
        score_grad[cand] = g;
    }
    let total: f64 = score_grad.iter().sum();
    let beta = config.inverse_temperature;
    let grad = score_grad
        .iter()
        .zip(&logprobs)
        .map(|(g, lp)| beta * (g - lp.exp() * total))
        .collect();
    Ok((loss, grad))
}
