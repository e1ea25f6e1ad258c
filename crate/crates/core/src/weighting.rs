//! Per-candidate suppression weights.
//!
//! Two conventions are in use: `exp(mean - r_i)`, which the selectors use,
//! and the normalized gap to the best reward `(r_max - r_i) / W`, which the
//! Lipschitz coverage calculus uses.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    /// `w_i = exp(mean(r) - r_i)`.
    #[default]
    #[serde(alias = "exp-mean-gap")]
    ExpMean,
    /// `w_i = (r_max - r_i) / sum_j (r_max - r_j)`, uniform when all rewards tie.
    #[serde(alias = "max-gap-normalized")]
    MaxGap,
}

impl std::str::FromStr for WeightScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exp-mean" | "exp-mean-gap" => Ok(WeightScheme::ExpMean),
            "max-gap" | "max-gap-normalized" => Ok(WeightScheme::MaxGap),
            other => Err(format!(
                "unknown weight scheme `{other}` (expected exp-mean or max-gap)"
            )),
        }
    }
}

impl std::fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightScheme::ExpMean => "exp-mean",
            WeightScheme::MaxGap => "max-gap",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub scheme: WeightScheme,
    pub values: Vec<f64>,
    /// Mean reward for `ExpMean`, maximum reward for `MaxGap`.
    pub reference_reward: f64,
}

impl WeightVector {
    pub fn compute(scheme: WeightScheme, rewards: &[f64]) -> Self {
        match scheme {
            WeightScheme::ExpMean => weights_exp_mean_gap(rewards),
            WeightScheme::MaxGap => weights_max_gap_normalized(rewards),
        }
    }
}

pub fn weights_exp_mean_gap(rewards: &[f64]) -> WeightVector {
    assert!(!rewards.is_empty(), "weights of an empty reward vector");
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    WeightVector {
        scheme: WeightScheme::ExpMean,
        values: rewards.iter().map(|r| (mean - r).exp()).collect(),
        reference_reward: mean,
    }
}

pub fn weights_max_gap_normalized(rewards: &[f64]) -> WeightVector {
    assert!(!rewards.is_empty(), "weights of an empty reward vector");
    let max = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let gaps: Vec<f64> = rewards.iter().map(|r| max - r).collect();
    let total: f64 = gaps.iter().sum();
    let values = if total > 0.0 {
        gaps.iter().map(|g| g / total).collect()
    } else {
        vec![1.0 / rewards.len() as f64; rewards.len()]
    };
    WeightVector {
        scheme: WeightScheme::MaxGap,
        values,
        reference_reward: max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exp_mean_examples() {
        let w = weights_exp_mean_gap(&[0.3, 0.3, 0.3]);
        assert_eq!(w.values, vec![1.0; 3]);

        let w = weights_exp_mean_gap(&[0.0, 1.0]);
        assert_eq!(w.reference_reward, 0.5);
        assert!((w.values[0] - 1.648_721_270_700_128).abs() < 1e-12);
        assert!((w.values[1] - 0.606_530_659_712_633_4).abs() < 1e-12);

        let w = weights_exp_mean_gap(&[0.0, 0.5, 1.0]);
        assert_eq!(w.values[1], 1.0);
    }

    #[test]
    fn max_gap_examples() {
        let w = weights_max_gap_normalized(&[1.0, 0.5, 0.5]);
        assert_eq!(w.values, vec![0.0, 0.5, 0.5]);
        assert_eq!(w.reference_reward, 1.0);

        let w = weights_max_gap_normalized(&[0.4; 4]);
        assert_eq!(w.values, vec![0.25; 4]);
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("exp-mean".parse::<WeightScheme>(), Ok(WeightScheme::ExpMean));
        assert_eq!("max-gap".parse::<WeightScheme>(), Ok(WeightScheme::MaxGap));
        assert!("nope".parse::<WeightScheme>().is_err());
    }

    proptest! {
        #[test]
        fn exp_mean_strictly_decreasing_in_reward(rewards in prop::collection::vec(0.0f64..1.0, 2..20)) {
            let w = weights_exp_mean_gap(&rewards);
            for i in 0..rewards.len() {
                prop_assert!(w.values[i] > 0.0);
                for j in 0..rewards.len() {
                    if rewards[i] < rewards[j] - 1e-9 {
                        prop_assert!(w.values[i] > w.values[j]);
                    }
                }
            }
        }

        #[test]
        fn max_gap_sums_to_one(rewards in prop::collection::vec(0.0f64..1.0, 1..20)) {
            let w = weights_max_gap_normalized(&rewards);
            prop_assert!(w.values.iter().all(|&v| v >= 0.0));
            prop_assert!((w.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn permutation_equivariant(rewards in prop::collection::vec(0.0f64..1.0, 2..12), rot in 0usize..12) {
            let n = rewards.len();
            let rot = rot % n;
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let permuted: Vec<f64> = perm.iter().map(|&p| rewards[p]).collect();
            for scheme in [WeightScheme::ExpMean, WeightScheme::MaxGap] {
                let a = WeightVector::compute(scheme, &rewards);
                let b = WeightVector::compute(scheme, &permuted);
                for (i, &p) in perm.iter().enumerate() {
                    prop_assert!((b.values[i] - a.values[p]).abs() < 1e-12);
                }
            }
        }
    }
}
