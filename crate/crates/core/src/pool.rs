//! Candidate data model and embedding geometry.
//!
//! A [`CandidatePool`] holds the `N` responses generated for one prompt
//! together with the dense pairwise L2 distance matrix every selector reads.
//! Pools are immutable once built.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distances below this are treated as an all-zero matrix when normalizing.
pub const DISTANCE_EPS: f64 = 1e-12;

/// One generated response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub reward: f64,
    pub embedding: Vec<f64>,
    /// Natural-log probability under the generating policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
}

impl Candidate {
    pub fn new(id: impl Into<String>, reward: f64, embedding: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            reward,
            embedding,
            logprob: None,
        }
    }

    pub fn with_logprob(mut self, logprob: f64) -> Self {
        self.logprob = Some(logprob);
        self
    }
}

/// How rewards are rescaled when a pool is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardScaling {
    /// Min-max normalize only when some reward lies outside `[0, 1]`.
    #[default]
    IfOutOfRange,
    /// Always min-max normalize.
    MinMax,
    /// Keep rewards as given.
    None,
}

impl RewardScaling {
    /// Rescales `rewards` in place. A constant vector maps to 0.5 whenever
    /// rescaling applies. Returns whether anything was rescaled.
    pub fn apply(self, rewards: &mut [f64]) -> bool {
        if rewards.is_empty() {
            return false;
        }
        let (lo, hi) = rewards.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
            (lo.min(r), hi.max(r))
        });
        let rescale = match self {
            RewardScaling::None => false,
            RewardScaling::MinMax => true,
            RewardScaling::IfOutOfRange => lo < 0.0 || hi > 1.0,
        };
        if !rescale {
            return false;
        }
        if hi > lo {
            let span = hi - lo;
            for r in rewards.iter_mut() {
                *r = (*r - lo) / span;
            }
        } else {
            rewards.fill(0.5);
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolOptions {
    pub normalize_distances: bool,
    pub reward_scaling: RewardScaling,
}

impl Default for PoolOptions {
    fn default() -> Self {
        Self {
            normalize_distances: true,
            reward_scaling: RewardScaling::IfOutOfRange,
        }
    }
}

/// All candidates for one prompt plus their pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    prompt_id: String,
    candidates: Vec<Candidate>,
    distances: Vec<f64>,
    distance_normalized: bool,
    distance_scale: f64,
}

impl CandidatePool {
    /// Builds a pool with the default reward rescaling rule.
    pub fn build(prompt_id: impl Into<String>, candidates: Vec<Candidate>, normalize_distances: bool) -> Result<Self> {
        Self::build_with(
            prompt_id,
            candidates,
            PoolOptions {
                normalize_distances,
                ..PoolOptions::default()
            },
        )
    }

    pub fn build_with(
        prompt_id: impl Into<String>,
        mut candidates: Vec<Candidate>,
        options: PoolOptions,
    ) -> Result<Self> {
        let n = candidates.len();
        if n < 2 {
            return Err(Error::TooFewCandidates(n));
        }
        let dim = candidates[0].embedding.len();
        for c in &candidates {
            if c.embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    id: c.id.clone(),
                    expected: dim,
                    found: c.embedding.len(),
                });
            }
            if !c.reward.is_finite() {
                return Err(Error::NonFinite {
                    id: c.id.clone(),
                    field: "reward",
                });
            }
            if c.embedding.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    id: c.id.clone(),
                    field: "embedding",
                });
            }
            if matches!(c.logprob, Some(lp) if !lp.is_finite()) {
                return Err(Error::NonFinite {
                    id: c.id.clone(),
                    field: "logprob",
                });
            }
        }

        let mut rewards: Vec<f64> = candidates.iter().map(|c| c.reward).collect();
        if options.reward_scaling.apply(&mut rewards) {
            for (c, r) in candidates.iter_mut().zip(rewards) {
                c.reward = r;
            }
        }

        let mut distances = vec![0.0; n * n];
        let mut max = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = euclidean(&candidates[i].embedding, &candidates[j].embedding);
                distances[i * n + j] = d;
                distances[j * n + i] = d;
                max = max.max(d);
            }
        }
        let mut distance_scale = 1.0;
        if options.normalize_distances && max >= DISTANCE_EPS {
            for d in distances.iter_mut() {
                *d /= max;
            }
            distance_scale = max;
        }

        Ok(Self {
            prompt_id: prompt_id.into(),
            candidates,
            distances,
            distance_normalized: options.normalize_distances,
            distance_scale,
        })
    }

    pub fn prompt_id(&self) -> &str {
        &self.prompt_id
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn candidate(&self, i: usize) -> &Candidate {
        &self.candidates[i]
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.candidates[0].embedding.len()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.reward).collect()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.len() + j]
    }

    /// Row-major `N x N` distance matrix.
    pub fn distance_matrix(&self) -> &[f64] {
        &self.distances
    }

    pub fn distance_normalized(&self) -> bool {
        self.distance_normalized
    }

    /// Factor the raw distances were divided by (1 when not normalized).
    pub fn distance_scale(&self) -> f64 {
        self.distance_scale
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if index < self.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { index, len: self.len() })
        }
    }

    /// Smallest index achieving the maximum reward.
    pub fn top_reward_index(&self) -> usize {
        top_reward_index(&self.rewards())
    }

    /// Cosine similarity of two embeddings; zero-norm vectors give 0.
    pub fn cosine_similarity(&self, i: usize, j: usize) -> Result<f64> {
        self.check_index(i)?;
        self.check_index(j)?;
        Ok(cosine(&self.candidates[i].embedding, &self.candidates[j].embedding))
    }
}

/// Smallest index achieving the maximum of `rewards`.
///
/// Panics on an empty slice.
pub fn top_reward_index(rewards: &[f64]) -> usize {
    assert!(!rewards.is_empty(), "top_reward_index on empty rewards");
    let mut best = 0;
    for (i, &r) in rewards.iter().enumerate().skip(1) {
        if r > rewards[best] {
            best = i;
        }
    }
    best
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Which selector produced a [`SelectionResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[serde(alias = "bottomk")]
    BottomK,
    Coreset,
    #[serde(alias = "optselect-exact")]
    OptSelectExact,
    #[serde(alias = "optselect-local")]
    OptSelectLocal,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Method::BottomK => "bottom-k",
            Method::Coreset => "coreset",
            Method::OptSelectExact => "opt-select-exact",
            Method::OptSelectLocal => "opt-select-local",
        };
        f.write_str(name)
    }
}

/// One positive plus `K` negatives, as pool indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub positive_index: usize,
    /// Sorted ascending.
    pub negative_indices: Vec<usize>,
    pub method: Method,
    /// Coverage cost of the negative set (Opt-Select only).
    pub objective_value: Option<f64>,
    pub seed: u64,
    /// Number of local-search restarts, when applicable.
    pub restarts: Option<u32>,
}
