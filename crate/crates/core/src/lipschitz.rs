//! Lipschitz coverage-reward calculus.
//!
//! Forcing `p_j = 0` for every negative `j` in `S` caps every other
//! non-top candidate at `p_i <= L * min_{j in S} A[i][j]`. The saturating
//! policy puts each such candidate exactly at its cap and gives the rest of
//! the mass to the top-reward candidate. Its expected reward equals
//! `r_max - L * sum_i (r_max - r_i) * min_{j in S} A[i][j]`, which ties
//! coverage minimization to reward maximization.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::optselect::binomial;
use crate::pool::CandidatePool;
use crate::weighting::weights_max_gap_normalized;

/// Slack allowed on the nonnegativity of the top candidate's remainder.
pub const FEASIBILITY_TOL: f64 = 1e-12;

/// Largest pool for which [`verify_optimality_equivalence`] enumerates.
pub const MAX_ENUMERATION_POOL: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzPolicy {
    pub probabilities: Vec<f64>,
    pub lipschitz_constant: f64,
    pub negative_set: Vec<usize>,
    pub positive_index: usize,
}

fn validate_negatives(pool: &CandidatePool, negatives: &[usize]) -> Result<usize> {
    if negatives.is_empty() {
        return Err(Error::EmptySubset);
    }
    let top = pool.top_reward_index();
    for &j in negatives {
        pool.check_index(j)?;
        if j == top {
            return Err(Error::OverlappingSets(j));
        }
    }
    Ok(top)
}

fn validate_lipschitz(l: f64) -> Result<()> {
    if l.is_nan() || l < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "Lipschitz constant must be nonnegative, got {l}"
        )));
    }
    Ok(())
}

/// `min_{j in S} A[i][j]` for every candidate.
pub fn nearest_negative_distances(pool: &CandidatePool, negatives: &[usize]) -> Vec<f64> {
    (0..pool.len())
        .map(|i| {
            negatives
                .iter()
                .map(|&j| pool.distance(i, j))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Sum of nearest-negative distances over candidates outside `S` and
/// other than the top candidate.
pub fn uncovered_distance_sum(pool: &CandidatePool, negatives: &[usize]) -> Result<f64> {
    let top = validate_negatives(pool, negatives)?;
    let nearest = nearest_negative_distances(pool, negatives);
    Ok((0..pool.len())
        .filter(|&i| i != top && !negatives.contains(&i))
        .map(|i| nearest[i])
        .fold(0.0, |acc, d| acc + d))
}

/// Whether some distribution satisfies every cap: the capped mass must fit
/// in `1 / L`.
pub fn feasibility_check(pool: &CandidatePool, negatives: &[usize], l: f64) -> Result<bool> {
    validate_lipschitz(l)?;
    let sum = uncovered_distance_sum(pool, negatives)?;
    if l == 0.0 {
        return Ok(true);
    }
    Ok(sum <= 1.0 / l)
}

/// `sum_i (r_max - r_i) * min_{j in S} A[i][j]` over all candidates.
pub fn max_gap_cost(pool: &CandidatePool, negatives: &[usize]) -> Result<f64> {
    validate_negatives(pool, negatives)?;
    let rewards = pool.rewards();
    let r_max = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let nearest = nearest_negative_distances(pool, negatives);
    Ok(rewards.iter().zip(&nearest).map(|(r, d)| (r_max - r) * d).sum())
}

/// Same as [`max_gap_cost`] with weights normalized to sum to one.
pub fn normalized_max_gap_cost(pool: &CandidatePool, negatives: &[usize]) -> Result<f64> {
    validate_negatives(pool, negatives)?;
    let weights = weights_max_gap_normalized(&pool.rewards()).values;
    let nearest = nearest_negative_distances(pool, negatives);
    Ok(weights.iter().zip(&nearest).map(|(w, d)| w * d).sum())
}

/// The policy sitting on every Lipschitz cap with the top candidate taking
/// the remainder.
pub fn saturating_policy(pool: &CandidatePool, negatives: &[usize], l: f64) -> Result<LipschitzPolicy> {
    validate_lipschitz(l)?;
    let top = validate_negatives(pool, negatives)?;
    let nearest = nearest_negative_distances(pool, negatives);
    let mut probabilities = vec![0.0; pool.len()];
    let mut capped = 0.0;
    for i in 0..pool.len() {
        if i == top || negatives.contains(&i) {
            continue;
        }
        probabilities[i] = l * nearest[i];
        capped += probabilities[i];
    }
    let remainder = 1.0 - capped;
    if remainder < -FEASIBILITY_TOL {
        return Err(Error::Infeasible { remainder });
    }
    probabilities[top] = remainder;
    let mut negative_set = negatives.to_vec();
    negative_set.sort_unstable();
    Ok(LipschitzPolicy {
        probabilities,
        lipschitz_constant: l,
        negative_set,
        positive_index: top,
    })
}

/// Expected reward of the saturating policy.
pub fn saturating_reward(pool: &CandidatePool, negatives: &[usize], l: f64) -> Result<f64> {
    let policy = saturating_policy(pool, negatives, l)?;
    Ok(pool
        .candidates()
        .iter()
        .zip(&policy.probabilities)
        .map(|(c, p)| c.reward * p)
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetEvaluation {
    pub negatives: Vec<usize>,
    pub feasible: bool,
    pub cost: f64,
    /// `None` when infeasible.
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub subsets: usize,
    pub feasible: usize,
    /// Minimizers of the max-gap coverage cost among feasible subsets.
    pub cost_optimizers: Vec<Vec<usize>>,
    /// Maximizers of the saturating reward among feasible subsets.
    pub reward_optimizers: Vec<Vec<usize>>,
    /// Largest `|reward - (r_max - L * cost)|` seen.
    pub max_identity_residual: f64,
    pub holds: bool,
    pub table: Vec<SubsetEvaluation>,
}

/// Values within this relative distance of the optimum belong to the
/// optimizer family.
pub const FAMILY_TOL: f64 = 1e-12;

fn lex_subsets(n: usize, k: usize, skip: usize) -> Vec<Vec<usize>> {
    let items: Vec<usize> = (0..n).filter(|&i| i != skip).collect();
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(items: &[usize], start: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for p in start..items.len() {
            cur.push(items[p]);
            rec(items, p + 1, k, cur, out);
            cur.pop();
        }
    }
    rec(&items, 0, k, &mut cur, &mut out);
    out
}

/// Enumerates every size-`k` negative set and checks that the feasible
/// cost minimizers are exactly the feasible saturating-reward maximizers.
///
/// An instance with no feasible subset is reported with `holds = true` and
/// empty optimizer families.
pub fn verify_optimality_equivalence(pool: &CandidatePool, k: usize, l: f64) -> Result<EquivalenceReport> {
    validate_lipschitz(l)?;
    let n = pool.len();
    if n > MAX_ENUMERATION_POOL {
        return Err(Error::InvalidParameter(format!(
            "enumeration is limited to {MAX_ENUMERATION_POOL} candidates, got {n}"
        )));
    }
    if k == 0 || k > n - 1 {
        return Err(Error::InvalidBudget { k, max: n - 1 });
    }
    let top = pool.top_reward_index();
    let r_max = pool.candidate(top).reward;
    debug_assert_eq!(binomial(n - 1, k) as usize, lex_subsets(n, k, top).len());

    let mut table = Vec::new();
    let mut residual = 0.0f64;
    for negatives in lex_subsets(n, k, top) {
        let cost = max_gap_cost(pool, &negatives)?;
        let feasible = feasibility_check(pool, &negatives, l)?;
        let reward = if feasible {
            match saturating_reward(pool, &negatives, l) {
                Ok(r) => Some(r),
                Err(Error::Infeasible { .. }) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        if let Some(r) = reward {
            residual = residual.max((r - (r_max - l * cost)).abs());
        }
        table.push(SubsetEvaluation {
            negatives,
            feasible: reward.is_some(),
            cost,
            reward,
        });
    }

    let feasible: Vec<&SubsetEvaluation> = table.iter().filter(|e| e.feasible).collect();
    let (cost_optimizers, reward_optimizers) = if feasible.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let min_cost = feasible.iter().map(|e| e.cost).fold(f64::INFINITY, f64::min);
        let max_reward = feasible
            .iter()
            .filter_map(|e| e.reward)
            .fold(f64::NEG_INFINITY, f64::max);
        let cost_tol = FAMILY_TOL * min_cost.abs().max(1.0);
        let reward_tol = FAMILY_TOL * max_reward.abs().max(1.0);
        (
            feasible
                .iter()
                .filter(|e| e.cost <= min_cost + cost_tol)
                .map(|e| e.negatives.clone())
                .collect(),
            feasible
                .iter()
                .filter(|e| e.reward.is_some_and(|r| r >= max_reward - reward_tol))
                .map(|e| e.negatives.clone())
                .collect(),
        )
    };

    Ok(EquivalenceReport {
        subsets: table.len(),
        feasible: feasible.len(),
        holds: cost_optimizers == reward_optimizers,
        cost_optimizers,
        reward_optimizers,
        max_identity_residual: residual,
        table,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdditiveBoundReport {
    pub d_max: f64,
    pub diameters: Vec<f64>,
    /// The per-cluster lowest-reward representatives.
    pub representatives: Vec<usize>,
    pub normalized_cost: f64,
    pub r_max: f64,
    /// `r_max - L * normalized_cost`.
    pub reward_lower_bound: f64,
    /// `r_max - L * d_max`.
    pub guaranteed_reward: f64,
    /// `d_max - normalized_cost`.
    pub slack: f64,
    pub holds: bool,
}

/// Relative slack on `cost <= d_max` for accumulated rounding.
pub const ADDITIVE_TOL: f64 = 1e-12;

pub fn cluster_diameter(pool: &CandidatePool, members: &[usize]) -> f64 {
    let mut diameter = 0.0f64;
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            diameter = diameter.max(pool.distance(i, j));
        }
    }
    diameter
}

/// Takes the lowest-reward member of each cluster as the negative set and
/// checks that its normalized max-gap coverage cost stays below `d_max`.
///
/// `clusters` must partition the candidates other than the top one, and
/// every cluster diameter must be at most `d_max`.
pub fn verify_additive_bound(
    pool: &CandidatePool,
    clusters: &[Vec<usize>],
    d_max: f64,
    l: f64,
) -> Result<AdditiveBoundReport> {
    validate_lipschitz(l)?;
    let n = pool.len();
    let top = pool.top_reward_index();
    let mut seen = vec![false; n];
    for (c, members) in clusters.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::InvalidPartition(format!("cluster {c} is empty")));
        }
        for &i in members {
            pool.check_index(i)?;
            if i == top {
                return Err(Error::InvalidPartition(format!(
                    "cluster {c} contains the top-reward candidate {i}"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidPartition(format!("candidate {i} appears twice")));
            }
        }
    }
    if let Some(missing) = (0..n).find(|&i| i != top && !seen[i]) {
        return Err(Error::InvalidPartition(format!(
            "candidate {missing} is not in any cluster"
        )));
    }

    let diameters: Vec<f64> = clusters.iter().map(|m| cluster_diameter(pool, m)).collect();
    for (cluster, &diameter) in diameters.iter().enumerate() {
        if diameter > d_max {
            return Err(Error::DiameterExceeded {
                cluster,
                diameter,
                d_max,
            });
        }
    }

    let representatives: Vec<usize> = clusters
        .iter()
        .map(|members| {
            *members
                .iter()
                .min_by(|&&a, &&b| {
                    pool.candidate(a)
                        .reward
                        .total_cmp(&pool.candidate(b).reward)
                        .then(a.cmp(&b))
                })
                .expect("non-empty cluster")
        })
        .collect();
    let normalized_cost = normalized_max_gap_cost(pool, &representatives)?;
    let r_max = pool.candidate(top).reward;
    let reward_lower_bound = r_max - l * normalized_cost;
    let guaranteed_reward = r_max - l * d_max;
    let holds =
        normalized_cost <= d_max * (1.0 + ADDITIVE_TOL) && reward_lower_bound >= guaranteed_reward - ADDITIVE_TOL;

    Ok(AdditiveBoundReport {
        d_max,
        diameters,
        representatives,
        normalized_cost,
        r_max,
        reward_lower_bound,
        guaranteed_reward,
        slack: d_max - normalized_cost,
        holds,
    })
}
