//! Coverage-optimal negative selection.
//!
//! The negatives `S` minimize the weighted coverage cost
//! `sum_i w_i * min_{j in S} A[i][j]` over the candidates other than the
//! positive, which is a weighted k-medoids problem. [`solve_exact`]
//! enumerates subsets with branch-and-bound pruning; [`solve_local_search`]
//! runs steepest-descent 1-swap local search from a seeded random start.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{CandidatePool, Method, SelectionResult, DISTANCE_EPS};
use crate::weighting::{weights_exp_mean_gap, weights_max_gap_normalized, WeightScheme};

/// A swap must lower the cost by more than this to be applied.
pub const IMPROVEMENT_EPS: f64 = 1e-12;

/// A weighted k-medoids instance over `M` eligible candidates.
///
/// Positions `0..M` index the eligible candidates; `indices` maps them back
/// to pool indices. Every eligible candidate is both a potential center and
/// a covered point.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageInstance {
    indices: Vec<usize>,
    weights: Vec<f64>,
    distances: Vec<f64>,
    k: usize,
}

impl CoverageInstance {
    /// `distances` is row-major `M x M`.
    pub fn new(indices: Vec<usize>, weights: Vec<f64>, distances: Vec<f64>, k: usize) -> Result<Self> {
        let m = indices.len();
        if weights.len() != m || distances.len() != m * m {
            return Err(Error::InvalidParameter(format!(
                "instance over {m} points needs {m} weights and {} distances",
                m * m
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        if distances.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidParameter(
                "distances must be finite and nonnegative".into(),
            ));
        }
        if k == 0 || k > m {
            return Err(Error::InvalidBudget { k, max: m });
        }
        Ok(Self {
            indices,
            weights,
            distances,
            k,
        })
    }

    /// Builds the instance over every candidate except `exclude`.
    ///
    /// Exp-mean weights use the mean of the remaining rewards. Max-gap
    /// weights use the full pool, so the excluded top candidate carries
    /// zero weight and the remaining weights sum to one. When the pool's
    /// distances are normalized, the reduced matrix is rescaled to max 1.
    pub fn from_pool(pool: &CandidatePool, exclude: usize, scheme: WeightScheme, k: usize) -> Result<Self> {
        pool.check_index(exclude)?;
        let indices: Vec<usize> = (0..pool.len()).filter(|&i| i != exclude).collect();
        let m = indices.len();

        let weights = match scheme {
            WeightScheme::ExpMean => {
                let reduced: Vec<f64> = indices.iter().map(|&i| pool.candidate(i).reward).collect();
                weights_exp_mean_gap(&reduced).values
            }
            WeightScheme::MaxGap => {
                let full = weights_max_gap_normalized(&pool.rewards()).values;
                indices.iter().map(|&i| full[i]).collect()
            }
        };

        let mut distances = Vec::with_capacity(m * m);
        for &i in &indices {
            for &j in &indices {
                distances.push(pool.distance(i, j));
            }
        }
        if pool.distance_normalized() {
            let max = distances.iter().cloned().fold(0.0, f64::max);
            if max >= DISTANCE_EPS {
                for d in distances.iter_mut() {
                    *d /= max;
                }
            }
        }
        Self::new(indices, weights, distances, k)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::InvalidParameter("weight count mismatch".into()));
        }
        self.weights = weights;
        Self::new(self.indices, self.weights, self.distances, self.k)
    }

    pub fn with_k(self, k: usize) -> Result<Self> {
        Self::new(self.indices, self.weights, self.distances, k)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.len() + j]
    }

    /// Maps instance positions to pool indices.
    pub fn to_pool_indices(&self, members: &[usize]) -> Vec<usize> {
        members.iter().map(|&p| self.indices[p]).collect()
    }

    /// Weighted coverage cost of `members` (instance positions).
    pub fn coverage_cost(&self, members: &[usize]) -> Result<f64> {
        if members.is_empty() {
            return Err(Error::EmptySubset);
        }
        if let Some(&bad) = members.iter().find(|&&p| p >= self.len()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.len(),
            });
        }
        Ok(self.cost_unchecked(members))
    }

    fn cost_unchecked(&self, members: &[usize]) -> f64 {
        let m = self.len();
        let mut total = 0.0;
        for i in 0..m {
            let row = &self.distances[i * m..(i + 1) * m];
            let nearest = members.iter().map(|&j| row[j]).fold(f64::INFINITY, f64::min);
            total += self.weights[i] * nearest;
        }
        total
    }

    /// Whether no single in/out exchange lowers the cost by more than
    /// [`IMPROVEMENT_EPS`].
    pub fn is_swap_stable(&self, members: &[usize]) -> bool {
        let current = self.cost_unchecked(members);
        let mut trial = members.to_vec();
        for slot in 0..members.len() {
            for cand in 0..self.len() {
                if members.contains(&cand) {
                    continue;
                }
                trial[slot] = cand;
                if current - self.cost_unchecked(&trial) > IMPROVEMENT_EPS {
                    return false;
                }
            }
            trial[slot] = members[slot];
        }
        true
    }
}

/// A solved negative set in instance positions.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageSolution {
    /// Sorted instance positions.
    pub members: Vec<usize>,
    pub cost: f64,
    /// Swaps applied (local search only).
    pub swaps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactLimits {
    pub max_points: usize,
    pub max_combinations: u128,
}

impl Default for ExactLimits {
    fn default() -> Self {
        Self {
            max_points: 20,
            max_combinations: 2_000_000,
        }
    }
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Exact minimizer of the coverage cost over all size-`k` subsets.
///
/// Equal-cost subsets resolve to the lexicographically smallest sorted
/// tuple. Partial subsets are pruned when the cost of covering with every
/// remaining candidate as well already reaches the incumbent.
pub fn solve_exact(instance: &CoverageInstance, limits: ExactLimits) -> Result<CoverageSolution> {
    let m = instance.len();
    let k = instance.k;
    let combinations = binomial(m, k);
    if m > limits.max_points || combinations > limits.max_combinations {
        return Err(Error::ExactTooLarge {
            points: m,
            k,
            combinations,
            max_points: limits.max_points,
            max_combinations: limits.max_combinations,
        });
    }

    // suffix_min[s * m + i] = min_{j >= s} d(i, j)
    let mut suffix_min = vec![f64::INFINITY; (m + 1) * m];
    for s in (0..m).rev() {
        for i in 0..m {
            suffix_min[s * m + i] = suffix_min[(s + 1) * m + i].min(instance.distance(i, s));
        }
    }

    let mut search = BranchAndBound {
        instance,
        suffix_min,
        chosen: Vec::with_capacity(k),
        best: None,
    };
    let nearest = vec![f64::INFINITY; m];
    search.descend(0, &nearest);
    let (members, cost) = search.best.expect("k <= m yields at least one subset");
    Ok(CoverageSolution {
        members,
        cost,
        swaps: 0,
    })
}

struct BranchAndBound<'a> {
    instance: &'a CoverageInstance,
    suffix_min: Vec<f64>,
    chosen: Vec<usize>,
    best: Option<(Vec<usize>, f64)>,
}

impl BranchAndBound<'_> {
    fn weighted(&self, nearest: impl Iterator<Item = f64>) -> f64 {
        self.instance
            .weights
            .iter()
            .zip(nearest)
            .map(|(w, d)| w * d)
            .fold(0.0, |acc, x| acc + x)
    }

    fn descend(&mut self, start: usize, nearest: &[f64]) {
        let m = self.instance.len();
        let k = self.instance.k;
        if self.chosen.len() == k {
            let cost = self.weighted(nearest.iter().copied());
            if self.best.as_ref().is_none_or(|(_, b)| cost < *b) {
                self.best = Some((self.chosen.clone(), cost));
            }
            return;
        }
        if let Some((_, best)) = &self.best {
            let row = &self.suffix_min[start * m..(start + 1) * m];
            let bound = self.weighted(nearest.iter().zip(row).map(|(a, b)| a.min(*b)));
            if bound >= *best {
                return;
            }
        }
        let remaining = k - self.chosen.len();
        for next in start..=(m - remaining) {
            let updated: Vec<f64> = (0..m)
                .map(|i| nearest[i].min(self.instance.distance(i, next)))
                .collect();
            self.chosen.push(next);
            self.descend(next + 1, &updated);
            self.chosen.pop();
        }
    }
}

/// Acceptance rule for local search moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SwapRule {
    /// Apply the swap with the largest improvement, scanning outgoing then
    /// incoming positions in ascending order.
    #[default]
    BestImproving,
    /// Broken rule used to check that the verification harness catches a
    /// non-local-optimum: applies the first cost-increasing swap and stops.
    #[doc(hidden)]
    FirstWorsening,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalSearchOptions {
    pub max_sweeps: usize,
    pub restarts: u32,
    pub rule: SwapRule,
}

impl Default for LocalSearchOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 10_000,
            restarts: 1,
            rule: SwapRule::BestImproving,
        }
    }
}

/// 1-swap local search for the coverage cost.
///
/// Every restart draws a uniform random size-`k` start from one ChaCha8
/// stream seeded with `seed`, so restart 0 is the same run regardless of
/// the restart count. The best result over restarts is kept, with ties
/// going to the lexicographically smaller set.
pub fn solve_local_search(instance: &CoverageInstance, seed: u64, options: LocalSearchOptions) -> CoverageSolution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<CoverageSolution> = None;
    for _ in 0..options.restarts.max(1) {
        let start = initial_subset(instance, &mut rng);
        let run = descend_from(instance, start, options);
        let better = match &best {
            None => true,
            Some(b) => run.cost < b.cost || (run.cost == b.cost && run.members < b.members),
        };
        if better {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

/// Uniform random size-`k` subset of instance positions, sorted.
pub fn initial_subset(instance: &CoverageInstance, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = instance.len();
    let mut start = if instance.k < m {
        sample(rng, m, instance.k).into_vec()
    } else {
        (0..m).collect()
    };
    start.sort_unstable();
    start
}

fn descend_from(instance: &CoverageInstance, mut current: Vec<usize>, options: LocalSearchOptions) -> CoverageSolution {
    let m = instance.len();
    let mut swaps = 0;
    for _ in 0..options.max_sweeps {
        let cost = instance.cost_unchecked(&current);
        let mut best: Option<(usize, usize, f64)> = None;
        let mut trial = current.clone();
        'scan: for slot in 0..current.len() {
            for cand in 0..m {
                if current.contains(&cand) {
                    continue;
                }
                trial[slot] = cand;
                let delta = cost - instance.cost_unchecked(&trial);
                match options.rule {
                    SwapRule::BestImproving => {
                        if delta > best.map_or(0.0, |b| b.2) {
                            best = Some((slot, cand, delta));
                        }
                    }
                    SwapRule::FirstWorsening => {
                        if delta < 0.0 {
                            best = Some((slot, cand, delta));
                            break 'scan;
                        }
                    }
                }
            }
            trial[slot] = current[slot];
        }
        match (options.rule, best) {
            (SwapRule::BestImproving, Some((slot, cand, delta))) if delta > IMPROVEMENT_EPS => {
                current[slot] = cand;
                current.sort_unstable();
                swaps += 1;
            }
            (SwapRule::FirstWorsening, Some((slot, cand, _))) => {
                current[slot] = cand;
                current.sort_unstable();
                swaps += 1;
                break;
            }
            _ => break,
        }
    }
    let cost = instance.cost_unchecked(&current);
    CoverageSolution {
        members: current,
        cost,
        swaps,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    Exact,
    #[default]
    Local,
}

impl std::str::FromStr for SolveMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "exact" => Ok(SolveMode::Exact),
            "local" => Ok(SolveMode::Local),
            other => Err(format!("unknown mode `{other}` (expected exact or local)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptSelectParams {
    pub mode: SolveMode,
    pub weight_scheme: WeightScheme,
    pub seed: u64,
    pub local: LocalSearchOptions,
    pub exact_limits: ExactLimits,
}

impl Default for OptSelectParams {
    fn default() -> Self {
        Self {
            mode: SolveMode::Local,
            weight_scheme: WeightScheme::ExpMean,
            seed: 42,
            local: LocalSearchOptions::default(),
            exact_limits: ExactLimits::default(),
        }
    }
}

/// Top-reward candidate as the positive, coverage-optimal `k` negatives
/// among the rest.
pub fn select_optselect(pool: &CandidatePool, k: usize, params: &OptSelectParams) -> Result<SelectionResult> {
    let n = pool.len();
    if k == 0 || k > n - 1 {
        return Err(Error::InvalidBudget { k, max: n - 1 });
    }
    let positive = pool.top_reward_index();
    let instance = CoverageInstance::from_pool(pool, positive, params.weight_scheme, k)?;
    let (solution, method, restarts) = match params.mode {
        SolveMode::Exact => (
            solve_exact(&instance, params.exact_limits)?,
            Method::OptSelectExact,
            None,
        ),
        SolveMode::Local => (
            solve_local_search(&instance, params.seed, params.local),
            Method::OptSelectLocal,
            Some(params.local.restarts.max(1)),
        ),
    };
    let mut negatives = instance.to_pool_indices(&solution.members);
    negatives.sort_unstable();
    Ok(SelectionResult {
        positive_index: positive,
        negative_indices: negatives,
        method,
        objective_value: Some(solution.cost),
        seed: params.seed,
        restarts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::Candidate;
    use proptest::prelude::*;
    use rand::Rng;

    fn line_instance(xs: &[f64], k: usize) -> CoverageInstance {
        let m = xs.len();
        let mut d = Vec::with_capacity(m * m);
        for &a in xs {
            for &b in xs {
                d.push((a - b).abs());
            }
        }
        CoverageInstance::new((0..m).collect(), vec![1.0; m], d, k).unwrap()
    }

    fn random_instance(rng: &mut ChaCha8Rng, m: usize, k: usize) -> CoverageInstance {
        let cands: Vec<Candidate> = (0..m + 1)
            .map(|i| {
                let e = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                Candidate::new(format!("c{i}"), rng.random_range(0.0..1.0), e)
            })
            .collect();
        let pool = CandidatePool::build("p", cands, true).unwrap();
        CoverageInstance::from_pool(&pool, pool.top_reward_index(), WeightScheme::ExpMean, k).unwrap()
    }

    /// Unpruned enumeration of every k-subset in lexicographic order.
    fn naive_exact(inst: &CoverageInstance) -> (Vec<usize>, f64) {
        fn rec(inst: &CoverageInstance, start: usize, cur: &mut Vec<usize>, best: &mut Option<(Vec<usize>, f64)>) {
            if cur.len() == inst.k() {
                let mut cost = 0.0;
                for i in 0..inst.len() {
                    let near = cur.iter().map(|&j| inst.distance(i, j)).fold(f64::INFINITY, f64::min);
                    cost += inst.weights()[i] * near;
                }
                if best.as_ref().is_none_or(|b| cost < b.1) {
                    *best = Some((cur.clone(), cost));
                }
                return;
            }
            for j in start..inst.len() {
                cur.push(j);
                rec(inst, j + 1, cur, best);
                cur.pop();
            }
        }
        let mut best = None;
        rec(inst, 0, &mut Vec::new(), &mut best);
        best.unwrap()
    }

    #[test]
    fn cost_examples() {
        let inst = line_instance(&[0.0, 1.0, 2.0], 1);
        assert_eq!(inst.coverage_cost(&[1]).unwrap(), 2.0);
        assert_eq!(inst.coverage_cost(&[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(inst.coverage_cost(&[]), Err(Error::EmptySubset));
        let doubled = inst.clone().with_weights(vec![2.0; 3]).unwrap();
        assert_eq!(
            doubled.coverage_cost(&[0]).unwrap(),
            2.0 * inst.coverage_cost(&[0]).unwrap()
        );
    }

    #[test]
    fn exact_line_example() {
        let inst = line_instance(&[0.0, 1.0, 2.0, 10.0], 1);
        let costs: Vec<f64> = (0..4).map(|j| inst.coverage_cost(&[j]).unwrap()).collect();
        assert_eq!(costs, vec![13.0, 11.0, 11.0, 27.0]);
        let sol = solve_exact(&inst, ExactLimits::default()).unwrap();
        assert_eq!(sol.members, vec![1]);
        assert_eq!(sol.cost, 11.0);
    }

    #[test]
    fn exact_full_budget_costs_zero() {
        let inst = line_instance(&[0.0, 1.0, 5.0], 3);
        let sol = solve_exact(&inst, ExactLimits::default()).unwrap();
        assert_eq!(sol.members, vec![0, 1, 2]);
        assert_eq!(sol.cost, 0.0);
        let local = solve_local_search(&inst, 3, LocalSearchOptions::default());
        assert_eq!(local.cost, 0.0);
        assert_eq!(local.swaps, 0);
    }

    #[test]
    fn exact_matches_naive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..30 {
            let inst = random_instance(&mut rng, 10, 3);
            let sol = solve_exact(&inst, ExactLimits::default()).unwrap();
            let (members, cost) = naive_exact(&inst);
            assert_eq!(sol.members, members);
            assert_eq!(sol.cost, cost);
        }
    }

    #[test]
    fn exact_cap_enforced() {
        let xs: Vec<f64> = (0..32).map(|i| i as f64).collect();
        let inst = line_instance(&xs, 3);
        assert!(matches!(
            solve_exact(&inst, ExactLimits::default()),
            Err(Error::ExactTooLarge { points: 32, .. })
        ));
        let inst = line_instance(&xs[..20], 10);
        assert!(solve_exact(&inst, ExactLimits::default()).is_ok());
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(20, 10), 184_756);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 4), 0);
    }

    #[test]
    fn two_candidates_forced() {
        let cands = vec![Candidate::new("a", 0.2, vec![0.0]), Candidate::new("b", 0.7, vec![1.0])];
        let pool = CandidatePool::build("p", cands, true).unwrap();
        for mode in [SolveMode::Exact, SolveMode::Local] {
            let params = OptSelectParams {
                mode,
                ..Default::default()
            };
            let sel = select_optselect(&pool, 1, &params).unwrap();
            assert_eq!(sel.positive_index, 1);
            assert_eq!(sel.negative_indices, vec![0]);
        }
    }

    #[test]
    fn fault_rule_is_not_swap_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inst = random_instance(&mut rng, 10, 3);
        let good = solve_local_search(&inst, 1, LocalSearchOptions::default());
        assert!(inst.is_swap_stable(&good.members));
        let broken = solve_local_search(
            &inst,
            1,
            LocalSearchOptions {
                rule: SwapRule::FirstWorsening,
                ..Default::default()
            },
        );
        assert!(!inst.is_swap_stable(&broken.members));
    }

    proptest! {
        #[test]
        fn local_search_properties(seed in 0u64..5000, m in 4usize..12, k_raw in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = k_raw.min(m);
            let inst = random_instance(&mut rng, m, k);
            let sol = solve_local_search(&inst, seed, LocalSearchOptions::default());
            let mut start_rng = ChaCha8Rng::seed_from_u64(seed);
            let start = initial_subset(&inst, &mut start_rng);
            prop_assert!(sol.cost <= inst.coverage_cost(&start).unwrap());
            prop_assert!(inst.is_swap_stable(&sol.members));
            prop_assert_eq!(sol.members.len(), k);

            let exact = solve_exact(&inst, ExactLimits::default()).unwrap();
            prop_assert!(exact.cost <= sol.cost);
            prop_assert!(sol.cost <= 5.0 * exact.cost);
        }

        #[test]
        fn cost_monotone_under_growth(seed in 0u64..5000, m in 3usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = random_instance(&mut rng, m, 1);
            let mut members = vec![rng.random_range(0..m)];
            let mut prev = inst.coverage_cost(&members).unwrap();
            for j in 0..m {
                if members.contains(&j) { continue; }
                members.push(j);
                let c = inst.coverage_cost(&members).unwrap();
                prop_assert!(c <= prev);
                prev = c;
            }
            prop_assert_eq!(prev, 0.0);
        }

        #[test]
        fn exact_invariant_under_relabeling(seed in 0u64..5000, m in 4usize..10, rot in 1usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = random_instance(&mut rng, m, 2);
            let perm: Vec<usize> = (0..m).map(|i| (i + rot) % m).collect();
            let mut d = Vec::with_capacity(m * m);
            for &a in &perm {
                for &b in &perm {
                    d.push(inst.distance(a, b));
                }
            }
            let w: Vec<f64> = perm.iter().map(|&p| inst.weights()[p]).collect();
            let relabeled = CoverageInstance::new((0..m).collect(), w, d, 2).unwrap();
            let a = solve_exact(&inst, ExactLimits::default()).unwrap();
            let b = solve_exact(&relabeled, ExactLimits::default()).unwrap();
            let mut mapped: Vec<usize> = b.members.iter().map(|&p| perm[p]).collect();
            mapped.sort_unstable();
            prop_assert!((a.cost - b.cost).abs() <= 1e-12 * a.cost.max(1.0));
            if (a.cost - b.cost).abs() == 0.0 {
                prop_assert_eq!(mapped, a.members);
            }
        }
    }
}
