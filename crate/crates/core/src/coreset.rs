//! Coverage-driven negative selection: k-means over the embeddings, then the
//! lowest-reward member of every cluster.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pool::{CandidatePool, Method, SelectionResult};

pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster of every input point, each in `0..k`.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations_run: usize,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    /// Inertia after every centroid update, in order.
    pub inertia_history: Vec<f64>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Member indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (i, &c) in self.assignments.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// Iteration stops when assignments no longer change or after `max_iters`
/// rounds. A cluster that comes up empty takes the point farthest from its
/// current centroid (among clusters with more than one member, smallest
/// index on ties) as a singleton.
pub fn kmeans<P: AsRef<[f64]>>(points: &[P], k: usize, seed: u64, max_iters: usize) -> Result<Clustering> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidBudget { k, max: n });
    }
    if max_iters == 0 {
        return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
    }
    let pts: Vec<&[f64]> = points.iter().map(|p| p.as_ref()).collect();

    let mut centroids = seed_plus_plus(&pts, k, seed);
    let mut assignments = assign(&pts, &centroids);
    repair_empty(&pts, &mut assignments, &mut centroids);
    update_centroids(&pts, &assignments, &mut centroids);
    let mut history = vec![inertia(&pts, &assignments, &centroids)];
    let mut iterations = 1;

    while iterations < max_iters {
        let mut next = assign(&pts, &centroids);
        repair_empty(&pts, &mut next, &mut centroids);
        if next == assignments {
            break;
        }
        assignments = next;
        update_centroids(&pts, &assignments, &mut centroids);
        history.push(inertia(&pts, &assignments, &centroids));
        iterations += 1;
    }

    Ok(Clustering {
        inertia: *history.last().expect("at least one round"),
        assignments,
        centroids,
        iterations_run: iterations,
        inertia_history: history,
    })
}

fn seed_plus_plus(pts: &[&[f64]], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = pts.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = pts.iter().map(|p| sq_dist(p, pts[chosen[0]])).collect();

    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in nearest.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a positive entry")
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, p) in pts.iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(p, pts[next]));
        }
    }
    chosen.iter().map(|&i| pts[i].to_vec()).collect()
}

fn assign(pts: &[&[f64]], centroids: &[Vec<f64>]) -> Vec<usize> {
    pts.iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn repair_empty(pts: &[&[f64]], assignments: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &c in assignments.iter() {
        sizes[c] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            let c = assignments[i];
            if sizes[c] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[c]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let i = far.expect("k <= n leaves a cluster with two or more members");
        sizes[assignments[i]] -= 1;
        assignments[i] = empty;
        sizes[empty] = 1;
        centroids[empty] = pts[i].to_vec();
    }
}

fn update_centroids(pts: &[&[f64]], assignments: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = pts[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &c) in pts.iter().zip(assignments) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    for ((centroid, sum), count) in centroids.iter_mut().zip(sums).zip(counts) {
        if count > 0 {
            *centroid = sum.into_iter().map(|s| s / count as f64).collect();
        }
    }
}

fn inertia(pts: &[&[f64]], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    pts.iter()
        .zip(assignments)
        .map(|(p, &c)| sq_dist(p, &centroids[c]))
        .sum()
}

/// Clusters the candidates other than `exclude` into `k` groups and returns
/// the lowest-reward member of each (smaller index on ties).
pub fn select_coreset(pool: &CandidatePool, k: usize, exclude: usize, seed: u64) -> Result<SelectionResult> {
    select_coreset_with(pool, k, exclude, seed, DEFAULT_MAX_ITERS)
}

pub fn select_coreset_with(
    pool: &CandidatePool,
    k: usize,
    exclude: usize,
    seed: u64,
    max_iters: usize,
) -> Result<SelectionResult> {
    pool.check_index(exclude)?;
    let n = pool.len();
    if k == 0 || k > n - 1 {
        return Err(Error::InvalidBudget { k, max: n - 1 });
    }
    let eligible: Vec<usize> = (0..n).filter(|&i| i != exclude).collect();
    let points: Vec<&[f64]> = eligible
        .iter()
        .map(|&i| pool.candidate(i).embedding.as_slice())
        .collect();
    let clustering = kmeans(&points, k, seed, max_iters)?;

    let mut negatives: Vec<usize> = clustering
        .members()
        .iter()
        .map(|members| {
            members
                .iter()
                .map(|&m| eligible[m])
                .min_by(|&a, &b| {
                    pool.candidate(a)
                        .reward
                        .total_cmp(&pool.candidate(b).reward)
                        .then(a.cmp(&b))
                })
                .expect("clusters are non-empty after repair")
        })
        .collect();
    negatives.sort_unstable();

    Ok(SelectionResult {
        positive_index: exclude,
        negative_indices: negatives,
        method: Method::Coreset,
        objective_value: None,
        seed,
        restarts: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::Candidate;
    use proptest::prelude::*;

    fn pool_from(rewards: &[f64], emb: &[Vec<f64>]) -> CandidatePool {
        let cands = rewards
            .iter()
            .zip(emb)
            .enumerate()
            .map(|(i, (&r, e))| Candidate::new(format!("c{i}"), r, e.clone()))
            .collect();
        CandidatePool::build("p", cands, true).unwrap()
    }

    #[test]
    fn k_equals_n_is_singletons() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 5.0], vec![2.0, 9.0]];
        let c = kmeans(&pts, 4, 3, 100).unwrap();
        assert_eq!(c.inertia, 0.0);
        let mut sorted = c.assignments.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn k_one_is_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![4.0, 6.0]];
        let c = kmeans(&pts, 1, 11, 100).unwrap();
        assert_eq!(c.centroids[0], vec![2.0, 2.0]);
        assert_eq!(c.assignments, vec![0, 0, 0]);
    }

    /// Minimum-inertia 2-partition by exhaustive enumeration.
    fn best_two_partition(pts: &[Vec<f64>]) -> Vec<bool> {
        let n = pts.len();
        let cost = |mask: u32| {
            let mut total = 0.0;
            for side in [true, false] {
                let members: Vec<&Vec<f64>> = (0..n)
                    .filter(|&i| ((mask >> i) & 1 == 1) == side)
                    .map(|i| &pts[i])
                    .collect();
                let d = pts[0].len();
                let mean: Vec<f64> = (0..d)
                    .map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64)
                    .collect();
                total += members.iter().map(|p| sq_dist(p, &mean)).sum::<f64>();
            }
            total
        };
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1..(1u32 << n) - 1 {
            let c = cost(mask);
            if c < best.0 {
                best = (c, mask);
            }
        }
        (0..n).map(|i| (best.1 >> i) & 1 == 1).collect()
    }

    #[test]
    fn separated_groups_match_exhaustive_partition() {
        let pts = vec![
            vec![0.0, 0.1],
            vec![0.2, -0.1],
            vec![-0.1, 0.0],
            vec![0.1, 0.2],
            vec![10.0, 10.1],
            vec![10.2, 9.9],
            vec![9.9, 10.0],
            vec![10.1, 10.2],
            vec![10.0, 9.8],
        ];
        let oracle = best_two_partition(&pts);
        for seed in 0..10 {
            let c = kmeans(&pts, 2, seed, 100).unwrap();
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    assert_eq!(c.assignments[i] == c.assignments[j], oracle[i] == oracle[j]);
                }
            }
        }
    }

    #[test]
    fn coreset_two_clusters() {
        let emb = vec![
            vec![5.0, 5.0],
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![10.0, 0.0],
            vec![10.1, 0.0],
        ];
        let p = pool_from(&[1.0, 0.9, 0.1, 0.8, 0.2], &emb);
        let sel = select_coreset(&p, 2, 0, 5).unwrap();
        assert_eq!(sel.negative_indices, vec![2, 4]);
        assert_eq!(sel.positive_index, 0);
    }

    #[test]
    fn coreset_full_complement() {
        let emb: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 1.5, (i * i) as f64]).collect();
        let p = pool_from(&[0.3, 0.9, 0.1, 0.8, 0.2], &emb);
        let sel = select_coreset(&p, 4, 1, 0).unwrap();
        assert_eq!(sel.negative_indices, vec![0, 2, 3, 4]);
    }

    #[test]
    fn identical_embeddings_use_repair() {
        let emb = vec![vec![1.0, 1.0]; 6];
        let rewards = [1.0, 0.6, 0.05, 0.7, 0.4, 0.3];
        let p = pool_from(&rewards, &emb);
        for seed in 0..5 {
            let sel = select_coreset(&p, 2, 0, seed).unwrap();
            assert_eq!(sel.negative_indices.len(), 2);
            assert!(sel.negative_indices.contains(&2));
        }
        let c = kmeans(&emb, 3, 0, 100).unwrap();
        assert!(c.members().iter().all(|m| !m.is_empty()));
    }

    #[test]
    fn invalid_budget() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(kmeans(&pts, 3, 0, 10).is_err());
        assert!(kmeans(&pts, 0, 0, 10).is_err());
    }

    proptest! {
        #[test]
        fn lloyd_invariants(
            pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 3..20),
            rewards in prop::collection::vec(0.0f64..1.0, 20),
            k_raw in 1usize..6,
            seed in 0u64..1000,
        ) {
            let n = pts.len();
            let k = k_raw.min(n);
            let c = kmeans(&pts, k, seed, 100).unwrap();
            prop_assert!(c.members().iter().all(|m| !m.is_empty()));
            for w in c.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
            }
            prop_assert_eq!(&c, &kmeans(&pts, k, seed, 100).unwrap());

            let p = pool_from(&rewards[..n], &pts);
            let exclude = p.top_reward_index();
            let kk = k.min(n - 1);
            let sel = select_coreset(&p, kk, exclude, seed).unwrap();
            prop_assert_eq!(sel.negative_indices.len(), kk);
            let eligible: Vec<usize> = (0..n).filter(|&i| i != exclude).collect();
            let sub: Vec<&[f64]> = eligible.iter().map(|&i| pts[i].as_slice()).collect();
            let clustering = kmeans(&sub, kk, seed, 100).unwrap();
            for members in clustering.members() {
                let picked: Vec<usize> = members.iter().map(|&m| eligible[m]).filter(|i| sel.negative_indices.contains(i)).collect();
                prop_assert_eq!(picked.len(), 1);
                for &m in &members {
                    prop_assert!(rewards[picked[0]] <= rewards[eligible[m]]);
                }
            }
        }
    }
}
