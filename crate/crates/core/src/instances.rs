//! Seeded synthetic pools for the verification harness, simulator and
//! benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pool::{Candidate, CandidatePool};
use crate::refa::log_softmax;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` candidates with rewards uniform in `[0, 1)`, embeddings uniform in
/// `[-1, 1)^dim` and log-probabilities from random logits. Distances are
/// normalized.
pub fn random_pool(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> CandidatePool {
    let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let logprobs = log_softmax(&logits);
    let candidates = (0..n)
        .map(|i| {
            let reward = rng.random_range(0.0..1.0);
            let embedding = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            Candidate::new(format!("r{i}"), reward, embedding).with_logprob(logprobs[i])
        })
        .collect();
    CandidatePool::build("synthetic", candidates, true).expect("valid synthetic pool")
}

/// A pool with `clusters` tight groups far apart from each other, plus the
/// planted group of every candidate.
pub fn planted_clusters(
    rng: &mut ChaCha8Rng,
    clusters: usize,
    per_cluster: usize,
    dim: usize,
    spread: f64,
) -> (CandidatePool, Vec<usize>) {
    let mut candidates = Vec::with_capacity(clusters * per_cluster);
    let mut labels = Vec::with_capacity(clusters * per_cluster);
    for c in 0..clusters {
        let center: Vec<f64> = (0..dim)
            .map(|d| if d == c % dim { 10.0 * (1 + c / dim) as f64 } else { 0.0 })
            .collect();
        for _ in 0..per_cluster {
            let embedding = center.iter().map(|x| x + rng.random_range(-spread..spread)).collect();
            let id = format!("g{c}-{}", candidates.len());
            candidates.push(Candidate::new(id, rng.random_range(0.0..1.0), embedding));
            labels.push(c);
        }
    }
    let pool = CandidatePool::build("planted", candidates, true).expect("valid planted pool");
    (pool, labels)
}

pub const STANDARD_SEED: u64 = 7;
pub const STANDARD_N: usize = 16;
pub const STANDARD_DIM: usize = 8;

/// The fixed 16-candidate pool the simulator checks run on.
pub fn standard_instance() -> CandidatePool {
    random_pool(&mut rng(STANDARD_SEED), STANDARD_N, STANDARD_DIM)
}
