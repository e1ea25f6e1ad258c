//! Bottom-K negative selection.

use crate::error::{Error, Result};
use crate::pool::{CandidatePool, Method, SelectionResult};

/// Picks the `k` lowest-reward candidates other than `exclude`.
///
/// Rewards are compared exactly. When several candidates tie at the
/// selection boundary, they are admitted one at a time, each time taking
/// the tied candidate whose largest cosine similarity to the already
/// selected negatives is smallest. With nothing selected yet, or on equal
/// similarity, the smaller index wins.
pub fn select_bottom_k(pool: &CandidatePool, k: usize, exclude: usize) -> Result<SelectionResult> {
    pool.check_index(exclude)?;
    let n = pool.len();
    if k == 0 || k > n - 1 {
        return Err(Error::InvalidBudget { k, max: n - 1 });
    }

    let mut eligible: Vec<usize> = (0..n).filter(|&i| i != exclude).collect();
    let reward = |i: usize| pool.candidate(i).reward;
    eligible.sort_by(|&a, &b| reward(a).total_cmp(&reward(b)).then(a.cmp(&b)));

    let boundary = reward(eligible[k - 1]);
    let mut selected: Vec<usize> = eligible.iter().copied().filter(|&i| reward(i) < boundary).collect();
    let mut tied: Vec<usize> = eligible.iter().copied().filter(|&i| reward(i) == boundary).collect();
    tied.sort_unstable();

    let need = k - selected.len();
    if need == tied.len() {
        selected.extend(tied);
    } else {
        for _ in 0..need {
            let pick = if selected.is_empty() {
                0
            } else {
                let mut best = 0;
                let mut best_sim = f64::INFINITY;
                for (pos, &cand) in tied.iter().enumerate() {
                    let sim = selected
                        .iter()
                        .map(|&s| pool.cosine_similarity(cand, s).expect("indices in range"))
                        .fold(f64::NEG_INFINITY, f64::max);
                    if sim < best_sim {
                        best_sim = sim;
                        best = pos;
                    }
                }
                best
            };
            selected.push(tied.remove(pick));
        }
    }
    selected.sort_unstable();

    Ok(SelectionResult {
        positive_index: exclude,
        negative_indices: selected,
        method: Method::BottomK,
        objective_value: None,
        seed: 0,
        restarts: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{cosine, Candidate};
    use proptest::prelude::*;

    fn pool(rewards: &[f64], embeddings: &[Vec<f64>]) -> CandidatePool {
        let cands = rewards
            .iter()
            .zip(embeddings)
            .enumerate()
            .map(|(i, (&r, e))| Candidate::new(format!("c{i}"), r, e.clone()))
            .collect();
        CandidatePool::build("p", cands, true).unwrap()
    }

    fn axis_embeddings(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64, 1.0]).collect()
    }

    #[test]
    fn two_smallest() {
        let p = pool(&[0.9, 0.1, 0.5, 0.3], &axis_embeddings(4));
        let sel = select_bottom_k(&p, 2, 0).unwrap();
        assert_eq!(sel.negative_indices, vec![1, 3]);
        assert_eq!(sel.positive_index, 0);
    }

    #[test]
    fn full_complement() {
        let p = pool(&[0.9, 0.1, 0.5, 0.3], &axis_embeddings(4));
        let sel = select_bottom_k(&p, 3, 2).unwrap();
        assert_eq!(sel.negative_indices, vec![0, 1, 3]);
    }

    #[test]
    fn tie_with_empty_selected_set_falls_back_to_index() {
        // candidate 2 is the most dissimilar direction, but nothing is selected yet
        let emb = vec![vec![1.0, 0.0], vec![1.0, 0.1], vec![-1.0, 0.0], vec![0.9, 0.2]];
        let p = pool(&[0.9, 0.2, 0.2, 0.2], &emb);
        let sel = select_bottom_k(&p, 1, 0).unwrap();
        assert_eq!(sel.negative_indices, vec![1]);
    }

    #[test]
    fn tie_broken_by_min_max_cosine() {
        // candidate 1 is selected outright; among tied {2, 3, 4}, 3 is the
        // least similar to it, then 4 is least similar to {1, 3}.
        let emb = vec![
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 0.05],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ];
        let p = pool(&[0.9, 0.1, 0.4, 0.4, 0.4], &emb);
        let sel = select_bottom_k(&p, 2, 0).unwrap();
        assert_eq!(sel.negative_indices, vec![1, 3]);
        let sel = select_bottom_k(&p, 3, 0).unwrap();
        assert_eq!(sel.negative_indices, vec![1, 3, 4]);
    }

    #[test]
    fn budget_out_of_range() {
        let p = pool(&[0.9, 0.1, 0.5], &axis_embeddings(3));
        assert!(matches!(select_bottom_k(&p, 0, 0), Err(Error::InvalidBudget { .. })));
        assert!(matches!(select_bottom_k(&p, 3, 0), Err(Error::InvalidBudget { .. })));
        assert!(matches!(select_bottom_k(&p, 1, 7), Err(Error::IndexOutOfRange { .. })));
    }

    /// Straight transcription of the tie-break rule used as an oracle.
    fn reference(rewards: &[f64], emb: &[Vec<f64>], k: usize, exclude: usize) -> Vec<usize> {
        let mut chosen: Vec<usize> = Vec::new();
        let mut remaining: Vec<usize> = (0..rewards.len()).filter(|&i| i != exclude).collect();
        while chosen.len() < k {
            let min_r = remaining.iter().map(|&i| rewards[i]).fold(f64::INFINITY, f64::min);
            let ties: Vec<usize> = remaining.iter().copied().filter(|&i| rewards[i] == min_r).collect();
            let slots = k - chosen.len();
            if ties.len() <= slots {
                chosen.extend(&ties);
                remaining.retain(|i| !ties.contains(i));
                continue;
            }
            let pick = if chosen.is_empty() {
                ties[0]
            } else {
                let score = |c: usize| {
                    chosen
                        .iter()
                        .map(|&s| cosine(&emb[c], &emb[s]))
                        .fold(f64::NEG_INFINITY, f64::max)
                };
                let mut best = ties[0];
                for &t in &ties[1..] {
                    if score(t) < score(best) {
                        best = t;
                    }
                }
                best
            };
            chosen.push(pick);
            remaining.retain(|&i| i != pick);
        }
        chosen.sort_unstable();
        chosen
    }

    proptest! {
        #[test]
        fn matches_reference_and_bounds(
            levels in prop::collection::vec(0u8..4, 3..12),
            emb_seed in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 12),
            k_frac in 0.0f64..1.0,
        ) {
            let n = levels.len();
            let rewards: Vec<f64> = levels.iter().map(|&l| l as f64 / 4.0).collect();
            let emb: Vec<Vec<f64>> = emb_seed[..n].to_vec();
            let p = pool(&rewards, &emb);
            let exclude = p.top_reward_index();
            let k = 1 + ((n - 2) as f64 * k_frac) as usize;
            let sel = select_bottom_k(&p, k, exclude).unwrap();
            prop_assert_eq!(&sel.negative_indices, &reference(&rewards, &emb, k, exclude));
            prop_assert_eq!(sel.negative_indices.len(), k);
            prop_assert!(!sel.negative_indices.contains(&exclude));
            let max_sel = sel.negative_indices.iter().map(|&i| rewards[i]).fold(f64::NEG_INFINITY, f64::max);
            for i in (0..n).filter(|i| *i != exclude && !sel.negative_indices.contains(i)) {
                prop_assert!(max_sel <= rewards[i]);
            }
        }
    }
}
