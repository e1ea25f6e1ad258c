//! One entry point over every selector: the top-reward candidate is the
//! positive and the chosen method picks `k` negatives from the rest.

use serde::{Deserialize, Serialize};

use crate::bottomk::select_bottom_k;
use crate::coreset::{select_coreset_with, DEFAULT_MAX_ITERS};
use crate::error::Result;
use crate::optselect::{select_optselect, ExactLimits, LocalSearchOptions, OptSelectParams, SolveMode};
use crate::pool::{CandidatePool, Method, SelectionResult};
use crate::weighting::WeightScheme;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectParams {
    pub k: usize,
    pub seed: u64,
    pub weight_scheme: WeightScheme,
    pub restarts: u32,
    pub max_sweeps: usize,
    pub exact_max_points: usize,
    pub kmeans_max_iters: usize,
}

impl Default for SelectParams {
    fn default() -> Self {
        let local = LocalSearchOptions::default();
        Self {
            k: 4,
            seed: 42,
            weight_scheme: WeightScheme::ExpMean,
            restarts: local.restarts,
            max_sweeps: local.max_sweeps,
            exact_max_points: ExactLimits::default().max_points,
            kmeans_max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

impl SelectParams {
    pub fn optselect(&self, mode: SolveMode) -> OptSelectParams {
        OptSelectParams {
            mode,
            weight_scheme: self.weight_scheme,
            seed: self.seed,
            local: LocalSearchOptions {
                max_sweeps: self.max_sweeps,
                restarts: self.restarts,
                ..LocalSearchOptions::default()
            },
            exact_limits: ExactLimits {
                max_points: self.exact_max_points,
                ..ExactLimits::default()
            },
        }
    }
}

pub fn select(pool: &CandidatePool, method: Method, params: &SelectParams) -> Result<SelectionResult> {
    let positive = pool.top_reward_index();
    match method {
        Method::BottomK => select_bottom_k(pool, params.k, positive),
        Method::Coreset => select_coreset_with(pool, params.k, positive, params.seed, params.kmeans_max_iters),
        Method::OptSelectExact => select_optselect(pool, params.k, &params.optselect(SolveMode::Exact)),
        Method::OptSelectLocal => select_optselect(pool, params.k, &params.optselect(SolveMode::Local)),
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "bottomk" | "bottom-k" => Ok(Method::BottomK),
            "coreset" => Ok(Method::Coreset),
            "optselect-exact" | "opt-select-exact" => Ok(Method::OptSelectExact),
            "optselect-local" | "opt-select-local" => Ok(Method::OptSelectLocal),
            other => Err(format!("unknown selection method `{other}`")),
        }
    }
}
