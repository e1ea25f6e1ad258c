//! Toy on-policy loop: a categorical softmax policy over a fixed pool,
//! trained with the contrastive loss on one positive against `k` actively
//! selected negatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{CandidatePool, Method, SelectionResult};
use crate::refa::{refa_loss_grad, softmax, RefaConfig};
use crate::selection::{select, SelectParams};
use crate::weighting::WeightScheme;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub logits: Vec<f64>,
    pub step: usize,
}

impl PolicyState {
    /// Logits from the candidates' log-probabilities when every candidate
    /// has one, zeros otherwise.
    pub fn from_pool(pool: &CandidatePool) -> Self {
        let logits = pool
            .candidates()
            .iter()
            .map(|c| c.logprob)
            .collect::<Option<Vec<f64>>>()
            .unwrap_or_else(|| vec![0.0; pool.len()]);
        Self { logits, step: 0 }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub method: Method,
    pub k: usize,
    pub alpha: f64,
    pub inverse_temperature: f64,
    pub learning_rate: f64,
    pub steps: usize,
    /// Re-run selection every this many steps; 0 never re-selects.
    pub reselect_every: usize,
    pub seed: u64,
    pub weight_scheme: WeightScheme,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            method: Method::OptSelectLocal,
            k: 5,
            alpha: 1.0,
            inverse_temperature: 1.0,
            learning_rate: 0.1,
            steps: 500,
            reselect_every: 0,
            seed: 42,
            weight_scheme: WeightScheme::ExpMean,
        }
    }
}

impl SimConfig {
    pub fn refa(&self) -> RefaConfig {
        RefaConfig {
            alpha: self.alpha,
            inverse_temperature: self.inverse_temperature,
        }
    }

    fn select_params(&self, round: u64) -> SelectParams {
        SelectParams {
            k: self.k,
            seed: self.seed.wrapping_add(round),
            weight_scheme: self.weight_scheme,
            ..SelectParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.refa().validate()?;
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub expected_reward: f64,
    pub positive_mass: f64,
    pub negative_mass: f64,
    pub positive_index: usize,
    pub negative_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub final_state: PolicyState,
}

/// Runs `steps` gradient steps and records the state before each step and
/// after the last one, so the trajectory has `steps + 1` records.
pub fn run_simulation(pool: &CandidatePool, config: &SimConfig) -> Result<Trajectory> {
    config.validate()?;
    let refa = config.refa();
    let rewards = pool.rewards();
    let mut state = PolicyState::from_pool(pool);
    let mut round = 0u64;
    let mut selection: SelectionResult = select(pool, config.method, &config.select_params(round))?;
    let mut records = Vec::with_capacity(config.steps + 1);

    for step in 0..=config.steps {
        if step > 0 && config.reselect_every > 0 && step % config.reselect_every == 0 {
            round += 1;
            selection = select(pool, config.method, &config.select_params(round))?;
        }
        let positives = [selection.positive_index];
        let (loss, grad) = refa_loss_grad(&state.logits, &rewards, &positives, &selection.negative_indices, &refa)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step });
        }
        let probs = state.probabilities();
        records.push(StepRecord {
            step,
            loss,
            expected_reward: probs.iter().zip(&rewards).map(|(p, r)| p * r).sum(),
            positive_mass: probs[selection.positive_index],
            negative_mass: selection.negative_indices.iter().map(|&j| probs[j]).sum(),
            positive_index: selection.positive_index,
            negative_indices: selection.negative_indices.clone(),
        });
        if step < config.steps {
            for (z, g) in state.logits.iter_mut().zip(&grad) {
                *z -= config.learning_rate * g;
            }
            state.step += 1;
        }
    }
    Ok(Trajectory {
        records,
        final_state: state,
    })
}
