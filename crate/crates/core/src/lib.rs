//! Active negative selection for group-contrastive preference learning.
//!
//! A pool of scored, embedded responses for one prompt goes in. The
//! highest-reward response is the positive and a selector picks `k`
//! negatives: the lowest-reward ones ([`bottomk`]), one per k-means cluster
//! ([`coreset`]) or the minimizers of a reward-weighted coverage cost
//! ([`optselect`]). The contrastive loss and its gradient live in [`refa`].

pub mod bottomk;
pub mod coreset;
pub mod error;
pub mod instances;
pub mod lipschitz;
pub mod optselect;
pub mod pipeline;
pub mod pool;
pub mod refa;
pub mod selection;
pub mod sim;
pub mod verify;
pub mod weighting;

pub use error::{Error, Result};
pub use optselect::{CoverageInstance, CoverageSolution, OptSelectParams, SolveMode};
pub use pipeline::{PoolRecord, PreferenceRecord};
pub use pool::{Candidate, CandidatePool, Method, PoolOptions, RewardScaling, SelectionResult};
pub use refa::RefaConfig;
pub use selection::{select, SelectParams};
pub use sim::{run_simulation, SimConfig};
pub use verify::{verify_suite, Check, SuiteParams, SuiteReport};
pub use weighting::WeightScheme;
