//! Line-delimited JSON ingestion and export, plus batch selection across
//! prompts.
//!
//! Input is one [`PoolRecord`] per line. Output is one [`PreferenceRecord`]
//! per input pool, in input order, whatever the worker count.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{Candidate, CandidatePool, Method, PoolOptions};
use crate::selection::{select, SelectParams};

/// Environment variable holding the batch worker count.
pub const WORKERS_ENV: &str = "ACTIVEPREF_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub id: String,
    pub reward: f64,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub prompt_id: String,
    pub responses: Vec<ResponseRecord>,
}

impl PoolRecord {
    pub fn into_pool(self, options: PoolOptions) -> Result<CandidatePool> {
        let candidates = self
            .responses
            .into_iter()
            .map(|r| Candidate {
                id: r.id,
                reward: r.reward,
                embedding: r.embedding,
                logprob: r.logprob,
            })
            .collect();
        CandidatePool::build_with(self.prompt_id, candidates, options)
    }

    pub fn from_pool(pool: &CandidatePool) -> Self {
        Self {
            prompt_id: pool.prompt_id().to_string(),
            responses: pool
                .candidates()
                .iter()
                .map(|c| ResponseRecord {
                    id: c.id.clone(),
                    reward: c.reward,
                    embedding: c.embedding.clone(),
                    logprob: c.logprob,
                    text: None,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub prompt_id: String,
    pub positive_id: String,
    pub negative_ids: Vec<String>,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_value: Option<f64>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<u32>,
}

impl PreferenceRecord {
    pub fn from_selection(pool: &CandidatePool, sel: &crate::pool::SelectionResult) -> Self {
        Self {
            prompt_id: pool.prompt_id().to_string(),
            positive_id: pool.candidate(sel.positive_index).id.clone(),
            negative_ids: sel
                .negative_indices
                .iter()
                .map(|&j| pool.candidate(j).id.clone())
                .collect(),
            method: sel.method,
            objective_value: sel.objective_value,
            seed: sel.seed,
            restarts: sel.restarts,
        }
    }

    /// Resolves the ids back to pool indices.
    pub fn indices_in(&self, pool: &CandidatePool) -> Result<(usize, Vec<usize>)> {
        let find = |id: &str| {
            pool.candidates()
                .iter()
                .position(|c| c.id == id)
                .ok_or_else(|| Error::InvalidParameter(format!("prompt `{}` has no response `{id}`", self.prompt_id)))
        };
        let positive = find(&self.positive_id)?;
        let negatives = self
            .negative_ids
            .iter()
            .map(|id| find(id))
            .collect::<Result<Vec<_>>>()?;
        if negatives.contains(&positive) {
            return Err(Error::OverlappingSets(positive));
        }
        Ok((positive, negatives))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IngestMode {
    /// Abort on the first malformed line.
    Strict,
    /// Skip malformed lines and report them.
    #[default]
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub pools: Vec<CandidatePool>,
    pub rejected: Vec<LineError>,
}

/// Reads one pool per non-blank line. Line numbers are 1-based.
pub fn ingest<R: BufRead>(reader: R, mode: IngestMode, options: PoolOptions) -> Result<Ingested> {
    let mut pools = Vec::new();
    let mut rejected = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<PoolRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|rec| rec.into_pool(options).map_err(|e| e.to_string()));
        match parsed {
            Ok(pool) => pools.push(pool),
            Err(message) => {
                if mode == IngestMode::Strict {
                    return Err(Error::Record { line: line_no, message });
                }
                rejected.push(LineError { line: line_no, message });
            }
        }
    }
    if pools.is_empty() {
        return Err(Error::NoValidRecords);
    }
    Ok(Ingested { pools, rejected })
}

pub fn ingest_path(path: &std::path::Path, mode: IngestMode, options: PoolOptions) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ingest(std::io::BufReader::new(file), mode, options)
}

/// Writes each item as one JSON line.
pub fn write_jsonl<W: Write, T: Serialize>(mut writer: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item).map_err(|e| Error::Io(e.to_string()))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn export_pools<W: Write>(writer: W, pools: &[CandidatePool]) -> Result<()> {
    let records: Vec<PoolRecord> = pools.iter().map(PoolRecord::from_pool).collect();
    write_jsonl(writer, &records)
}

pub fn read_preferences<R: BufRead>(reader: R) -> Result<Vec<PreferenceRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Record {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Worker count from [`WORKERS_ENV`], else the number of logical cores.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolFailure {
    pub prompt_id: String,
    pub error: Error,
}

/// Selects for every pool independently on `workers` threads. The output
/// has one entry per pool, in input order.
pub fn select_batch(
    pools: &[CandidatePool],
    method: Method,
    params: &SelectParams,
    workers: usize,
) -> Vec<std::result::Result<PreferenceRecord, PoolFailure>> {
    let run = |pool: &CandidatePool| {
        select(pool, method, params)
            .map(|sel| PreferenceRecord::from_selection(pool, &sel))
            .map_err(|error| PoolFailure {
                prompt_id: pool.prompt_id().to_string(),
                error,
            })
    };
    if workers <= 1 {
        return pools.iter().map(run).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(threads) => threads.install(|| pools.par_iter().map(run).collect()),
        Err(_) => pools.iter().map(run).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{random_pool, rng};
    use proptest::prelude::*;

    fn jsonl(lines: &[&str]) -> std::io::Cursor<Vec<u8>> {
        std::io::Cursor::new(lines.join("\n").into_bytes())
    }

    #[test]
    fn empty_input_is_fatal() {
        let err = ingest(jsonl(&[]), IngestMode::Lenient, PoolOptions::default()).unwrap_err();
        assert_eq!(err, Error::NoValidRecords);
    }

    #[test]
    fn mismatched_dims_reported_with_line() {
        let good = r#"{"prompt_id":"a","responses":[{"id":"x","reward":0.1,"embedding":[0,1]},{"id":"y","reward":0.9,"embedding":[1,1]}]}"#;
        let bad = r#"{"prompt_id":"b","responses":[{"id":"x","reward":0.1,"embedding":[0,1]},{"id":"y","reward":0.9,"embedding":[1]}]}"#;
        let out = ingest(
            jsonl(&[good, bad, "", "not json"]),
            IngestMode::Lenient,
            PoolOptions::default(),
        )
        .unwrap();
        assert_eq!(out.pools.len(), 1);
        assert_eq!(out.rejected.len(), 2);
        assert_eq!(out.rejected[0].line, 2);
        assert!(out.rejected[0].message.contains("`y`"));
        assert_eq!(out.rejected[1].line, 4);

        let err = ingest(jsonl(&[good, bad]), IngestMode::Strict, PoolOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Record { line: 2, .. }));
    }

    #[test]
    fn out_of_range_rewards_normalized_on_ingest() {
        let rec = r#"{"prompt_id":"a","responses":[{"id":"x","reward":2,"embedding":[0]},{"id":"y","reward":-2,"embedding":[1]},{"id":"z","reward":0,"embedding":[3]}]}"#;
        let out = ingest(jsonl(&[rec]), IngestMode::Strict, PoolOptions::default()).unwrap();
        assert_eq!(out.pools[0].rewards(), vec![1.0, 0.0, 0.5]);
    }

    #[test]
    fn batch_preserves_order_and_collects_failures() {
        let mut r = rng(3);
        let mut pools: Vec<CandidatePool> = (0..3).map(|_| random_pool(&mut r, 8, 3)).collect();
        pools.push(random_pool(&mut r, 33, 3));
        let params = SelectParams {
            k: 3,
            ..Default::default()
        };
        let out = select_batch(&pools[..3], Method::BottomK, &params, 4);
        assert_eq!(out.len(), 3);
        for (pool, rec) in pools.iter().zip(&out) {
            assert_eq!(rec.as_ref().unwrap().prompt_id, pool.prompt_id());
        }
        let out = select_batch(&pools, Method::OptSelectExact, &params, 4);
        assert!(out[..3].iter().all(|r| r.is_ok()));
        assert!(matches!(
            out[3],
            Err(PoolFailure {
                error: Error::ExactTooLarge { points: 32, .. },
                ..
            })
        ));
    }

    #[test]
    fn parallel_equals_sequential() {
        let mut r = rng(11);
        let pools: Vec<CandidatePool> = (0..12).map(|_| random_pool(&mut r, 10, 4)).collect();
        let params = SelectParams {
            k: 3,
            ..Default::default()
        };
        for method in [Method::Coreset, Method::OptSelectLocal] {
            assert_eq!(
                select_batch(&pools, method, &params, 1),
                select_batch(&pools, method, &params, 6)
            );
        }
    }

    proptest! {
        #[test]
        fn export_ingest_round_trip(seed in 0u64..10_000, n in 2usize..12, dim in 1usize..6) {
            let pool = random_pool(&mut rng(seed), n, dim);
            let mut buf = Vec::new();
            export_pools(&mut buf, std::slice::from_ref(&pool)).unwrap();
            let back = ingest(std::io::Cursor::new(buf), IngestMode::Strict, PoolOptions::default()).unwrap();
            prop_assert_eq!(&back.pools[0], &pool);
        }
    }
}
