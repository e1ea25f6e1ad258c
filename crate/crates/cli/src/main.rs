mod config;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use activepref_core::instances::standard_instance;
use activepref_core::lipschitz::{
    feasibility_check, max_gap_cost, normalized_max_gap_cost, saturating_reward, uncovered_distance_sum,
};
use activepref_core::pipeline::{
    default_workers, ingest, read_preferences, select_batch, write_jsonl, IngestMode, Ingested, PreferenceRecord,
};
use activepref_core::refa::{refa_loss, refa_scores};
use activepref_core::{
    run_simulation, verify_suite, CandidatePool, Check, CoverageInstance, Error, Method, PoolOptions, RefaConfig,
    SelectParams, SimConfig, SuiteParams, WeightScheme,
};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{MethodArg, ModeArg, SelectFile};

/// Active negative selection for multi-response preference data.
#[derive(Debug, Parser)]
#[command(name = "activepref", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pick one positive and K negatives for every prompt
    Select(SelectArgs),
    /// Coverage cost and Lipschitz quantities of existing selections
    Cost(CostArgs),
    /// Contrastive loss of existing selections
    Refa(RefaArgs),
    /// Train a toy softmax policy on one pool
    Simulate(SimulateArgs),
    /// Run the randomized property suite
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Pools, one JSON record per line
    #[arg(long)]
    input: PathBuf,
    /// Output file [default: stdout]
    #[arg(long)]
    output: Option<PathBuf>,
    /// Abort on the first malformed record instead of skipping it
    #[arg(long)]
    strict: bool,
    /// Keep raw Euclidean distances instead of scaling them to max 1
    #[arg(long)]
    no_normalize_distances: bool,
}

impl InputArgs {
    fn pool_options(&self, normalize: bool) -> PoolOptions {
        PoolOptions {
            normalize_distances: normalize,
            ..PoolOptions::default()
        }
    }

    fn mode(&self, strict: bool) -> IngestMode {
        if strict {
            IngestMode::Strict
        } else {
            IngestMode::Lenient
        }
    }
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    io: InputArgs,
    /// Flat TOML file with any of the options below; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Selector [default: optselect]
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Opt-Select solver [default: local]
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Number of negatives per prompt [default: 4]
    #[arg(long)]
    k: Option<usize>,
    /// Seed for k-means++ and local-search starts [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// exp-mean or max-gap [default: exp-mean]
    #[arg(long)]
    weight_scheme: Option<WeightScheme>,
    /// Local-search restarts [default: 1]
    #[arg(long)]
    restarts: Option<u32>,
    /// Local-search sweep cap [default: 10000]
    #[arg(long)]
    max_sweeps: Option<usize>,
    /// Largest pool the exact solver accepts, top candidate excluded [default: 20]
    #[arg(long)]
    exact_max_points: Option<usize>,
    /// Worker threads [default: logical cores]
    #[arg(long, env = "ACTIVEPREF_WORKERS")]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct CostArgs {
    #[command(flatten)]
    io: InputArgs,
    /// Selections produced by `select`
    #[arg(long)]
    selections: PathBuf,
    #[arg(long, default_value_t = WeightScheme::ExpMean)]
    weight_scheme: WeightScheme,
    /// Lipschitz constant for the feasibility and reward columns
    #[arg(long)]
    lipschitz: Option<f64>,
}

#[derive(Debug, Args)]
struct RefaArgs {
    #[command(flatten)]
    io: InputArgs,
    /// Selections produced by `select`
    #[arg(long)]
    selections: PathBuf,
    /// Weight of the reward-deviation bonus
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Inverse temperature applied to every score
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// TOML file with simulator settings
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train on the first pool of this file instead of the built-in instance
    #[arg(long)]
    input: Option<PathBuf>,
    /// Trajectory output, one step per line [default: stdout]
    #[arg(long, alias = "output")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run only this check; repeat for several [default: all]
    #[arg(long = "check")]
    checks: Vec<Check>,
    /// Break the local search on purpose; the suite must then fail
    #[arg(long)]
    inject_fault: bool,
    /// Report file [default: stdout]
    #[arg(long)]
    output: Option<PathBuf>,
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn load_pools(io: &InputArgs, strict: bool, normalize: bool) -> Result<Ingested> {
    let ingested = activepref_core::pipeline::ingest_path(&io.input, io.mode(strict), io.pool_options(normalize))?;
    for rejected in &ingested.rejected {
        eprintln!("warning: {}: skipped {rejected}", io.input.display());
    }
    Ok(ingested)
}

fn load_selections(path: &Path) -> Result<HashMap<String, PreferenceRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_preferences(BufReader::new(file))?
        .into_iter()
        .map(|r| (r.prompt_id.clone(), r))
        .collect())
}

fn run_select(args: SelectArgs) -> Result<()> {
    let file: SelectFile = config::load(args.config.as_deref())?;
    let defaults = SelectParams::default();
    let params = SelectParams {
        k: args.k.or(file.k).unwrap_or(defaults.k),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        weight_scheme: args
            .weight_scheme
            .or(file.weight_scheme)
            .unwrap_or(defaults.weight_scheme),
        restarts: args.restarts.or(file.restarts).unwrap_or(defaults.restarts),
        max_sweeps: args.max_sweeps.or(file.max_sweeps).unwrap_or(defaults.max_sweeps),
        exact_max_points: args
            .exact_max_points
            .or(file.exact_max_points)
            .unwrap_or(defaults.exact_max_points),
        ..defaults
    };
    let method = match (
        args.method.or(file.method).unwrap_or(MethodArg::Optselect),
        args.mode.or(file.mode).unwrap_or(ModeArg::Local),
    ) {
        (MethodArg::Bottomk, _) => Method::BottomK,
        (MethodArg::Coreset, _) => Method::Coreset,
        (MethodArg::Optselect, ModeArg::Exact) => Method::OptSelectExact,
        (MethodArg::Optselect, ModeArg::Local) => Method::OptSelectLocal,
    };
    let strict = args.io.strict || file.strict.unwrap_or(false);
    let normalize = !args.io.no_normalize_distances && file.normalize_distances.unwrap_or(true);
    let workers = args.workers.or(file.workers).unwrap_or_else(default_workers);

    let pools = load_pools(&args.io, strict, normalize)?.pools;
    let mut records = Vec::with_capacity(pools.len());
    let mut failed = 0;
    for outcome in select_batch(&pools, method, &params, workers) {
        match outcome {
            Ok(rec) => records.push(rec),
            Err(f) => {
                failed += 1;
                eprintln!("error: prompt `{}`: {}", f.prompt_id, f.error);
            }
        }
    }
    write_jsonl(open_output(args.io.output.as_deref())?, &records)?;
    if strict && failed > 0 {
        bail!("{failed} of {} pools failed", pools.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct LipschitzRow {
    lipschitz: f64,
    uncovered_mass: f64,
    feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    saturating_reward: Option<f64>,
    reward_bound: f64,
}

#[derive(Serialize)]
struct CostRow {
    prompt_id: String,
    positive_id: String,
    negative_ids: Vec<String>,
    weight_scheme: WeightScheme,
    coverage_cost: f64,
    max_gap_cost: f64,
    normalized_max_gap_cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lipschitz: Option<LipschitzRow>,
}

fn pair_up<'a>(
    pools: &'a [CandidatePool],
    selections: &'a HashMap<String, PreferenceRecord>,
) -> impl Iterator<Item = Result<(&'a CandidatePool, &'a PreferenceRecord, usize, Vec<usize>)>> {
    pools.iter().filter_map(move |pool| {
        let sel = selections.get(pool.prompt_id())?;
        Some(
            sel.indices_in(pool)
                .map(|(pos, neg)| (pool, sel, pos, neg))
                .map_err(anyhow::Error::from),
        )
    })
}

fn cost_row(
    pool: &CandidatePool,
    sel: &PreferenceRecord,
    pos: usize,
    neg: &[usize],
    args: &CostArgs,
) -> Result<CostRow> {
    let instance = CoverageInstance::from_pool(pool, pos, args.weight_scheme, neg.len())?;
    let positions: Vec<usize> = neg.iter().map(|&j| if j > pos { j - 1 } else { j }).collect();
    let gap = max_gap_cost(pool, neg)?;
    let lipschitz = match args.lipschitz {
        Some(l) => {
            let feasible = feasibility_check(pool, neg, l)?;
            let saturating = match saturating_reward(pool, neg, l) {
                Ok(r) => Some(r),
                Err(Error::Infeasible { .. }) => None,
                Err(e) => return Err(e.into()),
            };
            Some(LipschitzRow {
                lipschitz: l,
                uncovered_mass: uncovered_distance_sum(pool, neg)?,
                feasible,
                saturating_reward: saturating,
                reward_bound: pool.candidate(pool.top_reward_index()).reward - l * gap,
            })
        }
        None => None,
    };
    Ok(CostRow {
        prompt_id: sel.prompt_id.clone(),
        positive_id: sel.positive_id.clone(),
        negative_ids: sel.negative_ids.clone(),
        weight_scheme: args.weight_scheme,
        coverage_cost: instance.coverage_cost(&positions)?,
        max_gap_cost: gap,
        normalized_max_gap_cost: normalized_max_gap_cost(pool, neg)?,
        lipschitz,
    })
}

fn run_cost(args: CostArgs) -> Result<()> {
    let pools = load_pools(&args.io, args.io.strict, !args.io.no_normalize_distances)?.pools;
    let selections = load_selections(&args.selections)?;
    let mut rows = Vec::new();
    for item in pair_up(&pools, &selections) {
        let (pool, sel, pos, neg) = item?;
        rows.push(cost_row(pool, sel, pos, &neg, &args).with_context(|| format!("prompt `{}`", sel.prompt_id))?);
    }
    write_jsonl(open_output(args.io.output.as_deref())?, &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct RefaRow {
    prompt_id: String,
    loss: f64,
    /// Positive first, then negatives in selection order.
    scores: Vec<f64>,
}

fn run_refa(args: RefaArgs) -> Result<()> {
    let cfg = RefaConfig {
        alpha: args.alpha,
        inverse_temperature: args.beta,
    };
    cfg.validate()?;
    let pools = load_pools(&args.io, args.io.strict, !args.io.no_normalize_distances)?.pools;
    let selections = load_selections(&args.selections)?;
    let mut rows = Vec::new();
    let mut missing = 0;
    for item in pair_up(&pools, &selections) {
        let (pool, sel, pos, neg) = item?;
        let logprobs = match pool
            .candidates()
            .iter()
            .map(|c| c.logprob.ok_or_else(|| Error::MissingLogprob { id: c.id.clone() }))
            .collect::<std::result::Result<Vec<f64>, Error>>()
        {
            Ok(lp) => lp,
            Err(e) => {
                missing += 1;
                eprintln!("error: prompt `{}`: {e}", sel.prompt_id);
                continue;
            }
        };
        let subset: Vec<usize> = std::iter::once(pos).chain(neg.iter().copied()).collect();
        let scores = refa_scores(&logprobs, &pool.rewards(), &subset, &cfg)?;
        let negatives: Vec<usize> = (1..subset.len()).collect();
        rows.push(RefaRow {
            prompt_id: sel.prompt_id.clone(),
            loss: refa_loss(&scores, &[0], &negatives)?,
            scores,
        });
    }
    write_jsonl(open_output(args.io.output.as_deref())?, &rows)?;
    if args.io.strict && missing > 0 {
        bail!("{missing} prompts lack log-probabilities");
    }
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg: SimConfig = config::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    let pool = match &args.input {
        Some(path) => ingest(
            BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?),
            IngestMode::Strict,
            PoolOptions::default(),
        )?
        .pools
        .swap_remove(0),
        None => standard_instance(),
    };
    let trajectory = run_simulation(&pool, &cfg)?;
    write_jsonl(open_output(args.out.as_deref())?, &trajectory.records)?;
    if let (Some(first), Some(last)) = (trajectory.records.first(), trajectory.records.last()) {
        eprintln!(
            "loss {:.6} -> {:.6}, expected reward {:.6} -> {:.6}, negative mass {:.6} -> {:.6}",
            first.loss, last.loss, first.expected_reward, last.expected_reward, first.negative_mass, last.negative_mass
        );
    }
    Ok(())
}

fn run_verify(args: VerifyArgs) -> Result<ExitCode> {
    let report = verify_suite(&SuiteParams {
        seed: args.seed,
        checks: args.checks,
        inject_fault: args.inject_fault,
    });
    let mut out = open_output(args.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    out.write_all(b"\n")?;
    out.flush()?;
    for check in &report.checks {
        eprintln!(
            "{}: {} ({} instances, {} failures)",
            check.check,
            if check.passed { "pass" } else { "FAIL" },
            check.instances,
            check.failures.len()
        );
    }
    Ok(ExitCode::from(report.exit_code() as u8))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Select(a) => run_select(a).map(|_| ExitCode::SUCCESS),
        Command::Cost(a) => run_cost(a).map(|_| ExitCode::SUCCESS),
        Command::Refa(a) => run_refa(a).map(|_| ExitCode::SUCCESS),
        Command::Simulate(a) => run_simulate(a).map(|_| ExitCode::SUCCESS),
        Command::Verify(a) => run_verify(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
