//! The bench and abort-rate sweeps behind the `bench` and `aborts`
//! subcommands. Rows come back sorted, so output is deterministic for a
//! fixed seed regardless of thread scheduling.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cachesim::{CacheConfig, TraceMode};
use crate::exec::{ExecLog, Executor};
use crate::shuffle::{gen_perm, ShuffleError, ShuffleParams, DEFAULT_P};
use crate::txnsim::{InterruptModel, TxnDeclaration, TxnError, TxnOptions};
use crate::verifier::{execute, oracle_apply_perm, Program, RunSpec, ShuffleInput};

pub const DEFAULT_LAMBDA: f64 = 50.0;

/// Random data and a random target permutation for size `n`.
pub fn random_input(n: usize, seed: u64) -> ShuffleInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n).map(|_| rng.gen()).collect();
    ShuffleInput::new(data, gen_perm(n, seed.wrapping_add(0x5eed)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub ns: Vec<usize>,
    pub programs: Vec<Program>,
    pub seed: u64,
    pub p: u32,
    pub lambda: f64,
    pub cache: CacheConfig,
    pub retry_cap: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ns: vec![16, 64, 256, 1024, 4096, 16384],
            programs: vec![Program::Cmos, Program::Bl1, Program::Bl2],
            seed: 1,
            p: DEFAULT_P,
            lambda: DEFAULT_LAMBDA,
            cache: CacheConfig::default(),
            retry_cap: TxnOptions::default().retry_cap,
        }
    }
}

/// How a bench cell ended.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Cost(f64),
    /// Declaration does not fit the cache.
    Capacity,
    /// Kept aborting until the retry cap.
    RetryCap,
    /// Ran, but the output disagrees with the reference scatter.
    WrongOutput,
    /// Size not supported by the program (not a square, or internal
    /// storage beyond L1).
    Unsupported,
    Failed(String),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Cost(c) => write!(f, "{c}"),
            Outcome::Capacity => f.write_str("AC3"),
            Outcome::RetryCap => f.write_str("AC2-CAP"),
            Outcome::WrongOutput => f.write_str("WRONG"),
            Outcome::Unsupported => f.write_str("N/A"),
            Outcome::Failed(e) => write!(f, "ERR({e})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub program: Program,
    pub n: usize,
    pub events: u64,
    pub txns: u64,
    pub aborts: u64,
    pub attempts: u64,
    pub outcome: Outcome,
}

impl BenchRow {
    pub const HEADER: &'static str = "algo,n,events,txns,aborts,cost";

    pub fn cost(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Cost(c) => Some(c),
            _ => None,
        }
    }
}

impl fmt::Display for BenchRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{}",
            self.program, self.n, self.events, self.txns, self.aborts, self.outcome
        )
    }
}

fn failure_outcome(e: &ShuffleError) -> Outcome {
    match e {
        ShuffleError::Txn(TxnError::Capacity { .. }) => Outcome::Capacity,
        ShuffleError::Txn(TxnError::RetryCapExceeded { .. }) => Outcome::RetryCap,
        ShuffleError::NotSquare(_) | ShuffleError::InternalMemoryTooLarge { .. } => {
            Outcome::Unsupported
        }
        other => Outcome::Failed(other.to_string()),
    }
}

pub fn bench_cell(program: Program, n: usize, config: &BenchConfig) -> BenchRow {
    let input = random_input(n, config.seed ^ n as u64);
    let mut spec = RunSpec::new(config.cache, config.seed);
    spec.p = config.p;
    spec.mode = TraceMode::CountOnly;
    spec.options.retry_cap = config.retry_cap;
    let row = |log: &ExecLog, events: u64, outcome: Outcome| BenchRow {
        program,
        n,
        events,
        txns: log.txns.len() as u64,
        aborts: log.aborts(),
        attempts: log.attempts(),
        outcome,
    };
    match execute(program, &input, &spec) {
        Ok(run) => {
            let expected = oracle_apply_perm(&input.data, input.perm.as_slice()).expect("valid");
            let outcome = if run.output == expected {
                Outcome::Cost(run.events as f64 + config.lambda * run.log.attempts() as f64)
            } else {
                Outcome::WrongOutput
            };
            row(&run.log, run.events, outcome)
        }
        Err((e, log)) => row(&log, 0, failure_outcome(&e)),
    }
}

pub fn bench(config: &BenchConfig) -> Vec<BenchRow> {
    let cells: Vec<(Program, usize)> = config
        .programs
        .iter()
        .flat_map(|&p| config.ns.iter().map(move |&n| (p, n)))
        .collect();
    let mut rows: Vec<BenchRow> = cells
        .into_par_iter()
        .map(|(p, n)| bench_cell(p, n, config))
        .collect();
    rows.sort_by_key(|r| (r.program, r.n));
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AbortVariant {
    Cmos,
    CmosNoPrefetch,
    /// Empty declarations, bodies that only count accesses: the pure
    /// interrupt-abort baseline for the same access counts as `Cmos`.
    InterruptOnly,
}

impl AbortVariant {
    pub const ALL: [AbortVariant; 3] = [
        AbortVariant::Cmos,
        AbortVariant::CmosNoPrefetch,
        AbortVariant::InterruptOnly,
    ];
}

impl fmt::Display for AbortVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AbortVariant::Cmos => "cmos",
            AbortVariant::CmosNoPrefetch => "cmos-noprefetch",
            AbortVariant::InterruptOnly => "interrupt-only",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbortsConfig {
    pub ns: Vec<usize>,
    pub seeds: Vec<u64>,
    pub p: u32,
    pub rate: f64,
    pub cache: CacheConfig,
    pub retry_cap: u64,
}

impl Default for AbortsConfig {
    fn default() -> Self {
        Self {
            ns: vec![16, 64, 256, 1024],
            seeds: (1..=10).collect(),
            p: DEFAULT_P,
            rate: 0.001,
            cache: CacheConfig::default(),
            retry_cap: TxnOptions::default().retry_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbortRun {
    pub ac2: u64,
    pub ac4: u64,
    pub attempts: u64,
    /// Interrupt-model consultations, i.e. body accesses across attempts.
    pub checks: u64,
    pub capped: bool,
    pub error: Option<String>,
}

impl AbortRun {
    fn from_log(log: &ExecLog, capped: bool, error: Option<String>) -> Self {
        Self {
            ac2: log.ac2(),
            ac4: log.ac4(),
            attempts: log.attempts(),
            checks: log.body_accesses(),
            capped,
            error,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbortRow {
    pub variant: AbortVariant,
    pub n: usize,
    pub runs: Vec<AbortRun>,
}

impl AbortRow {
    pub const HEADER: &'static str = "variant,n,ac2,ac4,attempts,status";

    pub fn ac2(&self) -> u64 {
        self.runs.iter().map(|r| r.ac2).sum()
    }

    pub fn ac4(&self) -> u64 {
        self.runs.iter().map(|r| r.ac4).sum()
    }

    pub fn attempts(&self) -> u64 {
        self.runs.iter().map(|r| r.attempts).sum()
    }

    pub fn checks(&self) -> u64 {
        self.runs.iter().map(|r| r.checks).sum()
    }

    pub fn status(&self) -> &'static str {
        if self.runs.iter().any(|r| r.error.is_some()) {
            "error"
        } else if self.runs.iter().any(|r| r.capped) {
            "retry-cap"
        } else {
            "ok"
        }
    }
}

impl fmt::Display for AbortRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{}",
            self.variant,
            self.n,
            self.ac2(),
            self.ac4(),
            self.attempts(),
            self.status()
        )
    }
}

/// Body-access counts of every transaction in one cmos shuffle pass of
/// size `n`: distribute reads `2√n` words and writes `√n·c`, cleanup reads
/// `√n·c` and writes `√n`.
pub fn cmos_txn_access_counts(params: &ShuffleParams) -> Vec<u64> {
    let b = params.bucket_count as u64;
    let c = params.bucket_capacity as u64;
    let mut counts = Vec::new();
    for _ in 0..3 {
        counts.extend(std::iter::repeat_n(2 * b + b * c, b as usize));
        counts.extend(std::iter::repeat_n(b * c + b, b as usize));
    }
    counts
}

fn run_interrupt_only(params: &ShuffleParams, exec: &mut Executor) -> Result<(), TxnError> {
    let decl = TxnDeclaration::new();
    for k in cmos_txn_access_counts(params) {
        exec.run_txn(&decl, |ctx| {
            for _ in 0..k {
                ctx.tick()?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

pub fn abort_run(variant: AbortVariant, n: usize, seed: u64, config: &AbortsConfig) -> AbortRun {
    let model = InterruptModel::PerAccess {
        probability: config.rate,
        seed,
    };
    let options = TxnOptions {
        retry_cap: config.retry_cap,
        ..TxnOptions::default()
    };
    let params = match ShuffleParams::new(n, config.p, seed) {
        Ok(p) => p,
        Err(e) => return AbortRun::from_log(&ExecLog::default(), false, Some(e.to_string())),
    };
    match variant {
        AbortVariant::InterruptOnly => {
            let mut exec = Executor::with_mode(config.cache, TraceMode::CountOnly)
                .with_interrupts(model)
                .with_options(options);
            match run_interrupt_only(&params, &mut exec) {
                Ok(()) => AbortRun::from_log(&exec.log, false, None),
                Err(TxnError::RetryCapExceeded { .. }) => AbortRun::from_log(&exec.log, true, None),
                Err(e) => AbortRun::from_log(&exec.log, false, Some(e.to_string())),
            }
        }
        AbortVariant::Cmos | AbortVariant::CmosNoPrefetch => {
            let program = if variant == AbortVariant::Cmos {
                Program::Cmos
            } else {
                Program::CmosNoPrefetch
            };
            let mut spec = RunSpec::new(config.cache, seed);
            spec.p = config.p;
            spec.interrupts = model;
            spec.options = options;
            spec.mode = TraceMode::CountOnly;
            let input = random_input(n, seed);
            match execute(program, &input, &spec) {
                Ok(run) => AbortRun::from_log(&run.log, false, None),
                Err((ShuffleError::Txn(TxnError::RetryCapExceeded { .. }), log)) => {
                    AbortRun::from_log(&log, true, None)
                }
                Err((e, log)) => AbortRun::from_log(&log, false, Some(e.to_string())),
            }
        }
    }
}

pub fn aborts(config: &AbortsConfig) -> Vec<AbortRow> {
    let cells: Vec<(AbortVariant, usize)> = AbortVariant::ALL
        .iter()
        .flat_map(|&v| config.ns.iter().map(move |&n| (v, n)))
        .collect();
    let mut rows: Vec<AbortRow> = cells
        .into_par_iter()
        .map(|(variant, n)| AbortRow {
            variant,
            n,
            runs: config
                .seeds
                .iter()
                .map(|&s| abort_run(variant, n, s, config))
                .collect(),
        })
        .collect();
    rows.sort_by_key(|r| (r.variant, r.n));
    rows
}
