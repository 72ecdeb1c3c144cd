//! Trace capture, obliviousness checks and cache-size probing.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::cachesim::{AccessEvent, CacheConfig, CacheLevel, Trace, TraceMode};
use crate::exec::{ExecLog, Executor};
use crate::machine::Machine;
use crate::shuffle::{
    melbourne_shuffle_with, naive_shuffle_bl1, oblivious_bubble_shuffle_bl2, NotAPermutation,
    Permutation, Pipeline, ShuffleError, ShuffleParams, DEFAULT_P,
};
use crate::txnsim::{run_txn, InterruptModel, Interrupts, TxnDeclaration, TxnError, TxnOptions};

/// Reference scatter: `out[perm[i]] = data[i]`.
pub fn oracle_apply_perm<T: Clone>(data: &[T], perm: &[usize]) -> Result<Vec<T>, NotAPermutation> {
    if data.len() != perm.len() {
        return Err(NotAPermutation {
            len: data.len(),
            reason: format!("{} entries for {} values", perm.len(), data.len()),
        });
    }
    let perm = Permutation::new(perm.to_vec())?;
    let mut out: Vec<Option<T>> = vec![None; data.len()];
    for (i, &d) in perm.as_slice().iter().enumerate() {
        out[d] = Some(data[i].clone());
    }
    Ok(out.into_iter().map(|v| v.expect("bijection")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Program {
    Cmos,
    CmosNoPrefetch,
    Bl1,
    Bl2,
}

impl Program {
    pub const ALL: [Program; 4] = [
        Program::Cmos,
        Program::CmosNoPrefetch,
        Program::Bl1,
        Program::Bl2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Program::Cmos => "cmos",
            Program::CmosNoPrefetch => "cmos-noprefetch",
            Program::Bl1 => "bl1",
            Program::Bl2 => "bl2",
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown program {0:?} (expected cmos, cmos-noprefetch, bl1 or bl2)")]
pub struct ParseProgramError(pub String);

impl FromStr for Program {
    type Err = ParseProgramError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Program::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| ParseProgramError(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShuffleInput {
    pub data: Vec<u32>,
    pub perm: Permutation,
}

impl ShuffleInput {
    pub fn new(data: Vec<u32>, perm: Permutation) -> Self {
        Self { data, perm }
    }
}

/// Everything that parameterises one program run besides its input.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub cache: CacheConfig,
    pub seed: u64,
    pub p: u32,
    pub interrupts: InterruptModel,
    pub options: TxnOptions,
    pub mode: TraceMode,
}

impl RunSpec {
    pub fn new(cache: CacheConfig, seed: u64) -> Self {
        Self {
            cache,
            seed,
            p: DEFAULT_P,
            interrupts: InterruptModel::None,
            options: TxnOptions::default(),
            mode: TraceMode::Record,
        }
    }
}

/// Result of one run on a fresh machine. `trace` includes the final flush;
/// in count-only mode it is empty and only `events` is meaningful.
#[derive(Debug, Clone)]
pub struct Execution {
    pub output: Vec<u32>,
    pub trace: Trace,
    pub events: u64,
    pub log: ExecLog,
}

/// Runs `program` on an existing executor (no final flush).
pub fn run_program(
    exec: &mut Executor,
    program: Program,
    input: &ShuffleInput,
    p: u32,
    seed: u64,
) -> Result<Vec<u32>, ShuffleError> {
    let n = input.data.len();
    match program {
        Program::Cmos | Program::CmosNoPrefetch => {
            let params = ShuffleParams::new(n, p, seed)?;
            let pipeline = if program == Program::Cmos {
                Pipeline::Cmos
            } else {
                Pipeline::NoPrefetch
            };
            melbourne_shuffle_with(exec, &input.data, &input.perm, &params, pipeline)
        }
        Program::Bl1 => naive_shuffle_bl1(exec, &input.data, &input.perm),
        Program::Bl2 => oblivious_bubble_shuffle_bl2(exec, &input.data, &input.perm),
    }
}

#[allow(clippy::result_large_err)]
/// Fresh machine, run, flush. On error the log of the failed run is
/// returned alongside.
pub fn execute(
    program: Program,
    input: &ShuffleInput,
    spec: &RunSpec,
) -> Result<Execution, (ShuffleError, ExecLog)> {
    let mut exec = Executor::with_mode(spec.cache, spec.mode)
        .with_interrupts(spec.interrupts.clone())
        .with_options(spec.options);
    match run_program(&mut exec, program, input, spec.p, spec.seed) {
        Ok(output) => {
            exec.machine.cache.flush_all();
            Ok(Execution {
                output,
                trace: exec.machine.cache.snapshot_trace(),
                events: exec.machine.cache.event_count(),
                log: exec.log,
            })
        }
        Err(e) => Err((e, exec.log)),
    }
}

pub fn capture_trace(
    program: Program,
    input: &ShuffleInput,
    seed: u64,
    cache: &CacheConfig,
    interrupts: &InterruptModel,
) -> Result<Trace, ShuffleError> {
    let mut spec = RunSpec::new(*cache, seed);
    spec.interrupts = interrupts.clone();
    execute(program, input, &spec)
        .map(|e| e.trace)
        .map_err(|(e, _)| e)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    /// Trials compared; the first is always trial 0.
    pub trials: (usize, usize),
    pub index: usize,
    pub left: Option<AccessEvent>,
    pub right: Option<AccessEvent>,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |e: &Option<AccessEvent>| match e {
            Some(e) => format!("{} {:#x}", e.kind, e.line),
            None => "end of trace".to_string(),
        };
        write!(
            f,
            "trial {} vs {} differ at event {}: {} / {}",
            self.trials.0,
            self.trials.1,
            self.index,
            show(&self.left),
            show(&self.right)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObliviousnessReport {
    pub program: Program,
    pub trials: usize,
    pub all_equal: bool,
    pub first_divergence: Option<Divergence>,
    /// Length of trial 0's trace.
    pub trace_len: usize,
}

impl ObliviousnessReport {
    pub const CSV_HEADER: &'static str =
        "program,trials,events,all_equal,trial_a,trial_b,event_index";

    /// Summary row; the divergence columns are empty when all traces agree.
    pub fn csv_line(&self) -> String {
        let tail = match &self.first_divergence {
            Some(d) => format!("{},{},{}", d.trials.0, d.trials.1, d.index),
            None => ",,".to_string(),
        };
        format!(
            "{},{},{},{},{tail}",
            self.program, self.trials, self.trace_len, self.all_equal
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("need at least two inputs, got {0}")]
    TooFewInputs(usize),
    #[error("inputs differ in length ({0} vs {1})")]
    UnequalLengths(usize, usize),
    #[error("trial {trial}: {source}")]
    Program {
        trial: usize,
        #[source]
        source: ShuffleError,
    },
}

pub fn verify_obliviousness(
    program: Program,
    inputs: &[ShuffleInput],
    seed: u64,
    cache: &CacheConfig,
) -> Result<ObliviousnessReport, VerifyError> {
    verify_obliviousness_with(program, inputs, &RunSpec::new(*cache, seed))
}

/// Runs every input with the same seed and compares each trace to trial 0.
pub fn verify_obliviousness_with(
    program: Program,
    inputs: &[ShuffleInput],
    spec: &RunSpec,
) -> Result<ObliviousnessReport, VerifyError> {
    if inputs.len() < 2 {
        return Err(VerifyError::TooFewInputs(inputs.len()));
    }
    let n = inputs[0].data.len();
    if let Some(bad) = inputs.iter().find(|i| i.data.len() != n) {
        return Err(VerifyError::UnequalLengths(n, bad.data.len()));
    }
    let mut spec = spec.clone();
    spec.mode = TraceMode::Record;
    let traces: Vec<Trace> = inputs
        .par_iter()
        .enumerate()
        .map(|(trial, input)| {
            execute(program, input, &spec)
                .map(|e| e.trace)
                .map_err(|(source, _)| VerifyError::Program { trial, source })
        })
        .collect::<Result<_, _>>()?;

    let first_divergence = traces.iter().enumerate().skip(1).find_map(|(t, tr)| {
        traces[0].first_divergence(tr).map(|index| Divergence {
            trials: (0, t),
            index,
            left: traces[0].events().get(index).copied(),
            right: tr.events().get(index).copied(),
        })
    });
    Ok(ObliviousnessReport {
        program,
        trials: inputs.len(),
        all_equal: first_divergence.is_none(),
        first_divergence,
        trace_len: traces[0].len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeResult {
    pub l1_bytes: u64,
    pub llc_bytes: u64,
}

/// Recovers the L1 and LLC capacities of `config` by watching which
/// transactions commit: a write array commits while it fits L1, a read
/// array while it fits the LLC. The search is over byte lengths and never
/// looks at the geometry directly.
pub fn probe_cache_sizes(config: &CacheConfig) -> ProbeResult {
    let mut machine = Machine::with_mode(*config, TraceMode::CountOnly);
    let base = machine.alloc_bytes(0, 0);
    let limit = config.address_space - base;
    let l1_bytes = largest_committing(&mut machine, base, limit, false);
    let llc_bytes = largest_committing(&mut machine, base, limit, true);
    ProbeResult {
        l1_bytes,
        llc_bytes,
    }
}

fn commits(machine: &mut Machine, base: u64, len: u64, read: bool) -> bool {
    let decl = if read {
        TxnDeclaration::new().read(base, len)
    } else {
        TxnDeclaration::new().write(base, len)
    };
    let options = TxnOptions {
        retry_cap: 4,
        prefetch: true,
    };
    let mut interrupts = Interrupts::default();
    let words = len.div_ceil(8);
    let result = run_txn(machine, &decl, &mut interrupts, &options, |ctx| {
        for w in 0..words {
            let addr = base + w * 8;
            if read {
                ctx.read(addr)?;
            } else {
                ctx.write(addr, w)?;
            }
        }
        Ok(())
    });
    match result {
        Ok(_) => true,
        Err(TxnError::Capacity { level, .. }) => {
            debug_assert!(level == CacheLevel::L1 || read);
            false
        }
        Err(_) => false,
    }
}

fn largest_committing(machine: &mut Machine, base: u64, limit: u64, read: bool) -> u64 {
    let mut lo = 0u64;
    let mut hi = 8u64;
    while hi <= limit && commits(machine, base, hi, read) {
        lo = hi;
        hi *= 2;
    }
    let mut hi = hi.min(limit + 1);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if commits(machine, base, mid, read) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shuffle::gen_perm;

    #[test]
    fn oracle_scatter() {
        let data: Vec<char> = "abcdefghi".chars().collect();
        let out = oracle_apply_perm(&data, &[3, 1, 6, 5, 7, 2, 0, 8, 4]).unwrap();
        assert_eq!(out.into_iter().collect::<String>(), "gbfaidceh");
        assert!(oracle_apply_perm(&data, &[0; 9]).is_err());
        assert!(oracle_apply_perm(&data, &[0]).is_err());
    }

    #[test]
    fn program_names_round_trip() {
        for p in Program::ALL {
            assert_eq!(p.as_str().parse::<Program>().unwrap(), p);
        }
        assert!("bl3".parse::<Program>().is_err());
    }

    fn inputs(n: usize, count: u64) -> Vec<ShuffleInput> {
        (0..count)
            .map(|k| {
                let data = (0..n as u32)
                    .map(|i| i.wrapping_mul(k as u32 + 7))
                    .collect();
                ShuffleInput::new(data, gen_perm(n, 1000 + k))
            })
            .collect()
    }

    #[test]
    fn cmos_and_bl2_are_oblivious_bl1_is_not() {
        let cfg = CacheConfig::default();
        for program in [Program::Cmos, Program::Bl2] {
            let r = verify_obliviousness(program, &inputs(16, 5), 3, &cfg).unwrap();
            assert!(r.all_equal, "{program}: {:?}", r.first_divergence);
        }
        let r = verify_obliviousness(Program::Bl1, &inputs(64, 5), 3, &cfg).unwrap();
        assert!(!r.all_equal);
        let d = r.first_divergence.unwrap();
        assert_eq!(d.trials.0, 0);
    }

    #[test]
    fn verify_needs_two_inputs() {
        let cfg = CacheConfig::default();
        assert_eq!(
            verify_obliviousness(Program::Cmos, &inputs(16, 1), 0, &cfg),
            Err(VerifyError::TooFewInputs(1))
        );
    }

    #[test]
    fn capture_trace_ends_with_flush() {
        let cfg = CacheConfig::default();
        let input = &inputs(16, 1)[0];
        let t = capture_trace(Program::Cmos, input, 1, &cfg, &InterruptModel::None).unwrap();
        assert!(!t.is_empty());
        assert_eq!(
            t.events().last().unwrap().kind,
            crate::cachesim::EventKind::WriteBack
        );
    }

    #[test]
    fn probe_default_geometry() {
        let r = probe_cache_sizes(&CacheConfig::default());
        assert_eq!((r.l1_bytes, r.llc_bytes), (32 * 1024, 8 * 1024 * 1024));
    }

    #[test]
    fn probe_degenerate_equal_levels() {
        let cfg = CacheConfig::from_capacities(64, 4096, 4, 4096, 4).unwrap();
        let r = probe_cache_sizes(&cfg);
        assert_eq!((r.l1_bytes, r.llc_bytes), (4096, 4096));
    }

    #[test]
    fn probe_small_geometries() {
        for (line, l1, l1w, llc, llcw) in [
            (32, 1024, 2, 16384, 4),
            (64, 2048, 1, 65536, 8),
            (128, 8192, 8, 131072, 16),
        ] {
            let cfg = CacheConfig::from_capacities(line, l1, l1w, llc, llcw).unwrap();
            let r = probe_cache_sizes(&cfg);
            assert_eq!((r.l1_bytes, r.llc_bytes), (l1, llc), "{cfg}");
        }
    }
}
