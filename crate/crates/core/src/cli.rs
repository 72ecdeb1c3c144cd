//! Command-line front end. [`run`] is the whole program minus process exit,
//! so it can be driven from tests.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cachesim::CacheConfig;
use crate::experiments::{self, AbortRow, AbortsConfig, BenchConfig, BenchRow};
use crate::shuffle::{gen_perm, Permutation, ShuffleError, DEFAULT_P};
use crate::txnsim::{InterruptModel, DEFAULT_RETRY_CAP};
use crate::verifier::{
    execute, probe_cache_sizes, verify_obliviousness_with, ObliviousnessReport, Program, RunSpec,
    ShuffleInput,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "cmos",
    version,
    about = "Cache-miss oblivious shuffling on a simulated cache"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Cache geometry file (key=value lines); defaults to 32 KiB L1, 8 MiB LLC.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Bucket capacity factor.
    #[arg(long, global = true, default_value_t = DEFAULT_P)]
    p: u32,
    #[arg(long, global = true, default_value_t = DEFAULT_RETRY_CAP)]
    retry_cap: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Shuffle one input and write the result.
    Shuffle {
        #[arg(long, default_value = "cmos")]
        algo: Program,
        /// Whitespace-separated decimal values; random if absent.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Whitespace-separated destination indices; random if absent.
        #[arg(long)]
        perm: Option<PathBuf>,
        /// Size of the random input when --input is absent.
        #[arg(long)]
        n: Option<usize>,
        /// Output file; stdout if absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Write the event trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// none, fixed:A,B,.. or prob:P[:SEED]
        #[arg(long, default_value = "none")]
        interrupts: InterruptModel,
    },
    /// Cost sweep across sizes and programs.
    Bench {
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "16,64,256,1024,4096,16384"
        )]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "cmos,bl1,bl2")]
        algos: Vec<Program>,
        #[arg(long, default_value_t = experiments::DEFAULT_LAMBDA)]
        lambda: f64,
    },
    /// Abort counts under random interrupts.
    Aborts {
        #[arg(long, value_delimiter = ',', default_value = "16,64,256,1024")]
        n: Vec<usize>,
        #[arg(long, default_value_t = 0.001)]
        rate: f64,
        /// Runs per cell, seeded seed..seed+runs.
        #[arg(long, default_value_t = 10)]
        runs: u64,
    },
    /// Compare traces of one program across random inputs.
    Verify {
        #[arg(long, default_value = "cmos")]
        algo: Program,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        trials: u64,
        /// On divergence, write both traces as CSV into this directory.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Recover L1 and LLC capacities from commit/abort behaviour.
    Probe,
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Results go to `out`, diagnostics to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            if e.use_stderr() {
                eprint!("{e}");
            } else {
                let _ = write!(out, "{e}");
            }
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Fail(msg)) => {
            eprintln!("error: {msg}");
            EXIT_FAIL
        }
    }
}

enum CliError {
    Usage(String),
    Fail(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Fail(e.to_string())
    }
}

fn load_cache(path: Option<&Path>) -> Result<CacheConfig, CliError> {
    match path {
        None => Ok(CacheConfig::default()),
        Some(p) => {
            CacheConfig::load(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
    }
}

fn read_numbers<T: std::str::FromStr>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    text.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| CliError::Usage(format!("{}: bad number {t:?}", path.display())))
        })
        .collect()
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let common = cli.common;
    let cache = load_cache(common.cache.as_deref())?;
    let mut spec = RunSpec::new(cache, common.seed);
    spec.p = common.p;
    spec.options.retry_cap = common.retry_cap;

    match cli.command {
        Command::Shuffle {
            algo,
            input,
            perm,
            n,
            output,
            trace,
            interrupts,
        } => {
            let data: Vec<u32> = match (&input, n) {
                (Some(path), _) => read_numbers(path)?,
                (None, Some(n)) => experiments::random_input(n, common.seed).data,
                (None, None) => return Err(CliError::Usage("need --input or --n".into())),
            };
            let perm = match &perm {
                Some(path) => Permutation::new(read_numbers(path)?)
                    .map_err(|e| CliError::Usage(e.to_string()))?,
                None => gen_perm(data.len(), common.seed.wrapping_add(0x5eed)),
            };
            if perm.len() != data.len() {
                return Err(CliError::Usage(format!(
                    "{} values but {} permutation entries",
                    data.len(),
                    perm.len()
                )));
            }
            spec.interrupts = interrupts;
            let run = match execute(algo, &ShuffleInput::new(data, perm), &spec) {
                Ok(run) => run,
                Err((e @ (ShuffleError::NotSquare(_) | ShuffleError::ZeroP), _)) => {
                    return Err(CliError::Usage(e.to_string()))
                }
                Err((e, _)) => return Err(CliError::Fail(e.to_string())),
            };
            let text: Vec<String> = run.output.iter().map(u32::to_string).collect();
            let text = text.join("\n") + "\n";
            match output {
                Some(path) => fs::write(path, text)?,
                None => out.write_all(text.as_bytes())?,
            }
            if let Some(path) = trace {
                let mut f = std::io::BufWriter::new(fs::File::create(path)?);
                run.trace.write_csv(&mut f)?;
                f.flush()?;
            }
            eprintln!(
                "events={} txns={} aborts={} attempts={}",
                run.events,
                run.log.txns.len(),
                run.log.aborts(),
                run.log.attempts()
            );
            Ok(EXIT_OK)
        }
        Command::Bench { n, algos, lambda } => {
            let rows = experiments::bench(&BenchConfig {
                ns: n,
                programs: algos,
                seed: common.seed,
                p: common.p,
                lambda,
                cache,
                retry_cap: common.retry_cap,
            });
            writeln!(out, "{}", BenchRow::HEADER)?;
            for r in rows {
                writeln!(out, "{r}")?;
            }
            Ok(EXIT_OK)
        }
        Command::Aborts { n, rate, runs } => {
            if !(0.0..=1.0).contains(&rate) {
                return Err(CliError::Usage(format!("rate {rate} outside [0, 1]")));
            }
            let rows = experiments::aborts(&AbortsConfig {
                ns: n,
                seeds: (0..runs).map(|k| common.seed + k).collect(),
                p: common.p,
                rate,
                cache,
                retry_cap: common.retry_cap,
            });
            writeln!(out, "{}", AbortRow::HEADER)?;
            for r in rows {
                writeln!(out, "{r}")?;
            }
            Ok(EXIT_OK)
        }
        Command::Verify {
            algo,
            n,
            trials,
            dump,
        } => {
            let inputs: Vec<ShuffleInput> = (0..trials)
                .map(|k| {
                    experiments::random_input(n, common.seed.wrapping_mul(7919).wrapping_add(k))
                })
                .collect();
            let report = verify_obliviousness_with(algo, &inputs, &spec)
                .map_err(|e| CliError::Fail(e.to_string()))?;
            writeln!(out, "{}", ObliviousnessReport::CSV_HEADER)?;
            writeln!(out, "{}", report.csv_line())?;
            let Some(d) = report.first_divergence else {
                return Ok(EXIT_OK);
            };
            eprintln!("{d}");
            if let Some(dir) = dump {
                fs::create_dir_all(&dir)?;
                for t in [d.trials.0, d.trials.1] {
                    let trace = execute(algo, &inputs[t], &spec)
                        .map_err(|(e, _)| CliError::Fail(e.to_string()))?
                        .trace;
                    let mut f = std::io::BufWriter::new(fs::File::create(
                        dir.join(format!("trial_{t}.csv")),
                    )?);
                    trace.write_csv(&mut f)?;
                    f.flush()?;
                }
            }
            Ok(EXIT_FAIL)
        }
        Command::Probe => {
            let r = probe_cache_sizes(&cache);
            writeln!(out, "{} {}", r.l1_bytes, r.llc_bytes)?;
            Ok(EXIT_OK)
        }
    }
}
