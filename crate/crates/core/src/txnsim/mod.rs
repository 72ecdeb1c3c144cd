//! Hardware-transaction emulation on top of the cache simulator.
//!
//! A transaction declares its read and write sets up front. Each attempt
//! prefetches every declared line (read set first, then write set, both in
//! ascending line order), pinning them so that any later attempt to evict
//! one aborts the transaction. The body then runs against a write buffer;
//! writes reach memory only on commit. On abort the pins are dropped, the
//! buffer is discarded and the whole transaction, prefetch included, is
//! re-executed.

mod interrupt;

pub use interrupt::{InterruptModel, Interrupts, ParseInterruptError};

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::cachesim::{AccessKind, CacheConfig, CacheError, CacheHierarchy, CacheLevel};
use crate::machine::Machine;

pub const DEFAULT_RETRY_CAP: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ByteRange {
    pub start: u64,
    pub len: u64,
}

impl ByteRange {
    pub fn new(start: u64, len: u64) -> Self {
        Self { start, len }
    }

    fn lines(&self, line_size: u64) -> std::ops::Range<u64> {
        if self.len == 0 {
            return 0..0;
        }
        self.start / line_size..(self.start + self.len).div_ceil(line_size)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TxnDeclaration {
    pub readset: Vec<ByteRange>,
    pub writeset: Vec<ByteRange>,
}

impl TxnDeclaration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(mut self, start: u64, len: u64) -> Self {
        self.readset.push(ByteRange::new(start, len));
        self
    }

    pub fn write(mut self, start: u64, len: u64) -> Self {
        self.writeset.push(ByteRange::new(start, len));
        self
    }

    /// Expands the ranges to whole lines.
    pub fn normalize(&self, config: &CacheConfig) -> NormalizedDecl {
        let collect = |ranges: &[ByteRange]| {
            let mut lines: Vec<u64> = ranges
                .iter()
                .flat_map(|r| r.lines(config.line_size))
                .collect();
            lines.sort_unstable();
            lines.dedup();
            lines
        };
        NormalizedDecl {
            read_lines: collect(&self.readset),
            write_lines: collect(&self.writeset),
        }
    }
}

/// A declaration at line granularity; both lists sorted and deduplicated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalizedDecl {
    pub read_lines: Vec<u64>,
    pub write_lines: Vec<u64>,
}

impl NormalizedDecl {
    pub fn may_read(&self, line: u64) -> bool {
        self.read_lines.binary_search(&line).is_ok() || self.may_write(line)
    }

    pub fn may_write(&self, line: u64) -> bool {
        self.write_lines.binary_search(&line).is_ok()
    }

    /// Number of distinct lines in the union of both sets.
    pub fn footprint_lines(&self) -> u64 {
        let shared = self
            .read_lines
            .iter()
            .filter(|l| self.write_lines.binary_search(l).is_ok())
            .count();
        (self.read_lines.len() + self.write_lines.len() - shared) as u64
    }

    /// The write set must fit L1 and the footprint must fit the LLC.
    pub fn capacity_violation(&self, config: &CacheConfig) -> Option<CacheLevel> {
        if self.write_lines.len() as u64 > config.l1_capacity_lines() {
            Some(CacheLevel::L1)
        } else if self.footprint_lines() > config.llc_capacity_lines() {
            Some(CacheLevel::Llc)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AbortCause {
    /// A pinned line had to be evicted.
    Eviction,
    /// The declaration cannot fit the cache.
    Capacity,
    /// An asynchronous interrupt arrived during the body.
    Interrupt,
}

impl fmt::Display for AbortCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AbortCause::Eviction => "AC2-eviction",
            AbortCause::Capacity => "AC3-capacity",
            AbortCause::Interrupt => "AC4-interrupt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AbortInfo {
    pub cause: AbortCause,
    /// Faulting line, for evictions.
    pub line: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TxnStats {
    pub attempts: u64,
    pub ac2: u64,
    pub ac3: u64,
    pub ac4: u64,
    pub prefetch_events: u64,
    pub body_events: u64,
    pub commit_events: u64,
    /// Body accesses executed across all attempts.
    pub body_accesses: u64,
    pub last_abort: Option<AbortInfo>,
    pub committed: bool,
    pub prefetched: bool,
}

impl TxnStats {
    pub fn aborts(&self) -> u64 {
        self.ac2 + self.ac3 + self.ac4
    }

    pub fn aborts_by(&self, cause: AbortCause) -> u64 {
        match cause {
            AbortCause::Eviction => self.ac2,
            AbortCause::Capacity => self.ac3,
            AbortCause::Interrupt => self.ac4,
        }
    }

    fn record(&mut self, info: AbortInfo) {
        match info.cause {
            AbortCause::Eviction => self.ac2 += 1,
            AbortCause::Capacity => self.ac3 += 1,
            AbortCause::Interrupt => self.ac4 += 1,
        }
        self.last_abort = Some(info);
    }

    /// `attempts,ac2,ac3,ac4,prefetch_events,body_events`
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.attempts, self.ac2, self.ac3, self.ac4, self.prefetch_events, self.body_events
        )
    }
}

/// Why a body stopped early.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    Abort(AbortInfo),
    Undeclared { addr: u64, kind: AccessKind },
    OutOfBounds { addr: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxnError {
    #[error("declaration exceeds {level} capacity (AC3)")]
    Capacity { level: CacheLevel, stats: TxnStats },
    #[error("transaction still aborting after {} attempts", stats.attempts)]
    RetryCapExceeded { stats: TxnStats },
    #[error("body {kind:?} of undeclared address {addr:#x}")]
    Undeclared {
        addr: u64,
        kind: AccessKind,
        stats: TxnStats,
    },
    #[error("address {addr:#x} outside the simulated address space")]
    OutOfBounds { addr: u64, stats: TxnStats },
}

impl TxnError {
    pub fn stats(&self) -> &TxnStats {
        match self {
            TxnError::Capacity { stats, .. }
            | TxnError::RetryCapExceeded { stats }
            | TxnError::Undeclared { stats, .. }
            | TxnError::OutOfBounds { stats, .. } => stats,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxnOptions {
    pub retry_cap: u64,
    /// Skipping the prefetch phase leaves body accesses free to miss.
    pub prefetch: bool,
}

impl Default for TxnOptions {
    fn default() -> Self {
        Self {
            retry_cap: DEFAULT_RETRY_CAP,
            prefetch: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Committed<T> {
    pub value: T,
    pub stats: TxnStats,
}

/// Handle the body uses to touch memory inside a transaction.
pub struct TxnCtx<'a> {
    machine: &'a mut Machine,
    decl: &'a NormalizedDecl,
    interrupts: &'a mut Interrupts,
    buffer: HashMap<u64, u64>,
    accesses: u64,
}

impl TxnCtx<'_> {
    fn step(&mut self, addr: u64, kind: AccessKind) -> Result<(), Fault> {
        self.accesses += 1;
        if self.interrupts.check() {
            return Err(Fault::Abort(AbortInfo {
                cause: AbortCause::Interrupt,
                line: None,
            }));
        }
        let line = self.machine.config().line_of(addr);
        let declared = match kind {
            AccessKind::Read => self.decl.may_read(line),
            AccessKind::Write => self.decl.may_write(line),
        };
        if !declared {
            return Err(Fault::Undeclared { addr, kind });
        }
        match self.machine.cache.access(addr, kind, true) {
            Ok(_) => Ok(()),
            Err(CacheError::Pin(v)) => Err(Fault::Abort(AbortInfo {
                cause: AbortCause::Eviction,
                line: Some(v.line),
            })),
            Err(CacheError::OutOfBounds { addr, .. }) => Err(Fault::OutOfBounds { addr }),
        }
    }

    pub fn read(&mut self, addr: u64) -> Result<u64, Fault> {
        self.step(addr, AccessKind::Read)?;
        Ok(self
            .buffer
            .get(&addr)
            .copied()
            .unwrap_or_else(|| self.machine.memory.load(addr)))
    }

    pub fn write(&mut self, addr: u64, value: u64) -> Result<(), Fault> {
        self.step(addr, AccessKind::Write)?;
        self.buffer.insert(addr, value);
        Ok(())
    }

    /// A memory-free step (a `nop`): only the interrupt model is consulted.
    pub fn tick(&mut self) -> Result<(), Fault> {
        self.accesses += 1;
        if self.interrupts.check() {
            return Err(Fault::Abort(AbortInfo {
                cause: AbortCause::Interrupt,
                line: None,
            }));
        }
        Ok(())
    }
}

/// Touches every declared line, read set first, each in ascending order.
/// Returns the number of events emitted.
pub fn prefetch(cache: &mut CacheHierarchy, decl: &NormalizedDecl) -> Result<u64, CacheError> {
    let before = cache.event_count();
    let line_size = cache.config().line_size;
    for &line in &decl.read_lines {
        cache.access(line * line_size, AccessKind::Read, true)?;
    }
    for &line in &decl.write_lines {
        cache.access(line * line_size, AccessKind::Write, true)?;
    }
    Ok(cache.event_count() - before)
}

/// Runs `body` as a transaction over `decl`, retrying on aborts.
///
/// The body may be executed several times and must derive everything it
/// writes from what it reads through the context.
pub fn run_txn<T, F>(
    machine: &mut Machine,
    decl: &TxnDeclaration,
    interrupts: &mut Interrupts,
    options: &TxnOptions,
    mut body: F,
) -> Result<Committed<T>, TxnError>
where
    F: FnMut(&mut TxnCtx<'_>) -> Result<T, Fault>,
{
    let norm = decl.normalize(machine.config());
    let mut stats = TxnStats {
        prefetched: options.prefetch,
        ..TxnStats::default()
    };

    if let Some(level) = norm.capacity_violation(machine.config()) {
        stats.attempts = 1;
        stats.record(AbortInfo {
            cause: AbortCause::Capacity,
            line: None,
        });
        return Err(TxnError::Capacity { level, stats });
    }

    while stats.attempts < options.retry_cap {
        stats.attempts += 1;
        interrupts.begin_attempt();

        if options.prefetch {
            let before = machine.cache.event_count();
            let fetched = prefetch(&mut machine.cache, &norm);
            stats.prefetch_events += machine.cache.event_count() - before;
            match fetched {
                Ok(_) => {}
                Err(CacheError::Pin(v)) => {
                    machine.cache.unpin_all();
                    stats.record(AbortInfo {
                        cause: AbortCause::Eviction,
                        line: Some(v.line),
                    });
                    continue;
                }
                Err(CacheError::OutOfBounds { addr, .. }) => {
                    machine.cache.unpin_all();
                    return Err(TxnError::OutOfBounds { addr, stats });
                }
            }
        }

        let before = machine.cache.event_count();
        let mut ctx = TxnCtx {
            machine: &mut *machine,
            decl: &norm,
            interrupts: &mut *interrupts,
            buffer: HashMap::new(),
            accesses: 0,
        };
        let result = body(&mut ctx);
        let buffer = std::mem::take(&mut ctx.buffer);
        stats.body_accesses += ctx.accesses;
        stats.body_events += machine.cache.event_count() - before;

        match result {
            Ok(value) => {
                for (addr, v) in buffer {
                    machine.memory.store(addr, v);
                }
                let before = machine.cache.event_count();
                for &line in &norm.write_lines {
                    machine.cache.clean_line(line);
                }
                stats.commit_events += machine.cache.event_count() - before;
                machine.cache.unpin_all();
                stats.committed = true;
                return Ok(Committed { value, stats });
            }
            Err(Fault::Abort(info)) => {
                machine.cache.unpin_all();
                stats.record(info);
            }
            Err(Fault::Undeclared { addr, kind }) => {
                machine.cache.unpin_all();
                return Err(TxnError::Undeclared { addr, kind, stats });
            }
            Err(Fault::OutOfBounds { addr }) => {
                machine.cache.unpin_all();
                return Err(TxnError::OutOfBounds { addr, stats });
            }
        }
    }
    Err(TxnError::RetryCapExceeded { stats })
}
