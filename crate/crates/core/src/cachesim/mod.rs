//! Deterministic two-level inclusive set-associative cache.
//!
//! The hierarchy tracks line metadata only (residency, dirtiness, pins);
//! data values live in [`crate::machine::Memory`]. Every event that crosses
//! the LLC boundary is appended to the trace recorder:
//!
//! - an LLC miss emits `llc-miss-read` for the requested line;
//! - evicting a dirty line from the LLC emits `write-back`.
//!
//! L1 misses served by the LLC are not events. Replacement is LRU within a
//! set at both levels. L1 evictions of dirty lines fold the dirty bit into
//! the LLC copy; LLC evictions back-invalidate the L1 copy.
//!
//! Pins model transactional read/write-set tracking. A pinned line is never
//! chosen as an LLC victim; a write-pinned line is never chosen as an L1
//! victim. When no eligible victim exists the access fails with
//! [`PinViolation`] and the cache state is left untouched.

mod config;
mod trace;

pub use config::{CacheConfig, ConfigError};
pub use trace::{AccessEvent, EventKind, Trace, TraceMode};

use std::fmt;

use thiserror::Error;

use trace::Recorder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessOutcome {
    L1Hit,
    LlcHit,
    LlcMiss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CacheLevel {
    L1,
    Llc,
}

impl fmt::Display for CacheLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CacheLevel::L1 => "L1",
            CacheLevel::Llc => "LLC",
        })
    }
}

/// Transactional tracking state of a resident line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub enum Pin {
    #[default]
    None,
    Read,
    Write,
}

impl Pin {
    fn requested(kind: AccessKind) -> Self {
        match kind {
            AccessKind::Read => Pin::Read,
            AccessKind::Write => Pin::Write,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("pin violation at {level} set {set} installing line {line}")]
pub struct PinViolation {
    pub level: CacheLevel,
    pub set: usize,
    /// The line whose installation found every candidate victim pinned.
    pub line: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CacheError {
    #[error("address {addr:#x} outside the {limit:#x}-byte address space")]
    OutOfBounds { addr: u64, limit: u64 },
    #[error(transparent)]
    Pin(#[from] PinViolation),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineState {
    pub line: u64,
    pub dirty: bool,
    pub pin: Pin,
}

/// LRU-ordered sets; index 0 of each set is least recently used.
#[derive(Debug, Clone)]
struct SetArray {
    ways: usize,
    sets: Vec<Vec<LineState>>,
}

impl SetArray {
    fn new(sets: usize, ways: usize) -> Self {
        Self {
            ways,
            sets: vec![Vec::new(); sets],
        }
    }

    fn find(&self, set: usize, line: u64) -> Option<usize> {
        self.sets[set].iter().position(|e| e.line == line)
    }

    fn touch(&mut self, set: usize, pos: usize) -> &mut LineState {
        let s = &mut self.sets[set];
        let entry = s.remove(pos);
        s.push(entry);
        s.last_mut().unwrap()
    }

    fn clear(&mut self) {
        for s in &mut self.sets {
            s.clear();
        }
    }
}

#[derive(Debug, Clone)]
pub struct CacheHierarchy {
    config: CacheConfig,
    l1: SetArray,
    llc: SetArray,
    recorder: Recorder,
    pinned: Vec<u64>,
}

impl CacheHierarchy {
    pub fn new(config: CacheConfig) -> Self {
        Self::with_mode(config, TraceMode::Record)
    }

    pub fn with_mode(config: CacheConfig, mode: TraceMode) -> Self {
        config.validate().expect("invalid cache configuration");
        Self {
            l1: SetArray::new(config.l1_sets, config.l1_ways),
            llc: SetArray::new(config.llc_sets, config.llc_ways),
            recorder: Recorder::new(mode),
            pinned: Vec::new(),
            config,
        }
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    /// Performs one access. With `pin`, the line is marked as belonging to
    /// the open transaction's read set (for reads) or write set (for writes)
    /// at both levels.
    pub fn access(
        &mut self,
        addr: u64,
        kind: AccessKind,
        pin: bool,
    ) -> Result<AccessOutcome, CacheError> {
        self.check_bounds(addr)?;
        let line = self.config.line_of(addr);
        let l1_set = self.config.l1_set_of_line(line);
        let llc_set = self.config.llc_set_of_line(line);
        let want = if pin { Pin::requested(kind) } else { Pin::None };
        let write = kind == AccessKind::Write;

        if let Some(pos) = self.l1.find(l1_set, line) {
            let entry = self.l1.touch(l1_set, pos);
            entry.dirty |= write;
            if want > entry.pin {
                entry.pin = want;
                let llc_pos = self.llc.find(llc_set, line).expect("inclusion violated");
                self.llc.sets[llc_set][llc_pos].pin = want;
                self.pinned.push(line);
            }
            return Ok(AccessOutcome::L1Hit);
        }

        if let Some(pos) = self.llc.find(llc_set, line) {
            let l1_victim = self.l1_victim(l1_set, None, line)?;
            self.evict_l1(l1_set, l1_victim);
            let entry = self.llc.touch(llc_set, pos);
            if want > entry.pin {
                entry.pin = want;
                self.pinned.push(line);
            }
            let pin_state = entry.pin;
            self.l1.sets[l1_set].push(LineState {
                line,
                dirty: write,
                pin: pin_state,
            });
            return Ok(AccessOutcome::LlcHit);
        }

        // LLC miss: pick both victims before mutating anything.
        let llc_victim = self.llc_victim(llc_set, line)?;
        let llc_victim_line = llc_victim.map(|p| self.llc.sets[llc_set][p].line);
        let l1_victim = self.l1_victim(l1_set, llc_victim_line, line)?;
        let l1_victim_line = l1_victim.map(|p| self.l1.sets[l1_set][p].line);

        if let Some(p) = llc_victim {
            let victim = self.llc.sets[llc_set].remove(p);
            let mut dirty = victim.dirty;
            let vset = self.config.l1_set_of_line(victim.line);
            if let Some(q) = self.l1.find(vset, victim.line) {
                dirty |= self.l1.sets[vset].remove(q).dirty;
            }
            if dirty {
                self.recorder.push(EventKind::WriteBack, victim.line);
            }
        }
        self.recorder.push(EventKind::LlcMissRead, line);
        if want != Pin::None {
            self.pinned.push(line);
        }
        self.llc.sets[llc_set].push(LineState {
            line,
            dirty: false,
            pin: want,
        });
        if let Some(vline) = l1_victim_line {
            // Position may have shifted if the back-invalidation hit this set.
            let q = self.l1.find(l1_set, vline).expect("victim vanished");
            self.evict_l1(l1_set, Some(q));
        }
        self.l1.sets[l1_set].push(LineState {
            line,
            dirty: write,
            pin: want,
        });
        Ok(AccessOutcome::LlcMiss)
    }

    /// An access that bypasses the hierarchy: every read is an external
    /// read and every write an external write-back. Any cached copy is
    /// written back (if dirty) and invalidated first.
    pub fn access_uncached(&mut self, addr: u64, kind: AccessKind) -> Result<(), CacheError> {
        self.check_bounds(addr)?;
        let line = self.config.line_of(addr);
        self.invalidate(line)?;
        let event = match kind {
            AccessKind::Read => EventKind::LlcMissRead,
            AccessKind::Write => EventKind::WriteBack,
        };
        self.recorder.push(event, line);
        Ok(())
    }

    fn invalidate(&mut self, line: u64) -> Result<(), CacheError> {
        let llc_set = self.config.llc_set_of_line(line);
        let Some(p) = self.llc.find(llc_set, line) else {
            return Ok(());
        };
        if self.llc.sets[llc_set][p].pin != Pin::None {
            return Err(PinViolation {
                level: CacheLevel::Llc,
                set: llc_set,
                line,
            }
            .into());
        }
        let mut dirty = self.llc.sets[llc_set].remove(p).dirty;
        let l1_set = self.config.l1_set_of_line(line);
        if let Some(q) = self.l1.find(l1_set, line) {
            dirty |= self.l1.sets[l1_set].remove(q).dirty;
        }
        if dirty {
            self.recorder.push(EventKind::WriteBack, line);
        }
        Ok(())
    }

    fn check_bounds(&self, addr: u64) -> Result<(), CacheError> {
        if addr >= self.config.address_space {
            Err(CacheError::OutOfBounds {
                addr,
                limit: self.config.address_space,
            })
        } else {
            Ok(())
        }
    }

    /// Position of the L1 victim needed to install a line into `set`, if
    /// any. `leaving` is a line that will have been removed by the time the
    /// install happens.
    fn l1_victim(
        &self,
        set: usize,
        leaving: Option<u64>,
        line: u64,
    ) -> Result<Option<usize>, PinViolation> {
        let entries = &self.l1.sets[set];
        let occupied = entries.iter().filter(|e| Some(e.line) != leaving).count();
        if occupied < self.l1.ways {
            return Ok(None);
        }
        entries
            .iter()
            .position(|e| Some(e.line) != leaving && e.pin != Pin::Write)
            .map(Some)
            .ok_or(PinViolation {
                level: CacheLevel::L1,
                set,
                line,
            })
    }

    fn llc_victim(&self, set: usize, line: u64) -> Result<Option<usize>, PinViolation> {
        let entries = &self.llc.sets[set];
        if entries.len() < self.llc.ways {
            return Ok(None);
        }
        entries
            .iter()
            .position(|e| e.pin == Pin::None)
            .map(Some)
            .ok_or(PinViolation {
                level: CacheLevel::Llc,
                set,
                line,
            })
    }

    fn evict_l1(&mut self, set: usize, pos: Option<usize>) {
        let Some(pos) = pos else { return };
        let victim = self.l1.sets[set].remove(pos);
        if victim.dirty {
            let llc_set = self.config.llc_set_of_line(victim.line);
            let q = self
                .llc
                .find(llc_set, victim.line)
                .expect("inclusion violated");
            self.llc.sets[llc_set][q].dirty = true;
        }
    }

    /// Writes back every dirty line in ascending line order and empties the
    /// cache. Returns the emitted events.
    pub fn flush_all(&mut self) -> Vec<AccessEvent> {
        let mut dirty: Vec<u64> = Vec::new();
        for set in &self.llc.sets {
            for e in set {
                let l1_set = self.config.l1_set_of_line(e.line);
                let l1_dirty = self
                    .l1
                    .find(l1_set, e.line)
                    .is_some_and(|q| self.l1.sets[l1_set][q].dirty);
                if e.dirty || l1_dirty {
                    dirty.push(e.line);
                }
            }
        }
        dirty.sort_unstable();
        let first = self.recorder.total();
        for &line in &dirty {
            self.recorder.push(EventKind::WriteBack, line);
        }
        self.l1.clear();
        self.llc.clear();
        self.pinned.clear();
        dirty
            .into_iter()
            .enumerate()
            .map(|(i, line)| AccessEvent {
                kind: EventKind::WriteBack,
                line,
                sequence: first + i as u64,
            })
            .collect()
    }

    /// Writes back `line` if it is resident and dirty; the line stays
    /// resident and clean. Returns whether an event was emitted.
    pub fn clean_line(&mut self, line: u64) -> bool {
        let llc_set = self.config.llc_set_of_line(line);
        let Some(p) = self.llc.find(llc_set, line) else {
            return false;
        };
        let mut dirty = std::mem::replace(&mut self.llc.sets[llc_set][p].dirty, false);
        let l1_set = self.config.l1_set_of_line(line);
        if let Some(q) = self.l1.find(l1_set, line) {
            dirty |= std::mem::replace(&mut self.l1.sets[l1_set][q].dirty, false);
        }
        if dirty {
            self.recorder.push(EventKind::WriteBack, line);
        }
        dirty
    }

    /// Clears every pin at both levels.
    pub fn unpin_all(&mut self) {
        for line in std::mem::take(&mut self.pinned) {
            let l1_set = self.config.l1_set_of_line(line);
            if let Some(q) = self.l1.find(l1_set, line) {
                self.l1.sets[l1_set][q].pin = Pin::None;
            }
            let llc_set = self.config.llc_set_of_line(line);
            if let Some(q) = self.llc.find(llc_set, line) {
                self.llc.sets[llc_set][q].pin = Pin::None;
            }
        }
    }

    pub fn snapshot_trace(&self) -> Trace {
        self.recorder.snapshot()
    }

    /// Empties the recorder; cache contents are untouched.
    pub fn reset_trace(&mut self) {
        self.recorder.reset();
    }

    /// Number of events emitted since the last reset.
    pub fn event_count(&self) -> u64 {
        self.recorder.total()
    }

    pub fn miss_count(&self) -> u64 {
        self.recorder.misses()
    }

    pub fn write_back_count(&self) -> u64 {
        self.recorder.write_backs()
    }

    /// Recorded events with sequence number at or after `sequence`.
    pub fn events_since(&self, sequence: u64) -> &[AccessEvent] {
        self.recorder.tail_from(sequence)
    }

    pub fn set_contents(&self, level: CacheLevel, set: usize) -> &[LineState] {
        match level {
            CacheLevel::L1 => &self.l1.sets[set],
            CacheLevel::Llc => &self.llc.sets[set],
        }
    }

    pub fn lookup(&self, level: CacheLevel, line: u64) -> Option<LineState> {
        let (arr, set) = match level {
            CacheLevel::L1 => (&self.l1, self.config.l1_set_of_line(line)),
            CacheLevel::Llc => (&self.llc, self.config.llc_set_of_line(line)),
        };
        arr.find(set, line).map(|p| arr.sets[set][p])
    }

    /// Checks occupancy bounds, set mapping, inclusion and pin agreement.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (set, entries) in self.l1.sets.iter().enumerate() {
            if entries.len() > self.l1.ways {
                return Err(format!("L1 set {set} holds {} lines", entries.len()));
            }
            for e in entries {
                if self.config.l1_set_of_line(e.line) != set {
                    return Err(format!("line {} in wrong L1 set {set}", e.line));
                }
                match self.lookup(CacheLevel::Llc, e.line) {
                    None => return Err(format!("line {} in L1 but not LLC", e.line)),
                    Some(l) if l.pin != e.pin => {
                        return Err(format!("line {} pin mismatch", e.line))
                    }
                    _ => {}
                }
            }
        }
        for (set, entries) in self.llc.sets.iter().enumerate() {
            if entries.len() > self.llc.ways {
                return Err(format!("LLC set {set} holds {} lines", entries.len()));
            }
            if let Some(e) = entries
                .iter()
                .find(|e| self.config.llc_set_of_line(e.line) != set)
            {
                return Err(format!("line {} in wrong LLC set {set}", e.line));
            }
        }
        Ok(())
    }
}
