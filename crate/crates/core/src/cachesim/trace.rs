//! Externally visible events: everything that crosses the LLC boundary.

use std::fmt;
use std::io::{self, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    LlcMissRead,
    WriteBack,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::LlcMissRead => "llc-miss-read",
            EventKind::WriteBack => "write-back",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AccessEvent {
    pub kind: EventKind,
    /// Byte address divided by the line size.
    pub line: u64,
    pub sequence: u64,
}

impl AccessEvent {
    /// The part of an event an observer can compare: sequence is positional.
    pub fn observable(&self) -> (EventKind, u64) {
        (self.kind, self.line)
    }
}

/// Immutable, ordered list of events.
///
/// Equality ignores `sequence` and compares `(kind, line)` pointwise.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    events: Vec<AccessEvent>,
}

impl Trace {
    pub fn new(events: Vec<AccessEvent>) -> Self {
        Self { events }
    }

    pub fn events(&self) -> &[AccessEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn is_prefix_of(&self, other: &Trace) -> bool {
        self.len() <= other.len()
            && self
                .events
                .iter()
                .zip(&other.events)
                .all(|(a, b)| a.observable() == b.observable())
    }

    /// Index of the first position where the two traces differ, if any.
    pub fn first_divergence(&self, other: &Trace) -> Option<usize> {
        let common = self.len().min(other.len());
        (0..common)
            .find(|&i| self.events[i].observable() != other.events[i].observable())
            .or(if self.len() != other.len() {
                Some(common)
            } else {
                None
            })
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Writes `sequence,kind,line_address` lines.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.events {
            writeln!(out, "{},{},{}", e.sequence, e.kind, e.line)?;
        }
        Ok(())
    }
}

impl PartialEq for Trace {
    fn eq(&self, other: &Self) -> bool {
        self.first_divergence(other).is_none()
    }
}

impl Eq for Trace {}

/// Whether the recorder keeps the full event list or only counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceMode {
    #[default]
    Record,
    CountOnly,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Recorder {
    mode: TraceMode,
    events: Vec<AccessEvent>,
    next_sequence: u64,
    misses: u64,
    write_backs: u64,
}

impl Recorder {
    pub(crate) fn new(mode: TraceMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub(crate) fn push(&mut self, kind: EventKind, line: u64) {
        match kind {
            EventKind::LlcMissRead => self.misses += 1,
            EventKind::WriteBack => self.write_backs += 1,
        }
        if self.mode == TraceMode::Record {
            self.events.push(AccessEvent {
                kind,
                line,
                sequence: self.next_sequence,
            });
        }
        self.next_sequence += 1;
    }

    pub(crate) fn total(&self) -> u64 {
        self.next_sequence
    }

    pub(crate) fn misses(&self) -> u64 {
        self.misses
    }

    pub(crate) fn write_backs(&self) -> u64 {
        self.write_backs
    }

    pub(crate) fn snapshot(&self) -> Trace {
        Trace::new(self.events.clone())
    }

    pub(crate) fn tail_from(&self, sequence: u64) -> &[AccessEvent] {
        let start = self.events.partition_point(|e| e.sequence < sequence);
        &self.events[start..]
    }

    pub(crate) fn reset(&mut self) {
        self.events.clear();
        self.next_sequence = 0;
        self.misses = 0;
        self.write_backs = 0;
    }
}
