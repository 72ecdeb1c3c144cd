//! Conflict-free placement of a transaction's regions.
//!
//! A placement is valid when, for the lines it occupies:
//!
//! - every L1 set holds at most `l1_ways` write lines, and at most
//!   `l1_ways - 1` if any read line also maps to it (a read served from the
//!   LLC still needs one evictable L1 way);
//! - every LLC set holds at most `llc_ways` lines of any kind;
//! - regions do not overlap.
//!
//! [`check_conflicts`] recomputes all of this from scratch and serves as the
//! independent check on [`plan_layout`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

use crate::cachesim::{AccessKind, CacheConfig, CacheLevel};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub name: String,
    pub size_bytes: u64,
    pub access: AccessKind,
}

impl Region {
    pub fn read(name: impl Into<String>, size_bytes: u64) -> Self {
        Self {
            name: name.into(),
            size_bytes,
            access: AccessKind::Read,
        }
    }

    pub fn write(name: impl Into<String>, size_bytes: u64) -> Self {
        Self {
            name: name.into(),
            size_bytes,
            access: AccessKind::Write,
        }
    }

    fn lines(&self, line_size: u64) -> u64 {
        self.size_bytes.div_ceil(line_size)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub name: String,
    pub base: u64,
    pub size_bytes: u64,
    pub access: AccessKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutPlan {
    pub assignments: Vec<Assignment>,
    /// Write lines per L1 set.
    pub per_set_load_l1: BTreeMap<usize, usize>,
    /// Lines of any kind per LLC set.
    pub per_set_load_llc: BTreeMap<usize, usize>,
}

impl LayoutPlan {
    pub fn base_of(&self, name: &str) -> Option<u64> {
        self.assignments
            .iter()
            .find(|a| a.name == name)
            .map(|a| a.base)
    }

    /// One past the last byte used, rounded to a line.
    pub fn extent(&self, line_size: u64) -> u64 {
        self.assignments
            .iter()
            .map(|a| a.base + a.size_bytes.div_ceil(line_size) * line_size)
            .max()
            .unwrap_or(0)
    }

    /// Shifts every base by `offset`. Set loads are preserved when `offset`
    /// is a multiple of [`CacheConfig::mapping_period`].
    pub fn rebase(&self, offset: u64, config: &CacheConfig) -> LayoutPlan {
        assert_eq!(
            offset % config.mapping_period(),
            0,
            "rebase offset must preserve set mapping"
        );
        let mut plan = self.clone();
        for a in &mut plan.assignments {
            a.base += offset;
        }
        plan
    }

    /// `region_name,base_address,size_bytes` lines.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for a in &self.assignments {
            writeln!(out, "{},{},{}", a.name, a.base, a.size_bytes)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SetViolation {
    pub level: CacheLevel,
    pub set: usize,
    pub load: usize,
    pub limit: usize,
}

impl fmt::Display for SetViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} set {} load {} > {}",
            self.level, self.set, self.load, self.limit
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("regions need {needed} lines at {level}, capacity is {capacity}")]
    InfeasibleCapacity {
        level: CacheLevel,
        needed: u64,
        capacity: u64,
    },
    #[error("no placement found for region {region:?}: {violation}")]
    InfeasibleArrangement {
        region: String,
        violation: SetViolation,
    },
    #[error("region {0:?} has zero size")]
    EmptyRegion(String),
    #[error("duplicate region name {0:?}")]
    DuplicateName(String),
}

impl LayoutError {
    pub fn level(&self) -> Option<CacheLevel> {
        match self {
            LayoutError::InfeasibleCapacity { level, .. } => Some(*level),
            LayoutError::InfeasibleArrangement { violation, .. } => Some(violation.level),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Loads {
    l1_write: BTreeMap<usize, usize>,
    l1_read: BTreeSet<usize>,
    llc: BTreeMap<usize, usize>,
}

impl Loads {
    fn add(&mut self, first_line: u64, lines: u64, access: AccessKind, config: &CacheConfig) {
        for line in first_line..first_line + lines {
            let l1 = config.l1_set_of_line(line);
            match access {
                AccessKind::Write => *self.l1_write.entry(l1).or_default() += 1,
                AccessKind::Read => {
                    self.l1_read.insert(l1);
                }
            }
            *self.llc.entry(config.llc_set_of_line(line)).or_default() += 1;
        }
    }

    fn violations(&self, config: &CacheConfig) -> Vec<SetViolation> {
        let mut out = Vec::new();
        for (&set, &load) in &self.l1_write {
            let limit = if self.l1_read.contains(&set) {
                config.l1_ways - 1
            } else {
                config.l1_ways
            };
            if load > limit {
                out.push(SetViolation {
                    level: CacheLevel::L1,
                    set,
                    load,
                    limit,
                });
            }
        }
        for (&set, &load) in &self.llc {
            if load > config.llc_ways {
                out.push(SetViolation {
                    level: CacheLevel::Llc,
                    set,
                    load,
                    limit: config.llc_ways,
                });
            }
        }
        out
    }

    /// First violation caused by adding the lines, checking only the sets
    /// those lines touch.
    fn try_add(
        &self,
        first_line: u64,
        lines: u64,
        access: AccessKind,
        config: &CacheConfig,
    ) -> Option<SetViolation> {
        let mut l1_write: BTreeMap<usize, usize> = BTreeMap::new();
        let mut l1_read: BTreeSet<usize> = BTreeSet::new();
        let mut llc: BTreeMap<usize, usize> = BTreeMap::new();
        for line in first_line..first_line + lines {
            let l1 = config.l1_set_of_line(line);
            match access {
                AccessKind::Write => *l1_write.entry(l1).or_default() += 1,
                AccessKind::Read => {
                    l1_read.insert(l1);
                }
            }
            *llc.entry(config.llc_set_of_line(line)).or_default() += 1;
        }
        let l1_sets: BTreeSet<usize> = l1_write.keys().chain(l1_read.iter()).copied().collect();
        for set in l1_sets {
            let load = self.l1_write.get(&set).copied().unwrap_or(0)
                + l1_write.get(&set).copied().unwrap_or(0);
            let has_read = self.l1_read.contains(&set) || l1_read.contains(&set);
            let limit = if has_read {
                config.l1_ways - 1
            } else {
                config.l1_ways
            };
            if load > limit {
                return Some(SetViolation {
                    level: CacheLevel::L1,
                    set,
                    load,
                    limit,
                });
            }
        }
        for (set, add) in llc {
            let load = self.llc.get(&set).copied().unwrap_or(0) + add;
            if load > config.llc_ways {
                return Some(SetViolation {
                    level: CacheLevel::Llc,
                    set,
                    load,
                    limit: config.llc_ways,
                });
            }
        }
        None
    }
}

/// Places `regions` first-fit: each region goes to the lowest line offset,
/// at or after the end of the previous region, at which no set bound is
/// exceeded. Only one mapping period of offsets is searched per region,
/// since set loads repeat beyond it.
pub fn plan_layout(regions: &[Region], config: &CacheConfig) -> Result<LayoutPlan, LayoutError> {
    let line_size = config.line_size;
    let mut names = BTreeSet::new();
    for r in regions {
        if r.size_bytes == 0 {
            return Err(LayoutError::EmptyRegion(r.name.clone()));
        }
        if !names.insert(r.name.as_str()) {
            return Err(LayoutError::DuplicateName(r.name.clone()));
        }
    }

    let write_lines: u64 = regions
        .iter()
        .filter(|r| r.access == AccessKind::Write)
        .map(|r| r.lines(line_size))
        .sum();
    if write_lines > config.l1_capacity_lines() {
        return Err(LayoutError::InfeasibleCapacity {
            level: CacheLevel::L1,
            needed: write_lines,
            capacity: config.l1_capacity_lines(),
        });
    }
    let all_lines: u64 = regions.iter().map(|r| r.lines(line_size)).sum();
    if all_lines > config.llc_capacity_lines() {
        return Err(LayoutError::InfeasibleCapacity {
            level: CacheLevel::Llc,
            needed: all_lines,
            capacity: config.llc_capacity_lines(),
        });
    }

    let period_lines = config.mapping_period() / line_size;
    let mut loads = Loads::default();
    let mut cursor = 0u64;
    let mut assignments = Vec::with_capacity(regions.len());
    for r in regions {
        let lines = r.lines(line_size);
        let mut first_violation = None;
        let mut chosen = None;
        for offset in 0..period_lines {
            match loads.try_add(cursor + offset, lines, r.access, config) {
                None => {
                    chosen = Some(cursor + offset);
                    break;
                }
                Some(v) => {
                    first_violation.get_or_insert(v);
                }
            }
        }
        let Some(first_line) = chosen else {
            return Err(LayoutError::InfeasibleArrangement {
                region: r.name.clone(),
                violation: first_violation.expect("at least one offset tried"),
            });
        };
        loads.add(first_line, lines, r.access, config);
        cursor = first_line + lines;
        assignments.push(Assignment {
            name: r.name.clone(),
            base: first_line * line_size,
            size_bytes: r.size_bytes,
            access: r.access,
        });
    }
    debug_assert!(loads.violations(config).is_empty());
    Ok(LayoutPlan {
        assignments,
        per_set_load_l1: loads.l1_write,
        per_set_load_llc: loads.llc,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConflictReport {
    pub per_set_load_l1: BTreeMap<usize, usize>,
    pub per_set_load_llc: BTreeMap<usize, usize>,
    pub violations: Vec<SetViolation>,
    /// Pairs of region names whose byte ranges intersect.
    pub overlaps: Vec<(String, String)>,
    /// Regions the plan does not assign.
    pub unassigned: Vec<String>,
    pub valid: bool,
}

/// Recomputes set loads of `plan` line by line and checks every bound.
pub fn check_conflicts(
    plan: &LayoutPlan,
    regions: &[Region],
    config: &CacheConfig,
) -> ConflictReport {
    let line_size = config.line_size;
    let mut loads = Loads::default();
    let mut placed: Vec<(&str, u64, u64)> = Vec::new();
    let mut unassigned = Vec::new();
    for r in regions {
        let Some(base) = plan.base_of(&r.name) else {
            unassigned.push(r.name.clone());
            continue;
        };
        let first = base / line_size;
        let last = (base + r.size_bytes).div_ceil(line_size);
        loads.add(first, last - first, r.access, config);
        placed.push((&r.name, base, base + r.size_bytes));
    }
    let mut overlaps = Vec::new();
    for (i, a) in placed.iter().enumerate() {
        for b in &placed[i + 1..] {
            if a.1 < b.2 && b.1 < a.2 {
                overlaps.push((a.0.to_string(), b.0.to_string()));
            }
        }
    }
    let violations = loads.violations(config);
    let valid = violations.is_empty() && overlaps.is_empty() && unassigned.is_empty();
    ConflictReport {
        per_set_load_l1: loads.l1_write,
        per_set_load_llc: loads.llc,
        violations,
        overlaps,
        unassigned,
        valid,
    }
}
