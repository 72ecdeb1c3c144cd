use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Geometry of the simulated two-level inclusive cache hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheConfig {
    pub line_size: u64,
    pub l1_sets: usize,
    pub l1_ways: usize,
    pub llc_sets: usize,
    pub llc_ways: usize,
    /// Size of the flat simulated address space in bytes.
    pub address_space: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{field} must be a power of two, got {value}")]
    NotPowerOfTwo { field: &'static str, value: u64 },
    #[error("{field} must be non-zero")]
    Zero { field: &'static str },
    #[error("L1 capacity {l1} exceeds LLC capacity {llc}")]
    L1LargerThanLlc { l1: u64, llc: u64 },
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid number {value:?}")]
    BadNumber { line: usize, value: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

impl Default for CacheConfig {
    /// 32 KiB 8-way L1, 8 MiB 16-way LLC, 64-byte lines, 1 GiB address space.
    fn default() -> Self {
        Self {
            line_size: 64,
            l1_sets: 64,
            l1_ways: 8,
            llc_sets: 8192,
            llc_ways: 16,
            address_space: 1 << 30,
        }
    }
}

impl CacheConfig {
    pub fn new(
        line_size: u64,
        l1_sets: usize,
        l1_ways: usize,
        llc_sets: usize,
        llc_ways: usize,
    ) -> Result<Self, ConfigError> {
        let cfg = Self {
            line_size,
            l1_sets,
            l1_ways,
            llc_sets,
            llc_ways,
            address_space: CacheConfig::default().address_space,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds a geometry from capacities in bytes with the given associativities.
    pub fn from_capacities(
        line_size: u64,
        l1_bytes: u64,
        l1_ways: usize,
        llc_bytes: u64,
        llc_ways: usize,
    ) -> Result<Self, ConfigError> {
        let l1_sets = (l1_bytes / line_size / l1_ways as u64) as usize;
        let llc_sets = (llc_bytes / line_size / llc_ways as u64) as usize;
        Self::new(line_size, l1_sets, l1_ways, llc_sets, llc_ways)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let pow2 = |field: &'static str, value: u64| {
            if value == 0 {
                Err(ConfigError::Zero { field })
            } else if !value.is_power_of_two() {
                Err(ConfigError::NotPowerOfTwo { field, value })
            } else {
                Ok(())
            }
        };
        pow2("line_size", self.line_size)?;
        pow2("l1_sets", self.l1_sets as u64)?;
        pow2("llc_sets", self.llc_sets as u64)?;
        if self.line_size < 8 {
            // words are 8 bytes and must not straddle lines
            return Err(ConfigError::NotPowerOfTwo {
                field: "line_size",
                value: self.line_size,
            });
        }
        if self.l1_ways == 0 {
            return Err(ConfigError::Zero { field: "l1_ways" });
        }
        if self.llc_ways == 0 {
            return Err(ConfigError::Zero { field: "llc_ways" });
        }
        if self.address_space == 0 {
            return Err(ConfigError::Zero {
                field: "address_space",
            });
        }
        if self.l1_capacity() > self.llc_capacity() {
            return Err(ConfigError::L1LargerThanLlc {
                l1: self.l1_capacity(),
                llc: self.llc_capacity(),
            });
        }
        Ok(())
    }

    pub fn l1_capacity(&self) -> u64 {
        self.l1_sets as u64 * self.l1_ways as u64 * self.line_size
    }

    pub fn llc_capacity(&self) -> u64 {
        self.llc_sets as u64 * self.llc_ways as u64 * self.line_size
    }

    pub fn l1_capacity_lines(&self) -> u64 {
        self.l1_sets as u64 * self.l1_ways as u64
    }

    pub fn llc_capacity_lines(&self) -> u64 {
        self.llc_sets as u64 * self.llc_ways as u64
    }

    #[inline]
    pub fn line_of(&self, addr: u64) -> u64 {
        addr / self.line_size
    }

    #[inline]
    pub fn l1_set_of_line(&self, line: u64) -> usize {
        (line % self.l1_sets as u64) as usize
    }

    #[inline]
    pub fn llc_set_of_line(&self, line: u64) -> usize {
        (line % self.llc_sets as u64) as usize
    }

    /// Byte span after which the set mapping of both levels repeats.
    pub fn mapping_period(&self) -> u64 {
        self.l1_sets.max(self.llc_sets) as u64 * self.line_size
    }

    /// Parses `key=value` lines. Blank lines and `#` comments are ignored;
    /// missing keys keep their default values.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = CacheConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: raw.to_string(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let num: u64 = value.parse().map_err(|_| ConfigError::BadNumber {
                line,
                value: value.to_string(),
            })?;
            match key {
                "line_size" => cfg.line_size = num,
                "l1_sets" => cfg.l1_sets = num as usize,
                "l1_ways" => cfg.l1_ways = num as usize,
                "llc_sets" => cfg.llc_sets = num as usize,
                "llc_ways" => cfg.llc_ways = num as usize,
                "address_space" => cfg.address_space = num,
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }
}

impl fmt::Display for CacheConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "line_size={}", self.line_size)?;
        writeln!(f, "l1_sets={}", self.l1_sets)?;
        writeln!(f, "l1_ways={}", self.l1_ways)?;
        writeln!(f, "llc_sets={}", self.llc_sets)?;
        writeln!(f, "llc_ways={}", self.llc_ways)?;
        writeln!(f, "address_space={}", self.address_space)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_evaluation_platform() {
        let cfg = CacheConfig::default();
        assert_eq!(cfg.l1_capacity(), 32 * 1024);
        assert_eq!(cfg.llc_capacity(), 8 * 1024 * 1024);
        assert_eq!(cfg.line_size, 64);
        cfg.validate().unwrap();
    }

    #[test]
    fn parse_round_trips_display() {
        let cfg = CacheConfig::new(64, 2, 2, 16, 4).unwrap();
        assert_eq!(CacheConfig::parse(&cfg.to_string()).unwrap(), cfg);
    }

    #[test]
    fn parse_rejects_bad_input() {
        assert!(matches!(
            CacheConfig::parse("l1_sets=3"),
            Err(ConfigError::NotPowerOfTwo {
                field: "l1_sets",
                ..
            })
        ));
        assert!(matches!(
            CacheConfig::parse("bogus=1"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(
            CacheConfig::parse("\n# c\nl1_ways"),
            Err(ConfigError::Syntax { line: 3, .. })
        ));
        assert!(matches!(
            CacheConfig::parse("llc_sets=1\nllc_ways=1"),
            Err(ConfigError::L1LargerThanLlc { .. })
        ));
    }
}
