//! Simulated memory behind the cache: a flat word store plus a bump allocator.

use crate::cachesim::{AccessKind, CacheConfig, CacheError, CacheHierarchy, TraceMode};

pub const WORD_BYTES: u64 = 8;

/// Word-addressed backing store. Unwritten words read as zero.
#[derive(Debug, Clone, Default)]
pub struct Memory {
    words: Vec<u64>,
}

impl Memory {
    #[inline]
    pub fn load(&self, addr: u64) -> u64 {
        self.words
            .get((addr / WORD_BYTES) as usize)
            .copied()
            .unwrap_or(0)
    }

    #[inline]
    pub fn store(&mut self, addr: u64, value: u64) {
        let idx = (addr / WORD_BYTES) as usize;
        if idx >= self.words.len() {
            self.words.resize(idx + 1, 0);
        }
        self.words[idx] = value;
    }
}

/// A contiguous array of words in simulated memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WordArray {
    pub base: u64,
    pub len: usize,
}

impl WordArray {
    #[inline]
    pub fn addr(&self, index: usize) -> u64 {
        debug_assert!(index < self.len, "index {index} out of {}", self.len);
        self.base + index as u64 * WORD_BYTES
    }

    pub fn bytes(&self) -> u64 {
        self.len as u64 * WORD_BYTES
    }
}

/// Cache hierarchy plus memory. Accesses made through the machine go
/// through the cache (or bypass it, for the uncached variants) and then
/// read or write the backing store.
#[derive(Debug, Clone)]
pub struct Machine {
    pub cache: CacheHierarchy,
    pub memory: Memory,
    next_free: u64,
}

impl Machine {
    pub fn new(config: CacheConfig) -> Self {
        Self::with_mode(config, TraceMode::Record)
    }

    pub fn with_mode(config: CacheConfig, mode: TraceMode) -> Self {
        Self {
            cache: CacheHierarchy::with_mode(config, mode),
            memory: Memory::default(),
            next_free: 0,
        }
    }

    pub fn config(&self) -> &CacheConfig {
        self.cache.config()
    }

    /// Reserves `bytes` at an address aligned to `align` (rounded up to a
    /// whole line).
    pub fn alloc_bytes(&mut self, bytes: u64, align: u64) -> u64 {
        let align = align.max(self.config().line_size);
        let base = self.next_free.div_ceil(align) * align;
        let line = self.config().line_size;
        self.next_free = base + bytes.div_ceil(line) * line;
        base
    }

    pub fn alloc_words(&mut self, len: usize) -> WordArray {
        let base = self.alloc_bytes(len as u64 * WORD_BYTES, 0);
        WordArray { base, len }
    }

    /// Places `values` in memory without touching the cache: the data is
    /// already in external memory when the program starts.
    pub fn host_load(&mut self, values: &[u64]) -> WordArray {
        let array = self.alloc_words(values.len());
        for (i, &v) in values.iter().enumerate() {
            self.memory.store(array.addr(i), v);
        }
        array
    }

    pub fn host_read(&self, array: WordArray) -> Vec<u64> {
        (0..array.len)
            .map(|i| self.memory.load(array.addr(i)))
            .collect()
    }

    pub fn read(&mut self, addr: u64) -> Result<u64, CacheError> {
        self.cache.access(addr, AccessKind::Read, false)?;
        Ok(self.memory.load(addr))
    }

    pub fn write(&mut self, addr: u64, value: u64) -> Result<(), CacheError> {
        self.cache.access(addr, AccessKind::Write, false)?;
        self.memory.store(addr, value);
        Ok(())
    }

    pub fn read_uncached(&mut self, addr: u64) -> Result<u64, CacheError> {
        self.cache.access_uncached(addr, AccessKind::Read)?;
        Ok(self.memory.load(addr))
    }

    pub fn write_uncached(&mut self, addr: u64, value: u64) -> Result<(), CacheError> {
        self.cache.access_uncached(addr, AccessKind::Write)?;
        self.memory.store(addr, value);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alloc_is_line_aligned_and_disjoint() {
        let mut m = Machine::new(CacheConfig::default());
        let a = m.alloc_words(3);
        let b = m.alloc_words(1);
        assert_eq!(a.base, 0);
        assert_eq!(b.base, 64);
        let c = m.alloc_bytes(10, 4096);
        assert_eq!(c, 4096);
    }

    #[test]
    fn host_load_is_invisible() {
        let mut m = Machine::new(CacheConfig::default());
        let arr = m.host_load(&[1, 2, 3]);
        assert_eq!(m.cache.event_count(), 0);
        assert_eq!(m.host_read(arr), vec![1, 2, 3]);
        assert_eq!(m.read(arr.addr(1)).unwrap(), 2);
        assert_eq!(m.cache.event_count(), 1);
    }
}
