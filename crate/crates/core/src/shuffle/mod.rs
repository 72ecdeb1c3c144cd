//! Cache-miss oblivious Melbourne shuffle and the two evaluation baselines.

mod baselines;
mod melbourne;

pub use baselines::{bl2_event_count, naive_shuffle_bl1, oblivious_bubble_shuffle_bl2};
pub use melbourne::{
    cleanup, distribute, melbourne_shuffle, melbourne_shuffle_with, shuffle_pass, Intermediate,
    Pipeline,
};

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cachesim::{CacheConfig, CacheError};
use crate::layout::LayoutError;
use crate::machine::WORD_BYTES;
use crate::txnsim::TxnError;

/// Full-shuffle restarts allowed after bucket overflows.
pub const MAX_OVERFLOW_RETRIES: u32 = 16;
pub const DEFAULT_P: u32 = 2;

/// A bijection on `0..n`, read as a destination map: the element at source
/// index `i` ends up at index `dest[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    dest: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("not a permutation of 0..{len}: {reason}")]
pub struct NotAPermutation {
    pub len: usize,
    pub reason: String,
}

impl Permutation {
    pub fn new(dest: Vec<usize>) -> Result<Self, NotAPermutation> {
        let n = dest.len();
        let mut seen = vec![false; n];
        for (i, &d) in dest.iter().enumerate() {
            if d >= n {
                return Err(NotAPermutation {
                    len: n,
                    reason: format!("dest[{i}] = {d} out of range"),
                });
            }
            if std::mem::replace(&mut seen[d], true) {
                return Err(NotAPermutation {
                    len: n,
                    reason: format!("{d} appears twice"),
                });
            }
        }
        Ok(Self { dest })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            dest: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.dest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dest.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.dest
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.dest.len()];
        for (i, &d) in self.dest.iter().enumerate() {
            inv[d] = i;
        }
        Self { dest: inv }
    }
}

/// Uniform random permutation of `0..n` (Fisher-Yates over a seeded
/// ChaCha8 stream).
pub fn gen_perm(n: usize, seed: u64) -> Permutation {
    let mut dest: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dest.shuffle(&mut rng);
    Permutation { dest }
}

/// A bucket slot: destination tag in the high half, payload in the low half.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Element(pub u64);

impl Element {
    pub fn real(tag: u32, value: u32) -> Self {
        Element(((tag as u64) << 32) | value as u64)
    }

    /// Padding slot; tag `n` is one past the largest destination.
    pub fn dummy(n: usize) -> Self {
        Element((n as u64) << 32)
    }

    pub fn tag(self) -> u32 {
        (self.0 >> 32) as u32
    }

    pub fn value(self) -> u32 {
        self.0 as u32
    }

    pub fn is_dummy(self, n: usize) -> bool {
        self.tag() as usize == n
    }
}

impl fmt::Debug for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.tag(), self.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShuffleParams {
    pub n: usize,
    /// √n buckets of √n elements each.
    pub bucket_count: usize,
    /// Slots each input bucket reserves per destination bucket:
    /// `p·⌈log₂ n⌉`, clamped to `1..=√n`.
    pub bucket_capacity: usize,
    pub p: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShuffleError {
    #[error("n = {0} is not a positive perfect square")]
    NotSquare(usize),
    #[error("internal storage of {bytes} bytes exceeds L1 capacity {l1}")]
    InternalMemoryTooLarge { bytes: u64, l1: u64 },
    #[error("p must be at least 1")]
    ZeroP,
    #[error("input has {data} values and {perm} permutation entries, expected {n}")]
    LengthMismatch { n: usize, data: usize, perm: usize },
    #[error("input bucket {bucket} sends more than {capacity} elements to bucket {dest_bucket}")]
    BucketOverflow {
        bucket: usize,
        dest_bucket: usize,
        capacity: usize,
    },
    #[error("bucket {bucket} holds {reals} real elements, expected {expected}")]
    MalformedIntermediate {
        bucket: usize,
        reals: usize,
        expected: usize,
    },
    #[error("gave up after {0} bucket-overflow retries")]
    OverflowRetriesExhausted(u32),
    #[error("declared internal storage {bytes} bytes exceeds bound {bound}")]
    InternalBoundExceeded { bytes: u64, bound: u64 },
    #[error("layout plan failed the conflict check")]
    InvalidPlan,
    #[error(transparent)]
    Permutation(#[from] NotAPermutation),
    #[error(transparent)]
    Txn(#[from] TxnError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

pub(crate) fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

fn exact_sqrt(n: usize) -> Option<usize> {
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    (r * r == n).then_some(r)
}

impl ShuffleParams {
    pub fn new(n: usize, p: u32, seed: u64) -> Result<Self, ShuffleError> {
        if p == 0 {
            return Err(ShuffleError::ZeroP);
        }
        let bucket_count = exact_sqrt(n)
            .filter(|_| n > 0)
            .ok_or(ShuffleError::NotSquare(n))?;
        let bucket_capacity = (p as usize * ceil_log2(n) as usize).clamp(1, bucket_count);
        Ok(Self {
            n,
            bucket_count,
            bucket_capacity,
            p,
            seed,
        })
    }

    /// Like [`ShuffleParams::new`], also checking the internal storage fits L1.
    pub fn for_cache(
        n: usize,
        p: u32,
        seed: u64,
        config: &CacheConfig,
    ) -> Result<Self, ShuffleError> {
        let params = Self::new(n, p, seed)?;
        params.check_fits(config)?;
        Ok(params)
    }

    pub fn check_fits(&self, config: &CacheConfig) -> Result<(), ShuffleError> {
        let bytes = self.internal_bytes();
        if bytes > config.l1_capacity() {
            return Err(ShuffleError::InternalMemoryTooLarge {
                bytes,
                l1: config.l1_capacity(),
            });
        }
        Ok(())
    }

    /// Bytes of one distribute transaction's output row.
    pub fn internal_bytes(&self) -> u64 {
        (self.bucket_count * self.bucket_capacity) as u64 * WORD_BYTES
    }

    /// `p·⌈log₂ n⌉·√n` element widths.
    pub fn internal_bound_bytes(&self) -> u64 {
        (self.p as u64 * ceil_log2(self.n).max(1) as u64 * self.bucket_count as u64) * WORD_BYTES
    }
}
