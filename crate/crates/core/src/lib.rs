//! Cache-miss oblivious shuffling on a simulated inclusive cache hierarchy
//! with emulated hardware transactions.
//!
//! The crate is layered bottom-up: [`cachesim`] models the caches and emits
//! the externally visible trace, [`txnsim`] runs declared transactions on
//! top of it, [`layout`] places transaction data so that it cannot
//! self-evict, [`shuffle`] holds the shuffle and its baselines, and
//! [`verifier`] compares traces across inputs.

pub mod cachesim;
pub mod cli;
pub mod exec;
pub mod experiments;
pub mod layout;
pub mod machine;
pub mod shuffle;
pub mod txnsim;
pub mod verifier;

pub use cachesim::{CacheConfig, CacheHierarchy, Trace};
pub use exec::{ExecLog, Executor};
pub use shuffle::{gen_perm, Permutation, ShuffleParams};
pub use verifier::{oracle_apply_perm, Program};
