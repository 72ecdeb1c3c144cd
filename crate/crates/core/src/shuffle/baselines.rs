use crate::exec::Executor;
use crate::txnsim::{TxnDeclaration, TxnOptions};

use super::{Element, Permutation, ShuffleError};

fn check_lengths(data: &[u32], perm: &Permutation) -> Result<(), ShuffleError> {
    if data.len() != perm.len() {
        return Err(ShuffleError::LengthMismatch {
            n: perm.len(),
            data: data.len(),
            perm: perm.len(),
        });
    }
    Ok(())
}

/// BL1: the plain scatter `out[perm[i]] = data[i]` in one transaction whose
/// declaration covers all three arrays, without prefetch. Fast, but its
/// misses follow the permutation, and the write set must fit L1.
pub fn naive_shuffle_bl1(
    exec: &mut Executor,
    data: &[u32],
    perm: &Permutation,
) -> Result<Vec<u32>, ShuffleError> {
    check_lengths(data, perm)?;
    let n = data.len();
    let values: Vec<u64> = data.iter().map(|&v| v as u64).collect();
    let dests: Vec<u64> = perm.as_slice().iter().map(|&d| d as u64).collect();
    let data_arr = exec.machine.host_load(&values);
    let perm_arr = exec.machine.host_load(&dests);
    let out = exec.machine.alloc_words(n);

    let decl = TxnDeclaration::new()
        .read(data_arr.base, data_arr.bytes())
        .read(perm_arr.base, perm_arr.bytes())
        .write(out.base, out.bytes());
    let options = TxnOptions {
        prefetch: false,
        ..exec.options
    };
    exec.run_txn_with(&decl, &options, |ctx| {
        for i in 0..n {
            let v = ctx.read(data_arr.addr(i))?;
            let d = ctx.read(perm_arr.addr(i))? as usize;
            ctx.write(out.addr(d), v)?;
        }
        Ok(())
    })?;
    Ok(exec
        .machine
        .host_read(out)
        .into_iter()
        .map(|w| w as u32)
        .collect())
}

/// BL2: word-oblivious shuffle by bubble-sorting `(dest, value)` pairs.
///
/// Runs without transactions, so every word access is treated as external:
/// each compare-exchange reads both slots and writes both back whether or
/// not they swap. The access sequence depends only on `n`.
pub fn oblivious_bubble_shuffle_bl2(
    exec: &mut Executor,
    data: &[u32],
    perm: &Permutation,
) -> Result<Vec<u32>, ShuffleError> {
    check_lengths(data, perm)?;
    let n = data.len();
    let values: Vec<u64> = data.iter().map(|&v| v as u64).collect();
    let dests: Vec<u64> = perm.as_slice().iter().map(|&d| d as u64).collect();
    let data_arr = exec.machine.host_load(&values);
    let perm_arr = exec.machine.host_load(&dests);
    let pairs = exec.machine.alloc_words(n);
    let out = exec.machine.alloc_words(n);
    let m = &mut exec.machine;

    for i in 0..n {
        let v = m.read_uncached(data_arr.addr(i))?;
        let d = m.read_uncached(perm_arr.addr(i))?;
        m.write_uncached(pairs.addr(i), Element::real(d as u32, v as u32).0)?;
    }
    for pass in 0..n.saturating_sub(1) {
        for j in 0..n - 1 - pass {
            let a = m.read_uncached(pairs.addr(j))?;
            let b = m.read_uncached(pairs.addr(j + 1))?;
            // tags are the high half, so word order is tag order
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            m.write_uncached(pairs.addr(j), lo)?;
            m.write_uncached(pairs.addr(j + 1), hi)?;
        }
    }
    for i in 0..n {
        let e = Element(m.read_uncached(pairs.addr(i))?);
        m.write_uncached(out.addr(i), e.value() as u64)?;
    }
    Ok(m.host_read(out).into_iter().map(|w| w as u32).collect())
}

/// External events [`oblivious_bubble_shuffle_bl2`] emits for `n` elements:
/// 3n to pack, 4 per compare-exchange, 2n to unpack.
pub fn bl2_event_count(n: u64) -> u64 {
    3 * n + 4 * (n * n.saturating_sub(1) / 2) + 2 * n
}
