use crate::cachesim::CacheConfig;
use crate::exec::Executor;
use crate::layout::{plan_layout, LayoutPlan, Region};
use crate::machine::{WordArray, WORD_BYTES};
use crate::txnsim::{TxnDeclaration, TxnOptions};

use super::{gen_perm, Element, Permutation, ShuffleError, ShuffleParams, MAX_OVERFLOW_RETRIES};

/// How transactions reach their data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pipeline {
    /// Each transaction works on staging regions placed by the layout
    /// planner. Data is copied in and out with data-independent scans
    /// outside the transaction; inside, every declared line is prefetched
    /// and pinned before the body runs.
    Cmos,
    /// Transactions touch the external arrays directly, with neither
    /// planning nor prefetch. Body accesses may miss, and nothing keeps
    /// the write set from colliding in L1.
    NoPrefetch,
}

/// Output of the distribute pass: for every destination bucket `j` and
/// source bucket `i`, a group of `capacity` slots at
/// `((j * bucket_count) + i) * capacity`. Each destination bucket's groups
/// are therefore contiguous, ready for cleanup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Intermediate {
    pub array: WordArray,
    pub n: usize,
    pub bucket_count: usize,
    pub capacity: usize,
}

impl Intermediate {
    fn slot(&self, dest_bucket: usize, src_bucket: usize, s: usize) -> usize {
        (dest_bucket * self.bucket_count + src_bucket) * self.capacity + s
    }

    fn column_words(&self) -> usize {
        self.bucket_count * self.capacity
    }

    /// `grid[dest_bucket][src_bucket]` is that group's slots, read straight
    /// from memory.
    pub fn grid(&self, exec: &Executor) -> Vec<Vec<Vec<Element>>> {
        let words = exec.machine.host_read(self.array);
        (0..self.bucket_count)
            .map(|j| {
                (0..self.bucket_count)
                    .map(|i| {
                        (0..self.capacity)
                            .map(|s| Element(words[self.slot(j, i, s)]))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Shuffles `data` so that `output[perm[i]] = data[i]`, with the default
/// [`Pipeline::Cmos`].
pub fn melbourne_shuffle(
    exec: &mut Executor,
    data: &[u32],
    perm: &Permutation,
    params: &ShuffleParams,
) -> Result<Vec<u32>, ShuffleError> {
    melbourne_shuffle_with(exec, data, perm, params, Pipeline::Cmos)
}

fn attempt_seed(seed: u64, attempt: u32) -> u64 {
    seed ^ (attempt as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Three passes: shuffle the data and the permutation by a fresh random
/// permutation `r`, then shuffle the result by the re-indexed permutation.
/// A bucket overflow restarts everything with a new `r`.
pub fn melbourne_shuffle_with(
    exec: &mut Executor,
    data: &[u32],
    perm: &Permutation,
    params: &ShuffleParams,
    pipeline: Pipeline,
) -> Result<Vec<u32>, ShuffleError> {
    let n = params.n;
    if data.len() != n || perm.len() != n {
        return Err(ShuffleError::LengthMismatch {
            n,
            data: data.len(),
            perm: perm.len(),
        });
    }
    params.check_fits(exec.config())?;

    let values: Vec<u64> = data.iter().map(|&v| v as u64).collect();
    let dests: Vec<u64> = perm.as_slice().iter().map(|&d| d as u64).collect();
    let data_arr = exec.machine.host_load(&values);
    let perm_arr = exec.machine.host_load(&dests);

    for attempt in 0..=MAX_OVERFLOW_RETRIES {
        let random = gen_perm(n, attempt_seed(params.seed, attempt));
        let random_arr = exec.machine.alloc_words(n);
        for (i, &d) in random.as_slice().iter().enumerate() {
            exec.machine.write(random_arr.addr(i), d as u64)?;
        }
        let result = (|| {
            let data_r = shuffle_pass(exec, data_arr, random_arr, params, pipeline)?;
            let perm_rr = shuffle_pass(exec, perm_arr, random_arr, params, pipeline)?;
            shuffle_pass(exec, data_r, perm_rr, params, pipeline)
        })();
        match result {
            Ok(out) => {
                return Ok(exec
                    .machine
                    .host_read(out)
                    .into_iter()
                    .map(|w| w as u32)
                    .collect())
            }
            Err(ShuffleError::BucketOverflow { .. }) => exec.log.overflow_retries += 1,
            Err(e) => return Err(e),
        }
    }
    Err(ShuffleError::OverflowRetriesExhausted(MAX_OVERFLOW_RETRIES))
}

/// One distribute + cleanup: returns a new array holding `data` permuted by
/// the destination map stored in `perm`.
pub fn shuffle_pass(
    exec: &mut Executor,
    data: WordArray,
    perm: WordArray,
    params: &ShuffleParams,
    pipeline: Pipeline,
) -> Result<WordArray, ShuffleError> {
    let inter = distribute(exec, data, perm, params, pipeline)?;
    cleanup(exec, &inter, params, pipeline)
}

/// Plans `regions`, checks the internal-storage bound, reserves an arena
/// whose placement preserves the planned set mapping, and audits the
/// rebased plan.
fn stage(
    exec: &mut Executor,
    regions: &[Region],
    params: &ShuffleParams,
) -> Result<LayoutPlan, ShuffleError> {
    let config: CacheConfig = *exec.config();
    let write_bytes: u64 = regions
        .iter()
        .filter(|r| r.access == crate::cachesim::AccessKind::Write)
        .map(|r| r.size_bytes)
        .sum();
    let bound = params.internal_bound_bytes().min(config.l1_capacity());
    if write_bytes > bound {
        return Err(ShuffleError::InternalBoundExceeded {
            bytes: write_bytes,
            bound,
        });
    }
    let plan = plan_layout(regions, &config)?;
    let base = exec
        .machine
        .alloc_bytes(plan.extent(config.line_size), config.mapping_period());
    let plan = plan.rebase(base, &config);
    if !exec.audit_plan(&plan, regions) {
        return Err(ShuffleError::InvalidPlan);
    }
    Ok(plan)
}

fn cmos_options(exec: &Executor, pipeline: Pipeline) -> TxnOptions {
    TxnOptions {
        prefetch: pipeline == Pipeline::Cmos,
        ..exec.options
    }
}

/// Distribute pass: one transaction per input bucket routes its elements
/// into fixed-size groups, one per destination bucket, padded with dummies.
pub fn distribute(
    exec: &mut Executor,
    data: WordArray,
    perm: WordArray,
    params: &ShuffleParams,
    pipeline: Pipeline,
) -> Result<Intermediate, ShuffleError> {
    let n = params.n;
    let bc = params.bucket_count;
    let cap = params.bucket_capacity;
    let row_words = bc * cap;
    let inter = Intermediate {
        array: exec.machine.alloc_words(n * cap),
        n,
        bucket_count: bc,
        capacity: cap,
    };
    let options = cmos_options(exec, pipeline);

    let staged = match pipeline {
        Pipeline::Cmos => {
            let regions = [
                Region::read("bucket", bc as u64 * WORD_BYTES),
                Region::read("perm", bc as u64 * WORD_BYTES),
                Region::write("out", row_words as u64 * WORD_BYTES),
            ];
            let plan = stage(exec, &regions, params)?;
            let at = |name: &str| WordArray {
                base: plan.base_of(name).expect("planned region"),
                len: if name == "out" { row_words } else { bc },
            };
            Some((at("bucket"), at("perm"), at("out")))
        }
        Pipeline::NoPrefetch => None,
    };

    for i in 0..bc {
        let (bucket, slice, decl) = match staged {
            Some((bucket, slice, out)) => {
                for k in 0..bc {
                    let v = exec.machine.read(data.addr(i * bc + k))?;
                    exec.machine.write(bucket.addr(k), v)?;
                }
                for k in 0..bc {
                    let d = exec.machine.read(perm.addr(i * bc + k))?;
                    exec.machine.write(slice.addr(k), d)?;
                }
                let decl = TxnDeclaration::new()
                    .read(bucket.base, bucket.bytes())
                    .read(slice.base, slice.bytes())
                    .write(out.base, out.bytes());
                (bucket, slice, decl)
            }
            None => {
                let bucket = WordArray {
                    base: data.addr(i * bc),
                    len: bc,
                };
                let slice = WordArray {
                    base: perm.addr(i * bc),
                    len: bc,
                };
                let mut decl = TxnDeclaration::new()
                    .read(bucket.base, bucket.bytes())
                    .read(slice.base, slice.bytes());
                for j in 0..bc {
                    decl = decl.write(
                        inter.array.addr(inter.slot(j, i, 0)),
                        cap as u64 * WORD_BYTES,
                    );
                }
                (bucket, slice, decl)
            }
        };
        let out_addr = |j: usize, s: usize| match staged {
            Some((_, _, out)) => out.addr(j * cap + s),
            None => inter.array.addr(inter.slot(j, i, s)),
        };

        let committed = exec.run_txn_with(&decl, &options, |ctx| {
            let mut fill = vec![0usize; bc];
            let mut row = vec![Element::dummy(n); row_words];
            let mut overflow = None;
            for k in 0..bc {
                let value = ctx.read(bucket.addr(k))? as u32;
                let dest = ctx.read(slice.addr(k))? as usize;
                let j = dest / bc;
                if fill[j] < cap {
                    row[j * cap + fill[j]] = Element::real(dest as u32, value);
                    fill[j] += 1;
                } else {
                    overflow.get_or_insert(j);
                }
            }
            for j in 0..bc {
                for s in 0..cap {
                    ctx.write(out_addr(j, s), row[j * cap + s].0)?;
                }
            }
            Ok(overflow)
        })?;
        if let Some(dest_bucket) = committed.value {
            return Err(ShuffleError::BucketOverflow {
                bucket: i,
                dest_bucket,
                capacity: cap,
            });
        }

        if let Some((_, _, out)) = staged {
            for j in 0..bc {
                for s in 0..cap {
                    let w = exec.machine.read(out.addr(j * cap + s))?;
                    exec.machine
                        .write(inter.array.addr(inter.slot(j, i, s)), w)?;
                }
            }
        }
    }
    Ok(inter)
}

/// Cleanup pass: one transaction per destination bucket drops the dummies,
/// sorts the √n real elements by tag and writes their payloads in order.
pub fn cleanup(
    exec: &mut Executor,
    inter: &Intermediate,
    params: &ShuffleParams,
    pipeline: Pipeline,
) -> Result<WordArray, ShuffleError> {
    let n = params.n;
    let bc = inter.bucket_count;
    let col_words = inter.column_words();
    let output = exec.machine.alloc_words(n);
    let options = cmos_options(exec, pipeline);

    let staged = match pipeline {
        Pipeline::Cmos => {
            let regions = [
                Region::read("column", col_words as u64 * WORD_BYTES),
                Region::write("out", bc as u64 * WORD_BYTES),
            ];
            let plan = stage(exec, &regions, params)?;
            Some((
                WordArray {
                    base: plan.base_of("column").expect("planned region"),
                    len: col_words,
                },
                WordArray {
                    base: plan.base_of("out").expect("planned region"),
                    len: bc,
                },
            ))
        }
        Pipeline::NoPrefetch => None,
    };

    for j in 0..bc {
        let column_start = inter.slot(j, 0, 0);
        let (column, out) = match staged {
            Some((column, out)) => {
                for w in 0..col_words {
                    let v = exec.machine.read(inter.array.addr(column_start + w))?;
                    exec.machine.write(column.addr(w), v)?;
                }
                (column, out)
            }
            None => (
                WordArray {
                    base: inter.array.addr(column_start),
                    len: col_words,
                },
                WordArray {
                    base: output.addr(j * bc),
                    len: bc,
                },
            ),
        };
        let decl = TxnDeclaration::new()
            .read(column.base, column.bytes())
            .write(out.base, out.bytes());

        let committed = exec.run_txn_with(&decl, &options, |ctx| {
            let mut reals = Vec::with_capacity(bc);
            for w in 0..col_words {
                let e = Element(ctx.read(column.addr(w))?);
                if !e.is_dummy(n) {
                    reals.push(e);
                }
            }
            reals.sort_unstable_by_key(|e| e.tag());
            for k in 0..bc {
                let v = reals.get(k).map_or(0, |e| e.value() as u64);
                ctx.write(out.addr(k), v)?;
            }
            Ok(reals.len())
        })?;
        if committed.value != bc {
            return Err(ShuffleError::MalformedIntermediate {
                bucket: j,
                reals: committed.value,
                expected: bc,
            });
        }

        if staged.is_some() {
            for k in 0..bc {
                let v = exec.machine.read(out.addr(k))?;
                exec.machine.write(output.addr(j * bc + k), v)?;
            }
        }
    }
    Ok(output)
}
