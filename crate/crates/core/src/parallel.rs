//! Data-parallel replica generation.
//!
//! Replica `r` always runs on `RngState::from_seed(seed).split(r)`. Replicas
//! are grouped into fixed-size chunks that workers pick up in any order; the
//! chunk outputs are concatenated by chunk index, so the result is identical
//! for every worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::RngState;

pub const CHUNK: u64 = 1 << 14;

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

/// Runs `f` once per replica and returns the outputs in replica order.
pub fn replicate<T, F>(replicas: u64, seed: u64, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&RngState) -> Result<T> + Sync,
{
    let chunks = chunked(
        replicas,
        seed,
        workers,
        |master, range, out: &mut Vec<T>| {
            for r in range {
                out.push(f(&master.split(r))?);
            }
            Ok(())
        },
    )?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Like [`replicate`] but keeps only outputs passing `keep`; also returns
/// the total replica count. Used for tail estimates, where only values
/// above the lowest threshold matter and storing 10^8 draws is wasteful.
pub fn replicate_filtered<T, F, K>(
    replicas: u64,
    seed: u64,
    workers: usize,
    f: F,
    keep: K,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&RngState) -> Result<T> + Sync,
    K: Fn(&T) -> bool + Sync,
{
    let chunks = chunked(
        replicas,
        seed,
        workers,
        |master, range, out: &mut Vec<T>| {
            for r in range {
                let v = f(&master.split(r))?;
                if keep(&v) {
                    out.push(v);
                }
            }
            Ok(())
        },
    )?;
    Ok(chunks.into_iter().flatten().collect())
}

fn chunked<T, G>(replicas: u64, seed: u64, workers: usize, g: G) -> Result<Vec<Vec<T>>>
where
    T: Send,
    G: Fn(&RngState, std::ops::Range<u64>, &mut Vec<T>) -> Result<()> + Sync,
{
    let master = RngState::from_seed(seed);
    let n_chunks = replicas.div_ceil(CHUNK);
    pool(workers)?.install(|| {
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let range = c * CHUNK..((c + 1) * CHUNK).min(replicas);
                let mut out = Vec::new();
                g(&master, range, &mut out)?;
                Ok(out)
            })
            .collect()
    })
}
