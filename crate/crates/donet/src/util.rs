//! Seed plumbing and small shared helpers.
//!
//! All randomness in the crate flows from a single top-level seed through
//! [`named_seed`] / [`sample_seed`], so any component can be re-run in
//! isolation and still see the same stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over a byte slice; stable across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive the sub-seed for a named component from the top-level seed.
pub fn named_seed(seed: u64, name: &str) -> u64 {
    let mut bytes = Vec::with_capacity(8 + name.len());
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(name.as_bytes());
    fnv1a64(&bytes)
}

/// Derive a per-sample seed; results must not depend on batching or
/// scheduling, so every per-sample stream is keyed by the sample's index.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    let mut bytes = [0u8; 16];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..].copy_from_slice(&(index as u64).to_le_bytes());
    fnv1a64(&bytes)
}

/// Deterministic generator for a sub-seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Worker cap: `DONET_THREADS` if set and positive, else machine parallelism.
pub fn worker_count() -> usize {
    if let Ok(v) = std::env::var("DONET_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Map `items` through `f` on up to [`worker_count`] threads, preserving
/// order. Output is identical to the sequential map for any worker count;
/// callers must only pass `f` that is a pure function of its arguments.
pub fn parallel_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync,
{
    let workers = worker_count().min(items.len().max(1));
    if workers <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    // Contiguous chunks, one per worker; concatenating in chunk order makes
    // the result independent of scheduling.
    let chunk = items.len().div_ceil(workers);
    let mut pieces: Vec<Vec<U>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(ci, part)| {
                let f = &f;
                scope.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(j, t)| f(ci * chunk + j, t))
                        .collect::<Vec<U>>()
                })
            })
            .collect();
        for h in handles {
            pieces.push(h.join().expect("worker panicked"));
        }
    });
    pieces.into_iter().flatten().collect()
}
