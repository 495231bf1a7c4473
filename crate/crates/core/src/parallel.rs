//! Deterministic fan-out over index ranges.
//!
//! Results are always collected in index order, so any reduction done by the
//! caller sees the same sequence regardless of the thread count.

use std::num::NonZeroUsize;
use std::thread;

/// Environment variable capping worker threads; `0` or unset means automatic.
pub const THREADS_ENV: &str = "PROXY_ISA_THREADS";

pub fn worker_threads() -> usize {
    let auto = || thread::available_parallelism().map_or(1, NonZeroUsize::get);
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(0) | None => auto(),
        Some(n) => n,
    }
}

/// Evaluates `f(0..n)` on up to [`worker_threads`] threads and returns the
/// results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = worker_threads().min(n.max(1));
    if threads <= 1 || n < 64 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    let f = &f;
    thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|start| {
                let end = (start + chunk).min(n);
                scope.spawn(move || (start..end).map(f).collect::<Vec<T>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker thread panicked")).collect()
    })
}
