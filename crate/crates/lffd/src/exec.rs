//! Thread-pool executor over scoped threads.

use std::num::NonZeroUsize;
use std::thread;

use lffd_core::train::Executor;

pub const THREADS_ENV: &str = "LFFD_THREADS";

/// Splits items into contiguous chunks, one per worker. Results come back in
/// input order, so reductions over them are independent of the worker count.
#[derive(Debug, Clone, Copy)]
pub struct Threads {
    workers: usize,
}

impl Threads {
    pub fn new(workers: usize) -> Self {
        Self {
            workers: workers.max(1),
        }
    }

    /// Available parallelism, capped by `LFFD_THREADS` when set.
    pub fn from_env() -> Self {
        let available = thread::available_parallelism().map_or(1, NonZeroUsize::get);
        let cap = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0);
        Self::new(cap.map_or(available, |c| c.min(available)))
    }

    pub fn workers(&self) -> usize {
        self.workers
    }
}

impl Executor for Threads {
    fn map<I: Sync, O: Send>(&self, items: &[I], f: &(dyn Fn(&I) -> O + Sync)) -> Vec<O> {
        if self.workers == 1 || items.len() < 2 {
            return items.iter().map(f).collect();
        }
        let chunk = items.len().div_ceil(self.workers);
        thread::scope(|s| {
            let handles: Vec<_> = items
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(f).collect::<Vec<O>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    }
}

/// Keeps freed memory in the heap instead of returning it to the OS.
/// Training reallocates the same large buffers every step, and glibc's
/// default trimming turns each of them into fresh page faults.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator parameters and is called before
    // any worker thread exists.
    unsafe {
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TOP_PAD, 64 << 20);
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u32> = (0..37).collect();
        let out = Threads::new(4).map(&items, &|x| x * 2);
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
