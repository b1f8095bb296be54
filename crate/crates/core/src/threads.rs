//! Worker-thread configuration.
//!
//! All parallel kernels assign each output element to exactly one task, so
//! results are bit-identical for any thread count; `CATKIT_THREADS` only caps
//! resource usage.

use std::sync::OnceLock;

static INIT: OnceLock<usize> = OnceLock::new();

/// Initialize the global worker pool from the `CATKIT_THREADS` environment
/// variable. Returns the effective thread count. Safe to call repeatedly;
/// only the first call has any effect.
pub fn init_from_env() -> usize {
    *INIT.get_or_init(|| {
        let requested = std::env::var("CATKIT_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0);
        match requested {
            Some(n) => {
                // Ignore the error: the global pool may already exist (tests).
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                n
            }
            None => rayon::current_num_threads(),
        }
    })
}
