//! Process-wide instrumentation counters.
//!
//! Two contracts of the execution path are stated in the negative: `inspect`
//! never runs user code, and no container I/O happens while a function body
//! is running (inputs are prefetched). Negatives are hard to test from the
//! outside, so the hot paths publish cheap counters that the test suite can
//! snapshot and compare.

use std::sync::atomic::{AtomicU64, Ordering};

static UDF_EXECUTIONS: AtomicU64 = AtomicU64::new(0);
static ACTIVE_THUNKS: AtomicU64 = AtomicU64::new(0);
static READS_DURING_EXECUTION: AtomicU64 = AtomicU64::new(0);

/// Number of user-function bodies handed to the sandbox since process start.
pub fn udf_executions() -> u64 {
    UDF_EXECUTIONS.load(Ordering::SeqCst)
}

/// Number of container data-region reads that overlapped a running thunk.
pub fn reads_during_execution() -> u64 {
    READS_DURING_EXECUTION.load(Ordering::SeqCst)
}

pub(crate) fn thunk_started() {
    UDF_EXECUTIONS.fetch_add(1, Ordering::SeqCst);
    ACTIVE_THUNKS.fetch_add(1, Ordering::SeqCst);
}

pub(crate) fn thunk_finished() {
    ACTIVE_THUNKS.fetch_sub(1, Ordering::SeqCst);
}

/// Called by the container on every data-region read.
pub(crate) fn record_data_read() {
    if ACTIVE_THUNKS.load(Ordering::SeqCst) > 0 {
        READS_DURING_EXECUTION.fetch_add(1, Ordering::SeqCst);
    }
}
