//! Supervised execution of user function bodies.
//!
//! The thunk runs on a worker thread that owns the whole execution
//! environment. The supervising thread waits with a wall-clock deadline;
//! if the deadline passes it flips the environment's cancellation flag
//! and returns [`Error::Timeout`] without waiting for the worker. Because
//! the environment only travels back on success, a timed-out, panicking,
//! or failing execution can never leak a half-written output buffer to
//! the caller.
//!
//! Memory admission runs before the worker starts: the bytes already
//! pinned by the environment (inputs plus output) must fit the limit.
//! Exceeding the budget is detected up front, not by sampling the
//! allocator mid-flight.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use super::ExecutionEnv;
use crate::instrument;
use crate::{Error, Result};

/// Runs `thunk` against `env` under the environment's limits.
///
/// Returns the environment (with its populated output buffer) only when
/// the thunk completed within the limits and returned `Ok`.
pub fn run_sandboxed<F>(env: ExecutionEnv, thunk: F) -> Result<ExecutionEnv>
where
    F: FnOnce(&mut ExecutionEnv) -> Result<()> + Send + 'static,
{
    let need = env.resident_bytes() as u64;
    let cap = env.limits.memory_cap;
    if need > cap {
        return Err(Error::MemoryCapExceeded { need, cap });
    }
    let timeout = Duration::from_secs_f64(env.limits.wall_timeout);
    let cancel = env.cancel_handle();

    let (tx, rx) = mpsc::channel();
    thread::Builder::new()
        .name("udf-sandbox".into())
        .spawn(move || {
            let mut env = env;
            instrument::thunk_started();
            let outcome = catch_unwind(AssertUnwindSafe(|| thunk(&mut env)));
            instrument::thunk_finished();
            let outcome = match outcome {
                Ok(result) => result.map(|()| env),
                // `&*` reaches the payload inside the box; `&panic` would
                // unsize the box itself into the trait object and every
                // downcast would miss.
                Err(panic) => Err(Error::UdfPanic(panic_message(&*panic))),
            };
            // The receiver is gone if the supervisor already timed out;
            // the environment is dropped here either way.
            let _ = tx.send(outcome);
        })
        .map_err(|e| Error::from_io(e, "spawning sandbox thread"))?;

    match rx.recv_timeout(timeout) {
        Ok(outcome) => outcome,
        Err(mpsc::RecvTimeoutError::Timeout) => {
            cancel.cancel();
            Err(Error::Timeout)
        }
        Err(mpsc::RecvTimeoutError::Disconnected) => {
            // The worker died without sending: only possible if the send
            // itself panicked, which a plain move cannot do.
            Err(Error::UdfPanic("sandbox worker vanished".into()))
        }
    }
}

fn panic_message(panic: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = panic.downcast_ref::<String>() {
        s.clone()
    } else {
        "opaque panic payload".to_string()
    }
}
