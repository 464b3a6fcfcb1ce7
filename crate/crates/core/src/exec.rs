//! Runtime choice between the rayon-backed and the sequential kernels.
//!
//! Both paths compute every output element with the same summation order,
//! so switching modes never changes a result bit.

use std::sync::atomic::{AtomicBool, Ordering};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Selects the kernel path for the whole process. `Parallel` silently
/// degrades to `Sequential` when the crate is built without `parallel`.
pub fn set_execution(mode: Execution) {
    PARALLEL.store(
        mode == Execution::Parallel && cfg!(feature = "parallel"),
        Ordering::Relaxed,
    );
}

pub fn execution() -> Execution {
    if PARALLEL.load(Ordering::Relaxed) {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// Runs `f` under `mode`, restoring the previous mode afterwards.
pub fn with_execution<R>(mode: Execution, f: impl FnOnce() -> R) -> R {
    let prev = execution();
    set_execution(mode);
    let out = f();
    set_execution(prev);
    out
}

#[cfg(feature = "parallel")]
#[inline]
pub(crate) fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}
