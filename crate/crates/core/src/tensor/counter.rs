//! Per-thread multiply-accumulate counter fed by the matrix kernels.
//!
//! Every convolution and dense product funnels through the gemm kernels, so
//! the counter observes the exact number of MACs a forward pass executes.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn add(n: u64) {
    MACS.with(|c| c.set(c.get() + n));
}

pub fn reset() {
    MACS.with(|c| c.set(0));
}

pub fn get() -> u64 {
    MACS.with(|c| c.get())
}

/// Runs `f` and returns its result with the MACs it executed on this thread.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = get();
    let r = f();
    (r, get() - before)
}
