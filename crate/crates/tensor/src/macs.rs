//! Runtime multiply-accumulate counter.
//!
//! Convolutions, matrix products, elementwise products and bilinear
//! resampling report their work here while counting is active. Layer code
//! uses this to cross-check analytic cost formulas against what a forward
//! pass actually executes.

use std::cell::Cell;

thread_local! {
    static COUNTER: Cell<Option<u64>> = const { Cell::new(None) };
}

pub(crate) fn add(n: u64) {
    COUNTER.with(|c| {
        if let Some(v) = c.get() {
            c.set(Some(v + n));
        }
    });
}

/// Runs `f` and returns its result with the number of MACs it executed.
pub fn count<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let prev = COUNTER.with(|c| c.replace(Some(0)));
    let out = f();
    let n = COUNTER.with(|c| c.replace(prev)).unwrap_or(0);
    if let Some(p) = prev {
        COUNTER.with(|c| c.set(Some(p + n)));
    }
    (out, n)
}
