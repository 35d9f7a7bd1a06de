//! Per-thread counts of program evaluations, used to check how much work
//! each optimizer step performs.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalCounts {
    /// Forward evaluations of a program, in any execution mode.
    pub forward: u64,
    /// Reverse (adjoint) sweeps over a tape.
    pub backward: u64,
}

impl std::ops::Sub for EvalCounts {
    type Output = EvalCounts;

    fn sub(self, rhs: EvalCounts) -> EvalCounts {
        EvalCounts {
            forward: self.forward - rhs.forward,
            backward: self.backward - rhs.backward,
        }
    }
}

thread_local! {
    static COUNTS: Cell<EvalCounts> = const { Cell::new(EvalCounts { forward: 0, backward: 0 }) };
}

pub fn counts() -> EvalCounts {
    COUNTS.with(Cell::get)
}

pub(crate) fn record_forward() {
    COUNTS.with(|c| {
        let mut v = c.get();
        v.forward += 1;
        c.set(v);
    })
}

pub(crate) fn record_backward() {
    COUNTS.with(|c| {
        let mut v = c.get();
        v.backward += 1;
        c.set(v);
    })
}

/// Runs `f` and returns the evaluations it performed on this thread.
pub fn count<T>(f: impl FnOnce() -> T) -> (T, EvalCounts) {
    let before = counts();
    let out = f();
    (out, counts() - before)
}
