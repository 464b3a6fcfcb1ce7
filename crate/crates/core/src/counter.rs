//! Op-counting mode for the tensor kernels.
//!
//! Every public kernel charges its elementary additions and multiplications
//! to the innermost active [`count_ops`] scope on the calling thread. The
//! charges follow the same convention as [`crate::flops`], so an estimate and
//! an instrumented run of the same graph agree exactly.

use std::cell::Cell;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Adds and mults charged per element by one `tanh_k` evaluation.
pub const TANH_ADDS: u64 = 4;
pub const TANH_MULTS: u64 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub adds: u64,
    pub mults: u64,
}

impl OpCount {
    pub const ZERO: OpCount = OpCount { adds: 0, mults: 0 };

    pub fn new(adds: u64, mults: u64) -> Self {
        Self { adds, mults }
    }

    pub fn total(&self) -> u64 {
        self.adds + self.mults
    }

    pub fn scaled(self, k: u64) -> Self {
        Self::new(self.adds * k, self.mults * k)
    }
}

impl Add for OpCount {
    type Output = OpCount;
    fn add(self, rhs: OpCount) -> OpCount {
        OpCount::new(self.adds + rhs.adds, self.mults + rhs.mults)
    }
}

impl AddAssign for OpCount {
    fn add_assign(&mut self, rhs: OpCount) {
        *self = *self + rhs;
    }
}

thread_local! {
    static ACTIVE: Cell<Option<OpCount>> = const { Cell::new(None) };
}

/// Runs `f` and returns the ops its kernels executed on this thread.
/// Scopes nest: an outer scope also sees the inner scope's charges.
pub fn count_ops<R>(f: impl FnOnce() -> R) -> (R, OpCount) {
    let outer = ACTIVE.with(|c| c.replace(Some(OpCount::ZERO)));
    let out = f();
    let inner = ACTIVE.with(|c| c.replace(outer)).unwrap_or_default();
    if outer.is_some() {
        charge(inner.adds, inner.mults);
    }
    (out, inner)
}

/// Runs `f` with counting suspended; nothing it does reaches any scope.
pub fn uncounted<R>(f: impl FnOnce() -> R) -> R {
    let outer = ACTIVE.with(|c| c.replace(None));
    let out = f();
    ACTIVE.with(|c| c.set(outer));
    out
}

#[inline]
pub(crate) fn charge(adds: u64, mults: u64) {
    ACTIVE.with(|c| {
        if let Some(n) = c.get() {
            c.set(Some(OpCount::new(n.adds + adds, n.mults + mults)));
        }
    });
}
