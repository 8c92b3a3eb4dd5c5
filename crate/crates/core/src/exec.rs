// SPDX-License-Identifier: MIT OR Apache-2.0

//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (default) independent work items are spread
//! over the rayon pool. Outputs are always collected in index order, so both
//! schedules produce identical results.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Parallel,
    Sequential,
}

impl Schedule {
    /// True when work will actually be dispatched to the thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Schedule::Parallel
    }
}

/// Evaluate `f(0..n)` and return the results in index order.
pub fn map_indexed<T, F>(schedule: Schedule, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if schedule.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = schedule;
    (0..n).map(f).collect()
}

/// Run two closures, concurrently when the schedule allows it.
pub fn join<A, B, RA, RB>(schedule: Schedule, a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    if schedule.is_parallel() {
        return rayon::join(a, b);
    }
    let _ = schedule;
    (a(), b())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules_agree() {
        let f = |i: usize| (i as f64).sqrt() * 3.0;
        assert_eq!(
            map_indexed(Schedule::Parallel, 257, f),
            map_indexed(Schedule::Sequential, 257, f)
        );
        assert_eq!(join(Schedule::Parallel, || 1, || 2), (1, 2));
    }
}
