// SPDX-License-Identifier: MIT OR Apache-2.0

//! Candidate change-point search.
//!
//! The admissible indices `x = t_start..=t_end` are halved repeatedly. Each
//! halving fits NMF to an overlapping left block `(min(x) - delta)..=mid`
//! and right block `mid..=(max(x) + delta)` (one row shorter when `|x|` is
//! even, so both blocks always have the same length) and keeps the half whose
//! block has the higher loss. When one index remains, the final comparison
//! decides between `x - 1` and `x`.
//!
//! All time indices are 1-based and ranges inclusive.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::rows_1based;
use crate::error::{Error, Result};
use crate::exec::{self, Schedule};
use crate::nmf::{self, FitSettings, LossKind};
use crate::seed;

/// A segment `[t_min, t_max]` of the series searched with minimum spacing `delta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchWindow {
    pub t_min: usize,
    pub t_max: usize,
    pub delta: usize,
}

impl SearchWindow {
    pub fn new(t_min: usize, t_max: usize, delta: usize) -> Self {
        Self { t_min, t_max, delta }
    }

    pub fn t_start(&self) -> usize {
        self.t_min + self.delta
    }

    /// `None` when the window is shorter than `delta`.
    pub fn t_end(&self) -> Option<usize> {
        self.t_max.checked_sub(self.delta)
    }

    pub fn is_searchable(&self) -> bool {
        self.delta >= 1 && self.t_min >= 1 && self.t_end().is_some_and(|end| self.t_start() <= end)
    }
}

/// Loss of the NMF fit on rows `first..=last`.
pub trait BlockScorer: Sync {
    fn block_loss(&self, first: usize, last: usize, seed: u64) -> Result<f64>;
}

/// Scores a block by the best-of-`n_run` NMF loss.
#[derive(Clone, Copy, Debug)]
pub struct NmfScorer<'a> {
    pub data: ArrayView2<'a, f64>,
    pub rank: usize,
    pub kind: LossKind,
    pub settings: FitSettings,
}

impl BlockScorer for NmfScorer<'_> {
    fn block_loss(&self, first: usize, last: usize, seed: u64) -> Result<f64> {
        let block = rows_1based(self.data, first, last);
        Ok(nmf::fit_best(block, self.rank, self.kind, &self.settings.with_seed(seed))?.loss)
    }
}

/// One left/right comparison of the search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    /// Admissible indices before the comparison.
    pub x: (usize, usize),
    pub left_block: (usize, usize),
    pub right_block: (usize, usize),
    pub left_loss: f64,
    pub right_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub window: SearchWindow,
    pub candidate: Option<usize>,
    pub steps: Vec<SearchStep>,
}

impl SearchTrace {
    /// Number of block fits performed.
    pub fn fits(&self) -> usize {
        2 * self.steps.len()
    }
}

/// Upper bound on block fits for a search over `n` admissible indices.
pub fn max_fits(n_admissible: usize) -> usize {
    let mut halvings = 0;
    let mut n = n_admissible;
    while n > 1 {
        n = n.div_ceil(2);
        halvings += 1;
    }
    2 * (halvings + 1)
}

/// Locate one candidate change point in `window`.
///
/// Returns a trace with `candidate == None` if the window is unsearchable.
/// Ties between the two block losses keep the left half, and in the final
/// comparison return `x`.
pub fn search_with<S: BlockScorer + ?Sized>(
    scorer: &S,
    window: SearchWindow,
    schedule: Schedule,
    seed: u64,
) -> Result<SearchTrace> {
    let mut trace = SearchTrace {
        window,
        candidate: None,
        steps: Vec::new(),
    };
    if !window.is_searchable() {
        return Ok(trace);
    }
    let delta = window.delta;
    let (mut lo, mut hi) = (window.t_start(), window.t_end().expect("searchable"));
    let compare = |step: usize, left: (usize, usize), right: (usize, usize)| -> Result<(f64, f64)> {
        let base = seed::derive(
            seed,
            &[seed::TAG_SEARCH, window.t_min as u64, window.t_max as u64, step as u64],
        );
        let (l, r) = exec::join(
            schedule,
            || scorer.block_loss(left.0, left.1, seed::derive(base, &[0])),
            || scorer.block_loss(right.0, right.1, seed::derive(base, &[1])),
        );
        Ok((l?, r?))
    };

    while hi > lo {
        let n = hi - lo + 1;
        let half = n.div_ceil(2);
        let mid = lo + half - 1;
        let left = (lo - delta, mid);
        let right = if n % 2 == 0 {
            (mid, hi + delta - 1)
        } else {
            (mid, hi + delta)
        };
        let (left_loss, right_loss) = compare(trace.steps.len(), left, right)?;
        trace.steps.push(SearchStep {
            x: (lo, hi),
            left_block: left,
            right_block: right,
            left_loss,
            right_loss,
        });
        if right_loss > left_loss {
            // Odd sizes share the middle index between the halves.
            lo = if n % 2 == 0 { mid + 1 } else { mid };
        } else {
            hi = mid;
        }
    }

    let left = (lo - delta, lo);
    let right = (lo, lo + delta);
    let (left_loss, right_loss) = compare(trace.steps.len(), left, right)?;
    trace.steps.push(SearchStep {
        x: (lo, lo),
        left_block: left,
        right_block: right,
        left_loss,
        right_loss,
    });
    trace.candidate = Some(if left_loss > right_loss { lo - 1 } else { lo });
    Ok(trace)
}

fn check_window(n_times: usize, window: &SearchWindow) -> Result<()> {
    if window.delta < 1 {
        return Err(Error::invalid_config("delta must be >= 1"));
    }
    if window.t_min < 1 || window.t_max > n_times || window.t_min > window.t_max {
        return Err(Error::invalid_input(format!(
            "window [{}, {}] is outside the series 1..={n_times}",
            window.t_min, window.t_max
        )));
    }
    Ok(())
}

/// Binary search for one candidate using best-of-`n_run` NMF block losses.
pub fn binary_search_candidate(
    data: ArrayView2<'_, f64>,
    window: SearchWindow,
    rank: usize,
    kind: LossKind,
    settings: &FitSettings,
) -> Result<Option<usize>> {
    Ok(search_trace(data, window, rank, kind, settings)?.candidate)
}

/// As [`binary_search_candidate`] but returning the full trace.
pub fn search_trace(
    data: ArrayView2<'_, f64>,
    window: SearchWindow,
    rank: usize,
    kind: LossKind,
    settings: &FitSettings,
) -> Result<SearchTrace> {
    check_window(data.nrows(), &window)?;
    settings.validate()?;
    let scorer = NmfScorer {
        data,
        rank,
        kind,
        settings: *settings,
    };
    search_with(&scorer, window, settings.schedule, settings.seed)
}

/// Ordered candidate change points and the searches that produced them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub points: Vec<usize>,
    /// One trace per searched window, in order of window start.
    pub traces: Vec<SearchTrace>,
}

fn discover_in<S: BlockScorer + ?Sized>(
    scorer: &S,
    window: SearchWindow,
    schedule: Schedule,
    seed: u64,
) -> Result<Vec<SearchTrace>> {
    if !window.is_searchable() {
        return Ok(Vec::new());
    }
    let trace = search_with(scorer, window, schedule, seed)?;
    let Some(q) = trace.candidate else {
        return Ok(vec![trace]);
    };
    let left = SearchWindow::new(window.t_min, q, window.delta);
    let right = SearchWindow::new(q + 1, window.t_max, window.delta);
    let (l, r) = exec::join(
        schedule,
        || discover_in(scorer, left, schedule, seed),
        || discover_in(scorer, right, schedule, seed),
    );
    let mut out = l?;
    out.push(trace);
    out.extend(r?);
    Ok(out)
}

/// Recursively search the whole series and its child segments.
pub fn discover_with<S: BlockScorer + ?Sized>(
    scorer: &S,
    n_times: usize,
    delta: usize,
    schedule: Schedule,
    seed: u64,
) -> Result<CandidateSet> {
    let window = SearchWindow::new(1, n_times, delta);
    check_window(n_times, &window)?;
    let mut traces = discover_in(scorer, window, schedule, seed)?;
    traces.sort_by_key(|t| t.window.t_min);
    let mut points: Vec<usize> = traces.iter().filter_map(|t| t.candidate).collect();
    points.sort_unstable();
    Ok(CandidateSet { points, traces })
}

pub fn discover_candidates(
    data: ArrayView2<'_, f64>,
    delta: usize,
    rank: usize,
    kind: LossKind,
    settings: &FitSettings,
) -> Result<CandidateSet> {
    settings.validate()?;
    let scorer = NmfScorer {
        data,
        rank,
        kind,
        settings: *settings,
    };
    discover_with(&scorer, data.nrows(), delta, settings.schedule, settings.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    /// Loss grows with how evenly a block straddles a planted change after `change`.
    struct Planted {
        change: usize,
        calls: AtomicUsize,
    }

    impl Planted {
        fn new(change: usize) -> Self {
            Self {
                change,
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl BlockScorer for Planted {
        fn block_loss(&self, first: usize, last: usize, _seed: u64) -> Result<f64> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            let before = (self.change + 1).saturating_sub(first).min(last - first + 1);
            let after = (last - first + 1) - before;
            Ok(before.min(after) as f64)
        }
    }

    struct Flat;

    impl BlockScorer for Flat {
        fn block_loss(&self, _first: usize, _last: usize, _seed: u64) -> Result<f64> {
            Ok(1.0)
        }
    }

    /// Records every block scored.
    struct Recorder(Mutex<Vec<(usize, usize)>>);

    impl BlockScorer for Recorder {
        fn block_loss(&self, first: usize, last: usize, seed: u64) -> Result<f64> {
            self.0.lock().unwrap().push((first, last));
            Ok((seed % 1000) as f64)
        }
    }

    #[test]
    fn window_bounds() {
        let w = SearchWindow::new(1, 200, 50);
        assert_eq!((w.t_start(), w.t_end()), (51, Some(150)));
        assert!(w.is_searchable());
        assert!(SearchWindow::new(1, 101, 50).is_searchable());
        assert!(!SearchWindow::new(1, 100, 50).is_searchable());
        assert!(!SearchWindow::new(1, 10, 50).is_searchable());
        assert!(!SearchWindow::new(1, 10, 0).is_searchable());
    }

    #[test]
    fn max_fits_matches_log2() {
        for n in 1..5000usize {
            let ceil_log2 = if n == 1 {
                0
            } else {
                (usize::BITS - (n - 1).leading_zeros()) as usize
            };
            assert_eq!(max_fits(n), 2 * (ceil_log2 + 1), "n = {n}");
        }
    }

    #[test]
    fn minimal_window_does_one_comparison() {
        let scorer = Planted::new(3);
        let trace = search_with(&scorer, SearchWindow::new(1, 7, 3), Schedule::Sequential, 0).unwrap();
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].left_block, (1, 4));
        assert_eq!(trace.steps[0].right_block, (4, 7));
        assert_eq!(trace.candidate, Some(3));
    }

    #[test]
    fn unsearchable_window_is_empty() {
        let trace = search_with(&Flat, SearchWindow::new(1, 9, 5), Schedule::Sequential, 0).unwrap();
        assert_eq!(trace.candidate, None);
        assert!(trace.steps.is_empty());
        let set = discover_with(&Flat, 9, 5, Schedule::Sequential, 0).unwrap();
        assert!(set.points.is_empty() && set.traces.is_empty());
    }

    #[test]
    fn blocks_have_equal_length_and_stay_inside() {
        for t_max in 4..90 {
            for delta in 1..6 {
                let window = SearchWindow::new(1, t_max, delta);
                if !window.is_searchable() {
                    continue;
                }
                let rec = Recorder(Mutex::new(Vec::new()));
                let trace = search_with(&rec, window, Schedule::Sequential, t_max as u64).unwrap();
                for step in &trace.steps {
                    let (l, r) = (step.left_block, step.right_block);
                    assert_eq!(l.1 - l.0, r.1 - r.0);
                    assert!(l.0 >= 1 && r.1 <= t_max);
                    assert_eq!(l.1, r.0);
                }
                let q = trace.candidate.unwrap();
                assert!(q + 1 >= window.t_start() && q <= window.t_end().unwrap());
                assert!(trace.fits() <= max_fits(window.t_end().unwrap() - window.t_start() + 1));
            }
        }
    }

    #[test]
    fn admissible_set_shrinks() {
        let rec = Recorder(Mutex::new(Vec::new()));
        let trace = search_with(&rec, SearchWindow::new(1, 300, 7), Schedule::Sequential, 11).unwrap();
        for pair in trace.steps.windows(2) {
            let (a, b) = (pair[0].x, pair[1].x);
            assert!(b.0 >= a.0 && b.1 <= a.1);
            assert!(b.1 - b.0 < a.1 - a.0 || a.0 == a.1);
        }
    }

    #[test]
    fn finds_planted_change_exactly() {
        for t_max in [20usize, 33, 64, 101, 200] {
            for delta in [2usize, 3, 5, 10] {
                let window = SearchWindow::new(1, t_max, delta);
                if !window.is_searchable() {
                    continue;
                }
                let end = window.t_end().unwrap();
                for change in window.t_start()..end {
                    let scorer = Planted::new(change);
                    let trace = search_with(&scorer, window, Schedule::Sequential, 0).unwrap();
                    assert_eq!(trace.candidate, Some(change), "T={t_max} delta={delta}");
                    assert_eq!(scorer.calls.load(Ordering::Relaxed), trace.fits());
                }
            }
        }
    }

    #[test]
    fn flat_losses_keep_left() {
        let trace = search_with(&Flat, SearchWindow::new(1, 200, 50), Schedule::Sequential, 0).unwrap();
        assert_eq!(trace.candidate, Some(51));
    }

    #[test]
    fn recursion_respects_spacing() {
        let set = discover_with(&Recorder(Mutex::new(Vec::new())), 400, 20, Schedule::Sequential, 5).unwrap();
        assert!(!set.points.is_empty());
        for pair in set.points.windows(2) {
            assert!(pair[1] > pair[0]);
        }
        for trace in &set.traces {
            assert!(trace.window.is_searchable());
        }
        assert!(set.points.iter().all(|q| (20..=380).contains(q)));
    }

    #[test]
    fn schedules_agree() {
        let rec_a = Recorder(Mutex::new(Vec::new()));
        let rec_b = Recorder(Mutex::new(Vec::new()));
        let a = discover_with(&rec_a, 500, 15, Schedule::Sequential, 9).unwrap();
        let b = discover_with(&rec_b, 500, 15, Schedule::Parallel, 9).unwrap();
        assert_eq!(a, b);
    }

    fn two_regime(n_times: usize, change: usize) -> Array2<f64> {
        Array2::from_shape_fn((n_times, 6), |(t, j)| {
            let wobble = 1.0 + 0.1 * ((t * 7 + j * 3) % 5) as f64;
            let on = if t < change { j < 3 } else { j >= 3 };
            if on {
                5.0 * wobble
            } else {
                0.2 * wobble
            }
        })
    }

    #[test]
    fn nmf_search_finds_regime_switch() {
        let y = two_regime(60, 27);
        let settings = FitSettings::new(3, 4);
        let q = binary_search_candidate(
            y.view(),
            SearchWindow::new(1, 60, 8),
            1,
            LossKind::KullbackLeibler,
            &settings,
        )
        .unwrap();
        assert_eq!(q, Some(27));
        let again = search_trace(
            y.view(),
            SearchWindow::new(1, 60, 8),
            1,
            LossKind::KullbackLeibler,
            &settings,
        )
        .unwrap();
        assert_eq!(again.candidate, q);
        let set = discover_candidates(y.view(), 8, 1, LossKind::Euclidean, &settings).unwrap();
        assert!(set.points.contains(&27));
    }

    #[test]
    fn rejects_bad_window() {
        let y = two_regime(30, 10);
        let settings = FitSettings::new(1, 0);
        assert!(search_trace(y.view(), SearchWindow::new(1, 31, 5), 1, LossKind::Euclidean, &settings).is_err());
        assert!(search_trace(y.view(), SearchWindow::new(1, 30, 0), 1, LossKind::Euclidean, &settings).is_err());
    }
}
