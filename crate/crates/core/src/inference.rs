// SPDX-License-Identifier: MIT OR Apache-2.0

//! Candidate confirmation against a time-permutation null.
//!
//! For candidate `q` with neighbouring boundaries `b_L < q < b_R`, the
//! segment `b_L..=b_R` is split into `b_L..=q` and `q+1..=b_R`, NMF is refit
//! on both halves and the losses summed. The same is done on a copy of the
//! segment whose rows were shuffled, which destroys any temporal change in
//! structure. A one-sided Welch test decides whether the observed losses are
//! smaller than the permuted ones.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::DetectorConfig;
use crate::data::rows_1based;
use crate::error::{Error, Result};
use crate::exec::{self, Schedule};
use crate::nmf::{self, FitSettings, LossKind};
use crate::seed;

/// Shuffle whole rows (time points) of `z` with one seeded permutation.
pub fn permute_segment(z: ArrayView2<'_, f64>, seed: u64) -> Array2<f64> {
    let mut order: Vec<usize> = (0..z.nrows()).collect();
    order.shuffle(&mut seed::rng(seed));
    z.select(Axis(0), &order)
}

/// How each refit repetition is carried out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefitOptions {
    /// Restarts per sub-segment fit in each repetition.
    pub n_run: usize,
    /// Draw a new permutation for every repetition instead of one per candidate.
    pub permute_each_rep: bool,
    pub max_iter: usize,
    pub rel_tol: f64,
    #[serde(default)]
    pub schedule: Schedule,
}

impl Default for RefitOptions {
    fn default() -> Self {
        Self {
            n_run: 1,
            permute_each_rep: true,
            max_iter: nmf::DEFAULT_MAX_ITER,
            rel_tol: nmf::DEFAULT_REL_TOL,
            schedule: Schedule::default(),
        }
    }
}

/// Observed and permuted refit losses for one candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefitSample {
    pub candidate: usize,
    pub left_bound: usize,
    pub right_bound: usize,
    pub observed: Vec<f64>,
    pub null: Vec<f64>,
    /// Set when a sub-segment was too short to factorize; such candidates are rejected.
    pub degenerate: bool,
}

/// Refit losses `l_i` and permutation-null losses `l_i*` for `n_reps` repetitions.
///
/// Within a repetition the observed and permuted halves are fitted from the
/// same initial seeds, so a permutation that leaves the data unchanged gives
/// identical losses.
#[allow(clippy::too_many_arguments)]
pub fn refit_losses(
    data: ArrayView2<'_, f64>,
    candidate: usize,
    left_bound: usize,
    right_bound: usize,
    n_reps: usize,
    rank: usize,
    kind: LossKind,
    options: &RefitOptions,
    seed: u64,
) -> Result<RefitSample> {
    let n_times = data.nrows();
    if !(1 <= left_bound && left_bound <= candidate && candidate < right_bound && right_bound <= n_times) {
        return Err(Error::invalid_input(format!(
            "refit bounds {left_bound} <= {candidate} < {right_bound} <= {n_times} violated"
        )));
    }
    if n_reps == 0 {
        return Err(Error::invalid_config("n_reps must be >= 1"));
    }
    let mut sample = RefitSample {
        candidate,
        left_bound,
        right_bound,
        observed: Vec::new(),
        null: Vec::new(),
        degenerate: false,
    };
    let left_rows = candidate - left_bound + 1;
    let right_rows = right_bound - candidate;
    let min_rows = left_rows.min(right_rows);
    if min_rows < 2 || rank >= min_rows.min(data.ncols()) {
        log::warn!("candidate {candidate}: sub-segment of {min_rows} rows cannot be refit at rank {rank}");
        sample.degenerate = true;
        return Ok(sample);
    }

    let segment = rows_1based(data, left_bound, right_bound);
    let base = seed::derive(seed, &[seed::TAG_REFIT, candidate as u64]);
    let fixed_perm = (!options.permute_each_rep).then(|| permute_segment(segment, seed::derive(base, &[u64::MAX])));
    let fit = |x: ArrayView2<'_, f64>, s: u64| -> Result<f64> {
        let settings = FitSettings {
            n_run: options.n_run,
            max_iter: options.max_iter,
            rel_tol: options.rel_tol,
            seed: s,
            schedule: Schedule::Sequential,
        };
        Ok(nmf::fit_best(x, rank, kind, &settings)?.loss)
    };
    let split = |z: ArrayView2<'_, f64>, s_left: u64, s_right: u64| -> Result<f64> {
        let (zl, zr) = z.split_at(Axis(0), left_rows);
        Ok(fit(zl, s_left)? + fit(zr, s_right)?)
    };
    let reps = exec::map_indexed(options.schedule, n_reps, |rep| -> Result<(f64, f64)> {
        let rep_seed = seed::derive(base, &[rep as u64]);
        let (s_left, s_right) = (seed::derive(rep_seed, &[0]), seed::derive(rep_seed, &[1]));
        let observed = split(segment, s_left, s_right)?;
        let null = match &fixed_perm {
            Some(z) => split(z.view(), s_left, s_right)?,
            None => {
                let z = permute_segment(segment, seed::derive(rep_seed, &[2]));
                split(z.view(), s_left, s_right)?
            }
        };
        Ok((observed, null))
    });
    for rep in reps {
        let (o, n) = rep?;
        sample.observed.push(o);
        sample.null.push(n);
    }
    Ok(sample)
}

/// One-sided Welch test of `H0: mean(a) >= mean(b)` against `Ha: mean(a) < mean(b)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t_stat: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: f64,
    pub p_value: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub alpha: f64,
    pub reject_null: bool,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

pub fn welch_test(a: &[f64], b: &[f64], alpha: f64) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid_input(format!(
            "Welch test needs at least 2 observations per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid_config(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let (mean_a, var_a) = mean_var(a);
    let (mean_b, var_b) = mean_var(b);
    let (n_a, n_b) = (a.len(), b.len());
    let (se_a, se_b) = (var_a / n_a as f64, var_b / n_b as f64);
    let se2 = se_a + se_b;
    let diff = mean_a - mean_b;

    let (t_stat, df, p_value) = if se2 > 0.0 {
        let t = diff / se2.sqrt();
        let df = se2 * se2 / (se_a * se_a / (n_a as f64 - 1.0) + se_b * se_b / (n_b as f64 - 1.0));
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid_input(e.to_string()))?;
        (t, df, dist.cdf(t))
    } else {
        // Both samples are constant: the difference is either exactly zero or certain.
        let df = (n_a + n_b - 2) as f64;
        match diff.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Less) => (f64::NEG_INFINITY, df, 0.0),
            Some(std::cmp::Ordering::Greater) => (f64::INFINITY, df, 1.0),
            _ => (0.0, df, 1.0),
        }
    };
    Ok(WelchResult {
        t_stat,
        df,
        p_value,
        mean_a,
        mean_b,
        var_a,
        var_b,
        n_a,
        n_b,
        alpha,
        reject_null: p_value < alpha,
    })
}

/// Refit sample and test outcome for one candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateTest {
    pub sample: RefitSample,
    /// `None` for degenerate samples.
    pub welch: Option<WelchResult>,
    pub confirmed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfirmedSet {
    pub points: Vec<usize>,
    /// Every candidate's test, confirmed or not, in candidate order.
    pub tests: Vec<CandidateTest>,
}

/// Keep the candidates whose refit losses are significantly below the permutation null.
pub fn confirm_candidates(
    data: ArrayView2<'_, f64>,
    candidates: &[usize],
    rank: usize,
    config: &DetectorConfig,
) -> Result<ConfirmedSet> {
    if candidates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid_input("candidates must be strictly increasing"));
    }
    let n_times = data.nrows();
    let mut bounds = Vec::with_capacity(candidates.len() + 2);
    bounds.push(1);
    bounds.extend_from_slice(candidates);
    bounds.push(n_times);

    let options = config.refit_options();
    let mut out = ConfirmedSet::default();
    for i in 1..bounds.len() - 1 {
        let sample = refit_losses(
            data,
            bounds[i],
            bounds[i - 1],
            bounds[i + 1],
            config.n_reps,
            rank,
            config.loss,
            &options,
            config.seed,
        )?;
        let welch = if sample.degenerate || config.n_reps < 2 {
            None
        } else {
            Some(welch_test(&sample.observed, &sample.null, config.alpha)?)
        };
        let confirmed = welch.is_some_and(|w| w.reject_null && w.mean_a < w.mean_b);
        if confirmed {
            out.points.push(sample.candidate);
        }
        out.tests.push(CandidateTest {
            sample,
            welch,
            confirmed,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n_times: usize, n_vars: usize) -> Array2<f64> {
        Array2::from_shape_fn((n_times, n_vars), |(t, j)| 1.0 + ((t * 5 + j * 11) % 7) as f64)
    }

    #[test]
    fn permutation_moves_whole_rows() {
        let z = ramp(30, 4);
        let p = permute_segment(z.view(), 17);
        let mut a: Vec<Vec<u64>> = z
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut b: Vec<Vec<u64>> = p
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(permute_segment(z.view(), 17), p);
        assert_ne!(permute_segment(z.view(), 18), p);
    }

    #[test]
    fn welch_hand_example() {
        // Means 10 and 11, both variances 4, 100 observations each: t = -1 / sqrt(0.08).
        let a: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 8.0 } else { 12.0 }).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 1.0).collect();
        let w = welch_test(&a, &b, 0.001).unwrap();
        let var = 4.0 * 100.0 / 99.0;
        assert!((w.var_a - var).abs() < 1e-12);
        assert!((w.t_stat - (-1.0 / (2.0 * var / 100.0).sqrt())).abs() < 1e-12);
        assert!((w.df - 198.0).abs() < 1e-9);
        assert!(w.p_value < 1e-3 && w.reject_null);

        let scaled: Vec<f64> = (0..100)
            .map(|i| 10.0 + if i % 2 == 0 { -2.0 } else { 2.0 } * (99.0f64 / 100.0).sqrt())
            .collect();
        let shifted: Vec<f64> = scaled.iter().map(|x| x + 1.0).collect();
        let w = welch_test(&scaled, &shifted, 0.001).unwrap();
        assert!((w.t_stat + 3.535_533_905_932_737).abs() < 1e-9);
    }

    #[test]
    fn welch_is_antisymmetric() {
        let a = [3.0, 4.5, 2.0, 7.0, 5.5];
        let b = [6.0, 8.0, 7.5, 9.0];
        let ab = welch_test(&a, &b, 0.05).unwrap();
        let ba = welch_test(&b, &a, 0.05).unwrap();
        assert_eq!(ab.t_stat, -ba.t_stat);
        assert_eq!(ab.df, ba.df);
        assert!((ab.p_value + ba.p_value - 1.0).abs() < 1e-12);
        assert!(ab.t_stat < 0.0 && ab.p_value < 0.5);
    }

    #[test]
    fn welch_constant_samples() {
        let w = welch_test(&[2.0; 5], &[2.0; 5], 0.01).unwrap();
        assert_eq!((w.t_stat, w.p_value, w.reject_null), (0.0, 1.0, false));
        let w = welch_test(&[1.0; 5], &[2.0; 5], 0.01).unwrap();
        assert!(w.t_stat == f64::NEG_INFINITY && w.reject_null);
        let w = welch_test(&[3.0; 5], &[2.0; 5], 0.01).unwrap();
        assert!(w.t_stat == f64::INFINITY && !w.reject_null);
    }

    #[test]
    fn welch_rejects_bad_input() {
        assert!(welch_test(&[1.0], &[1.0, 2.0], 0.1).is_err());
        assert!(welch_test(&[1.0, 2.0], &[1.0, 2.0], 0.0).is_err());
        assert!(welch_test(&[1.0, 2.0], &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn refit_of_constant_segment_matches_null() {
        let y = Array2::from_elem((40, 5), 3.0);
        let s = refit_losses(
            y.view(),
            20,
            1,
            40,
            6,
            1,
            LossKind::Euclidean,
            &RefitOptions::default(),
            3,
        )
        .unwrap();
        assert!(!s.degenerate);
        assert_eq!(s.observed, s.null);
        let w = welch_test(&s.observed, &s.null, 0.001).unwrap();
        assert!(!w.reject_null);
    }

    #[test]
    fn refit_is_deterministic_and_schedule_free() {
        let y = ramp(40, 6);
        let opts = RefitOptions {
            schedule: Schedule::Sequential,
            ..RefitOptions::default()
        };
        let a = refit_losses(y.view(), 18, 1, 40, 5, 2, LossKind::KullbackLeibler, &opts, 1).unwrap();
        let b = refit_losses(
            y.view(),
            18,
            1,
            40,
            5,
            2,
            LossKind::KullbackLeibler,
            &RefitOptions {
                schedule: Schedule::Parallel,
                ..opts
            },
            1,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.observed.len(), 5);
        assert!(a.observed.iter().chain(&a.null).all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn fixed_permutation_option() {
        let y = ramp(30, 4);
        let opts = RefitOptions {
            permute_each_rep: false,
            ..RefitOptions::default()
        };
        let s = refit_losses(y.view(), 15, 1, 30, 4, 1, LossKind::Euclidean, &opts, 2).unwrap();
        assert_eq!(s.null.len(), 4);
    }

    #[test]
    fn short_halves_are_degenerate() {
        let y = ramp(30, 4);
        let s = refit_losses(
            y.view(),
            1,
            1,
            30,
            4,
            1,
            LossKind::Euclidean,
            &RefitOptions::default(),
            0,
        )
        .unwrap();
        assert!(s.degenerate && s.observed.is_empty());
        let s = refit_losses(
            y.view(),
            10,
            1,
            30,
            4,
            4,
            LossKind::Euclidean,
            &RefitOptions::default(),
            0,
        )
        .unwrap();
        assert!(s.degenerate);
    }

    #[test]
    fn refit_checks_bounds() {
        let y = ramp(30, 4);
        let opts = RefitOptions::default();
        assert!(refit_losses(y.view(), 10, 11, 30, 4, 1, LossKind::Euclidean, &opts, 0).is_err());
        assert!(refit_losses(y.view(), 30, 1, 30, 4, 1, LossKind::Euclidean, &opts, 0).is_err());
        assert!(refit_losses(y.view(), 10, 1, 31, 4, 1, LossKind::Euclidean, &opts, 0).is_err());
        assert!(refit_losses(y.view(), 10, 1, 30, 0, 1, LossKind::Euclidean, &opts, 0).is_err());
    }

    fn small_config() -> DetectorConfig {
        DetectorConfig {
            n_reps: 8,
            n_run: 2,
            ..DetectorConfig::desk()
        }
    }

    #[test]
    fn no_candidates_confirms_nothing() {
        let y = ramp(30, 4);
        let set = confirm_candidates(y.view(), &[], 1, &small_config()).unwrap();
        assert!(set.points.is_empty() && set.tests.is_empty());
        assert!(confirm_candidates(y.view(), &[10, 10], 1, &small_config()).is_err());
    }

    #[test]
    fn confirms_clear_switch() {
        let y = Array2::from_shape_fn((60, 6), |(t, j)| {
            let wobble = 1.0 + 0.1 * ((t * 7 + j * 3) % 5) as f64;
            let on = if t < 30 { j < 3 } else { j >= 3 };
            if on {
                5.0 * wobble
            } else {
                0.2 * wobble
            }
        });
        let set = confirm_candidates(y.view(), &[30], 1, &small_config()).unwrap();
        assert_eq!(set.points, vec![30]);
        let test = &set.tests[0];
        assert_eq!((test.sample.left_bound, test.sample.right_bound), (1, 60));
        assert!(test.welch.unwrap().mean_a < test.welch.unwrap().mean_b);
    }
}
