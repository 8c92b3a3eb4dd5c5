// SPDX-License-Identifier: MIT OR Apache-2.0

//! Non-negative matrix factorization by multiplicative updates.
//!
//! `X (n x p) ~ W (n x r) . H (r x p)` with all factors non-negative, fitted
//! under either the squared Euclidean loss or the generalized
//! Kullback-Leibler divergence.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::check_nonnegative;
use crate::error::{Error, Result};
use crate::exec::{self, Schedule};
use crate::seed;

/// Floor added to every denominator of the update rules.
pub const EPS: f64 = 1e-16;

/// Number of iterations between convergence checks.
pub const CHECK_EVERY: usize = 20;

pub const DEFAULT_MAX_ITER: usize = 2000;
pub const DEFAULT_REL_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Euclidean,
    #[default]
    #[serde(rename = "kl")]
    KullbackLeibler,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "frobenius" => Ok(Self::Euclidean),
            "kl" | "kullback-leibler" => Ok(Self::KullbackLeibler),
            other => Err(Error::invalid_config(format!("unknown loss kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Euclidean => "euclidean",
            Self::KullbackLeibler => "kl",
        })
    }
}

/// A fitted factorization and its achieved loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factorization {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
    pub rank: usize,
    pub loss_kind: LossKind,
    pub loss: f64,
    /// Update steps performed by the winning run.
    pub iterations: usize,
    /// Restarts skipped because they hit a numerical failure.
    pub failed_runs: usize,
}

/// Restart and convergence settings for [`fit_best`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub n_run: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub seed: u64,
    #[serde(default)]
    pub schedule: Schedule,
}

impl FitSettings {
    pub fn new(n_run: usize, seed: u64) -> Self {
        Self {
            n_run,
            max_iter: DEFAULT_MAX_ITER,
            rel_tol: DEFAULT_REL_TOL,
            seed,
            schedule: Schedule::default(),
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_run == 0 {
            return Err(Error::invalid_config("n_run must be >= 1"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid_config("max_iter must be >= 1"));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::invalid_config(format!(
                "rel_tol must be a positive finite number, got {}",
                self.rel_tol
            )));
        }
        Ok(())
    }
}

fn check_conformable(x: &ArrayView2<'_, f64>, w: &ArrayView2<'_, f64>, h: &ArrayView2<'_, f64>) -> Result<()> {
    let (n, p) = x.dim();
    if w.nrows() != n || h.ncols() != p || w.ncols() != h.nrows() {
        return Err(Error::Dimension(format!(
            "X is {n}x{p}, W is {}x{}, H is {}x{}",
            w.nrows(),
            w.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    Ok(())
}

/// Loss between `X` and the reconstruction `W . H`.
///
/// Euclidean: `sum (X - WH)^2`. KL: `sum X ln(X / WH) - X + WH` with `0 ln 0 = 0`.
pub fn loss_of(x: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>, h: ArrayView2<'_, f64>, kind: LossKind) -> Result<f64> {
    check_conformable(&x, &w, &h)?;
    let wh = w.dot(&h);
    loss_against(x, wh.view(), kind)
}

fn loss_against(x: ArrayView2<'_, f64>, wh: ArrayView2<'_, f64>, kind: LossKind) -> Result<f64> {
    match kind {
        LossKind::Euclidean => {
            let rows = x.outer_iter().zip(wh.outer_iter()).map(|(xr, br)| {
                xr.iter().zip(br.iter()).fold(0.0, |acc, (&a, &b)| {
                    let d = a - b;
                    acc + d * d
                })
            });
            Ok(sum_rows(rows.collect()))
        }
        LossKind::KullbackLeibler => {
            let mut rows = Vec::with_capacity(x.nrows());
            for (i, (xr, br)) in x.outer_iter().zip(wh.outer_iter()).enumerate() {
                let mut acc = 0.0;
                for (j, (&a, &b)) in xr.iter().zip(br.iter()).enumerate() {
                    if a > 0.0 {
                        if b <= 0.0 {
                            return Err(Error::DivergenceUndefined {
                                row: i,
                                col: j,
                                value: a,
                            });
                        }
                        acc += a * (a / b).ln() - a + b;
                    } else {
                        acc += b;
                    }
                }
                rows.push(acc);
            }
            Ok(sum_rows(rows))
        }
    }
}

// Row totals are summed in sorted order so the loss is bitwise invariant
// under row permutations of (X, W).
fn sum_rows(mut rows: Vec<f64>) -> f64 {
    rows.sort_unstable_by(f64::total_cmp);
    rows.iter().sum()
}

/// One multiplicative update of `H` followed by `W` (which uses the new `H`).
pub fn update_step(
    x: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    h: ArrayView2<'_, f64>,
    kind: LossKind,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_conformable(&x, &w, &h)?;
    let mut w = w.to_owned();
    let mut h = h.to_owned();
    update_in_place(x, &mut w, &mut h, kind);
    Ok((w, h))
}

fn update_in_place(x: ArrayView2<'_, f64>, w: &mut Array2<f64>, h: &mut Array2<f64>, kind: LossKind) {
    match kind {
        LossKind::Euclidean => {
            // H <- H * (W'X) / (W'W H)
            let wt = w.t();
            let numer = wt.dot(&x);
            let denom = wt.dot(&*w).dot(&*h);
            Zip::from(&mut *h)
                .and(&numer)
                .and(&denom)
                .for_each(|v, &n, &d| *v *= n / (d + EPS));
            // W <- W * (XH') / (W HH')
            let ht = h.t();
            let numer = x.dot(&ht);
            let denom = w.dot(&h.dot(&ht));
            Zip::from(&mut *w)
                .and(&numer)
                .and(&denom)
                .for_each(|v, &n, &d| *v *= n / (d + EPS));
        }
        LossKind::KullbackLeibler => {
            // H <- H * (W'(X / WH)) / (W'1)
            let mut ratio = w.dot(&*h);
            Zip::from(&mut ratio).and(&x).for_each(|q, &a| *q = a / (*q + EPS));
            let numer = w.t().dot(&ratio);
            let wsum = w.sum_axis(Axis(0));
            for (k, mut row) in h.axis_iter_mut(Axis(0)).enumerate() {
                let d = wsum[k] + EPS;
                row.zip_mut_with(&numer.row(k), |v, &n| *v *= n / d);
            }
            // W <- W * ((X / WH) H') / (1 H')
            let mut ratio = w.dot(&*h);
            Zip::from(&mut ratio).and(&x).for_each(|q, &a| *q = a / (*q + EPS));
            let numer = ratio.dot(&h.t());
            let hsum = h.sum_axis(Axis(1));
            Zip::from(&mut *w)
                .and(&numer)
                .and_broadcast(&hsum)
                .for_each(|v, &n, &s| *v *= n / (s + EPS));
        }
    }
}

fn validate_fit_input(x: &ArrayView2<'_, f64>, rank: usize) -> Result<()> {
    let (n, p) = x.dim();
    if rank == 0 || rank >= n.min(p) {
        return Err(Error::invalid_input(format!(
            "rank {rank} must satisfy 1 <= r < min(n, p) = {}",
            n.min(p)
        )));
    }
    check_nonnegative(x.view())
}

fn init_factors(x: &ArrayView2<'_, f64>, rank: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let (n, p) = x.dim();
    let scale = x.iter().copied().fold(0.0_f64, f64::max);
    // All-zero data still needs strictly positive factors.
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut rng = seed::rng(seed);
    // 1 - u maps [0, 1) onto (0, 1].
    let mut draw = move || scale * (1.0 - rng.random::<f64>());
    let w = Array2::from_shape_simple_fn((n, rank), &mut draw);
    let h = Array2::from_shape_simple_fn((rank, p), &mut draw);
    (w, h)
}

/// A single seeded multiplicative-update fit.
pub fn fit_once(
    x: ArrayView2<'_, f64>,
    rank: usize,
    kind: LossKind,
    max_iter: usize,
    rel_tol: f64,
    seed: u64,
) -> Result<Factorization> {
    validate_fit_input(&x, rank)?;
    fit_validated(x, rank, kind, max_iter, rel_tol, seed)
}

fn fit_validated(
    x: ArrayView2<'_, f64>,
    rank: usize,
    kind: LossKind,
    max_iter: usize,
    rel_tol: f64,
    seed: u64,
) -> Result<Factorization> {
    let (mut w, mut h) = init_factors(&x, rank, seed);
    let eval = |w: &Array2<f64>, h: &Array2<f64>, iteration: usize| -> Result<f64> {
        match loss_against(x, w.dot(h).view(), kind) {
            Ok(l) if l.is_finite() => Ok(l),
            _ => Err(Error::NumericalFailure { iteration }),
        }
    };
    let mut checkpoint = eval(&w, &h, 0)?;
    let mut loss = checkpoint;
    let mut iterations = 0;
    while iterations < max_iter {
        update_in_place(x, &mut w, &mut h, kind);
        iterations += 1;
        if iterations % CHECK_EVERY == 0 || iterations == max_iter {
            loss = eval(&w, &h, iterations)?;
            if iterations % CHECK_EVERY == 0 {
                let improvement = (checkpoint - loss) / checkpoint.max(EPS);
                if improvement < rel_tol {
                    break;
                }
                checkpoint = loss;
            }
        }
    }
    Ok(Factorization {
        w,
        h,
        rank,
        loss_kind: kind,
        loss,
        iterations,
        failed_runs: 0,
    })
}

/// Best of `settings.n_run` seeded restarts; ties go to the lowest run index.
///
/// Run `i` is seeded with [`seed::sub_seed`]`(settings.seed, i)` regardless of
/// `n_run`, so a larger `n_run` always contains the smaller one's runs.
pub fn fit_best(x: ArrayView2<'_, f64>, rank: usize, kind: LossKind, settings: &FitSettings) -> Result<Factorization> {
    settings.validate()?;
    validate_fit_input(&x, rank)?;
    let runs = exec::map_indexed(settings.schedule, settings.n_run, |run| {
        fit_validated(
            x,
            rank,
            kind,
            settings.max_iter,
            settings.rel_tol,
            seed::sub_seed(settings.seed, run),
        )
    });
    let mut failed = 0;
    let mut best: Option<Factorization> = None;
    let mut last_err = None;
    for run in runs {
        match run {
            Ok(f) => {
                if best.as_ref().is_none_or(|b| f.loss < b.loss) {
                    best = Some(f);
                }
            }
            Err(e) => {
                failed += 1;
                last_err = Some(e);
            }
        }
    }
    match best {
        Some(mut f) => {
            if failed > 0 {
                log::warn!("{failed} of {} NMF restarts failed numerically", settings.n_run);
            }
            f.failed_runs = failed;
            Ok(f)
        }
        None => Err(last_err.expect("n_run >= 1")),
    }
}
