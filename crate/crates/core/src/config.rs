// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Schedule;
use crate::inference::RefitOptions;
use crate::nmf::{self, FitSettings, LossKind};

/// Largest rank tried by default.
pub const DEFAULT_MAX_RANK: usize = 15;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size settings: 100 restarts, 1000 refit repetitions.
    #[default]
    Paper,
    /// Desktop-sized settings: 20 restarts, 100 refit repetitions, ranks up to 8.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            other => Err(Error::invalid_config(format!("unknown preset {other:?}"))),
        }
    }
}

/// All parameters of a detection run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Minimum distance between candidate change points.
    pub delta: usize,
    /// NMF restarts for rank selection and block search.
    pub n_run: usize,
    /// Refit repetitions per candidate.
    pub n_reps: usize,
    pub alpha: f64,
    pub loss: LossKind,
    /// Fixed factorization rank; selected from the data when `None`.
    pub rank: Option<usize>,
    /// Inclusive rank search range; defaults to `2..=min(15, min(T, p) - 1)`.
    pub rank_range: Option<(usize, usize)>,
    pub seed: u64,
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Restarts per sub-segment fit inside each refit repetition.
    pub refit_n_run: usize,
    pub permute_each_rep: bool,
    /// NMF runs averaged into each consensus matrix.
    pub consensus_runs: usize,
    #[serde(default)]
    pub schedule: Schedule,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl DetectorConfig {
    pub fn paper() -> Self {
        Self {
            delta: 50,
            n_run: 100,
            n_reps: 1000,
            alpha: 0.001,
            loss: LossKind::KullbackLeibler,
            rank: None,
            rank_range: None,
            seed: 0,
            max_iter: nmf::DEFAULT_MAX_ITER,
            rel_tol: nmf::DEFAULT_REL_TOL,
            refit_n_run: 1,
            permute_each_rep: true,
            consensus_runs: 100,
            schedule: Schedule::default(),
        }
    }

    pub fn desk() -> Self {
        Self {
            n_run: 20,
            n_reps: 100,
            rank_range: Some((2, 8)),
            consensus_runs: 20,
            ..Self::paper()
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta < 2 {
            return Err(Error::invalid_config(format!("delta must be >= 2, got {}", self.delta)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid_config(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.n_run == 0 || self.n_reps == 0 || self.refit_n_run == 0 || self.consensus_runs == 0 {
            return Err(Error::invalid_config(
                "n_run, n_reps, refit_n_run and consensus_runs must be >= 1",
            ));
        }
        if self.rank == Some(0) {
            return Err(Error::invalid_config("rank must be >= 1"));
        }
        if let Some((lo, hi)) = self.rank_range {
            if lo < 2 || hi < lo {
                return Err(Error::invalid_config(format!("invalid rank range {lo}..={hi}")));
            }
        }
        self.fit_settings().validate()
    }

    pub fn fit_settings(&self) -> FitSettings {
        FitSettings {
            n_run: self.n_run,
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            seed: self.seed,
            schedule: self.schedule,
        }
    }

    pub fn refit_options(&self) -> RefitOptions {
        RefitOptions {
            n_run: self.refit_n_run,
            permute_each_rep: self.permute_each_rep,
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            schedule: self.schedule,
        }
    }

    /// Rank range for a `n_times x n_vars` input.
    pub fn resolved_rank_range(&self, n_times: usize, n_vars: usize) -> (usize, usize) {
        let cap = n_times.min(n_vars).saturating_sub(1);
        match self.rank_range {
            Some((lo, hi)) => (lo, hi.min(cap)),
            None => (2, DEFAULT_MAX_RANK.min(cap)),
        }
    }
}
