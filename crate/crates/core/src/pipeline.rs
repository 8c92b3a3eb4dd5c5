// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end detection: shift, rank, candidate search, confirmation, networks.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::config::DetectorConfig;
use crate::data::TimeSeriesMatrix;
use crate::error::{Error, Result};
use crate::inference::{self, ConfirmedSet};
use crate::io::shift_nonneg;
use crate::network::{self, AdjacencyMatrix, ConsensusMatrix};
use crate::rank::{self, RankSearchResult};
use crate::seed;
use crate::segmentation::{self, CandidateSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankChoice {
    pub rank: usize,
    /// Present when the rank was selected from the data.
    pub search: Option<RankSearchResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub n_times: usize,
    pub n_vars: usize,
    /// Constant added to every cell to make the input non-negative.
    pub shift: f64,
    pub rank: RankChoice,
    pub candidates: CandidateSet,
    pub confirmed: ConfirmedSet,
    /// Confirmed change points (last index of each segment but the final one).
    pub change_points: Vec<usize>,
    pub config: DetectorConfig,
}

/// Run the full detector on raw (possibly negative) data.
pub fn detect(y_raw: ArrayView2<'_, f64>, config: &DetectorConfig) -> Result<DetectionResult> {
    config.validate()?;
    let (n_times, n_vars) = y_raw.dim();
    if n_times <= 2 * config.delta {
        return Err(Error::invalid_config(format!(
            "series of {n_times} points is too short for delta = {} (need T > 2 delta)",
            config.delta
        )));
    }
    let (y, shift) = shift_nonneg(y_raw)?;
    let rank = resolve_rank(&y, config)?;
    log::info!("using rank {}", rank.rank);

    let candidates =
        segmentation::discover_candidates(y.view(), config.delta, rank.rank, config.loss, &config.fit_settings())?;
    log::info!("candidates: {:?}", candidates.points);
    let confirmed = inference::confirm_candidates(y.view(), &candidates.points, rank.rank, config)?;
    log::info!("confirmed: {:?}", confirmed.points);

    Ok(DetectionResult {
        n_times,
        n_vars,
        shift,
        change_points: confirmed.points.clone(),
        rank,
        candidates,
        confirmed,
        config: config.clone(),
    })
}

pub fn resolve_rank(y: &TimeSeriesMatrix, config: &DetectorConfig) -> Result<RankChoice> {
    if let Some(rank) = config.rank {
        let cap = y.n_times().min(y.n_vars());
        if rank >= cap {
            return Err(Error::invalid_config(format!(
                "rank {rank} must be below min(T, p) = {cap}"
            )));
        }
        return Ok(RankChoice { rank, search: None });
    }
    let range = config.resolved_rank_range(y.n_times(), y.n_vars());
    let search = rank::find_optimal_rank(y.view(), config.loss, &config.fit_settings(), range)?;
    if search.exhausted {
        log::warn!("rank criterion never met in {range:?}; using {}", search.r_opt);
    }
    Ok(RankChoice {
        rank: search.r_opt,
        search: Some(search),
    })
}

/// How segment consensus matrices are turned into graphs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkCut {
    /// Number of clusters for the complete-linkage cut.
    pub clusters: Option<usize>,
    /// Consensus threshold for the thresholded graph.
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentNetwork {
    pub first: usize,
    pub last: usize,
    pub consensus: ConsensusMatrix,
    pub labels: Option<Vec<usize>>,
    pub cluster_adjacency: Option<AdjacencyMatrix>,
    pub threshold_adjacency: Option<AdjacencyMatrix>,
}

impl SegmentNetwork {
    pub fn cluster_density(&self) -> Option<f64> {
        self.cluster_adjacency.as_ref().map(network::graph_density)
    }

    pub fn threshold_density(&self) -> Option<f64> {
        self.threshold_adjacency.as_ref().map(network::graph_density)
    }
}

/// Consensus network for every segment between consecutive change points.
///
/// Segments too short to factorize at `rank` are skipped with a warning.
pub fn segment_networks(
    y: &TimeSeriesMatrix,
    change_points: &[usize],
    rank: usize,
    cut: NetworkCut,
    config: &DetectorConfig,
) -> Result<Vec<SegmentNetwork>> {
    if change_points.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid_input("change points must be strictly increasing"));
    }
    if let Some(&last) = change_points.last() {
        if last >= y.n_times() || change_points[0] == 0 {
            return Err(Error::invalid_input(format!(
                "change points must lie in 1..{}",
                y.n_times()
            )));
        }
    }
    if let Some(lambda) = cut.lambda {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid_config(format!("lambda must be in [0, 1], got {lambda}")));
        }
    }
    let mut out = Vec::new();
    for (i, (first, last)) in crate::sim::segment_bounds(change_points, y.n_times())
        .into_iter()
        .enumerate()
    {
        let rows = last + 1 - first;
        if rows < 2 || rank >= rows.min(y.n_vars()) {
            log::warn!("segment {first}..={last} is too short for rank {rank}; skipped");
            continue;
        }
        let consensus = network::consensus(
            y.rows(first, last),
            rank,
            config.loss,
            config.consensus_runs,
            seed::derive(config.seed, &[i as u64]),
            config.schedule,
        )?;
        let (labels, cluster_adjacency) = match cut.clusters {
            Some(k) => {
                let (labels, a) = network::cluster_cut(&consensus, k)?;
                (Some(labels), Some(a))
            }
            None => (None, None),
        };
        let threshold_adjacency = cut.lambda.map(|l| network::threshold_adjacency(&consensus, l));
        out.push(SegmentNetwork {
            first,
            last,
            consensus,
            labels,
            cluster_adjacency,
            threshold_adjacency,
        });
    }
    Ok(out)
}
