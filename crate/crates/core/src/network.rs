// SPDX-License-Identifier: MIT OR Apache-2.0

//! Consensus co-clustering networks for stationary segments.

use kodama::{linkage, Method};
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Schedule};
use crate::nmf::{self, LossKind};
use crate::seed;

/// Binary symmetric adjacency with an empty diagonal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyMatrix(Array2<u8>);

impl AdjacencyMatrix {
    pub fn new(values: Array2<u8>) -> Result<Self> {
        let (n, m) = values.dim();
        if n != m {
            return Err(Error::Dimension(format!("adjacency must be square, got {n}x{m}")));
        }
        for ((i, j), &v) in values.indexed_iter() {
            if v > 1 || v != values[[j, i]] || (i == j && v != 0) {
                return Err(Error::invalid_input(format!(
                    "adjacency entry ({i}, {j}) = {v} breaks the 0/1 symmetric zero-diagonal form"
                )));
            }
        }
        Ok(Self(values))
    }

    /// Co-membership graph of a labelling.
    pub fn from_labels(labels: &[usize]) -> Self {
        let p = labels.len();
        Self(Array2::from_shape_fn((p, p), |(i, j)| {
            u8::from(i != j && labels[i] == labels[j])
        }))
    }

    pub fn n_nodes(&self) -> usize {
        self.0.nrows()
    }

    pub fn values(&self) -> &Array2<u8> {
        &self.0
    }

    pub fn edge(&self, i: usize, j: usize) -> bool {
        self.0[[i, j]] == 1
    }
}

/// Fraction of node pairs that share a co-clustering, `0 <= C <= 1`, unit diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusMatrix {
    pub values: Array2<f64>,
    pub n_runs_used: usize,
}

/// Cluster memberships from one NMF fit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunClustering {
    pub labels: Vec<usize>,
    /// Variables whose `H` column was entirely zero; they are placed in cluster 0.
    pub unassigned: usize,
}

/// Assign each variable to the factor with the largest loading; ties go to the lower factor.
pub fn cluster_labels(h: ArrayView2<'_, f64>) -> RunClustering {
    let mut unassigned = 0;
    let labels = h
        .axis_iter(Axis(1))
        .map(|col| {
            let (best, max) = col.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc },
            );
            if max <= 0.0 {
                unassigned += 1;
                0
            } else {
                best
            }
        })
        .collect();
    RunClustering { labels, unassigned }
}

/// Fit NMF once and return the co-clustering adjacency of the variables.
pub fn run_adjacency(segment: ArrayView2<'_, f64>, rank: usize, kind: LossKind, seed: u64) -> Result<AdjacencyMatrix> {
    let clustering = run_clustering(segment, rank, kind, seed)?;
    Ok(AdjacencyMatrix::from_labels(&clustering.labels))
}

pub fn run_clustering(segment: ArrayView2<'_, f64>, rank: usize, kind: LossKind, seed: u64) -> Result<RunClustering> {
    if segment.nrows() < 2 {
        return Err(Error::invalid_input("segment needs at least 2 rows"));
    }
    let fit = nmf::fit_once(segment, rank, kind, nmf::DEFAULT_MAX_ITER, nmf::DEFAULT_REL_TOL, seed)?;
    let clustering = cluster_labels(fit.h.view());
    if clustering.unassigned > 0 {
        log::warn!("{} variables had an all-zero loading column", clustering.unassigned);
    }
    Ok(clustering)
}

/// Mean co-clustering adjacency over `n_run` seeded NMF fits.
pub fn consensus(
    segment: ArrayView2<'_, f64>,
    rank: usize,
    kind: LossKind,
    n_run: usize,
    seed: u64,
    schedule: Schedule,
) -> Result<ConsensusMatrix> {
    if n_run == 0 {
        return Err(Error::invalid_config("consensus needs n_run >= 1"));
    }
    let runs = exec::map_indexed(schedule, n_run, |run| {
        run_clustering(
            segment,
            rank,
            kind,
            seed::derive(seed, &[seed::TAG_NETWORK, run as u64]),
        )
    });
    let p = segment.ncols();
    // Integer counts keep the mean independent of summation order.
    let mut counts = Array2::<u32>::zeros((p, p));
    for run in runs {
        let labels = run?.labels;
        for i in 0..p {
            for j in 0..p {
                if labels[i] == labels[j] {
                    counts[[i, j]] += 1;
                }
            }
        }
    }
    let mut values = counts.mapv(|c| f64::from(c) / n_run as f64);
    values.diag_mut().fill(1.0);
    Ok(ConsensusMatrix {
        values,
        n_runs_used: n_run,
    })
}

/// Complete-linkage clustering on `1 - C`, cut into `k` clusters.
///
/// Labels are numbered by first appearance in variable order.
pub fn cluster_cut(c: &ConsensusMatrix, k: usize) -> Result<(Vec<usize>, AdjacencyMatrix)> {
    let p = c.values.nrows();
    if k == 0 || k > p {
        return Err(Error::invalid_config(format!("cluster count {k} must be in 1..={p}")));
    }
    let mut condensed = Vec::with_capacity(p * p.saturating_sub(1) / 2);
    for i in 0..p {
        for j in i + 1..p {
            condensed.push(1.0 - c.values[[i, j]]);
        }
    }
    let mut parent: Vec<usize> = (0..2 * p).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    if p > 1 {
        let dendrogram = linkage(&mut condensed, p, Method::Complete);
        for (step_idx, step) in dendrogram.steps().iter().take(p - k).enumerate() {
            let merged = p + step_idx;
            let a = find(&mut parent, step.cluster1);
            let b = find(&mut parent, step.cluster2);
            parent[a] = merged;
            parent[b] = merged;
        }
    }
    let mut canonical = std::collections::HashMap::new();
    let labels: Vec<usize> = (0..p)
        .map(|i| {
            let root = find(&mut parent, i);
            let next = canonical.len();
            *canonical.entry(root).or_insert(next)
        })
        .collect();
    let adjacency = AdjacencyMatrix::from_labels(&labels);
    Ok((labels, adjacency))
}

/// Edge wherever the consensus strictly exceeds `lambda`.
pub fn threshold_adjacency(c: &ConsensusMatrix, lambda: f64) -> AdjacencyMatrix {
    let p = c.values.nrows();
    AdjacencyMatrix(Array2::from_shape_fn((p, p), |(i, j)| {
        // Mirror the upper triangle so rounding can never make the graph asymmetric.
        let (a, b) = (i.min(j), i.max(j));
        u8::from(i != j && c.values[[a, b]] > lambda)
    }))
}

/// Fraction of off-diagonal entries that are edges.
pub fn graph_density(a: &AdjacencyMatrix) -> f64 {
    let p = a.n_nodes();
    if p < 2 {
        return 0.0;
    }
    let edges: usize = a.0.iter().map(|&v| v as usize).sum();
    edges as f64 / (p * (p - 1)) as f64
}
