// SPDX-License-Identifier: MIT OR Apache-2.0

//! Block-structured Gaussian simulation scenarios and detection scoring.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const WITHIN_CLUSTER: f64 = 0.75;
pub const BETWEEN_CLUSTER: f64 = 0.20;

/// Eigenvalues at or below this are treated as not positive definite.
pub const PD_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    /// Constant between-cluster correlation.
    Structure1,
    /// Between-cluster correlation decaying geometrically with index distance.
    Structure2,
}

/// Cluster layout of `p` variables under one covariance structure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub labels: Vec<usize>,
    pub structure: Structure,
}

impl CovarianceSpec {
    pub fn n_vars(&self) -> usize {
        self.labels.len()
    }

    pub fn n_clusters(&self) -> usize {
        let mut seen: Vec<usize> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Same-cluster indicator matrix with zero diagonal.
    pub fn true_adjacency(&self) -> Array2<u8> {
        let p = self.n_vars();
        Array2::from_shape_fn((p, p), |(i, j)| u8::from(i != j && self.labels[i] == self.labels[j]))
    }
}

/// Covariance matrix plus any diagonal ridge that was needed to make it positive definite.
#[derive(Clone, Debug, PartialEq)]
pub struct Sigma {
    pub matrix: Array2<f64>,
    pub ridge: f64,
}

fn raw_sigma(spec: &CovarianceSpec) -> Array2<f64> {
    let p = spec.n_vars();
    Array2::from_shape_fn((p, p), |(i, j)| {
        if i == j {
            1.0
        } else if spec.labels[i] == spec.labels[j] {
            WITHIN_CLUSTER
        } else {
            match spec.structure {
                Structure::Structure1 => BETWEEN_CLUSTER,
                Structure::Structure2 => BETWEEN_CLUSTER.powi(i.abs_diff(j) as i32),
            }
        }
    })
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    let (n, m) = a.dim();
    DMatrix::from_fn(n, m, |i, j| a[[i, j]])
}

/// Build the covariance for `spec`.
///
/// When the minimum eigenvalue is at or below [`PD_FLOOR`] a ridge `eps * I`
/// is added, with `eps` the smallest shift that lifts it to `2 * PD_FLOOR`.
pub fn build_sigma(spec: &CovarianceSpec) -> Result<Sigma> {
    if spec.labels.is_empty() {
        return Err(Error::invalid_input("covariance spec has no variables"));
    }
    let mut matrix = raw_sigma(spec);
    let min_eig = to_dmatrix(&matrix).symmetric_eigenvalues().min();
    let mut ridge = 0.0;
    if min_eig <= PD_FLOOR {
        ridge = 2.0 * PD_FLOOR - min_eig;
        matrix.diag_mut().mapv_inplace(|d| d + ridge);
        log::info!(
            "covariance ({:?}, {} clusters) had min eigenvalue {min_eig:.4}; added ridge {ridge:.4}",
            spec.structure,
            spec.n_clusters()
        );
    }
    Ok(Sigma { matrix, ridge })
}

fn cholesky(sigma: &Array2<f64>, spec: &CovarianceSpec) -> Result<Array2<f64>> {
    let chol = to_dmatrix(sigma).cholesky().ok_or_else(|| Error::NotPositiveDefinite {
        spec: format!("{:?} with {} clusters", spec.structure, spec.n_clusters()),
    })?;
    let l = chol.l();
    Ok(Array2::from_shape_fn(sigma.dim(), |(i, j)| l[(i, j)]))
}

/// One of the five simulation designs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub id: u8,
    pub n_times: usize,
    pub n_vars: usize,
    /// Last time index (1-based) of each segment except the final one.
    pub change_points: Vec<usize>,
}

impl SimulationScenario {
    /// The scenario at its full published dimensions.
    pub fn paper(id: u8) -> Result<Self> {
        let (n_times, n_vars, change_points) = match id {
            1 => (200, 400, vec![]),
            2 => (200, 400, vec![100]),
            3 => (400, 600, vec![100, 200, 300]),
            4 => (600, 800, vec![200, 400]),
            5 => (300, 200, vec![100, 200]),
            _ => {
                return Err(Error::invalid_config(format!(
                    "unknown simulation {id}; expected 1..=5"
                )))
            }
        };
        Ok(Self {
            id,
            n_times,
            n_vars,
            change_points,
        })
    }

    /// Same design with a smaller number of variables.
    pub fn with_vars(id: u8, n_vars: usize) -> Result<Self> {
        let min_vars = if id == 3 { 6 } else { 4 };
        if n_vars < min_vars {
            return Err(Error::invalid_config(format!(
                "simulation {id} needs at least {min_vars} variables"
            )));
        }
        Ok(Self {
            n_vars,
            ..Self::paper(id)?
        })
    }

    pub fn structure(&self) -> Structure {
        match self.id {
            1 | 2 => Structure::Structure1,
            _ => Structure::Structure2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = 1;
        for &c in &self.change_points {
            if c <= prev || c >= self.n_times {
                return Err(Error::invalid_config(format!(
                    "change points {:?} must be strictly increasing inside (1, {})",
                    self.change_points, self.n_times
                )));
            }
            prev = c;
        }
        Ok(())
    }

    /// `[first, last]` time indices (1-based, inclusive) of every segment.
    pub fn segment_bounds(&self) -> Vec<(usize, usize)> {
        segment_bounds(&self.change_points, self.n_times)
    }

    /// Cluster layout of every segment, drawn under `seed`.
    pub fn segment_specs(&self, seed: u64) -> Result<Vec<CovarianceSpec>> {
        self.validate()?;
        let p = self.n_vars;
        let mut rng = seed::rng(seed::derive(seed, &[0x4c41_4245]));
        let labels: Vec<Vec<usize>> = match self.id {
            1 => vec![contiguous_labels(p, 2)],
            2 => {
                let a = contiguous_labels(p, 2);
                let mut b = a.clone();
                b.shuffle(&mut rng);
                vec![a, b]
            }
            3 => {
                let a = contiguous_labels(p, 3);
                // The third cluster is dissolved, alternating its members into the other two.
                let mut turn = 0;
                let b: Vec<usize> = a
                    .iter()
                    .map(|&l| {
                        if l == 2 {
                            turn ^= 1;
                            1 - turn
                        } else {
                            l
                        }
                    })
                    .collect();
                let mut c = b.clone();
                c.shuffle(&mut rng);
                // The lowest-index third of each cluster forms a new third cluster.
                let mut d = c.clone();
                for cluster in 0..2 {
                    let members: Vec<usize> = (0..p).filter(|&j| c[j] == cluster).collect();
                    for &j in members.iter().take(members.len() / 3) {
                        d[j] = 2;
                    }
                }
                vec![a, b, c, d]
            }
            4 => {
                let a = contiguous_labels(p, 2);
                let b = swap_halves(&a, &mut rng);
                let c = swap_halves(&b, &mut rng);
                vec![a, b, c]
            }
            5 => {
                let a = contiguous_labels(p, 2);
                let mut b = a.clone();
                b.shuffle(&mut rng);
                vec![a.clone(), b, a]
            }
            _ => return Err(Error::invalid_config(format!("unknown simulation {}", self.id))),
        };
        let structure = self.structure();
        Ok(labels
            .into_iter()
            .map(|labels| CovarianceSpec { labels, structure })
            .collect())
    }
}

fn contiguous_labels(p: usize, k: usize) -> Vec<usize> {
    (0..p).map(|j| j * k / p).collect()
}

// Half of each cluster's members, chosen at random, move to the other cluster.
fn swap_halves(labels: &[usize], rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut out = labels.to_vec();
    for cluster in 0..2 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == cluster).collect();
        members.shuffle(rng);
        for &j in members.iter().take(members.len() / 2) {
            out[j] = 1 - cluster;
        }
    }
    out
}

pub(crate) fn segment_bounds(change_points: &[usize], n_times: usize) -> Vec<(usize, usize)> {
    let mut bounds = Vec::with_capacity(change_points.len() + 1);
    let mut start = 1;
    for &c in change_points {
        bounds.push((start, c));
        start = c + 1;
    }
    bounds.push((start, n_times));
    bounds
}

/// Simulated data before any non-negativity shift.
#[derive(Clone, Debug)]
pub struct Simulated {
    pub data: Array2<f64>,
    pub truth: Vec<usize>,
    pub specs: Vec<CovarianceSpec>,
    /// Ridge added to each segment's covariance.
    pub ridges: Vec<f64>,
}

/// Draw a realization of `scenario`: rows are i.i.d. `N(0, Sigma_s)` within segment `s`.
pub fn generate(scenario: &SimulationScenario, seed: u64) -> Result<Simulated> {
    let specs = scenario.segment_specs(seed)?;
    let bounds = scenario.segment_bounds();
    let p = scenario.n_vars;
    let mut data = Array2::zeros((scenario.n_times, p));
    let mut rng = seed::rng(seed::derive(seed, &[0x4452_4157]));
    let mut ridges = Vec::with_capacity(specs.len());
    let mut z = vec![0.0; p];
    for (spec, &(first, last)) in specs.iter().zip(&bounds) {
        let sigma = build_sigma(spec)?;
        ridges.push(sigma.ridge);
        let l = cholesky(&sigma.matrix, spec)?;
        for t in first..=last {
            z.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
            let mut row = data.row_mut(t - 1);
            for i in 0..p {
                row[i] = (0..=i).map(|k| l[[i, k]] * z[k]).sum();
            }
        }
    }
    Ok(Simulated {
        data,
        truth: scenario.change_points.clone(),
        specs,
        ridges,
    })
}

/// Lengths of the segments delimited by `truth` in a series of `n_times` points.
pub fn segment_lengths(truth: &[usize], n_times: usize) -> Vec<usize> {
    segment_bounds(truth, n_times).iter().map(|&(a, b)| b + 1 - a).collect()
}

/// Unnormalized Hausdorff distance between two non-empty point sets.
pub fn hausdorff_raw(truth: &[usize], detected: &[usize]) -> Option<usize> {
    if truth.is_empty() || detected.is_empty() {
        return None;
    }
    let directed = |a: &[usize], b: &[usize]| {
        a.iter()
            .map(|&x| b.iter().map(|&y| x.abs_diff(y)).min().unwrap_or(0))
            .max()
            .unwrap_or(0)
    };
    Some(directed(truth, detected).max(directed(detected, truth)))
}

/// Hausdorff distance scaled by the largest true segment length; `None` if either set is empty.
pub fn hausdorff(truth: &[usize], detected: &[usize], segment_lengths: &[usize]) -> Option<f64> {
    let n_s = segment_lengths.iter().copied().max()?;
    hausdorff_raw(truth, detected).map(|d| d as f64 / n_s as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matches {
    pub tp: usize,
    pub fp: usize,
}

/// One-to-one matching of detections to truths within `+-window`, nearest pairs first.
///
/// Returns the counts and, per true point, the index of its matched detection.
pub fn match_points(truth: &[usize], detected: &[usize], window: usize) -> (Matches, Vec<Option<usize>>) {
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (i, &q) in truth.iter().enumerate() {
        for (k, &d) in detected.iter().enumerate() {
            let dist = q.abs_diff(d);
            if dist <= window {
                pairs.push((dist, i, k));
            }
        }
    }
    pairs.sort_unstable();
    let mut truth_match = vec![None; truth.len()];
    let mut used = vec![false; detected.len()];
    for (_, i, k) in pairs {
        if truth_match[i].is_none() && !used[k] {
            truth_match[i] = Some(k);
            used[k] = true;
        }
    }
    let tp = truth_match.iter().flatten().count();
    (
        Matches {
            tp,
            fp: detected.len() - tp,
        },
        truth_match,
    )
}

pub fn tp_fp(truth: &[usize], detected: &[usize], window: usize) -> Matches {
    match_points(truth, detected, window).0
}

/// Scoring of one detection run against the truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub within_10: Matches,
    pub within_1: Matches,
    /// Per true change point: detected within +-10.
    pub hits_10: Vec<bool>,
    pub hits_1: Vec<bool>,
    /// `None` when either point set is empty.
    pub hausdorff: Option<f64>,
    pub largest_segment: usize,
}

pub fn evaluate(truth: &[usize], detected: &[usize], n_times: usize) -> EvalReport {
    let lengths = segment_lengths(truth, n_times);
    let (within_10, m10) = match_points(truth, detected, 10);
    let (within_1, m1) = match_points(truth, detected, 1);
    EvalReport {
        within_10,
        within_1,
        hits_10: m10.iter().map(Option::is_some).collect(),
        hits_1: m1.iter().map(Option::is_some).collect(),
        hausdorff: hausdorff(truth, detected, &lengths),
        largest_segment: lengths.iter().copied().max().unwrap_or(n_times),
    }
}

/// Fraction of off-diagonal entries on which two adjacency matrices agree.
pub fn adjacency_overlap(a: &Array2<u8>, b: &Array2<u8>) -> f64 {
    let p = a.nrows();
    if p < 2 {
        return 1.0;
    }
    let agree = (0..p)
        .flat_map(|i| (0..p).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && a[[i, j]] == b[[i, j]])
        .count();
    agree as f64 / (p * (p - 1)) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(labels: Vec<usize>, structure: Structure) -> CovarianceSpec {
        CovarianceSpec { labels, structure }
    }

    #[test]
    fn structure_one_entries() {
        let s = build_sigma(&spec(vec![0, 0, 1, 1], Structure::Structure1)).unwrap();
        assert_eq!(s.ridge, 0.0);
        let m = &s.matrix;
        assert_eq!((m[[0, 0]], m[[0, 1]], m[[0, 2]], m[[1, 3]]), (1.0, 0.75, 0.2, 0.2));
        assert_eq!(m, &m.t().to_owned());
    }

    #[test]
    fn structure_two_decays_between_clusters() {
        let s = build_sigma(&spec(vec![0, 0, 1, 1], Structure::Structure2)).unwrap();
        let m = &s.matrix;
        assert_eq!(m[[0, 1]], 0.75);
        assert!((m[[1, 2]] - 0.2).abs() < 1e-15);
        assert!((m[[0, 2]] - 0.04).abs() < 1e-15);
        assert!((m[[0, 3]] - 0.008).abs() < 1e-15);
    }

    #[test]
    fn ridge_lifts_indefinite_covariance() {
        let scenario = SimulationScenario::with_vars(5, 60).unwrap();
        let specs = scenario.segment_specs(1).unwrap();
        let shuffled = build_sigma(&specs[1]).unwrap();
        assert!(shuffled.ridge > 0.0);
        let min_eig = to_dmatrix(&shuffled.matrix).symmetric_eigenvalues().min();
        assert!((min_eig - 2.0 * PD_FLOOR).abs() < 1e-9);
        assert_eq!(build_sigma(&specs[0]).unwrap().ridge, 0.0);
        assert!(build_sigma(&spec(vec![], Structure::Structure1)).is_err());
    }

    #[test]
    fn sample_correlation_matches_design() {
        let scenario = SimulationScenario {
            id: 1,
            n_times: 5000,
            n_vars: 6,
            change_points: vec![],
        };
        let sim = generate(&scenario, 3).unwrap();
        let x = &sim.data;
        let n = x.nrows() as f64;
        let corr = |i: usize, j: usize| {
            let (a, b) = (x.column(i), x.column(j));
            let (ma, mb) = (a.sum() / n, b.sum() / n);
            let cov = a.iter().zip(b).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>();
            let va = a.iter().map(|u| (u - ma).powi(2)).sum::<f64>();
            let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>();
            cov / (va * vb).sqrt()
        };
        assert!((corr(0, 1) - 0.75).abs() < 0.03);
        assert!((corr(3, 5) - 0.75).abs() < 0.03);
        assert!((corr(0, 4) - 0.20).abs() < 0.03);
    }

    #[test]
    fn scenario_layouts() {
        let s3 = SimulationScenario::with_vars(3, 30).unwrap();
        let specs = s3.segment_specs(5).unwrap();
        let counts: Vec<usize> = specs.iter().map(CovarianceSpec::n_clusters).collect();
        assert_eq!(counts, vec![3, 2, 2, 3]);
        assert!(specs.iter().all(|s| s.structure == Structure::Structure2));

        let s5 = SimulationScenario::with_vars(5, 40).unwrap();
        let specs = s5.segment_specs(5).unwrap();
        assert_eq!(specs[0], specs[2]);
        assert_ne!(specs[0], specs[1]);
        assert_eq!(specs[0].labels, contiguous_labels(40, 2));

        let s4 = SimulationScenario::with_vars(4, 40).unwrap();
        let specs = s4.segment_specs(5).unwrap();
        for pair in specs.windows(2) {
            let moved = pair[0]
                .labels
                .iter()
                .zip(&pair[1].labels)
                .filter(|(a, b)| a != b)
                .count();
            assert_eq!(moved, 20);
        }

        assert_eq!(SimulationScenario::paper(1).unwrap().structure(), Structure::Structure1);
        assert!(SimulationScenario::paper(6).is_err());
        assert!(SimulationScenario::with_vars(3, 5).is_err());
    }

    #[test]
    fn generate_is_seeded() {
        let scenario = SimulationScenario::with_vars(2, 12).unwrap();
        let a = generate(&scenario, 9).unwrap();
        let b = generate(&scenario, 9).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.truth, vec![100]);
        assert_eq!(a.data.dim(), (200, 12));
        assert_ne!(generate(&scenario, 10).unwrap().data, a.data);
    }

    #[test]
    fn segments_partition_series() {
        assert_eq!(segment_bounds(&[100], 200), vec![(1, 100), (101, 200)]);
        assert_eq!(segment_lengths(&[], 200), vec![200]);
        assert_eq!(segment_lengths(&[100, 200], 300), vec![100, 100, 100]);
    }

    #[test]
    fn hausdorff_examples() {
        assert_eq!(hausdorff(&[100], &[110], &segment_lengths(&[100], 200)), Some(0.1));
        assert_eq!(hausdorff_raw(&[100, 200], &[105]), Some(95));
        assert_eq!(hausdorff_raw(&[100], &[]), None);
        assert_eq!(hausdorff(&[], &[100], &[200]), None);
    }

    #[test]
    fn matching_examples() {
        assert_eq!(tp_fp(&[100], &[95, 105], 10), Matches { tp: 1, fp: 1 });
        assert_eq!(tp_fp(&[100], &[111], 10), Matches { tp: 0, fp: 1 });
        assert_eq!(tp_fp(&[100, 200], &[101, 199], 1), Matches { tp: 2, fp: 0 });
        assert_eq!(tp_fp(&[], &[50], 10), Matches { tp: 0, fp: 1 });
        let (m, matched) = match_points(&[100, 120], &[110, 121], 10);
        assert_eq!(m, Matches { tp: 2, fp: 0 });
        assert_eq!(matched, vec![Some(0), Some(1)]);
    }

    #[test]
    fn evaluate_reports_hits() {
        let r = evaluate(&[100, 200], &[98, 150], 300);
        assert_eq!(r.within_10, Matches { tp: 1, fp: 1 });
        assert_eq!(r.hits_10, vec![true, false]);
        assert_eq!(r.hits_1, vec![false, false]);
        assert_eq!(r.largest_segment, 100);
        assert_eq!(r.hausdorff, Some(0.5));
    }

    #[test]
    fn overlap_counts_off_diagonal() {
        let a = spec(vec![0, 0, 1, 1], Structure::Structure1).true_adjacency();
        let b = spec(vec![0, 0, 0, 1], Structure::Structure1).true_adjacency();
        assert_eq!(adjacency_overlap(&a, &a), 1.0);
        assert!((adjacency_overlap(&a, &b) - 0.5).abs() < 1e-15);
    }
}
