// SPDX-License-Identifier: MIT OR Apache-2.0

//! Factorization rank selection.
//!
//! Losses are computed for increasing ranks on the data and on a copy whose
//! columns were shuffled independently. The chosen rank is the first one at
//! which the data's loss drops by less than the shuffled copy's loss.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::nmf::{self, FitSettings, LossKind};
use crate::seed;

/// Shuffle each column across time independently.
pub fn permute_per_column(y: ArrayView2<'_, f64>, seed: u64) -> Array2<f64> {
    let mut out = y.to_owned();
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..y.nrows()).collect();
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        order.shuffle(&mut rng);
        for (dst, &src) in col.iter_mut().zip(&order) {
            *dst = y[[src, j]];
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSearchResult {
    pub r_opt: usize,
    pub losses_original: BTreeMap<usize, f64>,
    pub losses_permuted: BTreeMap<usize, f64>,
    pub ranks_tested: Vec<usize>,
    /// No rank satisfied the criterion; `r_opt` is the top of the range.
    pub exhausted: bool,
}

/// Select the rank in `r_min..=r_max`.
pub fn find_optimal_rank(
    y: ArrayView2<'_, f64>,
    kind: LossKind,
    settings: &FitSettings,
    rank_range: (usize, usize),
) -> Result<RankSearchResult> {
    let (r_min, r_max) = rank_range;
    let cap = y.nrows().min(y.ncols());
    if r_min < 2 || r_max < r_min || r_max >= cap {
        return Err(Error::invalid_config(format!(
            "rank range {r_min}..={r_max} must satisfy 2 <= r_min <= r_max < min(T, p) = {cap}"
        )));
    }
    settings.validate()?;
    let permuted = permute_per_column(y, seed::derive(settings.seed, &[seed::TAG_RANK, 1]));
    // Every rank and both matrices share one set of restart seeds.
    let fit_settings = settings.with_seed(seed::derive(settings.seed, &[seed::TAG_RANK, 0]));
    let ranks: Vec<usize> = (r_min..=r_max).collect();
    let losses = exec::map_indexed(settings.schedule, 2 * ranks.len(), |i| {
        let x = if i % 2 == 0 { y } else { permuted.view() };
        nmf::fit_best(x, ranks[i / 2], kind, &fit_settings).map(|f| f.loss)
    });
    let mut losses_original = BTreeMap::new();
    let mut losses_permuted = BTreeMap::new();
    for (i, loss) in losses.into_iter().enumerate() {
        let target = if i % 2 == 0 {
            &mut losses_original
        } else {
            &mut losses_permuted
        };
        target.insert(ranks[i / 2], loss?);
    }

    let r_opt = first_smaller_drop(&losses_original, &losses_permuted);
    Ok(RankSearchResult {
        r_opt: r_opt.unwrap_or(r_max),
        exhausted: r_opt.is_none(),
        losses_original,
        losses_permuted,
        ranks_tested: ranks,
    })
}

/// First rank whose loss drop from the previous rank is smaller on the data than on the null.
pub fn first_smaller_drop(original: &BTreeMap<usize, f64>, permuted: &BTreeMap<usize, f64>) -> Option<usize> {
    let ranks: Vec<usize> = original.keys().copied().filter(|r| permuted.contains_key(r)).collect();
    ranks.windows(2).find_map(|w| {
        let drop = original[&w[0]] - original[&w[1]];
        let drop_perm = permuted[&w[0]] - permuted[&w[1]];
        (drop < drop_perm).then_some(w[1])
    })
}
