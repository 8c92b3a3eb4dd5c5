// SPDX-License-Identifier: MIT OR Apache-2.0

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `T x p` non-negative data matrix: rows are time points, columns are variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Array2<f64>", into = "Array2<f64>")]
pub struct TimeSeriesMatrix(Array2<f64>);

impl TimeSeriesMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (t, p) = values.dim();
        if t < 2 || p < 2 {
            return Err(Error::invalid_input(format!(
                "time series matrix must be at least 2x2, got {t}x{p}"
            )));
        }
        check_nonnegative(values.view())?;
        Ok(Self(values))
    }

    pub fn n_times(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    /// Rows `first..=last` using 1-based time indices.
    pub fn rows(&self, first: usize, last: usize) -> ArrayView2<'_, f64> {
        rows_1based(self.0.view(), first, last)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

impl TryFrom<Array2<f64>> for TimeSeriesMatrix {
    type Error = Error;

    fn try_from(values: Array2<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<TimeSeriesMatrix> for Array2<f64> {
    fn from(m: TimeSeriesMatrix) -> Self {
        m.0
    }
}

/// Rows `first..=last` of `x`, 1-based and inclusive.
pub(crate) fn rows_1based(x: ArrayView2<'_, f64>, first: usize, last: usize) -> ArrayView2<'_, f64> {
    debug_assert!(first >= 1 && first <= last && last <= x.nrows());
    x.slice_move(s![first - 1..last, ..])
}

pub(crate) fn check_nonnegative(x: ArrayView2<'_, f64>) -> Result<()> {
    for ((i, j), &v) in x.indexed_iter() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::invalid_input(format!(
                "entry ({i}, {j}) = {v} is not a finite non-negative value"
            )));
        }
    }
    Ok(())
}
