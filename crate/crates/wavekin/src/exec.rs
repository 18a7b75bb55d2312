use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Execution mode for embarrassingly parallel sweeps.
///
/// Work is only ever split across independent outputs; every reduction runs
/// sequentially afterwards. Results are therefore bitwise identical in both
/// modes, and `Sequential` only exists to pin execution to one thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Evaluates `f(0..n)` and returns the results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..n).map(f).collect(),
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
        }
    }

    /// Maximum of `f(0..n)`, `0.0` for an empty range. NaN propagates.
    pub fn max<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        self.map(n, f).into_iter().fold(0.0, nan_max)
    }
}

pub(crate) fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}
