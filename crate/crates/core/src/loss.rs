//! Quantile-loss kernels: the pinball loss, its subgradient, the grid
//! approximation of the CRPS, and the linearized instant regret that drives
//! the online learners.
//!
//! The pinball loss at level `p` is `QL_p(q, y) = (1{y < q} - p) (q - y)`.
//! Averaging it over a dense probability grid approximates the CRPS:
//! `CRPS(F, y) ~ (2/M) * sum_m QL_{p_m}(F^{-1}(p_m), y)`, which is the score
//! every combiner in this crate is trying to minimize.
//!
//! These kernels sit in the innermost loops, so contract violations (levels
//! outside `(0, 1)`, mismatched shapes) are programming errors and panic;
//! data-dependent validation happens at ingestion in [`crate::grid`].

use crate::grid::ProbGrid;
use ndarray::{Array2, ArrayView2};

/// Pinball (quantile) loss of the quantile forecast `q` at level `p` against
/// the realized value `y`.
///
/// Panics if `p` lies outside the open interval `(0, 1)`.
#[inline]
pub fn pinball(q: f64, y: f64, p: f64) -> f64 {
    assert!(
        p > 0.0 && p < 1.0,
        "quantile level must lie in (0, 1), got {p}"
    );
    let indicator = if y < q { 1.0 } else { 0.0 };
    (indicator - p) * (q - y)
}

/// Subgradient of [`pinball`] with respect to the forecast `q`.
///
/// The loss is kinked at `q = y`; this implementation resolves the kink by
/// returning `-p` there (the one-sided derivative from below), so the value
/// is `1 - p` for `y < q` and `-p` otherwise.
///
/// Panics if `p` lies outside the open interval `(0, 1)`.
#[inline]
pub fn pinball_subgrad(q: f64, y: f64, p: f64) -> f64 {
    assert!(
        p > 0.0 && p < 1.0,
        "quantile level must lie in (0, 1), got {p}"
    );
    if y < q {
        1.0 - p
    } else {
        -p
    }
}

/// Grid approximation of the CRPS: `(2/M) * sum_m QL_{p_m}(quantiles[m], y)`.
///
/// Panics if the quantile vector length does not match the grid.
pub fn crps_grid(quantiles: &[f64], y: f64, grid: &ProbGrid) -> f64 {
    assert_eq!(
        quantiles.len(),
        grid.len(),
        "quantile vector has length {}, grid has {} points",
        quantiles.len(),
        grid.len()
    );
    let sum: f64 = quantiles
        .iter()
        .zip(grid.iter())
        .map(|(&q, &p)| pinball(q, y, p))
        .sum();
    2.0 * sum / grid.len() as f64
}

/// Linearized instant regret of each expert against the combined forecast.
///
/// Entry `(m, k)` is `QL'_{p_m}(combined[m], y) * (combined[m] - experts[m, k])`:
/// the first-order gap between the linearized loss of the combination and the
/// linearized loss of expert `k` at grid point `m`. Positive entries mean the
/// expert would have improved on the combination (to first order), so its
/// weight should grow.
///
/// Panics on shape mismatches.
pub fn linearized_instant_regret(
    combined: &[f64],
    experts: ArrayView2<'_, f64>,
    y: f64,
    grid: &ProbGrid,
) -> Array2<f64> {
    let (m, k) = experts.dim();
    assert_eq!(
        combined.len(),
        m,
        "combined forecast has length {}, expert slab has {m} grid rows",
        combined.len()
    );
    assert_eq!(
        m,
        grid.len(),
        "expert slab has {m} grid rows, grid has {} points",
        grid.len()
    );
    let probs = grid.probs();
    Array2::from_shape_fn((m, k), |(row, col)| {
        let slope = pinball_subgrad(combined[row], y, probs[row]);
        slope * (combined[row] - experts[[row, col]])
    })
}
