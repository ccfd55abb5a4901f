//! Scoring and comparison of forecast streams: per-time score series,
//! per-level pinball-loss profiles, cumulative loss differences, and a
//! one-sided Diebold-Mariano test for equal predictive accuracy.

use crate::grid::{ObservationStream, ProbGrid};
use crate::loss::{crps_grid, pinball};
use ndarray::ArrayView2;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("{what}: {left} vs {right}")]
    ShapeMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error(
        "loss series `{label}` entry {index} is {value}; losses must be finite and nonnegative"
    )]
    InvalidLoss {
        label: String,
        index: usize,
        value: f64,
    },
    #[error("degenerate loss differential: zero variance between `{left}` and `{right}`")]
    DegenerateDifferential { left: String, right: String },
}

/// A labeled per-time series of nonnegative, finite losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSeries {
    label: String,
    values: Vec<f64>,
}

impl LossSeries {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self, EvalError> {
        let label = label.into();
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(EvalError::InvalidLoss {
                    label,
                    index,
                    value,
                });
            }
        }
        Ok(Self { label, values })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return f64::NAN;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

fn check_panel_shapes(
    forecasts: ArrayView2<'_, f64>,
    obs: &ObservationStream,
    grid: &ProbGrid,
) -> Result<(), EvalError> {
    let (t, m) = forecasts.dim();
    if t != obs.len() {
        return Err(EvalError::ShapeMismatch {
            what: "forecast rows vs observations",
            left: t,
            right: obs.len(),
        });
    }
    if m != grid.len() {
        return Err(EvalError::ShapeMismatch {
            what: "forecast columns vs grid points",
            left: m,
            right: grid.len(),
        });
    }
    Ok(())
}

/// Per-time grid-approximated CRPS of a forecast stream (rows are time,
/// columns are grid levels).
pub fn crps_series(
    forecasts: ArrayView2<'_, f64>,
    obs: &ObservationStream,
    grid: &ProbGrid,
    label: impl Into<String>,
) -> Result<LossSeries, EvalError> {
    check_panel_shapes(forecasts, obs, grid)?;
    let values: Vec<f64> = obs
        .values()
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            let row = forecasts.row(t);
            crps_grid(row.as_slice().expect("contiguous forecast row"), y, grid)
        })
        .collect();
    LossSeries::new(label, values)
}

/// Mean pinball loss per grid level across time.
pub fn ql_profile(
    forecasts: ArrayView2<'_, f64>,
    obs: &ObservationStream,
    grid: &ProbGrid,
) -> Result<Vec<f64>, EvalError> {
    check_panel_shapes(forecasts, obs, grid)?;
    let (t, m) = forecasts.dim();
    let mut profile = vec![0.0; m];
    for (row, &y) in obs.values().iter().enumerate() {
        for (i, &p) in grid.iter().enumerate() {
            profile[i] += pinball(forecasts[[row, i]], y, p);
        }
    }
    for v in &mut profile {
        *v /= t as f64;
    }
    Ok(profile)
}

/// Long-run variance estimator for the loss differential.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceEstimator {
    /// Plain sample variance (no autocorrelation correction).
    Lag0,
    /// Newey-West with a Bartlett kernel truncated at `lags`.
    NeweyWest { lags: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmOptions {
    pub variance: VarianceEstimator,
    /// Apply the Harvey-Leybourne-Newbold small-sample correction and use a
    /// Student-t reference distribution with T-1 degrees of freedom.
    pub small_sample: bool,
}

impl Default for DmOptions {
    fn default() -> Self {
        Self {
            variance: VarianceEstimator::Lag0,
            small_sample: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sided Diebold-Mariano test of the alternative "series A has lower
/// loss than series B". The statistic is the standardized mean of the loss
/// differential `a - b`; small p-values favor A.
pub fn dm_test(
    loss_a: &LossSeries,
    loss_b: &LossSeries,
    options: DmOptions,
) -> Result<DmOutcome, EvalError> {
    if loss_a.len() != loss_b.len() {
        return Err(EvalError::ShapeMismatch {
            what: "loss series lengths",
            left: loss_a.len(),
            right: loss_b.len(),
        });
    }
    let t = loss_a.len();
    if t < 2 {
        return Err(EvalError::TooShort { needed: 2, got: t });
    }
    let d: Vec<f64> = loss_a
        .values()
        .iter()
        .zip(loss_b.values())
        .map(|(a, b)| a - b)
        .collect();
    let t_f = t as f64;
    let mean = d.iter().sum::<f64>() / t_f;

    let autocovariance = |lag: usize| -> f64 {
        d.iter()
            .skip(lag)
            .zip(&d)
            .map(|(later, earlier)| (later - mean) * (earlier - mean))
            .sum::<f64>()
            / t_f
    };

    let lrv = match options.variance {
        VarianceEstimator::Lag0 => autocovariance(0),
        VarianceEstimator::NeweyWest { lags } => {
            let mut v = autocovariance(0);
            for j in 1..=lags.min(t - 1) {
                let weight = 1.0 - j as f64 / (lags as f64 + 1.0);
                v += 2.0 * weight * autocovariance(j);
            }
            v
        }
    };
    if !(lrv > 0.0) {
        return Err(EvalError::DegenerateDifferential {
            left: loss_a.label().to_string(),
            right: loss_b.label().to_string(),
        });
    }

    let mut statistic = mean / (lrv / t_f).sqrt();
    let p_value = if options.small_sample {
        // Horizon-1 correction factor sqrt((T + 1 - 2h + h(h-1)/T) / T).
        let h = match options.variance {
            VarianceEstimator::Lag0 => 1.0,
            VarianceEstimator::NeweyWest { lags } => lags as f64 + 1.0,
        };
        let factor = ((t_f + 1.0 - 2.0 * h + h * (h - 1.0) / t_f) / t_f).sqrt();
        statistic *= factor;
        let student =
            StudentsT::new(0.0, 1.0, t_f - 1.0).expect("valid Student-t parameters for T >= 2");
        student.cdf(statistic)
    } else {
        let normal = Normal::new(0.0, 1.0).expect("valid standard normal");
        normal.cdf(statistic)
    };
    Ok(DmOutcome { statistic, p_value })
}

/// Running sum of the loss differential `a - b`; negative trajectories mean
/// A accumulates less loss.
pub fn cumulative_difference(
    loss_a: &LossSeries,
    loss_b: &LossSeries,
) -> Result<Vec<f64>, EvalError> {
    if loss_a.len() != loss_b.len() {
        return Err(EvalError::ShapeMismatch {
            what: "loss series lengths",
            left: loss_a.len(),
            right: loss_b.len(),
        });
    }
    let mut running = 0.0;
    Ok(loss_a
        .values()
        .iter()
        .zip(loss_b.values())
        .map(|(a, b)| {
            running += a - b;
            running
        })
        .collect())
}
