//! Shared data types: probability grids, expert panels, weight surfaces, and
//! observation streams.
//!
//! All ingestion-time validation lives here. The numeric code downstream
//! assumes finite values and consistent shapes, so constructors reject NaN and
//! infinity outright, and [`validate_panel`] cross-checks the axes of a
//! (panel, grid, observations) triple before a run starts.
//!
//! Array orientation is fixed throughout the crate: a weight surface is
//! `(grid point, expert)`, an expert panel is `(time, grid point, expert)`.

use ndarray::{Array1, Array2, Array3, ArrayView2};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

/// Validation failures on the shared data types.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum GridError {
    #[error("probability grid must not be empty")]
    EmptyGrid,
    #[error("probability grid entry {index} is {value}, outside the open interval (0, 1)")]
    ProbOutOfRange { index: usize, value: f64 },
    #[error("probability grid must be strictly increasing: entry {index} is {value} after {prev}")]
    ProbNotIncreasing { index: usize, value: f64, prev: f64 },
    #[error("non-finite value {value} at {location}")]
    NonFinite { location: String, value: f64 },
    #[error("{axis} axis mismatch: {left} has length {left_len}, {right} has length {right_len}")]
    AxisMismatch {
        axis: &'static str,
        left: &'static str,
        left_len: usize,
        right: &'static str,
        right_len: usize,
    },
    #[error("panel must contain at least one expert")]
    NoExperts,
    #[error("panel declares {names} expert names but holds {experts} experts")]
    NameCountMismatch { names: usize, experts: usize },
    #[error("weight row {row} sums to {sum}, expected 1 within 1e-10")]
    RowSumOffSimplex { row: usize, sum: f64 },
    #[error("weight at ({row}, {col}) is {value}; convex surfaces require nonnegative entries")]
    NegativeWeight { row: usize, col: usize, value: f64 },
    #[error("observation stream has {values} values but {timestamps} timestamps")]
    TimestampMismatch { values: usize, timestamps: usize },
}

fn check_finite(value: f64, location: impl FnOnce() -> String) -> Result<(), GridError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(GridError::NonFinite {
            location: location(),
            value,
        })
    }
}

/// A strictly increasing grid of probability levels inside the open unit
/// interval. All quantile curves in a run live on one shared grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbGrid {
    probs: Vec<f64>,
}

impl ProbGrid {
    /// Builds a grid from raw levels, rejecting empty, out-of-range,
    /// non-finite, or non-increasing inputs.
    pub fn new(probs: Vec<f64>) -> Result<Self, GridError> {
        if probs.is_empty() {
            return Err(GridError::EmptyGrid);
        }
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() || value <= 0.0 || value >= 1.0 {
                return Err(GridError::ProbOutOfRange { index, value });
            }
            if index > 0 && value <= probs[index - 1] {
                return Err(GridError::ProbNotIncreasing {
                    index,
                    value,
                    prev: probs[index - 1],
                });
            }
        }
        Ok(Self { probs })
    }

    /// The default percentile grid 0.01, 0.02, ..., 0.99.
    pub fn percentiles() -> Self {
        let probs = (1..=99).map(|i| f64::from(i) / 100.0).collect();
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.probs.iter()
    }
}

impl<'de> Deserialize<'de> for ProbGrid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let probs = Vec::<f64>::deserialize(deserializer)?;
        ProbGrid::new(probs).map_err(serde::de::Error::custom)
    }
}

/// Pane of expert quantile forecasts, indexed `(time, grid point, expert)`.
#[derive(Debug, Clone)]
pub struct ExpertPanel {
    values: Array3<f64>,
    names: Vec<String>,
}

impl ExpertPanel {
    /// Wraps a dense value cube, rejecting non-finite entries and mismatched
    /// name lists. Expert quantile curves are *not* required to be monotone
    /// in the grid index; combiners re-sort their own output instead.
    pub fn new(values: Array3<f64>, names: Vec<String>) -> Result<Self, GridError> {
        let (_, _, experts) = values.dim();
        if experts == 0 {
            return Err(GridError::NoExperts);
        }
        if names.len() != experts {
            return Err(GridError::NameCountMismatch {
                names: names.len(),
                experts,
            });
        }
        for ((t, m, k), &value) in values.indexed_iter() {
            check_finite(value, || {
                format!("panel entry (t={t}, grid={m}, expert={k})")
            })?;
        }
        Ok(Self { values, names })
    }

    /// Convenience constructor with generated names `expert_1`, `expert_2`, ...
    pub fn with_default_names(values: Array3<f64>) -> Result<Self, GridError> {
        let k = values.dim().2;
        Self::new(values, default_expert_names(k))
    }

    /// Number of time steps.
    pub fn horizon(&self) -> usize {
        self.values.dim().0
    }

    /// Number of grid points per curve.
    pub fn grid_len(&self) -> usize {
        self.values.dim().1
    }

    /// Number of experts.
    pub fn n_experts(&self) -> usize {
        self.values.dim().2
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    /// The `(grid point, expert)` slab of forecasts issued for time `t`.
    pub fn slab(&self, t: usize) -> ArrayView2<'_, f64> {
        self.values.index_axis(ndarray::Axis(0), t)
    }
}

/// Generated expert names used when a data source does not provide any.
pub fn default_expert_names(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("expert_{i}")).collect()
}

/// Whether a weight surface is constrained to the probability simplex per
/// grid point or allowed arbitrary real entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightMode {
    Convex,
    Unconstrained,
}

/// Per-grid-point expert weights, shape `(grid point, expert)`.
#[derive(Debug, Clone)]
pub struct WeightSurface {
    weights: Array2<f64>,
    mode: WeightMode,
}

impl WeightSurface {
    /// Builds a convex surface: every row must be on the probability simplex
    /// (nonnegative entries, sum 1 within 1e-10).
    pub fn convex(weights: Array2<f64>) -> Result<Self, GridError> {
        for ((row, col), &value) in weights.indexed_iter() {
            check_finite(value, || format!("weight ({row}, {col})"))?;
            if value < 0.0 {
                return Err(GridError::NegativeWeight { row, col, value });
            }
        }
        for (row, r) in weights.rows().into_iter().enumerate() {
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > 1e-10 {
                return Err(GridError::RowSumOffSimplex { row, sum });
            }
        }
        Ok(Self {
            weights,
            mode: WeightMode::Convex,
        })
    }

    /// Builds an unconstrained surface; only finiteness is enforced.
    pub fn unconstrained(weights: Array2<f64>) -> Result<Self, GridError> {
        for ((row, col), &value) in weights.indexed_iter() {
            check_finite(value, || format!("weight ({row}, {col})"))?;
        }
        Ok(Self {
            weights,
            mode: WeightMode::Unconstrained,
        })
    }

    /// The uniform convex surface 1/K at every grid point.
    pub fn uniform(grid_len: usize, n_experts: usize) -> Self {
        assert!(n_experts > 0, "need at least one expert");
        Self {
            weights: Array2::from_elem((grid_len, n_experts), 1.0 / n_experts as f64),
            mode: WeightMode::Convex,
        }
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn grid_len(&self) -> usize {
        self.weights.dim().0
    }

    pub fn n_experts(&self) -> usize {
        self.weights.dim().1
    }

    /// Applies the surface to one forecast slab: entry `m` of the result is
    /// the weighted combination of the experts' values at grid point `m`.
    /// No re-sorting happens here; that is the combiners' job.
    pub fn combine(&self, slab: ArrayView2<'_, f64>) -> Array1<f64> {
        assert_eq!(
            slab.dim(),
            self.weights.dim(),
            "slab shape {:?} does not match weight surface shape {:?}",
            slab.dim(),
            self.weights.dim()
        );
        let (m, k) = self.weights.dim();
        Array1::from_shape_fn(m, |row| {
            let mut acc = 0.0;
            for col in 0..k {
                acc += self.weights[[row, col]] * slab[[row, col]];
            }
            acc
        })
    }
}

/// Realized observations, optionally tagged with opaque timestamps.
#[derive(Debug, Clone)]
pub struct ObservationStream {
    values: Vec<f64>,
    timestamps: Option<Vec<String>>,
}

impl ObservationStream {
    pub fn new(values: Vec<f64>) -> Result<Self, GridError> {
        for (t, &value) in values.iter().enumerate() {
            check_finite(value, || format!("observation {t}"))?;
        }
        Ok(Self {
            values,
            timestamps: None,
        })
    }

    pub fn with_timestamps(values: Vec<f64>, timestamps: Vec<String>) -> Result<Self, GridError> {
        if values.len() != timestamps.len() {
            return Err(GridError::TimestampMismatch {
                values: values.len(),
                timestamps: timestamps.len(),
            });
        }
        let mut stream = Self::new(values)?;
        stream.timestamps = Some(timestamps);
        Ok(stream)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }
}

/// Cross-checks a (panel, grid, observations) triple: the panel's grid axis
/// must match the grid, its time axis must match the observations, and all
/// values must be finite. Validating an already valid triple is a no-op, so
/// the check can be repeated freely.
pub fn validate_panel(
    panel: &ExpertPanel,
    grid: &ProbGrid,
    observations: &ObservationStream,
) -> Result<(), GridError> {
    if panel.grid_len() != grid.len() {
        return Err(GridError::AxisMismatch {
            axis: "grid",
            left: "panel",
            left_len: panel.grid_len(),
            right: "probability grid",
            right_len: grid.len(),
        });
    }
    if panel.horizon() != observations.len() {
        return Err(GridError::AxisMismatch {
            axis: "time",
            left: "panel",
            left_len: panel.horizon(),
            right: "observations",
            right_len: observations.len(),
        });
    }
    for ((t, m, k), &value) in panel.values().indexed_iter() {
        check_finite(value, || {
            format!("panel entry (t={t}, grid={m}, expert={k})")
        })?;
    }
    for (t, &value) in observations.values().iter().enumerate() {
        check_finite(value, || format!("observation {t}"))?;
    }
    Ok(())
}
