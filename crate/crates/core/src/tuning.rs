//! Online hyperparameter selection: run every candidate configuration in
//! parallel, emit the forecast of the configuration with the lowest
//! cumulative score so far, and re-rank after each observation.
//!
//! The emitted forecast at step `t` comes from the configuration selected at
//! the end of step `t - 1` (the first step emits the first candidate), so
//! selection never peeks at the observation it is scored on.

use crate::baselines::{BmaCombiner, EwaLearner, NaiveCombiner};
use crate::boa::{BoaLearner, LearnerError};
use crate::grid::ProbGrid;
use crate::loss::crps_grid;
use ndarray::{Array1, ArrayView2};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TuningError {
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("tuning grid needs at least one configuration")]
    EmptyGrid,
}

/// Anything that can run the online loop: form a forecast for an expert
/// slab, absorb the realized value, and expose its current weight surface.
pub trait OnlineCombiner {
    /// Forecast for the slab under the current weights (sorted quantiles).
    fn predict(&self, experts: ArrayView2<'_, f64>) -> Array1<f64>;
    /// Absorb one observation; returns the forecast that was emitted for
    /// this slab before `y` was seen.
    fn update(&mut self, experts: ArrayView2<'_, f64>, y: f64)
        -> Result<Array1<f64>, LearnerError>;
    /// Current weight surface (grid points x experts).
    fn weights(&self) -> ArrayView2<'_, f64>;
}

impl OnlineCombiner for BoaLearner {
    fn predict(&self, experts: ArrayView2<'_, f64>) -> Array1<f64> {
        BoaLearner::predict(self, experts)
    }
    fn update(
        &mut self,
        experts: ArrayView2<'_, f64>,
        y: f64,
    ) -> Result<Array1<f64>, LearnerError> {
        BoaLearner::update(self, experts, y)
    }
    fn weights(&self) -> ArrayView2<'_, f64> {
        BoaLearner::weights(self)
    }
}

impl OnlineCombiner for EwaLearner {
    fn predict(&self, experts: ArrayView2<'_, f64>) -> Array1<f64> {
        EwaLearner::predict(self, experts)
    }
    fn update(
        &mut self,
        experts: ArrayView2<'_, f64>,
        y: f64,
    ) -> Result<Array1<f64>, LearnerError> {
        EwaLearner::update(self, experts, y)
    }
    fn weights(&self) -> ArrayView2<'_, f64> {
        EwaLearner::weights(self)
    }
}

impl OnlineCombiner for NaiveCombiner {
    fn predict(&self, experts: ArrayView2<'_, f64>) -> Array1<f64> {
        NaiveCombiner::predict(self, experts)
    }
    fn update(
        &mut self,
        experts: ArrayView2<'_, f64>,
        y: f64,
    ) -> Result<Array1<f64>, LearnerError> {
        NaiveCombiner::update(self, experts, y)
    }
    fn weights(&self) -> ArrayView2<'_, f64> {
        NaiveCombiner::weights(self)
    }
}

impl OnlineCombiner for BmaCombiner {
    fn predict(&self, experts: ArrayView2<'_, f64>) -> Array1<f64> {
        BmaCombiner::predict(self, experts)
    }
    fn update(
        &mut self,
        experts: ArrayView2<'_, f64>,
        y: f64,
    ) -> Result<Array1<f64>, LearnerError> {
        BmaCombiner::update(self, experts, y)
    }
    fn weights(&self) -> ArrayView2<'_, f64> {
        BmaCombiner::weights(self)
    }
}

impl OnlineCombiner for Box<dyn OnlineCombiner + Send> {
    fn predict(&self, experts: ArrayView2<'_, f64>) -> Array1<f64> {
        (**self).predict(experts)
    }
    fn update(
        &mut self,
        experts: ArrayView2<'_, f64>,
        y: f64,
    ) -> Result<Array1<f64>, LearnerError> {
        (**self).update(experts, y)
    }
    fn weights(&self) -> ArrayView2<'_, f64> {
        (**self).weights()
    }
}

/// A bank of labeled candidate configurations raced online. Every candidate
/// is updated on every observation; the emitted forecast comes from the
/// candidate with the lowest cumulative score at the end of the previous
/// step (ties resolve to the lowest index, the first step emits index 0).
#[derive(Debug, Clone)]
pub struct TuningGrid<C: OnlineCombiner> {
    entries: Vec<(String, C)>,
    cum_loss: Vec<f64>,
    active: usize,
    history: Vec<usize>,
    grid: ProbGrid,
    t: usize,
}

impl<C: OnlineCombiner> TuningGrid<C> {
    pub fn new(entries: Vec<(String, C)>, grid: &ProbGrid) -> Result<Self, TuningError> {
        if entries.is_empty() {
            return Err(TuningError::EmptyGrid);
        }
        let n = entries.len();
        Ok(Self {
            entries,
            cum_loss: vec![0.0; n],
            active: 0,
            history: Vec::new(),
            grid: grid.clone(),
            t: 0,
        })
    }

    /// Forecast the currently active candidate would emit for this slab.
    pub fn predict(&self, experts: ArrayView2<'_, f64>) -> Array1<f64> {
        self.entries[self.active].1.predict(experts)
    }

    /// Runs one online step: updates every candidate, scores each on its own
    /// forecast, re-ranks, and returns the forecast emitted by the candidate
    /// that was active when the slab arrived.
    pub fn step(
        &mut self,
        experts: ArrayView2<'_, f64>,
        y: f64,
    ) -> Result<Array1<f64>, TuningError> {
        let emit_idx = self.active;
        let mut emitted = None;
        for (i, (_, candidate)) in self.entries.iter_mut().enumerate() {
            let forecast = candidate.update(experts, y)?;
            self.cum_loss[i] += crps_grid(
                forecast.as_slice().expect("contiguous forecast"),
                y,
                &self.grid,
            );
            if i == emit_idx {
                emitted = Some(forecast);
            }
        }
        let mut best = 0;
        for i in 1..self.cum_loss.len() {
            if self.cum_loss[i] < self.cum_loss[best] {
                best = i;
            }
        }
        self.active = best;
        self.history.push(best);
        self.t += 1;
        Ok(emitted.expect("active index is always in range"))
    }

    /// Index of the candidate that will produce the next forecast.
    pub fn active_index(&self) -> usize {
        self.active
    }

    pub fn active_label(&self) -> &str {
        &self.entries[self.active].0
    }

    /// Weight surface of the currently active candidate.
    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.entries[self.active].1.weights()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(label, _)| label.as_str())
    }

    pub fn cumulative_losses(&self) -> &[f64] {
        &self.cum_loss
    }

    /// Active index chosen after each completed step.
    pub fn selection_history(&self) -> &[usize] {
        &self.history
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    #[cfg(test)]
    fn inject_loss(&mut self, idx: usize, loss: f64) {
        self.cum_loss[idx] = loss;
    }
}

/// Smoothing penalties for online use: zero, a dyadic ladder from 2^-4 to
/// 2^13, and one extreme value that flattens the weight curve outright.
pub fn lambda_grid_default() -> Vec<f64> {
    let mut grid = vec![0.0];
    grid.extend((-4..=13).map(|x| (x as f64).exp2()));
    grid.push(2f64.powi(30));
    grid
}

/// Denser dyadic smoothing ladder (2^-15 through 2^25) for controlled
/// experiments.
pub fn lambda_grid_simulation() -> Vec<f64> {
    (-15..=25).map(|x| (x as f64).exp2()).collect()
}

/// Forgetting rates for a stream of length `horizon`: zero plus the dyadic
/// ladder from roughly 1/horizon up to 1/2.
pub fn forget_grid(horizon: usize) -> Vec<f64> {
    let mut grid = vec![0.0];
    if horizon >= 2 {
        let deepest = (horizon as f64).log2().ceil() as i32;
        grid.extend((-deepest..=-1).map(|x| (x as f64).exp2()));
    }
    grid
}

/// Knot spacings 0.005, 0.020, ..., 0.500 for spline bases.
pub fn knot_distance_grid() -> Vec<f64> {
    (0..=33).map(|k| 0.005 + 0.015 * k as f64).collect()
}

/// Learning rates 2^-3 through 2^9 on a fine dyadic ladder (step 0.2 in the
/// exponent).
pub fn ewa_eta_grid_default() -> Vec<f64> {
    (0..=60).map(|i| (-3.0 + 0.2 * i as f64).exp2()).collect()
}

/// Learning rates `1 - sqrt(x)` for `x = 0, 0.05, ..., 0.95`, concentrating
/// candidates near zero.
pub fn ewa_eta_grid_simulation() -> Vec<f64> {
    (0..20).map(|i| 1.0 - (0.05 * i as f64).sqrt()).collect()
}
