//! Reference combination methods the adaptive learner is measured against:
//! the naive equal-weight average, exponentially weighted averaging with a
//! fixed learning rate, information-criterion model averaging, and batch
//! quantile regression fitted by projected subgradient descent.

use crate::boa::LearnerError;
use crate::grid::{ProbGrid, WeightMode, WeightSurface};
use crate::loss::{pinball, pinball_subgrad};
use crate::spline::BasisSystem;
use ndarray::{Array1, Array2, ArrayView2};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BaselineError {
    #[error("information criterion needs a positive mean residual, got {value}")]
    NonPositiveResidual { value: f64 },
    #[error("information criterion needs at least one observation")]
    EmptyWindow,
    #[error("{name} = {value} is outside {range}")]
    ConfigOutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("observation count {obs} does not match expert panel rows {rows}")]
    LengthMismatch { obs: usize, rows: usize },
    #[error("need at least one expert and one observation")]
    EmptyProblem,
    #[error(
        "quantile regression did not converge after {iters} iterations \
         (last 100-iteration improvement {gap:e})"
    )]
    NonConvergence {
        iters: usize,
        gap: f64,
        weights: Vec<f64>,
    },
}

/// Equal weights for every expert at every grid point.
pub fn naive_weights(grid_len: usize, n_experts: usize) -> Array2<f64> {
    Array2::from_elem((grid_len, n_experts), 1.0 / n_experts as f64)
}

fn combine_sorted(surface: &Array2<f64>, experts: ArrayView2<'_, f64>) -> Array1<f64> {
    let (m, k) = surface.dim();
    assert_eq!(
        experts.dim(),
        (m, k),
        "expert slab is {:?}, combiner expects ({m}, {k})",
        experts.dim()
    );
    let mut combined: Vec<f64> = (0..m)
        .map(|row| {
            let mut acc = 0.0;
            for col in 0..k {
                acc += surface[[row, col]] * experts[[row, col]];
            }
            acc
        })
        .collect();
    combined.sort_by(f64::total_cmp);
    Array1::from_vec(combined)
}

/// The simplest benchmark: average the experts with equal weight at every
/// grid point and never learn anything.
#[derive(Debug, Clone)]
pub struct NaiveCombiner {
    surface: Array2<f64>,
    t: usize,
}

impl NaiveCombiner {
    pub fn new(grid_len: usize, n_experts: usize) -> Self {
        Self {
            surface: naive_weights(grid_len, n_experts),
            t: 0,
        }
    }

    pub fn predict(&self, experts: ArrayView2<'_, f64>) -> Array1<f64> {
        combine_sorted(&self.surface, experts)
    }

    pub fn update(
        &mut self,
        experts: ArrayView2<'_, f64>,
        _y: f64,
    ) -> Result<Array1<f64>, LearnerError> {
        let forecast = self.predict(experts);
        self.t += 1;
        Ok(forecast)
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.surface.view()
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }
}

/// Hyperparameters for [`EwaLearner`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EwaConfig {
    /// Fixed learning rate `eta > 0`.
    pub eta: f64,
    /// Score experts by the linearized loss of the emitted combination
    /// instead of their own pinball loss.
    pub gradient: bool,
    /// Optional roughness penalty applied to the prediction surface.
    pub lambda: f64,
    /// First/second difference mix for the penalty, in `[0, 1]`.
    pub alpha: f64,
}

impl Default for EwaConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            gradient: false,
            lambda: 0.0,
            alpha: 0.5,
        }
    }
}

/// Exponentially weighted averaging per grid point: after each observation
/// every expert's weight is multiplied by `exp(-eta * loss)` and the row is
/// renormalized. With `gradient = true` the loss is the pinball subgradient
/// of the emitted combination times the expert's value, which linearizes the
/// combination loss instead of scoring experts in isolation.
#[derive(Debug, Clone)]
pub struct EwaLearner {
    grid: ProbGrid,
    config: EwaConfig,
    /// Pointwise weight state driven by the recursion.
    state: Array2<f64>,
    /// Cumulative per-expert loss, kept to expose the batch form of the
    /// recursion (`softmax(-eta * cumulative loss)` under a uniform prior).
    cum_loss: Array2<f64>,
    /// Weights actually used for predictions (smoothed state when
    /// `lambda > 0`).
    surface: Array2<f64>,
    smoother: Option<Arc<Array2<f64>>>,
    t: usize,
}

impl EwaLearner {
    pub fn new(
        config: EwaConfig,
        prior: &WeightSurface,
        grid: &ProbGrid,
    ) -> Result<Self, LearnerError> {
        if !(config.eta > 0.0) || !config.eta.is_finite() {
            return Err(LearnerError::ConfigOutOfRange {
                name: "eta",
                value: config.eta,
                range: "(0, inf)",
            });
        }
        if !(config.lambda >= 0.0) || !config.lambda.is_finite() {
            return Err(LearnerError::ConfigOutOfRange {
                name: "lambda",
                value: config.lambda,
                range: "[0, inf)",
            });
        }
        if !(0.0..=1.0).contains(&config.alpha) {
            return Err(LearnerError::ConfigOutOfRange {
                name: "alpha",
                value: config.alpha,
                range: "[0, 1]",
            });
        }
        if prior.mode() != WeightMode::Convex {
            return Err(LearnerError::PriorNotConvex);
        }
        if prior.grid_len() != grid.len() {
            return Err(crate::grid::GridError::AxisMismatch {
                axis: "grid",
                left: "prior",
                left_len: prior.grid_len(),
                right: "probability grid",
                right_len: grid.len(),
            }
            .into());
        }
        for ((row, col), &w) in prior.weights().indexed_iter() {
            if w <= 0.0 {
                return Err(LearnerError::ZeroPriorMass { row, col });
            }
        }
        let smoother = if config.lambda > 0.0 {
            let basis = BasisSystem::identity(grid);
            Some(Arc::new(basis.smoother(config.lambda, config.alpha)?))
        } else {
            None
        };
        let shape = prior.weights().dim();
        Ok(Self {
            grid: grid.clone(),
            config,
            state: prior.weights().clone(),
            cum_loss: Array2::zeros(shape),
            surface: prior.weights().clone(),
            smoother,
            t: 0,
        })
    }

    pub fn predict(&self, experts: ArrayView2<'_, f64>) -> Array1<f64> {
        combine_sorted(&self.surface, experts)
    }

    pub fn update(
        &mut self,
        experts: ArrayView2<'_, f64>,
        y: f64,
    ) -> Result<Array1<f64>, LearnerError> {
        let (m, k) = self.state.dim();
        if experts.dim() != (m, k) {
            return Err(LearnerError::SlabShapeMismatch {
                got_rows: experts.dim().0,
                got_cols: experts.dim().1,
                rows: m,
                cols: k,
            });
        }
        let forecast = self.predict(experts);

        for row in 0..m {
            let p = self.grid.probs()[row];
            let slope = pinball_subgrad(forecast[row], y, p);
            let mut logits = vec![0.0; k];
            let mut max = f64::NEG_INFINITY;
            for col in 0..k {
                let loss = if self.config.gradient {
                    slope * experts[[row, col]]
                } else {
                    pinball(experts[[row, col]], y, p)
                };
                self.cum_loss[[row, col]] += loss;
                logits[col] = -self.config.eta * loss + self.state[[row, col]].ln();
                max = max.max(logits[col]);
            }
            if max.is_finite() {
                let mut sum = 0.0;
                for col in 0..k {
                    logits[col] = (logits[col] - max).exp();
                    sum += logits[col];
                }
                for col in 0..k {
                    self.state[[row, col]] = logits[col] / sum;
                }
            } else {
                for col in 0..k {
                    self.state[[row, col]] = 1.0 / k as f64;
                }
            }
        }
        if self.state.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::NonFinite {
                step: "weight refresh",
                t: self.t,
            });
        }

        self.surface = match &self.smoother {
            None => self.state.clone(),
            Some(s) => s.dot(&self.state),
        };
        if self.surface.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::NonFinite {
                step: "smoothing",
                t: self.t,
            });
        }

        self.t += 1;
        Ok(forecast)
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.surface.view()
    }

    /// Unsmoothed weight state driven by the recursion.
    pub fn pointwise_state(&self) -> &Array2<f64> {
        &self.state
    }

    pub fn cumulative_loss(&self) -> &Array2<f64> {
        &self.cum_loss
    }

    pub fn config(&self) -> &EwaConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }
}

/// A Bayesian-style information criterion for a quantile model: twice the
/// log mean residual plus a sample-size penalty on the model's degrees of
/// freedom, `2 ln(mean) + ln(t) * df / t`.
pub fn quantile_bic(mean_residual: f64, t: usize, df: f64) -> Result<f64, BaselineError> {
    if t == 0 {
        return Err(BaselineError::EmptyWindow);
    }
    if !(mean_residual > 0.0) {
        return Err(BaselineError::NonPositiveResidual {
            value: mean_residual,
        });
    }
    let t = t as f64;
    Ok(2.0 * mean_residual.ln() + t.ln() * df / t)
}

/// Softmax weights over negated criterion values, `w_k prop exp(-eta bic_k)`.
/// An infinite `eta` selects the minimizer outright (ties go to the first
/// index).
pub fn bma_weights(bic: &[f64], eta: f64) -> Vec<f64> {
    assert!(!bic.is_empty(), "need at least one criterion value");
    assert!(eta >= 0.0, "eta must be nonnegative, got {eta}");
    if eta.is_infinite() {
        let mut best = 0;
        for (i, &b) in bic.iter().enumerate() {
            if b < bic[best] {
                best = i;
            }
        }
        let mut w = vec![0.0; bic.len()];
        w[best] = 1.0;
        return w;
    }
    let logits: Vec<f64> = bic.iter().map(|&b| -eta * b).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // Degenerate inputs (all criteria infinite): fall back to uniform.
        return vec![1.0 / bic.len() as f64; bic.len()];
    }
    let mut w: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Online model averaging: weights each expert per grid point by
/// `exp(-eta * BIC)`, where the criterion is computed from the expert's own
/// cumulative pinball loss.
#[derive(Debug, Clone)]
pub struct BmaCombiner {
    grid: ProbGrid,
    eta: f64,
    df: Vec<f64>,
    cum_loss: Array2<f64>,
    surface: Array2<f64>,
    t: usize,
}

impl BmaCombiner {
    /// `df` assigns each expert a degrees-of-freedom count for the
    /// criterion's complexity penalty; equal counts make the criterion a
    /// pure goodness-of-fit ranking.
    pub fn new(
        eta: f64,
        df: Vec<f64>,
        n_experts: usize,
        grid: &ProbGrid,
    ) -> Result<Self, LearnerError> {
        if !(eta >= 0.0) {
            return Err(LearnerError::ConfigOutOfRange {
                name: "eta",
                value: eta,
                range: "[0, inf]",
            });
        }
        if df.len() != n_experts {
            return Err(crate::grid::GridError::AxisMismatch {
                axis: "expert",
                left: "degrees of freedom",
                left_len: df.len(),
                right: "experts",
                right_len: n_experts,
            }
            .into());
        }
        Ok(Self {
            grid: grid.clone(),
            eta,
            df,
            cum_loss: Array2::zeros((grid.len(), n_experts)),
            surface: naive_weights(grid.len(), n_experts),
            t: 0,
        })
    }

    pub fn predict(&self, experts: ArrayView2<'_, f64>) -> Array1<f64> {
        combine_sorted(&self.surface, experts)
    }

    pub fn update(
        &mut self,
        experts: ArrayView2<'_, f64>,
        y: f64,
    ) -> Result<Array1<f64>, LearnerError> {
        let (m, k) = self.cum_loss.dim();
        if experts.dim() != (m, k) {
            return Err(LearnerError::SlabShapeMismatch {
                got_rows: experts.dim().0,
                got_cols: experts.dim().1,
                rows: m,
                cols: k,
            });
        }
        let forecast = self.predict(experts);
        self.t += 1;
        for row in 0..m {
            let p = self.grid.probs()[row];
            for col in 0..k {
                self.cum_loss[[row, col]] += pinball(experts[[row, col]], y, p);
            }
            let bic: Vec<f64> = (0..k)
                .map(|col| {
                    // A perfect expert has zero cumulative loss; flooring the
                    // mean keeps the criterion finite and still hands that
                    // expert essentially all the weight.
                    let mean = (self.cum_loss[[row, col]] / self.t as f64).max(f64::MIN_POSITIVE);
                    quantile_bic(mean, self.t, self.df[col]).expect("floored mean is positive")
                })
                .collect();
            let w = bma_weights(&bic, self.eta);
            for col in 0..k {
                self.surface[[row, col]] = w[col];
            }
        }
        Ok(forecast)
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.surface.view()
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }
}

/// Feasible set for [`batch_qr_pointwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QrConstraint {
    /// Weights on the probability simplex (nonnegative, summing to one).
    Convex,
    /// Unconstrained linear combination.
    Linear,
}

const QR_MAX_ITERS: usize = 20_000;
const QR_PATIENCE: usize = 100;
const QR_TOLERANCE: f64 = 1e-9;

/// Fits combination weights for one probability level by minimizing the mean
/// pinball loss of `w' x_i` over the whole sample, using projected
/// subgradient descent with a `1/sqrt(iter)` step on the normalized
/// subgradient and best-iterate tracking.
pub fn batch_qr_pointwise(
    experts: ArrayView2<'_, f64>,
    obs: &[f64],
    p: f64,
    constraint: QrConstraint,
) -> Result<Vec<f64>, BaselineError> {
    let (t, k) = experts.dim();
    if t == 0 || k == 0 {
        return Err(BaselineError::EmptyProblem);
    }
    if obs.len() != t {
        return Err(BaselineError::LengthMismatch {
            obs: obs.len(),
            rows: t,
        });
    }
    if !(p > 0.0 && p < 1.0) || !p.is_finite() {
        return Err(BaselineError::ConfigOutOfRange {
            name: "p",
            value: p,
            range: "(0, 1)",
        });
    }

    let objective = |w: &[f64]| -> f64 {
        let mut total = 0.0;
        for i in 0..t {
            let mut q = 0.0;
            for (j, &wj) in w.iter().enumerate() {
                q += wj * experts[[i, j]];
            }
            total += pinball(q, obs[i], p);
        }
        total / t as f64
    };

    let mut w = vec![1.0 / k as f64; k];
    let mut best_w = w.clone();
    let mut best_obj = objective(&w);
    let mut obj_at_last_check = best_obj;
    let mut last_gap = f64::INFINITY;

    for iter in 1..=QR_MAX_ITERS {
        let mut grad = vec![0.0; k];
        for i in 0..t {
            let mut q = 0.0;
            for (j, &wj) in w.iter().enumerate() {
                q += wj * experts[[i, j]];
            }
            let slope = pinball_subgrad(q, obs[i], p);
            for j in 0..k {
                grad[j] += slope * experts[[i, j]];
            }
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > 0.0 {
            let step = 1.0 / (iter as f64).sqrt();
            for j in 0..k {
                w[j] -= step * grad[j] / norm;
            }
        }
        if constraint == QrConstraint::Convex {
            project_simplex(&mut w);
        }
        let obj = objective(&w);
        if obj < best_obj {
            best_obj = obj;
            best_w.copy_from_slice(&w);
        }
        if iter % QR_PATIENCE == 0 {
            last_gap = obj_at_last_check - best_obj;
            if last_gap < QR_TOLERANCE {
                return Ok(best_w);
            }
            obj_at_last_check = best_obj;
        }
    }
    Err(BaselineError::NonConvergence {
        iters: QR_MAX_ITERS,
        gap: last_gap,
        weights: best_w,
    })
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(w: &mut [f64]) {
    let k = w.len();
    if k == 0 {
        return;
    }
    let mut sorted = w.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    for v in w.iter_mut() {
        *v = (*v - tau).max(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::brute_force_convex_weight;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, Normal};

    fn grid3() -> ProbGrid {
        ProbGrid::new(vec![0.25, 0.5, 0.75]).unwrap()
    }

    #[test]
    fn naive_combiner_averages_and_sorts() {
        let mut naive = NaiveCombiner::new(2, 2);
        let slab = array![[4.0, 0.0], [1.0, 1.0]];
        let forecast = naive.update(slab.view(), 0.3).unwrap();
        assert_eq!(forecast.to_vec(), vec![1.0, 2.0]);
        assert!(naive.weights().iter().all(|&w| w == 0.5));
    }

    #[test]
    fn ewa_with_tiny_eta_stays_near_the_prior() {
        let grid = grid3();
        let mut ewa = EwaLearner::new(
            EwaConfig {
                eta: 1e-12,
                ..EwaConfig::default()
            },
            &WeightSurface::uniform(3, 2),
            &grid,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..50 {
            let slab = Array2::from_shape_fn((3, 2), |_| rng.random_range(-3.0..3.0));
            ewa.update(slab.view(), rng.random_range(-1.0..1.0))
                .unwrap();
        }
        assert!(ewa.weights().iter().all(|&w| (w - 0.5).abs() < 1e-9));
    }

    #[test]
    fn ewa_identical_experts_keep_their_weights() {
        let grid = grid3();
        for gradient in [false, true] {
            let mut ewa = EwaLearner::new(
                EwaConfig {
                    eta: 2.0,
                    gradient,
                    ..EwaConfig::default()
                },
                &WeightSurface::uniform(3, 3),
                &grid,
            )
            .unwrap();
            for t in 0..100 {
                let v = (t as f64).sin();
                let slab = Array2::from_elem((3, 3), v);
                ewa.update(slab.view(), v + 0.25).unwrap();
            }
            assert!(ewa.weights().iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-12));
        }
    }

    #[test]
    fn ewa_concentrates_on_the_better_expert() {
        // Expert 1 forecasts slightly low, expert 2 five units high; both
        // scoring modes should hand expert 1 nearly all the weight.
        let grid = grid3();
        for gradient in [false, true] {
            let mut ewa = EwaLearner::new(
                EwaConfig {
                    eta: 0.5,
                    gradient,
                    ..EwaConfig::default()
                },
                &WeightSurface::uniform(3, 2),
                &grid,
            )
            .unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(4);
            for _ in 0..500 {
                let y: f64 = rng.random_range(-1.0..1.0);
                let slab = array![
                    [y - 0.05, y + 5.0],
                    [y - 0.05, y + 5.0],
                    [y - 0.05, y + 5.0]
                ];
                ewa.update(slab.view(), y).unwrap();
            }
            for &w in ewa.weights().column(0).iter() {
                assert!(
                    w > 0.95,
                    "weight on the better expert is {w} (gradient = {gradient})"
                );
            }
        }
    }

    #[test]
    fn ewa_recursion_matches_its_batch_form() {
        // Under a uniform prior the recursion telescopes to
        // softmax(-eta * cumulative loss) per grid point.
        let grid = grid3();
        let eta = 0.7;
        let mut ewa = EwaLearner::new(
            EwaConfig {
                eta,
                ..EwaConfig::default()
            },
            &WeightSurface::uniform(3, 4),
            &grid,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..5 {
            let slab = Array2::from_shape_fn((3, 4), |_| rng.random_range(-2.0..2.0));
            ewa.update(slab.view(), rng.random_range(-1.0..1.0))
                .unwrap();
        }
        for row in 0..3 {
            let losses: Vec<f64> = (0..4)
                .map(|col| ewa.cumulative_loss()[[row, col]])
                .collect();
            let max = losses
                .iter()
                .map(|&l| -eta * l)
                .fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = losses.iter().map(|&l| (-eta * l - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for col in 0..4 {
                let batch = exps[col] / sum;
                let recursive = ewa.pointwise_state()[[row, col]];
                assert!(
                    (batch - recursive).abs() < 1e-10,
                    "row {row} col {col}: batch {batch} vs recursive {recursive}"
                );
            }
        }
    }

    #[test]
    fn ewa_smoothing_flattens_the_surface() {
        let grid = ProbGrid::percentiles();
        let build = |lambda| {
            EwaLearner::new(
                EwaConfig {
                    eta: 5.0,
                    lambda,
                    ..EwaConfig::default()
                },
                &WeightSurface::uniform(99, 2),
                &grid,
            )
            .unwrap()
        };
        let mut rough = build(0.0);
        let mut smooth = build(1e6);
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..100 {
            let slab = Array2::from_shape_fn((99, 2), |_| rng.random_range(-2.0..2.0));
            let y = rng.random_range(-1.0..1.0);
            rough.update(slab.view(), y).unwrap();
            smooth.update(slab.view(), y).unwrap();
        }
        let spread = |w: ArrayView2<'_, f64>| {
            let col = w.column(0);
            col.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - col.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        assert!(spread(smooth.weights()) < 1e-3);
        assert!(spread(rough.weights()) > spread(smooth.weights()));
    }

    #[test]
    fn ewa_rejects_bad_eta() {
        let grid = grid3();
        for eta in [0.0, -1.0, f64::INFINITY, f64::NAN] {
            let err = EwaLearner::new(
                EwaConfig {
                    eta,
                    ..EwaConfig::default()
                },
                &WeightSurface::uniform(3, 2),
                &grid,
            )
            .unwrap_err();
            assert!(matches!(
                err,
                LearnerError::ConfigOutOfRange { name: "eta", .. }
            ));
        }
    }

    #[test]
    fn bic_frozen_value() {
        // Identical residuals e over T observations with df degrees of
        // freedom give 2 ln(e) + ln(T) df / T.
        let bic = quantile_bic(0.5, 100, 1.0).unwrap();
        let expected = 2.0 * 0.5_f64.ln() + 100.0_f64.ln() / 100.0;
        assert!((bic - expected).abs() < 1e-15);
    }

    #[test]
    fn bic_rejects_degenerate_inputs() {
        assert!(matches!(
            quantile_bic(0.0, 10, 1.0),
            Err(BaselineError::NonPositiveResidual { .. })
        ));
        assert!(matches!(
            quantile_bic(-0.5, 10, 1.0),
            Err(BaselineError::NonPositiveResidual { .. })
        ));
        assert!(matches!(
            quantile_bic(0.5, 0, 1.0),
            Err(BaselineError::EmptyWindow)
        ));
    }

    #[test]
    fn bma_weights_frozen_case() {
        // BIC of (0, 2 ln 2) at eta = 1: exp(0) = 1 and exp(-2 ln 2) = 1/4,
        // normalizing to (0.8, 0.2).
        let w = bma_weights(&[0.0, 2.0 * 2.0_f64.ln()], 1.0);
        assert!((w[0] - 0.8).abs() < 1e-12);
        assert!((w[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn bma_infinite_eta_selects_the_minimum() {
        let w = bma_weights(&[3.0, 1.0, 2.0], f64::INFINITY);
        assert_eq!(w, vec![0.0, 1.0, 0.0]);
        // Ties go to the first index.
        let w = bma_weights(&[1.0, 1.0], f64::INFINITY);
        assert_eq!(w, vec![1.0, 0.0]);
    }

    #[test]
    fn bma_combiner_favors_the_accurate_expert() {
        let grid = grid3();
        let mut bma = BmaCombiner::new(f64::INFINITY, vec![1.0, 1.0], 2, &grid).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..200 {
            let y: f64 = rng.random_range(-1.0..1.0);
            let slab = array![[y, y + 4.0], [y, y + 4.0], [y, y + 4.0]];
            bma.update(slab.view(), y).unwrap();
        }
        for &w in bma.weights().column(0).iter() {
            assert_eq!(w, 1.0);
        }
    }

    #[test]
    fn simplex_projection_frozen_cases() {
        let mut w = [1.5, 0.5];
        project_simplex(&mut w);
        assert!((w[0] - 1.0).abs() < 1e-15);
        assert!(w[1].abs() < 1e-15);

        // Points already on the simplex are fixed points.
        let mut on = [0.3, 0.2, 0.5];
        project_simplex(&mut on);
        assert!((on[0] - 0.3).abs() < 1e-15);
        assert!((on[1] - 0.2).abs() < 1e-15);
        assert!((on[2] - 0.5).abs() < 1e-15);

        // Strongly negative entries clamp to zero.
        let mut neg = [2.0, -1.0];
        project_simplex(&mut neg);
        assert!((neg[0] - 1.0).abs() < 1e-15);
        assert_eq!(neg[1], 0.0);
    }

    #[test]
    fn simplex_projection_lands_on_the_simplex() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for _ in 0..200 {
            let mut w: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            project_simplex(&mut w);
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "projected sum {sum}");
            assert!(w.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn batch_qr_single_expert_gets_weight_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let experts = Array2::from_shape_fn((50, 1), |_| rng.random_range(-1.0..1.0));
        let obs: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = batch_qr_pointwise(experts.view(), &obs, 0.5, QrConstraint::Convex).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn batch_qr_recovers_an_exact_mixture() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let experts = Array2::from_shape_fn((300, 2), |_| rng.random_range(-2.0..2.0));
        let obs: Vec<f64> = (0..300)
            .map(|i| 0.3 * experts[[i, 0]] + 0.7 * experts[[i, 1]])
            .collect();
        let w = batch_qr_pointwise(experts.view(), &obs, 0.5, QrConstraint::Convex).unwrap();
        assert!((w[0] - 0.3).abs() < 1e-3, "w = {w:?}");
        assert!((w[1] - 0.7).abs() < 1e-3, "w = {w:?}");
    }

    #[test]
    fn batch_qr_matches_the_brute_force_scan() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let p = 0.3;
        let t = 120;
        let expert_a: Vec<f64> = (0..t).map(|_| normal.sample(&mut rng) - 0.5).collect();
        let expert_b: Vec<f64> = (0..t).map(|_| normal.sample(&mut rng) + 1.0).collect();
        let obs: Vec<f64> = (0..t).map(|_| normal.sample(&mut rng)).collect();

        let (w_scan, loss_scan) = brute_force_convex_weight(&expert_a, &expert_b, &obs, p, 1e-3);
        let experts = Array2::from_shape_fn(
            (t, 2),
            |(i, j)| if j == 0 { expert_a[i] } else { expert_b[i] },
        );
        let w = batch_qr_pointwise(experts.view(), &obs, p, QrConstraint::Convex).unwrap();

        let objective = |w0: f64| -> f64 {
            (0..t)
                .map(|i| pinball(w0 * expert_a[i] + (1.0 - w0) * expert_b[i], obs[i], p))
                .sum::<f64>()
                / t as f64
        };
        let loss_qr = objective(w[0]);
        assert!(
            loss_qr <= loss_scan + 1e-3,
            "qr loss {loss_qr} vs scan loss {loss_scan} (w_qr = {:?}, w_scan = {w_scan})",
            w
        );
    }

    #[test]
    fn batch_qr_linear_constraint_can_leave_the_simplex() {
        // Observations are an affine combination with weights outside the
        // simplex; the unconstrained fit should find it, the convex fit
        // cannot.
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        let experts = Array2::from_shape_fn((400, 2), |_| rng.random_range(-2.0..2.0));
        let obs: Vec<f64> = (0..400)
            .map(|i| 1.5 * experts[[i, 0]] - 0.5 * experts[[i, 1]])
            .collect();
        let w = batch_qr_pointwise(experts.view(), &obs, 0.5, QrConstraint::Linear).unwrap();
        let objective = |w: &[f64]| -> f64 {
            (0..400)
                .map(|i| pinball(w[0] * experts[[i, 0]] + w[1] * experts[[i, 1]], obs[i], 0.5))
                .sum::<f64>()
                / 400.0
        };
        let convex = batch_qr_pointwise(experts.view(), &obs, 0.5, QrConstraint::Convex).unwrap();
        assert!(objective(&w) < objective(&convex) * 0.5);
    }

    #[test]
    fn batch_qr_rejects_shape_mismatch() {
        let experts = Array2::zeros((10, 2));
        let obs = vec![0.0; 8];
        assert!(matches!(
            batch_qr_pointwise(experts.view(), &obs, 0.5, QrConstraint::Convex),
            Err(BaselineError::LengthMismatch { obs: 8, rows: 10 })
        ));
    }
}
