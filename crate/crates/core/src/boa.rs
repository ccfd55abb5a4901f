//! The main online learner: second-order aggregation with per-coefficient
//! adaptive learning rates, basis-projected weight curves, roughness-
//! penalized smoothing, exponential forgetting, and shrinkage.
//!
//! # State and update
//!
//! The learner keeps, per basis coefficient `l` and expert `k`:
//! cumulative adjusted regret `R`, the regret range `E`, the accumulated
//! squared regret `V`, and simplex coefficients `beta` initialized from the
//! prior via the basis pseudo-inverse. One update, after observing `y`:
//!
//! 1. combine and sort the expert slab into the emitted forecast;
//! 2. project the linearized instant regret into coefficient space,
//!    `r = (L/M) * B' * regret_matrix`;
//! 3. if forgetting is on, scale `R`, `V`, `E` by `1 - forget` *before*
//!    absorbing the new regret;
//! 4. `E = max(E, |r|)`;
//! 5. `V += r^2`;
//! 6. `eta = min( sqrt(-ln(beta0) / V), 1/(2E) )`, with `eta = 1e6` when both
//!    terms are infinite (no signal yet);
//! 7. `R += r (1 - eta r)/2 + E * 1{-2 eta r > 1}`;
//! 8. `beta = K * beta0 * softmax_per_row( eta R + ln eta )`, renormalized so
//!    each coefficient row sums to one;
//! 9. apply fixed share, then soft and hard thresholding; if a threshold
//!    changed a row, re-project it onto the simplex (clip negatives,
//!    renormalize, all-zero rows fall back to uniform);
//! 10. refresh the smoothed weight surface used by the next prediction;
//! 11. advance the step counter.
//!
//! The exponent in step 8 rewards experts whose cumulative adjusted regret is
//! positive (they beat the combination), concentrating weight on them; the
//! `1/(2E)` cap keeps `|eta r| <= 1/2`, which also makes the indicator term in
//! step 7 provably inactive under this step ordering (it guards variants that
//! compute `eta` from stale range information).
//!
//! # Smoothing
//!
//! The weight surface is `smoother * B * beta`. With `lambda = 0` the hat
//! matrix reduces algebraically to `B` itself (for any full-column-rank
//! basis), so that path multiplies by `B` directly; this also keeps
//! rank-deficient bases (more active functions than grid points) usable
//! unpenalized, where forming the smoother would require inverting a
//! singular system.

use crate::grid::{GridError, ProbGrid, WeightMode, WeightSurface};
use crate::loss::linearized_instant_regret;
use crate::spline::{pinv_init, BasisKind, BasisSystem, SplineError};
use ndarray::{Array1, Array2, ArrayView2};
use std::sync::Arc;
use thiserror::Error;

/// Hard floor applied to prior coefficients before taking logarithms.
const PRIOR_FLOOR: f64 = 1e-12;

/// Learning rate used when neither the variance nor the range term pins one
/// down (no regret signal observed yet).
const DEGENERATE_ETA: f64 = 1e6;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LearnerError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("{name} = {value} is outside {range}")]
    ConfigOutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("prior weight at ({row}, {col}) is zero; every expert needs positive prior mass")]
    ZeroPriorMass { row: usize, col: usize },
    #[error("prior surface must be convex (rows on the probability simplex)")]
    PriorNotConvex,
    #[error("expert slab is {got_rows}x{got_cols}, learner expects {rows}x{cols}")]
    SlabShapeMismatch {
        got_rows: usize,
        got_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("non-finite value produced at `{step}` during update {t}")]
    NonFinite { step: &'static str, t: usize },
}

/// Hyperparameters of [`BoaLearner`]. The defaults give the plain pointwise
/// learner: no smoothing, no forgetting, no shrinkage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoaConfig {
    /// Smoothing penalty weight `lambda >= 0`.
    pub lambda: f64,
    /// Mix between first- and second-difference penalties, in `[0, 1]`
    /// (1 = pure first differences).
    pub alpha: f64,
    /// Exponential forgetting rate `xi in [0, 1)` applied to `R`, `V`, `E`.
    pub forget: f64,
    /// Fixed-share mixing `phi in [0, 1]` toward the uniform weight.
    pub fixed_share: f64,
    /// Soft-threshold level `nu >= 0` on coefficients.
    pub soft_threshold: f64,
    /// Hard-threshold level `kappa >= 0` on coefficients.
    pub hard_threshold: f64,
}

impl Default for BoaConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            alpha: 0.5,
            forget: 0.0,
            fixed_share: 0.0,
            soft_threshold: 0.0,
            hard_threshold: 0.0,
        }
    }
}

impl BoaConfig {
    fn validate(&self) -> Result<(), LearnerError> {
        let check = |name, value: f64, ok: bool, range| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(LearnerError::ConfigOutOfRange { name, value, range })
            }
        };
        check("lambda", self.lambda, self.lambda >= 0.0, "[0, inf)")?;
        check(
            "alpha",
            self.alpha,
            (0.0..=1.0).contains(&self.alpha),
            "[0, 1]",
        )?;
        check(
            "forget",
            self.forget,
            (0.0..1.0).contains(&self.forget),
            "[0, 1)",
        )?;
        check(
            "fixed_share",
            self.fixed_share,
            (0.0..=1.0).contains(&self.fixed_share),
            "[0, 1]",
        )?;
        check(
            "soft_threshold",
            self.soft_threshold,
            self.soft_threshold >= 0.0,
            "[0, inf)",
        )?;
        check(
            "hard_threshold",
            self.hard_threshold,
            self.hard_threshold >= 0.0,
            "[0, inf)",
        )
    }
}

/// Online quantile-forecast combiner with adaptive per-coefficient learning
/// rates. See the module documentation for the update rule.
#[derive(Debug, Clone)]
pub struct BoaLearner {
    grid: ProbGrid,
    basis: Arc<BasisSystem>,
    config: BoaConfig,
    /// Maps coefficients to the smoothed weight surface: `smoother * B`
    /// (`M x L`), or `None` for the identity basis without smoothing where
    /// the map is the identity.
    smooth_map: Option<Arc<Array2<f64>>>,
    n_experts: usize,
    beta: Array2<f64>,
    beta0: Array2<f64>,
    neg_log_beta0: Array2<f64>,
    regret: Array2<f64>,
    range: Array2<f64>,
    variance: Array2<f64>,
    eta: Array2<f64>,
    surface: Array2<f64>,
    t: usize,
}

impl BoaLearner {
    /// Builds a learner from a config, a basis over `grid`, and a convex
    /// prior weight surface with strictly positive entries.
    pub fn new(
        config: BoaConfig,
        basis: BasisSystem,
        prior: &WeightSurface,
        grid: &ProbGrid,
    ) -> Result<Self, LearnerError> {
        config.validate()?;
        if prior.mode() != WeightMode::Convex {
            return Err(LearnerError::PriorNotConvex);
        }
        if basis.grid_len() != grid.len() || prior.grid_len() != grid.len() {
            return Err(GridError::AxisMismatch {
                axis: "grid",
                left: "basis/prior",
                left_len: basis.grid_len().max(prior.grid_len()),
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

        let smooth_map = match (basis.kind(), config.lambda) {
            (BasisKind::Identity, l) if l == 0.0 => None,
            (_, l) if l == 0.0 => Some(Arc::new(basis.matrix().clone())),
            (_, lambda) => {
                let smoother = basis.smoother(lambda, config.alpha)?;
                Some(Arc::new(smoother.dot(basis.matrix())))
            }
        };

        let mut beta0 = pinv_init(&basis, prior);
        beta0.mapv_inplace(|v| v.max(PRIOR_FLOOR));
        let neg_log_beta0 = beta0.mapv(|v| -v.ln());
        let shape = beta0.dim();

        Ok(Self {
            grid: grid.clone(),
            n_experts: prior.n_experts(),
            smooth_map,
            beta: beta0.clone(),
            beta0,
            neg_log_beta0,
            regret: Array2::zeros(shape),
            range: Array2::zeros(shape),
            variance: Array2::zeros(shape),
            eta: Array2::zeros(shape),
            surface: prior.weights().clone(),
            basis: Arc::new(basis),
            config,
            t: 0,
        })
    }

    /// The forecast the learner would emit for this expert slab: the
    /// weighted combination per grid point, re-sorted to be a valid
    /// (nondecreasing) quantile curve.
    pub fn predict(&self, experts: ArrayView2<'_, f64>) -> Array1<f64> {
        let (m, k) = self.surface.dim();
        assert_eq!(
            experts.dim(),
            (m, k),
            "expert slab is {:?}, learner expects ({m}, {k})",
            experts.dim()
        );
        let surface = self.surface.as_slice().expect("contiguous surface");
        let mut combined: Vec<f64> = Vec::with_capacity(m);
        if let Some(slab) = experts.as_slice() {
            for (w_row, e_row) in surface.chunks_exact(k).zip(slab.chunks_exact(k)) {
                let mut acc = 0.0;
                for col in 0..k {
                    acc += w_row[col] * e_row[col];
                }
                combined.push(acc);
            }
        } else {
            for (row, w_row) in surface.chunks_exact(k).enumerate() {
                let mut acc = 0.0;
                for col in 0..k {
                    acc += w_row[col] * experts[[row, col]];
                }
                combined.push(acc);
            }
        }
        combined.sort_by(f64::total_cmp);
        Array1::from_vec(combined)
    }

    /// Runs one online step against the realized value `y` and returns the
    /// forecast that was emitted for this slab (formed before seeing `y`).
    pub fn update(
        &mut self,
        experts: ArrayView2<'_, f64>,
        y: f64,
    ) -> Result<Array1<f64>, LearnerError> {
        let (m, k) = self.surface.dim();
        if experts.dim() != (m, k) {
            return Err(LearnerError::SlabShapeMismatch {
                got_rows: experts.dim().0,
                got_cols: experts.dim().1,
                rows: m,
                cols: k,
            });
        }
        let forecast = self.predict(experts);

        // Coefficient-space regret. For the identity basis B' is the
        // identity and L = M, so the projection is skipped entirely.
        let point_regret = linearized_instant_regret(
            forecast.as_slice().expect("contiguous forecast"),
            experts,
            y,
            &self.grid,
        );
        let r = if self.basis.kind() == BasisKind::Identity {
            point_regret
        } else {
            let l = self.basis.n_basis();
            let scale = l as f64 / m as f64;
            let mut projected = self.basis.matrix().t().dot(&point_regret);
            projected.mapv_inplace(|v| v * scale);
            projected
        };
        if r.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::NonFinite {
                step: "regret projection",
                t: self.t,
            });
        }

        // Forgetting discounts the learning state before the new regret is
        // absorbed; forget = 0 multiplies by exactly 1.0 and is a no-op.
        if self.config.forget > 0.0 {
            let keep = 1.0 - self.config.forget;
            self.regret.mapv_inplace(|v| keep * v);
            self.variance.mapv_inplace(|v| keep * v);
            self.range.mapv_inplace(|v| keep * v);
        }

        let l = r.dim().0;
        {
            let r_flat = r.as_slice().expect("contiguous regret");
            let range = self.range.as_slice_mut().expect("contiguous range");
            let variance = self.variance.as_slice_mut().expect("contiguous variance");
            let eta_out = self.eta.as_slice_mut().expect("contiguous rates");
            let regret = self.regret.as_slice_mut().expect("contiguous state");
            let nlb = self.neg_log_beta0.as_slice().expect("contiguous prior");
            for i in 0..l * k {
                let ri = r_flat[i];
                let e = range[i].max(ri.abs());
                let v = variance[i] + ri * ri;
                let from_variance = if v > 0.0 {
                    (nlb[i] / v).sqrt()
                } else {
                    f64::INFINITY
                };
                let from_range = if e > 0.0 {
                    1.0 / (2.0 * e)
                } else {
                    f64::INFINITY
                };
                let mut eta = from_variance.min(from_range);
                if !eta.is_finite() {
                    eta = DEGENERATE_ETA;
                }
                let bump = if -2.0 * eta * ri > 1.0 { e } else { 0.0 };
                range[i] = e;
                variance[i] = v;
                eta_out[i] = eta;
                regret[i] += ri * (1.0 - eta * ri) / 2.0 + bump;
            }
        }

        // Weight refresh: per coefficient row, softmax of eta*R + ln(eta)
        // tilted by the prior, renormalized to the simplex.
        {
            let eta_flat = self.eta.as_slice().expect("contiguous rates");
            let regret = self.regret.as_slice().expect("contiguous state");
            let beta0 = self.beta0.as_slice().expect("contiguous prior");
            let beta = self.beta.as_slice_mut().expect("contiguous weights");
            let mut logits = vec![0.0; k];
            for row in 0..l {
                let base = row * k;
                let mut max = f64::NEG_INFINITY;
                for col in 0..k {
                    let eta = eta_flat[base + col];
                    logits[col] = eta * regret[base + col] + eta.ln();
                    max = max.max(logits[col]);
                }
                let row_beta = &mut beta[base..base + k];
                if max.is_finite() {
                    let mut sum = 0.0;
                    for col in 0..k {
                        logits[col] = (logits[col] - max).exp();
                        sum += logits[col];
                    }
                    for col in 0..k {
                        row_beta[col] = k as f64 * beta0[base + col] * logits[col] / sum;
                    }
                } else {
                    for slot in row_beta.iter_mut() {
                        *slot = 1.0 / k as f64;
                    }
                }
                let total: f64 = row_beta.iter().sum();
                for slot in row_beta.iter_mut() {
                    *slot /= total;
                }
            }
        }
        if self.beta.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::NonFinite {
                step: "weight refresh",
                t: self.t,
            });
        }

        self.apply_shrinkage();

        // Smoothed surface for the next prediction.
        self.surface = match &self.smooth_map {
            None => self.beta.clone(),
            Some(map) => apply_smooth_map(map, &self.beta),
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

    /// Fixed share, soft threshold, hard threshold, then simplex repair of
    /// the rows a threshold actually changed. Parameters at zero skip their
    /// operator entirely, keeping those paths bit-for-bit no-ops.
    fn apply_shrinkage(&mut self) {
        let (l, k) = self.beta.dim();
        if self.config.fixed_share > 0.0 {
            for row in 0..l {
                let mut row_view = self.beta.row_mut(row);
                apply_fixed_share(
                    row_view.as_slice_mut().expect("contiguous row"),
                    self.config.fixed_share,
                );
            }
        }
        let nu = self.config.soft_threshold;
        let kappa = self.config.hard_threshold;
        if nu == 0.0 && kappa == 0.0 {
            return;
        }
        for row in 0..l {
            let before: Vec<f64> = (0..k).map(|col| self.beta[[row, col]]).collect();
            {
                let mut row_view = self.beta.row_mut(row);
                let slice = row_view.as_slice_mut().expect("contiguous row");
                if nu > 0.0 {
                    apply_soft_threshold(slice, nu);
                }
                if kappa > 0.0 {
                    apply_hard_threshold(slice, kappa);
                }
            }
            let changed = (0..k).any(|col| self.beta[[row, col]] != before[col]);
            if changed {
                let mut sum = 0.0;
                for col in 0..k {
                    let v = self.beta[[row, col]].max(0.0);
                    self.beta[[row, col]] = v;
                    sum += v;
                }
                if sum > 0.0 {
                    for col in 0..k {
                        self.beta[[row, col]] /= sum;
                    }
                } else {
                    for col in 0..k {
                        self.beta[[row, col]] = 1.0 / k as f64;
                    }
                }
            }
        }
    }

    /// Current (smoothed) weight surface used for predictions. Rows sum to
    /// one up to rounding; heavy smoothing may push single entries slightly
    /// negative.
    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.surface.view()
    }

    /// Current simplex coefficients, one row per basis function.
    pub fn coefficients(&self) -> &Array2<f64> {
        &self.beta
    }

    pub fn cumulative_regret(&self) -> &Array2<f64> {
        &self.regret
    }

    pub fn regret_range(&self) -> &Array2<f64> {
        &self.range
    }

    pub fn regret_variance(&self) -> &Array2<f64> {
        &self.variance
    }

    pub fn learning_rates(&self) -> &Array2<f64> {
        &self.eta
    }

    pub fn basis(&self) -> &BasisSystem {
        &self.basis
    }

    pub fn config(&self) -> &BoaConfig {
        &self.config
    }

    pub fn n_experts(&self) -> usize {
        self.n_experts
    }

    pub fn grid(&self) -> &ProbGrid {
        &self.grid
    }

    /// Number of updates performed so far.
    pub fn steps_taken(&self) -> usize {
        self.t
    }
}

/// Fixed-share shrinkage toward the uniform vector:
/// `w_k <- phi / K + (1 - phi) w_k`. Maps the simplex to itself.
pub fn apply_fixed_share(weights: &mut [f64], phi: f64) {
    let k = weights.len() as f64;
    for w in weights.iter_mut() {
        *w = phi / k + (1.0 - phi) * *w;
    }
}

/// Soft thresholding: shrinks every entry toward zero by `nu`, clamping at
/// zero (`sign(w) * max(|w| - nu, 0)`).
pub fn apply_soft_threshold(weights: &mut [f64], nu: f64) {
    for w in weights.iter_mut() {
        *w = w.signum() * (w.abs() - nu).max(0.0);
    }
}

/// Hard thresholding: zeroes entries with magnitude not exceeding `kappa`
/// (strict survival: `w * 1{|w| > kappa}`).
pub fn apply_hard_threshold(weights: &mut [f64], kappa: f64) {
    for w in weights.iter_mut() {
        if w.abs() <= kappa {
            *w = 0.0;
        }
    }
}

/// Dense `map * beta` product. The right-hand side has one column per
/// expert, which is far too narrow for the general matrix-multiply kernel to
/// amortize its packing, so small expert counts get a hand-unrolled loop.
/// This runs once per online update and dominates the cost of smoothed
/// learners on long grids.
fn apply_smooth_map(map: &Array2<f64>, beta: &Array2<f64>) -> Array2<f64> {
    let (rows, inner) = map.dim();
    let k = beta.dim().1;
    let (Some(ms), Some(bs)) = (map.as_slice(), beta.as_slice()) else {
        return map.dot(beta);
    };
    match k {
        2 => {
            let mut out = Vec::with_capacity(rows * 2);
            for map_row in ms.chunks_exact(inner) {
                // Four independent accumulator pairs keep the floating-point
                // addition chains short enough to pipeline.
                let mut acc = [0.0f64; 8];
                let mut j = 0;
                while j + 4 <= inner {
                    let b = &bs[2 * j..2 * j + 8];
                    acc[0] += map_row[j] * b[0];
                    acc[1] += map_row[j] * b[1];
                    acc[2] += map_row[j + 1] * b[2];
                    acc[3] += map_row[j + 1] * b[3];
                    acc[4] += map_row[j + 2] * b[4];
                    acc[5] += map_row[j + 2] * b[5];
                    acc[6] += map_row[j + 3] * b[6];
                    acc[7] += map_row[j + 3] * b[7];
                    j += 4;
                }
                while j < inner {
                    acc[0] += map_row[j] * bs[2 * j];
                    acc[1] += map_row[j] * bs[2 * j + 1];
                    j += 1;
                }
                out.push((acc[0] + acc[2]) + (acc[4] + acc[6]));
                out.push((acc[1] + acc[3]) + (acc[5] + acc[7]));
            }
            Array2::from_shape_vec((rows, 2), out).expect("shape matches construction")
        }
        1 | 3 | 4 => {
            let mut out = vec![0.0f64; rows * k];
            for (map_row, out_row) in ms.chunks_exact(inner).zip(out.chunks_exact_mut(k)) {
                let mut acc = [0.0f64; 4];
                for (j, &w) in map_row.iter().enumerate() {
                    let b = &bs[j * k..(j + 1) * k];
                    for (slot, &v) in acc[..k].iter_mut().zip(b) {
                        *slot += w * v;
                    }
                }
                out_row.copy_from_slice(&acc[..k]);
            }
            Array2::from_shape_vec((rows, k), out).expect("shape matches construction")
        }
        _ => map.dot(beta),
    }
}
