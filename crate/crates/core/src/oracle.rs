//! Independent reference implementations used by the test and acceptance
//! suites.
//!
//! Everything in this module is written from scratch against closed forms and
//! brute-force definitions, sharing nothing with the production code beyond
//! the data types in [`crate::grid`]. Tests compare the fast paths against
//! these slow-but-obviously-correct routes; a shared helper would turn every
//! such cross-check into a tautology, so even the pinball loss is
//! re-implemented privately here.
//!
//! Contents:
//! - [`gaussian_crps_closed_form`]: exact CRPS of a Gaussian predictive
//!   distribution, for validating the grid approximation.
//! - [`brute_force_convex_weight`]: exhaustive scan for the best convex
//!   two-expert weight at a single quantile level, for validating the batch
//!   quantile-regression solver.
//! - [`ReferencePointwiseBoag`]: a second, plain-`Vec` implementation of the
//!   fully adaptive aggregation rule, one instance per grid point, with no
//!   basis, no smoothing, no forgetting and no shrinkage, for validating the
//!   production learner in its pointwise configuration.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Pinball loss, re-implemented privately so oracle checks stay independent
/// of [`crate::loss`].
fn ql(q: f64, y: f64, p: f64) -> f64 {
    let indicator = if y < q { 1.0 } else { 0.0 };
    (indicator - p) * (q - y)
}

/// Pinball subgradient with the same kink convention as the production
/// kernel: `-p` at `q = y`.
fn ql_slope(q: f64, y: f64, p: f64) -> f64 {
    if y < q {
        1.0 - p
    } else {
        -p
    }
}

/// Exact CRPS of the Gaussian predictive distribution `N(mu, sigma^2)`
/// against the realized value `y`:
///
/// `sigma * ( z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi) )` with
/// `z = (y - mu) / sigma`.
pub fn gaussian_crps_closed_form(mu: f64, sigma: f64, y: f64) -> f64 {
    assert!(sigma > 0.0, "sigma must be positive, got {sigma}");
    let z = (y - mu) / sigma;
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    sigma
        * (z * (2.0 * std_normal.cdf(z) - 1.0) + 2.0 * std_normal.pdf(z)
            - 1.0 / std::f64::consts::PI.sqrt())
}

/// Exhaustive scan for the convex weight on expert A that minimizes the mean
/// pinball loss at level `p` over a window of paired forecasts.
///
/// Scans `w in {0, step, 2*step, ..., 1}` and returns `(w, mean loss at w)`.
/// The returned objective is the *mean* pinball loss over the window, the
/// same objective (up to the 1/T factor) minimized by the production batch
/// quantile-regression solver.
///
/// Panics if the slices disagree in length, the window is empty, `p` is
/// outside `(0, 1)`, or `step` is outside `(0, 0.1]`.
pub fn brute_force_convex_weight(
    expert_a: &[f64],
    expert_b: &[f64],
    obs: &[f64],
    p: f64,
    step: f64,
) -> (f64, f64) {
    assert_eq!(expert_a.len(), obs.len(), "expert A window length mismatch");
    assert_eq!(expert_b.len(), obs.len(), "expert B window length mismatch");
    assert!(!obs.is_empty(), "window must not be empty");
    assert!(
        p > 0.0 && p < 1.0,
        "quantile level must lie in (0, 1), got {p}"
    );
    assert!(
        step > 0.0 && step <= 0.1,
        "scan step must lie in (0, 0.1], got {step}"
    );

    let n_steps = (1.0 / step).ceil() as usize;
    let mut best = (0.0, f64::INFINITY);
    for i in 0..=n_steps {
        let w = (i as f64 * step).min(1.0);
        let mut total = 0.0;
        for t in 0..obs.len() {
            let combined = w * expert_a[t] + (1.0 - w) * expert_b[t];
            total += ql(combined, obs[t], p);
        }
        let mean = total / obs.len() as f64;
        if mean < best.1 {
            best = (w, mean);
        }
    }
    best
}

/// Reference implementation of the fully adaptive aggregation step, run
/// independently per grid point on plain vectors.
///
/// Per step and grid point `m`, with `r_k` the linearized instant regret of
/// expert `k` against the sorted combination:
///
/// 1. `E_k = max(E_k, |r_k|)` (observed regret range),
/// 2. `V_k += r_k^2` (accumulated regret variance),
/// 3. `eta_k = min( sqrt(-ln(w0_k) / V_k), 1 / (2 E_k) )`, with `eta = 1e6`
///    when both terms are infinite (no signal observed yet),
/// 4. `R_k += r_k (1 - eta_k r_k) / 2 + E_k * 1{-2 eta_k r_k > 1}`,
/// 5. `w_k = K w0_k softmax_k( eta_k R_k + ln eta_k )`, renormalized to sum
///    to one exactly.
///
/// The exponent in step 5 rewards experts with positive cumulative adjusted
/// regret (those that beat the combination), which is what makes the rule
/// concentrate on the best expert.
#[derive(Debug, Clone)]
pub struct ReferencePointwiseBoag {
    prior: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    regret: Vec<Vec<f64>>,
    range: Vec<Vec<f64>>,
    variance: Vec<Vec<f64>>,
    eta: Vec<Vec<f64>>,
    t: usize,
}

impl ReferencePointwiseBoag {
    /// A learner over `m` grid points and `k` experts with the uniform prior.
    pub fn new(m: usize, k: usize) -> Self {
        assert!(
            m > 0 && k > 0,
            "need at least one grid point and one expert"
        );
        let uniform = vec![vec![1.0 / k as f64; k]; m];
        Self {
            prior: uniform.clone(),
            weights: uniform,
            regret: vec![vec![0.0; k]; m],
            range: vec![vec![0.0; k]; m],
            variance: vec![vec![0.0; k]; m],
            eta: vec![vec![0.0; k]; m],
            t: 0,
        }
    }

    /// Runs one step: forms the sorted combined forecast from the current
    /// weights, updates the per-grid-point state from the realized value,
    /// and returns the forecast that was emitted (pre-observation).
    ///
    /// `experts[m][k]` is expert `k`'s quantile at grid point `m`; `probs`
    /// are the grid levels.
    pub fn step(&mut self, experts: &[Vec<f64>], probs: &[f64], y: f64) -> Vec<f64> {
        let m = self.weights.len();
        let k = self.weights[0].len();
        assert_eq!(experts.len(), m, "expert slab grid dimension mismatch");
        assert_eq!(probs.len(), m, "probability grid dimension mismatch");

        // Combine and sort: the emitted forecast.
        let mut combined: Vec<f64> = (0..m)
            .map(|row| {
                let mut acc = 0.0;
                for col in 0..k {
                    acc += self.weights[row][col] * experts[row][col];
                }
                acc
            })
            .collect();
        combined.sort_by(f64::total_cmp);

        for row in 0..m {
            let slope = ql_slope(combined[row], y, probs[row]);
            let mut logits = vec![0.0; k];
            for col in 0..k {
                let r = slope * (combined[row] - experts[row][col]);
                let e = self.range[row][col].max(r.abs());
                let v = self.variance[row][col] + r * r;
                let from_variance = if v > 0.0 {
                    (-(self.prior[row][col].ln()) / v).sqrt()
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
                    eta = 1e6;
                }
                let bump = if -2.0 * eta * r > 1.0 { e } else { 0.0 };
                let regret = self.regret[row][col] + r * (1.0 - eta * r) / 2.0 + bump;

                self.range[row][col] = e;
                self.variance[row][col] = v;
                self.eta[row][col] = eta;
                self.regret[row][col] = regret;
                logits[col] = eta * regret + eta.ln();
            }
            // Softmax with max subtraction; an all -inf row means no usable
            // signal, in which case the weights fall back to uniform.
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut row_weights = vec![0.0; k];
            if max.is_finite() {
                let mut sum = 0.0;
                for col in 0..k {
                    row_weights[col] = (logits[col] - max).exp();
                    sum += row_weights[col];
                }
                for col in 0..k {
                    row_weights[col] = k as f64 * self.prior[row][col] * row_weights[col] / sum;
                }
            } else {
                row_weights = vec![1.0 / k as f64; k];
            }
            let total: f64 = row_weights.iter().sum();
            for col in 0..k {
                self.weights[row][col] = row_weights[col] / total;
            }
        }
        self.t += 1;
        combined
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn regret(&self) -> &[Vec<f64>] {
        &self.regret
    }

    pub fn range(&self) -> &[Vec<f64>] {
        &self.range
    }

    pub fn variance(&self) -> &[Vec<f64>] {
        &self.variance
    }

    pub fn eta(&self) -> &[Vec<f64>] {
        &self.eta
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }
}
