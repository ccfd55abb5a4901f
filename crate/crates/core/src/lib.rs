//! Online combination of quantile forecasts under the continuous ranked
//! probability score (CRPS).
//!
//! The library combines probabilistic forecasts that are reported as quantile
//! values on a shared probability grid. Several experts each supply a full
//! quantile curve per time step; a combination method assigns every expert a
//! weight *per quantile level* and emits the weighted (re-sorted) curve as its
//! own forecast. Weights are learned online so that the cumulative CRPS of the
//! combination approaches that of the best convex combination in hindsight.
//!
//! The main learner ([`boa::BoaLearner`]) runs a second-order online
//! aggregation rule with per-coefficient adaptive learning rates and supports
//! basis-projected weight curves, roughness-penalized smoothing of the weight
//! surface, exponential forgetting of the learning state, and three shrinkage
//! operators (fixed share, soft and hard thresholding). Simpler reference
//! combiners live in [`baselines`]: the naive average, exponentially weighted
//! averaging, BIC-based model averaging, and batch quantile regression.
//!
//! Supporting modules: [`grid`] holds the shared data types and ingestion
//! validation, [`loss`] the quantile-loss kernels, [`spline`] the B-spline
//! bases and smoother matrices, [`tuning`] online hyperparameter selection,
//! [`simulate`] the synthetic study harness, [`evaluate`] forecast scoring and
//! comparison tests, and [`oracle`] deliberately independent reference
//! implementations used only by the test suites.

pub mod baselines;
pub mod boa;
pub mod evaluate;
pub mod grid;
pub mod loss;
pub mod oracle;
pub mod simulate;
pub mod spline;
pub mod tuning;

pub use boa::{BoaConfig, BoaLearner};
pub use grid::{validate_panel, ExpertPanel, ObservationStream, ProbGrid, WeightSurface};
pub use spline::BasisSystem;
pub use tuning::{OnlineCombiner, TuningGrid};
