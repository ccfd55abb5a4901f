//! Controlled experiments: two synthetic data-generating processes scored
//! against fixed Gaussian experts, analytic oracles for the static process,
//! and a seeded, embarrassingly parallel repetition harness.
//!
//! The static process draws iid standard-normal outcomes; the drifting
//! process moves the outcome mean along a damped transform of a latent
//! AR(1) path, so the best expert combination changes over time. Both are
//! forecast by the same two experts, one centered at -1 with unit variance
//! and one centered at 3 with variance 4, whose quantile curves are constant
//! over time.

use crate::baselines::{EwaConfig, EwaLearner, NaiveCombiner};
use crate::boa::{BoaConfig, BoaLearner, LearnerError};
use crate::grid::{ProbGrid, WeightSurface};
use crate::loss::pinball;
use crate::spline::{BasisSystem, SplineError};
use crate::tuning::{OnlineCombiner, TuningError, TuningGrid};
use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Tuning(#[from] TuningError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("simulation spec needs {what}")]
    BadSpec { what: &'static str },
}

/// Standard normal quantile function via the PPND16 rational approximation
/// (Wichura's Algorithm AS 241), accurate to about 1e-15 over (0, 1).
///
/// Panics when `p` is outside the open unit interval.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(
        p > 0.0 && p < 1.0,
        "quantile function needs p in (0, 1), got {p}"
    );

    const A: [f64; 8] = [
        3.387_132_872_796_366_608e0,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34e0,
        4.630_337_846_156_545_295_9e0,
        5.769_497_221_460_691_405_5e0,
        3.647_848_324_763_204_605_04e0,
        1.270_458_252_452_368_382_58e0,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87e0,
        1.676_384_830_183_803_849_4e0,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2e0,
        5.463_784_911_164_114_369_9e0,
        1.784_826_539_917_291_335_8e0,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    fn rational(x: f64, num: &[f64; 8], den: &[f64; 8]) -> f64 {
        let horner = |c: &[f64; 8]| c.iter().rev().fold(0.0, |acc, &v| acc * x + v);
        horner(num) / horner(den)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * rational(r, &A, &B);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let r = (-tail.ln()).sqrt();
    let value = if r <= 5.0 {
        rational(r - 1.6, &C, &D)
    } else {
        rational(r - 5.0, &E, &F)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

/// The two synthetic processes used in the controlled studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dgp {
    /// iid standard-normal outcomes; the optimal expert weights are constant
    /// over time and known in closed form.
    Static,
    /// Outcome mean follows `0.15 * asinh` of a latent AR(1) path, so the
    /// optimal weights drift.
    Drifting,
}

/// Draws `horizon` iid standard-normal outcomes.
pub fn sample_static(horizon: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    (0..horizon).map(|_| StandardNormal.sample(rng)).collect()
}

const DRIFT_RHO: f64 = 0.99;
const DRIFT_SCALE: f64 = 0.15;

/// Latent mean path `mu_t = rho * mu_{t-1} + e_t` started at zero, exposed
/// separately so the recursion can be checked on chosen innovations.
pub fn drifting_path_from_innovations(innovations: &[f64], rho: f64) -> Vec<f64> {
    let mut state = 0.0;
    innovations
        .iter()
        .map(|&e| {
            state = rho * state + e;
            state
        })
        .collect()
}

/// Draws `horizon` outcomes with mean `0.15 * asinh(mu_t)` and unit
/// variance, where `mu_t` is a standard AR(1) path with coefficient 0.99.
pub fn sample_drifting(horizon: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    let innovations: Vec<f64> = (0..horizon).map(|_| StandardNormal.sample(rng)).collect();
    drifting_path_from_innovations(&innovations, DRIFT_RHO)
        .into_iter()
        .map(|mu| {
            let noise: f64 = StandardNormal.sample(rng);
            DRIFT_SCALE * mu.asinh() + noise
        })
        .collect()
}

/// Samples a stream from either process.
pub fn sample_dgp(dgp: Dgp, horizon: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    match dgp {
        Dgp::Static => sample_static(horizon, rng),
        Dgp::Drifting => sample_drifting(horizon, rng),
    }
}

/// A forecaster issuing the quantiles of a fixed normal distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianExpert {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianExpert {
    pub fn new(mu: f64, sigma: f64) -> Self {
        assert!(sigma > 0.0, "expert needs a positive scale, got {sigma}");
        Self { mu, sigma }
    }

    /// Quantile curve over the grid, `mu + sigma * quantile(p)`.
    pub fn quantiles(&self, grid: &ProbGrid) -> Vec<f64> {
        grid.iter()
            .map(|&p| self.mu + self.sigma * normal_quantile(p))
            .collect()
    }
}

/// The two fixed experts used by both studies: one biased low with unit
/// variance, one biased high with variance 4.
pub fn study_experts() -> [GaussianExpert; 2] {
    [
        GaussianExpert::new(-1.0, 1.0),
        GaussianExpert::new(3.0, 2.0),
    ]
}

/// Constant expert slab (grid points x 2) holding the study experts'
/// quantile curves.
pub fn study_expert_slab(grid: &ProbGrid) -> Array2<f64> {
    let experts = study_experts();
    let curves: Vec<Vec<f64>> = experts.iter().map(|e| e.quantiles(grid)).collect();
    Array2::from_shape_fn((grid.len(), experts.len()), |(m, k)| curves[k][m])
}

/// Weight on the first study expert that makes the combined quantile equal
/// the true standard-normal quantile under the static process:
/// `(3 + z) / (4 + z)` with `z` the standard normal quantile of `p`.
pub fn optimal_weight_static(p: f64) -> f64 {
    let z = normal_quantile(p);
    (3.0 + z) / (4.0 + z)
}

/// Monte-Carlo estimate of the lowest achievable expected pinball loss at
/// level `p` under the static process: the risk of forecasting the true
/// quantile.
pub fn best_attainable_ql(p: f64, n_mc: usize, rng: &mut impl rand::Rng) -> f64 {
    assert!(n_mc >= 1, "need at least one Monte-Carlo draw");
    let q = normal_quantile(p);
    let total: f64 = (0..n_mc)
        .map(|_| {
            let y: f64 = StandardNormal.sample(rng);
            pinball(q, y, p)
        })
        .sum();
    total / n_mc as f64
}

/// Basis choice for a study combiner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSpec {
    Identity,
    Constant,
    /// One candidate basis per knot spacing, raced online.
    KnotGrid {
        distances: Vec<f64>,
        degree: usize,
    },
}

/// Combination algorithm plus its hyperparameter grids; every grid point
/// becomes one raced candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerKind {
    Naive,
    Boa {
        basis: BasisSpec,
        lambda_grid: Vec<f64>,
        forget_grid: Vec<f64>,
    },
    Ewa {
        eta_grid: Vec<f64>,
        gradient: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinerSpec {
    pub label: String,
    pub kind: CombinerKind,
}

/// Any of the study combiners behind one concrete type, so a tuning grid
/// can hold them without boxing.
#[derive(Debug, Clone)]
pub enum AnyLearner {
    Boa(BoaLearner),
    Ewa(EwaLearner),
    Naive(NaiveCombiner),
}

impl OnlineCombiner for AnyLearner {
    fn predict(&self, experts: ArrayView2<'_, f64>) -> Array1<f64> {
        match self {
            AnyLearner::Boa(l) => l.predict(experts),
            AnyLearner::Ewa(l) => l.predict(experts),
            AnyLearner::Naive(l) => l.predict(experts),
        }
    }

    fn update(
        &mut self,
        experts: ArrayView2<'_, f64>,
        y: f64,
    ) -> Result<Array1<f64>, LearnerError> {
        match self {
            AnyLearner::Boa(l) => l.update(experts, y),
            AnyLearner::Ewa(l) => l.update(experts, y),
            AnyLearner::Naive(l) => l.update(experts, y),
        }
    }

    fn weights(&self) -> ArrayView2<'_, f64> {
        match self {
            AnyLearner::Boa(l) => OnlineCombiner::weights(l),
            AnyLearner::Ewa(l) => OnlineCombiner::weights(l),
            AnyLearner::Naive(l) => OnlineCombiner::weights(l),
        }
    }
}

/// Expands a combiner spec into a tuning grid with one candidate per
/// hyperparameter combination, all starting from the uniform prior.
pub fn build_tuner(
    spec: &CombinerSpec,
    grid: &ProbGrid,
    n_experts: usize,
) -> Result<TuningGrid<AnyLearner>, SimError> {
    let prior = WeightSurface::uniform(grid.len(), n_experts);
    let mut entries: Vec<(String, AnyLearner)> = Vec::new();
    match &spec.kind {
        CombinerKind::Naive => {
            entries.push((
                "naive".to_string(),
                AnyLearner::Naive(NaiveCombiner::new(grid.len(), n_experts)),
            ));
        }
        CombinerKind::Ewa { eta_grid, gradient } => {
            for &eta in eta_grid {
                let config = EwaConfig {
                    eta,
                    gradient: *gradient,
                    ..EwaConfig::default()
                };
                entries.push((
                    format!("eta={eta}"),
                    AnyLearner::Ewa(EwaLearner::new(config, &prior, grid)?),
                ));
            }
        }
        CombinerKind::Boa {
            basis,
            lambda_grid,
            forget_grid,
        } => {
            let bases: Vec<(String, BasisSystem)> = match basis {
                BasisSpec::Identity => vec![(String::new(), BasisSystem::identity(grid))],
                BasisSpec::Constant => vec![(String::new(), BasisSystem::constant(grid))],
                BasisSpec::KnotGrid { distances, degree } => {
                    let mut out = Vec::with_capacity(distances.len());
                    for &d in distances {
                        out.push((format!("kd={d}|"), BasisSystem::bspline(grid, d, *degree)?));
                    }
                    out
                }
            };
            for (basis_label, basis) in &bases {
                for &lambda in lambda_grid {
                    for &forget in forget_grid {
                        let config = BoaConfig {
                            lambda,
                            forget,
                            ..BoaConfig::default()
                        };
                        let learner = BoaLearner::new(config, basis.clone(), &prior, grid)?;
                        entries.push((
                            format!("{basis_label}lambda={lambda}|forget={forget}"),
                            AnyLearner::Boa(learner),
                        ));
                    }
                }
            }
        }
    }
    Ok(TuningGrid::new(entries, grid)?)
}

/// The four changing-weights study variants: pointwise and smoothed weight
/// curves, each with and without a raced forgetting ladder.
pub fn changing_weights_specs(horizon: usize) -> Vec<CombinerSpec> {
    let ladder: Vec<f64> = crate::tuning::forget_grid(horizon)
        .into_iter()
        .filter(|&x| x > 0.0)
        .collect();
    let lambda_grid = crate::tuning::lambda_grid_simulation();
    let boa = |basis: BasisSpec, lambdas: Vec<f64>, forgets: Vec<f64>| CombinerKind::Boa {
        basis,
        lambda_grid: lambdas,
        forget_grid: forgets,
    };
    vec![
        CombinerSpec {
            label: "pointwise-noforget".to_string(),
            kind: boa(BasisSpec::Identity, vec![0.0], vec![0.0]),
        },
        CombinerSpec {
            label: "p-smooth-noforget".to_string(),
            kind: boa(BasisSpec::Identity, lambda_grid.clone(), vec![0.0]),
        },
        CombinerSpec {
            label: "pointwise-forget".to_string(),
            kind: boa(BasisSpec::Identity, vec![0.0], ladder.clone()),
        },
        CombinerSpec {
            label: "p-smooth-forget".to_string(),
            kind: boa(BasisSpec::Identity, lambda_grid, ladder),
        },
    ]
}

/// The five smoothing-study variants: raw pointwise weights, penalized
/// smoothing, a flat-curve limit, spline bases raced over knot spacings,
/// and a single constant basis function.
pub fn smoothing_specs() -> Vec<CombinerSpec> {
    let boa = |basis: BasisSpec, lambdas: Vec<f64>| CombinerKind::Boa {
        basis,
        lambda_grid: lambdas,
        forget_grid: vec![0.0],
    };
    vec![
        CombinerSpec {
            label: "pointwise".to_string(),
            kind: boa(BasisSpec::Identity, vec![0.0]),
        },
        CombinerSpec {
            label: "p-smooth".to_string(),
            kind: boa(BasisSpec::Identity, crate::tuning::lambda_grid_simulation()),
        },
        CombinerSpec {
            label: "p-constant".to_string(),
            kind: boa(BasisSpec::Identity, vec![2f64.powi(30)]),
        },
        CombinerSpec {
            label: "b-smooth".to_string(),
            kind: boa(
                BasisSpec::KnotGrid {
                    distances: crate::tuning::knot_distance_grid(),
                    degree: 3,
                },
                vec![0.0],
            ),
        },
        CombinerSpec {
            label: "b-constant".to_string(),
            kind: boa(BasisSpec::Constant, vec![0.0]),
        },
    ]
}

/// A complete study: processes, horizons, repetitions, combiners, seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub dgp: Dgp,
    pub horizons: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub combiners: Vec<CombinerSpec>,
    /// Monte-Carlo draws for the per-level loss floor; zero skips the
    /// distance metrics (they are only defined for the static process).
    pub floor_mc_samples: usize,
}

/// One aggregated metric value for one combiner at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub config: String,
    pub horizon: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
}

impl StudyResult {
    /// Convenience lookup for a single aggregated value.
    pub fn value(&self, config: &str, horizon: usize, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.config == config && r.horizon == horizon && r.metric == metric)
            .map(|r| r.value)
    }
}

struct RepOutcome {
    crps_mean: f64,
    ql_means: Vec<f64>,
}

fn run_single_rep(
    template: &TuningGrid<AnyLearner>,
    slab: ArrayView2<'_, f64>,
    stream: &[f64],
    grid: &ProbGrid,
) -> Result<RepOutcome, SimError> {
    let mut tuner = template.clone();
    let m = grid.len();
    let mut ql_sums = vec![0.0; m];
    for &y in stream {
        let forecast = tuner.step(slab, y)?;
        for (i, &p) in grid.iter().enumerate() {
            ql_sums[i] += pinball(forecast[i], y, p);
        }
    }
    let t = stream.len() as f64;
    let ql_means: Vec<f64> = ql_sums.iter().map(|s| s / t).collect();
    let crps_mean = 2.0 * ql_means.iter().sum::<f64>() / m as f64;
    Ok(RepOutcome {
        crps_mean,
        ql_means,
    })
}

/// Runs the full study: every combiner on every horizon over `reps`
/// independent streams, derived deterministically from the master seed so
/// repetitions can run in parallel without changing results. Emitted
/// metrics per (config, horizon): `crps_mean`, `crps_sd`, `crps_se`,
/// `ql_mean` (half the CRPS, the per-level average pinball loss), and — for
/// the static process with a positive floor sample count — `ql_dist_mean`
/// plus one `ql_dist:{p}` row per grid level (time-mean pinball loss minus
/// the best attainable loss).
pub fn run_study(spec: &SimSpec, grid: &ProbGrid) -> Result<StudyResult, SimError> {
    if spec.reps == 0 {
        return Err(SimError::BadSpec { what: "reps >= 1" });
    }
    if spec.horizons.is_empty() {
        return Err(SimError::BadSpec {
            what: "at least one horizon",
        });
    }
    if spec.horizons.iter().any(|&t| t == 0) {
        return Err(SimError::BadSpec {
            what: "horizons >= 1",
        });
    }
    if spec.combiners.is_empty() {
        return Err(SimError::BadSpec {
            what: "at least one combiner",
        });
    }

    let slab = study_expert_slab(grid);
    let n_experts = slab.dim().1;

    let floor = if spec.dgp == Dgp::Static && spec.floor_mc_samples > 0 {
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
        rng.set_stream(u64::MAX);
        Some(
            grid.iter()
                .map(|&p| best_attainable_ql(p, spec.floor_mc_samples, &mut rng))
                .collect::<Vec<f64>>(),
        )
    } else {
        None
    };

    let mut rows = Vec::new();
    for (h_idx, &horizon) in spec.horizons.iter().enumerate() {
        // Identical streams per (horizon, rep) across combiners, so their
        // scores are paired.
        let streams: Vec<Vec<f64>> = (0..spec.reps)
            .into_par_iter()
            .map(|rep| {
                let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
                rng.set_stream(((h_idx as u64) << 32) | rep as u64);
                sample_dgp(spec.dgp, horizon, &mut rng)
            })
            .collect();

        for combiner in &spec.combiners {
            let template = build_tuner(combiner, grid, n_experts)?;
            let outcomes: Vec<RepOutcome> = streams
                .par_iter()
                .map(|stream| run_single_rep(&template, slab.view(), stream, grid))
                .collect::<Result<_, _>>()?;

            let reps = spec.reps as f64;
            let crps_mean = outcomes.iter().map(|o| o.crps_mean).sum::<f64>() / reps;
            let crps_var = outcomes
                .iter()
                .map(|o| (o.crps_mean - crps_mean).powi(2))
                .sum::<f64>()
                / (reps - 1.0).max(1.0);
            let crps_sd = crps_var.sqrt();
            let row = |metric: String, value: f64| StudyRow {
                config: combiner.label.clone(),
                horizon,
                metric,
                value,
            };
            rows.push(row("crps_mean".to_string(), crps_mean));
            rows.push(row("crps_sd".to_string(), crps_sd));
            rows.push(row("crps_se".to_string(), crps_sd / reps.sqrt()));
            rows.push(row("ql_mean".to_string(), crps_mean / 2.0));

            if let Some(floor) = &floor {
                let m = grid.len();
                let mut dist_sum = 0.0;
                for (i, &p) in grid.iter().enumerate() {
                    let mean_ql = outcomes.iter().map(|o| o.ql_means[i]).sum::<f64>() / reps;
                    let dist = mean_ql - floor[i];
                    dist_sum += dist;
                    rows.push(row(format!("ql_dist:{p}"), dist));
                }
                rows.push(row("ql_dist_mean".to_string(), dist_sum / m as f64));
            }
        }
    }
    Ok(StudyResult { rows })
}
