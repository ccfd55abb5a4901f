//! The three workflows behind the subcommands.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use crps_combine::evaluate::{
    crps_series, cumulative_difference, dm_test, ql_profile, DmOptions, EvalError, LossSeries,
    VarianceEstimator,
};
use crps_combine::loss::crps_grid;
use crps_combine::simulate::{
    build_tuner, changing_weights_specs, smoothing_specs, BasisSpec, CombinerKind, CombinerSpec,
    Dgp, SimSpec,
};
use crps_combine::tuning::{
    ewa_eta_grid_default, forget_grid, knot_distance_grid, lambda_grid_default,
};
use crps_combine::{validate_panel, ProbGrid};

use crate::config::{
    check_out_dir, load_file_config, parse_forecast_entry, parse_forget_choice, prefer, require,
    write_resolved_config, CombineArgs, EvaluateArgs, ForgetChoice, SimulateArgs,
};
use crate::{io, CliError};

fn parse_dgp(raw: &str) -> Result<Dgp, CliError> {
    match raw {
        "static" => Ok(Dgp::Static),
        "drifting" => Ok(Dgp::Drifting),
        other => Err(CliError::Usage(format!(
            "unknown process '{other}': expected \"static\" or \"drifting\""
        ))),
    }
}

#[derive(Serialize)]
struct ResolvedSimulate<'a> {
    workflow: &'static str,
    desk_scale: bool,
    forget_grid: &'a str,
    out: &'a Path,
    spec: &'a SimSpec,
}

pub fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let file = load_file_config(args.config.as_deref())?;
    let dgp_raw = prefer(args.dgp, file.dgp).unwrap_or_else(|| "static".to_string());
    let dgp = parse_dgp(&dgp_raw)?;
    let desk_scale = args.desk_scale || file.desk_scale.unwrap_or(false);
    let reps = prefer(args.reps, file.reps).unwrap_or(if desk_scale { 100 } else { 1000 });
    let horizons = prefer(args.horizons, file.horizons).unwrap_or_else(|| match dgp {
        Dgp::Static => vec![32, 128, 512],
        Dgp::Drifting => vec![512],
    });
    let out = require(prefer(args.out, file.out), "out")?;
    check_out_dir(&out)?;
    let forget_raw = prefer(args.forget_grid, file.forget_grid);

    let combiners = match dgp {
        Dgp::Static => {
            if forget_raw.is_some() {
                eprintln!("note: --forget-grid applies to the drifting process only; ignored");
            }
            smoothing_specs()
        }
        Dgp::Drifting => {
            let choice = parse_forget_choice(forget_raw.as_deref().unwrap_or("auto"))?;
            let longest = *horizons.iter().max().unwrap_or(&1);
            let mut specs = changing_weights_specs(longest);
            match &choice {
                ForgetChoice::Auto => {}
                ForgetChoice::None => specs.retain(|s| s.label.ends_with("-noforget")),
                ForgetChoice::Explicit(values) => {
                    for spec in &mut specs {
                        if spec.label.ends_with("-forget") {
                            if let CombinerKind::Boa { forget_grid, .. } = &mut spec.kind {
                                *forget_grid = values.clone();
                            }
                        }
                    }
                }
            }
            specs
        }
    };

    let floor_mc = prefer(args.floor_mc, file.floor_mc).unwrap_or(match dgp {
        Dgp::Static => 100_000,
        Dgp::Drifting => 0,
    });

    let spec = SimSpec {
        dgp,
        horizons,
        reps,
        seed: args.seed,
        combiners,
        floor_mc_samples: floor_mc,
    };
    let grid = ProbGrid::percentiles();
    let result = crps_combine::simulate::run_study(&spec, &grid)
        .map_err(|e| CliError::Data(e.to_string()))?;

    io::write_results_csv(&out.join("results.csv"), &result)?;
    io::write_plot_data_csv(&out.join("plot_data.csv"), &result)?;
    write_resolved_config(
        &out,
        &ResolvedSimulate {
            workflow: "simulate",
            desk_scale,
            forget_grid: forget_raw.as_deref().unwrap_or("auto"),
            out: &out,
            spec: &spec,
        },
    )
}

const METHOD_NAMES: [&str; 7] = [
    "naive",
    "ewag",
    "boag-pointwise",
    "boag-p-smooth",
    "boag-p-constant",
    "boag-b-smooth",
    "boag-b-constant",
];

fn method_spec(name: &str, forget: &[f64]) -> Result<CombinerSpec, CliError> {
    let boa = |basis: BasisSpec, lambdas: Vec<f64>| CombinerKind::Boa {
        basis,
        lambda_grid: lambdas,
        forget_grid: forget.to_vec(),
    };
    let kind = match name {
        "naive" => CombinerKind::Naive,
        "ewag" => CombinerKind::Ewa {
            eta_grid: ewa_eta_grid_default(),
            gradient: true,
        },
        "boag-pointwise" => boa(BasisSpec::Identity, vec![0.0]),
        "boag-p-smooth" => boa(BasisSpec::Identity, lambda_grid_default()),
        "boag-p-constant" => boa(BasisSpec::Identity, vec![2f64.powi(30)]),
        "boag-b-smooth" => boa(
            BasisSpec::KnotGrid {
                distances: knot_distance_grid(),
                degree: 3,
            },
            vec![0.0],
        ),
        "boag-b-constant" => boa(BasisSpec::Constant, vec![0.0]),
        other => {
            return Err(CliError::Usage(format!(
                "unknown method '{other}': expected one of {}",
                METHOD_NAMES.join(", ")
            )))
        }
    };
    Ok(CombinerSpec {
        label: name.to_string(),
        kind,
    })
}

#[derive(Serialize)]
struct ResolvedCombine<'a> {
    workflow: &'static str,
    experts: &'a Path,
    obs: &'a Path,
    out: &'a Path,
    methods: &'a [String],
    forget_grid: &'a str,
    forget_values: &'a [f64],
    combiners: &'a [CombinerSpec],
}

pub fn cmd_combine(args: CombineArgs) -> Result<(), CliError> {
    let file = load_file_config(args.config.as_deref())?;
    let experts_path = require(prefer(args.experts, file.experts), "experts")?;
    let obs_path = require(prefer(args.obs, file.obs), "obs")?;
    let out = require(prefer(args.out, file.out), "out")?;
    check_out_dir(&out)?;
    let methods = prefer(args.methods, file.methods).unwrap_or_else(|| {
        vec![
            "naive".to_string(),
            "boag-pointwise".to_string(),
            "boag-p-smooth".to_string(),
        ]
    });
    if methods.is_empty() {
        return Err(CliError::Usage("empty --methods list".to_string()));
    }
    for (i, method) in methods.iter().enumerate() {
        if methods[..i].contains(method) {
            return Err(CliError::Usage(format!("duplicate method '{method}'")));
        }
    }
    let forget_raw =
        prefer(args.forget_grid, file.forget_grid).unwrap_or_else(|| "none".to_string());
    let choice = parse_forget_choice(&forget_raw)?;

    let (times, obs) = io::read_observations(&obs_path)?;
    let (panel, grid) = io::read_expert_panel(&experts_path, &times)?;
    validate_panel(&panel, &grid, &obs).map_err(|e| CliError::Data(e.to_string()))?;

    let forget_values = match &choice {
        ForgetChoice::None => vec![0.0],
        ForgetChoice::Auto => forget_grid(obs.len()),
        ForgetChoice::Explicit(values) => values.clone(),
    };
    let specs = methods
        .iter()
        .map(|m| method_spec(m, &forget_values))
        .collect::<Result<Vec<_>, _>>()?;

    let mut per_method_loss: Vec<(String, Vec<f64>)> = Vec::with_capacity(specs.len());
    for spec in &specs {
        let mut tuner = build_tuner(spec, &grid, panel.n_experts())
            .map_err(|e| CliError::Data(e.to_string()))?;
        let mut forecasts: Vec<Vec<f64>> = Vec::with_capacity(obs.len());
        let mut weights: Vec<Array2<f64>> = Vec::with_capacity(obs.len());
        let mut losses: Vec<f64> = Vec::with_capacity(obs.len());
        for (t, &y) in obs.values().iter().enumerate() {
            weights.push(tuner.weights().to_owned());
            let forecast = tuner
                .step(panel.slab(t), y)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let curve = forecast.to_vec();
            losses.push(crps_grid(&curve, y, &grid));
            forecasts.push(curve);
        }
        io::write_combined_csv(
            &out.join(format!("combined_{}.csv", spec.label)),
            &times,
            grid.probs(),
            &forecasts,
        )?;
        io::write_weights_csv(
            &out.join(format!("weights_{}.csv", spec.label)),
            &times,
            grid.probs(),
            panel.names(),
            &weights,
        )?;
        per_method_loss.push((spec.label.clone(), losses));
    }
    io::write_loss_csv(&out.join("loss.csv"), &times, &per_method_loss)?;
    write_resolved_config(
        &out,
        &ResolvedCombine {
            workflow: "combine",
            experts: &experts_path,
            obs: &obs_path,
            out: &out,
            methods: &methods,
            forget_grid: &forget_raw,
            forget_values: &forget_values,
            combiners: &specs,
        },
    )
}

#[derive(Serialize)]
struct ForecastEntry {
    name: String,
    path: PathBuf,
}

#[derive(Serialize)]
struct ResolvedEvaluate<'a> {
    workflow: &'static str,
    obs: &'a Path,
    forecasts: &'a [ForecastEntry],
    reference: &'a str,
    dm_lag: Option<usize>,
    dm_small_sample: bool,
    out: &'a Path,
}

pub fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let file = load_file_config(args.config.as_deref())?;
    let obs_path = require(prefer(args.obs, file.obs), "obs")?;
    let out = require(prefer(args.out, file.out), "out")?;
    check_out_dir(&out)?;

    let raw_entries = if args.forecasts.is_empty() {
        file.forecasts.unwrap_or_default()
    } else {
        args.forecasts
    };
    let entries = raw_entries
        .iter()
        .map(|raw| parse_forecast_entry(raw))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|(name, path)| ForecastEntry { name, path })
        .collect::<Vec<_>>();
    if entries.len() < 2 {
        return Err(CliError::Usage(
            "need at least two --forecast name=path entries to compare".to_string(),
        ));
    }
    for (i, entry) in entries.iter().enumerate() {
        if entries[..i].iter().any(|e| e.name == entry.name) {
            return Err(CliError::Usage(format!(
                "duplicate forecast name '{}'",
                entry.name
            )));
        }
    }
    let reference =
        prefer(args.reference, file.reference).unwrap_or_else(|| entries[0].name.clone());
    if !entries.iter().any(|e| e.name == reference) {
        return Err(CliError::Usage(format!(
            "reference '{reference}' is not among the forecast names"
        )));
    }
    let dm_lag = prefer(args.dm_lag, file.dm_lag);
    let dm_small_sample = args.dm_small_sample || file.dm_small_sample.unwrap_or(false);
    let dm_options = DmOptions {
        variance: match dm_lag {
            Some(lags) => VarianceEstimator::NeweyWest { lags },
            None => VarianceEstimator::Lag0,
        },
        small_sample: dm_small_sample,
    };

    let (times, obs) = io::read_observations(&obs_path)?;
    let mut matrices = Vec::with_capacity(entries.len());
    let mut shared_probs: Option<Vec<f64>> = None;
    for entry in &entries {
        let (matrix, probs) = io::read_forecast_file(&entry.path, &times)?;
        match &shared_probs {
            None => shared_probs = Some(probs),
            Some(first) => {
                if first != &probs {
                    return Err(CliError::Data(format!(
                        "probability grid of '{}' differs from '{}'",
                        entry.path.display(),
                        entries[0].path.display()
                    )));
                }
            }
        }
        matrices.push(matrix);
    }
    let probs = shared_probs.expect("at least two forecast files were read");
    let grid = ProbGrid::new(probs.clone()).map_err(|e| CliError::Data(e.to_string()))?;

    let eval_err = |e: EvalError| CliError::Data(e.to_string());
    let mut losses: Vec<LossSeries> = Vec::with_capacity(entries.len());
    let mut profiles: Vec<(String, Vec<f64>)> = Vec::with_capacity(entries.len());
    let mut table: Vec<(String, f64)> = Vec::with_capacity(entries.len());
    for (entry, matrix) in entries.iter().zip(&matrices) {
        let series =
            crps_series(matrix.view(), &obs, &grid, entry.name.clone()).map_err(eval_err)?;
        table.push((entry.name.clone(), series.mean()));
        profiles.push((
            entry.name.clone(),
            ql_profile(matrix.view(), &obs, &grid).map_err(eval_err)?,
        ));
        losses.push(series);
    }

    let ref_idx = entries
        .iter()
        .position(|e| e.name == reference)
        .expect("reference validated above");
    let mut cum_series: Vec<(String, Vec<f64>)> = Vec::new();
    for (i, series) in losses.iter().enumerate() {
        if i == ref_idx {
            continue;
        }
        cum_series.push((
            entries[i].name.clone(),
            cumulative_difference(series, &losses[ref_idx]).map_err(eval_err)?,
        ));
    }

    let names: Vec<String> = entries.iter().map(|e| e.name.clone()).collect();
    let mut p_values: Vec<Vec<Option<f64>>> = Vec::with_capacity(names.len());
    for (i, a) in losses.iter().enumerate() {
        let mut row = Vec::with_capacity(names.len());
        for (j, b) in losses.iter().enumerate() {
            if i == j {
                row.push(None);
                continue;
            }
            match dm_test(a, b, dm_options) {
                Ok(outcome) => row.push(Some(outcome.p_value)),
                Err(EvalError::DegenerateDifferential { .. }) => row.push(None),
                Err(e) => return Err(eval_err(e)),
            }
        }
        p_values.push(row);
    }

    io::write_crps_table_csv(&out.join("crps_table.csv"), &table)?;
    io::write_ql_profile_csv(&out.join("ql_profile.csv"), &probs, &profiles)?;
    io::write_cumulative_difference_csv(
        &out.join("cumulative_difference.csv"),
        &times,
        &cum_series,
    )?;
    io::write_dm_matrix_csv(&out.join("dm_matrix.csv"), &names, &p_values)?;
    write_resolved_config(
        &out,
        &ResolvedEvaluate {
            workflow: "evaluate",
            obs: &obs_path,
            forecasts: &entries,
            reference: &reference,
            dm_lag,
            dm_small_sample,
            out: &out,
        },
    )
}
