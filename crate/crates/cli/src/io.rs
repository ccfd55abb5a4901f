//! CSV ingestion and emission.
//!
//! All files are UTF-8 CSV with one header row. Time stamps are opaque
//! strings; the observation file's row order defines the time axis and every
//! other file must cover exactly those stamps. Numbers are written in the
//! shortest form that parses back to the same value.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::Path;

use csv::StringRecord;
use ndarray::{Array2, Array3};

use crps_combine::grid::ExpertPanel;
use crps_combine::simulate::StudyResult;
use crps_combine::{ObservationStream, ProbGrid};

use crate::CliError;

fn open_err(path: &Path, e: impl Display) -> CliError {
    CliError::Usage(format!("cannot read '{}': {e}", path.display()))
}

fn write_err(path: &Path, e: impl Display) -> CliError {
    CliError::Usage(format!("cannot write '{}': {e}", path.display()))
}

fn data_err(path: &Path, what: impl Display) -> CliError {
    CliError::Data(format!("{}: {what}", path.display()))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| open_err(path, e))?;
    Ok(csv::ReaderBuilder::new().from_reader(file))
}

fn check_header(
    rdr: &mut csv::Reader<std::fs::File>,
    path: &Path,
    expected: &[&str],
) -> Result<(), CliError> {
    let headers = rdr
        .headers()
        .map_err(|e| data_err(path, format!("cannot parse header: {e}")))?;
    if headers != &StringRecord::from(expected.to_vec()) {
        return Err(data_err(
            path,
            format!(
                "expected header '{}', found '{}'",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    Ok(())
}

fn record_line(record: &StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_finite(path: &Path, line: u64, column: &str, raw: &str) -> Result<f64, CliError> {
    let value: f64 = raw.parse().map_err(|_| {
        data_err(
            path,
            format!("line {line}: column '{column}' is not a number: '{raw}'"),
        )
    })?;
    if !value.is_finite() {
        return Err(data_err(
            path,
            format!("line {line}: column '{column}' is not finite: '{raw}'"),
        ));
    }
    Ok(value)
}

fn read_records(
    rdr: &mut csv::Reader<std::fs::File>,
    path: &Path,
    width: usize,
) -> Result<Vec<StringRecord>, CliError> {
    let mut records = Vec::new();
    for item in rdr.records() {
        let record = item.map_err(|e| data_err(path, format!("malformed row: {e}")))?;
        if record.len() != width {
            return Err(data_err(
                path,
                format!(
                    "line {}: expected {width} fields, found {}",
                    record_line(&record),
                    record.len()
                ),
            ));
        }
        records.push(record);
    }
    Ok(records)
}

/// Reads `time,value` observations; returns the time stamps in file order
/// and the validated stream.
pub fn read_observations(path: &Path) -> Result<(Vec<String>, ObservationStream), CliError> {
    let mut rdr = reader(path)?;
    check_header(&mut rdr, path, &["time", "value"])?;
    let mut times = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    let mut values = Vec::new();
    for record in read_records(&mut rdr, path, 2)? {
        let line = record_line(&record);
        let time = record[0].to_string();
        if let Some(previous) = seen.insert(time.clone(), line) {
            return Err(data_err(
                path,
                format!("line {line}: duplicate time '{time}' (first at line {previous})"),
            ));
        }
        values.push(parse_finite(path, line, "value", &record[1])?);
        times.push(time);
    }
    if times.is_empty() {
        return Err(data_err(path, "no data rows"));
    }
    let stream = ObservationStream::new(values).map_err(|e| data_err(path, e))?;
    Ok((times, stream))
}

/// Sorted, deduplicated probability levels with an index lookup keyed by
/// exact value.
struct ProbIndex {
    probs: Vec<f64>,
}

impl ProbIndex {
    fn from_values(mut probs: Vec<f64>) -> Self {
        probs.sort_by(f64::total_cmp);
        probs.dedup();
        Self { probs }
    }

    fn index_of(&self, p: f64) -> usize {
        self.probs
            .binary_search_by(|x| x.total_cmp(&p))
            .expect("probability was collected from the same file")
    }
}

/// Reads the long-format expert panel `time,expert,probability,value`
/// against the observation time axis. Every expert must supply every
/// probability at every time, exactly once; expert order is first
/// appearance, probabilities are sorted ascending.
pub fn read_expert_panel(
    path: &Path,
    times: &[String],
) -> Result<(ExpertPanel, ProbGrid), CliError> {
    let mut rdr = reader(path)?;
    check_header(&mut rdr, path, &["time", "expert", "probability", "value"])?;
    let time_index: HashMap<&str, usize> = times
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();

    let records = read_records(&mut rdr, path, 4)?;
    if records.is_empty() {
        return Err(data_err(path, "no data rows"));
    }

    let mut expert_names: Vec<String> = Vec::new();
    let mut expert_index: HashMap<String, usize> = HashMap::new();
    let mut probs = Vec::with_capacity(records.len());
    let mut rows = Vec::with_capacity(records.len());
    for record in &records {
        let line = record_line(record);
        let t = *time_index.get(&record[0]).ok_or_else(|| {
            data_err(
                path,
                format!(
                    "line {line}: time '{}' does not appear in the observation file",
                    &record[0]
                ),
            )
        })?;
        let k = match expert_index.get(&record[1]) {
            Some(&k) => k,
            None => {
                let k = expert_names.len();
                expert_names.push(record[1].to_string());
                expert_index.insert(record[1].to_string(), k);
                k
            }
        };
        let p = parse_finite(path, line, "probability", &record[2])?;
        if !(0.0 < p && p < 1.0) {
            return Err(data_err(
                path,
                format!("line {line}: probability {p} outside (0, 1)"),
            ));
        }
        let value = parse_finite(path, line, "value", &record[3])?;
        probs.push(p);
        rows.push((t, k, p, value, line));
    }

    let index = ProbIndex::from_values(probs);
    let (t_len, m_len, k_len) = (times.len(), index.probs.len(), expert_names.len());
    let mut cube = Array3::from_elem((t_len, m_len, k_len), f64::NAN);
    for (t, k, p, value, line) in rows {
        let m = index.index_of(p);
        let cell = &mut cube[[t, m, k]];
        if !cell.is_nan() {
            return Err(data_err(
                path,
                format!(
                    "line {line}: duplicate cell (time '{}', expert '{}', probability {p})",
                    times[t], expert_names[k]
                ),
            ));
        }
        *cell = value;
    }
    for ((t, m, k), value) in cube.indexed_iter() {
        if value.is_nan() {
            return Err(data_err(
                path,
                format!(
                    "missing cell: time '{}', expert '{}', probability {}",
                    times[t], expert_names[k], index.probs[m]
                ),
            ));
        }
    }

    let grid = ProbGrid::new(index.probs).map_err(|e| data_err(path, e))?;
    let panel = ExpertPanel::new(cube, expert_names).map_err(|e| data_err(path, e))?;
    Ok((panel, grid))
}

/// Reads a combined-forecast file `time,probability,value` against the
/// observation time axis; returns the (time x probability) matrix and the
/// ascending probability levels.
pub fn read_forecast_file(
    path: &Path,
    times: &[String],
) -> Result<(Array2<f64>, Vec<f64>), CliError> {
    let mut rdr = reader(path)?;
    check_header(&mut rdr, path, &["time", "probability", "value"])?;
    let time_index: HashMap<&str, usize> = times
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();

    let records = read_records(&mut rdr, path, 3)?;
    if records.is_empty() {
        return Err(data_err(path, "no data rows"));
    }

    let mut probs = Vec::with_capacity(records.len());
    let mut rows = Vec::with_capacity(records.len());
    for record in &records {
        let line = record_line(record);
        let t = *time_index.get(&record[0]).ok_or_else(|| {
            data_err(
                path,
                format!(
                    "line {line}: time '{}' does not appear in the observation file",
                    &record[0]
                ),
            )
        })?;
        let p = parse_finite(path, line, "probability", &record[1])?;
        if !(0.0 < p && p < 1.0) {
            return Err(data_err(
                path,
                format!("line {line}: probability {p} outside (0, 1)"),
            ));
        }
        let value = parse_finite(path, line, "value", &record[2])?;
        probs.push(p);
        rows.push((t, p, value, line));
    }

    let index = ProbIndex::from_values(probs);
    let mut matrix = Array2::from_elem((times.len(), index.probs.len()), f64::NAN);
    for (t, p, value, line) in rows {
        let m = index.index_of(p);
        let cell = &mut matrix[[t, m]];
        if !cell.is_nan() {
            return Err(data_err(
                path,
                format!(
                    "line {line}: duplicate cell (time '{}', probability {p})",
                    times[t]
                ),
            ));
        }
        *cell = value;
    }
    for ((t, m), value) in matrix.indexed_iter() {
        if value.is_nan() {
            return Err(data_err(
                path,
                format!(
                    "missing cell: time '{}', probability {}",
                    times[t], index.probs[m]
                ),
            ));
        }
    }
    Ok((matrix, index.probs))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    let file = std::fs::File::create(path).map_err(|e| write_err(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut wtr: csv::Writer<std::fs::File>, path: &Path) -> Result<(), CliError> {
    wtr.flush().map_err(|e| write_err(path, e))
}

/// Writes the wide per-(config, horizon) study summary.
pub fn write_results_csv(path: &Path, result: &StudyResult) -> Result<(), CliError> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for row in &result.rows {
        let key = (row.config.clone(), row.horizon);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let with_distance = result.rows.iter().any(|r| r.metric == "ql_dist_mean");

    let mut wtr = writer(path)?;
    let mut header = vec!["config", "T", "crps_mean", "crps_sd", "crps_se", "ql_mean"];
    if with_distance {
        header.push("ql_dist_mean");
    }
    wtr.write_record(&header).map_err(|e| write_err(path, e))?;
    for (config, horizon) in keys {
        let metric = |name: &str| {
            result
                .value(&config, horizon, name)
                .expect("aggregated metric present for every (config, horizon)")
        };
        let mut record = vec![
            config.clone(),
            horizon.to_string(),
            format!("{}", metric("crps_mean")),
            format!("{}", metric("crps_sd")),
            format!("{}", metric("crps_se")),
            format!("{}", metric("ql_mean")),
        ];
        if with_distance {
            record.push(format!("{}", metric("ql_dist_mean")));
        }
        wtr.write_record(&record).map_err(|e| write_err(path, e))?;
    }
    finish(wtr, path)
}

/// Writes every aggregated metric in long format: config,T,metric,value.
pub fn write_plot_data_csv(path: &Path, result: &StudyResult) -> Result<(), CliError> {
    let mut wtr = writer(path)?;
    wtr.write_record(["config", "T", "metric", "value"])
        .map_err(|e| write_err(path, e))?;
    for row in &result.rows {
        wtr.write_record([
            row.config.as_str(),
            &row.horizon.to_string(),
            row.metric.as_str(),
            &format!("{}", row.value),
        ])
        .map_err(|e| write_err(path, e))?;
    }
    finish(wtr, path)
}

/// Writes combined quantiles: time,probability,value; times in axis order,
/// probabilities ascending within each time.
pub fn write_combined_csv(
    path: &Path,
    times: &[String],
    probs: &[f64],
    forecasts: &[Vec<f64>],
) -> Result<(), CliError> {
    let mut wtr = writer(path)?;
    wtr.write_record(["time", "probability", "value"])
        .map_err(|e| write_err(path, e))?;
    for (time, forecast) in times.iter().zip(forecasts) {
        for (p, v) in probs.iter().zip(forecast) {
            wtr.write_record([time.as_str(), &format!("{p}"), &format!("{v}")])
                .map_err(|e| write_err(path, e))?;
        }
    }
    finish(wtr, path)
}

/// Writes the weight surface used for each forecast (captured before the
/// observation arrived): time,expert,probability,weight.
pub fn write_weights_csv(
    path: &Path,
    times: &[String],
    probs: &[f64],
    expert_names: &[String],
    surfaces: &[Array2<f64>],
) -> Result<(), CliError> {
    let mut wtr = writer(path)?;
    wtr.write_record(["time", "expert", "probability", "weight"])
        .map_err(|e| write_err(path, e))?;
    for (time, surface) in times.iter().zip(surfaces) {
        for (m, p) in probs.iter().enumerate() {
            for (k, name) in expert_names.iter().enumerate() {
                wtr.write_record([
                    time.as_str(),
                    name.as_str(),
                    &format!("{p}"),
                    &format!("{}", surface[[m, k]]),
                ])
                .map_err(|e| write_err(path, e))?;
            }
        }
    }
    finish(wtr, path)
}

/// Writes per-step losses for every method: time,method,crps; times outer,
/// methods inner, so truncating the inputs truncates this file to a prefix.
pub fn write_loss_csv(
    path: &Path,
    times: &[String],
    per_method: &[(String, Vec<f64>)],
) -> Result<(), CliError> {
    let mut wtr = writer(path)?;
    wtr.write_record(["time", "method", "crps"])
        .map_err(|e| write_err(path, e))?;
    for (t, time) in times.iter().enumerate() {
        for (method, losses) in per_method {
            wtr.write_record([time.as_str(), method.as_str(), &format!("{}", losses[t])])
                .map_err(|e| write_err(path, e))?;
        }
    }
    finish(wtr, path)
}

/// Writes the per-method mean CRPS table.
pub fn write_crps_table_csv(path: &Path, rows: &[(String, f64)]) -> Result<(), CliError> {
    let mut wtr = writer(path)?;
    wtr.write_record(["method", "mean_crps"])
        .map_err(|e| write_err(path, e))?;
    for (method, mean) in rows {
        wtr.write_record([method.as_str(), &format!("{mean}")])
            .map_err(|e| write_err(path, e))?;
    }
    finish(wtr, path)
}

/// Writes per-level mean pinball losses: probability,method,mean_loss.
pub fn write_ql_profile_csv(
    path: &Path,
    probs: &[f64],
    profiles: &[(String, Vec<f64>)],
) -> Result<(), CliError> {
    let mut wtr = writer(path)?;
    wtr.write_record(["probability", "method", "mean_loss"])
        .map_err(|e| write_err(path, e))?;
    for (m, p) in probs.iter().enumerate() {
        for (method, profile) in profiles {
            wtr.write_record([&format!("{p}"), method.as_str(), &format!("{}", profile[m])])
                .map_err(|e| write_err(path, e))?;
        }
    }
    finish(wtr, path)
}

/// Writes running loss differences against the reference method:
/// time,method,cum_diff (the reference itself is omitted).
pub fn write_cumulative_difference_csv(
    path: &Path,
    times: &[String],
    series: &[(String, Vec<f64>)],
) -> Result<(), CliError> {
    let mut wtr = writer(path)?;
    wtr.write_record(["time", "method", "cum_diff"])
        .map_err(|e| write_err(path, e))?;
    for (t, time) in times.iter().enumerate() {
        for (method, values) in series {
            wtr.write_record([time.as_str(), method.as_str(), &format!("{}", values[t])])
                .map_err(|e| write_err(path, e))?;
        }
    }
    finish(wtr, path)
}

/// Writes the pairwise one-sided p-value matrix; `None` entries (the
/// diagonal and degenerate comparisons) appear as `NA`.
pub fn write_dm_matrix_csv(
    path: &Path,
    methods: &[String],
    p_values: &[Vec<Option<f64>>],
) -> Result<(), CliError> {
    let mut wtr = writer(path)?;
    let mut header = vec!["method".to_string()];
    header.extend(methods.iter().cloned());
    wtr.write_record(&header).map_err(|e| write_err(path, e))?;
    for (i, row) in p_values.iter().enumerate() {
        let mut record = vec![methods[i].clone()];
        for entry in row {
            record.push(match entry {
                Some(p) => format!("{p}"),
                None => "NA".to_string(),
            });
        }
        wtr.write_record(&record).map_err(|e| write_err(path, e))?;
    }
    finish(wtr, path)
}
