//! End-to-end tests that spawn the compiled binary.

use std::path::{Path, PathBuf};
use std::process::Output;
use std::sync::atomic::{AtomicUsize, Ordering};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_crps-combine")
}

static DIR_COUNTER: AtomicUsize = AtomicUsize::new(0);

struct TempDir(PathBuf);

impl TempDir {
    fn new() -> Self {
        let id = DIR_COUNTER.fetch_add(1, Ordering::Relaxed);
        let dir = std::env::temp_dir().join(format!("crps-cli-e2e-{}-{id}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        Self(dir)
    }

    fn path(&self) -> &Path {
        &self.0
    }

    fn subdir(&self, name: &str) -> PathBuf {
        let dir = self.0.join(name);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn file(&self, name: &str, contents: &str) -> PathBuf {
        let path = self.0.join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn run(args: &[&str]) -> Output {
    std::process::Command::new(bin())
        .args(args)
        .output()
        .expect("binary spawns")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Deterministic observation values for `t = 0..n`.
fn obs_value(t: usize) -> f64 {
    0.3 * (t as f64) - 0.7 * ((t % 3) as f64)
}

fn obs_csv(n: usize) -> String {
    let mut text = String::from("time,value\n");
    for t in 0..n {
        text.push_str(&format!("t{t},{}\n", obs_value(t)));
    }
    text
}

const PROBS: [f64; 3] = [0.25, 0.5, 0.75];

fn expert_a(t: usize, m: usize) -> f64 {
    -1.0 + 0.8 * (m as f64) + 0.1 * (t as f64)
}

fn expert_b(t: usize, m: usize) -> f64 {
    0.5 + 0.6 * (m as f64) - 0.05 * (t as f64)
}

fn experts_csv(n: usize) -> String {
    let mut text = String::from("time,expert,probability,value\n");
    for t in 0..n {
        for (m, p) in PROBS.iter().enumerate() {
            text.push_str(&format!("t{t},a,{p},{}\n", expert_a(t, m)));
            text.push_str(&format!("t{t},b,{p},{}\n", expert_b(t, m)));
        }
    }
    text
}

/// Parses `time,probability,value` into (time, probability, value) rows.
fn parse_combined(text: &str) -> Vec<(String, f64, f64)> {
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 3, "combined row: {line}");
        rows.push((
            fields[0].to_string(),
            fields[1].parse().unwrap(),
            fields[2].parse().unwrap(),
        ));
    }
    rows
}

#[test]
fn missing_output_directory_exits_2_and_names_the_path() {
    let dir = TempDir::new();
    let obs = dir.file("obs.csv", &obs_csv(4));
    let experts = dir.file("experts.csv", &experts_csv(4));
    let missing = dir.path().join("not-created");
    let output = run(&[
        "combine",
        "--experts",
        experts.to_str().unwrap(),
        "--obs",
        obs.to_str().unwrap(),
        "--out",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2), "{}", stderr_of(&output));
    assert!(stderr_of(&output).contains(missing.to_str().unwrap()));

    let output = run(&[
        "simulate",
        "--seed",
        "1",
        "--reps",
        "1",
        "--horizons",
        "4",
        "--out",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains(missing.to_str().unwrap()));
}

#[test]
fn simulate_requires_a_seed() {
    let dir = TempDir::new();
    let out = dir.subdir("out");
    let output = run(&["simulate", "--out", out.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("--seed"));
}

#[test]
fn malformed_expert_cell_exits_1_naming_line_and_column() {
    let dir = TempDir::new();
    let obs = dir.file("obs.csv", &obs_csv(2));
    let experts = dir.file(
        "experts.csv",
        "time,expert,probability,value\nt0,a,0.25,1.0\nt0,a,0.5,oops\n",
    );
    let out = dir.subdir("out");
    let output = run(&[
        "combine",
        "--experts",
        experts.to_str().unwrap(),
        "--obs",
        obs.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = stderr_of(&output);
    assert!(stderr.contains("line 3"), "{stderr}");
    assert!(stderr.contains("column 'value'"), "{stderr}");
}

#[test]
fn unknown_method_exits_2() {
    let dir = TempDir::new();
    let obs = dir.file("obs.csv", &obs_csv(2));
    let experts = dir.file("experts.csv", &experts_csv(2));
    let out = dir.subdir("out");
    let output = run(&[
        "combine",
        "--experts",
        experts.to_str().unwrap(),
        "--obs",
        obs.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--methods",
        "boag-q-smooth",
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("unknown method"));
}

#[test]
fn single_expert_combination_returns_the_sorted_input() {
    let dir = TempDir::new();
    let n = 6;
    let obs = dir.file("obs.csv", &obs_csv(n));
    let mut text = String::from("time,expert,probability,value\n");
    for t in 0..n {
        for (m, p) in PROBS.iter().enumerate() {
            text.push_str(&format!("t{t},solo,{p},{}\n", expert_a(t, m)));
        }
    }
    let experts = dir.file("experts.csv", &text);
    let out = dir.subdir("out");
    let output = run(&[
        "combine",
        "--experts",
        experts.to_str().unwrap(),
        "--obs",
        obs.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--methods",
        "naive,boag-pointwise",
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    for method in ["naive", "boag-pointwise"] {
        let rows = parse_combined(&read(&out.join(format!("combined_{method}.csv"))));
        assert_eq!(rows.len(), n * PROBS.len());
        for (i, (time, p, value)) in rows.iter().enumerate() {
            let (t, m) = (i / PROBS.len(), i % PROBS.len());
            assert_eq!(time, &format!("t{t}"));
            assert_eq!(*p, PROBS[m]);
            assert_eq!(*value, expert_a(t, m), "method {method}, row {i}");
        }
    }
}

#[test]
fn naive_method_averages_then_sorts() {
    let dir = TempDir::new();
    let n = 5;
    let obs = dir.file("obs.csv", &obs_csv(n));
    let experts = dir.file("experts.csv", &experts_csv(n));
    let out = dir.subdir("out");
    let output = run(&[
        "combine",
        "--experts",
        experts.to_str().unwrap(),
        "--obs",
        obs.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--methods",
        "naive",
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    let rows = parse_combined(&read(&out.join("combined_naive.csv")));
    for t in 0..n {
        let mut expected: Vec<f64> = (0..PROBS.len())
            .map(|m| 0.5 * expert_a(t, m) + 0.5 * expert_b(t, m))
            .collect();
        expected.sort_by(f64::total_cmp);
        for (m, want) in expected.iter().enumerate() {
            assert_eq!(rows[t * PROBS.len() + m].2, *want, "t={t} m={m}");
        }
    }
}

#[test]
fn weight_rows_sum_to_one_per_time_and_level() {
    let dir = TempDir::new();
    let n = 8;
    let obs = dir.file("obs.csv", &obs_csv(n));
    let experts = dir.file("experts.csv", &experts_csv(n));
    let out = dir.subdir("out");
    let output = run(&[
        "combine",
        "--experts",
        experts.to_str().unwrap(),
        "--obs",
        obs.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--methods",
        "boag-p-smooth",
        "--forget-grid",
        "auto",
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    let text = read(&out.join("weights_boag-p-smooth.csv"));
    let mut sums: std::collections::BTreeMap<(String, String), f64> =
        std::collections::BTreeMap::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 4, "weight row: {line}");
        let key = (fields[0].to_string(), fields[2].to_string());
        *sums.entry(key).or_insert(0.0) += fields[3].parse::<f64>().unwrap();
    }
    assert_eq!(sums.len(), n * PROBS.len());
    // Smoothed weights pass through a spline-smoother linear solve, so
    // row sums are preserved only to solver precision.
    for ((time, p), sum) in sums {
        assert!(
            (sum - 1.0).abs() < 1e-6,
            "weights at ({time}, {p}) sum to {sum}"
        );
    }
}

#[test]
fn truncating_observations_reproduces_a_prefix() {
    let dir = TempDir::new();
    let full_n = 8;
    let cut = 5;
    let obs_full = dir.file("obs_full.csv", &obs_csv(full_n));
    let experts_full = dir.file("experts_full.csv", &experts_csv(full_n));
    let obs_cut = dir.file("obs_cut.csv", &obs_csv(cut));
    let experts_cut = dir.file("experts_cut.csv", &experts_csv(cut));
    let out_full = dir.subdir("out_full");
    let out_cut = dir.subdir("out_cut");
    for (experts, obs, out) in [
        (&experts_full, &obs_full, &out_full),
        (&experts_cut, &obs_cut, &out_cut),
    ] {
        let output = run(&[
            "combine",
            "--experts",
            experts.to_str().unwrap(),
            "--obs",
            obs.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--methods",
            "naive,boag-pointwise,boag-p-smooth",
        ]);
        assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    }
    for name in [
        "combined_naive.csv",
        "combined_boag-pointwise.csv",
        "combined_boag-p-smooth.csv",
        "weights_boag-pointwise.csv",
        "loss.csv",
    ] {
        let full = read(&out_full.join(name));
        let cut_text = read(&out_cut.join(name));
        assert!(
            full.starts_with(&cut_text),
            "{name}: truncated run is not a prefix of the full run"
        );
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new();
    let n = 6;
    let obs = dir.file("obs.csv", &obs_csv(n));
    let experts = dir.file("experts.csv", &experts_csv(n));
    let out_one = dir.subdir("one");
    let out_two = dir.subdir("two");
    for out in [&out_one, &out_two] {
        let output = run(&[
            "combine",
            "--experts",
            experts.to_str().unwrap(),
            "--obs",
            obs.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--methods",
            "naive,ewag,boag-p-smooth",
        ]);
        assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    }
    for name in [
        "combined_naive.csv",
        "combined_ewag.csv",
        "combined_boag-p-smooth.csv",
        "weights_ewag.csv",
        "loss.csv",
    ] {
        assert_eq!(
            read(&out_one.join(name)),
            read(&out_two.join(name)),
            "{name} differs between reruns"
        );
    }
}

#[test]
fn simulate_static_writes_expected_tables() {
    let dir = TempDir::new();
    let out = dir.subdir("out");
    let output = run(&[
        "simulate",
        "--dgp",
        "static",
        "--reps",
        "2",
        "--horizons",
        "8,16",
        "--seed",
        "7",
        "--floor-mc",
        "1000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));

    let results = read(&out.join("results.csv"));
    let lines: Vec<&str> = results.lines().collect();
    assert_eq!(
        lines[0],
        "config,T,crps_mean,crps_sd,crps_se,ql_mean,ql_dist_mean"
    );
    // Five smoothing-study configs at two horizons each.
    assert_eq!(lines.len(), 1 + 5 * 2);

    let plot = read(&out.join("plot_data.csv"));
    assert!(plot.lines().any(|l| l.contains(",ql_dist:0.25,")));
    let resolved = read(&out.join("resolved_config.json"));
    let json: serde_json::Value = serde_json::from_str(&resolved).unwrap();
    assert_eq!(json["workflow"], "simulate");
    assert_eq!(json["spec"]["seed"], 7);
}

#[test]
fn simulate_drifting_emits_four_variants_with_auto_forget() {
    let dir = TempDir::new();
    let out_auto = dir.subdir("auto");
    let out_none = dir.subdir("none");
    for (out, forget) in [(&out_auto, "auto"), (&out_none, "none")] {
        let output = run(&[
            "simulate",
            "--dgp",
            "drifting",
            "--reps",
            "1",
            "--T",
            "16",
            "--seed",
            "3",
            "--forget-grid",
            forget,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    }
    let auto_lines = read(&out_auto.join("results.csv")).lines().count();
    let none_lines = read(&out_none.join("results.csv")).lines().count();
    assert_eq!(auto_lines, 1 + 4);
    assert_eq!(none_lines, 1 + 2);

    let header = read(&out_auto.join("results.csv"))
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(header, "config,T,crps_mean,crps_sd,crps_se,ql_mean");
}

#[test]
fn simulate_reruns_are_byte_identical() {
    let dir = TempDir::new();
    let out_one = dir.subdir("one");
    let out_two = dir.subdir("two");
    for out in [&out_one, &out_two] {
        let output = run(&[
            "simulate",
            "--dgp",
            "static",
            "--reps",
            "2",
            "--horizons",
            "8",
            "--seed",
            "11",
            "--floor-mc",
            "500",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    }
    for name in ["results.csv", "plot_data.csv"] {
        assert_eq!(
            read(&out_one.join(name)),
            read(&out_two.join(name)),
            "{name} differs between identically seeded runs"
        );
    }
}

fn forecast_csv(times: usize, offset: impl Fn(usize) -> f64) -> String {
    let mut text = String::from("time,probability,value\n");
    for t in 0..times {
        for p in PROBS {
            text.push_str(&format!("t{t},{p},{}\n", obs_value(t) + offset(t)));
        }
    }
    text
}

#[test]
fn evaluate_scores_compares_and_marks_degenerate_cells() {
    let dir = TempDir::new();
    let n = 40;
    let obs = dir.file("obs.csv", &obs_csv(n));
    // "good" hits every observation exactly; "bad" sits above by a
    // time-varying margin so the loss differential is non-degenerate.
    let good = dir.file("good.csv", &forecast_csv(n, |_| 0.0));
    let bad = dir.file(
        "bad.csv",
        &forecast_csv(n, |t| 1.0 + 0.3 * ((t % 3) as f64)),
    );
    let out = dir.subdir("out");
    let output = run(&[
        "evaluate",
        "--obs",
        obs.to_str().unwrap(),
        "--forecast",
        &format!("good={}", good.display()),
        "--forecast",
        &format!("bad={}", bad.display()),
        "--reference",
        "bad",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));

    let table = read(&out.join("crps_table.csv"));
    let mut crps = std::collections::HashMap::new();
    for line in table.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        crps.insert(fields[0].to_string(), fields[1].parse::<f64>().unwrap());
    }
    assert_eq!(crps["good"], 0.0);
    assert!(crps["bad"] > crps["good"]);

    // The dominant method accumulates a negative difference to the
    // reference.
    let cum = read(&out.join("cumulative_difference.csv"));
    let last = cum.lines().last().unwrap();
    assert!(last.starts_with(&format!("t{},good,", n - 1)), "{last}");
    let final_diff: f64 = last.rsplit(',').next().unwrap().parse().unwrap();
    assert!(final_diff < 0.0, "dominant method should improve: {last}");

    let matrix = read(&out.join("dm_matrix.csv"));
    let lines: Vec<&str> = matrix.lines().collect();
    assert_eq!(lines[0], "method,good,bad");
    let good_row: Vec<&str> = lines[1].split(',').collect();
    let bad_row: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(good_row[1], "NA");
    assert_eq!(bad_row[2], "NA");
    let p_good_better: f64 = good_row[2].parse().unwrap();
    let p_bad_better: f64 = bad_row[1].parse().unwrap();
    assert!(p_good_better < 0.01, "good vs bad p = {p_good_better}");
    assert!(p_bad_better > 0.99, "bad vs good p = {p_bad_better}");

    let profile = read(&out.join("ql_profile.csv"));
    assert_eq!(
        profile.lines().next().unwrap(),
        "probability,method,mean_loss"
    );
    assert_eq!(profile.lines().count(), 1 + PROBS.len() * 2);
}

#[test]
fn evaluate_requires_two_forecasts() {
    let dir = TempDir::new();
    let obs = dir.file("obs.csv", &obs_csv(4));
    let good = dir.file("good.csv", &forecast_csv(4, |_| 0.0));
    let out = dir.subdir("out");
    let output = run(&[
        "evaluate",
        "--obs",
        obs.to_str().unwrap(),
        "--forecast",
        &format!("good={}", good.display()),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("at least two"));
}

#[test]
fn evaluate_consumes_combine_output_directly() {
    let dir = TempDir::new();
    let n = 10;
    let obs = dir.file("obs.csv", &obs_csv(n));
    let experts = dir.file("experts.csv", &experts_csv(n));
    let combine_out = dir.subdir("combine");
    let output = run(&[
        "combine",
        "--experts",
        experts.to_str().unwrap(),
        "--obs",
        obs.to_str().unwrap(),
        "--out",
        combine_out.to_str().unwrap(),
        "--methods",
        "naive,boag-pointwise",
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));

    let eval_out = dir.subdir("eval");
    let naive = combine_out.join("combined_naive.csv");
    let boag = combine_out.join("combined_boag-pointwise.csv");
    let output = run(&[
        "evaluate",
        "--obs",
        obs.to_str().unwrap(),
        "--forecast",
        &format!("naive={}", naive.display()),
        "--forecast",
        &format!("boag-pointwise={}", boag.display()),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    let table = read(&eval_out.join("crps_table.csv"));
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(1).unwrap().starts_with("naive,"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new();
    let n = 4;
    let obs = dir.file("obs.csv", &obs_csv(n));
    let experts = dir.file("experts.csv", &experts_csv(n));
    let out = dir.subdir("out");
    let config = dir.file(
        "config.json",
        &format!(
            "{{\"experts\": \"{}\", \"obs\": \"{}\", \"out\": \"{}\", \
             \"methods\": [\"naive\"]}}",
            experts.display(),
            obs.display(),
            out.display()
        ),
    );
    let output = run(&[
        "combine",
        "--config",
        config.to_str().unwrap(),
        "--methods",
        "boag-pointwise",
    ]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    assert!(out.join("combined_boag-pointwise.csv").exists());
    assert!(!out.join("combined_naive.csv").exists());

    let resolved: serde_json::Value =
        serde_json::from_str(&read(&out.join("resolved_config.json"))).unwrap();
    assert_eq!(resolved["methods"], serde_json::json!(["boag-pointwise"]));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = TempDir::new();
    let config = dir.file("config.json", "{\"methodz\": [\"naive\"]}");
    let out = dir.subdir("out");
    let output = run(&[
        "combine",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("config"));
}
