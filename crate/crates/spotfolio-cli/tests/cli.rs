//! End-to-end tests of the command-line binary: exit codes, stream
//! discipline, reproducibility, manifests, and the documented examples.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn spotfolio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spotfolio"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is UTF-8")
}

fn stderr_str(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is UTF-8")
}

fn assert_code(out: &Output, expected: i32) {
    assert_eq!(
        out.status.code(),
        Some(expected),
        "stdout:\n{}\nstderr:\n{}",
        stdout_str(out),
        stderr_str(out)
    );
}

fn json_stdout(out: &Output) -> serde_json::Value {
    serde_json::from_str(&stdout_str(out)).expect("stdout is a single JSON document")
}

fn write(path: &Path, contents: &str) {
    std::fs::write(path, contents).expect("test file writes");
}

/// Synthesizes a small deterministic market data set and returns the
/// catalog and traces paths.
fn synth_market_data(dir: &Path) -> (String, String) {
    let spec = dir.join("synth.toml");
    write(
        &spec,
        "market_count = 4\n\
         seed = 42\n\
         discount_model = \"mean-reverting\"\n\
         mean_fraction = 0.3\n\
         volatility = 0.02\n\
         reversion = 0.9\n\
         spike_rate = 0.2\n",
    );
    let data = dir.join("data");
    let out = spotfolio(&[
        "synth",
        "--spec",
        spec.to_str().unwrap(),
        "--duration",
        "86400",
        "--out-dir",
        data.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    (
        data.join("catalog.csv").to_string_lossy().into_owned(),
        data.join("traces.csv").to_string_lossy().into_owned(),
    )
}

// ---- Exit codes ----

#[test]
fn help_and_version_exit_zero() {
    let help = spotfolio(&["--help"]);
    assert_code(&help, 0);
    assert!(stdout_str(&help).contains("precedence"));
    let version = spotfolio(&["--version"]);
    assert_code(&version, 0);
    assert!(stdout_str(&version).contains("spotfolio"));
}

#[test]
fn unknown_flags_and_bad_values_are_usage_errors() {
    assert_code(&spotfolio(&["frontier", "--bogus"]), 1);
    assert_code(&spotfolio(&["nonsense"]), 1);
    let dir = TempDir::new().unwrap();
    let (catalog, traces) = synth_market_data(dir.path());
    let bad_alphas = spotfolio(&[
        "frontier",
        "--catalog",
        &catalog,
        "--traces",
        &traces,
        "--alphas",
        "3,1,2",
        "--out-dir",
        dir.path().join("f").to_str().unwrap(),
    ]);
    assert_code(&bad_alphas, 1);
    assert!(stderr_str(&bad_alphas).contains("ascending"));
}

#[test]
fn missing_input_files_are_input_errors() {
    let out = spotfolio(&[
        "stats",
        "--catalog",
        "/definitely/not/here.csv",
        "--traces",
        "/also/not/here.csv",
        "--format",
        "json",
    ]);
    assert_code(&out, 2);
    assert!(
        stderr_str(&out).contains("/definitely/not/here.csv"),
        "diagnostic names the offending path: {}",
        stderr_str(&out)
    );
    assert!(stdout_str(&out).is_empty(), "data stream stays clean on failure");
}

#[test]
fn hybrid_covariance_demands_an_explicit_bid() {
    let dir = TempDir::new().unwrap();
    let (catalog, traces) = synth_market_data(dir.path());
    let out = spotfolio(&[
        "stats",
        "--catalog",
        &catalog,
        "--traces",
        &traces,
        "--cov-kind",
        "hybrid",
        "--format",
        "json",
    ]);
    assert_code(&out, 1);
    assert!(stderr_str(&out).contains("--bid-multiple"));

    let with_bid = spotfolio(&[
        "stats",
        "--catalog",
        &catalog,
        "--traces",
        &traces,
        "--cov-kind",
        "hybrid",
        "--bid-multiple",
        "1.0",
        "--format",
        "json",
    ]);
    assert_code(&with_bid, 0);
}

#[test]
fn random_generation_without_a_seed_is_refused() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.toml");
    write(&spec, "market_count = 3\ndiscount_model = \"mean-reverting\"\n");
    let out = spotfolio(&[
        "synth",
        "--spec",
        spec.to_str().unwrap(),
        "--duration",
        "3600",
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_code(&out, 1);
    assert!(stderr_str(&out).contains("--seed"));

    let seeded = spotfolio(&[
        "synth",
        "--spec",
        spec.to_str().unwrap(),
        "--duration",
        "3600",
        "--seed",
        "9",
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_code(&seeded, 0);
}

// ---- Documented examples ----

#[test]
fn fixed_fraction_synth_prices_every_tick_at_the_discount() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.toml");
    // Fully deterministic: fixed discount, no random spikes — no seed needed.
    write(
        &spec,
        "market_count = 2\ndiscount_model = \"fixed\"\nfixed_fraction = 0.2\nspike_rate = 0.0\n",
    );
    let data = dir.path().join("data");
    let out = spotfolio(&[
        "synth",
        "--spec",
        spec.to_str().unwrap(),
        "--duration",
        "7200",
        "--out-dir",
        data.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let traces = std::fs::read_to_string(data.join("traces.csv")).unwrap();
    let mut rows = 0;
    for line in traces.lines().skip(1) {
        let price = line.split(',').nth(2).expect("timestamp,market_id,price");
        // On-demand price is 1.0, so every price is exactly the fraction.
        assert_eq!(price, "0.2", "row {line:?}");
        rows += 1;
    }
    assert!(rows > 0);
    let catalog = std::fs::read_to_string(data.join("catalog.csv")).unwrap();
    assert!(catalog.starts_with("market_id,zone,cpu_cores,mem_gb,on_demand_price\n"));
}

#[test]
fn default_frontier_grid_has_26_rows() {
    let dir = TempDir::new().unwrap();
    let (catalog, traces) = synth_market_data(dir.path());
    let fdir = dir.path().join("frontier");
    let out = spotfolio(&[
        "frontier",
        "--catalog",
        &catalog,
        "--traces",
        &traces,
        "--out-dir",
        fdir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let csv = std::fs::read_to_string(fdir.join("frontier.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 26, "header plus the 26-point default grid");
    assert!(lines[0].starts_with("alpha,expected_return,risk,"));
    assert!(lines[1].starts_with("0,"), "grid starts at alpha = 0");
}

#[test]
fn single_alpha_frontier_row_matches_the_portfolio_command() {
    let dir = TempDir::new().unwrap();
    let (catalog, traces) = synth_market_data(dir.path());

    let frontier = spotfolio(&[
        "frontier",
        "--catalog",
        &catalog,
        "--traces",
        &traces,
        "--alphas",
        "1.5",
        "--format",
        "json",
    ]);
    assert_code(&frontier, 0);
    let fdoc = json_stdout(&frontier);
    let points = fdoc["points"].as_array().unwrap();
    assert_eq!(points.len(), 1);

    let portfolio = spotfolio(&[
        "portfolio",
        "--catalog",
        &catalog,
        "--traces",
        &traces,
        "--alpha",
        "1.5",
        "--format",
        "json",
    ]);
    assert_code(&portfolio, 0);
    let pdoc = json_stdout(&portfolio);

    // The sweep solves to the optimality certificate while the single
    // solve may stop at the stall heuristic; the optima agree, the final
    // iterates only to solver tolerance.
    let point = &points[0];
    assert!(
        (point["expected_return"].as_f64().unwrap() - pdoc["expected_return"].as_f64().unwrap())
            .abs()
            < 1e-6
    );
    assert!((point["risk"].as_f64().unwrap() - pdoc["risk"].as_f64().unwrap()).abs() < 1e-6);
    let frontier_weights = point["weights"].as_array().unwrap();
    let portfolio_weights = pdoc["weights"].as_array().unwrap();
    assert_eq!(frontier_weights.len(), portfolio_weights.len());
    for (fw, pw) in frontier_weights.iter().zip(portfolio_weights) {
        assert!((fw.as_f64().unwrap() - pw["weight"].as_f64().unwrap()).abs() < 1e-6);
    }
}

#[test]
fn alpha_zero_portfolio_concentrates_on_one_market() {
    let dir = TempDir::new().unwrap();
    let (catalog, traces) = synth_market_data(dir.path());
    let pdir = dir.path().join("p");
    let out = spotfolio(&[
        "portfolio",
        "--catalog",
        &catalog,
        "--traces",
        &traces,
        "--alpha",
        "0",
        "--out-dir",
        pdir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let csv = std::fs::read_to_string(pdir.join("weights.csv")).unwrap();
    let weights: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let ones = weights.iter().filter(|w| **w == 1.0).count();
    let zeros = weights.iter().filter(|w| **w == 0.0).count();
    assert_eq!(ones, 1, "exactly one market takes the whole portfolio: {weights:?}");
    assert_eq!(zeros, weights.len() - 1);
}

#[test]
fn worked_allocation_example_is_exact() {
    // One market of 2-core / 7.5 GB servers; a (2 cpu, 10 GB) workload
    // needs ceil(max(2/2, 10/7.5)) = 2 servers, leaving exactly
    // (2 cpu, 5 GB) spare across them.
    let dir = TempDir::new().unwrap();
    let catalog = dir.path().join("catalog.csv");
    write(
        &catalog,
        "market_id,zone,cpu_cores,mem_gb,on_demand_price\nm0,z1,2,7.5,0.5\n",
    );
    let out = spotfolio(&[
        "allocate",
        "--catalog",
        catalog.to_str().unwrap(),
        "--weights",
        "m0=1.0",
        "--cpu",
        "2",
        "--mem",
        "10",
        "--format",
        "json",
    ]);
    assert_code(&out, 0);
    let doc = json_stdout(&out);

    let plan = &doc["plans"][0];
    assert_eq!(plan["markets"][0]["n_new_servers"], 2);

    let servers = doc["servers"].as_array().unwrap();
    assert_eq!(servers.len(), 2);
    let surplus_cpu: f64 = servers.iter().map(|s| s["surplus"]["cpu"].as_f64().unwrap()).sum();
    let surplus_mem: f64 = servers
        .iter()
        .map(|s| s["surplus"]["mem_gb"].as_f64().unwrap())
        .sum();
    assert_eq!(surplus_cpu, 2.0, "2 spare cores");
    assert_eq!(surplus_mem, 5.0, "5 spare GB");
}

#[test]
fn non_psd_matrix_file_is_repaired_with_a_warning() {
    let dir = TempDir::new().unwrap();
    let returns = dir.path().join("returns.json");
    let matrix = dir.path().join("matrix.json");
    write(&returns, r#"{"markets": ["a", "b"], "values": [0.5, 0.6]}"#);
    // Eigenvalues 3 and -1: indefinite on purpose.
    write(&matrix, r#"{"markets": ["a", "b"], "entries": [[1.0, 2.0], [2.0, 1.0]]}"#);
    let out = spotfolio(&[
        "portfolio",
        "--returns",
        returns.to_str().unwrap(),
        "--matrix",
        matrix.to_str().unwrap(),
        "--alpha",
        "0.5",
        "--format",
        "json",
    ]);
    assert_code(&out, 0);
    assert!(
        stderr_str(&out).contains("not positive semidefinite"),
        "repair warning goes to stderr: {}",
        stderr_str(&out)
    );
    let doc = json_stdout(&out);
    let total: f64 = doc["weights"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| w["weight"].as_f64().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9, "weights stay on the simplex");
}

#[test]
fn constraint_flags_are_rejected_in_matrix_mode() {
    let dir = TempDir::new().unwrap();
    let returns = dir.path().join("returns.json");
    let matrix = dir.path().join("matrix.json");
    write(&returns, r#"{"markets": ["a"], "values": [0.5]}"#);
    write(&matrix, r#"{"markets": ["a"], "entries": [[1.0]]}"#);
    let out = spotfolio(&[
        "portfolio",
        "--returns",
        returns.to_str().unwrap(),
        "--matrix",
        matrix.to_str().unwrap(),
        "--min-cpu",
        "4",
    ]);
    assert_code(&out, 1);
}

// ---- Reproducibility and stream discipline ----

#[test]
fn identical_runs_produce_byte_identical_outputs() {
    let dir = TempDir::new().unwrap();
    let scenario = dir.path().join("scenario.toml");
    write(
        &scenario,
        "seed = 11\n\
         duration_seconds = 172800\n\
         [synthetic]\n\
         market_count = 3\n\
         discount_model = \"mean-reverting\"\n\
         spike_rate = 0.1\n\
         [[applications]]\n\
         name = \"job\"\n\
         kind = \"batch-checkpoint\"\n\
         work_seconds = 7200\n\
         cpu = 4\n\
         mem_gb = 8\n\
         checkpoint_write_seconds = 60\n",
    );
    let args = [
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--format",
        "json",
    ];
    let first = spotfolio(&args);
    assert_code(&first, 0);
    let second = spotfolio(&args);
    assert_code(&second, 0);
    assert_eq!(first.stdout, second.stdout, "same manifest, same bytes");

    let reseeded = spotfolio(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--seed",
        "12",
        "--format",
        "json",
    ]);
    assert_code(&reseeded, 0);
    let doc = json_stdout(&reseeded);
    assert_eq!(doc["manifest"]["seed"], 12, "the flag overrides the file seed");
    assert_ne!(first.stdout, reseeded.stdout, "a different seed changes the run");
}

#[test]
fn diagnostics_stay_off_the_data_stream() {
    let dir = TempDir::new().unwrap();
    let (catalog, traces) = synth_market_data(dir.path());

    // JSON to stdout: the data stream is exactly one JSON document.
    let json_run = spotfolio(&[
        "stats",
        "--catalog",
        &catalog,
        "--traces",
        &traces,
        "--format",
        "json",
    ]);
    assert_code(&json_run, 0);
    json_stdout(&json_run);

    // File outputs: stdout is empty, stderr narrates the writes.
    let sdir = dir.path().join("stats");
    let csv_run = spotfolio(&[
        "stats",
        "--catalog",
        &catalog,
        "--traces",
        &traces,
        "--out-dir",
        sdir.to_str().unwrap(),
    ]);
    assert_code(&csv_run, 0);
    assert!(stdout_str(&csv_run).is_empty());
    assert!(stderr_str(&csv_run).contains("returns.csv"));
}

#[test]
fn stats_writes_three_tables_plus_manifest() {
    let dir = TempDir::new().unwrap();
    let (catalog, traces) = synth_market_data(dir.path());
    let sdir = dir.path().join("stats");
    let out = spotfolio(&[
        "stats",
        "--catalog",
        &catalog,
        "--traces",
        &traces,
        "--out-dir",
        sdir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    for name in ["returns.csv", "mttr.csv", "covariance.csv", "manifest.json"] {
        assert!(sdir.join(name).exists(), "{name} missing");
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sdir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["tool"], "spotfolio");
    assert_eq!(manifest["subcommand"], "stats");
    let inputs = manifest["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 2);
    for input in inputs {
        let digest = input["sha256"].as_str().unwrap();
        assert_eq!(digest.len(), 64);
        assert!(digest.chars().all(|c| c.is_ascii_hexdigit()));
    }
    assert_eq!(manifest["config"]["bid_multiple"], 1.0, "defaults are materialized");
}

#[test]
fn json_outputs_embed_their_manifest() {
    let dir = TempDir::new().unwrap();
    let (catalog, traces) = synth_market_data(dir.path());
    let out = spotfolio(&[
        "portfolio",
        "--catalog",
        &catalog,
        "--traces",
        &traces,
        "--format",
        "json",
    ]);
    assert_code(&out, 0);
    let doc = json_stdout(&out);
    assert_eq!(doc["manifest"]["subcommand"], "portfolio");
    assert_eq!(doc["manifest"]["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(doc["manifest"]["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn compare_reports_both_studies() {
    let dir = TempDir::new().unwrap();
    let scenario = dir.path().join("study.toml");
    write(
        &scenario,
        "seed = 1\n\
         duration_seconds = 172800\n\
         [synthetic]\n\
         market_count = 5\n\
         discount_model = \"fixed\"\n\
         fixed_fraction = 0.25\n\
         spike_rate = 0.0\n\
         [[synthetic.forced_spikes]]\n\
         market_id = \"m0\"\n\
         tick = 12\n\
         [[applications]]\n\
         name = \"job\"\n\
         kind = \"batch-checkpoint\"\n\
         work_seconds = 14400\n\
         cpu = 8\n\
         mem_gb = 16\n\
         checkpoint_write_seconds = 120\n",
    );
    let cdir = dir.path().join("cmp");
    let out = spotfolio(&[
        "compare",
        "--scenario",
        scenario.to_str().unwrap(),
        "--seeds",
        "1,2,3",
        "--ks",
        "1,3,5",
        "--out-dir",
        cdir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);

    let policies = std::fs::read_to_string(cdir.join("policies.csv")).unwrap();
    let mut lines = policies.lines();
    assert_eq!(
        lines.next().unwrap(),
        "policy,completions,mean_completion_seconds,mean_runtime_increase,mean_savings"
    );
    let labels: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["checkpoint+eager", "checkpoint+none", "restart+none"]);

    let diversity = std::fs::read_to_string(cdir.join("diversity.csv")).unwrap();
    // Header plus one row per (k, seed) cell.
    assert_eq!(diversity.lines().count(), 1 + 3 * 3);
}
