use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], out: &Path, threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_radner-eq"));
    cmd.args(args).arg("--out").arg(out);
    match threads {
        Some(n) => cmd.env("RADNER_EQ_THREADS", n),
        None => cmd.env_remove("RADNER_EQ_THREADS"),
    };
    cmd.output().unwrap()
}

fn config(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

fn summary_value(dir: &Path, key: &str) -> String {
    read(dir, "summary.txt")
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")).map(str::to_string))
        .unwrap_or_else(|| panic!("no {key} in summary"))
}

fn csv(dir: &Path, file: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let text = read(dir, file);
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

const SMALL_MC: [&str; 4] = ["--set", "solver.paths=400", "--set", "solver.steps=16"];

#[test]
fn example_emits_seven_rows_and_the_expected_slope() {
    let dir = TempDir::new().unwrap();
    let o = run(&["example"], dir.path(), None);
    ok(&o);
    let (header, rows) = csv(dir.path(), "convergence.csv");
    assert_eq!(header, ["T", "t_policy", "l1_error", "slope_running"]);
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r.len() == 4 && r[1] == "at_zero"));
    let slope: f64 = summary_value(dir.path(), "fitted_slope").parse().unwrap();
    assert!((0.67..=0.83).contains(&slope), "{slope}");
    let last: f64 = rows[6][3].parse().unwrap();
    assert_eq!(last, slope);
    assert_eq!(rows[0][3], "nan");
}

#[test]
fn zero_endowments_give_a_zero_surface() {
    let dir = TempDir::new().unwrap();
    ok(&run(&["solve-quadratic", "--config", &config("zero.json")], dir.path(), None));
    let (header, rows) = csv(dir.path(), "lambda_surface.csv");
    assert_eq!(header, ["t", "y1", "lambda_1", "r"]);
    assert_eq!(rows.len(), 5 * 21);
    for r in &rows {
        assert_eq!(r[2].parse::<f64>().unwrap(), 0.0);
        assert_eq!(r[3].parse::<f64>().unwrap(), 0.0);
    }
    assert_eq!(summary_value(dir.path(), "r").parse::<f64>().unwrap(), 0.0);
    let (header, rows) = csv(dir.path(), "riccati_path.csv");
    assert_eq!(header, ["s", "investor", "alpha", "beta_1", "gamma_11", "t0_riccati"]);
    assert!(rows.iter().all(|r| r[5] == "nan"));
}

#[test]
fn surface_header_adapts_to_dimensions() {
    let dir = TempDir::new().unwrap();
    ok(&run(&["solve-quadratic", "--config", &config("quadratic_d2.json")], dir.path(), None));
    let (header, rows) = csv(dir.path(), "lambda_surface.csv");
    assert_eq!(header, ["t", "y1", "y2", "lambda_1", "r"]);
    assert_eq!(rows.len(), 5 * 81);
    let (header, rows) = csv(dir.path(), "riccati_path.csv");
    assert_eq!(header.len(), 3 + 2 + 4 + 1);
    assert_eq!(rows.len() % 2, 0);
}

#[test]
fn too_many_assets_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let o = run(
        &["solve-quadratic", "--config", &config("quadratic_d2.json"), "--set", "market.dim_assets=3"],
        dir.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("N ≤ D"));
}

#[test]
fn unknown_keys_and_bad_environment_are_config_errors() {
    let dir = TempDir::new().unwrap();
    let o = run(&["example", "--set", "solver.picard.tolerance=1"], dir.path(), None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tolerance"));
    let o = run(&["example"], dir.path(), Some("zero"));
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["example", "--set", "command=validate"], dir.path(), None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn riccati_blow_up_exits_two_with_the_pole_recorded() {
    let dir = TempDir::new().unwrap();
    let o = run(
        &[
            "solve-quadratic",
            "--config",
            &config("zero.json"),
            "--set",
            "market.maturity=1",
            "--set",
            "market.risk_aversions=[1.0]",
            "--set",
            "endowments=[{\"kind\":\"quadratic\",\"f\":0,\"h\":[0],\"j\":[[-1]]}]",
        ],
        dir.path(),
        None,
    );
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    // scalar pole at 1 / (2 a c² |j|)
    let (_, rows) = csv(dir.path(), "riccati_path.csv");
    let t0: f64 = rows[0][5].parse().unwrap();
    assert!((t0 - 0.5).abs() < 1e-3, "{t0}");
    assert!(summary_value(dir.path(), "status").starts_with("failed"));
}

#[test]
fn manifest_reruns_byte_identically() {
    let first = TempDir::new().unwrap();
    let mut args = vec!["validate", "--config"];
    let cfg = config("quadratic_d2.json");
    args.push(&cfg);
    args.extend(SMALL_MC);
    args.extend(["--seed", "7"]);
    ok(&run(&args, first.path(), None));
    let second = TempDir::new().unwrap();
    let manifest = first.path().join("manifest.json").to_string_lossy().into_owned();
    ok(&run(&["validate", "--config", &manifest], second.path(), None));
    assert_eq!(read(first.path(), "validation.csv"), read(second.path(), "validation.csv"));
    assert_eq!(summary_value(second.path(), "seed"), "7");

    let third = TempDir::new().unwrap();
    ok(&run(&["validate", "--config", &manifest, "--seed", "8"], third.path(), None));
    assert_ne!(read(first.path(), "validation.csv"), read(third.path(), "validation.csv"));
}

#[test]
fn thread_count_does_not_change_output() {
    let cfg = config("example.json");
    let mut args = vec!["validate", "--config", cfg.as_str()];
    args.extend(SMALL_MC);
    args.extend(["--set", "solver.picard.time_steps=12", "--set", "solver.picard.space_points=17"]);
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    ok(&run(&args, a.path(), Some("1")));
    ok(&run(&args, b.path(), Some("4")));
    assert_eq!(read(a.path(), "validation.csv"), read(b.path(), "validation.csv"));
    let (header, rows) = csv(a.path(), "validation.csv");
    assert_eq!(header, ["check", "investor", "param", "horizon", "estimate", "std_error", "t_stat", "samples"]);
    // 4 martingale horizons, 2 clearing rows, 4 probes, 1 covariance row
    assert_eq!(rows.len(), 11);
    assert_eq!(summary_value(a.path(), "pipeline"), "picard");
}

#[test]
fn lemma_suite_reports_bounds() {
    let dir = TempDir::new().unwrap();
    ok(&run(&["lemma-suite", "--set", "solver.lemma_draws=200", "--set", "solver.lemma_seeds=2"], dir.path(), None));
    assert_eq!(summary_value(dir.path(), "bounds_hold"), "true");
    let (_, rows) = csv(dir.path(), "validation.csv");
    assert_eq!(rows.len(), 10);
    for r in rows.iter().filter(|r| r[0].starts_with("bound_violations")) {
        assert_eq!(r[4].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn compare_taylor_first_order_rate() {
    let dir = TempDir::new().unwrap();
    ok(&run(
        &["compare-taylor", "--config", &config("cosine_taylor.json"), "--set", "solver.taylor_order=first"],
        dir.path(),
        None,
    ));
    let slope: f64 = summary_value(dir.path(), "fitted_slope").parse().unwrap();
    assert!((0.42..=0.58).contains(&slope), "{slope}");
    let (_, rows) = csv(dir.path(), "convergence.csv");
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r[1] == "sup_over_t"));
}

#[test]
fn solve_general_matches_riccati_on_quadratics() {
    let dir = TempDir::new().unwrap();
    let q = TempDir::new().unwrap();
    let cfg = config("quadratic_d2.json");
    ok(&run(&["solve-general", "--config", &cfg], dir.path(), None));
    ok(&run(&["solve-quadratic", "--config", &cfg], q.path(), None));
    let (_, a) = csv(dir.path(), "lambda_surface.csv");
    let (_, b) = csv(q.path(), "lambda_surface.csv");
    assert_eq!(a.len(), b.len());
    let worst = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x[3].parse::<f64>().unwrap() - y[3].parse::<f64>().unwrap()).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-3, "{worst}");
}
