use serde_json::Value;
use std::io::Write;
use std::process::{Command, Output};

fn fblq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fblq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario(text: &str, suffix: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

fn run_json(text: &str, args: &[&str]) -> Value {
    let f = scenario(text, ".toml");
    let mut all = args.to_vec();
    all.extend(["--scenario", f.path().to_str().unwrap()]);
    let out = fblq(&all);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

const PAULI: &str = "[source]\npreset = \"pauli-eavesdrop\"\np = 0.05\n";

const IDENTICAL_PAIR: &str = r#"
[pair]
rho = [[[0.7, 0.0], [0.1, 0.2]], [[0.1, -0.2], [0.3, 0.0]]]
sigma = [[[0.7, 0.0], [0.1, 0.2]], [[0.1, -0.2], [0.3, 0.0]]]
"#;

const COMMUTING_PAIR: &str = r#"
[pair]
rho = [[[0.6, 0.0], [0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.3, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0], [0.1, 0.0]]]
sigma = [[[0.2, 0.0], [0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.5, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0], [0.3, 0.0]]]
"#;

const UNIFORM4: &str = r#"
[source]
probabilities = [0.25, 0.25, 0.25, 0.25]
states = [[[[1.0, 0.0]]], [[[1.0, 0.0]]], [[[1.0, 0.0]]], [[[1.0, 0.0]]]]
"#;

const TRIVIAL_B: &str = r#"
[source]
probabilities = [0.7, 0.1, 0.1, 0.1]
states = [[[[1.0, 0.0]]], [[[1.0, 0.0]]], [[[1.0, 0.0]]], [[[1.0, 0.0]]]]
"#;

const DETERMINISTIC: &str = r#"
[source]
probabilities = [1.0, 0.0]
states = [[[[0.5, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.5, 0.0]]], [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]]
"#;

#[test]
fn entropy_of_pauli_preset() {
    let v = run_json(PAULI, &["entropy"]);
    assert!((f(&v["source"]["h_x_given_b"]) - 0.713603).abs() < 1e-6);
    assert!((f(&v["source"]["lambda_b"]) - 19f64.log2()).abs() < 1e-9);
}

#[test]
fn entropy_of_identical_pair_is_zero() {
    let v = run_json(IDENTICAL_PAIR, &["entropy"]);
    assert!(f(&v["pair"]["d"]).abs() < 1e-12);
    assert!(f(&v["pair"]["v"]).abs() < 1e-12);
}

#[test]
fn entropy_of_commuting_pair_matches_sum() {
    let v = run_json(COMMUTING_PAIR, &["entropy"]);
    let (p, q) = ([0.6f64, 0.3, 0.1], [0.2f64, 0.5, 0.3]);
    let llr: Vec<f64> = p.iter().zip(&q).map(|(a, b)| (a / b).log2()).collect();
    let d: f64 = p.iter().zip(&llr).map(|(a, l)| a * l).sum();
    let v2: f64 = p.iter().zip(&llr).map(|(a, l)| a * (l - d).powi(2)).sum();
    assert!((f(&v["pair"]["d"]) - d).abs() < 1e-10);
    assert!((f(&v["pair"]["v"]) - v2).abs() < 1e-10);
}

#[test]
fn oneshot_dh_of_identical_pair() {
    let v = run_json(IDENTICAL_PAIR, &["oneshot", "--quantity", "dh", "--epsilon", "0.2"]);
    assert!((f(&v["value"]) - (1.0f64 / 0.8).log2()).abs() < 1e-6);
    assert_eq!(v["quantity"], "dh");
}

#[test]
fn oneshot_hmin_of_uniform_source() {
    let v = run_json(UNIFORM4, &["oneshot", "--quantity", "hmin", "--epsilon", "0"]);
    assert!((f(&v["value"]) - 2.0).abs() < 1e-6);
}

#[test]
fn oneshot_requires_quantity() {
    let f = scenario(PAULI, ".toml");
    let out = fblq(&["oneshot", "--epsilon", "0.1", "--scenario", f.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn hierarchy_single_instance_echoes_slacks() {
    let text = "[suite]\ninstance = { kind = \"generic\", dim = 2, seed = 7, eps = 0.3, delta = 0.1 }\n";
    let f = scenario(text, ".toml");
    let out = fblq(&["hierarchy", "--scenario", f.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "name,dims,seed,eps,delta,lhs,rhs,slack,pass");
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.ends_with(",true") && r.contains(",7,")));
}

#[test]
fn hierarchy_bad_seed_is_a_parse_error() {
    let text = "[suite]\ninstance = { kind = \"generic\", dim = 2, seed = \"7a\", eps = 0.3, delta = 0.1 }\n";
    let f = scenario(text, ".toml");
    let out = fblq(&["hierarchy", "--scenario", f.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 2") && err.contains("seed"), "{err}");

    let out = fblq(&["hierarchy", "--seed", "x"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn figure1_preset_is_deterministic() {
    let args = ["bounds", "--figure1", "--n-points", "6"];
    let a = fblq(&args);
    let b = fblq(&[&args[..], &["--sequential"]].concat());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let csv = String::from_utf8(a.stdout).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(9).map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0][0], 1e4);
    assert_eq!(rows[5][0], 1e8);
    let h = rows[0][6];
    assert!(rows[0][4] <= 0.95 * h);
    assert!((rows[5][3] / h - 1.0).abs() < 0.01 && (rows[5][4] / h - 1.0).abs() < 0.01);
    for w in rows.windows(2) {
        assert!(w[1][3] >= w[0][3] && w[1][4] >= w[0][4] - 1e-9);
    }
}

#[test]
fn empty_n_range_writes_header_only() {
    let f = scenario(PAULI, ".toml");
    let out = fblq(&[
        "bounds", "--epsilon", "0.1", "--n-min", "100", "--n-max", "1000", "--n-points", "0", "--scenario",
        f.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.starts_with("n,lower_bits,upper_bits"));
}

#[test]
fn out_of_range_n_is_flagged_not_fatal() {
    let f = scenario(PAULI, ".toml");
    let out = fblq(&["bounds", "--task", "compression", "--epsilon", "0.1", "--n-min", "10", "--n-max", "1000000", "--n-points", "3",
        "--scenario", f.path().to_str().unwrap()]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    let flags: Vec<&str> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert!(flags[0].contains("vacuous"), "{flags:?}");
    assert_eq!(flags[2], "none");
}

#[test]
fn simulate_trivial_b_compression_matches_brute_force() {
    let v = run_json(
        TRIVIAL_B,
        &["simulate", "--task", "compression", "--epsilon", "0.35", "--eta", "0.1", "--samples", "20000", "--seed", "3"],
    );
    assert_eq!(v["verified"], true);
    assert_eq!(v["brute_force_m"], 0);
    assert!(f(&v["perr"]) <= 0.35);
    assert!(f(&v["bounds"]["lower"]) <= 0.0);
    assert!(f(&v["monte_carlo"]["estimate"]) <= 0.35 + 5.0 * f(&v["monte_carlo"]["stderr"]));
}

#[test]
fn simulate_deterministic_source_extracts_nothing() {
    let v = run_json(DETERMINISTIC, &["simulate", "--task", "extraction", "--epsilon", "0.3"]);
    assert_eq!(v["length"], 0);
    assert_eq!(v["verified"], true);
    assert!(f(&v["dsec"]) <= 0.3);
}

#[test]
fn simulate_rejects_oversize_source() {
    let probs = vec!["0.03125"; 32].join(", ");
    let states = vec!["[[[1.0, 0.0]]]"; 32].join(", ");
    let text = format!("[source]\nprobabilities = [{probs}]\nstates = [{states}]\n");
    let f = scenario(&text, ".toml");
    let out = fblq(&["simulate", "--epsilon", "0.3", "--scenario", f.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("limit"));
}

#[test]
fn json_scenario_is_accepted() {
    let file = scenario(r#"{"source": {"preset": "pauli-eavesdrop", "p": 0.05}}"#, ".json");
    let out = fblq(&["entropy", "--scenario", file.path().to_str().unwrap()]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((f(&v["source"]["h_x_given_b"]) - 0.713603).abs() < 1e-6);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(fblq(&["nonsense"]).status.code(), Some(1));
    assert_eq!(fblq(&["entropy"]).status.code(), Some(1));
    assert_eq!(fblq(&["bounds", "--figure1", "--epsilon", "2"]).status.code(), Some(1));
    assert_eq!(fblq(&["--help"]).status.code(), Some(0));
}
