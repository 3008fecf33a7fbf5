use std::path::Path;
use std::process::{Command, Output};

use qmp::fixture;
use qmp::relay::network::NetworkFixture;
use qmp::relay::{generate_network, NetworkDims, Preset, ScenarioConfig};

const SCALAR_BUDGET: &str = r#"{"n":1,"r":1,
 "objective":{"a":{"rows":1,"cols":1,"re":[1]},"b":{"rows":1,"cols":1,"re":[-1]},"c":0,"d":{"rows":1,"cols":1,"re":[1]}},
 "inequalities":[{"a":{"rows":1,"cols":1,"re":[1]},"b":{"rows":1,"cols":1,"re":[0]},"c":-0.25,"d":{"rows":1,"cols":1,"re":[1]}}]}"#;

fn qmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmp"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn selftest_passes() {
    let o = qmp(&["--mode", "selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert_eq!(
        text.lines().filter(|l| l.starts_with("PASS")).count(),
        3,
        "{text}"
    );
}

#[test]
fn solve_qmp_reports_budget_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("p.json");
    std::fs::write(&input, SCALAR_BUDGET).unwrap();
    let out = dir.path().join("out");
    let o = qmp(&[
        "--mode",
        "solve-qmp",
        "--input",
        path_str(&input),
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("mu 1.000000000000"), "{text}");
    assert!(text.contains("x[0] 0.500000000000"), "{text}");
    let x = fixture::read_matrix(&out.join("x.json")).unwrap();
    assert!((x[(0, 0)].re - 0.5).abs() < 1e-10);
    assert!(out.join("diagnostic.json").exists());
}

#[test]
fn solver_failure_exits_nonzero_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("p.json");
    std::fs::write(&input, SCALAR_BUDGET).unwrap();
    let out = dir.path().join("out");
    let o = qmp(&[
        "--mode",
        "solve-qmp",
        "--input",
        path_str(&input),
        "--out",
        path_str(&out),
        "--path",
        "closed-form",
    ]);
    assert!(!o.status.success());
    let diag = std::fs::read_to_string(out.join("diagnostic.json")).unwrap();
    assert!(diag.contains("error"), "{diag}");
}

#[test]
fn design_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = qmp(&[
            "--mode",
            "design",
            "--trials",
            "3",
            "--seed",
            "4",
            "--max-iter",
            "30",
            "--out",
            path_str(&out),
        ]);
        assert!(o.status.success(), "{}", stdout(&o));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let summary = std::fs::read_to_string(a.join("summary.txt")).unwrap();
    assert_eq!(
        summary,
        std::fs::read_to_string(b.join("summary.txt")).unwrap()
    );
    assert!(summary.contains("trials 3"));
    let mean = summary
        .lines()
        .find(|l| l.starts_with("mean_final_mse"))
        .unwrap();
    let digits = mean
        .split_whitespace()
        .nth(1)
        .unwrap()
        .split('e')
        .next()
        .unwrap();
    assert_eq!(digits.chars().filter(char::is_ascii_digit).count(), 12);
    for seed in 4..7 {
        let name = format!("trace_{seed}.csv");
        assert_eq!(
            std::fs::read(a.join(&name)).unwrap(),
            std::fs::read(b.join(&name)).unwrap()
        );
    }
}

#[test]
fn design_accepts_network_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let net = generate_network(
        &ScenarioConfig::new(Preset::Downlink, NetworkDims::default()),
        1,
    )
    .unwrap();
    let input = dir.path().join("net.json");
    fixture::write_json(&input, &NetworkFixture::from(&net)).unwrap();
    let out = dir.path().join("out");
    let o = qmp(&[
        "--mode",
        "design",
        "--input",
        path_str(&input),
        "--trials",
        "2",
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(out.join("trace_0.csv").exists() && out.join("trace_1.csv").exists());
}

#[test]
fn bad_invocations_fail() {
    assert!(!qmp(&["--mode", "selftest", "--bogus"]).status.success());
    assert!(!qmp(&["--mode", "solve-qmp"]).status.success());
    assert!(!qmp(&["--mode", "design", "--tol", "0"]).status.success());
    assert!(!qmp(&["--mode", "design", "--dims", "2,2"]).status.success());
    assert!(
        !qmp(&["--mode", "solve-qmp", "--input", "/nonexistent/p.json"])
            .status
            .success()
    );
}
