use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const DISCRETE_SCALE: &str =
    r#"{"kind": "random", "mu_lo": 0.08, "mu_hi": 0.15, "n_points": 60, "seed": 3}"#;

fn tsfb(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsfb"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup(files: &[(&str, &str)]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in files {
        std::fs::write(dir.path().join(name), text).unwrap();
    }
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: PathBuf) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect()
}

#[test]
fn deadbeat_gain_passes() {
    let dir = setup(&[
        (
            "z.json",
            r#"{"kind": "uniform", "h": 1.0, "k_min": 0, "k_max": 10}"#,
        ),
        ("int.json", r#"{"A_hat": [[0.0]], "B_hat": [[1.0]]}"#),
    ]);
    let o = tsfb(
        dir.path(),
        &[
            "gain",
            "--scale",
            "z.json",
            "--model",
            "int.json",
            "--k",
            "1",
            "--alpha",
            "0.5",
            "--output-dir",
            "out",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(dir.path().join("out/gains.csv"));
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r[1] == -1.0));
    let cert: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/certificate.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(cert["pass"], true);
}

#[test]
fn uncontrollable_model_exits_1() {
    let dir = setup(&[
        ("tb.json", DISCRETE_SCALE),
        (
            "b0.json",
            r#"{"A_hat": [[0, 1], [0, -0.15]], "B_hat": [[0], [0]]}"#,
        ),
    ]);
    let o = tsfb(
        dir.path(),
        &[
            "gain",
            "--scale",
            "tb.json",
            "--model",
            "b0.json",
            "--output-dir",
            "out",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not invertible"), "{}", stderr(&o));
    assert!(!dir.path().join("out/gains.csv").exists());
}

#[test]
fn motor_gain_schedule_has_l_minus_k_entries() {
    let dir = setup(&[("tb.json", DISCRETE_SCALE)]);
    let o = tsfb(
        dir.path(),
        &[
            "gain",
            "--scale",
            "tb.json",
            "--k",
            "5",
            "--output-dir",
            "out",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(csv_rows(dir.path().join("out/gains.csv")).len(), 55);
}

#[test]
fn gain_outputs_are_deterministic() {
    let dir = setup(&[("tb.json", DISCRETE_SCALE)]);
    for out in ["a", "b"] {
        let o = tsfb(
            dir.path(),
            &["gain", "--scale", "tb.json", "--output-dir", out],
        );
        assert_eq!(o.status.code(), Some(0));
    }
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/gains.csv"), read("b/gains.csv"));
    assert_eq!(read("a/certificate.json"), read("b/certificate.json"));
    let names: Vec<_> = std::fs::read_dir(dir.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names.len(), 2, "{names:?}");
}

#[test]
fn config_file_matches_flags() {
    let dir = setup(&[
        (
            "run.json",
            r#"{"scale": {"kind": "random", "mu_lo": 0.08, "mu_hi": 0.15, "n_points": 60, "seed": 3},
            "alpha": 0.1, "window": {"k": 5}, "output_dir": "cfg"}"#,
        ),
        ("tb.json", DISCRETE_SCALE),
    ]);
    assert_eq!(
        tsfb(dir.path(), &["gain", "--config", "run.json"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        tsfb(
            dir.path(),
            &[
                "gain",
                "--scale",
                "tb.json",
                "--alpha",
                "0.1",
                "--k",
                "5",
                "--output-dir",
                "flags"
            ]
        )
        .status
        .code(),
        Some(0)
    );
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("cfg/gains.csv"), read("flags/gains.csv"));
}

#[test]
fn zero_run_is_all_zero() {
    let dir = setup(&[("tb.json", DISCRETE_SCALE)]);
    let o = tsfb(
        dir.path(),
        &[
            "simulate",
            "--scale",
            "tb.json",
            "--amplitude",
            "0",
            "--output-dir",
            "out",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(dir.path().join("out/trajectory.csv"));
    assert_eq!(rows.len(), 56);
    assert!(rows.iter().all(|r| r[1..].iter().all(|&v| v == 0.0)));
}

#[test]
fn motor_step_settles_at_the_fixed_point() {
    let dir = setup(&[(
        "hz.json",
        r#"{"kind": "uniform", "h": 0.1, "k_min": 0, "k_max": 200}"#,
    )]);
    let o = tsfb(
        dir.path(),
        &["simulate", "--scale", "hz.json", "--output-dir", "out"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/metrics.json")).unwrap(),
    )
    .unwrap();
    assert!(m["settling_time"].as_f64().unwrap() > 0.0);
    // constant gain: the position rests where K_11 x + 2 = 0
    let gains = {
        let o = tsfb(
            dir.path(),
            &["gain", "--scale", "hz.json", "--output-dir", "out"],
        );
        assert_eq!(o.status.code(), Some(0));
        csv_rows(dir.path().join("out/gains.csv"))
    };
    let k11 = gains.last().unwrap()[1];
    let pos = m["final_state"][0].as_f64().unwrap();
    assert!(
        (pos + 2.0 / k11).abs() < 1e-6 * pos.abs(),
        "{pos} vs {}",
        -2.0 / k11
    );
}

#[test]
fn inadmissible_rate_names_the_node() {
    let dir = setup(&[("tb.json", DISCRETE_SCALE)]);
    let o = tsfb(
        dir.path(),
        &["simulate", "--scale", "tb.json", "--alpha", "10"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at t = "), "{}", stderr(&o));
}

#[test]
fn sweep_grid_and_failures() {
    let dir = setup(&[("tb.json", DISCRETE_SCALE)]);
    let o = tsfb(
        dir.path(),
        &[
            "sweep",
            "--scale",
            "tb.json",
            "--k-min",
            "4",
            "--k-max",
            "4",
            "--alpha-start",
            "0.1",
            "--alpha-stop",
            "0.1",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,alpha,settling_time,max_gain_norm,status");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("4,"));

    let o = tsfb(
        dir.path(),
        &[
            "sweep", "--scale", "tb.json", "--k-min", "70", "--k-max", "71",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 40);
    assert!(csv.lines().skip(1).all(|l| l.ends_with("out_of_range")));
}

#[test]
fn verify_reports_and_detects_mutation() {
    let dir = tempfile::tempdir().unwrap();
    let o = tsfb(dir.path(), &["verify", "--suite", "all"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["passed"], true);

    let o = tsfb(
        dir.path(),
        &["verify", "--suite", "gramian", "--output-dir", "rep"],
    );
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rep/verify.json")).unwrap())
            .unwrap();
    let identity = report["results"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["name"] == "identity_motor_discrete")
        .unwrap();
    assert!(identity["residual"].as_f64().unwrap() <= 1e-6);

    let o = tsfb(
        dir.path(),
        &["verify", "--suite", "calculus", "--perturb-exp", "1e-6"],
    );
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let laws = report["results"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["name"] == "exponential_group_laws")
        .unwrap();
    assert_eq!(laws["passed"], false);

    assert_eq!(
        tsfb(dir.path(), &["verify", "--suite", "bogus"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn thread_cap_is_honoured_and_validated() {
    let dir = setup(&[("tb.json", DISCRETE_SCALE)]);
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_tsfb"))
            .current_dir(dir.path())
            .env("TSFB_THREADS", threads)
            .args(["gain", "--scale", "tb.json", "--output-dir", threads])
            .output()
            .unwrap()
    };
    assert_eq!(run("1").status.code(), Some(0));
    assert_eq!(run("0").status.code(), Some(1));
    let default = tsfb(
        dir.path(),
        &["gain", "--scale", "tb.json", "--output-dir", "all"],
    );
    assert_eq!(default.status.code(), Some(0));
    assert_eq!(
        std::fs::read(dir.path().join("1/gains.csv")).unwrap(),
        std::fs::read(dir.path().join("all/gains.csv")).unwrap()
    );
}

#[test]
fn missing_scale_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tsfb(dir.path(), &["gain"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no time scale"));
    let o = tsfb(dir.path(), &["gain", "--scale", "nope.json"]);
    assert_eq!(o.status.code(), Some(1));
}
