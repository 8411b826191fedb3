use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mfprod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfprod"))
        .args(args)
        .output()
        .expect("run mfprod")
}

fn ok(args: &[&str]) {
    let out = mfprod(args);
    assert!(
        out.status.success(),
        "mfprod {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_estimate_diagnose_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    let truth = dir.path().join("truth.csv");
    ok(&[
        "simulate",
        "--dgp",
        "po",
        "--n",
        "150",
        "--t",
        "10",
        "--seed",
        "3",
        "--out",
        s(&panel),
        "--truth-out",
        s(&truth),
        "--treat-share",
        "0.5",
        "--treat-start",
        "5",
    ]);
    let header = fs::read_to_string(&panel).unwrap();
    assert!(header.starts_with("firm,year,y,k,l,m,e,w"));
    assert_eq!(header.lines().count(), 1 + 1500);

    let report = dir.path().join("report.json");
    ok(&[
        "estimate",
        "--in",
        s(&panel),
        "--method",
        "proposed",
        "--out",
        s(&report),
    ]);
    let r = json(&report);
    assert_eq!(r["method"], "proposed");
    assert_eq!(r["n_obs"], 1500);
    let omega = dir.path().join("report.omega.csv");
    assert_eq!(r["omega_csv"], s(&omega));
    assert_eq!(fs::read_to_string(&omega).unwrap().lines().count(), 1501);

    let diag = dir.path().join("diagnostics.json");
    ok(&[
        "diagnose",
        "--in",
        s(&report),
        "--panel",
        s(&panel),
        "--out",
        s(&diag),
    ]);
    let d = json(&diag);
    assert_eq!(d["exclusion"]["per_input"].as_array().unwrap().len(), 3);
    assert_eq!(d["exclusion"]["wald_df"], 2);
    assert!(d["did"]["att_hat"].as_f64().unwrap().is_finite());

    let marginal = dir.path().join("marginal.json");
    ok(&[
        "diagnose",
        "--in",
        s(&report),
        "--panel",
        s(&panel),
        "--out",
        s(&marginal),
        "--case",
        "marginal",
        "--k-input",
        "m",
        "--l-input",
        "w",
    ]);
    assert_eq!(
        json(&marginal)["exclusion"]["per_input"][0]["identifies"],
        "k"
    );
}

#[test]
fn benchmark_methods() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    let truth = dir.path().join("truth.csv");
    ok(&[
        "simulate",
        "--dgp",
        "ar1",
        "--n",
        "80",
        "--t",
        "8",
        "--out",
        s(&panel),
        "--truth-out",
        s(&truth),
    ]);
    for method in ["acf", "gnr"] {
        let out = dir.path().join(format!("{method}.json"));
        ok(&[
            "estimate",
            "--in",
            s(&panel),
            "--method",
            method,
            "--out",
            s(&out),
        ]);
        assert_eq!(json(&out)["method"], method);
    }
    let out = dir.path().join("acfmod.json");
    let fail = mfprod(&[
        "estimate",
        "--in",
        s(&panel),
        "--method",
        "acf-mod",
        "--out",
        s(&out),
    ]);
    assert!(!fail.status.success());
    assert!(String::from_utf8_lossy(&fail.stderr).contains("--truth"));
    ok(&[
        "estimate",
        "--in",
        s(&panel),
        "--method",
        "acf-mod",
        "--truth",
        s(&truth),
        "--out",
        s(&out),
    ]);
    assert_eq!(json(&out)["method"], "acf-mod");

    // Diagnostics are only defined for the proposed estimator.
    let diag = dir.path().join("d.json");
    let gnr = dir.path().join("gnr.json");
    assert!(!mfprod(&[
        "diagnose",
        "--in",
        s(&gnr),
        "--panel",
        s(&panel),
        "--out",
        s(&diag)
    ])
    .status
    .success());
}

#[test]
fn block_c_with_grid_file() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    let grid = dir.path().join("grid.csv");
    let report = dir.path().join("r.json");
    ok(&[
        "simulate",
        "--dgp",
        "ar1",
        "--n",
        "120",
        "--t",
        "10",
        "--out",
        s(&panel),
    ]);
    fs::write(&grid, "rho_v,alpha\n0.3,0.4\n0.2,0.35\n").unwrap();
    ok(&[
        "estimate",
        "--in",
        s(&panel),
        "--blocks",
        "abc",
        "--grid-file",
        s(&grid),
        "--out",
        s(&report),
    ]);
    let r = json(&report);
    assert_eq!(r["settings"]["blocks"], "abc");
    assert_eq!(r["settings"]["grid_points"], 2);
    assert_eq!(
        r["diagnostics"]["block_c"]["j_profile"]
            .as_array()
            .unwrap()
            .len(),
        2
    );
}

#[test]
fn monte_carlo_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mc.json");
    fs::write(
        &cfg,
        r#"{"dgps": ["ar1"], "methods": ["proposed", "gnr"], "n_grid": [50], "t_grid": [6], "reps": 2}"#,
    )
    .unwrap();
    let out = dir.path().join("tables");
    ok(&["mc", "--config", s(&cfg), "--out", s(&out), "--jobs", "1"]);
    let csv = fs::read_to_string(out.join("mc.csv")).unwrap();
    assert!(csv.starts_with("dgp,method,parameter,N,T,bias,sd,rmse"));
    assert_eq!(csv.lines().count(), 1 + 6 + 5);
    assert!(out.join("mc.json").exists() && out.join("mc.md").exists());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let r = mfprod(&[
        "simulate",
        "--dgp",
        "nope",
        "--n",
        "5",
        "--t",
        "5",
        "--out",
        s(&out),
    ]);
    assert!(!r.status.success());
    let r = mfprod(&[
        "estimate",
        "--in",
        s(&dir.path().join("missing.csv")),
        "--out",
        s(&out),
    ]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("missing.csv"));
    let r = mfprod(&[
        "simulate",
        "--dgp",
        "ar1",
        "--n",
        "5",
        "--t",
        "5",
        "--treat-share",
        "0.5",
        "--out",
        s(&out),
    ]);
    assert!(!r.status.success());
}
