use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dipolescope(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dipolescope"))
        .args(args)
        .current_dir(dir)
        .env_remove("DIPOLESCOPE_DATA")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn rows(o: &Output) -> Vec<serde_json::Value> {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

fn value(rows: &[serde_json::Value], quantity: &str) -> f64 {
    rows.iter()
        .find(|r| r["quantity"] == quantity)
        .unwrap_or_else(|| panic!("no {quantity}"))["value"]
        .as_f64()
        .unwrap()
}

fn only_subdir(root: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

#[test]
fn run_time_of_flight_reports_temperature_and_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let o = dipolescope(
        &[
            "run",
            "--scenario",
            "time_of_flight",
            "--out",
            "out",
            "--format",
            "json",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let summary = report["summary"].as_array().unwrap();
    let t = summary.iter().find(|e| e["quantity"] == "T").unwrap();
    assert_eq!(t["unit"], "uK");
    assert!((t["value"].as_f64().unwrap() - 15.0).abs() < 4.0 * t["error"].as_f64().unwrap());
    assert!(summary
        .iter()
        .any(|e| e["quantity"] == "nu_r" && e["unit"] == "Hz"));
    let run_dir = only_subdir(&dir.path().join("out"));
    for file in ["scenario.json", "report.json", "time_of_flight.csv"] {
        assert!(run_dir.join(file).is_file(), "missing {file}");
    }
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = dipolescope(
            &[
                "run",
                "--scenario",
                "breathing",
                "--seed",
                "42",
                "--out",
                out,
            ],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let (a, b) = (
        only_subdir(&dir.path().join("a")),
        only_subdir(&dir.path().join("b")),
    );
    for file in ["scenario.json", "report.json", "breathing.csv"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file} differs"
        );
    }
    let scenario = fs::read_to_string(a.join("scenario.json")).unwrap();
    assert!(scenario.contains("\"seed\": 42"), "{scenario}");
}

#[test]
fn scenario_file_with_unknown_key_exits_1_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("s.json"),
        r#"{ "name": "losses", "probe": { "power_uw": 0.3, "colour": 1 } }"#,
    )
    .unwrap();
    let o = dipolescope(&["run", "--scenario", "s.json", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
    assert!(
        !dir.path().join("out").exists(),
        "artifacts written for a rejected scenario"
    );
}

#[test]
fn malformed_scenario_reports_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("s.json"),
        "{\n  \"name\": \"losses\",\n  \"seed\": ,\n}\n",
    )
    .unwrap();
    let o = dipolescope(&["run", "--scenario", "s.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3 column"), "{}", stderr(&o));
}

#[test]
fn unknown_scenario_lists_built_ins() {
    let dir = tempfile::tempdir().unwrap();
    let o = dipolescope(&["run", "--scenario", "teleport"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("time_of_flight"), "{}", stderr(&o));
}

#[test]
fn physics_excitation_probability_for_reference_pulse() {
    let dir = tempfile::tempdir().unwrap();
    let o = dipolescope(
        &[
            "physics",
            "pe",
            "--detuning-mhz",
            "100",
            "--waist-um",
            "20",
            "--duration-us",
            "2",
            "--photons",
            "1.3e6",
            "--format",
            "json",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let p_e = value(&rows(&o), "p_e");
    assert!((p_e / 0.04 - 1.0).abs() <= 0.2, "p_e {p_e}");
}

#[test]
fn physics_depth_in_microkelvin() {
    let dir = tempfile::tempdir().unwrap();
    let o = dipolescope(
        &[
            "physics",
            "depth",
            "--power-w",
            "3.5",
            "--waist-um",
            "40",
            "--wavelength-nm",
            "1030",
            "--format",
            "json",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let depth = value(&rows(&o), "U/k_B");
    assert!((depth / 380.0 - 1.0).abs() <= 0.2, "depth {depth}");
}

#[test]
fn physics_strengths_sum_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = dipolescope(
        &["physics", "strengths", "--f", "4", "--format", "csv"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut reader = csv::Reader::from_reader(o.stdout.as_slice());
    let records: Vec<(String, f64)> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].parse().unwrap())
        })
        .collect();
    let nonzero: Vec<f64> = records
        .iter()
        .filter(|(q, v)| q.starts_with("S(") && *v > 0.0)
        .map(|r| r.1)
        .collect();
    assert_eq!(nonzero.len(), 3);
    assert!((nonzero.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn missing_parameter_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dipolescope(&["physics", "depth", "--power-w", "3.5"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--waist-um"), "{}", stderr(&o));
}

#[test]
fn fit_loss_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (gamma, beta, n0) = (21.0f64, 2.3e-4f64, 1e5f64);
    let mut text = String::from("t,y,sigma\n");
    for j in 0..40 {
        let t = 3.0 / gamma * (j as f64 / 39.0).powi(2);
        let n = n0 * (-gamma * t).exp() / (1.0 + beta * n0 * (1.0 - (-gamma * t).exp()) / gamma);
        text += &format!("{t},{n},10\n");
    }
    fs::write(dir.path().join("loss.csv"), text).unwrap();
    let o = dipolescope(
        &["fit", "loss", "--data", "loss.csv", "--format", "json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = rows(&o);
    assert!((value(&r, "Gamma") / gamma - 1.0).abs() < 1e-5);
    assert!((value(&r, "beta") / beta - 1.0).abs() < 1e-4);
}

#[test]
fn unconstrained_fit_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("t,y,sigma\n");
    for i in 0..30 {
        text += &format!("{},{},1\n", i as f64 * 1e-3, 1000 + i % 2);
    }
    fs::write(dir.path().join("flat.csv"), text).unwrap();
    let o = dipolescope(&["fit", "loss", "--data", "flat.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stdout(&o).contains("Gamma"));
}

#[test]
fn missing_data_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = dipolescope(&["fit", "breathing", "--data", "absent.csv"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("absent.csv"), "{}", stderr(&o));
}

#[test]
fn oracles_agree() {
    let dir = tempfile::tempdir().unwrap();
    let o = dipolescope(
        &[
            "oracle", "riccati", "--gamma", "47", "--beta", "1.1e-2", "--format", "json",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(value(&rows(&o), "max relative difference") < 1e-6);

    let o = dipolescope(
        &[
            "oracle",
            "ballistic",
            "--temperature-uk",
            "15",
            "--frequency-hz",
            "275",
            "--waist-um",
            "20",
            "--points",
            "5",
            "--samples",
            "200000",
            "--format",
            "json",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = rows(&o);
    for pair in r.chunks(2) {
        let (closed, mc) = (pair[0]["value"].as_f64().unwrap(), &pair[1]);
        let (v, e) = (mc["value"].as_f64().unwrap(), mc["error"].as_f64().unwrap());
        assert!((closed - v).abs() < 4.0 * e + 1e-9, "{closed} vs {v}({e})");
    }
}

#[test]
fn constants_file_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "physics",
        "pe",
        "--detuning-mhz",
        "100",
        "--waist-um",
        "20",
        "--duration-us",
        "2",
        "--photons",
        "1e6",
        "--format",
        "json",
    ];
    let base = value(&rows(&dipolescope(&args, dir.path())), "p_e");

    // Doubling the linewidth roughly quadruples the far-detuned absorption.
    let wide =
        "name = \"wide\"\nwavelength_nm = 852.347\nhwhm_mhz = 5.2\nmass_amu = 132.905451931\n\
        ground_j = \"1/2\"\nexcited_j = \"3/2\"\nnuclear_i = \"7/2\"\n\
        [ground_offsets_mhz]\n\"3\" = 0.0\n\"4\" = 9192.631770\n\
        [excited_offsets_mhz]\n\"2\" = -603.6047\n\"3\" = -452.38\n\"4\" = -251.09\n\"5\" = 0.0\n";
    fs::write(dir.path().join("wide.toml"), wide).unwrap();
    let run = |file: &str| {
        Command::new(env!("CARGO_BIN_EXE_dipolescope"))
            .args(args)
            .current_dir(dir.path())
            .env("DIPOLESCOPE_DATA", file)
            .output()
            .unwrap()
    };
    let o = run("wide.toml");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ratio = value(&rows(&o), "p_e") / base;
    assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");

    let o = run("missing.toml");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.toml"), "{}", stderr(&o));
}
