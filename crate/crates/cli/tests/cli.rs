use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use floc::signal_model::SignalParams;
use tempfile::TempDir;

fn floc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_floc"))
        .args(args)
        .current_dir(dir)
        .env_remove("FLOC_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn field<'a>(report: &'a str, key: &str) -> Option<&'a str> {
    report.lines().find_map(|l| {
        let (k, v) = l.split_once(" = ")?;
        (k == key).then_some(v)
    })
}

fn scenario(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, format!("# floc scenario v1\n{body}")).unwrap();
    path
}

fn values(csv: &Path) -> Vec<f64> {
    fs::read_to_string(csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

fn simulate(dir: &Path, body: &str, seed: u64) -> PathBuf {
    scenario(dir, "s.kv", body);
    let out = format!("sim_{seed}.csv");
    ok(&floc(&["simulate", "-s", "s.kv", "-o", &out, "--seed", &seed.to_string()], dir));
    dir.join(out)
}

#[test]
fn noiseless_line_raises_no_alarm() {
    let dir = TempDir::new().unwrap();
    let data: String = (0..600).map(|i| format!("{}\n", 3.0 + 0.25 * i as f64)).collect();
    fs::write(dir.path().join("line.csv"), data).unwrap();
    let report = ok(&floc(&["detect", "-i", "line.csv", "-k", "100", "--trace", "tr.csv"], dir.path()));
    assert_eq!(field(&report, "alarm"), Some("false"));
    let trace = fs::read_to_string(dir.path().join("tr.csv")).unwrap();
    assert_eq!(trace.lines().count(), 501);
    for line in trace.lines().skip(1) {
        let residual: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(residual.abs() < 1e-9, "{line}");
    }
}

#[test]
fn small_bin_jump_alarms_just_after_change() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "n = 700\nchange_index = 516\njump = 2\n", 5);
    let name = csv.file_name().unwrap().to_str().unwrap();
    let report = ok(&floc(
        &["detect", "-i", name, "-k", "500", "--jump-bin", "2", "--kink-bin", "none", "--rho-jump", "1.5"],
        dir.path(),
    ));
    assert_eq!(field(&report, "alarm_kind"), Some("jump"));
    let at: usize = field(&report, "alarm_index").unwrap().parse().unwrap();
    assert!((517..=530).contains(&at), "alarm at {at}");
}

#[test]
fn kink_only_detector_reports_kink() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "n = 3000\nchange_index = 1000\nslope_change = 0.5\n", 4);
    let name = csv.file_name().unwrap().to_str().unwrap();
    let report = ok(&floc(
        &["detect", "-i", name, "-k", "1000", "--jump-bin", "none", "--kink-bin", "10"],
        dir.path(),
    ));
    assert_eq!(field(&report, "alarm_kind"), Some("kink"));
    assert_eq!(field(&report, "rho_jump"), Some("inf"));
}

#[test]
fn calibration_file_feeds_detect_reproducibly() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("spec.kv"),
        "# floc calibration-spec v1\nreplications = 400\nhorizon = 300\nk = 200\nmaster_seed = 9\n",
    )
    .unwrap();
    let a = ok(&floc(&["calibrate", "-s", "spec.kv", "-o", "a.kv"], dir.path()));
    assert!(a.is_empty());
    ok(&floc(&["calibrate", "-s", "spec.kv", "-o", "b.kv"], dir.path()));
    let cal = fs::read(dir.path().join("a.kv")).unwrap();
    assert_eq!(cal, fs::read(dir.path().join("b.kv")).unwrap());

    let text = String::from_utf8(cal).unwrap();
    let fa: f64 = field(&text, "empirical_fa").unwrap().parse().unwrap();
    assert!(fa <= 0.5 && fa > 0.4, "{fa}");

    let csv = simulate(dir.path(), "n = 800\nchange_index = 500\njump = 2\n", 5);
    let name = csv.file_name().unwrap().to_str().unwrap();
    let first = ok(&floc(&["detect", "-i", name, "-k", "200", "-c", "a.kv"], dir.path()));
    let second = ok(&floc(&["detect", "-i", name, "-k", "200", "-c", "a.kv"], dir.path()));
    assert_eq!(first, second);
    assert_eq!(field(&first, "rho_jump"), field(&text, "rho_jump"));
}

#[test]
fn noiseless_simulation_matches_signal() {
    let dir = TempDir::new().unwrap();
    let body = "n = 200\ntau = 0.3\nalpha_minus = 1\nalpha_plus = 2\nbeta_minus = -1\nbeta_plus = 4\nnoise = gaussian:0\n";
    let csv = simulate(dir.path(), body, 1);
    let theta = SignalParams::new(0.3, 1.0, 2.0, -1.0, 4.0);
    let got = values(&csv);
    assert_eq!(got.len(), 200);
    for (i, v) in got.iter().enumerate() {
        let want = theta.value_at((i + 1) as f64 / 200.0);
        assert!((v - want).abs() <= 1e-12, "{i}: {v} vs {want}");
    }
    let truth = fs::read_to_string(dir.path().join("sim_1.csv.truth")).unwrap();
    assert!(truth.starts_with("# floc truth v1"));
    assert_eq!(field(&truth, "change_index"), Some("60"));
}

#[test]
fn simulation_is_seed_deterministic_and_round_trips() {
    let dir = TempDir::new().unwrap();
    let body = "n = 300\nchange_index = 150\njump = 1\nnoise = t:3\n";
    let a = fs::read(simulate(dir.path(), body, 8)).unwrap();
    scenario(dir.path(), "s.kv", body);
    ok(&floc(&["simulate", "-s", "s.kv", "-o", "again.csv", "--seed", "8"], dir.path()));
    assert_eq!(a, fs::read(dir.path().join("again.csv")).unwrap());
    assert_ne!(a, fs::read(simulate(dir.path(), body, 9)).unwrap());

    // The detector reads the simulated file back at full precision.
    let report = ok(&floc(&["detect", "-i", "sim_8.csv", "-k", "100", "--trace", "tr.csv"], dir.path()));
    assert_eq!(field(&report, "observations"), Some("300"));
    let sim = values(&dir.path().join("sim_8.csv"));
    let trace = fs::read_to_string(dir.path().join("tr.csv")).unwrap();
    for line in trace.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let index: usize = cells[0].parse().unwrap();
        let obs: f64 = cells[1].parse().unwrap();
        assert_eq!(obs, sim[index - 1]);
    }
}

#[test]
fn jump_of_two_alarms_after_the_change() {
    let dir = TempDir::new().unwrap();
    let mut late = 0;
    for seed in 0..100u64 {
        let csv = simulate(dir.path(), "n = 1500\nchange_index = 1010\njump = 2\n", seed);
        let name = csv.file_name().unwrap().to_str().unwrap();
        let report = ok(&floc(&["detect", "-i", name, "-k", "1000"], dir.path()));
        if let Some(at) = field(&report, "alarm_index") {
            if at.parse::<usize>().unwrap() > 1010 {
                late += 1;
            }
        }
    }
    assert!(late >= 95, "{late}/100 alarms after the change");
}

#[test]
fn trace_is_faithful_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "n = 1500\nchange_index = 1200\njump = 1.5\n", 21);
    let name = csv.file_name().unwrap().to_str().unwrap();
    let report = ok(&floc(&["detect", "-i", name, "-k", "1000", "--trace", "a.csv"], dir.path()));
    ok(&floc(&["detect", "-i", name, "-k", "1000", "--trace", "b.csv"], dir.path()));
    let a = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(dir.path().join("b.csv")).unwrap());

    let rows: Vec<Vec<&str>> = a.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let last = rows.last().unwrap();
    assert_eq!(last[7], "true");
    assert_eq!(Some(last[0]), field(&report, "alarm_index"));
    assert_eq!(Some(last[8]), field(&report, "alarm_kind"));
    assert!(rows[..rows.len() - 1].iter().all(|r| r[7] == "false"));
    let (j, k): (f64, f64) = (last[3].parse().unwrap(), last[4].parse().unwrap());
    assert!(j > 0.687 || k > 0.05);
}

#[test]
fn two_column_input_with_split_time() {
    let dir = TempDir::new().unwrap();
    let mut data = String::from("time,value\n");
    for i in 0..400 {
        let v = if i < 300 { 0.0 } else { 5.0 };
        data.push_str(&format!("{},{}\n", 1000 + i, v));
    }
    fs::write(dir.path().join("d.csv"), data).unwrap();
    let report = ok(&floc(&["detect", "-i", "d.csv", "--split-time", "1199"], dir.path()));
    assert_eq!(field(&report, "k"), Some("200"));
    let at: usize = field(&report, "alarm_index").unwrap().parse().unwrap();
    assert!(at > 300);
    assert_eq!(field(&report, "alarm_time"), Some((999 + at).to_string().as_str()));
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("d.csv"), "1\n2\n3\n4\n").unwrap();
    for args in [
        vec!["experiment", "table9"],
        vec!["detect", "-i", "d.csv", "-k", "10"],
        vec!["detect", "-i", "d.csv", "-k", "2", "--jump-bin", "none", "--kink-bin", "none"],
        vec!["detect", "-i", "d.csv", "-k", "2", "--standardize", "--sigma", "2"],
    ] {
        let out = floc(&args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn input_errors_exit_three_with_line() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.csv"), "1.0\n2.0\nnan\n").unwrap();
    let out = floc(&["detect", "-i", "bad.csv", "-k", "2"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv:3:"));

    let out = floc(&["detect", "-i", "missing.csv", "-k", "2"], dir.path());
    assert_eq!(out.status.code(), Some(3));

    fs::write(dir.path().join("c.kv"), "# floc calibration v1\nrho_jump = 0.5\nrho_jump = 0.6\n").unwrap();
    fs::write(dir.path().join("d.csv"), "1\n2\n3\n4\n").unwrap();
    let out = floc(&["detect", "-i", "d.csv", "-k", "2", "-c", "c.kv"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("c.kv:3:"));
}

#[test]
fn table3_row_shape() {
    let dir = TempDir::new().unwrap();
    let out = floc(
        &[
            "experiment", "table3", "--bin", "15", "--replications", "3", "--cal-replications", "200", "--out-dir", "o",
        ],
        dir.path(),
    );
    let text = ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("wide"));
    assert!(text.lines().next().unwrap().contains("target_arl"));
    let csv = fs::read_to_string(dir.path().join("o/table3.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    // One (N = 15) row for each of jump, kink and both.
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.split(',').count() == 14));
    assert!(rows[1].starts_with("jump,15,1000,1000,"));
}

#[test]
fn rates_smoke_reports_slope() {
    let dir = TempDir::new().unwrap();
    let text = ok(&floc(
        &[
            "experiment", "rates", "--kind", "kink", "--n-grid", "1024,2048,4096,8192", "--replications", "2",
            "--out-dir", "o",
        ],
        dir.path(),
    ));
    assert!(text.contains("log-log slope"));
    assert!(dir.path().join("o/rates_kink.csv").exists());
}

#[test]
fn single_replication_flags_wide_intervals() {
    let dir = TempDir::new().unwrap();
    let out = floc(
        &["experiment", "types", "--replications", "1", "--cal-replications", "200", "--out-dir", "o"],
        dir.path(),
    );
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("confidence intervals are wide"));
}
