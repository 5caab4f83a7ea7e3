use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mbcri::artifact::FitArtifact;
use mbcri::frontier::Hyperplane;
use mbcri::sim::{synthetic_industry, IndustrySpec};

fn mbcri(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbcri"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("MBCRI_THREADS")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `y = x1^0.3 x2^0.6` shrunk by a deterministic pattern of inefficiencies.
fn cobb_douglas_csv(dir: &Path, n: usize) -> PathBuf {
    let mut text = String::from("y,x1,x2\n");
    for i in 0..n {
        let k = 1.0 + (i * 7 % n) as f64 * 9.0 / n as f64;
        let l = 1.0 + (i * 11 % n) as f64 * 9.0 / n as f64;
        let u = 0.05 + 0.3 * ((i * 13 % 10) as f64 / 10.0);
        text += &format!("{},{k},{l}\n", k.powf(0.3) * l.powf(0.6) * (-u).exp());
    }
    let p = dir.join("data.csv");
    fs::write(&p, text).unwrap();
    p
}

fn read_csv(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn fit_once(dir: &Path, data: &Path, out: &str) -> Output {
    mbcri(&["fit", "--input", path(data), "--seed", "11", "--out-dir", path(&dir.join(out))])
}

#[test]
fn fit_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = cobb_douglas_csv(dir.path(), 30);
    let before = fs::read(&data).unwrap();
    for out in ["a", "b"] {
        let o = fit_once(dir.path(), &data, out);
        assert!(o.status.code() == Some(0) || o.status.code() == Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["posterior.json", "observations.csv", "manifest.json"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        if f == "manifest.json" {
            // Output paths differ by directory; the digest must not.
            let da: serde_json::Value = serde_json::from_slice(&a).unwrap();
            let db: serde_json::Value = serde_json::from_slice(&b).unwrap();
            assert_eq!(da["config_digest"], db["config_digest"]);
            assert_eq!(da["started"], 1700000000);
        } else {
            assert!(a == b, "{f} differs");
        }
    }
    assert_eq!(fs::read(&data).unwrap(), before);
    let rows = read_csv(&dir.path().join("a/observations.csv"));
    assert_eq!(rows.len(), 30);
    assert_eq!(rows[0].len(), 10);
    let artifact = FitArtifact::from_json(&fs::read_to_string(dir.path().join("a/posterior.json")).unwrap()).unwrap();
    assert_eq!(artifact.data.len(), 30);
}

#[test]
fn config_digest_follows_config_content() {
    let dir = tempfile::tempdir().unwrap();
    let data = cobb_douglas_csv(dir.path(), 30);
    let digest = |name: &str, toml: &str| {
        let cfg = dir.path().join(format!("{name}.toml"));
        fs::write(&cfg, toml).unwrap();
        let out = dir.path().join(name);
        mbcri(&["fit", "--input", path(&data), "--config", path(&cfg), "--out-dir", path(&out)]);
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        m["config_digest"].as_str().unwrap().to_string()
    };
    let a = digest("a", "seed = 4\nburn_in = 40\n");
    let b = digest("b", "burn_in = 40\nseed = 4\n");
    let c = digest("c", "seed = 4\nburn_in = 41\n");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn zero_output_is_rejected_with_its_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "y,x1\n1.5,2\n0,3\n2.5,4\n").unwrap();
    let o = mbcri(&["fit", "--input", path(&data), "--out-dir", path(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 3"), "{err}");
}

#[test]
fn missing_input_column_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "x1,x2\n1,2\n").unwrap();
    let o = mbcri(&["fit", "--input", path(&data), "--out-dir", path(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn nonstationary_fit_exits_two_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let data = cobb_douglas_csv(dir.path(), 30);
    let cfg = dir.path().join("short.toml");
    fs::write(&cfg, "burn_in = 5\nwarm_up = 2\nstationarity_window = 50\nmax_iterations = 20\n").unwrap();
    let out = dir.path().join("out");
    let o = mbcri(&["fit", "--input", path(&data), "--config", path(&cfg), "--out-dir", path(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("posterior.json").exists());
    assert!(out.join("observations.csv").exists());
}

#[test]
fn panel_fit_reports_period_effects() {
    let dir = tempfile::tempdir().unwrap();
    let spec = IndustrySpec { firms: 80, period_effects: vec![-0.06, -0.1], sigma_v: 0.05, seed: 5, ..IndustrySpec::default() };
    let (data, _) = synthetic_industry(&spec).unwrap();
    let csv = dir.path().join("panel.csv");
    data.to_csv(fs::File::create(&csv).unwrap()).unwrap();
    let out = dir.path().join("out");
    let o = mbcri(&["fit", "--input", path(&csv), "--seed", "2", "--out-dir", path(&out)]);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out.join("gamma.csv"));
    assert_eq!(rows.len(), 2);
    for (row, (period, truth)) in rows.iter().zip([(2008, -0.06), (2009, -0.1)]) {
        let v: Vec<f64> = row[1..].iter().map(|s| s.parse().unwrap()).collect();
        assert_eq!(row[0], period.to_string());
        let (map, lower, upper, multiplier) = (v[0], v[1], v[2], v[4]);
        assert!(lower <= map && map <= upper, "{row:?}");
        assert!(lower < truth && truth < upper, "period {period}: {row:?}");
        assert!((multiplier - map.exp()).abs() < 1e-15);
    }
    let report = dir.path().join("report");
    let o = mbcri(&["report", "--artifact", path(&out.join("posterior.json")), "--out-dir", path(&report)]);
    assert_eq!(o.status.code(), Some(0));
    let eff = read_csv(&report.join("efficiency.csv"));
    let labels: Vec<&str> = eff.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(labels, ["min", "25th", "median", "75th", "max"]);
    assert_eq!(read_csv(&report.join("gamma.csv")), rows);
}

#[test]
fn simulate_writes_one_report_per_replicate_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = mbcri(&[
            "simulate", "--example", "1", "--rho", "1", "--n", "100", "--replicates", "2", "--seed", "7", "--out-dir",
            path(&out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(fs::read_dir(a.join("replicates")).unwrap().count(), 2);
    assert_eq!(read_csv(&a.join("aggregate.csv")).len(), 1);
    assert_eq!(fs::read(a.join("aggregate.csv")).unwrap(), fs::read(b.join("aggregate.csv")).unwrap());
}

#[test]
fn unknown_example_is_a_usage_error() {
    let o = mbcri(&["simulate", "--example", "5"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(mbcri(&["--help"]).status.code(), Some(0));
    assert_eq!(mbcri(&["--version"]).status.code(), Some(0));
}

/// A fitted artifact whose estimate is replaced by the given planes.
fn artifact_with_planes(dir: &Path, planes: Vec<Hyperplane>) -> PathBuf {
    let data = cobb_douglas_csv(dir, 30);
    let out = dir.join("fit");
    mbcri(&["fit", "--input", path(&data), "--out-dir", path(&out)]);
    let mut a = FitArtifact::from_json(&fs::read_to_string(out.join("posterior.json")).unwrap()).unwrap();
    a.summary.estimate.members = vec![planes];
    a.summary.selected = None;
    let p = dir.join("edited.json");
    fs::write(&p, a.to_json().unwrap()).unwrap();
    p
}

fn mpss_rows(dir: &Path, artifact: &Path, grid: &str) -> Vec<Vec<f64>> {
    let out = dir.join("mpss");
    let o = mbcri(&["mpss", "--artifact", path(artifact), "--percentiles", "10,50,90", "--grid", grid, "--out-dir", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    read_csv(&out.join("mpss.csv")).iter().map(|r| r.iter().map(|s| s.parse().unwrap()).collect()).collect()
}

#[test]
fn single_plane_scale_sits_at_the_smallest_labor() {
    let dir = tempfile::tempdir().unwrap();
    let art = artifact_with_planes(dir.path(), vec![Hyperplane::new(1.0, vec![0.2, 0.4], 1.0).unwrap()]);
    let rows = mpss_rows(dir.path(), &art, "200");
    assert_eq!(rows.len(), 3);
    let a = FitArtifact::from_json(&fs::read_to_string(&art).unwrap()).unwrap();
    let lmin = a.data.observations.iter().map(|o| o.inputs[1]).fold(f64::INFINITY, f64::min);
    let kmin = a.data.observations.iter().map(|o| o.inputs[0]).fold(f64::INFINITY, f64::min);
    for r in rows {
        let (ratio, labor) = (r[1], r[3]);
        assert!((labor - lmin.max(kmin / ratio)).abs() < 1e-12, "{r:?}");
        assert!((r[2] - ratio * labor).abs() < 1e-12);
    }
}

#[test]
fn two_plane_scale_is_at_the_crossing() {
    let dir = tempfile::tempdir().unwrap();
    let (a1, b1) = (2.0, [0.2, 0.3]);
    let (a2, b2) = (-1.0, [1.0, 1.0]);
    let planes = vec![Hyperplane::new(a1, b1.to_vec(), 1.0).unwrap(), Hyperplane::new(a2, b2.to_vec(), 1.0).unwrap()];
    let art = artifact_with_planes(dir.path(), planes);
    let a = FitArtifact::from_json(&fs::read_to_string(&art).unwrap()).unwrap();
    let span = |j: usize| {
        let v = a.data.observations.iter().map(|o| o.inputs[j]);
        v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
    };
    let (k, l) = (span(0), span(1));
    let grid = 2000;
    for r in mpss_rows(dir.path(), &art, &grid.to_string()) {
        let ratio = r[1];
        // Average product rises along the steep plane and falls along the flat
        // one, so the optimum is the crossing clamped to the ray's range.
        let crossing = (a1 - a2) / ((b2[0] - b1[0]) * ratio + (b2[1] - b1[1]));
        let (lo, hi) = (l.0.max(k.0 / ratio), l.1.min(k.1 / ratio));
        let step = (hi - lo) / (grid - 1) as f64;
        let best = crossing.clamp(lo, hi);
        assert!((r[3] - best).abs() <= step, "ratio {ratio}: labor {} vs {best}", r[3]);
    }
}

#[test]
fn scale_analysis_needs_two_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("one.csv");
    let rows: String = (1..=30).map(|i| format!("{},{i}\n", (i as f64).sqrt() * 0.9)).collect();
    fs::write(&data, format!("y,x1\n{rows}")).unwrap();
    let out = dir.path().join("fit");
    mbcri(&["fit", "--input", path(&data), "--out-dir", path(&out)]);
    let o = mbcri(&["mpss", "--artifact", path(&out.join("posterior.json")), "--out-dir", path(&dir.path().join("m"))]);
    assert_eq!(o.status.code(), Some(1));
    let o = mbcri(&["mpss", "--artifact", path(&dir.path().join("missing.json"))]);
    assert_eq!(o.status.code(), Some(1));
}
