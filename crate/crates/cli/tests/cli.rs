use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn segmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segmatch")).args(args).output().expect("spawn segmatch")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Two 0.6 m lattice cubes 5 m apart, 0.05 m pitch.
fn write_two_blobs(path: &Path) {
    let mut text = String::new();
    for cx in [0.0, 5.0] {
        for i in 0..12 {
            for j in 0..12 {
                for k in 0..12 {
                    let p = |n: i32| 0.025 + 0.05 * f64::from(n);
                    writeln!(text, "{} {} {}", cx + p(i), p(j), 1.0 + p(k)).unwrap();
                }
            }
        }
    }
    fs::write(path, text).unwrap();
}

#[test]
fn segment_reports_two_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = dir.path().join("blobs.xyz");
    write_two_blobs(&cloud);
    let out = segmatch(&["segment", "--cloud", cloud.to_str().unwrap(), "--keep-ground", "--describe"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "{text}");
    assert_eq!(rows[0].split(',').count(), 12);
}

#[test]
fn eval_reproduces_probability_case() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records.csv");
    let mut text = String::from(segmatch::eval::RECORDS_HEADER);
    text.push('\n');
    for m in 0..=100 {
        let localized = m <= 10 || (40..=60).contains(&m) || m >= 70;
        writeln!(text, "{m},{m},0,{},0,0,0,0", if localized { "tp" } else { "none" }).unwrap();
    }
    fs::write(&records, text).unwrap();
    let out = segmatch(&["eval", "--records", records.to_str().unwrap(), "--at", "5,20"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = stdout(&out);
    assert!(table.contains("x,p\n5,0.4\n20,0.3\n"), "{table}");
}

#[test]
fn localize_without_map_is_usage_error() {
    let out = segmatch(&["localize", "--sequence", "nowhere", "--out-dir", "out"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(segmatch(&["segment", "--cloud", "x", "--bogus"]).status.code(), Some(2));
}

#[test]
fn missing_input_is_operational_failure() {
    let out = segmatch(&["segment", "--cloud", "/nonexistent/cloud.segpc"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn forest_without_model_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("seq");
    assert!(segmatch(&["make-synthetic", "--out", data.to_str().unwrap(), "--spacing", "50", "--range", "20", "--density", "50", "--ground-points", "500"]).status.success());
    let out = segmatch(&["close-loops", "--sequence", data.to_str().unwrap(), "--out-dir", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn close_loops_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("seq");
    let made = segmatch(&[
        "make-synthetic", "--out", data.to_str().unwrap(), "--seed", "4", "--spacing", "5", "--range", "25",
        "--density", "150", "--ground-points", "3000",
    ]);
    assert!(made.status.success(), "{}", String::from_utf8_lossy(&made.stderr));
    assert_eq!(fs::read_dir(data.join("scans")).unwrap().count(), 61);

    let config = dir.path().join("run.conf");
    fs::write(&config, "# desk-scale run\nneighborhood_radius = 25\nvoxel_min_points = 1\nground_removal = min-height\nground_height = 0.2\nesf_samples = 500\nclassifier = l2\nl2_threshold = 0.05\n").unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let map = dir.path().join(format!("{name}.segmap"));
        let out = segmatch(&[
            "--config", config.to_str().unwrap(), "close-loops", "--sequence", data.to_str().unwrap(),
            "--out-dir", out_dir.to_str().unwrap(), "--map-out", map.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (fs::read(out_dir.join("closures.csv")).unwrap(), fs::read(map).unwrap(), out_dir)
    };
    let (c1, m1, d1) = run("a");
    let (c2, m2, _) = run("b");
    assert_eq!(c1, c2);
    assert_eq!(m1, m2);
    assert!(d1.join("records.csv").exists() && d1.join("timing.csv").exists());

    let eval = segmatch(&["eval", "--records", d1.join("records.csv").to_str().unwrap(), "--out-dir", d1.join("eval").to_str().unwrap()]);
    assert!(eval.status.success());
    assert!(d1.join("eval/probability.csv").exists());
}
