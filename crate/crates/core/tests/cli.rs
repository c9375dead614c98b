use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tagloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tagloc"))
        .args(args)
        .output()
        .expect("spawn tagloc")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("scenario.toml");
    fs::write(&p, body).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    tagloc(&args)
}

const IDEAL_FOUR: &str = r#"
[geometry]
anchors = [[0.0, 0.0, 2.5], [6.0, 0.0, 2.5], [6.0, 5.0, 2.5], [0.0, 5.0, 0.5]]
positions = [[2.0, 1.5, 1.0]]
"#;

#[test]
fn range_ideal_four_anchors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), IDEAL_FOUR);
    let out = dir.path().join("out");
    let o = run("range", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let text = fs::read_to_string(out.join("measurements.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "anchor_id,t_round1,t_reply1,t_round2,t_reply2,prop_time_s,distance_m,valid"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    let anchors = [[0.0, 0.0, 2.5], [6.0, 0.0, 2.5], [6.0, 5.0, 2.5], [0.0, 5.0, 0.5]];
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], i.to_string());
        assert_eq!(r[7], "true");
        let a: [f64; 3] = anchors[i];
        let truth = ((a[0] - 2.0f64).powi(2) + (a[1] - 1.5f64).powi(2) + (a[2] - 1.0f64).powi(2)).sqrt();
        let d: f64 = r[6].parse().unwrap();
        // One default tick is about 4.7 mm of range.
        assert!((d - truth).abs() < 0.01, "anchor {i}: {d} vs {truth}");
    }
}

#[test]
fn missing_anchors_exit_2_naming_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[ranging]\nrounds = 1\n");
    let o = run("range", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("geometry.anchors"), "{err}");
}

#[test]
fn three_anchors_in_3d_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[geometry]
anchors = [[0.0, 0.0, 2.5], [6.0, 0.0, 2.5], [6.0, 5.0, 1.0]]
positions = [[2.0, 1.5, 1.0]]
[ranging]
dimensions = ["3d"]
"#,
    );
    let o = run("locate", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("under-determined"), "{err}");
}

#[test]
fn unknown_key_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{IDEAL_FOUR}\n[ranging]\nnoise = 0.1\n"));
    let o = run("range", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_only_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), IDEAL_FOUR);
    let out = dir.path().join("out");
    let o = run("range", &cfg, &out, &["--validate-only"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("configuration ok"));
    assert!(!out.join("measurements.csv").exists());
}

#[test]
fn seeded_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[geometry]
preset = "office"
[ranging]
noise_sigma = 0.2
drift_ppm = 20.0
rounds = 3
"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run("locate", &cfg, &a, &["--seed", "42"]).status.success());
    assert!(run("locate", &cfg, &b, &["--seed", "42"]).status.success());
    for f in ["fixes.csv", "error_cdf.csv", "error_summary.json", "lora_reports.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    assert!(run("locate", &cfg, &c, &["--seed", "43"]).status.success());
    assert_ne!(fs::read(a.join("fixes.csv")).unwrap(), fs::read(c.join("fixes.csv")).unwrap());
}

#[test]
fn zero_noise_locate_is_submillimeter() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[geometry]
preset = "office"
[ranging]
tick_duration = 1e-15
rounds = 2
"#,
    );
    let out = dir.path().join("out");
    let o = run("locate", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("fixes.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let e2 = header.iter().position(|h| *h == "error_2d_m").unwrap();
    let e3 = header.iter().position(|h| *h == "error_3d_m").unwrap();
    let mut n = 0;
    for l in lines {
        let r: Vec<&str> = l.split(',').collect();
        for col in [e2, e3] {
            let e: f64 = r[col].parse().unwrap();
            assert!(e < 1e-3, "{l}");
        }
        n += 1;
    }
    assert_eq!(n, 36);
}

#[test]
fn malformed_trace_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "timestamp_s,lux\n0,10\n60,-5\n").unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[energy]
[[energy.traces]]
label = "bad"
path = "bad.csv"
"#,
    );
    let o = run("energy", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}
