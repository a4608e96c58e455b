//! End-to-end runs of the binary: exit codes, summary schema, determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workdir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slneumann"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn summary(out: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(out.join("summary.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn classical_disk_recovers_unit_slope() {
    let dir = workdir("cli_classical");
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        r#"
[problem]
n = 2
theta = "pi/2"
f = 1.0
phi = 0.0
bc = "classical"

[grid]
h = 0.0625

[solver]
eps_list = [1.0, 0.5, 0.25]
"#,
    )
    .unwrap();
    let out = dir.join("out");
    let st = run("classical", &cfg, &out, &[]);
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    let s = summary(&out);
    let lambda = s["result"]["lambda"].as_f64().unwrap();
    assert!((lambda - 1.0).abs() <= 1e-2, "lambda = {lambda}");
    assert_eq!(s["schema"], 1);
    assert!(s["error"].is_null());
    assert!(out.join("field.csv").exists());
}

#[test]
fn malformed_theta_exits_two_with_error_record() {
    let dir = workdir("cli_bad_theta");
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, "[problem]\nn = 2\ntheta = \"x\"\nf = 1.0\n").unwrap();
    let out = dir.join("out");
    let st = run("solve", &cfg, &out, &[]);
    assert_eq!(st.status.code(), Some(2));
    let s = summary(&out);
    assert_eq!(s["error"]["kind"], "config");
    assert!(s["result"].is_null());
}

#[test]
fn inadmissible_phase_is_a_config_error() {
    let dir = workdir("cli_bad_phase");
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        "[problem]\nn = 3\ntheta = 0.3\nf = 1.0\nbc = \"robin\"\n[grid]\nh = 0.125\n",
    )
    .unwrap();
    let out = dir.join("out");
    let st = run("solve", &cfg, &out, &[]);
    assert_eq!(st.status.code(), Some(2));
    assert_eq!(summary(&out)["error"]["kind"], "config");
}

#[test]
fn identical_config_and_seed_reproduce_bytes() {
    let dir = workdir("cli_determinism");
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        r#"
[problem]
n = 2
theta = "pi/2"
f = 1.0
phi = 0.0
bc = "robin"

[grid]
h = 0.125

[solver]
perturb = 0.05
"#,
    )
    .unwrap();
    let (a, b) = (dir.join("a"), dir.join("b"));
    assert_eq!(run("solve", &cfg, &a, &["--seed", "11"]).status.code(), Some(0));
    assert_eq!(run("solve", &cfg, &b, &["--seed", "11"]).status.code(), Some(0));
    let read = |p: &Path, f: &str| std::fs::read(p.join(f)).unwrap();
    assert_eq!(read(&a, "summary.json"), read(&b, "summary.json"));
    assert_eq!(read(&a, "field.csv"), read(&b, "field.csv"));
    let text = String::from_utf8(read(&a, "field.csv")).unwrap();
    assert!(!text.contains('\r'));
    assert!(text.starts_with("x,y,tag,u\n"));
}

#[test]
fn verify_reports_requested_sample_count() {
    let dir = workdir("cli_verify");
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        "[problem]\nn = 3\ntheta = \"pi/2\"\nf = 1.0\n\n[verify]\ncount = 500\n",
    )
    .unwrap();
    let out = dir.join("out");
    let st = run("verify", &cfg, &out, &["--seed", "3"]);
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    let s = summary(&out);
    assert_eq!(s["result"]["count"], 500);
    assert_eq!(s["result"]["suite"]["samples"], 500);
}

#[test]
fn diagnose_reuses_a_saved_field() {
    let dir = workdir("cli_diagnose");
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        r#"
[problem]
n = 2
theta = "pi/2"
f = 1.0
phi = 0.0
bc = "robin"

[grid]
h = 0.0625

[diagnose]
field = "out/field.csv"
"#,
    )
    .unwrap();
    let out = dir.join("out");
    assert_eq!(run("solve", &cfg, &out, &[]).status.code(), Some(0));
    let out2 = dir.join("out2");
    let st = run("diagnose", &cfg, &out2, &[]);
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    let s = summary(&out2);
    assert!(s["result"]["barrier"]["first_passing"].as_f64().is_some());
    assert!(s["result"]["identity"]["max_residual"].as_f64().unwrap() < 1e-6);

    // a field saved on one grid is rejected on another
    let other = dir.join("other.toml");
    std::fs::write(
        &other,
        r#"
[problem]
n = 2
theta = "pi/2"
f = 1.0
phi = 0.0
bc = "robin"

[grid]
h = 0.03125

[diagnose]
field = "out/field.csv"
"#,
    )
    .unwrap();
    let st = run("diagnose", &other, &dir.join("out3"), &[]);
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn oracle_profile_lands_next_to_summary() {
    let dir = workdir("cli_oracle");
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        "[problem]\nn = 2\ntheta = \"pi/2\"\nf = { a = 1.0, b = 0.5 }\nphi = 0.0\nbc = \"classical\"\n",
    )
    .unwrap();
    let out = dir.join("out");
    let st = run("oracle", &cfg, &out, &[]);
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    let s = summary(&out);
    let lambda = s["result"]["lambda"].as_f64().unwrap();
    assert!((lambda - (19.0f64 / 12.0).sqrt()).abs() < 1e-10, "lambda = {lambda}");
    let profile = std::fs::read_to_string(out.join("profile.csv")).unwrap();
    assert!(profile.starts_with("r,psi,u\n"));
}
