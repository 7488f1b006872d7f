use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_specleak"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{}.yaml", name))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("specleak-cli-{}-{}", name, std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn fuzz(cfg: &str, n: usize, out: &Path) -> Output {
    run(bin()
        .arg("fuzz")
        .arg("-c")
        .arg(config(cfg))
        .args(["-n", &n.to_string(), "--out"])
        .arg(out))
}

fn first_violation(report: &Path) -> String {
    let text = std::fs::read_to_string(report).unwrap();
    let v: serde_json::Value = text
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .find(|r| r["violations"].as_array().is_some_and(|v| !v.is_empty()))
        .expect("a violating round");
    v["violations"][0]["id"].as_str().unwrap().to_string()
}

#[test]
fn fuzz_exit_codes_and_outputs() {
    let d = scratch("fuzz");
    let out = d.join("v1.jsonl");
    let o = fuzz("v1", 40, &out);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("violations:"));
    assert!(out.exists());
    assert!(d.join("v1.summary.json").exists());

    let clean = d.join("off.jsonl");
    let o = fuzz("all_off", 20, &clean);
    assert_eq!(o.status.code(), Some(0));

    let s = run(bin().args(["stats", "--report"]).arg(&out));
    assert_eq!(s.status.code(), Some(0));
    assert!(stdout(&s).contains("test cases:            40"));
    std::fs::remove_dir_all(d).ok();
}

#[test]
fn reproduce_and_disable() {
    let d = scratch("repro");
    let out = d.join("v1.jsonl");
    fuzz("v1", 40, &out);
    let id = first_violation(&out);

    let o = run(bin().args(["reproduce", "--report"]).arg(&out).args(["--violation", &id]));
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "confirmed");

    let o = run(bin()
        .args(["reproduce", "--report"])
        .arg(&out)
        .args(["--violation", &id, "--disable", "cond_predictor"]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("refuted: clause-dependent"));

    let o = run(bin().args(["reproduce", "--report"]).arg(&out).args(["--violation", "nope"]));
    assert_eq!(o.status.code(), Some(2));
    let o = run(bin()
        .args(["reproduce", "--report"])
        .arg(&out)
        .args(["--violation", &id, "--disable", "bogus"]));
    assert_eq!(o.status.code(), Some(2));
    std::fs::remove_dir_all(d).ok();
}

#[test]
fn minimize_prints_a_program() {
    let d = scratch("min");
    let out = d.join("v1.jsonl");
    fuzz("v1", 40, &out);
    let id = first_violation(&out);
    let o = run(bin().arg("minimize").arg("-c").arg(config("v1")).args(["--violation", &id]));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).lines().any(|l| l.trim_start().starts_with('J')), "{}", stdout(&o));
    std::fs::remove_dir_all(d).ok();
}

#[test]
fn usage_errors() {
    let o = run(bin().args(["fuzz", "-c", "/nonexistent.yaml"]));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = run(bin().arg("frobnicate"));
    assert_eq!(o.status.code(), Some(2));
    let o = run(bin().args(["stats", "--report", "/nonexistent.jsonl"]));
    assert_eq!(o.status.code(), Some(2));
}
