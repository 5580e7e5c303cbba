use std::path::Path;
use std::process::{Command, Output};

fn memflow(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memflow")).args(args).arg("--config").arg(config).arg("--out").arg(out).output().unwrap()
}

fn config_file(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

const BASE: &str = r#"{"kernel": "KERNEL", "basis": {"modes": 4, "n_x": 64},
    "time": {"horizon": 1.0, "n_t": 16}, "mask": {"kind": "full"}}"#;

#[test]
fn kernel_syntax_error_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_file(dir.path(), &BASE.replace("KERNEL", "exp(-t) +* 2"));
    let out = memflow(&["kernel"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("position 9"), "{stderr}");
}

#[test]
fn unknown_key_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_file(dir.path(), &BASE.replace("KERNEL", "1").replace("\"n_t\": 16", "\"n_t\": 16, \"dt\": 0.1"));
    let out = memflow(&["moc"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("time") && stderr.contains("dt"), "{stderr}");
}

#[test]
fn moc_of_zigzag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/moc_zigzag.json");
    let out = memflow(&["moc"], &cfg, dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.lines().any(|l| l == "moc_functional = 0.1"), "{stdout}");
    assert!(stdout.contains("artifacts: "));
}

#[test]
fn flow_check_constant_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE.replace("KERNEL", "1").replace(
        "\"mask\"",
        r#""flow_check": {"modes": [1, 2], "dt": 0.01, "remainder_orders": [2], "remainder_modes": 2, "remainder_samples": 2}, "mask""#,
    );
    let cfg = config_file(dir.path(), &text);
    let out = memflow(&["flow-check"], &cfg, dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(!stdout.contains("FAIL"), "{stdout}");
    let artifacts = stdout.lines().find_map(|l| l.strip_prefix("artifacts: ")).unwrap();
    let manifest = std::fs::read_to_string(Path::new(artifacts).join("manifest.json")).unwrap();
    assert!(manifest.contains("summary.json"));
}

#[test]
fn tightened_tolerances_fail_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let text =
        BASE.replace("KERNEL", "exp(-t)").replace("\"mask\"", r#""flow_check": {"modes": [8], "dt": 0.05, "remainder_modes": 0}, "mask""#);
    let cfg = config_file(dir.path(), &text);
    let out = Command::new(env!("CARGO_BIN_EXE_memflow"))
        .args(["flow-check", "--tolerance-scale", "1e-9", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
}
