use std::process::Command;

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_hopf-heat")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn write_config(name: &str, body: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("hopf-heat-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn indices_sphere_passes() {
    let p = write_config("idx.json", r#"{"command":"indices","field":"sphere_height"}"#);
    let (code, out) = run(&["indices", "--config", p.to_str().unwrap()]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["outputs"]["chi"], 2);
    assert_eq!(v["config"]["manifold"]["kind"], "sphere");
}

#[test]
fn config_errors_exit_two() {
    let p = write_config("bad.json", r#"{"command":"indices","field":"missing_preset"}"#);
    assert_eq!(run(&["indices", "--config", p.to_str().unwrap()]).0, 2);
    let p = write_config("zero.json", r#"{"command":"kernel-checks","samples":0}"#);
    assert_eq!(run(&["kernel-checks", "--config", p.to_str().unwrap()]).0, 2);
    let p = write_config("mismatch.json", r#"{"command":"levi"}"#);
    assert_eq!(run(&["triangle", "--config", p.to_str().unwrap()]).0, 2);
    assert_eq!(run(&["triangle", "--config", "/nonexistent/config.json"]).0, 2);
}

#[test]
fn triangle_plane_writes_csv() {
    let p = write_config("tri.json", r#"{"command":"triangle","samples":4,"bound_samples":4,"comparison_samples":4}"#);
    let out = p.with_file_name("tri.out.json");
    let (code, _) = run(&["triangle", "--config", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("t,theta,l,b,alpha,gamma"));
}
