use std::path::Path;
use std::process::Command;

fn trussbot(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_trussbot")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = r#"{
  "name": "small",
  "grid": { "rows": 3, "cols": 3, "spacing": 0.1 },
  "budgets": { "iterations": 3, "total_steps": 64, "grad_window": [32, 64] },
  "render_stride": 32
}"#;

#[test]
fn run_writes_artifacts_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let out = dir.path().join("out");
    let o = trussbot(&["run", &cfg, "--out", out.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.json", "history.jsonl", "trajectory.csv", "design.json", "controller.json", "summary.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["seed"], 4);
    assert_eq!(metrics["iterations"], 3);
    assert_eq!(metrics["g_bin"], 0.0);
    let history = std::fs::read_to_string(out.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 3);
    // stride 32 over 64 steps: frames at 0, 32 and 64
    assert_eq!(std::fs::read_dir(out.join("frames")).unwrap().count(), 3);
}

#[test]
fn invalid_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(dir.path(), "u.json", r#"{ "bogus": 1 }"#);
    let o = trussbot(&["run", &unknown, "--out", dir.path().join("o1").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let conflicting = write(
        dir.path(),
        "b.json",
        r#"{ "init_heuristic": "baseline_fixed", "ablation": { "topology": true, "material": false, "control": true } }"#,
    );
    let o = trussbot(&["run", &conflicting, "--out", dir.path().join("o2").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = trussbot(&["run", "/nonexistent/config.json"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn divergence_exits_three_with_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "d.json",
        r#"{ "grid": { "rows": 3, "cols": 3, "spacing": 0.1 },
             "budgets": { "dt": 0.1, "iterations": 5, "total_steps": 200, "grad_window": [100, 100] } }"#,
    );
    let out = dir.path().join("out");
    let o = trussbot(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(err["exit_code"], 3);
    assert!(err["error"].as_str().unwrap().contains("diverged"));
}

#[test]
fn render_reproduces_the_run_frames() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let out = dir.path().join("out");
    assert!(trussbot(&["run", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let frames = dir.path().join("frames");
    let o = trussbot(&[
        "render",
        out.join("trajectory.csv").to_str().unwrap(),
        out.join("design.json").to_str().unwrap(),
        "--out",
        frames.to_str().unwrap(),
        "--stride",
        "32",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for entry in std::fs::read_dir(out.join("frames")).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(out.join("frames").join(&name)).unwrap();
        let b = std::fs::read(frames.join(&name)).unwrap();
        assert_eq!(a, b, "{name:?}");
    }
}

#[test]
fn gradcheck_passes_on_an_airborne_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "g.json",
        r#"{ "grid": { "rows": 3, "cols": 3, "spacing": 0.1 }, "head_offset": [0.1, 1.0] }"#,
    );
    let o = trussbot(&["gradcheck", &cfg, "--steps", "32", "--theta", "5", "--z", "5"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    assert!(stdout.contains("max relative error"));
}

#[test]
fn ablation_writes_a_summary_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let out = dir.path().join("abl");
    let o = trussbot(&["ablation", &cfg, "--trials", "a,h", "--out", out.to_str().unwrap(), "--iters", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("ablation.json")).unwrap()).unwrap();
    assert!(summary["a"]["final_displacement_m"].is_number());
    assert!(summary["h"]["final_displacement_m"].is_number());
    assert!(out.join("trial_a").join("metrics.json").is_file());
}

#[test]
fn shipped_schema_is_current() {
    let o = trussbot(&["schema"]);
    assert!(o.status.success());
    let shipped = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/schema.json")).unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), shipped);
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"));
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() == "schema.json" {
            continue;
        }
        trussbot_experiments::ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 6);
}
