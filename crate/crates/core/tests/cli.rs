use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uav-ddqn"))
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/configs/smoke.json")
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn train_short(out: &Path, extra: &[&str]) {
    let o = run(bin()
        .arg("train")
        .arg(smoke_config())
        .args(["--steps", "200", "--out"])
        .arg(out)
        .args(extra));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn selfcheck_passes() {
    let o = run(bin().arg("selfcheck"));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
}

#[test]
fn eval_rejects_a_checkpoint_with_another_core() {
    let dir = tempfile::tempdir().unwrap();
    train_short(dir.path(), &["--core", "gru"]);
    let ckpt = dir.path().join("checkpoint.ardq");
    let o = run(bin().arg("eval").arg(smoke_config()).arg(&ckpt).args(["--episodes", "2"]));
    assert!(!o.status.success());
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("core type"), "{stderr}");

    let o = run(bin()
        .arg("eval")
        .arg(smoke_config())
        .arg(&ckpt)
        .args(["--episodes", "3", "--core", "gru"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("eval_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("episode,seed,mission,steps_used,landed,coverage_ratio,collection_ratio"));
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert!(log.starts_with("step,episode,loss,epsilon_or_temp,eval_landing_ratio,eval_primary_ratio"));
}

#[test]
fn render_writes_a_ppm() {
    let dir = tempfile::tempdir().unwrap();
    train_short(dir.path(), &[]);
    let img = dir.path().join("ep.ppm");
    let o = run(bin()
        .arg("render")
        .arg(smoke_config())
        .arg(dir.path().join("checkpoint.ardq"))
        .arg(&img)
        .args(["--scale", "4"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = std::fs::read(&img).unwrap();
    let header = b"P6\n24 24\n255\n";
    assert!(bytes.starts_with(header));
    assert_eq!(bytes.len(), header.len() + 24 * 24 * 3);
}

#[test]
fn gen_map_output_loads() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"size": 20, "seed": 4, "tall_buildings": 6}"#).unwrap();
    let o = run(bin().arg("gen-map").arg(&spec));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let map = uav_ddqn::world::load_map(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(map.size(), 20);
    assert!(!map.landing_cells().is_empty());
}

#[test]
fn invalid_configs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"trainer": {"gamma": 0.9, "bogus": 1}}"#).unwrap();
    let o = run(bin().arg("train").arg(&cfg).arg("--out").arg(dir.path()));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    std::fs::write(&cfg, r#"{"trainer": {"gamma": 1.5}}"#).unwrap();
    let o = run(bin().arg("train").arg(&cfg).arg("--out").arg(dir.path()));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
}

#[test]
fn minimal_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("min.json");
    std::fs::write(&cfg, "{}").unwrap();
    let o = run(bin().arg("train").arg(&cfg).args(["--steps", "20", "--out"]).arg(dir.path()));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(bin()
        .arg("eval")
        .arg(&cfg)
        .arg(dir.path().join("checkpoint.ardq"))
        .args(["--episodes", "1"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
