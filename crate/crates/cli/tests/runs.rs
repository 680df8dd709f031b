use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use paramtrap_cli::app::{execute, resolve, ConfigSource, Resolved};
use paramtrap_cli::manifest::{Manifest, Status};

fn tiny(experiment: &str, extra: &[&str]) -> Resolved {
    let mut overrides = vec![format!("experiment={experiment}")];
    overrides.extend(extra.iter().map(|s| s.to_string()));
    resolve(&ConfigSource {
        overrides,
        seed: Some(11),
        ..Default::default()
    })
    .unwrap()
}

const NOISY: &[&str] = &[
    "ensemble.trajectories=3",
    "ensemble.detection_times_us=[0.5, 1.0, 1.5]",
    "ensemble.keep_records=true",
];

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "manifest.json")
        .map(|e| (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap()))
        .collect()
}

#[test]
fn every_experiment_runs_at_small_scale() {
    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("slowflow-portrait", vec!["slowflow.portrait_points=11"]),
        ("slowflow-ensemble", vec!["slowflow.states=20", "slowflow.t_end_us=5", "slowflow.trajectory_dt_ns=50"]),
        ("sim1d", vec!["sim1d.t_end_us=2"]),
        ("sim3d", vec!["sim3d.t_end_us=2", "sim3d.analysis_start_us=0.5", "sim3d.phi_x_rad=[0.0]"]),
        (
            "detuning-scan",
            vec!["scan.detuning_percent=[-1.0, 0.0]", "scan.phi_x_rad=[0.0]", "scan.t_end_us=2", "scan.analysis_start_us=0.5"],
        ),
        ("noisy-ensemble", NOISY.to_vec()),
        ("snr-curve", NOISY.to_vec()),
        ("burst-stats", vec!["burst.samples=2000", "burst.series_points=10"]),
    ];
    for (kind, extra) in cases {
        let r = tiny(kind, &extra);
        let dir = tempfile::tempdir().unwrap();
        let (m, _) = execute(&r, 1, dir.path()).unwrap();
        assert_eq!(m.status, Status::Success, "{kind}: {:?}", m.failures);
        assert!(m.artifacts.contains(&"summary.json".to_string()), "{kind}");
        for a in &m.artifacts {
            assert!(dir.path().join(a).is_file(), "{kind}: {a}");
        }
        let stochastic = r.config.experiment.is_stochastic();
        assert_eq!(dir.path().join("seeds.csv").is_file(), stochastic, "{kind}");
    }
}

#[test]
fn worker_count_does_not_change_artifacts() {
    for (kind, extra) in [
        ("noisy-ensemble", NOISY),
        ("slowflow-ensemble", &["slowflow.states=40", "slowflow.t_end_us=5"][..]),
    ] {
        let r = tiny(kind, extra);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        execute(&r, 1, a.path()).unwrap();
        execute(&r, 3, b.path()).unwrap();
        assert_eq!(files(a.path()), files(b.path()), "{kind}");
    }
}

#[test]
fn manifest_rerun_reproduces_artifacts() {
    let r = tiny("snr-curve", NOISY);
    let a = tempfile::tempdir().unwrap();
    let (m, _) = execute(&r, 2, a.path()).unwrap();
    assert_eq!(m.seeds.len(), 3);
    let again = resolve(&ConfigSource {
        manifest: Some(a.path().to_path_buf()),
        ..Default::default()
    })
    .unwrap();
    assert_eq!(again.config, r.config);
    let b = tempfile::tempdir().unwrap();
    let (m2, _) = execute(&again, 1, b.path()).unwrap();
    assert_eq!(m2.artifacts, m.artifacts);
    assert_eq!(files(a.path()), files(b.path()));
    assert_eq!(Manifest::read(b.path()).unwrap().seeds, m.seeds);
}

#[test]
fn different_seeds_give_different_noise() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    execute(&tiny("noisy-ensemble", NOISY), 1, a.path()).unwrap();
    let mut r = tiny("noisy-ensemble", NOISY);
    r.config.seed = 12;
    execute(&r, 1, b.path()).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_ne!(fa["resonance_powers.csv"], fb["resonance_powers.csv"]);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_paramtrap"))
}

#[test]
fn binary_lists_presets() {
    let out = bin().arg("list-presets").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["portrait", "capture-desk", "snr-desk", "bursts"] {
        assert!(text.contains(name), "{name}");
    }
}

#[test]
fn binary_reports_every_bad_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[resonator]\nq = 0.0\n[drive]\nepsilon = -1.0\n").unwrap();
    let out = bin().arg("validate").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("Q"), "{err}");
    assert!(err.contains("drive"), "{err}");

    std::fs::write(&cfg, "[resonator]\nqq = 1.0\n").unwrap();
    let out = bin().arg("validate").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("resonator.qq"));
}

#[test]
fn binary_run_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--preset", "bursts", "--seed", "3", "--workers", "1", "-o", "burst.samples=1000"])
        .env("PARAMTRAP_OUT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = Manifest::read(&dir.path().join("bursts-seed3")).unwrap();
    assert_eq!(m.seed, 3);
    assert_eq!(m.preset.as_deref(), Some("bursts"));
    assert_eq!(m.config.burst.samples, 1000);
}
