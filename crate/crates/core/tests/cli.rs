use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ffusion::cli::RunConfig;

const BIN: &str = env!("CARGO_BIN_EXE_ffusion");

/// A small, fast configuration; extra overrides go after these.
const SMALL: &[&str] = &[
    "--set",
    "dataset.n=24",
    "--set",
    "train.epochs=1",
    "--set",
    "train.batch_size=8",
    "--set",
    "eval.probes=false",
    "--set",
    "eval.snr_sigmas=[0.5]",
    "--set",
    "eval.independence_samples=2",
];

fn ffusion(cwd: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(cwd).args(args).output().expect("binary runs")
}

fn small(cwd: &Path, cmd: &str, extra: &[&str]) -> Output {
    let mut args = vec![cmd];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ffusion(cwd, &args)
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr_line(out: &Output) -> String {
    let s = String::from_utf8_lossy(&out.stderr).into_owned();
    s.lines().last().unwrap_or("").to_string()
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn generate_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(&small(a.path(), "generate", &[]));
    ok(&small(b.path(), "generate", &[]));
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.len() > 24 * 5);
    assert_eq!(fa, fb);
}

#[test]
fn eval_without_checkpoint_is_missing_input_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    ok(&small(dir.path(), "generate", &[]));
    let out = small(dir.path(), "eval", &[]);
    assert_eq!(code(&out), 4);
    let line = stderr_line(&out);
    assert!(line.starts_with("error code=4 kind=missing_file msg=\""), "{line}");
    assert!(!dir.path().join("run/report.json").exists());
    assert!(!dir.path().join("run/summary.txt").exists());
}

#[test]
fn full_pipeline_reports_every_scenario_inside_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["generate", "train", "eval"] {
        ok(&small(dir.path(), cmd, &[]));
    }
    let top: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(top, vec!["run"]);
    let run = dir.path().join("run");
    for f in ["model.ckpt", "vocab.txt", "metrics.json", "report.json", "summary.txt", "timings.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["format"], "FFUSION-REPORT v1");
    let names: Vec<&str> = report["degradation"]["scenarios"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["metrics"]["scenario"].as_str().unwrap())
        .collect();
    let cfg = RunConfig::default();
    let expected: Vec<&str> = cfg.scenarios.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, expected);
    assert_eq!(names.len(), 7);
    let statuses: Vec<&str> = report["degradation"]["scenarios"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["status"].as_str().unwrap())
        .collect();
    assert_eq!(statuses.last(), Some(&"FAIL_SILENT"));
    assert!(statuses[..6].iter().all(|&s| s == "OPERATIONAL"));
    assert_eq!(report["config"]["dataset"]["n"], 24);
    assert_eq!(report["degradation"]["independence"]["pass"], true);
    assert!(report.get("timings").is_none());
}

#[test]
fn config_round_trips_through_show_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = ffusion(dir.path(), &["show-config", "--set", "train.lr=0.0003", "--set", "dataset.seed=5"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = RunConfig::parse(&text, &[]).unwrap();
    assert_eq!(cfg.train.lr, 3e-4);
    assert_eq!(cfg.to_json(), text);
    std::fs::write(dir.path().join("c.json"), &text).unwrap();
    let again = ffusion(dir.path(), &["show-config", "-c", "c.json"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn error_classes_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&ffusion(d, &["generate", "--frobnicate"])), 2);
    assert_eq!(code(&ffusion(d, &["launch"])), 2);
    std::fs::write(d.join("bad.json"), "{ not json").unwrap();
    let out = ffusion(d, &["generate", "-c", "bad.json"]);
    assert_eq!(code(&out), 3);
    assert!(stderr_line(&out).starts_with("error code=3 kind=config"));
    assert_eq!(code(&ffusion(d, &["generate", "--set", "train.bogus=1"])), 3);
    assert_eq!(code(&ffusion(d, &["generate", "-c", "absent.json"])), 4);
    assert_eq!(code(&ffusion(d, &["train"])), 4);
    assert_eq!(code(&ffusion(d, &["inject", "--fault", "text:miscalibration_shift:1"])), 8);
    assert_eq!(code(&ffusion(d, &["--help"])), 0);
}

#[test]
fn mismatched_checkpoint_exits_6() {
    let dir = tempfile::tempdir().unwrap();
    ok(&small(dir.path(), "generate", &[]));
    ok(&small(dir.path(), "train", &[]));
    let out = small(dir.path(), "eval", &["--set", "model.d=32"]);
    assert_eq!(code(&out), 6, "{}", stderr_line(&out));
    assert!(!dir.path().join("run/report.json").exists());
}

#[test]
fn dataset_from_another_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    ok(&small(dir.path(), "generate", &[]));
    assert_eq!(code(&small(dir.path(), "train", &["--set", "dataset.seed=1"])), 3);
}

#[test]
fn inject_writes_faulted_split_with_health() {
    let dir = tempfile::tempdir().unwrap();
    ok(&small(dir.path(), "generate", &[]));
    ok(&small(dir.path(), "inject", &["--fault", "camera:blackout", "--split", "val"]));
    let inj = dir.path().join("run/injected");
    let manifest = ffusion::scene::load_manifest(&inj).unwrap();
    assert!(manifest.samples.iter().all(|s| s.split == ffusion::scene::Split::Val));
    let health: serde_json::Value = serde_json::from_slice(&std::fs::read(inj.join("health.json")).unwrap()).unwrap();
    for s in health["samples"].as_array().unwrap() {
        assert_eq!(s["health"][0]["status"], "failed");
        assert_eq!(s["health"][2]["status"], "nominal");
    }
}

#[test]
fn asil_check_verdicts_and_report_merge() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("bad.arch"),
        "FFUSION-ARCH v1\n[elements]\nsys: D\na: B\nb: A\n[claims]\nsys -> a + b\n",
    )
    .unwrap();
    let out = ffusion(d, &["asil-check", "bad.arch"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("INVALID") && text.contains("rank shortfall") && text.contains("missing independence"));
    assert_eq!(code(&ffusion(d, &["asil-check", "bad.arch", "--strict"])), 9);
    std::fs::write(d.join("garbled.arch"), "FFUSION-ARCH v1\n[elements]\nsys D\n").unwrap();
    assert_eq!(code(&ffusion(d, &["asil-check", "garbled.arch"])), 3);
    let arch = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/perception.arch");
    ok(&ffusion(d, &["asil-check", arch.to_str().unwrap(), "--strict"]));

    for cmd in ["generate", "train", "eval"] {
        ok(&small(d, cmd, &[]));
    }
    ok(&ffusion(d, &["asil-check", "bad.arch"]));
    ok(&small(d, "report", &[]));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["asil"][0]["valid"], false);
    let summary = std::fs::read_to_string(d.join("run/summary.txt")).unwrap();
    assert!(summary.contains("INVALID"));
}

#[test]
fn example_config_is_valid() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    let cfg = RunConfig::load(Some(&path), &[]).unwrap();
    assert_eq!(cfg.scenarios.len(), 7);
    assert_eq!(cfg.dataset.n, 640);
}
