use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_splatlift"));
    c.env("GAGA_THREADS", "2");
    c
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SPEC: &str = "n_instances = 3\ngaussians_per_instance = 150\nwidth = 64\nheight = 64\n[orbit]\nn_views = 8\n";

/// Synthesizes a small dataset and returns its config path.
fn synth(dir: &Path, seed: u64) -> PathBuf {
    let spec = dir.join("spec.toml");
    fs::write(&spec, SPEC).unwrap();
    let data = dir.join("data");
    ok(bin()
        .args(["synth", "--spec"])
        .arg(&spec)
        .args(["--seed", &seed.to_string(), "--out"])
        .arg(&data)
        .output()
        .unwrap());
    let cfg = data.join("config.toml");
    let text = fs::read_to_string(&cfg).unwrap();
    assert!(text.contains("iterations = 2000"));
    fs::write(&cfg, text.replace("iterations = 2000", "iterations = 300")).unwrap();
    cfg
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.clone(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth(tmp.path(), 1);
    let data = cfg.parent().unwrap();
    let inputs = files_under(&data.join("masks"));
    let scene_before = fs::read(data.join("scene.ply")).unwrap();

    for cmd in ["associate", "train", "render"] {
        ok(bin().args([cmd, "--config"]).arg(&cfg).output().unwrap());
        assert!(data.join("out").join(cmd).join("run.json").exists());
    }
    let eval_dir = data.join("out/eval");
    let out = ok(bin()
        .arg("eval")
        .arg("--pred")
        .arg(data.join("out/render/labels"))
        .arg("--gt")
        .arg(data.join("gt"))
        .arg("--out")
        .arg(&eval_dir)
        .arg("--boundary")
        .output()
        .unwrap());
    assert!(String::from_utf8_lossy(&out.stdout).contains("mIoU"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(eval_dir.join("report.json")).unwrap()).unwrap();
    assert!(report["mean_iou"].as_f64().unwrap() > 0.9, "{report}");
    assert!(report["mean_boundary_iou"].as_f64().is_some());

    // sparse comparison against itself: zero drop
    let again = data.join("out/eval2");
    ok(bin()
        .arg("eval")
        .arg("--pred")
        .arg(data.join("out/render/labels"))
        .arg("--gt")
        .arg(data.join("gt"))
        .arg("--out")
        .arg(&again)
        .arg("--sparse-baseline")
        .arg(eval_dir.join("report.json"))
        .output()
        .unwrap());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(again.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["iou_drop"].as_f64(), Some(0.0));

    let script = tmp.path().join("edit.json");
    fs::write(&script, r#"{"edits": [{"op": "remove", "group_id": 1}]}"#).unwrap();
    ok(bin().args(["edit", "--config"]).arg(&cfg).arg("--script").arg(&script).output().unwrap());
    assert!(data.join("out/edit/scene.ply").exists());
    assert!(data.join("out/edit/color/0.png").exists());

    // no command touched its inputs
    assert_eq!(files_under(&data.join("masks")), inputs);
    assert_eq!(fs::read(data.join("scene.ply")).unwrap(), scene_before);
}

#[test]
fn rerun_is_byte_identical() {
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let tmp = tempfile::tempdir().unwrap();
            let cfg = synth(tmp.path(), 4);
            for cmd in ["associate", "train"] {
                ok(bin().args([cmd, "--config"]).arg(&cfg).output().unwrap());
            }
            let data = cfg.parent().unwrap();
            let labels = files_under(&data.join("out/associate/labels"))
                .into_iter()
                .map(|(p, b)| (p.file_name().unwrap().to_owned(), b))
                .collect::<Vec<_>>();
            (labels, fs::read(data.join("out/train/scene.ids")).unwrap(), tmp)
        })
        .collect();
    assert_eq!(runs[0].0, runs[1].0);
    assert_eq!(runs[0].1, runs[1].1);
}

#[test]
fn no_association_passes_labels_through() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth(tmp.path(), 2);
    let data = cfg.parent().unwrap();
    ok(bin()
        .args(["associate", "--preset", "no_association", "--config"])
        .arg(&cfg)
        .output()
        .unwrap());
    let strip = |v: Vec<(PathBuf, Vec<u8>)>| v.into_iter().map(|(p, b)| (p.file_name().unwrap().to_owned(), b)).collect::<Vec<_>>();
    assert_eq!(
        strip(files_under(&data.join("out/associate/labels"))),
        strip(files_under(&data.join("masks")))
    );
}

#[test]
fn config_errors_are_machine_readable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[association]\nfront_pct = 0.0\noverlap_threshold = 3.0\n[train]\niterations = 0\n").unwrap();
    let out = bin().args(["associate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(v["error"]["kind"], "config");
    assert_eq!(v["error"]["messages"].as_array().unwrap().len(), 3, "{line}");
}

#[test]
fn missing_scene_fails_with_error_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin().arg("train").arg("--out").arg(tmp.path()).current_dir(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing input"), "{stderr}");
}

#[test]
fn presets_listed() {
    let out = ok(bin().arg("presets").output().unwrap());
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["front_pct_10", "grid_1", "grid_64", "threshold_0.2"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{name}:"))), "{name}");
    }
}
