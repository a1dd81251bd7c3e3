// Copyright 2026 The rgbd-distill Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_rgbd-distill");

fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("rgbd-distill").chain(args.iter().copied());
    let code = rgbd_distill::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn synth(dir: &Path, n: usize, test_n: usize) {
    let d = dir.to_str().unwrap();
    let (n, t) = (n.to_string(), test_n.to_string());
    let args = ["gen-synthetic", "--seed", "3", "--n", &n, "--test-n", &t, "--height", "32", "--width", "32", "--out", d];
    assert_eq!(run(&args).0, 0);
}

fn train_args<'a>(cmd: &'a str, data: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        cmd,
        "--set",
        data,
        "--set",
        "epochs=1",
        "--set",
        "warmup_epochs=0",
        "--set",
        "batch_size=4",
        "--set",
        "train_height=32",
        "--set",
        "train_width=32",
        "--out",
        out,
    ]
}

#[test]
fn binary_exit_codes() {
    let usage = Command::new(BIN).arg("no-such-command").output().unwrap();
    assert_eq!(usage.status.code(), Some(1));
    let help = Command::new(BIN).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let bad = Command::new(BIN)
        .args(["train", "--set", "tau=-1", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("tau"));

    let missing = Command::new(BIN)
        .args(["train", "--set", "train_manifest=/nonexistent/train.jsonl", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn unknown_key_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&["train", "--set", "warp_speed=9", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("warp_speed"));
}

#[test]
fn losscheck_passes() {
    let (code, out, _) = run(&["losscheck"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.lines().count() > 20);
    assert!(!out.contains("FAIL"));
}

#[test]
fn generated_manifests_are_loadable() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 3, 2);
    let (m, samples) = rgbd_distill::data::load_dataset(
        dir.path().join("train.jsonl"),
        rgbd_distill::config::DepthNorm::Divisor,
        255,
    )
    .unwrap();
    assert_eq!((m.num_classes, samples.len()), (4, 3));
    assert_eq!((samples[0].height(), samples[0].width()), (32, 32));
    let (_, test) = rgbd_distill::data::load_dataset(
        dir.path().join("test.jsonl"),
        rgbd_distill::config::DepthNorm::Divisor,
        255,
    )
    .unwrap();
    assert_eq!(test.len(), 2);
}

#[test]
fn train_then_eval_then_resume() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 8, 4);
    let data = format!("train_manifest={}", dir.path().join("train.jsonl").display());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let (code, _, err) = run(&train_args("train", &data, out_s));
    assert_eq!(code, 0, "{err}");
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(out.join("model.safetensors").exists() && out.join("last.safetensors").exists());

    let test = dir.path().join("test.jsonl");
    let eval_out = dir.path().join("eval");
    let args = [
        "eval".to_owned(),
        "--checkpoint".to_owned(),
        out.join("model.safetensors").to_str().unwrap().to_owned(),
        "--manifest".to_owned(),
        test.to_str().unwrap().to_owned(),
        "--out".to_owned(),
        eval_out.to_str().unwrap().to_owned(),
    ];
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let (code, _, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(eval_out.join("eval.json")).unwrap()).unwrap();
    let nets = report["networks"].as_array().unwrap();
    assert_eq!(nets.len(), 2);
    for n in nets {
        let miou = n[1]["mean"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&miou));
    }

    let last = out.join("last.safetensors");
    let args = ["train", "--resume", last.to_str().unwrap(), "--set", "epochs=2", "--out", out_s];
    let (code, _, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().last().unwrap().split(',').next(), Some("2"));

    let args = ["train", "--resume", last.to_str().unwrap(), "--set", "num_classes=5", "--out", out_s];
    assert_eq!(run(&args).0, 2);
}

#[test]
fn baselines_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 8, 0);
    let data = format!("train_manifest={}", dir.path().join("train.jsonl").display());

    let single = dir.path().join("single");
    let mut args = train_args("train-single", &data, single.to_str().unwrap());
    args.extend(["--modality", "depth"]);
    assert_eq!(run(&args).0, 0);
    assert!(single.join("model.safetensors").exists());

    let teacher = dir.path().join("teacher");
    assert_eq!(run(&train_args("train-teacher", &data, teacher.to_str().unwrap())).0, 0);
    let teacher_ck = teacher.join("model.safetensors");
    assert!(teacher_ck.exists());

    let kd = dir.path().join("kd");
    let mut args = train_args("train-kd-baseline", &data, kd.to_str().unwrap());
    args.extend(["--teacher", teacher_ck.to_str().unwrap(), "--modality", "rgb", "--alpha", "0.5"]);
    let (code, _, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    assert!(kd.join("model.safetensors").exists());

    let mut args = train_args("train-kd-baseline", &data, kd.to_str().unwrap());
    args.extend(["--teacher", teacher_ck.to_str().unwrap(), "--modality", "rgb", "--alpha", "1.5"]);
    assert_eq!(run(&args).0, 2);
}

#[test]
fn shipped_config_is_valid() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tiny.cfg");
    let cfg = rgbd_distill::TrainConfig::load(path).unwrap().validate().unwrap();
    assert_eq!(cfg, rgbd_distill::TrainConfig {
        train_manifest: "data/train.jsonl".into(),
        eval_manifest: "data/test.jsonl".into(),
        ..Default::default()
    });
}
