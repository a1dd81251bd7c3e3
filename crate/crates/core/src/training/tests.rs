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

use super::*;
use crate::data::generate_synthetic;

fn small_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        warmup_epochs: 0,
        batch_size: 2,
        lr_target: 1e-3,
        train_height: 32,
        train_width: 32,
        seed: 11,
        ..Default::default()
    }
}

fn samples(n: usize) -> Vec<RgbdSample> {
    generate_synthetic(5, n, 32, 32, 4).unwrap()
}

fn first_batch(t: &Trainer, data: &[RgbdSample]) -> Batch {
    make_batch(t, data, &[0, 1]).unwrap()
}

fn snapshot(p: &dyn Parameterized) -> Vec<(String, Vec<f32>)> {
    let mut out = Vec::new();
    p.visit("", &mut |n, p| out.push((n.to_string(), p.value.clone())));
    out
}

fn net_snapshot(t: &Trainer, m: Modality) -> Vec<(String, Vec<f32>)> {
    let net = t.net(m).unwrap();
    let mut s = snapshot(&net.encoder);
    s.extend(snapshot(&net.decoder));
    s
}

#[test]
fn toggles_off_total_is_sum_of_segmentation_terms() {
    let cfg = TrainConfig {
        use_orth: false,
        use_con: false,
        use_aux: false,
        use_mixup: false,
        ..small_cfg()
    };
    let data = samples(4);
    let mut t = Trainer::new(cfg, Branches::Joint).unwrap();
    let r = t.train_step(&first_batch(&t, &data)).unwrap();
    for m in Modality::BOTH {
        let v = r.terms(m);
        assert!(v.seg > 0.0);
        assert_eq!((v.orth, v.con, v.aux), (0.0, 0.0, 0.0));
    }
    assert!((r.total - (r.rgb.seg + r.depth.seg)).abs() < 1e-12);
}

#[test]
fn zero_mixing_weight_matches_disabled_mixup() {
    let data = samples(4);
    let mut a = Trainer::new(TrainConfig { mixup_lambda: 0.0, ..small_cfg() }, Branches::Joint).unwrap();
    let mut b = Trainer::new(TrainConfig { use_mixup: false, ..small_cfg() }, Branches::Joint).unwrap();
    for _ in 0..2 {
        let ra = a.train_step(&first_batch(&a, &data)).unwrap();
        let rb = b.train_step(&first_batch(&b, &data)).unwrap();
        assert_eq!(ra, rb);
    }
    for m in Modality::BOTH {
        assert_eq!(net_snapshot(&a, m), net_snapshot(&b, m));
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let data = samples(4);
    let run = || {
        let mut t = Trainer::new(small_cfg(), Branches::Joint).unwrap();
        let (_, reports) = run_epoch(&mut t, &data).unwrap();
        (reports, net_snapshot(&t, Modality::Rgb), snapshot(t.aux.as_ref().unwrap()))
    };
    assert_eq!(run(), run());
}

#[test]
fn auxiliary_decoder_frozen_when_disabled() {
    let data = samples(4);
    let mut t = Trainer::new(TrainConfig { use_aux: false, ..small_cfg() }, Branches::Joint).unwrap();
    let before = snapshot(t.aux.as_ref().unwrap());
    run_epoch(&mut t, &data).unwrap();
    assert_eq!(snapshot(t.aux.as_ref().unwrap()), before);
    assert!(!t.opt.state.keys().any(|k| k.starts_with("dec_aux")));
}

#[test]
fn every_group_receives_gradient() {
    let data = samples(4);
    let mut t = Trainer::new(small_cfg(), Branches::Joint).unwrap();
    t.train_step(&first_batch(&t, &data)).unwrap();
    for m in Modality::BOTH {
        let net = t.net(m).unwrap();
        assert!(net.encoder.grad_norm() > 0.0, "{m} encoder");
        assert!(net.decoder.grad_norm() > 0.0, "{m} decoder");
    }
    assert!(t.aux.as_ref().unwrap().grad_norm() > 0.0);
}

#[test]
fn step_with_all_terms_reports_them() {
    let data = samples(4);
    let mut t = Trainer::new(small_cfg(), Branches::Joint).unwrap();
    let r = t.train_step(&first_batch(&t, &data)).unwrap();
    for m in Modality::BOTH {
        let v = r.terms(m);
        assert!(v.seg > 0.0 && v.orth >= 0.0 && v.con > 0.0 && v.aux > 0.0, "{m}: {v:?}");
    }
    assert!((r.total - r.sum_of_terms()).abs() < 1e-12);
}

#[test]
fn contrastive_needs_two_samples() {
    let data = samples(4);
    let mut t = Trainer::new(small_cfg(), Branches::Joint).unwrap();
    let batch = make_batch(&t, &data, &[0]).unwrap();
    assert!(matches!(t.train_step(&batch), Err(Error::InvalidArgument(_))));
}

#[test]
fn non_finite_input_names_the_term() {
    let data = samples(4);
    let mut t = Trainer::new(small_cfg(), Branches::Joint).unwrap();
    let mut batch = first_batch(&t, &data);
    batch.rgb.data_mut()[0] = f32::NAN;
    match t.train_step(&batch) {
        Err(Error::NonFinite { term }) => assert_eq!(term, "seg_rgb"),
        other => panic!("expected a non-finite diagnostic, got {other:?}"),
    }
}

#[test]
fn single_modality_matches_joint_with_terms_off() {
    let data = samples(4);
    let cfg = TrainConfig {
        use_orth: false,
        use_con: false,
        use_aux: false,
        use_mixup: false,
        ..small_cfg()
    };
    let mut joint = Trainer::new(cfg.clone(), Branches::Joint).unwrap();
    let mut single = Trainer::new(cfg, Branches::Single(Modality::Depth)).unwrap();
    let (_, rj) = run_epoch(&mut joint, &data).unwrap();
    let (_, rs) = run_epoch(&mut single, &data).unwrap();
    for (a, b) in rj.iter().zip(&rs) {
        assert_eq!(a.depth.seg, b.depth.seg);
    }
    assert_eq!(net_snapshot(&joint, Modality::Depth), net_snapshot(&single, Modality::Depth));
}

#[test]
fn single_modality_forces_optional_terms_off() {
    let t = Trainer::new(small_cfg(), Branches::Single(Modality::Rgb)).unwrap();
    assert!(t.depth.is_none() && t.aux.is_none());
    assert_eq!(t.toggles(), LossToggles { orth: false, con: false, aux: false });
    assert!(!t.cfg.use_mixup);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let data = samples(4);
    let mut t = Trainer::new(small_cfg(), Branches::Joint).unwrap();
    run_epoch(&mut t, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.safetensors");
    t.save(&path, false).unwrap();
    let mut back = Trainer::load(&path).unwrap();
    assert_eq!((back.epoch, back.step), (t.epoch, t.step));
    let batch = Batch::from_samples(&data[..2]).unwrap();
    for m in Modality::BOTH {
        let a = t.net_mut(m).unwrap().predict(batch.input(m)).unwrap();
        let b = back.net_mut(m).unwrap().predict(batch.input(m)).unwrap();
        assert_eq!(a.0, b.0);
    }
    assert_eq!(snapshot(t.aux.as_ref().unwrap()), snapshot(back.aux.as_ref().unwrap()));
}

#[test]
fn resume_continues_where_training_stopped() {
    let data = samples(4);
    let cfg = TrainConfig { warmup_epochs: 1, ..small_cfg() };
    let mut straight = Trainer::new(cfg.clone(), Branches::Joint).unwrap();
    let (lr0, _) = run_epoch(&mut straight, &data).unwrap();
    let (lr1, _) = run_epoch(&mut straight, &data).unwrap();
    assert_ne!(lr0, lr1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("last.safetensors");
    let mut first = Trainer::new(cfg, Branches::Joint).unwrap();
    run_epoch(&mut first, &data).unwrap();
    first.save(&path, false).unwrap();
    let mut resumed = Trainer::load(&path).unwrap();
    assert_eq!(resumed.epoch, 1);
    let (lr, _) = run_epoch(&mut resumed, &data).unwrap();
    assert_eq!(lr, lr1);
    for m in Modality::BOTH {
        assert_eq!(net_snapshot(&resumed, m), net_snapshot(&straight, m));
    }
    assert_eq!(snapshot(resumed.aux.as_ref().unwrap()), snapshot(straight.aux.as_ref().unwrap()));
}

#[test]
fn deploy_checkpoint_omits_training_state() {
    let t = Trainer::new(small_cfg(), Branches::Joint).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    t.save(&path, true).unwrap();
    let ck = Checkpoint::load(&path).unwrap();
    assert!(!ck.has_group("dec_aux"));
    assert!(ck.has_group("enc_rgb") && ck.has_group("dec_d"));
    assert!(ck.opt_steps.is_empty());
}

#[test]
fn one_epoch_fit_writes_one_metrics_row() {
    let data = samples(8);
    let cfg = TrainConfig { epochs: 1, checkpoint_every: 1, ..small_cfg() };
    let mut t = Trainer::new(cfg, Branches::Joint).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = FitPaths { out_dir: dir.path().to_path_buf() };
    let mut seen = 0;
    let rows = fit(&mut t, &data, None, &paths, &mut |_| seen += 1).unwrap();
    assert_eq!((rows.len(), seen), (1, 1));
    let text = std::fs::read_to_string(paths.metrics()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], METRICS_HEADER);
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields.len(), METRICS_HEADER.split(',').count());
    assert_eq!(fields[0], "1");
    assert!(fields[11].parse::<f64>().is_ok() && fields[12].parse::<f64>().is_ok());
    assert!(paths.epoch_checkpoint(1).exists());
    assert!(paths.last().exists() && paths.model().exists());
}

#[test]
fn fit_rejects_a_dataset_smaller_than_a_batch() {
    let data = samples(1);
    let mut t = Trainer::new(small_cfg(), Branches::Joint).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = FitPaths { out_dir: dir.path().to_path_buf() };
    assert!(fit(&mut t, &data, None, &paths, &mut |_| {}).is_err());
}
