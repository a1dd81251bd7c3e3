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

//! Conventional baselines: a multimodal fusion teacher, and a single-modality
//! student distilled from it.
//!
//! Plain single-modality training is [`Trainer`] with
//! [`Branches::Single`](crate::training::Branches::Single).

use crate::augment::AugMode;
use crate::checkpoint::{self, Checkpoint, CheckpointMeta};
use crate::config::TrainConfig;
use crate::data::{iterate_batches, Split};
use crate::error::{Error, Result};
use crate::eval::{miou, ConfusionMatrix, IouReport};
use crate::losses::{cross_entropy, kd_loss};
use crate::model::{Decoder, DecoderCache, Encoder, EncoderCache, ModalityNet, Preset};
use crate::nn::{join, Mode, Param, Parameterized};
use crate::optim::AdamW;
use crate::rng::{stream, tag};
use crate::tensor::Tensor;
use crate::training::{
    check_finite, evaluate_net, group_names, init_net, modality_index, Branches, Learner, Trainer,
};
use crate::types::{Batch, LossReport, Modality, RgbdSample, SegLogits};
use std::collections::BTreeMap;
use std::path::Path;

const TEACHER_GROUP: u64 = 3;

/// Checkpoint prefixes of the teacher's parameter groups.
pub const TEACHER_GROUPS: [&str; 3] = ["teacher_enc_rgb", "teacher_enc_d", "teacher_dec"];

/// Two encoders whose outputs are concatenated along channels and decoded by
/// one decoder of input width `2F`.
#[derive(Clone, Debug)]
pub struct FusionTeacher {
    pub rgb: Encoder,
    pub depth: Encoder,
    pub decoder: Decoder,
    classes: usize,
}

pub struct TeacherCache {
    rgb: EncoderCache,
    depth: EncoderCache,
    decoder: DecoderCache,
    features: usize,
    skip_channels: usize,
}

impl FusionTeacher {
    pub fn new(preset: Preset, classes: usize, seed: u64) -> Self {
        let mut rng = stream(seed, &[tag::INIT, TEACHER_GROUP]);
        let rgb = preset.encoder(Modality::Rgb.channels(), &mut rng);
        let depth = preset.encoder(Modality::Depth.channels(), &mut rng);
        let skip = rgb.skip_channels() + depth.skip_channels();
        let decoder = preset.decoder(2 * preset.features, skip, classes, &mut rng);
        Self {
            rgb,
            depth,
            decoder,
            classes,
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        let mut t = Self::new(Preset::for_backbone(cfg.backbone), cfg.num_classes, cfg.seed);
        t.set_frozen_bn(cfg.freeze_bn_stats);
        t
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn set_frozen_bn(&mut self, frozen: bool) {
        self.rgb.set_frozen_bn(frozen);
        self.depth.set_frozen_bn(frozen);
        self.decoder.set_frozen_bn(frozen);
    }

    /// Logits from the fused features of a paired batch. Both inputs are
    /// required and must agree in batch size and resolution.
    pub fn forward(
        &mut self,
        rgb: Option<&Tensor>,
        depth: Option<&Tensor>,
        mode: Mode,
    ) -> Result<(SegLogits, TeacherCache)> {
        let (Some(rgb), Some(depth)) = (rgb, depth) else {
            return Err(Error::invalid("the fusion teacher needs both the RGB and the depth input"));
        };
        for (x, m) in [(rgb, Modality::Rgb), (depth, Modality::Depth)] {
            if x.channels() != m.channels() {
                return Err(Error::shape(format!(
                    "{m} input has {} channels, expected {}",
                    x.channels(),
                    m.channels()
                )));
            }
        }
        let ([b1, h1, w1, _], [b2, h2, w2, _]) = (rgb.dims(), depth.dims());
        if (b1, h1, w1) != (b2, h2, w2) {
            return Err(Error::shape(format!(
                "unpaired inputs: RGB {b1}×{h1}×{w1}, depth {b2}×{h2}×{w2}"
            )));
        }
        let (zr, sr, cr) = self.rgb.forward(rgb, mode)?;
        let (zd, sd, cd) = self.depth.forward(depth, mode)?;
        let fused = Tensor::concat_channels(&zr, &zd)?;
        let skip = match (sr, sd) {
            (Some(a), Some(b)) => Some(Tensor::concat_channels(&a, &b)?),
            _ => None,
        };
        let skip_channels = skip.as_ref().map_or(0, |s| s.channels() / 2);
        let (logits, decoder) = self.decoder.forward(&fused, skip.as_ref(), (h1, w1), mode)?;
        Ok((
            SegLogits(logits),
            TeacherCache {
                rgb: cr,
                depth: cd,
                decoder,
                features: zr.channels(),
                skip_channels,
            },
        ))
    }

    pub fn backward(&mut self, cache: TeacherCache, grad: &Tensor) {
        let (gz, gskip) = self.decoder.backward(cache.decoder, grad);
        let (gr, gd) = gz.split_channels(cache.features).expect("fused gradient splits");
        let (sr, sd) = match gskip {
            Some(g) => {
                let (a, b) = g.split_channels(cache.skip_channels).expect("skip gradient splits");
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        self.rgb.backward(cache.rgb, gr, sr);
        self.depth.backward(cache.depth, gd, sd);
    }

    pub fn predict(&mut self, rgb: &Tensor, depth: &Tensor) -> Result<SegLogits> {
        Ok(self.forward(Some(rgb), Some(depth), Mode::Eval)?.0)
    }

    fn groups(&self) -> [(&'static str, &dyn Parameterized); 3] {
        [
            (TEACHER_GROUPS[0], &self.rgb),
            (TEACHER_GROUPS[1], &self.depth),
            (TEACHER_GROUPS[2], &self.decoder),
        ]
    }

    /// Restores a teacher from any checkpoint holding the teacher groups.
    pub fn restore(ck: &Checkpoint) -> Result<Self> {
        let cfg = TrainConfig::parse_str(&ck.meta.config)?;
        let mut t = Self::from_config(&cfg);
        ck.restore(TEACHER_GROUPS[0], &mut t.rgb)?;
        ck.restore(TEACHER_GROUPS[1], &mut t.depth)?;
        ck.restore(TEACHER_GROUPS[2], &mut t.decoder)?;
        Ok(t)
    }
}

impl Parameterized for FusionTeacher {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.rgb.visit(&join(prefix, "enc_rgb"), f);
        self.depth.visit(&join(prefix, "enc_d"), f);
        self.decoder.visit(&join(prefix, "dec"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.rgb.visit_mut(&join(prefix, "enc_rgb"), f);
        self.depth.visit_mut(&join(prefix, "enc_d"), f);
        self.decoder.visit_mut(&join(prefix, "dec"), f);
    }
}

/// Confusion matrix of the teacher's fused predictions.
pub fn teacher_confusion(t: &mut FusionTeacher, samples: &[RgbdSample], cfg: &TrainConfig) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(cfg.num_classes);
    for batch in iterate_batches(samples, cfg.batch_size, cfg.seed, 0, Split::Test) {
        let owned: Vec<RgbdSample> = batch.into_iter().cloned().collect();
        let b = Batch::from_samples(&owned)?;
        let logits = t.predict(b.input(Modality::Rgb), b.input(Modality::Depth))?;
        cm.accumulate(&logits.predictions(), b.labels(Modality::Rgb), cfg.ignore_index)?;
    }
    Ok(cm)
}

/// Cross-entropy training of the fusion teacher on shared-transform views.
///
/// Metrics rows carry the fused loss in `total` and the fused mIoU in both
/// mIoU columns.
#[derive(Clone, Debug)]
pub struct TeacherTrainer {
    pub cfg: TrainConfig,
    pub teacher: FusionTeacher,
    pub opt: AdamW,
    pub epoch: usize,
    pub step: u64,
}

impl TeacherTrainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        let cfg = cfg.validate()?;
        Ok(Self {
            teacher: FusionTeacher::from_config(&cfg),
            opt: AdamW::from_config(&cfg),
            cfg,
            epoch: 0,
            step: 0,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        if ck.meta.kind != "teacher" {
            return Err(Error::Checkpoint(format!("expected a teacher checkpoint, found `{}`", ck.meta.kind)));
        }
        let mut t = Self::new(TrainConfig::parse_str(&ck.meta.config)?)?;
        t.teacher = FusionTeacher::restore(&ck)?;
        ck.restore_optimizer(&mut t.opt)?;
        t.epoch = ck.meta.epoch;
        t.step = ck.meta.step;
        Ok(t)
    }
}

impl Learner for TeacherTrainer {
    fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn epoch(&self) -> usize {
        self.epoch
    }

    fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    fn global_step(&self) -> u64 {
        self.step
    }

    fn aug_mode(&self) -> AugMode {
        AugMode::Shared(Modality::Rgb)
    }

    fn train_step(&mut self, batch: &Batch) -> Result<LossReport> {
        let lr = crate::schedule::lr_at(self.epoch.min(self.cfg.epochs) as f64, &self.cfg)?;
        let (logits, cache) = self.teacher.forward(
            Some(batch.input(Modality::Rgb)),
            Some(batch.input(Modality::Depth)),
            Mode::Train,
        )?;
        let (ce, grad) = cross_entropy(&logits.0.to_f64(), batch.labels(Modality::Rgb), self.cfg.ignore_index)?;
        let report = LossReport {
            total: check_finite("teacher_ce", ce)?,
            ..Default::default()
        };
        self.teacher.zero_grad();
        self.teacher.backward(cache, &grad.to_f32());
        for (name, module) in [
            (TEACHER_GROUPS[0], &mut self.teacher.rgb as &mut dyn Parameterized),
            (TEACHER_GROUPS[1], &mut self.teacher.depth),
            (TEACHER_GROUPS[2], &mut self.teacher.decoder),
        ] {
            self.opt.step(name, module, lr);
        }
        self.step += 1;
        Ok(report)
    }

    fn evaluate(&mut self, samples: &[RgbdSample]) -> Result<[Option<IouReport>; 2]> {
        let r = miou(&teacher_confusion(&mut self.teacher, samples, &self.cfg)?)?;
        Ok([Some(r.clone()), Some(r)])
    }

    fn save(&self, path: &Path, deploy: bool) -> Result<()> {
        let meta = CheckpointMeta {
            kind: "teacher".into(),
            epoch: self.epoch,
            step: self.step,
            config: self.cfg.to_text(),
            extra: BTreeMap::new(),
        };
        checkpoint::save(path, &meta, &self.teacher.groups(), (!deploy).then_some(&self.opt))
    }
}

/// Fresh single-modality trainer, the undistilled baseline.
pub fn single_modality_trainer(cfg: TrainConfig, m: Modality) -> Result<Trainer> {
    Trainer::new(cfg, Branches::Single(m))
}

/// A single-modality student trained with `α·CE + (1 − α)·KL(teacher ‖ student)`
/// against a frozen fusion teacher.
///
/// The student is initialised and augmented exactly like the single-modality
/// baseline, so `α = 1` reproduces that baseline.
#[derive(Clone, Debug)]
pub struct KdTrainer {
    pub cfg: TrainConfig,
    pub modality: Modality,
    pub student: ModalityNet,
    pub teacher: FusionTeacher,
    pub alpha: f64,
    pub opt: AdamW,
    pub epoch: usize,
    pub step: u64,
}

impl KdTrainer {
    pub fn new(cfg: TrainConfig, teacher: FusionTeacher, m: Modality, alpha: f64) -> Result<Self> {
        let cfg = cfg.validate()?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config(format!("kd alpha {alpha} outside [0, 1]")));
        }
        if teacher.num_classes() != cfg.num_classes {
            return Err(Error::config(format!(
                "teacher predicts {} classes, student {}",
                teacher.num_classes(),
                cfg.num_classes
            )));
        }
        let student = init_net(&cfg, m);
        if teacher.decoder.in_channels() != 2 * student.features() {
            return Err(Error::config(format!(
                "teacher fuses {} channels, student encoder yields {}",
                teacher.decoder.in_channels(),
                student.features()
            )));
        }
        Ok(Self {
            opt: AdamW::from_config(&cfg),
            cfg,
            modality: m,
            student,
            teacher,
            alpha,
            epoch: 0,
            step: 0,
        })
    }

    /// Student trainer distilling from the teacher stored at `teacher_ckpt`.
    pub fn from_teacher_checkpoint(cfg: TrainConfig, teacher_ckpt: impl AsRef<Path>, m: Modality, alpha: f64) -> Result<Self> {
        let ck = Checkpoint::load(teacher_ckpt)?;
        Self::new(cfg, FusionTeacher::restore(&ck)?, m, alpha)
    }

    /// Rebuilds a student trainer from its own checkpoint, which embeds the
    /// teacher.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        if ck.meta.kind != "kd" {
            return Err(Error::Checkpoint(format!("expected a kd checkpoint, found `{}`", ck.meta.kind)));
        }
        let field = |k: &str| {
            ck.meta
                .extra
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("kd checkpoint without `{k}`")))
        };
        let m: Modality = field("modality")?.parse()?;
        let alpha: f64 = field("alpha")?
            .parse()
            .map_err(|_| Error::Checkpoint("unreadable kd alpha".into()))?;
        let cfg = TrainConfig::parse_str(&ck.meta.config)?;
        let mut t = Self::new(cfg, FusionTeacher::restore(&ck)?, m, alpha)?;
        let (e, d) = group_names(m);
        ck.restore(e, &mut t.student.encoder)?;
        ck.restore(d, &mut t.student.decoder)?;
        ck.restore_optimizer(&mut t.opt)?;
        t.epoch = ck.meta.epoch;
        t.step = ck.meta.step;
        Ok(t)
    }
}

impl Learner for KdTrainer {
    fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn epoch(&self) -> usize {
        self.epoch
    }

    fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    fn global_step(&self) -> u64 {
        self.step
    }

    fn aug_mode(&self) -> AugMode {
        AugMode::Shared(self.modality)
    }

    fn train_step(&mut self, batch: &Batch) -> Result<LossReport> {
        let m = self.modality;
        let lr = crate::schedule::lr_at(self.epoch.min(self.cfg.epochs) as f64, &self.cfg)?;
        let teacher = self
            .teacher
            .predict(batch.input(Modality::Rgb), batch.input(Modality::Depth))?;
        let x = batch.input(m);
        let (v, enc) = self.student.encode(x, Mode::Train)?;
        let (logits, dec) =
            self.student
                .decode_main(&v.inv, &v.spc, v.skip.as_ref(), (x.height(), x.width()), Mode::Train)?;
        let (loss, grad) = kd_loss(
            &logits.0.to_f64(),
            &teacher.0.to_f64(),
            batch.labels(m),
            self.alpha,
            self.cfg.ignore_index,
        )?;
        let mut report = LossReport::default();
        report.terms_mut(m).seg = check_finite(&format!("kd_{}", m.tag()), loss)?;
        report.total = report.terms(m).seg;

        self.student.zero_grad();
        let g = self.student.decode_main_backward(dec, &grad.to_f32());
        self.student.encode_backward(enc, &g.inv, &g.spc, g.skip);
        let (e, d) = group_names(m);
        self.opt.step(e, &mut self.student.encoder, lr);
        self.opt.step(d, &mut self.student.decoder, lr);
        self.step += 1;
        Ok(report)
    }

    fn evaluate(&mut self, samples: &[RgbdSample]) -> Result<[Option<IouReport>; 2]> {
        let mut out = [None, None];
        out[modality_index(self.modality) as usize] = Some(evaluate_net(&mut self.student, samples, &self.cfg)?);
        Ok(out)
    }

    fn save(&self, path: &Path, deploy: bool) -> Result<()> {
        let (e, d) = group_names(self.modality);
        let mut groups: Vec<(&str, &dyn Parameterized)> = vec![(e, &self.student.encoder), (d, &self.student.decoder)];
        if !deploy {
            groups.extend(self.teacher.groups());
        }
        let mut extra = BTreeMap::from([
            ("modality".to_string(), self.modality.to_string()),
            ("alpha".to_string(), self.alpha.to_string()),
        ]);
        if deploy {
            extra.insert("deploy".into(), "true".into());
        }
        let meta = CheckpointMeta {
            kind: "kd".into(),
            epoch: self.epoch,
            step: self.step,
            config: self.cfg.to_text(),
            extra,
        };
        checkpoint::save(path, &meta, &groups, (!deploy).then_some(&self.opt))
    }
}

/// Modality networks stored in any checkpoint that carries them: joint,
/// single-modality and distilled students.
pub fn load_modality_nets(ck: &Checkpoint) -> Result<Vec<ModalityNet>> {
    let cfg = TrainConfig::parse_str(&ck.meta.config)?;
    let mut nets = Vec::new();
    for m in Modality::BOTH {
        let (e, d) = group_names(m);
        if ck.has_group(e) && ck.has_group(d) {
            let mut net = init_net(&cfg, m);
            ck.restore(e, &mut net.encoder)?;
            ck.restore(d, &mut net.decoder)?;
            nets.push(net);
        }
    }
    Ok(nets)
}
