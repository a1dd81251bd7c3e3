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

//! The joint training procedure and the shared epoch loop.
//!
//! One step: augment each modality's view, encode both modalities, mix the
//! invariant halves, decode the plain and mixed volumes with each main
//! decoder, decode every half with the auxiliary decoder, evaluate the
//! segmentation, auxiliary, orthogonality and contrastive terms, and apply a
//! single optimizer update to all parameter groups whose losses are enabled.

use crate::augment::{augment_batch, AugMode, StepKey};
use crate::checkpoint::{self, Checkpoint, CheckpointMeta};
use crate::config::TrainConfig;
use crate::data::{batch_indices, iterate_batches, Split};
use crate::error::{Error, Result};
use crate::eval::{miou, ConfusionMatrix, IouReport};
use crate::losses::{
    aux_loss, contrastive_loss, feature_mixup, orthogonality_loss, pool_normalize, pool_normalize_backward,
    seg_loss, total_loss, LossToggles,
};
use crate::model::{AuxDecoder, ModalityNet, Preset};
use crate::nn::{Mode, Parameterized};
use crate::optim::AdamW;
use crate::rng::{stream, tag};
use crate::schedule::lr_at;
use crate::tensor::Tensor;
use crate::types::{Batch, LabelMap, LossReport, Modality, RgbdSample, SegLogits};
use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Header of the per-epoch metrics log.
pub const METRICS_HEADER: &str = "epoch,lr,seg_rgb,seg_d,orth_rgb,orth_d,con_rgb,con_d,aux_rgb,aux_d,total,miou_rgb,miou_d";

pub(crate) fn modality_index(m: Modality) -> u64 {
    match m {
        Modality::Rgb => 0,
        Modality::Depth => 1,
    }
}

/// Initialization stream of a parameter group.
pub(crate) fn init_stream(seed: u64, group: u64) -> rand_chacha::ChaCha8Rng {
    stream(seed, &[tag::INIT, group])
}

pub(crate) const AUX_GROUP: u64 = 2;

/// Checkpoint prefixes of a modality's encoder and main decoder.
pub fn group_names(m: Modality) -> (&'static str, &'static str) {
    match m {
        Modality::Rgb => ("enc_rgb", "dec_rgb"),
        Modality::Depth => ("enc_d", "dec_d"),
    }
}

/// The modality network initialised exactly as in every trainer.
pub fn init_net(cfg: &TrainConfig, m: Modality) -> ModalityNet {
    let preset = Preset::for_backbone(cfg.backbone);
    let mut net = ModalityNet::new(m, preset, cfg.num_classes, &mut init_stream(cfg.seed, modality_index(m)));
    net.set_frozen_bn(cfg.freeze_bn_stats);
    net
}

pub(crate) fn check_finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term: name.to_string() })
    }
}

/// Which networks a trainer holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branches {
    /// Both modality networks plus the auxiliary decoder.
    Joint,
    /// One modality network trained with the segmentation loss only.
    Single(Modality),
}

/// Training state: networks, optimizer moments and counters.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub branches: Branches,
    pub rgb: Option<ModalityNet>,
    pub depth: Option<ModalityNet>,
    pub aux: Option<AuxDecoder>,
    pub opt: AdamW,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
}

/// Decoder outputs of one modality within a step.
struct Decoded {
    plain: (SegLogits, crate::model::DecodeCache),
    mixed: (SegLogits, crate::model::DecodeCache),
    aux: Option<[(SegLogits, crate::model::AuxCache); 2]>,
}

/// Gradients with respect to one modality's encoder outputs.
struct HalfGrads {
    inv: Tensor,
    spc: Tensor,
    skip: Option<Tensor>,
}

impl HalfGrads {
    fn add_skip(&mut self, g: Option<Tensor>) {
        match (&mut self.skip, g) {
            (Some(s), Some(g)) => s.add_assign(&g),
            (slot @ None, Some(g)) => *slot = Some(g),
            _ => {}
        }
    }
}

/// Logit gradients of one modality.
struct LogitGrads {
    plain: Tensor,
    mixed: Tensor,
    aux: Option<(Tensor, Tensor)>,
}

impl Trainer {
    /// Fresh trainer. `Single` branches force every optional term off.
    pub fn new(cfg: TrainConfig, branches: Branches) -> Result<Self> {
        let mut cfg = cfg.validate()?;
        if let Branches::Single(_) = branches {
            cfg.use_orth = false;
            cfg.use_con = false;
            cfg.use_aux = false;
            cfg.use_mixup = false;
        }
        let preset = Preset::for_backbone(cfg.backbone);
        let wants = |m: Modality| branches == Branches::Joint || branches == Branches::Single(m);
        let rgb = wants(Modality::Rgb).then(|| init_net(&cfg, Modality::Rgb));
        let depth = wants(Modality::Depth).then(|| init_net(&cfg, Modality::Depth));
        let aux = (branches == Branches::Joint).then(|| {
            let mut a = AuxDecoder::new(preset, cfg.num_classes, &mut init_stream(cfg.seed, AUX_GROUP));
            a.decoder.set_frozen_bn(cfg.freeze_bn_stats);
            a
        });
        Ok(Self {
            opt: AdamW::from_config(&cfg),
            cfg,
            branches,
            rgb,
            depth,
            aux,
            epoch: 0,
            step: 0,
        })
    }

    pub fn modalities(&self) -> Vec<Modality> {
        match self.branches {
            Branches::Joint => Modality::BOTH.to_vec(),
            Branches::Single(m) => vec![m],
        }
    }

    pub fn net(&self, m: Modality) -> Option<&ModalityNet> {
        match m {
            Modality::Rgb => self.rgb.as_ref(),
            Modality::Depth => self.depth.as_ref(),
        }
    }

    pub fn net_mut(&mut self, m: Modality) -> Option<&mut ModalityNet> {
        match m {
            Modality::Rgb => self.rgb.as_mut(),
            Modality::Depth => self.depth.as_mut(),
        }
    }

    fn active(&mut self, m: Modality) -> &mut ModalityNet {
        self.net_mut(m).expect("active modality has a network")
    }

    pub fn toggles(&self) -> LossToggles {
        LossToggles {
            orth: self.cfg.use_orth,
            con: self.cfg.use_con,
            aux: self.cfg.use_aux,
        }
    }

    /// Learning rate of the current epoch.
    pub fn lr(&self) -> Result<f64> {
        lr_at(self.epoch.min(self.cfg.epochs) as f64, &self.cfg)
    }

    /// Sets every gradient accumulator to zero.
    pub fn zero_grad(&mut self) {
        for net in [&mut self.rgb, &mut self.depth].into_iter().flatten() {
            net.zero_grad();
        }
        if let Some(aux) = &mut self.aux {
            aux.zero_grad();
        }
    }

    /// One optimizer step on an already augmented batch.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossReport> {
        let cfg = self.cfg.clone();
        let mods = self.modalities();
        let joint = mods.len() == 2;
        let mixup = joint && cfg.use_mixup;
        if joint && cfg.use_con && batch.size() < 2 {
            return Err(Error::invalid("contrastive loss needs a batch of at least two"));
        }
        let lr = self.lr()?;
        let ignore = cfg.ignore_index;

        let mut vols = Vec::with_capacity(mods.len());
        let mut encs = Vec::with_capacity(mods.len());
        for &m in &mods {
            let (v, c) = self.active(m).encode(batch.input(m), Mode::Train)?;
            vols.push(v);
            encs.push(c);
        }
        // Z̃_inv = λ·Z_inv(other) + (1 − λ)·Z_inv(own); the specific half is not mixed.
        let mixes = (0..mods.len())
            .map(|k| {
                if mixup {
                    feature_mixup(&vols[k].inv, &vols[1 - k].inv, cfg.mixup_lambda)
                } else {
                    Ok(vols[k].inv.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let mut decoded = Vec::with_capacity(mods.len());
        for (k, &m) in mods.iter().enumerate() {
            let v = &vols[k];
            let hw = (batch.input(m).height(), batch.input(m).width());
            let net = self.active(m);
            let plain = net.decode_main(&v.inv, &v.spc, v.skip.as_ref(), hw, Mode::Train)?;
            let mixed = net.decode_main(&mixes[k], &v.spc, v.skip.as_ref(), hw, Mode::Train)?;
            let aux = match (&mut self.aux, cfg.use_aux) {
                (Some(aux), true) => Some([
                    aux.decode_aux(&v.inv, hw, Mode::Train)?,
                    aux.decode_aux(&v.spc, hw, Mode::Train)?,
                ]),
                _ => None,
            };
            decoded.push(Decoded { plain, mixed, aux });
        }

        let mut report = LossReport::default();
        let mut halves: Vec<HalfGrads> = vols
            .iter()
            .map(|v| HalfGrads {
                inv: Tensor::zeros(v.inv.dims()),
                spc: Tensor::zeros(v.spc.dims()),
                skip: None,
            })
            .collect();
        let mut logit_grads = Vec::with_capacity(mods.len());
        for (k, &m) in mods.iter().enumerate() {
            let d = &decoded[k];
            let labels = batch.labels(m);
            let terms = report.terms_mut(m);
            let (seg, gp, gm) = seg_loss(&d.plain.0 .0.to_f64(), &d.mixed.0 .0.to_f64(), labels, ignore)?;
            terms.seg = check_finite(&format!("seg_{}", m.tag()), seg)?;
            let aux = match &d.aux {
                Some([(li, _), (ls, _)]) => {
                    let (a, gi, gs) = aux_loss(&li.0.to_f64(), &ls.0.to_f64(), labels, ignore)?;
                    terms.aux = check_finite(&format!("aux_{}", m.tag()), a)?;
                    Some((gi.to_f32(), gs.to_f32()))
                }
                None => None,
            };
            logit_grads.push(LogitGrads {
                plain: gp.to_f32(),
                mixed: gm.to_f32(),
                aux,
            });
            if cfg.use_orth {
                let (o, gi, gs) = orthogonality_loss(&vols[k].inv.to_f64(), &vols[k].spc.to_f64())?;
                terms.orth = check_finite(&format!("orth_{}", m.tag()), o)?;
                halves[k].inv.add_assign(&gi.to_f32());
                halves[k].spc.add_assign(&gs.to_f32());
            }
        }
        if joint && cfg.use_con {
            let pooled: Vec<_> = mods
                .iter()
                .zip(&vols)
                .map(|(&m, v)| pool_normalize(&v.inv.to_f64(), m))
                .collect();
            let mut rows = [vec![0.0; pooled[0].rows().len()], vec![0.0; pooled[1].rows().len()]];
            for (a, o) in [(0usize, 1usize), (1, 0)] {
                let (c, ga, go) = contrastive_loss(&pooled[a], &pooled[o], cfg.tau, cfg.con_include_positive)?;
                report.terms_mut(mods[a]).con = check_finite(&format!("con_{}", mods[a].tag()), c)?;
                rows[a].iter_mut().zip(&ga).for_each(|(r, g)| *r += g);
                rows[o].iter_mut().zip(&go).for_each(|(r, g)| *r += g);
            }
            for k in 0..2 {
                halves[k].inv.add_assign(&pool_normalize_backward(&pooled[k], &rows[k]).to_f32());
            }
        }
        report.total = check_finite("total", total_loss(&report, self.toggles()))?;

        self.zero_grad();
        let mut mix_grads = Vec::with_capacity(mods.len());
        for (k, (d, g)) in decoded.into_iter().zip(logit_grads).enumerate() {
            let m = mods[k];
            let net = self.active(m);
            let gp = net.decode_main_backward(d.plain.1, &g.plain);
            let gm = net.decode_main_backward(d.mixed.1, &g.mixed);
            let h = &mut halves[k];
            h.inv.add_assign(&gp.inv);
            h.spc.add_assign(&gp.spc);
            h.spc.add_assign(&gm.spc);
            h.add_skip(gp.skip);
            h.add_skip(gm.skip);
            mix_grads.push(gm.inv);
            if let (Some([(_, ci), (_, cs)]), Some((gi, gs))) = (d.aux, g.aux) {
                let aux = self.aux.as_mut().expect("aux decoder present");
                let gi = aux.decode_aux_backward(ci, &gi);
                let gs = aux.decode_aux_backward(cs, &gs);
                halves[k].inv.add_assign(&gi);
                halves[k].spc.add_assign(&gs);
            }
        }
        for (k, gmix) in mix_grads.into_iter().enumerate() {
            if mixup {
                let mut own = gmix.clone();
                own.scale((1.0 - cfg.mixup_lambda) as f32);
                let mut other = gmix;
                other.scale(cfg.mixup_lambda as f32);
                halves[k].inv.add_assign(&own);
                halves[1 - k].inv.add_assign(&other);
            } else {
                halves[k].inv.add_assign(&gmix);
            }
        }
        for ((&m, enc), h) in mods.iter().zip(encs).zip(halves) {
            self.active(m).encode_backward(enc, &h.inv, &h.spc, h.skip);
        }

        for &m in &mods {
            let (enc_name, dec_name) = group_names(m);
            let net = match m {
                Modality::Rgb => self.rgb.as_mut(),
                Modality::Depth => self.depth.as_mut(),
            }
            .expect("active modality has a network");
            self.opt.step(enc_name, &mut net.encoder, lr);
            self.opt.step(dec_name, &mut net.decoder, lr);
        }
        if let (Some(aux), true) = (&mut self.aux, cfg.use_aux) {
            self.opt.step("dec_aux", aux, lr);
        }
        self.step += 1;
        Ok(report)
    }

    /// Segmentation quality of each held network on unaugmented samples.
    pub fn evaluate(&mut self, samples: &[RgbdSample]) -> Result<[Option<IouReport>; 2]> {
        let cfg = self.cfg.clone();
        let mut out = [None, None];
        for m in self.modalities() {
            let net = self.active(m);
            out[modality_index(m) as usize] = Some(evaluate_net(net, samples, &cfg)?);
        }
        Ok(out)
    }

    fn meta(&self) -> CheckpointMeta {
        let (kind, extra) = match self.branches {
            Branches::Joint => ("joint", BTreeMap::new()),
            Branches::Single(m) => ("single", BTreeMap::from([("modality".to_string(), m.to_string())])),
        };
        CheckpointMeta {
            kind: kind.to_string(),
            epoch: self.epoch,
            step: self.step,
            config: self.cfg.to_text(),
            extra,
        }
    }

    /// Writes a checkpoint. A deploy checkpoint holds only the modality
    /// networks; a full one adds the auxiliary decoder and optimizer state.
    pub fn save(&self, path: impl AsRef<Path>, deploy: bool) -> Result<()> {
        let mut groups: Vec<(&str, &dyn Parameterized)> = Vec::new();
        for m in self.modalities() {
            let net = self.net(m).expect("active modality has a network");
            let (e, d) = group_names(m);
            groups.push((e, &net.encoder));
            groups.push((d, &net.decoder));
        }
        if let (Some(aux), false) = (&self.aux, deploy) {
            groups.push(("dec_aux", aux));
        }
        let mut meta = self.meta();
        if deploy {
            meta.extra.insert("deploy".into(), "true".into());
        }
        checkpoint::save(path, &meta, &groups, (!deploy).then_some(&self.opt))
    }

    /// Rebuilds a trainer from a checkpoint, restoring counters and, when
    /// present, the auxiliary decoder and optimizer moments.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let cfg = TrainConfig::parse_str(&ck.meta.config)?;
        let branches = match ck.meta.kind.as_str() {
            "joint" => Branches::Joint,
            "single" => Branches::Single(
                ck.meta
                    .extra
                    .get("modality")
                    .ok_or_else(|| Error::Checkpoint("single checkpoint without modality".into()))?
                    .parse()?,
            ),
            other => return Err(Error::Checkpoint(format!("`{other}` checkpoint is not a trainer state"))),
        };
        let mut t = Trainer::new(cfg, branches)?;
        for m in t.modalities() {
            let (e, d) = group_names(m);
            let net = t.net_mut(m).expect("active modality has a network");
            ck.restore(e, &mut net.encoder)?;
            ck.restore(d, &mut net.decoder)?;
        }
        if let Some(aux) = &mut t.aux {
            if ck.has_group("dec_aux") {
                ck.restore("dec_aux", aux)?;
            }
        }
        ck.restore_optimizer(&mut t.opt)?;
        t.epoch = ck.meta.epoch;
        t.step = ck.meta.step;
        Ok(t)
    }
}

/// Accumulates predictions of `net` over `samples` into a confusion matrix.
pub fn confusion(net: &mut ModalityNet, samples: &[RgbdSample], cfg: &TrainConfig) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(cfg.num_classes);
    for batch in iterate_batches(samples, cfg.batch_size, cfg.seed, 0, Split::Test) {
        let owned: Vec<RgbdSample> = batch.into_iter().cloned().collect();
        let b = Batch::from_samples(&owned)?;
        let logits = net.predict(b.input(net.modality))?;
        cm.accumulate(&logits.predictions(), b.labels(net.modality), cfg.ignore_index)?;
    }
    Ok(cm)
}

/// mIoU of `net` over `samples`.
pub fn evaluate_net(net: &mut ModalityNet, samples: &[RgbdSample], cfg: &TrainConfig) -> Result<IouReport> {
    miou(&confusion(net, samples, cfg)?)
}

/// A training procedure driven by [`fit`].
pub trait Learner {
    fn config(&self) -> &TrainConfig;
    /// Completed epochs.
    fn epoch(&self) -> usize;
    fn set_epoch(&mut self, epoch: usize);
    fn global_step(&self) -> u64;
    fn aug_mode(&self) -> AugMode;
    /// One optimizer step at the current epoch's learning rate.
    fn train_step(&mut self, batch: &Batch) -> Result<LossReport>;
    /// mIoU reported in the `miou_rgb` and `miou_d` columns.
    fn evaluate(&mut self, samples: &[RgbdSample]) -> Result<[Option<IouReport>; 2]>;
    fn save(&self, path: &Path, deploy: bool) -> Result<()>;
}

impl Learner for Trainer {
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
        match self.branches {
            Branches::Single(_) => AugMode::Decoupled,
            Branches::Joint if self.cfg.use_decoupled_aug => AugMode::Decoupled,
            Branches::Joint => AugMode::Shared(Modality::Rgb),
        }
    }

    fn train_step(&mut self, batch: &Batch) -> Result<LossReport> {
        Trainer::train_step(self, batch)
    }

    fn evaluate(&mut self, samples: &[RgbdSample]) -> Result<[Option<IouReport>; 2]> {
        Trainer::evaluate(self, samples)
    }

    fn save(&self, path: &Path, deploy: bool) -> Result<()> {
        Trainer::save(self, path, deploy)
    }
}

/// Augments the batch of sample indices `idx` for the learner's next step.
pub fn make_batch<L: Learner + ?Sized>(l: &L, samples: &[RgbdSample], idx: &[usize]) -> Result<Batch> {
    let cfg = l.config();
    let chosen: Vec<RgbdSample> = idx.iter().map(|&i| samples[i].clone()).collect();
    let key = StepKey {
        seed: cfg.seed,
        epoch: l.epoch() as u64,
        step: l.global_step(),
    };
    augment_batch(&chosen, key, l.aug_mode(), &cfg.aug, (cfg.train_height, cfg.train_width))
}

/// Runs one epoch and returns the learning rate used and every step's report.
pub fn run_epoch<L: Learner + ?Sized>(l: &mut L, samples: &[RgbdSample]) -> Result<(f64, Vec<LossReport>)> {
    let cfg = l.config().clone();
    let lr = lr_at(l.epoch().min(cfg.epochs) as f64, &cfg)?;
    let batches = batch_indices(samples.len(), cfg.batch_size, cfg.seed, l.epoch() as u64, Split::Train);
    if batches.is_empty() {
        return Err(Error::invalid(format!(
            "{} training samples do not fill one batch of {}",
            samples.len(),
            cfg.batch_size
        )));
    }
    let mut reports = Vec::with_capacity(batches.len());
    for idx in &batches {
        let batch = make_batch(l, samples, idx)?;
        reports.push(l.train_step(&batch)?);
    }
    l.set_epoch(l.epoch() + 1);
    Ok((lr, reports))
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    pub report: LossReport,
    pub miou: [Option<f64>; 2],
    pub seconds: f64,
}

impl EpochRow {
    pub fn csv(&self) -> String {
        let mut fields = vec![self.epoch.to_string(), format!("{:e}", self.lr)];
        fields.extend(self.report.named().iter().map(|(_, v)| format!("{v:.8}")));
        fields.extend(self.miou.iter().map(|v| v.map(|v| format!("{v:.6}")).unwrap_or_default()));
        fields.join(",")
    }
}

/// Output layout of [`fit`].
#[derive(Clone, Debug)]
pub struct FitPaths {
    pub out_dir: PathBuf,
}

impl FitPaths {
    pub fn metrics(&self) -> PathBuf {
        self.out_dir.join("metrics.csv")
    }

    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.out_dir.join("checkpoints").join(format!("epoch_{epoch:04}.safetensors"))
    }

    /// Full resumable state after the last epoch.
    pub fn last(&self) -> PathBuf {
        self.out_dir.join("last.safetensors")
    }

    /// Deployable networks only.
    pub fn model(&self) -> PathBuf {
        self.out_dir.join("model.safetensors")
    }
}

/// Trains from the learner's current epoch to `epochs`, appending one
/// metrics row per epoch, checkpointing every `checkpoint_every` epochs and
/// at the end. Evaluation uses `eval` when given, the training samples
/// otherwise.
pub fn fit<L: Learner + ?Sized>(
    l: &mut L,
    train: &[RgbdSample],
    eval: Option<&[RgbdSample]>,
    paths: &FitPaths,
    progress: &mut dyn FnMut(&EpochRow),
) -> Result<Vec<EpochRow>> {
    fs::create_dir_all(&paths.out_dir)?;
    let metrics = paths.metrics();
    let fresh = !metrics.exists();
    let mut log = OpenOptions::new().create(true).append(true).open(&metrics)?;
    if fresh {
        writeln!(log, "{METRICS_HEADER}")?;
    }
    let cfg = l.config().clone();
    let eval_set = eval.unwrap_or(train);
    let mut rows = Vec::new();
    while l.epoch() < cfg.epochs {
        let start = Instant::now();
        let (lr, reports) = run_epoch(l, train)?;
        let e = l.epoch();
        let due = |every: usize| every > 0 && e % every == 0;
        let miou = if due(cfg.eval_every) || e == cfg.epochs {
            l.evaluate(eval_set)?.map(|r| r.map(|r| r.mean))
        } else {
            [None, None]
        };
        let row = EpochRow {
            epoch: e,
            lr,
            report: LossReport::mean(&reports),
            miou,
            seconds: start.elapsed().as_secs_f64(),
        };
        writeln!(log, "{}", row.csv())?;
        log.flush()?;
        if due(cfg.checkpoint_every) {
            l.save(&paths.epoch_checkpoint(e), false)?;
        }
        progress(&row);
        rows.push(row);
    }
    l.save(&paths.last(), false)?;
    l.save(&paths.model(), true)?;
    Ok(rows)
}

/// Labels of a batch for modality `m`, for callers assembling batches by hand.
pub fn batch_labels(batch: &Batch, m: Modality) -> &LabelMap {
    batch.labels(m)
}

#[cfg(test)]
mod tests;
