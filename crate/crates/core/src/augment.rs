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

//! Geometric and photometric augmentation with label co-transformation.
//!
//! Geometric transforms are a horizontal flip, an isotropic rescale and a
//! crop of the rescaled image, resampled to the training resolution. The
//! whole chain is folded into one source-coordinate map so images are
//! interpolated once (bilinear) and labels are read once (nearest).

use crate::config::AugConfig;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use crate::tensor::Tensor;
use crate::types::{Batch, LabelMap, Modality, RgbdSample};
use rand::Rng;

/// Geometric transform of one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeoTransform {
    pub flip_h: bool,
    pub scale: f64,
    /// Top-left corner of the crop in the rescaled image.
    pub crop_origin: (usize, usize),
}

impl GeoTransform {
    pub const IDENTITY: GeoTransform = GeoTransform {
        flip_h: false,
        scale: 1.0,
        crop_origin: (0, 0),
    };

    /// Size of the rescaled image.
    pub fn scaled_size(&self, image_hw: (usize, usize)) -> (usize, usize) {
        (
            ((image_hw.0 as f64 * self.scale).round() as usize).max(1),
            ((image_hw.1 as f64 * self.scale).round() as usize).max(1),
        )
    }

    /// Size of the crop window: the training size, or the whole rescaled
    /// image when that is smaller.
    pub fn crop_size(&self, image_hw: (usize, usize), out_hw: (usize, usize)) -> (usize, usize) {
        let (sh, sw) = self.scaled_size(image_hw);
        (sh.min(out_hw.0), sw.min(out_hw.1))
    }

    /// Whether the crop window lies inside the rescaled image.
    pub fn is_valid(&self, image_hw: (usize, usize), out_hw: (usize, usize)) -> bool {
        let (sh, sw) = self.scaled_size(image_hw);
        let (ch, cw) = self.crop_size(image_hw, out_hw);
        self.crop_origin.0 + ch <= sh && self.crop_origin.1 + cw <= sw
    }

    /// Continuous source coordinate (pixel-centre convention) of output
    /// pixel `(oy, ox)`.
    fn source_coord(&self, image_hw: (usize, usize), out_hw: (usize, usize), oy: usize, ox: usize) -> (f64, f64) {
        let (h, w) = image_hw;
        let (sh, sw) = self.scaled_size(image_hw);
        let (ch, cw) = self.crop_size(image_hw, out_hw);
        let map = |o: usize, out: usize, crop: usize, origin: usize, scaled: usize, src: usize| {
            let c = origin as f64 + (o as f64 + 0.5) * crop as f64 / out as f64 - 0.5;
            (c + 0.5) * src as f64 / scaled as f64 - 0.5
        };
        let sy = map(oy, out_hw.0, ch, self.crop_origin.0, sh, h);
        let mut sx = map(ox, out_hw.1, cw, self.crop_origin.1, sw, w);
        if self.flip_h {
            sx = (w - 1) as f64 - sx;
        }
        (sy, sx)
    }
}

/// Draws a flip / scale / crop from `rng` according to `aug`.
pub fn sample_transform(
    rng: &mut impl Rng,
    image_hw: (usize, usize),
    out_hw: (usize, usize),
    aug: &AugConfig,
) -> Result<GeoTransform> {
    if image_hw.0 == 0 || image_hw.1 == 0 || out_hw.0 == 0 || out_hw.1 == 0 {
        return Err(Error::invalid(format!(
            "cannot crop {}×{} output from a {}×{} image",
            out_hw.0, out_hw.1, image_hw.0, image_hw.1
        )));
    }
    if !aug.enabled {
        return Ok(GeoTransform::IDENTITY);
    }
    let flip_h = aug.flip && rng.random_bool(0.5);
    let scale = if aug.scale_max > aug.scale_min {
        rng.random_range(aug.scale_min..=aug.scale_max)
    } else {
        aug.scale_min
    };
    let mut t = GeoTransform {
        flip_h,
        scale,
        crop_origin: (0, 0),
    };
    let (sh, sw) = t.scaled_size(image_hw);
    let (ch, cw) = t.crop_size(image_hw, out_hw);
    t.crop_origin = (rng.random_range(0..=sh - ch), rng.random_range(0..=sw - cw));
    Ok(t)
}

fn bilinear(x: &Tensor, sy: f64, sx: f64, c: usize) -> f32 {
    let [_, h, w, _] = x.dims();
    let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    let (sy, sx) = (clamp(sy, h), clamp(sx, w));
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
    let v = |y, xx| x.get([0, y, xx, c]) as f64;
    let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
    let bot = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
    (top * (1.0 - fy) + bot * fy) as f32
}

fn nearest(v: f64, n: usize) -> usize {
    (v + 0.5).floor().clamp(0.0, (n - 1) as f64) as usize
}

/// Applies `t` to a `1×H×W×C` image (bilinear) and its `1×H×W` labels
/// (nearest), producing `out_hw` outputs.
pub fn apply_geo(x: &Tensor, y: &LabelMap, t: &GeoTransform, out_hw: (usize, usize)) -> Result<(Tensor, LabelMap)> {
    let [b, h, w, c] = x.dims();
    if b != 1 || y.dims() != [1, h, w] {
        return Err(Error::shape(format!(
            "image {:?} and labels {:?} must be one aligned sample",
            x.dims(),
            y.dims()
        )));
    }
    if !t.is_valid((h, w), out_hw) {
        return Err(Error::invalid(format!("crop window of {t:?} leaves the rescaled image")));
    }
    let (oh, ow) = out_hw;
    let mut img = Tensor::zeros([1, oh, ow, c]);
    let mut lab = LabelMap::filled([1, oh, ow], 0);
    for oy in 0..oh {
        for ox in 0..ow {
            let (sy, sx) = t.source_coord((h, w), out_hw, oy, ox);
            for ch in 0..c {
                img.set([0, oy, ox, ch], bilinear(x, sy, sx, ch));
            }
            lab.set(0, oy, ox, y.get(0, nearest(sy, h), nearest(sx, w)));
        }
    }
    Ok((img, lab))
}

/// Brightness, contrast and saturation factors drawn from `1 ± strength`,
/// applied in that order with clamping to `[0, 1]`.
pub fn color_jitter(x: &Tensor, strength: f64, rng: &mut impl Rng) -> Result<Tensor> {
    if x.channels() != 3 {
        return Err(Error::invalid(format!(
            "color jitter needs 3 channels, got {}",
            x.channels()
        )));
    }
    if strength == 0.0 {
        return Ok(x.clone());
    }
    let mut factor = || rng.random_range(1.0 - strength..=1.0 + strength) as f32;
    let (fb, fc, fs) = (factor(), factor(), factor());
    let gray = |p: &[f32]| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    let mut out = x.clone();
    let [b, h, w, _] = x.dims();
    let per = h * w * 3;
    for img in out.data_mut().chunks_exact_mut(per.max(1)).take(b) {
        img.iter_mut().for_each(|v| *v = (*v * fb).clamp(0.0, 1.0));
        let mean = img.chunks_exact(3).map(gray).sum::<f32>() / (h * w).max(1) as f32;
        img.iter_mut().for_each(|v| *v = ((*v - mean) * fc + mean).clamp(0.0, 1.0));
        for p in img.chunks_exact_mut(3) {
            let g = gray(p);
            p.iter_mut().for_each(|v| *v = ((*v - g) * fs + g).clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

/// Which random stream drives the geometric transform of each modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugMode {
    /// Each modality draws its own transform and keeps its own labels.
    Decoupled,
    /// Both modalities share the transform drawn from this modality's stream.
    Shared(Modality),
}

/// Stream keys of one training step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepKey {
    pub seed: u64,
    pub epoch: u64,
    pub step: u64,
}

const JITTER: u64 = 2;

fn modality_index(m: Modality) -> u64 {
    match m {
        Modality::Rgb => 0,
        Modality::Depth => 1,
    }
}

/// Geometric stream of sample `i` for modality `m` at `key`.
pub fn geo_stream(key: StepKey, m: Modality, i: usize) -> rand_chacha::ChaCha8Rng {
    stream(key.seed, &[tag::AUG, key.epoch, key.step, modality_index(m), i as u64])
}

fn jitter_stream(key: StepKey, i: usize) -> rand_chacha::ChaCha8Rng {
    stream(key.seed, &[tag::AUG, key.epoch, key.step, JITTER, i as u64])
}

/// Augments one sample for one modality, returning its input and labels.
pub fn augment_view(
    sample: &RgbdSample,
    m: Modality,
    t: &GeoTransform,
    key: StepKey,
    i: usize,
    aug: &AugConfig,
    out_hw: (usize, usize),
) -> Result<(Tensor, LabelMap)> {
    let input = match m {
        Modality::Rgb => &sample.rgb,
        Modality::Depth => &sample.depth,
    };
    let (mut x, y) = apply_geo(input, &sample.labels, t, out_hw)?;
    if m == Modality::Rgb && aug.enabled {
        x = color_jitter(&x, aug.jitter, &mut jitter_stream(key, i))?;
    }
    Ok((x, y))
}

/// Augments a list of samples into a batch with per-modality label views.
pub fn augment_batch(
    samples: &[RgbdSample],
    key: StepKey,
    mode: AugMode,
    aug: &AugConfig,
    out_hw: (usize, usize),
) -> Result<Batch> {
    let mut views: [(Vec<Tensor>, Vec<LabelMap>); 2] = Default::default();
    for (i, s) in samples.iter().enumerate() {
        let hw = (s.height(), s.width());
        for (slot, m) in Modality::BOTH.into_iter().enumerate() {
            let source = match mode {
                AugMode::Decoupled => m,
                AugMode::Shared(src) => src,
            };
            let t = sample_transform(&mut geo_stream(key, source, i), hw, out_hw, aug)?;
            let (x, y) = augment_view(s, m, &t, key, i, aug, out_hw)?;
            views[slot].0.push(x);
            views[slot].1.push(y);
        }
    }
    let [(rgb, rgb_labels), (depth, depth_labels)] = views;
    Ok(Batch {
        rgb: Tensor::stack(&rgb)?,
        depth: Tensor::stack(&depth)?,
        rgb_labels: LabelMap::stack(&rgb_labels)?,
        depth_labels: LabelMap::stack(&depth_labels)?,
    })
}
