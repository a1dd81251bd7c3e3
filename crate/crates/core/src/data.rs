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

//! Synthetic RGB-D scenes and on-disk paired datasets.
//!
//! Synthetic scenes are Voronoi partitions with one site per class. Classes
//! come in pairs: in even pairs the two classes differ only slightly in
//! colour but clearly in depth, in odd pairs the reverse. The small gap is
//! 1.5 noise standard deviations, so a per-pixel threshold confuses the
//! pair about a fifth of the time while a spatially pooled feature does not.

use crate::config::DepthNorm;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use crate::tensor::Tensor;
use crate::types::{LabelMap, RgbdSample};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

/// Per-pixel colour noise standard deviation.
pub const COLOR_NOISE: f64 = 0.1;
/// Per-pixel depth noise standard deviation.
pub const DEPTH_NOISE: f64 = 0.05;
/// Confusable-pair gap in units of the noise standard deviation.
pub const CONFUSABLE_GAP: f64 = 1.5;
const DEPTH_TILT: f64 = 0.03;

/// Mean colour and depth of one synthetic class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassProfile {
    pub color: [f64; 3],
    pub depth: f64,
}

/// Direction along which colour-confusable classes differ.
pub const COLOR_GAP_DIR: [f64; 3] = [0.577_350_269_189_625_8; 3];

/// Whether classes `2p` and `2p + 1` share (nearly) the same colour.
pub fn pair_is_color_confusable(p: usize) -> bool {
    p % 2 == 0
}

fn hue_to_rgb(h: f64) -> [f64; 3] {
    let f = |n: f64| {
        let k = (n + h * 6.0) % 6.0;
        0.5 - 0.3 * (k.min(4.0 - k).clamp(0.0, 1.0) * 2.0 - 1.0)
    };
    [f(5.0), f(3.0), f(1.0)]
}

/// Colour and depth means of `c` classes.
pub fn class_profiles(c: usize) -> Vec<ClassProfile> {
    let mut out: Vec<ClassProfile> = (0..c)
        .map(|k| ClassProfile {
            color: hue_to_rgb(k as f64 / c as f64),
            depth: 0.1 + 0.75 * k as f64 / (c - 1).max(1) as f64,
        })
        .collect();
    for p in 0..c / 2 {
        let (a, b) = (2 * p, 2 * p + 1);
        if pair_is_color_confusable(p) {
            let base = out[a].color;
            let gap = CONFUSABLE_GAP * COLOR_NOISE;
            out[b].color = [0, 1, 2].map(|i| base[i] + gap * COLOR_GAP_DIR[i]);
        } else {
            out[b].depth = out[a].depth + CONFUSABLE_GAP * DEPTH_NOISE;
        }
    }
    out
}

/// Generates `n` scenes of `h×w` pixels with `c` classes.
pub fn generate_synthetic(seed: u64, n: usize, h: usize, w: usize, c: usize) -> Result<Vec<RgbdSample>> {
    if c < 2 || c > 255 {
        return Err(Error::invalid(format!("class count {c} outside 2..=255")));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid("image size must be positive"));
    }
    let profiles = class_profiles(c);
    let color_noise = Normal::new(0.0, COLOR_NOISE).expect("finite std");
    let depth_noise = Normal::new(0.0, DEPTH_NOISE).expect("finite std");
    (0..n)
        .map(|i| {
            let mut rng = stream(seed, &[tag::SYNTH, i as u64]);
            let sites: Vec<(f64, f64)> = (0..c)
                .map(|_| (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64)))
                .collect();
            let tilt = (
                rng.random_range(-DEPTH_TILT..=DEPTH_TILT),
                rng.random_range(-DEPTH_TILT..=DEPTH_TILT),
            );
            let mut labels = Vec::with_capacity(h * w);
            let mut rgb = Vec::with_capacity(h * w * 3);
            let mut depth = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                    let k = sites
                        .iter()
                        .enumerate()
                        .map(|(k, &(sy, sx))| (k, (sy - py).powi(2) + (sx - px).powi(2)))
                        .min_by(|a, b| a.1.total_cmp(&b.1))
                        .map(|(k, _)| k)
                        .expect("at least two sites");
                    labels.push(k as u8);
                    let p = profiles[k];
                    for ch in 0..3 {
                        rgb.push((p.color[ch] + color_noise.sample(&mut rng)).clamp(0.0, 1.0) as f32);
                    }
                    let plane = tilt.0 * (py / h as f64 - 0.5) + tilt.1 * (px / w as f64 - 0.5);
                    depth.push((p.depth + plane + depth_noise.sample(&mut rng)).clamp(0.0, 1.0) as f32);
                }
            }
            Ok(RgbdSample {
                rgb: Tensor::from_vec([1, h, w, 3], rgb)?,
                depth: Tensor::from_vec([1, h, w, 1], depth)?,
                labels: LabelMap::new([1, h, w], labels)?,
            })
        })
        .collect()
}

/// Dataset split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub label: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    num_classes: usize,
    depth_divisor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

/// A JSON-lines manifest: a header object followed by one object per sample.
/// Relative paths are resolved against the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub num_classes: usize,
    pub depth_divisor: f64,
    pub split: Split,
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

/// Reads a manifest and checks that every referenced file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::data(path, e.to_string()))?;
    let mut lines = BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
    let parse_err = |n: usize, e: &dyn std::fmt::Display| Error::data(path, format!("line {}: {e}", n + 1));
    let (n, header) = lines.next().ok_or_else(|| Error::data(path, "empty manifest"))?;
    let header: ManifestHeader = serde_json::from_str(&header?).map_err(|e| parse_err(n, &e))?;
    if header.num_classes < 2 || header.num_classes > 255 {
        return Err(Error::data(path, format!("num_classes {} outside 2..=255", header.num_classes)));
    }
    if !(header.depth_divisor > 0.0) {
        return Err(Error::data(path, "depth_divisor must be positive"));
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut m = DatasetManifest {
        entries: Vec::new(),
        num_classes: header.num_classes,
        depth_divisor: header.depth_divisor,
        split: header.split.unwrap_or(Split::Train),
        root,
    };
    for (n, line) in lines {
        let entry: ManifestEntry = serde_json::from_str(&line?).map_err(|e| parse_err(n, &e))?;
        for p in [&entry.rgb, &entry.depth, &entry.label] {
            let full = m.resolve(p);
            if !full.is_file() {
                return Err(Error::data(full, "file not found"));
            }
        }
        m.entries.push(entry);
    }
    Ok(m)
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::data(path, e.to_string()))
}

/// Decodes one manifest entry into a validated sample.
pub fn load_sample(m: &DatasetManifest, entry: &ManifestEntry, norm: DepthNorm, ignore: u8) -> Result<RgbdSample> {
    let (rp, dp, lp) = (m.resolve(&entry.rgb), m.resolve(&entry.depth), m.resolve(&entry.label));
    let rgb = open_image(&rp)?.into_rgb8();
    let (w, h) = rgb.dimensions();
    let (w, h) = (w as usize, h as usize);
    let depth = open_image(&dp)?.into_luma16();
    let label = open_image(&lp)?.into_luma8();
    if depth.dimensions() != rgb.dimensions() {
        return Err(Error::data(&dp, format!("depth is {:?}, rgb is {:?}", depth.dimensions(), rgb.dimensions())));
    }
    if label.dimensions() != rgb.dimensions() {
        return Err(Error::data(&lp, format!("labels are {:?}, rgb is {:?}", label.dimensions(), rgb.dimensions())));
    }
    let rgb = Tensor::from_vec([1, h, w, 3], rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect())?;
    let raw: Vec<f64> = depth.into_raw().into_iter().map(f64::from).collect();
    let depth_vals: Vec<f32> = match norm {
        DepthNorm::Divisor => raw.iter().map(|v| (v / m.depth_divisor).clamp(0.0, 1.0) as f32).collect(),
        DepthNorm::PerImage => {
            let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            raw.iter()
                .map(|v| if span > 0.0 { ((v - lo) / span) as f32 } else { 0.0 })
                .collect()
        }
    };
    let depth = Tensor::from_vec([1, h, w, 1], depth_vals)?;
    let labels = LabelMap::new([1, h, w], label.into_raw())?;
    labels.validate(m.num_classes, ignore).map_err(|e| Error::data(&lp, e.to_string()))?;
    let s = RgbdSample { rgb, depth, labels };
    s.validate(m.num_classes, ignore).map_err(|e| Error::data(&rp, e.to_string()))?;
    Ok(s)
}

/// Loads every sample of a manifest.
pub fn load_dataset(path: impl AsRef<Path>, norm: DepthNorm, ignore: u8) -> Result<(DatasetManifest, Vec<RgbdSample>)> {
    let m = load_manifest(path)?;
    let samples = m
        .entries
        .iter()
        .map(|e| load_sample(&m, e, norm, ignore))
        .collect::<Result<Vec<_>>>()?;
    Ok((m, samples))
}

/// Writes samples as PNG files plus a manifest; returns the manifest path.
///
/// Depth is stored as 16-bit values with divisor 65535.
pub fn write_dataset(dir: impl AsRef<Path>, name: &str, samples: &[RgbdSample], num_classes: usize, split: Split) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join(name))?;
    let manifest = dir.join(format!("{name}.jsonl"));
    let mut out = fs::File::create(&manifest)?;
    let header = ManifestHeader {
        num_classes,
        depth_divisor: 65535.0,
        split: Some(split),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("serialisable"))?;
    let save_err = |p: &Path, e: image::ImageError| Error::data(p, e.to_string());
    for (i, s) in samples.iter().enumerate() {
        let (h, w) = (s.height() as u32, s.width() as u32);
        let entry = ManifestEntry {
            rgb: PathBuf::from(format!("{name}/{i:05}_rgb.png")),
            depth: PathBuf::from(format!("{name}/{i:05}_depth.png")),
            label: PathBuf::from(format!("{name}/{i:05}_label.png")),
        };
        let to8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let rgb = image::RgbImage::from_raw(w, h, s.rgb.data().iter().map(|&v| to8(v)).collect())
            .expect("buffer matches dims");
        let depth = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
            w,
            h,
            s.depth.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect(),
        )
        .expect("buffer matches dims");
        let label = image::GrayImage::from_raw(w, h, s.labels.data().to_vec()).expect("buffer matches dims");
        let p = dir.join(&entry.rgb);
        rgb.save(&p).map_err(|e| save_err(&p, e))?;
        let p = dir.join(&entry.depth);
        depth.save(&p).map_err(|e| save_err(&p, e))?;
        let p = dir.join(&entry.label);
        label.save(&p).map_err(|e| save_err(&p, e))?;
        writeln!(out, "{}", serde_json::to_string(&entry).expect("serialisable"))?;
    }
    Ok(manifest)
}

/// Sample indices of each batch of one epoch.
///
/// Training order is shuffled deterministically per `(seed, epoch)` and the
/// last partial batch is dropped; evaluation keeps dataset order and the
/// partial batch.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: u64, split: Split) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if split == Split::Train {
        order.shuffle(&mut stream(seed, &[tag::SHUFFLE, epoch]));
    }
    let bs = batch_size.max(1);
    order
        .chunks(bs)
        .filter(|c| split == Split::Test || c.len() == bs)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Iterates over batches of `samples` (see [`batch_indices`]).
pub fn iterate_batches<'a>(
    samples: &'a [RgbdSample],
    batch_size: usize,
    seed: u64,
    epoch: u64,
    split: Split,
) -> impl Iterator<Item = Vec<&'a RgbdSample>> + 'a {
    batch_indices(samples.len(), batch_size, seed, epoch, split)
        .into_iter()
        .map(move |idx| idx.into_iter().map(|i| &samples[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::IGNORE_LABEL;

    #[test]
    fn labels_cover_class_range() {
        let s = generate_synthetic(1, 6, 32, 32, 4).unwrap();
        for x in &s {
            assert!(x.labels.data().iter().all(|&v| v < 4));
            x.validate(4, IGNORE_LABEL).unwrap();
        }
        assert!(generate_synthetic(1, 1, 8, 8, 1).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_synthetic(7, 3, 16, 16, 4).unwrap();
        let b = generate_synthetic(7, 3, 16, 16, 4).unwrap();
        let c = generate_synthetic(8, 3, 16, 16, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    /// Best single-threshold error separating values of class `a` from `b`.
    fn threshold_error(a: &[f64], b: &[f64]) -> f64 {
        let mut all: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
        all.sort_by(|x, y| x.0.total_cmp(&y.0));
        let n = all.len() as f64;
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let (mut a_below, mut b_below) = (0.0, 0.0);
        let mut best = na.min(nb);
        for &(_, is_a) in &all {
            if is_a {
                a_below += 1.0;
            } else {
                b_below += 1.0;
            }
            // a below / b above, or the reverse
            best = best.min((na - a_below) + b_below).min(a_below + (nb - b_below));
        }
        best / n
    }

    #[test]
    fn confusable_pairs_need_the_other_modality() {
        let samples = generate_synthetic(3, 20, 32, 32, 4).unwrap();
        let mut color = [vec![], vec![], vec![], vec![]];
        let mut depth = [vec![], vec![], vec![], vec![]];
        for s in &samples {
            for (i, &l) in s.labels.data().iter().enumerate() {
                let px = &s.rgb.data()[3 * i..3 * i + 3];
                color[l as usize].push((0..3).map(|c| px[c] as f64 * COLOR_GAP_DIR[c]).sum::<f64>());
                depth[l as usize].push(s.depth.data()[i] as f64);
            }
        }
        // pair (0, 1): colour-confusable, depth-separable
        assert!(threshold_error(&color[0], &color[1]) > 0.15);
        assert!(threshold_error(&depth[0], &depth[1]) < 0.02);
        // pair (2, 3): depth-confusable, colour-separable
        assert!(threshold_error(&depth[2], &depth[3]) > 0.15);
        let profiles = class_profiles(4);
        let (mut wrong, mut total) = (0usize, 0usize);
        for s in &samples {
            for (i, &l) in s.labels.data().iter().enumerate().filter(|(_, &l)| l >= 2) {
                let px = &s.rgb.data()[3 * i..3 * i + 3];
                let d = |k: usize| (0..3).map(|c| (px[c] as f64 - profiles[k].color[c]).powi(2)).sum::<f64>();
                let pred: u8 = if d(2) <= d(3) { 2 } else { 3 };
                wrong += usize::from(pred != l);
                total += 1;
            }
        }
        assert!((wrong as f64) < 0.05 * total as f64, "{wrong}/{total}");
    }

    #[test]
    fn batch_counts() {
        assert_eq!(batch_indices(10, 8, 0, 0, Split::Train).len(), 1);
        let eval = batch_indices(10, 8, 0, 0, Split::Test);
        assert_eq!(eval.iter().map(Vec::len).collect::<Vec<_>>(), vec![8, 2]);
    }

    #[test]
    fn shuffles_keyed_by_seed_and_epoch() {
        let a = batch_indices(40, 4, 5, 0, Split::Train);
        assert_eq!(a, batch_indices(40, 4, 5, 0, Split::Train));
        assert_ne!(a, batch_indices(40, 4, 5, 1, Split::Train));
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_synthetic(2, 3, 8, 12, 4).unwrap();
        let path = write_dataset(dir.path(), "train", &samples, 4, Split::Train).unwrap();
        let (m, loaded) = load_dataset(&path, DepthNorm::Divisor, IGNORE_LABEL).unwrap();
        assert_eq!(m.entries.len(), 3);
        for (a, b) in samples.iter().zip(&loaded) {
            assert_eq!(a.labels, b.labels);
            assert!(a.depth.data().iter().zip(b.depth.data()).all(|(x, y)| (x - y).abs() < 1e-4));
            assert!(a.rgb.data().iter().zip(b.rgb.data()).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-6));
        }
        let (_, per_image) = load_dataset(&path, DepthNorm::PerImage, IGNORE_LABEL).unwrap();
        for s in &per_image {
            let hi = s.depth.data().iter().copied().fold(0.0f32, f32::max);
            assert!((hi - 1.0).abs() < 1e-6);
        }

        let corrupt = dir.path().join("train/00001_depth.png");
        fs::write(&corrupt, b"not a png").unwrap();
        let err = load_dataset(&path, DepthNorm::Divisor, IGNORE_LABEL).unwrap_err();
        assert!(err.to_string().contains("00001_depth.png"), "{err}");

        fs::remove_file(&corrupt).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("00001_depth.png"), "{err}");
    }

    #[test]
    fn out_of_range_labels_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut samples = generate_synthetic(2, 1, 8, 8, 4).unwrap();
        samples[0].labels.set(0, 0, 0, 9);
        let path = write_dataset(dir.path(), "bad", &samples, 4, Split::Test).unwrap();
        let err = load_dataset(&path, DepthNorm::Divisor, IGNORE_LABEL).unwrap_err();
        assert!(err.to_string().contains("00000_label.png"), "{err}");
    }
}
