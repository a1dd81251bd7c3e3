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

//! Domain types exchanged between modules.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fmt;

/// Default label value for void / unlabeled pixels.
pub const IGNORE_LABEL: u8 = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Rgb,
    Depth,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::Rgb, Modality::Depth];

    /// Input channel count of this modality.
    pub fn channels(self) -> usize {
        match self {
            Modality::Rgb => 3,
            Modality::Depth => 1,
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Rgb => Modality::Depth,
            Modality::Depth => Modality::Rgb,
        }
    }

    /// Short name used in parameter paths and CSV columns.
    pub fn tag(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Depth => "d",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Rgb => "rgb",
            Modality::Depth => "depth",
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(Modality::Rgb),
            "d" | "depth" => Ok(Modality::Depth),
            other => Err(Error::invalid(format!("unknown modality `{other}`"))),
        }
    }
}

/// Integer label maps, `B×H×W`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    dims: [usize; 3],
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(dims: [usize; 3], data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::shape(format!(
                "label buffer of length {} does not fit {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: [usize; 3], v: u8) -> Self {
        Self {
            dims,
            data: vec![v; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, b: usize, y: usize, x: usize) -> u8 {
        self.data[(b * self.dims[1] + y) * self.dims[2] + x]
    }

    pub fn set(&mut self, b: usize, y: usize, x: usize, v: u8) {
        self.data[(b * self.dims[1] + y) * self.dims[2] + x] = v;
    }

    pub fn item(&self, b: usize) -> LabelMap {
        let per = self.dims[1] * self.dims[2];
        LabelMap {
            dims: [1, self.dims[1], self.dims[2]],
            data: self.data[b * per..(b + 1) * per].to_vec(),
        }
    }

    pub fn stack(items: &[LabelMap]) -> Result<LabelMap> {
        let first = items.first().ok_or_else(|| Error::shape("cannot stack zero label maps"))?;
        let [_, h, w] = first.dims;
        let mut b = 0;
        let mut data = Vec::new();
        for m in items {
            if m.dims[1..] != [h, w] {
                return Err(Error::shape("label maps differ in spatial size"));
            }
            b += m.dims[0];
            data.extend_from_slice(&m.data);
        }
        Ok(LabelMap { dims: [b, h, w], data })
    }

    /// Checks every value is a class id below `num_classes` or `ignore`.
    pub fn validate(&self, num_classes: usize, ignore: u8) -> Result<()> {
        match self
            .data
            .iter()
            .find(|&&v| v != ignore && v as usize >= num_classes)
        {
            Some(v) => Err(Error::invalid(format!(
                "label {v} outside 0..{num_classes} and not the ignore value {ignore}"
            ))),
            None => Ok(()),
        }
    }
}

/// One paired RGB-D scene with its ground truth.
///
/// `rgb` is `1×H×W×3`, `depth` is `1×H×W×1` (both in `[0, 1]`) and `labels`
/// is `1×H×W`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdSample {
    pub rgb: Tensor,
    pub depth: Tensor,
    pub labels: LabelMap,
}

impl RgbdSample {
    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn validate(&self, num_classes: usize, ignore: u8) -> Result<()> {
        let [b, h, w, c] = self.rgb.dims();
        if b != 1 || c != 3 {
            return Err(Error::shape(format!("rgb must be 1×H×W×3, got {:?}", self.rgb.dims())));
        }
        if self.depth.dims() != [1, h, w, 1] {
            return Err(Error::shape(format!(
                "depth {:?} not aligned with rgb {:?}",
                self.depth.dims(),
                self.rgb.dims()
            )));
        }
        if self.labels.dims() != [1, h, w] {
            return Err(Error::shape(format!(
                "labels {:?} not aligned with rgb {:?}",
                self.labels.dims(),
                self.rgb.dims()
            )));
        }
        let in_unit = |t: &Tensor| t.data().iter().all(|v| (0.0..=1.0).contains(v));
        if !in_unit(&self.rgb) || !in_unit(&self.depth) {
            return Err(Error::invalid("image values must lie in [0, 1]"));
        }
        self.labels.validate(num_classes, ignore)
    }
}

/// A stacked mini-batch. Each modality carries its own label view so that
/// independently transformed inputs stay consistent with their targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub rgb: Tensor,
    pub depth: Tensor,
    pub rgb_labels: LabelMap,
    pub depth_labels: LabelMap,
}

impl Batch {
    pub fn from_samples(samples: &[RgbdSample]) -> Result<Self> {
        let rgb = Tensor::stack(&samples.iter().map(|s| s.rgb.clone()).collect::<Vec<_>>())?;
        let depth = Tensor::stack(&samples.iter().map(|s| s.depth.clone()).collect::<Vec<_>>())?;
        let labels = LabelMap::stack(&samples.iter().map(|s| s.labels.clone()).collect::<Vec<_>>())?;
        Ok(Self {
            rgb,
            depth,
            rgb_labels: labels.clone(),
            depth_labels: labels,
        })
    }

    pub fn size(&self) -> usize {
        self.rgb.batch()
    }

    pub fn input(&self, m: Modality) -> &Tensor {
        match m {
            Modality::Rgb => &self.rgb,
            Modality::Depth => &self.depth,
        }
    }

    pub fn labels(&self, m: Modality) -> &LabelMap {
        match m {
            Modality::Rgb => &self.rgb_labels,
            Modality::Depth => &self.depth_labels,
        }
    }
}

/// Encoder output split into modality-invariant and modality-specific
/// halves, each `B×h×w×(F/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume {
    pub inv: Tensor,
    pub spc: Tensor,
    pub modality: Modality,
    /// Low-level backbone features for decoders with a skip connection.
    pub skip: Option<Tensor>,
}

impl FeatureVolume {
    pub fn half_channels(&self) -> usize {
        self.inv.channels()
    }

    /// `[inv : spc]` along channels.
    pub fn concat(&self) -> Tensor {
        Tensor::concat_channels(&self.inv, &self.spc).expect("halves share dims")
    }
}

/// Pre-softmax class scores at label resolution, `B×H×W×C`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegLogits(pub Tensor);

impl SegLogits {
    pub fn num_classes(&self) -> usize {
        self.0.channels()
    }

    pub fn predictions(&self) -> LabelMap {
        let [b, h, w, _] = self.0.dims();
        LabelMap::new([b, h, w], self.0.argmax_channels()).expect("argmax dims")
    }
}

/// Loss terms of one modality.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TermValues {
    pub seg: f64,
    pub orth: f64,
    pub con: f64,
    pub aux: f64,
}

impl TermValues {
    pub fn sum(&self) -> f64 {
        self.seg + self.orth + self.con + self.aux
    }
}

/// All loss terms of a training step plus their total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub rgb: TermValues,
    pub depth: TermValues,
    pub total: f64,
}

impl LossReport {
    pub fn terms(&self, m: Modality) -> &TermValues {
        match m {
            Modality::Rgb => &self.rgb,
            Modality::Depth => &self.depth,
        }
    }

    pub fn terms_mut(&mut self, m: Modality) -> &mut TermValues {
        match m {
            Modality::Rgb => &mut self.rgb,
            Modality::Depth => &mut self.depth,
        }
    }

    /// Sum of the eight per-modality terms.
    pub fn sum_of_terms(&self) -> f64 {
        self.rgb.sum() + self.depth.sum()
    }

    /// `(name, value)` pairs in CSV column order.
    pub fn named(&self) -> [(&'static str, f64); 9] {
        [
            ("seg_rgb", self.rgb.seg),
            ("seg_d", self.depth.seg),
            ("orth_rgb", self.rgb.orth),
            ("orth_d", self.depth.orth),
            ("con_rgb", self.rgb.con),
            ("con_d", self.depth.con),
            ("aux_rgb", self.rgb.aux),
            ("aux_d", self.depth.aux),
            ("total", self.total),
        ]
    }

    /// Element-wise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut out = LossReport::default();
        for r in reports {
            for m in Modality::BOTH {
                let (src, dst) = (r.terms(m), out.terms_mut(m));
                dst.seg += src.seg / n;
                dst.orth += src.orth / n;
                dst.con += src.con / n;
                dst.aux += src.aux / n;
            }
            out.total += r.total / n;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(h: usize, w: usize, lh: usize, lw: usize) -> RgbdSample {
        RgbdSample {
            rgb: Tensor::full([1, h, w, 3], 0.5),
            depth: Tensor::full([1, h, w, 1], 0.25),
            labels: LabelMap::filled([1, lh, lw], 1),
        }
    }

    proptest! {
        #[test]
        fn validation_accepts_exactly_aligned_shapes(
            h in 1usize..12, w in 1usize..12, dh in 0usize..2, dw in 0usize..2
        ) {
            let s = sample(h, w, h + dh, w + dw);
            prop_assert_eq!(s.validate(3, IGNORE_LABEL).is_ok(), dh == 0 && dw == 0);
        }
    }

    #[test]
    fn labels_outside_class_range_are_rejected() {
        let mut s = sample(2, 2, 2, 2);
        s.labels.set(0, 1, 1, IGNORE_LABEL);
        assert!(s.validate(2, IGNORE_LABEL).is_ok());
        s.labels.set(0, 0, 0, 2);
        assert!(s.validate(2, IGNORE_LABEL).is_err());
    }

    #[test]
    fn out_of_unit_range_pixels_are_rejected() {
        let mut s = sample(2, 2, 2, 2);
        s.depth.set([0, 0, 0, 0], 1.5);
        assert!(s.validate(2, IGNORE_LABEL).is_err());
    }

    #[test]
    fn report_mean_and_sum() {
        let mut a = LossReport::default();
        a.rgb = TermValues { seg: 1.0, orth: 2.0, con: 3.0, aux: 4.0 };
        a.depth = TermValues { seg: 5.0, orth: 6.0, con: 7.0, aux: 8.0 };
        a.total = a.sum_of_terms();
        assert_eq!(a.total, 36.0);
        let m = LossReport::mean(&[a, LossReport::default()]);
        assert_eq!(m.depth.aux, 4.0);
        assert_eq!(m.total, 18.0);
    }
}
