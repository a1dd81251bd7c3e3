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

//! Confusion matrices and mean intersection-over-union.

use crate::error::{Error, Result};
use crate::types::LabelMap;
use serde::Serialize;

/// `counts[g][p]` = number of pixels with ground truth `g` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::shape("confusion matrix must be square"));
        }
        Ok(Self {
            classes: c,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    /// Adds per-pixel counts, skipping pixels whose ground truth is `ignore`.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap, ignore: u8) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(Error::shape(format!(
                "predictions {:?} and labels {:?} differ",
                pred.dims(),
                gt.dims()
            )));
        }
        let c = self.classes;
        if let Some(p) = pred.data().iter().find(|&&p| p as usize >= c) {
            return Err(Error::invalid(format!("prediction {p} outside 0..{c}")));
        }
        if let Some(g) = gt.data().iter().find(|&&g| g != ignore && g as usize >= c) {
            return Err(Error::invalid(format!("label {g} outside 0..{c}")));
        }
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g != ignore {
                self.counts[g as usize * c + p as usize] += 1;
            }
        }
        Ok(())
    }

    /// Elementwise sum of two matrices.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape("confusion matrices differ in class count"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Per-class IoU (`None` for classes with empty union) and their mean.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IouReport {
    pub mean: f64,
    pub per_class: Vec<Option<f64>>,
}

/// IoU of each class and the mean over classes with a non-empty union.
pub fn miou(cm: &ConfusionMatrix) -> Result<IouReport> {
    let c = cm.classes;
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let tp = cm.get(k, k);
            let row: u64 = (0..c).map(|p| cm.get(k, p)).sum();
            let col: u64 = (0..c).map(|g| cm.get(g, k)).sum();
            let union = row + col - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::invalid("no class has a non-empty union"));
    }
    Ok(IouReport {
        mean: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
    })
}

impl IouReport {
    /// Plain-text table of per-class IoU followed by the mean.
    pub fn table(&self) -> String {
        let mut s = String::from("class   IoU\n");
        for (k, v) in self.per_class.iter().enumerate() {
            match v {
                Some(v) => s.push_str(&format!("{k:>5}   {v:.4}\n")),
                None => s.push_str(&format!("{k:>5}   -\n")),
            }
        }
        s.push_str(&format!(" mIoU   {:.4}\n", self.mean));
        s
    }
}
