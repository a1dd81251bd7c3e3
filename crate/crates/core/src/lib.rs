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

//! Teacher-free cross-modal knowledge distillation for RGB-D semantic
//! segmentation.
//!
//! Two single-modality encoder/decoder networks (RGB and Depth) are trained
//! jointly. Each encoder output is split into a modality-invariant and a
//! modality-specific half; the invariant halves are mixed across modalities,
//! aligned with a pooled contrastive objective and kept orthogonal to the
//! specific halves, and a shared auxiliary decoder forces every half to carry
//! segmentation information on its own. At inference time each modality's
//! network runs alone.

pub mod augment;
pub mod baseline;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losscheck;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod training;
pub mod types;

pub use config::TrainConfig;
pub use error::{Error, Result};
pub use tensor::Tensor;
pub use types::{Batch, FeatureVolume, LabelMap, LossReport, Modality, RgbdSample, SegLogits, IGNORE_LABEL};
