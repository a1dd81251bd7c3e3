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

//! A small define-by-hand neural network engine.
//!
//! Every layer exposes `forward`, which returns its output together with a
//! cache of whatever the backward pass needs, and `backward`, which consumes
//! that cache, accumulates parameter gradients and returns the gradient with
//! respect to the layer input. A layer may be run several times before a
//! backward pass (the caches are independent values), which is how the main
//! and auxiliary decoders are shared between the plain and mixed inputs.
//!
//! All activations are channel-last `f32`. Everything runs on the calling
//! thread, so results are bit-for-bit reproducible.

mod conv;
mod layers;

pub use conv::{Conv2d, ConvCache, ConvSpec};
pub use layers::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, resize_bilinear,
    resize_bilinear_backward, BatchNorm2d, BnCache, MaxPool2d, MaxPoolCache, PixelShuffle,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Whether a forward pass is part of training (batch statistics, caches
/// consumed by backward) or inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A learnable (or buffered) parameter array with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub shape: Vec<usize>,
    /// Buffers such as batch-norm running statistics are checkpointed but
    /// never touched by the optimizer.
    pub trainable: bool,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            value: vec![0.0; n],
            grad: vec![0.0; n],
            shape: shape.to_vec(),
            trainable: true,
        }
    }

    pub fn filled(shape: &[usize], v: f32) -> Self {
        let mut p = Self::zeros(shape);
        p.value.fill(v);
        p
    }

    pub fn buffer(shape: &[usize], v: f32) -> Self {
        let mut p = Self::filled(shape, v);
        p.trainable = false;
        p
    }

    /// He-normal initialisation for a kernel with the given fan-in.
    pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(shape);
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in &mut p.value {
            *v = normal.sample(rng) as f32;
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn grad_norm_sq(&self) -> f64 {
        self.grad.iter().map(|&g| (g as f64) * (g as f64)).sum()
    }
}

/// Walks named parameters in a stable order.
pub trait Parameterized {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.trainable {
                n += p.len()
            }
        });
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    fn grad_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit("", &mut |_, p| s += p.grad_norm_sq());
        s.sqrt()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}/{name}")
    }
}
