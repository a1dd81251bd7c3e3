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

use super::blocks::{Bottleneck, BottleneckCache, ConvUnit, ConvUnitCache};
use crate::error::Result;
use crate::nn::{join, ConvSpec, MaxPool2d, MaxPoolCache, Mode, Param, Parameterized};
use crate::tensor::Tensor;
use rand::Rng;

/// Channel widths of the tiny preset's four stages (the last one is `F`).
pub const TINY_WIDTHS: [usize; 3] = [16, 32, 64];

/// Four 3×3 stages; the last three halve the resolution.
#[derive(Clone, Debug)]
pub struct TinyEncoder {
    pub stages: Vec<ConvUnit>,
}

impl TinyEncoder {
    pub fn new(in_channels: usize, features: usize, rng: &mut impl Rng) -> Self {
        let mut stages = Vec::with_capacity(4);
        let mut cin = in_channels;
        for (i, &w) in TINY_WIDTHS.iter().chain(std::iter::once(&features)).enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            stages.push(ConvUnit::plain(cin, w, ConvSpec::new(3, stride), true, rng));
            cin = w;
        }
        Self { stages }
    }
}

/// Dilated ResNet-50 (output stride 8) with a 1×1 projection head.
#[derive(Clone, Debug)]
pub struct ResNetEncoder {
    pub stem: ConvUnit,
    pub layers: Vec<Vec<Bottleneck>>,
    pub proj: ConvUnit,
}

/// Block counts, bottleneck widths, strides and dilations of the four
/// residual stages.
const RESNET50_LAYERS: [(usize, usize, usize, usize); 4] =
    [(3, 64, 1, 1), (4, 128, 2, 1), (6, 256, 1, 2), (3, 512, 1, 4)];

impl ResNetEncoder {
    pub const SKIP_CHANNELS: usize = 256;

    pub fn new(in_channels: usize, features: usize, rng: &mut impl Rng) -> Self {
        let stem_spec = ConvSpec {
            kernel: 7,
            stride: 2,
            padding: 3,
            dilation: 1,
        };
        let stem = ConvUnit::normed(in_channels, 64, stem_spec, true, rng);
        let mut layers = Vec::new();
        let mut cin = 64;
        let mut prev_dilation = 1;
        for &(blocks, planes, stride, dilation) in &RESNET50_LAYERS {
            let mut layer = Vec::with_capacity(blocks);
            // The first block of a dilated stage keeps the previous dilation.
            layer.push(Bottleneck::new(cin, planes, stride, prev_dilation, rng));
            cin = planes * 4;
            for _ in 1..blocks {
                layer.push(Bottleneck::new(cin, planes, 1, dilation, rng));
            }
            prev_dilation = dilation;
            layers.push(layer);
        }
        let proj = ConvUnit::normed(cin, features, ConvSpec::new(1, 1), true, rng);
        Self { stem, layers, proj }
    }
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Tiny(TinyEncoder),
    ResNet(Box<ResNetEncoder>),
}

pub struct ResNetCache {
    stem: ConvUnitCache,
    pool: MaxPoolCache,
    layers: Vec<Vec<BottleneckCache>>,
    proj: ConvUnitCache,
}

pub enum EncoderCache {
    Tiny(Vec<ConvUnitCache>),
    ResNet(Box<ResNetCache>),
}

impl Encoder {
    /// First convolution (the one whose kernel depends on input channels).
    pub fn first_conv_mut(&mut self) -> &mut crate::nn::Conv2d {
        match self {
            Encoder::Tiny(t) => &mut t.stages[0].conv,
            Encoder::ResNet(r) => &mut r.stem.conv,
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            Encoder::Tiny(t) => t.stages[0].conv.in_channels(),
            Encoder::ResNet(r) => r.stem.conv.in_channels(),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Encoder::Tiny(t) => t.stages.last().expect("stages").out_channels(),
            Encoder::ResNet(r) => r.proj.out_channels(),
        }
    }

    pub fn skip_channels(&self) -> usize {
        match self {
            Encoder::Tiny(_) => 0,
            Encoder::ResNet(_) => ResNetEncoder::SKIP_CHANNELS,
        }
    }

    /// Returns the final features, the low-level skip features (if the
    /// architecture has them) and the backward cache.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Option<Tensor>, EncoderCache)> {
        match self {
            Encoder::Tiny(t) => {
                let mut caches = Vec::with_capacity(t.stages.len());
                let mut h = x.clone();
                for stage in &mut t.stages {
                    let (y, c) = stage.forward(&h, mode)?;
                    caches.push(c);
                    h = y;
                }
                Ok((h, None, EncoderCache::Tiny(caches)))
            }
            Encoder::ResNet(r) => {
                let (s, stem) = r.stem.forward(x, mode)?;
                let (mut h, pool) = MaxPool2d.forward(&s);
                let mut layer_caches = Vec::with_capacity(r.layers.len());
                let mut skip = None;
                for (li, layer) in r.layers.iter_mut().enumerate() {
                    let mut caches = Vec::with_capacity(layer.len());
                    for block in layer.iter_mut() {
                        let (y, c) = block.forward(&h, mode)?;
                        caches.push(c);
                        h = y;
                    }
                    layer_caches.push(caches);
                    if li == 0 {
                        skip = Some(h.clone());
                    }
                }
                let (z, proj) = r.proj.forward(&h, mode)?;
                Ok((
                    z,
                    skip,
                    EncoderCache::ResNet(Box::new(ResNetCache {
                        stem,
                        pool,
                        layers: layer_caches,
                        proj,
                    })),
                ))
            }
        }
    }

    /// Accumulates parameter gradients from the feature gradient and, for
    /// skip architectures, the skip gradient.
    pub fn backward(&mut self, cache: EncoderCache, grad: Tensor, grad_skip: Option<Tensor>) {
        match (self, cache) {
            (Encoder::Tiny(t), EncoderCache::Tiny(caches)) => {
                let mut g = Some(grad);
                for (i, (stage, c)) in t.stages.iter_mut().zip(caches).enumerate().rev() {
                    g = stage.backward(c, g.expect("gradient from the later stage"), i > 0);
                }
            }
            (Encoder::ResNet(r), EncoderCache::ResNet(cache)) => {
                let cache = *cache;
                let mut g = r.proj.backward(cache.proj, grad, true).expect("input grad");
                for (li, (layer, caches)) in r.layers.iter_mut().zip(cache.layers).enumerate().rev() {
                    if li == 0 {
                        if let Some(gs) = &grad_skip {
                            g.add_assign(gs);
                        }
                    }
                    for (block, c) in layer.iter_mut().zip(caches).rev() {
                        g = block.backward(c, g);
                    }
                }
                let g = MaxPool2d.backward(cache.pool, &g);
                r.stem.backward(cache.stem, g, false);
            }
            _ => panic!("encoder cache does not match encoder architecture"),
        }
    }

    pub fn set_frozen_bn(&mut self, frozen: bool) {
        match self {
            Encoder::Tiny(t) => t.stages.iter_mut().for_each(|s| s.set_frozen_bn(frozen)),
            Encoder::ResNet(r) => {
                r.stem.set_frozen_bn(frozen);
                r.layers.iter_mut().flatten().for_each(|b| b.set_frozen_bn(frozen));
                r.proj.set_frozen_bn(frozen);
            }
        }
    }
}

impl Parameterized for Encoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        match self {
            Encoder::Tiny(t) => {
                for (i, s) in t.stages.iter().enumerate() {
                    s.visit(&join(prefix, &format!("stage{i}")), f);
                }
            }
            Encoder::ResNet(r) => {
                r.stem.visit(&join(prefix, "stem"), f);
                for (li, layer) in r.layers.iter().enumerate() {
                    for (bi, b) in layer.iter().enumerate() {
                        b.visit(&join(prefix, &format!("layer{}/{bi}", li + 1)), f);
                    }
                }
                r.proj.visit(&join(prefix, "proj"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            Encoder::Tiny(t) => {
                for (i, s) in t.stages.iter_mut().enumerate() {
                    s.visit_mut(&join(prefix, &format!("stage{i}")), f);
                }
            }
            Encoder::ResNet(r) => {
                r.stem.visit_mut(&join(prefix, "stem"), f);
                for (li, layer) in r.layers.iter_mut().enumerate() {
                    for (bi, b) in layer.iter_mut().enumerate() {
                        b.visit_mut(&join(prefix, &format!("layer{}/{bi}", li + 1)), f);
                    }
                }
                r.proj.visit_mut(&join(prefix, "proj"), f);
            }
        }
    }
}
