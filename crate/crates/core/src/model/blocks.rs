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

use crate::error::Result;
use crate::nn::{
    join, relu, relu_backward, BatchNorm2d, BnCache, Conv2d, ConvCache, ConvSpec, Mode, Param,
    Parameterized,
};
use crate::tensor::Tensor;
use rand::Rng;

/// Convolution, optional batch norm, optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvUnit {
    pub conv: Conv2d,
    pub bn: Option<BatchNorm2d>,
    pub relu: bool,
}

pub struct ConvUnitCache {
    conv: ConvCache,
    bn: Option<BnCache>,
    out: Option<Tensor>,
}

impl ConvUnit {
    /// Conv with bias, no normalisation.
    pub fn plain(cin: usize, cout: usize, spec: ConvSpec, relu: bool, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv2d::new(cin, cout, spec, true, rng),
            bn: None,
            relu,
        }
    }

    /// Bias-free conv followed by batch norm.
    pub fn normed(cin: usize, cout: usize, spec: ConvSpec, relu: bool, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv2d::new(cin, cout, spec, false, rng),
            bn: Some(BatchNorm2d::new(cout)),
            relu,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, ConvUnitCache)> {
        let (mut y, conv) = self.conv.forward(x)?;
        let bn = match &mut self.bn {
            Some(bn) => {
                let (z, c) = bn.forward(&y, mode);
                y = z;
                Some(c)
            }
            None => None,
        };
        let out = if self.relu {
            y = relu(y);
            Some(y.clone())
        } else {
            None
        };
        Ok((y, ConvUnitCache { conv, bn, out }))
    }

    pub fn backward(&mut self, cache: ConvUnitCache, grad: Tensor, input_grad: bool) -> Option<Tensor> {
        let mut g = match &cache.out {
            Some(out) => relu_backward(out, grad),
            None => grad,
        };
        if let (Some(bn), Some(c)) = (&mut self.bn, cache.bn) {
            g = bn.backward(c, &g);
        }
        self.conv.backward(cache.conv, &g, input_grad)
    }

    pub fn set_frozen_bn(&mut self, frozen: bool) {
        if let Some(bn) = &mut self.bn {
            bn.frozen = frozen;
        }
    }
}

impl Parameterized for ConvUnit {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv.visit(&join(prefix, "conv"), f);
        if let Some(bn) = &self.bn {
            bn.visit(&join(prefix, "bn"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        if let Some(bn) = &mut self.bn {
            bn.visit_mut(&join(prefix, "bn"), f);
        }
    }
}

/// ResNet bottleneck: 1×1 → 3×3 (strided / dilated) → 1×1, plus shortcut.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub reduce: ConvUnit,
    pub spatial: ConvUnit,
    pub expand: ConvUnit,
    pub shortcut: Option<ConvUnit>,
}

pub struct BottleneckCache {
    reduce: ConvUnitCache,
    spatial: ConvUnitCache,
    expand: ConvUnitCache,
    shortcut: Option<ConvUnitCache>,
    out: Tensor,
}

impl Bottleneck {
    pub fn new(cin: usize, planes: usize, stride: usize, dilation: usize, rng: &mut impl Rng) -> Self {
        let cout = planes * 4;
        let spatial = ConvSpec {
            kernel: 3,
            stride,
            padding: dilation,
            dilation,
        };
        Self {
            reduce: ConvUnit::normed(cin, planes, ConvSpec::new(1, 1), true, rng),
            spatial: ConvUnit::normed(planes, planes, spatial, true, rng),
            expand: ConvUnit::normed(planes, cout, ConvSpec::new(1, 1), false, rng),
            shortcut: (stride != 1 || cin != cout)
                .then(|| ConvUnit::normed(cin, cout, ConvSpec::new(1, stride), false, rng)),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, BottleneckCache)> {
        let (a, reduce) = self.reduce.forward(x, mode)?;
        let (b, spatial) = self.spatial.forward(&a, mode)?;
        let (mut y, expand) = self.expand.forward(&b, mode)?;
        let shortcut = match &mut self.shortcut {
            Some(s) => {
                let (r, c) = s.forward(x, mode)?;
                y.add_assign(&r);
                Some(c)
            }
            None => {
                y.add_assign(x);
                None
            }
        };
        let y = relu(y);
        Ok((
            y.clone(),
            BottleneckCache {
                reduce,
                spatial,
                expand,
                shortcut,
                out: y,
            },
        ))
    }

    pub fn backward(&mut self, cache: BottleneckCache, grad: Tensor) -> Tensor {
        let g = relu_backward(&cache.out, grad);
        let gb = self.expand.backward(cache.expand, g.clone(), true).expect("input grad");
        let ga = self.spatial.backward(cache.spatial, gb, true).expect("input grad");
        let mut gx = self.reduce.backward(cache.reduce, ga, true).expect("input grad");
        match (&mut self.shortcut, cache.shortcut) {
            (Some(s), Some(c)) => gx.add_assign(&s.backward(c, g, true).expect("input grad")),
            _ => gx.add_assign(&g),
        }
        gx
    }

    pub fn set_frozen_bn(&mut self, frozen: bool) {
        self.reduce.set_frozen_bn(frozen);
        self.spatial.set_frozen_bn(frozen);
        self.expand.set_frozen_bn(frozen);
        if let Some(s) = &mut self.shortcut {
            s.set_frozen_bn(frozen);
        }
    }
}

impl Parameterized for Bottleneck {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.reduce.visit(&join(prefix, "conv1"), f);
        self.spatial.visit(&join(prefix, "conv2"), f);
        self.expand.visit(&join(prefix, "conv3"), f);
        if let Some(s) = &self.shortcut {
            s.visit(&join(prefix, "downsample"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.reduce.visit_mut(&join(prefix, "conv1"), f);
        self.spatial.visit_mut(&join(prefix, "conv2"), f);
        self.expand.visit_mut(&join(prefix, "conv3"), f);
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(&join(prefix, "downsample"), f);
        }
    }
}
