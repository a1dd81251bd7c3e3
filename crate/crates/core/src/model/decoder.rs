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

use super::blocks::{ConvUnit, ConvUnitCache};
use crate::error::{Error, Result};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, join, resize_bilinear, resize_bilinear_backward,
    ConvSpec, Mode, Param, Parameterized, PixelShuffle,
};
use crate::tensor::Tensor;
use rand::Rng;

const TINY_MID: usize = 32;

/// Two-stage upsampling head: 3×3 conv + ×2 depth-to-space, then 3×3 conv +
/// ×4 depth-to-space straight to class scores.
#[derive(Clone, Debug)]
pub struct TinyDecoder {
    pub up1: ConvUnit,
    pub up2: ConvUnit,
    classes: usize,
}

impl TinyDecoder {
    pub fn new(in_channels: usize, classes: usize, rng: &mut impl Rng) -> Self {
        Self {
            up1: ConvUnit::plain(in_channels, 4 * TINY_MID, ConvSpec::new(3, 1), true, rng),
            up2: ConvUnit::plain(TINY_MID, 16 * classes, ConvSpec::new(3, 1), false, rng),
            classes,
        }
    }
}

const ASPP_RATES: [usize; 3] = [12, 24, 36];
const ASPP_WIDTH: usize = 256;
const LOW_WIDTH: usize = 48;

/// Atrous spatial pyramid pooling.
#[derive(Clone, Debug)]
pub struct Aspp {
    pub branches: Vec<ConvUnit>,
    pub pool: ConvUnit,
    pub project: ConvUnit,
}

impl Aspp {
    fn new(cin: usize, rng: &mut impl Rng) -> Self {
        let mut branches = vec![ConvUnit::normed(cin, ASPP_WIDTH, ConvSpec::new(1, 1), true, rng)];
        for r in ASPP_RATES {
            branches.push(ConvUnit::normed(cin, ASPP_WIDTH, ConvSpec::dilated(3, r), true, rng));
        }
        Self {
            branches,
            pool: ConvUnit::normed(cin, ASPP_WIDTH, ConvSpec::new(1, 1), true, rng),
            project: ConvUnit::normed(5 * ASPP_WIDTH, ASPP_WIDTH, ConvSpec::new(1, 1), true, rng),
        }
    }
}

/// DeepLabV3+ head, optionally with the low-level skip branch.
#[derive(Clone, Debug)]
pub struct DeepLabDecoder {
    pub aspp: Aspp,
    pub low: Option<ConvUnit>,
    pub refine: Vec<ConvUnit>,
    pub classifier: ConvUnit,
}

impl DeepLabDecoder {
    pub fn new(in_channels: usize, skip_channels: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let aspp = Aspp::new(in_channels, rng);
        let (low, refine) = if skip_channels > 0 {
            let low = ConvUnit::normed(skip_channels, LOW_WIDTH, ConvSpec::new(1, 1), true, rng);
            let refine = vec![
                ConvUnit::normed(ASPP_WIDTH + LOW_WIDTH, ASPP_WIDTH, ConvSpec::new(3, 1), true, rng),
                ConvUnit::normed(ASPP_WIDTH, ASPP_WIDTH, ConvSpec::new(3, 1), true, rng),
            ];
            (Some(low), refine)
        } else {
            let refine = vec![ConvUnit::normed(ASPP_WIDTH, ASPP_WIDTH, ConvSpec::new(3, 1), true, rng)];
            (None, refine)
        };
        Self {
            aspp,
            low,
            refine,
            classifier: ConvUnit::plain(ASPP_WIDTH, classes, ConvSpec::new(1, 1), false, rng),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Decoder {
    Tiny(TinyDecoder),
    DeepLab(Box<DeepLabDecoder>),
}

pub struct DeepLabCache {
    in_dims: [usize; 4],
    branches: Vec<ConvUnitCache>,
    pool: ConvUnitCache,
    pooled_dims: [usize; 4],
    project: ConvUnitCache,
    low: Option<(ConvUnitCache, [usize; 4])>,
    refine: Vec<ConvUnitCache>,
    classifier: ConvUnitCache,
    logits_dims: [usize; 4],
}

pub enum DecoderCache {
    Tiny {
        up1: ConvUnitCache,
        up1_dims: [usize; 4],
        up2: ConvUnitCache,
        up2_dims: [usize; 4],
    },
    DeepLab(Box<DeepLabCache>),
}

impl Decoder {
    pub fn in_channels(&self) -> usize {
        match self {
            Decoder::Tiny(t) => t.up1.conv.in_channels(),
            Decoder::DeepLab(d) => d.aspp.pool.conv.in_channels(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Decoder::Tiny(t) => t.classes,
            Decoder::DeepLab(d) => d.classifier.out_channels(),
        }
    }

    pub fn uses_skip(&self) -> bool {
        matches!(self, Decoder::DeepLab(d) if d.low.is_some())
    }

    /// Decodes features (plus optional skip features) to `out_hw` logits.
    pub fn forward(
        &mut self,
        x: &Tensor,
        skip: Option<&Tensor>,
        out_hw: (usize, usize),
        mode: Mode,
    ) -> Result<(Tensor, DecoderCache)> {
        if x.channels() != self.in_channels() {
            return Err(Error::shape(format!(
                "decoder expects {} input channels, got {}",
                self.in_channels(),
                x.channels()
            )));
        }
        match self {
            Decoder::Tiny(t) => {
                let (a, up1) = t.up1.forward(x, mode)?;
                let up1_dims = a.dims();
                let a = PixelShuffle(2).forward(&a);
                let (b, up2) = t.up2.forward(&a, mode)?;
                let up2_dims = b.dims();
                let logits = PixelShuffle(4).forward(&b);
                if (logits.height(), logits.width()) != out_hw {
                    return Err(Error::shape(format!(
                        "tiny decoder produces {}×{} logits, {}×{} requested",
                        logits.height(),
                        logits.width(),
                        out_hw.0,
                        out_hw.1
                    )));
                }
                Ok((logits, DecoderCache::Tiny { up1, up1_dims, up2, up2_dims }))
            }
            Decoder::DeepLab(d) => {
                let in_dims = x.dims();
                let [_, h, w, _] = in_dims;
                let mut branches = Vec::with_capacity(d.branches_len());
                let mut cat: Option<Tensor> = None;
                for br in &mut d.aspp.branches {
                    let (y, c) = br.forward(x, mode)?;
                    branches.push(c);
                    cat = Some(match cat {
                        None => y,
                        Some(prev) => Tensor::concat_channels(&prev, &y)?,
                    });
                }
                let gp = global_avg_pool(x);
                let (p, pool) = d.aspp.pool.forward(&gp, mode)?;
                let pooled_dims = p.dims();
                let p = resize_bilinear(&p, h, w);
                let cat = Tensor::concat_channels(&cat.expect("branches"), &p)?;
                let (mut y, project) = d.aspp.project.forward(&cat, mode)?;

                let low = match (&mut d.low, skip) {
                    (Some(low), Some(s)) => {
                        let up_dims = y.dims();
                        let up = resize_bilinear(&y, s.height(), s.width());
                        let (l, c) = low.forward(s, mode)?;
                        y = Tensor::concat_channels(&up, &l)?;
                        Some((c, up_dims))
                    }
                    (Some(_), None) => {
                        return Err(Error::shape("decoder needs skip features but none were given"))
                    }
                    (None, _) => None,
                };
                let mut refine = Vec::with_capacity(d.refine.len());
                for r in &mut d.refine {
                    let (z, c) = r.forward(&y, mode)?;
                    refine.push(c);
                    y = z;
                }
                let (logits, classifier) = d.classifier.forward(&y, mode)?;
                let logits_dims = logits.dims();
                let out = resize_bilinear(&logits, out_hw.0, out_hw.1);
                Ok((
                    out,
                    DecoderCache::DeepLab(Box::new(DeepLabCache {
                        in_dims,
                        branches,
                        pool,
                        pooled_dims,
                        project,
                        low,
                        refine,
                        classifier,
                        logits_dims,
                    })),
                ))
            }
        }
    }

    /// Returns the gradient w.r.t. the feature input and, when used, the
    /// skip input.
    pub fn backward(&mut self, cache: DecoderCache, grad: &Tensor) -> (Tensor, Option<Tensor>) {
        match (self, cache) {
            (Decoder::Tiny(t), DecoderCache::Tiny { up1, up1_dims, up2, up2_dims }) => {
                let g = PixelShuffle(4).backward(up2_dims, grad);
                let g = t.up2.backward(up2, g, true).expect("input grad");
                let g = PixelShuffle(2).backward(up1_dims, &g);
                (t.up1.backward(up1, g, true).expect("input grad"), None)
            }
            (Decoder::DeepLab(d), DecoderCache::DeepLab(c)) => {
                let c = *c;
                let g = resize_bilinear_backward(c.logits_dims, grad);
                let mut g = d.classifier.backward(c.classifier, g, true).expect("input grad");
                for (r, rc) in d.refine.iter_mut().zip(c.refine).rev() {
                    g = r.backward(rc, g, true).expect("input grad");
                }
                let mut grad_skip = None;
                if let (Some(low), Some((lc, up_dims))) = (&mut d.low, c.low) {
                    let (gu, gl) = g.split_channels(ASPP_WIDTH).expect("concat layout");
                    grad_skip = Some(low.backward(lc, gl, true).expect("input grad"));
                    g = resize_bilinear_backward(up_dims, &gu);
                }
                let g = d.aspp.project.backward(c.project, g, true).expect("input grad");
                let n = d.aspp.branches.len();
                let (gb, gp) = g.split_channels(n * ASPP_WIDTH).expect("concat layout");
                let gp = resize_bilinear_backward(c.pooled_dims, &gp);
                let gp = d.aspp.pool.backward(c.pool, gp, true).expect("input grad");
                let mut gx = global_avg_pool_backward(c.in_dims, &gp);
                let mut rest = gb;
                for (i, (br, bc)) in d.aspp.branches.iter_mut().zip(c.branches).enumerate() {
                    let (gi, tail) = if i + 1 < n {
                        rest.split_channels(ASPP_WIDTH).expect("concat layout")
                    } else {
                        let empty = Tensor::zeros([rest.batch(), rest.height(), rest.width(), 0]);
                        (rest.clone(), empty)
                    };
                    gx.add_assign(&br.backward(bc, gi, true).expect("input grad"));
                    rest = tail;
                }
                (gx, grad_skip)
            }
            _ => panic!("decoder cache does not match decoder architecture"),
        }
    }

    pub fn set_frozen_bn(&mut self, frozen: bool) {
        match self {
            Decoder::Tiny(t) => {
                t.up1.set_frozen_bn(frozen);
                t.up2.set_frozen_bn(frozen);
            }
            Decoder::DeepLab(d) => {
                d.aspp.branches.iter_mut().for_each(|b| b.set_frozen_bn(frozen));
                d.aspp.pool.set_frozen_bn(frozen);
                d.aspp.project.set_frozen_bn(frozen);
                if let Some(l) = &mut d.low {
                    l.set_frozen_bn(frozen);
                }
                d.refine.iter_mut().for_each(|r| r.set_frozen_bn(frozen));
            }
        }
    }
}

impl DeepLabDecoder {
    fn branches_len(&self) -> usize {
        self.aspp.branches.len()
    }
}

impl Parameterized for Decoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        match self {
            Decoder::Tiny(t) => {
                t.up1.visit(&join(prefix, "up1"), f);
                t.up2.visit(&join(prefix, "up2"), f);
            }
            Decoder::DeepLab(d) => {
                for (i, b) in d.aspp.branches.iter().enumerate() {
                    b.visit(&join(prefix, &format!("aspp/branch{i}")), f);
                }
                d.aspp.pool.visit(&join(prefix, "aspp/pool"), f);
                d.aspp.project.visit(&join(prefix, "aspp/project"), f);
                if let Some(l) = &d.low {
                    l.visit(&join(prefix, "low"), f);
                }
                for (i, r) in d.refine.iter().enumerate() {
                    r.visit(&join(prefix, &format!("refine{i}")), f);
                }
                d.classifier.visit(&join(prefix, "classifier"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            Decoder::Tiny(t) => {
                t.up1.visit_mut(&join(prefix, "up1"), f);
                t.up2.visit_mut(&join(prefix, "up2"), f);
            }
            Decoder::DeepLab(d) => {
                for (i, b) in d.aspp.branches.iter_mut().enumerate() {
                    b.visit_mut(&join(prefix, &format!("aspp/branch{i}")), f);
                }
                d.aspp.pool.visit_mut(&join(prefix, "aspp/pool"), f);
                d.aspp.project.visit_mut(&join(prefix, "aspp/project"), f);
                if let Some(l) = &mut d.low {
                    l.visit_mut(&join(prefix, "low"), f);
                }
                for (i, r) in d.refine.iter_mut().enumerate() {
                    r.visit_mut(&join(prefix, &format!("refine{i}")), f);
                }
                d.classifier.visit_mut(&join(prefix, "classifier"), f);
            }
        }
    }
}
