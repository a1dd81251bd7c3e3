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

//! Per-modality encoder/decoder networks and the shared auxiliary decoder.
//!
//! An encoder maps a `B×H×W×c_in` batch to `F` feature channels at stride
//! `s`; the first `F/2` channels form the invariant half and the last `F/2`
//! the specific half. Main decoders consume `[inv : spc]`, the auxiliary
//! decoder consumes one half at a time.

mod blocks;
mod decoder;
mod encoder;

pub use blocks::{Bottleneck, ConvUnit};
pub use decoder::{Decoder, DecoderCache, DeepLabDecoder, TinyDecoder};
pub use encoder::{Encoder, EncoderCache, ResNetEncoder, TinyEncoder, TINY_WIDTHS};

use crate::config::Backbone;
use crate::error::{Error, Result};
use crate::nn::{join, Mode, Param, Parameterized};
use crate::tensor::Tensor;
use crate::types::{FeatureVolume, Modality, SegLogits};
use rand::Rng;
use std::collections::HashMap;

/// Architecture constants of a backbone preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Preset {
    pub backbone: Backbone,
    /// Encoder output channels `F`.
    pub features: usize,
    /// Output stride `s` of the encoder.
    pub stride: usize,
}

impl Preset {
    pub fn for_backbone(backbone: Backbone) -> Self {
        match backbone {
            Backbone::Tiny => Self {
                backbone,
                features: 64,
                stride: 8,
            },
            Backbone::ResNet50Dilated => Self {
                backbone,
                features: 1024,
                stride: 8,
            },
        }
    }

    pub fn encoder(&self, in_channels: usize, rng: &mut impl Rng) -> Encoder {
        self.encoder_with_features(in_channels, self.features, rng)
    }

    pub(crate) fn encoder_with_features(&self, in_channels: usize, features: usize, rng: &mut impl Rng) -> Encoder {
        match self.backbone {
            Backbone::Tiny => Encoder::Tiny(TinyEncoder::new(in_channels, features, rng)),
            Backbone::ResNet50Dilated => Encoder::ResNet(Box::new(ResNetEncoder::new(in_channels, features, rng))),
        }
    }

    /// Main-style decoder with `in_channels` feature inputs; `skip_channels`
    /// is ignored by presets without a skip connection.
    pub fn decoder(&self, in_channels: usize, skip_channels: usize, classes: usize, rng: &mut impl Rng) -> Decoder {
        match self.backbone {
            Backbone::Tiny => Decoder::Tiny(TinyDecoder::new(in_channels, classes, rng)),
            Backbone::ResNet50Dilated => {
                Decoder::DeepLab(Box::new(DeepLabDecoder::new(in_channels, skip_channels, classes, rng)))
            }
        }
    }
}

/// Cache of one encoder pass.
pub struct EncodeCache {
    encoder: EncoderCache,
    half: usize,
}

/// Cache of one main-decoder pass.
pub struct DecodeCache {
    decoder: DecoderCache,
    half: usize,
}

/// Gradients of a main-decoder pass w.r.t. its inputs.
pub struct DecodeGrads {
    pub inv: Tensor,
    pub spc: Tensor,
    pub skip: Option<Tensor>,
}

/// Encoder and main decoder of one modality.
#[derive(Clone, Debug)]
pub struct ModalityNet {
    pub modality: Modality,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl ModalityNet {
    pub fn new(modality: Modality, preset: Preset, classes: usize, rng: &mut impl Rng) -> Self {
        let encoder = preset.encoder(modality.channels(), rng);
        let decoder = preset.decoder(preset.features, encoder.skip_channels(), classes, rng);
        Self {
            modality,
            encoder,
            decoder,
        }
    }

    pub fn features(&self) -> usize {
        self.encoder.out_channels()
    }

    pub fn num_classes(&self) -> usize {
        self.decoder.num_classes()
    }

    /// Runs the encoder and splits its output into `[inv : spc]`.
    pub fn encode(&mut self, x: &Tensor, mode: Mode) -> Result<(FeatureVolume, EncodeCache)> {
        let expected = self.modality.channels();
        if x.channels() != expected {
            return Err(Error::shape(format!(
                "{} network expects {expected} input channels, got {}",
                self.modality,
                x.channels()
            )));
        }
        let (z, skip, cache) = self.encoder.forward(x, mode)?;
        let half = z.channels() / 2;
        let (inv, spc) = z.split_channels(half)?;
        Ok((
            FeatureVolume {
                inv,
                spc,
                modality: self.modality,
                skip,
            },
            EncodeCache { encoder: cache, half },
        ))
    }

    /// Backpropagates half-volume (and skip) gradients through the encoder.
    pub fn encode_backward(&mut self, cache: EncodeCache, g_inv: &Tensor, g_spc: &Tensor, g_skip: Option<Tensor>) {
        debug_assert_eq!(g_inv.channels(), cache.half);
        let g = Tensor::concat_channels(g_inv, g_spc).expect("half gradients share dims");
        self.encoder.backward(cache.encoder, g, g_skip);
    }

    /// Decodes `[inv : spc]` to logits at `out_hw`.
    pub fn decode_main(
        &mut self,
        inv: &Tensor,
        spc: &Tensor,
        skip: Option<&Tensor>,
        out_hw: (usize, usize),
        mode: Mode,
    ) -> Result<(SegLogits, DecodeCache)> {
        if inv.dims() != spc.dims() {
            return Err(Error::shape(format!(
                "invariant half {:?} and specific half {:?} differ",
                inv.dims(),
                spc.dims()
            )));
        }
        if inv.channels() + spc.channels() != self.decoder.in_channels() {
            return Err(Error::shape(format!(
                "halves carry {} channels, decoder expects {}",
                inv.channels() + spc.channels(),
                self.decoder.in_channels()
            )));
        }
        let z = Tensor::concat_channels(inv, spc)?;
        let (logits, cache) = self.decoder.forward(&z, skip, out_hw, mode)?;
        Ok((
            SegLogits(logits),
            DecodeCache {
                decoder: cache,
                half: inv.channels(),
            },
        ))
    }

    pub fn decode_main_backward(&mut self, cache: DecodeCache, grad: &Tensor) -> DecodeGrads {
        let (g, skip) = self.decoder.backward(cache.decoder, grad);
        let (inv, spc) = g.split_channels(cache.half).expect("decoder input layout");
        DecodeGrads { inv, spc, skip }
    }

    /// Encoder + main decoder at input resolution.
    pub fn predict(&mut self, x: &Tensor) -> Result<SegLogits> {
        let (v, _) = self.encode(x, Mode::Eval)?;
        let (logits, _) = self.decode_main(&v.inv, &v.spc, v.skip.as_ref(), (x.height(), x.width()), Mode::Eval)?;
        Ok(logits)
    }

    pub fn set_frozen_bn(&mut self, frozen: bool) {
        self.encoder.set_frozen_bn(frozen);
        self.decoder.set_frozen_bn(frozen);
    }

    /// Copies encoder weights from a name → (shape, values) table.
    ///
    /// A three-channel first kernel is averaged into one channel when this is
    /// the Depth network. Names absent from the table keep their current
    /// values. `freeze_projection_bn` pins the running statistics of the
    /// 1×1 projection's batch norm.
    pub fn load_encoder_weights(
        &mut self,
        table: &HashMap<String, (Vec<usize>, Vec<f32>)>,
        freeze_projection_bn: bool,
    ) -> Result<usize> {
        let first = match &self.encoder {
            Encoder::Tiny(_) => "stage0/conv/weight",
            Encoder::ResNet(_) => "stem/conv/weight",
        };
        let mut loaded = 0;
        let mut failure = None;
        self.encoder.visit_mut("", &mut |name, p| {
            let Some((shape, values)) = table.get(name) else {
                return;
            };
            let (shape, values) = if name == first && shape.len() == 4 && shape[2] == 3 && p.shape[2] == 1 {
                match Tensor::from_vec([shape[0], shape[1], shape[2], shape[3]], values.clone())
                    .and_then(|k| adapt_first_layer(&k))
                {
                    Ok(k) => (k.dims().to_vec(), k.into_vec()),
                    Err(e) => {
                        failure.get_or_insert(e);
                        return;
                    }
                }
            } else {
                (shape.clone(), values.clone())
            };
            if shape != p.shape || values.len() != p.len() {
                failure.get_or_insert(Error::shape(format!(
                    "pretrained {name} has shape {shape:?}, expected {:?}",
                    p.shape
                )));
                return;
            }
            p.value = values;
            loaded += 1;
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if let (true, Encoder::ResNet(r)) = (freeze_projection_bn, &mut self.encoder) {
            r.proj.set_frozen_bn(true);
        }
        Ok(loaded)
    }
}

impl Parameterized for ModalityNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.encoder.visit(&join(prefix, "enc"), f);
        self.decoder.visit(&join(prefix, "dec"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_mut(&join(prefix, "enc"), f);
        self.decoder.visit_mut(&join(prefix, "dec"), f);
    }
}

/// Training-only decoder shared by both modalities and both halves.
#[derive(Clone, Debug)]
pub struct AuxDecoder {
    pub decoder: Decoder,
}

pub struct AuxCache(DecoderCache);

impl AuxDecoder {
    pub fn new(preset: Preset, classes: usize, rng: &mut impl Rng) -> Self {
        Self {
            decoder: preset.decoder(preset.features / 2, 0, classes, rng),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.decoder.in_channels()
    }

    pub fn decode_aux(&mut self, half: &Tensor, out_hw: (usize, usize), mode: Mode) -> Result<(SegLogits, AuxCache)> {
        if half.channels() != self.in_channels() {
            return Err(Error::shape(format!(
                "auxiliary decoder expects {} channels, got {}",
                self.in_channels(),
                half.channels()
            )));
        }
        let (logits, cache) = self.decoder.forward(half, None, out_hw, mode)?;
        Ok((SegLogits(logits), AuxCache(cache)))
    }

    pub fn decode_aux_backward(&mut self, cache: AuxCache, grad: &Tensor) -> Tensor {
        self.decoder.backward(cache.0, grad).0
    }
}

impl Parameterized for AuxDecoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.decoder.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.decoder.visit_mut(prefix, f);
    }
}

/// Averages a `k×k×3×n` kernel over its input channels into `k×k×1×n`.
pub fn adapt_first_layer(weights: &Tensor) -> Result<Tensor> {
    let [kh, kw, cin, n] = weights.dims();
    if cin != 3 {
        return Err(Error::shape(format!(
            "first-layer kernel must have 3 input channels, got {cin}"
        )));
    }
    Ok(Tensor::from_fn([kh, kw, 1, n], |[y, x, _, o]| {
        let s: f32 = (0..3).map(|c| weights.get([y, x, c, o])).sum();
        s / 3.0
    }))
}
