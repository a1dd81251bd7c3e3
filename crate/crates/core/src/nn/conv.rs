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

use super::{join, Param, Parameterized};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub const fn new(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            padding: kernel / 2,
            dilation: 1,
        }
    }

    pub const fn dilated(kernel: usize, dilation: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            padding: dilation * (kernel / 2),
            dilation,
        }
    }

    pub fn output_size(&self, size: usize) -> usize {
        let span = self.dilation * (self.kernel - 1) + 1;
        (size + 2 * self.padding).saturating_sub(span) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Convolution with a `k×k×C_in×C_out` kernel (channel-last).
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub spec: ConvSpec,
    in_channels: usize,
    out_channels: usize,
}

/// Saved forward input of a convolution.
pub struct ConvCache {
    input: Tensor,
    out_hw: (usize, usize),
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        spec: ConvSpec,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let k = spec.kernel;
        let fan_in = k * k * in_channels;
        Self {
            weight: Param::he_normal(&[k, k, in_channels, out_channels], fan_in, rng),
            bias: bias.then(|| Param::zeros(&[out_channels])),
            spec,
            in_channels,
            out_channels,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// Replaces the kernel (e.g. after adapting pretrained weights).
    pub fn set_weight(&mut self, shape: [usize; 4], value: Vec<f32>) -> Result<()> {
        if shape[0] != self.spec.kernel || shape[1] != self.spec.kernel {
            return Err(Error::shape(format!(
                "kernel {shape:?} does not match {0}×{0} convolution",
                self.spec.kernel
            )));
        }
        if value.len() != shape.iter().product::<usize>() {
            return Err(Error::shape("kernel buffer length mismatch"));
        }
        self.in_channels = shape[2];
        self.out_channels = shape[3];
        self.weight = Param {
            grad: vec![0.0; value.len()],
            value,
            shape: shape.to_vec(),
            trainable: true,
        };
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        let [b, h, w, c] = x.dims();
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "convolution expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let oh = self.spec.output_size(h);
        let ow = self.spec.output_size(w);
        let m = b * oh * ow;
        let k = self.spec.kernel * self.spec.kernel * c;
        let n = self.out_channels;
        let mut out = vec![0.0f32; m * n];
        if let Some(bias) = &self.bias {
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(&bias.value);
            }
        }
        let beta = if self.bias.is_some() { 1.0 } else { 0.0 };
        let owned;
        let cols: &[f32] = if self.spec.is_pointwise() {
            x.data()
        } else {
            owned = im2col(x, &self.spec, oh, ow);
            &owned
        };
        gemm(m, k, n, cols, Layout::Normal, &self.weight.value, Layout::Normal, beta, &mut out);
        Ok((
            Tensor::from_vec([b, oh, ow, n], out)?,
            ConvCache {
                input: x.clone(),
                out_hw: (oh, ow),
            },
        ))
    }

    /// Accumulates kernel/bias gradients; returns the input gradient when
    /// `input_grad` is set.
    pub fn backward(&mut self, cache: ConvCache, grad: &Tensor, input_grad: bool) -> Option<Tensor> {
        let x = &cache.input;
        let [b, _, _, c] = x.dims();
        let (oh, ow) = cache.out_hw;
        let m = b * oh * ow;
        let k = self.spec.kernel * self.spec.kernel * c;
        let n = self.out_channels;
        debug_assert_eq!(grad.dims(), [b, oh, ow, n]);
        let g = grad.data();

        if let Some(bias) = &mut self.bias {
            for row in g.chunks_exact(n) {
                for (acc, &v) in bias.grad.iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }

        let pointwise = self.spec.is_pointwise();
        let owned;
        let cols: &[f32] = if pointwise {
            x.data()
        } else {
            owned = im2col(x, &self.spec, oh, ow);
            &owned
        };
        // dW[k, n] += cols^T · dY
        gemm(k, m, n, cols, Layout::Transposed { ld: k }, g, Layout::Normal, 1.0, &mut self.weight.grad);

        if !input_grad {
            return None;
        }
        // dcols[m, k] = dY · W^T
        let mut dcols = vec![0.0f32; m * k];
        gemm(m, n, k, g, Layout::Normal, &self.weight.value, Layout::Transposed { ld: n }, 0.0, &mut dcols);
        let dx = if pointwise {
            dcols
        } else {
            col2im(&dcols, x.dims(), &self.spec, oh, ow)
        };
        Some(Tensor::from_vec(x.dims(), dx).expect("input dims"))
    }
}

impl Parameterized for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

#[derive(Clone, Copy)]
enum Layout {
    /// Row-major `rows×cols` matrix.
    Normal,
    /// The transpose of a row-major matrix with leading dimension `ld`.
    Transposed { ld: usize },
}

/// `c[m×n] = a[m×k] · b[k×n] + beta·c`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], la: Layout, b: &[f32], lb: Layout, beta: f32, c: &mut [f32]) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match la {
        Layout::Normal => (k as isize, 1),
        Layout::Transposed { ld } => (1, ld as isize),
    };
    let (rsb, csb) = match lb {
        Layout::Normal => (n as isize, 1),
        Layout::Transposed { ld } => (1, ld as isize),
    };
    // SAFETY: the strides above describe matrices that lie within the given
    // slices: `a` holds m·k values, `b` k·n and `c` m·n, all asserted here.
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &Tensor, spec: &ConvSpec, oh: usize, ow: usize) -> Vec<f32> {
    let [b, h, w, c] = x.dims();
    let kk = spec.kernel;
    let row_len = kk * kk * c;
    let mut cols = vec![0.0f32; b * oh * ow * row_len];
    let src = x.data();
    let mut row = 0;
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let dst = &mut cols[row * row_len..(row + 1) * row_len];
                for ky in 0..kk {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kk {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let s = ((bi * h + iy as usize) * w + ix as usize) * c;
                        let d = (ky * kk + kx) * c;
                        dst[d..d + c].copy_from_slice(&src[s..s + c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im(cols: &[f32], dims: [usize; 4], spec: &ConvSpec, oh: usize, ow: usize) -> Vec<f32> {
    let [b, h, w, c] = dims;
    let kk = spec.kernel;
    let row_len = kk * kk * c;
    let mut out = vec![0.0f32; b * h * w * c];
    let mut row = 0;
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = &cols[row * row_len..(row + 1) * row_len];
                for ky in 0..kk {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kk {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let d = ((bi * h + iy as usize) * w + ix as usize) * c;
                        let s = (ky * kk + kx) * c;
                        for (o, &v) in out[d..d + c].iter_mut().zip(&src[s..s + c]) {
                            *o += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    out
}
