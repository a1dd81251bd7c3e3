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

use super::{join, Mode, Param, Parameterized};
use crate::tensor::Tensor;

pub fn relu(x: Tensor) -> Tensor {
    let mut x = x;
    for v in x.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    x
}

/// Gradient of ReLU given its forward output.
pub fn relu_backward(out: &Tensor, grad: Tensor) -> Tensor {
    let mut g = grad;
    for (gv, &o) in g.data_mut().iter_mut().zip(out.data()) {
        if o <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Batch normalisation over `B×H×W` per channel.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f32,
    pub eps: f32,
    /// Use running statistics even in training mode (e.g. after loading
    /// pretrained weights).
    pub frozen: bool,
}

pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
    batch_stats: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(&[channels], 1.0),
            beta: Param::zeros(&[channels]),
            running_mean: Param::buffer(&[channels], 0.0),
            running_var: Param::buffer(&[channels], 1.0),
            momentum: 0.1,
            eps: 1e-5,
            frozen: false,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> (Tensor, BnCache) {
        let c = x.channels();
        let n = (x.len() / c.max(1)) as f64;
        let batch_stats = mode == Mode::Train && !self.frozen;
        let (mean, var): (Vec<f32>, Vec<f32>) = if batch_stats {
            let mut sum = vec![0.0f64; c];
            let mut sq = vec![0.0f64; c];
            for px in x.data().chunks_exact(c) {
                for ((s, q), &v) in sum.iter_mut().zip(sq.iter_mut()).zip(px) {
                    *s += v as f64;
                    *q += (v as f64) * (v as f64);
                }
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
            let var: Vec<f64> = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0)).collect();
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            for i in 0..c {
                let rm = &mut self.running_mean.value[i];
                *rm = (1.0 - self.momentum) * *rm + self.momentum * mean[i] as f32;
                let rv = &mut self.running_var.value[i];
                *rv = (1.0 - self.momentum) * *rv + self.momentum * (var[i] * unbias) as f32;
            }
            (
                mean.iter().map(|&v| v as f32).collect(),
                var.iter().map(|&v| v as f32).collect(),
            )
        } else {
            (self.running_mean.value.clone(), self.running_var.value.clone())
        };
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = x.clone();
        let mut y = x.clone();
        for (hp, yp) in xhat.data_mut().chunks_exact_mut(c).zip(y.data_mut().chunks_exact_mut(c)) {
            for i in 0..c {
                let h = (hp[i] - mean[i]) * inv_std[i];
                hp[i] = h;
                yp[i] = h * self.gamma.value[i] + self.beta.value[i];
            }
        }
        (y, BnCache { xhat, inv_std, batch_stats })
    }

    pub fn backward(&mut self, cache: BnCache, grad: &Tensor) -> Tensor {
        let c = grad.channels();
        let n = (grad.len() / c.max(1)) as f64;
        let mut sum_g = vec![0.0f64; c];
        let mut sum_gx = vec![0.0f64; c];
        for (gp, hp) in grad.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
            for i in 0..c {
                sum_g[i] += gp[i] as f64;
                sum_gx[i] += gp[i] as f64 * hp[i] as f64;
            }
        }
        for i in 0..c {
            self.beta.grad[i] += sum_g[i] as f32;
            self.gamma.grad[i] += sum_gx[i] as f32;
        }
        let mut dx = grad.clone();
        for (dp, hp) in dx.data_mut().chunks_exact_mut(c).zip(cache.xhat.data().chunks_exact(c)) {
            for i in 0..c {
                let scale = self.gamma.value[i] * cache.inv_std[i];
                dp[i] = if cache.batch_stats {
                    scale * (dp[i] - (sum_g[i] / n) as f32 - hp[i] * (sum_gx[i] / n) as f32)
                } else {
                    scale * dp[i]
                };
            }
        }
        dx
    }
}

impl Parameterized for BatchNorm2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

/// 3×3, stride-2, padding-1 max pooling (the ResNet stem pool).
#[derive(Clone, Copy, Debug, Default)]
pub struct MaxPool2d;

pub struct MaxPoolCache {
    argmax: Vec<usize>,
    in_dims: [usize; 4],
}

impl MaxPool2d {
    pub fn forward(&self, x: &Tensor) -> (Tensor, MaxPoolCache) {
        let [b, h, w, c] = x.dims();
        let (oh, ow) = ((h + 1) / 2, (w + 1) / 2);
        let mut out = Tensor::full([b, oh, ow, c], f32::NEG_INFINITY);
        let mut argmax = vec![0usize; out.len()];
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ky in 0..3 {
                        let iy = (oy * 2 + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * 2 + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..c {
                                let src = x.offset([bi, iy as usize, ix as usize, ci]);
                                let dst = out.offset([bi, oy, ox, ci]);
                                if x.data()[src] > out.data()[dst] {
                                    out.data_mut()[dst] = x.data()[src];
                                    argmax[dst] = src;
                                }
                            }
                        }
                    }
                }
            }
        }
        (out, MaxPoolCache { argmax, in_dims: x.dims() })
    }

    pub fn backward(&self, cache: MaxPoolCache, grad: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(cache.in_dims);
        for (&src, &g) in cache.argmax.iter().zip(grad.data()) {
            dx.data_mut()[src] += g;
        }
        dx
    }
}

/// Depth-to-space rearrangement: `B×h×w×(r²C)` → `B×rh×rw×C`, with input
/// channel `(dy·r + dx)·C + c` landing at sub-pixel `(dy, dx)`.
#[derive(Clone, Copy, Debug)]
pub struct PixelShuffle(pub usize);

impl PixelShuffle {
    fn index_map(&self, in_dims: [usize; 4]) -> Vec<usize> {
        let r = self.0;
        let [b, h, w, rc] = in_dims;
        let c = rc / (r * r);
        let (oh, ow) = (h * r, w * r);
        let mut map = Vec::with_capacity(b * oh * ow * c);
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y, dy, x, dx) = (oy / r, oy % r, ox / r, ox % r);
                    let base = ((bi * h + y) * w + x) * rc + (dy * r + dx) * c;
                    map.extend(base..base + c);
                }
            }
        }
        map
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let r = self.0;
        let [b, h, w, rc] = x.dims();
        assert_eq!(rc % (r * r), 0, "pixel shuffle needs a multiple of r² channels");
        let map = self.index_map(x.dims());
        let data = map.iter().map(|&i| x.data()[i]).collect();
        Tensor::from_vec([b, h * r, w * r, rc / (r * r)], data).expect("shuffle dims")
    }

    pub fn backward(&self, in_dims: [usize; 4], grad: &Tensor) -> Tensor {
        let map = self.index_map(in_dims);
        let mut dx = Tensor::zeros(in_dims);
        for (&i, &g) in map.iter().zip(grad.data()) {
            dx.data_mut()[i] = g;
        }
        dx
    }
}

/// Source index pairs and weights for half-pixel-centred linear resampling.
fn linear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, (pos - i0 as f64) as f32)
        })
        .collect()
}

/// Bilinear resize (half-pixel centres, edge clamped) to `oh×ow`.
pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let [b, h, w, c] = x.dims();
    if (h, w) == (oh, ow) {
        return x.clone();
    }
    let ty = linear_taps(h, oh);
    let tx = linear_taps(w, ow);
    let mut out = Tensor::zeros([b, oh, ow, c]);
    let src = x.data();
    let dst = out.data_mut();
    for bi in 0..b {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let o = ((bi * oh + oy) * ow + ox) * c;
                let corners = [
                    (y0, x0, (1.0 - fy) * (1.0 - fx)),
                    (y0, x1, (1.0 - fy) * fx),
                    (y1, x0, fy * (1.0 - fx)),
                    (y1, x1, fy * fx),
                ];
                for (yy, xx, wgt) in corners {
                    if wgt == 0.0 {
                        continue;
                    }
                    let s = ((bi * h + yy) * w + xx) * c;
                    for i in 0..c {
                        dst[o + i] += wgt * src[s + i];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`].
pub fn resize_bilinear_backward(in_dims: [usize; 4], grad: &Tensor) -> Tensor {
    let [b, h, w, c] = in_dims;
    let [_, oh, ow, _] = grad.dims();
    if (h, w) == (oh, ow) {
        return grad.clone();
    }
    let ty = linear_taps(h, oh);
    let tx = linear_taps(w, ow);
    let mut dx = Tensor::zeros(in_dims);
    let g = grad.data();
    let d = dx.data_mut();
    for bi in 0..b {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let o = ((bi * oh + oy) * ow + ox) * c;
                let corners = [
                    (y0, x0, (1.0 - fy) * (1.0 - fx)),
                    (y0, x1, (1.0 - fy) * fx),
                    (y1, x0, fy * (1.0 - fx)),
                    (y1, x1, fy * fx),
                ];
                for (yy, xx, wgt) in corners {
                    if wgt == 0.0 {
                        continue;
                    }
                    let s = ((bi * h + yy) * w + xx) * c;
                    for i in 0..c {
                        d[s + i] += wgt * g[o + i];
                    }
                }
            }
        }
    }
    dx
}

/// Spatial mean: `B×H×W×C` → `B×1×1×C`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let [b, h, w, c] = x.dims();
    let hw = (h * w) as f64;
    let mut out = Tensor::zeros([b, 1, 1, c]);
    for bi in 0..b {
        let mut acc = vec![0.0f64; c];
        for px in x.data()[bi * h * w * c..(bi + 1) * h * w * c].chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v as f64;
            }
        }
        for (i, a) in acc.into_iter().enumerate() {
            out.set([bi, 0, 0, i], (a / hw) as f32);
        }
    }
    out
}

pub fn global_avg_pool_backward(in_dims: [usize; 4], grad: &Tensor) -> Tensor {
    let [_, h, w, _] = in_dims;
    let inv = 1.0 / (h * w) as f32;
    Tensor::from_fn(in_dims, |[b, _, _, c]| grad.get([b, 0, 0, c]) * inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::*;

    #[test]
    fn pixel_shuffle_places_subpixels() {
        let x = Tensor::from_vec([1, 1, 1, 8], (0..8).map(|v| v as f32).collect()).unwrap();
        let y = PixelShuffle(2).forward(&x);
        assert_eq!(y.dims(), [1, 2, 2, 2]);
        assert_eq!(y.get([0, 0, 0, 0]), 0.0);
        assert_eq!(y.get([0, 0, 1, 1]), 3.0);
        assert_eq!(y.get([0, 1, 0, 0]), 4.0);
        assert_eq!(y.get([0, 1, 1, 1]), 7.0);
        let back = PixelShuffle(2).backward(x.dims(), &y);
        assert_eq!(back, x);
    }

    #[test]
    fn resize_identity_and_constant() {
        let x = random([1, 3, 4, 2], 1);
        assert_eq!(resize_bilinear(&x, 3, 4), x);
        let c = Tensor::full([1, 3, 3, 1], 2.5f32);
        let up = resize_bilinear(&c, 7, 5);
        assert!(up.data().iter().all(|&v| (v - 2.5).abs() < 1e-6));
    }

    #[test]
    fn resize_backward_is_adjoint() {
        let x = random([2, 3, 4, 2], 2);
        for (oh, ow) in [(6, 8), (12, 16), (2, 3)] {
            let y = resize_bilinear(&x, oh, ow);
            let r = random(y.dims(), 3);
            let dx = resize_bilinear_backward(x.dims(), &r);
            let lhs = dot(&y, &r);
            let rhs = dot(&x, &dx);
            assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let mut bn = BatchNorm2d::new(3);
        bn.gamma.value = vec![1.5, 0.5, -1.0];
        bn.beta.value = vec![0.1, 0.2, 0.3];
        let x = random([2, 3, 3, 3], 4);
        let (y, cache) = bn.forward(&x, Mode::Train);
        let r = random(y.dims(), 5);
        let dx = bn.backward(cache, &r);
        let mut xs = x.data().to_vec();
        for j in pick(xs.len(), 8, 6) {
            let mut probe = bn.clone();
            let num = central(&mut xs, j, 1e-2, |v| {
                let t = Tensor::from_vec(x.dims(), v.to_vec()).unwrap();
                dot(&probe.forward(&t, Mode::Train).0, &r)
            });
            assert_close(dx.data()[j] as f64, num, 2e-2, "bn dx");
        }
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut bn = BatchNorm2d::new(1);
        bn.running_mean.value = vec![1.0];
        bn.running_var.value = vec![4.0];
        bn.eps = 0.0;
        let x = Tensor::full([1, 1, 2, 1], 3.0);
        let (y, _) = bn.forward(&x, Mode::Eval);
        assert!(y.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        assert_eq!(bn.running_mean.value, vec![1.0]);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let x = Tensor::from_vec([1, 2, 2, 1], vec![1.0, 4.0, 3.0, 2.0]).unwrap();
        let (y, cache) = MaxPool2d.forward(&x);
        assert_eq!(y.data(), &[4.0]);
        let dx = MaxPool2d.backward(cache, &Tensor::full([1, 1, 1, 1], 1.0));
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn global_pool_backward_is_adjoint() {
        let x = random([2, 3, 2, 4], 7);
        let y = global_avg_pool(&x);
        let r = random(y.dims(), 8);
        let dx = global_avg_pool_backward(x.dims(), &r);
        assert!((dot(&y, &r) - dot(&x, &dx)).abs() < 1e-5);
    }
}
