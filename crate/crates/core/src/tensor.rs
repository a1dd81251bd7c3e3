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

//! Dense rank-4 arrays in channel-last (`B×H×W×C`) layout.

use crate::error::{Error, Result};

/// A dense rank-4 array stored row-major in `B×H×W×C` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Copy + Default> Tensor<T> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![T::default(); dims.iter().product()],
        }
    }

    pub fn full(dims: [usize; 4], value: T) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::shape(format!(
                "buffer of length {} does not fit dims {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for b in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    for c in 0..dims[3] {
                        data.push(f([b, y, x, c]));
                    }
                }
            }
        }
        Self { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.dims[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, idx: [usize; 4]) -> usize {
        ((idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]) * self.dims[3] + idx[3]
    }

    #[inline]
    pub fn get(&self, idx: [usize; 4]) -> T {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 4], value: T) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Splits along the channel axis into `[0, at)` and `[at, C)`.
    pub fn split_channels(&self, at: usize) -> Result<(Self, Self)> {
        let c = self.channels();
        if at > c {
            return Err(Error::shape(format!("cannot split {c} channels at {at}")));
        }
        let pixels = self.len() / c.max(1);
        let mut lo = Vec::with_capacity(pixels * at);
        let mut hi = Vec::with_capacity(pixels * (c - at));
        for px in self.data.chunks_exact(c) {
            lo.extend_from_slice(&px[..at]);
            hi.extend_from_slice(&px[at..]);
        }
        let [b, h, w, _] = self.dims;
        Ok((
            Self { dims: [b, h, w, at], data: lo },
            Self { dims: [b, h, w, c - at], data: hi },
        ))
    }

    /// Concatenates `[a : b]` along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        let [ba, ha, wa, ca] = a.dims;
        let [bb, hb, wb, cb] = b.dims;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(Error::shape(format!(
                "cannot concatenate {:?} and {:?} along channels",
                a.dims, b.dims
            )));
        }
        let mut data = Vec::with_capacity(a.len() + b.len());
        if ca == 0 {
            data.extend_from_slice(&b.data);
        } else if cb == 0 {
            data.extend_from_slice(&a.data);
        } else {
            for (pa, pb) in a.data.chunks_exact(ca).zip(b.data.chunks_exact(cb)) {
                data.extend_from_slice(pa);
                data.extend_from_slice(pb);
            }
        }
        Ok(Self {
            dims: [ba, ha, wa, ca + cb],
            data,
        })
    }

    /// Selects a subset of batch entries, in the given order.
    pub fn select_batch(&self, indices: &[usize]) -> Self {
        let per = self.dims[1] * self.dims[2] * self.dims[3];
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        Self {
            dims: [indices.len(), self.dims[1], self.dims[2], self.dims[3]],
            data,
        }
    }

    /// Stacks single-item tensors (or batches) along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("cannot stack an empty list"))?;
        let [_, h, w, c] = first.dims;
        let mut b = 0;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        for t in items {
            if t.dims[1..] != [h, w, c] {
                return Err(Error::shape(format!(
                    "cannot stack {:?} with {:?}",
                    first.dims, t.dims
                )));
            }
            b += t.dims[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Self { dims: [b, h, w, c], data })
    }

    /// Returns batch entry `i` as a `1×H×W×C` tensor.
    pub fn item(&self, i: usize) -> Self {
        self.select_batch(&[i])
    }

    pub(crate) fn same_dims(&self, other: &Tensor<impl Copy + Default>, what: &str) -> Result<()> {
        if self.dims != other.dims() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.dims,
                other.dims()
            )));
        }
        Ok(())
    }
}

impl Tensor<f32> {
    pub fn to_f64(&self) -> Tensor<f64> {
        self.map(|v| v as f64)
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: f32) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Per-pixel argmax over channels, as a `B×H×W` label buffer.
    pub fn argmax_channels(&self) -> Vec<u8> {
        self.data
            .chunks_exact(self.channels())
            .map(|px| {
                let mut best = 0;
                for (i, &v) in px.iter().enumerate() {
                    if v > px[best] {
                        best = i;
                    }
                }
                best as u8
            })
            .collect()
    }
}

impl Tensor<f64> {
    pub fn to_f32(&self) -> Tensor<f32> {
        self.map(|v| v as f32)
    }
}
