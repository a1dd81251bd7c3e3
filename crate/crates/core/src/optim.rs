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

//! AdamW with decoupled weight decay and checkpointable moments.

use crate::config::TrainConfig;
use crate::nn::Parameterized;
use std::collections::BTreeMap;

/// Per-parameter optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    /// Number of updates applied to this parameter.
    pub t: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Keyed by the full hierarchical parameter name.
    pub state: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            state: BTreeMap::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
    }

    /// Applies one update with learning rate `lr` to every trainable
    /// parameter of `module`, using the accumulated gradients.
    pub fn step(&mut self, prefix: &str, module: &mut dyn Parameterized, lr: f64) {
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let state = &mut self.state;
        module.visit_mut(prefix, &mut |name, p| {
            if !p.trainable {
                return;
            }
            let s = state.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
                t: 0,
            });
            s.t += 1;
            let c1 = 1.0 - b1.powi(s.t as i32);
            let c2 = 1.0 - b2.powi(s.t as i32);
            for i in 0..p.value.len() {
                let g = p.grad[i] as f64;
                let m = b1 * s.m[i] as f64 + (1.0 - b1) * g;
                let v = b2 * s.v[i] as f64 + (1.0 - b2) * g * g;
                s.m[i] = m as f32;
                s.v[i] = v as f32;
                let mut w = p.value[i] as f64;
                w -= lr * wd * w;
                w -= lr * (m / c1) / ((v / c2).sqrt() + eps);
                p.value[i] = w as f32;
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{join, Param};

    struct One(Param);

    impl Parameterized for One {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
            f(&join(prefix, "w"), &self.0);
        }
        fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
            f(&join(prefix, "w"), &mut self.0);
        }
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = One(Param::filled(&[3], 1.0));
        p.0.grad = vec![0.5, -2.0, 0.0];
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0);
        opt.step("g", &mut p, 0.1);
        assert!((p.0.value[0] - 0.9).abs() < 1e-6);
        assert!((p.0.value[1] - 1.1).abs() < 1e-6);
        assert_eq!(p.0.value[2], 1.0);
        assert_eq!(opt.state["g/w"].t, 1);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut p = One(Param::filled(&[1], 2.0));
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.1);
        opt.step("", &mut p, 0.5);
        // zero gradient: only the decay term acts
        assert!((p.0.value[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-6);
    }

    #[test]
    fn matches_reference_recursion() {
        let grads = [0.3, -0.1, 0.7, 0.2];
        let (b1, b2, eps, wd, lr) = (0.9, 0.999, 1e-8, 1e-2, 1e-2);
        let mut p = One(Param::filled(&[1], 0.5));
        let mut opt = AdamW::new(b1, b2, eps, wd);
        let (mut w, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for (t, &g) in grads.iter().enumerate() {
            p.0.grad = vec![g as f32];
            opt.step("", &mut p, lr);
            let t = t as i32 + 1;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            w *= 1.0 - lr * wd;
            w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        assert!((p.0.value[0] as f64 - w).abs() < 1e-6);
    }

    #[test]
    fn buffers_are_untouched() {
        let mut p = One(Param::buffer(&[2], 3.0));
        p.0.grad = vec![1.0, 1.0];
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.1);
        opt.step("", &mut p, 1.0);
        assert_eq!(p.0.value, vec![3.0, 3.0]);
        assert!(opt.state.is_empty());
    }
}
