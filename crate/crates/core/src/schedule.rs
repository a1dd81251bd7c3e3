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

//! Learning-rate schedule: linear warmup followed by polynomial decay.

use crate::config::TrainConfig;
use crate::error::{Error, Result};

/// Learning rate at (possibly fractional) `epoch`.
///
/// Ramps linearly from `lr_start` to `lr_target` over `warmup_epochs`, then
/// decays as `lr_target · (1 − (epoch − warmup) / (epochs − warmup))^power`,
/// reaching 0 at `epochs`.
pub fn lr_at(epoch: f64, cfg: &TrainConfig) -> Result<f64> {
    let n = cfg.epochs as f64;
    let w = cfg.warmup_epochs as f64;
    if !(0.0..=n).contains(&epoch) {
        return Err(Error::invalid(format!("epoch {epoch} outside [0, {n}]")));
    }
    if epoch < w || (epoch == w && w > 0.0) || n == w {
        if w == 0.0 {
            return Ok(cfg.lr_target);
        }
        return Ok(cfg.lr_start + (cfg.lr_target - cfg.lr_start) * epoch / w);
    }
    let frac = 1.0 - (epoch - w) / (n - w);
    Ok(cfg.lr_target * frac.max(0.0).powf(cfg.poly_power))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_landmarks() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0.0, &cfg).unwrap(), 1e-8);
        assert!((lr_at(10.0, &cfg).unwrap() - 1e-4).abs() < 1e-18);
        assert_eq!(lr_at(140.0, &cfg).unwrap(), 0.0);
        let expect = 1e-4 * 0.5f64.powf(0.9);
        assert!((lr_at(75.0, &cfg).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 5.359e-5).abs() < 1e-8);
        assert!(lr_at(-1.0, &cfg).is_err());
        assert!(lr_at(140.5, &cfg).is_err());
    }

    #[test]
    fn no_warmup_starts_at_target() {
        let cfg = TrainConfig {
            warmup_epochs: 0,
            epochs: 4,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(0.0, &cfg).unwrap(), cfg.lr_target);
        assert_eq!(lr_at(4.0, &cfg).unwrap(), 0.0);
    }
}
