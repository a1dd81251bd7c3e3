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

//! Checkpoints: every parameter array under a stable hierarchical name, the
//! optimizer moments, and a metadata block with the configuration text,
//! epoch and step counters.

use crate::error::{Error, Result};
use crate::nn::{join, Parameterized};
use crate::optim::{AdamW, Moments};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

const OPT_M: &str = "opt/m";
const OPT_V: &str = "opt/v";
const OPT_T: &str = "opt/t";

/// Counters and provenance stored alongside the arrays.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointMeta {
    /// What produced the checkpoint (`joint`, `single`, `teacher`, `kd`).
    pub kind: String,
    /// Number of completed epochs.
    pub epoch: usize,
    pub step: u64,
    /// Configuration in `key = value` text form.
    pub config: String,
    /// Free-form extra entries (e.g. the modality of a single network).
    pub extra: BTreeMap<String, String>,
}

/// A loaded checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub arrays: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    pub opt_steps: BTreeMap<String, u64>,
}

fn ck_err(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

/// Writes the parameter groups (each under its prefix) and optimizer state.
pub fn save(
    path: impl AsRef<Path>,
    meta: &CheckpointMeta,
    groups: &[(&str, &dyn Parameterized)],
    opt: Option<&AdamW>,
) -> Result<()> {
    let mut owned: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = Vec::new();
    for (prefix, module) in groups {
        module.visit(prefix, &mut |name, p| {
            owned.push((join(prefix, name), Dtype::F32, p.shape.clone(), f32_bytes(&p.value)));
        });
    }
    if let Some(opt) = opt {
        for (name, s) in &opt.state {
            owned.push((join(OPT_M, name), Dtype::F32, vec![s.m.len()], f32_bytes(&s.m)));
            owned.push((join(OPT_V, name), Dtype::F32, vec![s.v.len()], f32_bytes(&s.v)));
            owned.push((join(OPT_T, name), Dtype::U64, vec![1], s.t.to_le_bytes().to_vec()));
        }
    }
    let views = owned
        .iter()
        .map(|(n, dt, shape, bytes)| Ok((n.as_str(), TensorView::new(*dt, shape.clone(), bytes).map_err(ck_err)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut info: HashMap<String, String> = meta.extra.iter().map(|(k, v)| (format!("extra.{k}"), v.clone())).collect();
    info.insert("kind".into(), meta.kind.clone());
    info.insert("epoch".into(), meta.epoch.to_string());
    info.insert("step".into(), meta.step.to_string());
    info.insert("config".into(), meta.config.clone());
    let bytes = safetensors::serialize(views, Some(info)).map_err(ck_err)?;
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Checkpoint {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|e| Error::data(path, e.to_string()))?;
        let st = SafeTensors::deserialize(&buf).map_err(|e| Error::data(path, e.to_string()))?;
        let (_, header) = SafeTensors::read_metadata(&buf).map_err(ck_err)?;
        let info = header.metadata().clone().unwrap_or_default();
        let field = |k: &str| info.get(k).cloned().ok_or_else(|| ck_err(format!("missing metadata `{k}`")));
        let meta = CheckpointMeta {
            kind: field("kind")?,
            epoch: field("epoch")?.parse().map_err(ck_err)?,
            step: field("step")?.parse().map_err(ck_err)?,
            config: field("config")?,
            extra: info
                .iter()
                .filter_map(|(k, v)| k.strip_prefix("extra.").map(|k| (k.to_string(), v.clone())))
                .collect(),
        };
        let mut arrays = BTreeMap::new();
        let mut opt_steps = BTreeMap::new();
        for (name, view) in st.tensors() {
            match view.dtype() {
                Dtype::F32 => {
                    let values = view
                        .data()
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect();
                    arrays.insert(name, (view.shape().to_vec(), values));
                }
                Dtype::U64 => {
                    let key = name
                        .strip_prefix(&format!("{OPT_T}/"))
                        .ok_or_else(|| ck_err(format!("unexpected integer array `{name}`")))?;
                    let t = u64::from_le_bytes(view.data().try_into().map_err(ck_err)?);
                    opt_steps.insert(key.to_string(), t);
                }
                other => return Err(ck_err(format!("unsupported dtype {other:?} for `{name}`"))),
            }
        }
        Ok(Self { meta, arrays, opt_steps })
    }

    /// Copies the arrays under `prefix` into `module`; every parameter must
    /// be present with a matching shape.
    pub fn restore(&self, prefix: &str, module: &mut dyn Parameterized) -> Result<()> {
        let mut failure = None;
        module.visit_mut(prefix, &mut |name, p| {
            let key = join(prefix, name);
            match self.arrays.get(&key) {
                Some((shape, values)) if *shape == p.shape => p.value.clone_from(values),
                Some((shape, _)) => {
                    failure.get_or_insert_with(|| ck_err(format!("`{key}` has shape {shape:?}, expected {:?}", p.shape)));
                }
                None => {
                    failure.get_or_insert_with(|| ck_err(format!("`{key}` missing")));
                }
            }
        });
        failure.map_or(Ok(()), Err)
    }

    /// Whether any array lives under `prefix`.
    pub fn has_group(&self, prefix: &str) -> bool {
        let p = format!("{prefix}/");
        self.arrays.keys().any(|k| k.starts_with(&p))
    }

    /// Rebuilds the optimizer moments into `opt`.
    pub fn restore_optimizer(&self, opt: &mut AdamW) -> Result<()> {
        opt.state.clear();
        for (name, &t) in &self.opt_steps {
            let get = |root: &str| {
                self.arrays
                    .get(&join(root, name))
                    .map(|(_, v)| v.clone())
                    .ok_or_else(|| ck_err(format!("optimizer moments for `{name}` missing")))
            };
            opt.state.insert(name.clone(), Moments { m: get(OPT_M)?, v: get(OPT_V)?, t });
        }
        Ok(())
    }
}
