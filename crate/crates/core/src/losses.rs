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

//! Training objectives with closed-form gradients.
//!
//! Every loss returns its scalar value together with the gradient with
//! respect to each tensor input. Computation is in `f64`; callers convert
//! network activations at the boundary.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::types::{LabelMap, LossReport, Modality};

/// Denominator guard for norms in cosine similarity and L2 normalisation.
pub const NORM_EPS: f64 = 1e-8;

/// Blends invariant halves: `λ·other + (1 − λ)·own`.
pub fn feature_mixup(own: &Tensor, other: &Tensor, lambda: f64) -> Result<Tensor> {
    own.same_dims(other, "feature_mixup")?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("mixup lambda {lambda} outside [0, 1]")));
    }
    let l = lambda as f32;
    let k = 1.0 - l;
    let data = own
        .data()
        .iter()
        .zip(other.data())
        .map(|(&a, &b)| l * b + k * a)
        .collect();
    Tensor::from_vec(own.dims(), data)
}

fn check_labels(logits: &Tensor<f64>, labels: &LabelMap) -> Result<()> {
    let [b, h, w, _] = logits.dims();
    if labels.dims() != [b, h, w] {
        return Err(Error::shape(format!(
            "logits {:?} do not match labels {:?}",
            logits.dims(),
            labels.dims()
        )));
    }
    Ok(())
}

/// Log-softmax of one pixel's logits into `out`.
fn log_softmax(px: &[f64], out: &mut [f64]) {
    let max = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = px.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    for (o, v) in out.iter_mut().zip(px) {
        *o = v - lse;
    }
}

/// Pixel-wise cross entropy averaged over non-ignored pixels.
pub fn cross_entropy(logits: &Tensor<f64>, labels: &LabelMap, ignore: u8) -> Result<(f64, Tensor<f64>)> {
    check_labels(logits, labels)?;
    let c = logits.channels();
    let valid = labels.data().iter().filter(|&&y| y != ignore).count();
    if valid == 0 {
        return Err(Error::invalid("cross entropy over zero non-ignored pixels"));
    }
    let n = valid as f64;
    let mut grad = Tensor::<f64>::zeros(logits.dims());
    let mut logp = vec![0.0; c];
    let mut total = 0.0;
    for ((px, g), &y) in logits
        .data()
        .chunks_exact(c)
        .zip(grad.data_mut().chunks_exact_mut(c))
        .zip(labels.data())
    {
        if y == ignore {
            continue;
        }
        let y = y as usize;
        if y >= c {
            return Err(Error::invalid(format!("label {y} out of range for {c} classes")));
        }
        log_softmax(px, &mut logp);
        total -= logp[y];
        for (gi, lp) in g.iter_mut().zip(&logp) {
            *gi = lp.exp() / n;
        }
        g[y] -= 1.0 / n;
    }
    Ok((total / n, grad))
}

/// Segmentation loss over the plain and mixed decodes: the mean of the two
/// cross entropies. Passing the same logits twice reduces to a single CE.
pub fn seg_loss(
    logits: &Tensor<f64>,
    logits_mix: &Tensor<f64>,
    labels: &LabelMap,
    ignore: u8,
) -> Result<(f64, Tensor<f64>, Tensor<f64>)> {
    let (a, mut ga) = cross_entropy(logits, labels, ignore)?;
    let (b, mut gb) = cross_entropy(logits_mix, labels, ignore)?;
    for v in ga.data_mut().iter_mut().chain(gb.data_mut()) {
        *v *= 0.5;
    }
    Ok((0.5 * (a + b), ga, gb))
}

/// Auxiliary loss: CE of the invariant-half decode plus CE of the
/// specific-half decode (a sum, not a mean).
pub fn aux_loss(
    logits_inv: &Tensor<f64>,
    logits_spc: &Tensor<f64>,
    labels: &LabelMap,
    ignore: u8,
) -> Result<(f64, Tensor<f64>, Tensor<f64>)> {
    let (a, ga) = cross_entropy(logits_inv, labels, ignore)?;
    let (b, gb) = cross_entropy(logits_spc, labels, ignore)?;
    Ok((a + b, ga, gb))
}

/// Signed cosine similarity between invariant and specific vectors, summed
/// over locations and averaged over the batch.
pub fn orthogonality_loss(inv: &Tensor<f64>, spc: &Tensor<f64>) -> Result<(f64, Tensor<f64>, Tensor<f64>)> {
    inv.same_dims(spc, "orthogonality_loss")?;
    let b = inv.batch().max(1) as f64;
    let d = inv.channels();
    let mut g_inv = Tensor::<f64>::zeros(inv.dims());
    let mut g_spc = Tensor::<f64>::zeros(spc.dims());
    let mut total = 0.0;
    let rows = inv
        .data()
        .chunks_exact(d)
        .zip(spc.data().chunks_exact(d))
        .zip(g_inv.data_mut().chunks_exact_mut(d).zip(g_spc.data_mut().chunks_exact_mut(d)));
    for ((u, v), (gu, gv)) in rows {
        let uu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let vv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nu = uu.max(NORM_EPS);
        let nv = vv.max(NORM_EPS);
        let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
        let cos = dot / (nu * nv);
        total += cos;
        // d cos / du = v/(nu nv) - cos u/nu², the second term only where the
        // norm is above the guard.
        let su = if uu > NORM_EPS { cos / (nu * nu) } else { 0.0 };
        let sv = if vv > NORM_EPS { cos / (nv * nv) } else { 0.0 };
        for i in 0..d {
            gu[i] = (v[i] / (nu * nv) - su * u[i]) / b;
            gv[i] = (u[i] / (nu * nv) - sv * v[i]) / b;
        }
    }
    Ok((total / b, g_inv, g_spc))
}

/// Spatially pooled, L2-normalised invariant embeddings, one row per
/// instance.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledEmbedding {
    rows: Vec<f64>,
    batch: usize,
    dim: usize,
    pub modality: Modality,
    /// Norms of the pooled vectors before normalisation.
    norms: Vec<f64>,
    spatial: (usize, usize),
}

impl PooledEmbedding {
    /// Wraps rows that are already unit-norm (used by tests and the C ABI).
    pub fn from_rows(rows: Vec<f64>, batch: usize, dim: usize, modality: Modality) -> Result<Self> {
        if rows.len() != batch * dim {
            return Err(Error::shape(format!("{} values do not form {batch}×{dim} rows", rows.len())));
        }
        Ok(Self {
            rows,
            batch,
            dim,
            modality,
            norms: vec![1.0; batch],
            spatial: (1, 1),
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    /// Same instances in a different order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut out = self.clone();
        out.rows = order.iter().flat_map(|&i| self.row(i).to_vec()).collect();
        out.norms = order.iter().map(|&i| self.norms[i]).collect();
        out
    }
}

/// Spatial average pooling followed by L2 normalisation.
pub fn pool_normalize(inv: &Tensor<f64>, modality: Modality) -> PooledEmbedding {
    let [b, h, w, d] = inv.dims();
    let hw = (h * w) as f64;
    let mut rows = vec![0.0; b * d];
    let mut norms = vec![0.0; b];
    for bi in 0..b {
        let row = &mut rows[bi * d..(bi + 1) * d];
        for px in inv.data()[bi * h * w * d..(bi + 1) * h * w * d].chunks_exact(d) {
            for (r, v) in row.iter_mut().zip(px) {
                *r += v;
            }
        }
        row.iter_mut().for_each(|r| *r /= hw);
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        norms[bi] = n;
        let denom = n.max(NORM_EPS);
        row.iter_mut().for_each(|r| *r /= denom);
    }
    PooledEmbedding {
        rows,
        batch: b,
        dim: d,
        modality,
        norms,
        spatial: (h, w),
    }
}

/// Back-propagates a gradient on the pooled rows to the `B×h×w×D` input.
pub fn pool_normalize_backward(pooled: &PooledEmbedding, grad_rows: &[f64]) -> Tensor<f64> {
    let (h, w) = pooled.spatial;
    let d = pooled.dim;
    let hw = (h * w) as f64;
    let mut out = Tensor::<f64>::zeros([pooled.batch, h, w, d]);
    for bi in 0..pooled.batch {
        let p = pooled.row(bi);
        let g = &grad_rows[bi * d..(bi + 1) * d];
        let n = pooled.norms[bi];
        let g_rho: Vec<f64> = if n > NORM_EPS {
            let pg: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
            g.iter().zip(p).map(|(gi, pi)| (gi - pi * pg) / n).collect()
        } else {
            g.iter().map(|gi| gi / NORM_EPS).collect()
        };
        for px in out.data_mut()[bi * h * w * d..(bi + 1) * h * w * d].chunks_exact_mut(d) {
            for (o, gr) in px.iter_mut().zip(&g_rho) {
                *o = gr / hw;
            }
        }
    }
    out
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// InfoNCE over negative Euclidean distances with `anchor` as the anchor
/// modality. For instance `i` the positive is `other[i]`; the denominator
/// holds `anchor[j]` and `other[j]` for every `j ≠ i` (plus `other[i]`
/// when `include_positive` is set). Returns the loss and the gradients with
/// respect to the anchor and other rows.
pub fn contrastive_loss(
    anchor: &PooledEmbedding,
    other: &PooledEmbedding,
    tau: f64,
    include_positive: bool,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if anchor.batch != other.batch || anchor.dim != other.dim {
        return Err(Error::shape(format!(
            "contrastive pair {}×{} vs {}×{}",
            anchor.batch, anchor.dim, other.batch, other.dim
        )));
    }
    let b = anchor.batch;
    if b < 2 {
        return Err(Error::invalid("contrastive loss needs at least two instances"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let d = anchor.dim;
    let mut ga = vec![0.0; b * d];
    let mut go = vec![0.0; b * d];
    let inv_b = 1.0 / b as f64;
    let mut total = 0.0;

    // Adds s·∂‖x − y‖/∂x to gx and the opposite to gy.
    let push = |gx: &mut [f64], gy: &mut [f64], x: &[f64], y: &[f64], s: f64| {
        let dist = distance(x, y);
        if dist <= 0.0 {
            return;
        }
        for k in 0..d {
            let u = s * (x[k] - y[k]) / dist;
            gx[k] += u;
            gy[k] -= u;
        }
    };

    // (is_anchor_row, index) of every denominator term.
    let mut terms: Vec<(bool, usize)> = Vec::with_capacity(2 * b);
    let mut logits: Vec<f64> = Vec::with_capacity(2 * b);
    for i in 0..b {
        let a_i = anchor.row(i);
        let pos = distance(a_i, other.row(i));
        terms.clear();
        logits.clear();
        for j in 0..b {
            if j != i {
                terms.push((true, j));
                terms.push((false, j));
            } else if include_positive {
                terms.push((false, j));
            }
        }
        for &(is_anchor, j) in &terms {
            let x = if is_anchor { anchor.row(j) } else { other.row(j) };
            logits.push(-distance(a_i, x) / tau);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let lse = sum.ln() + max;
        total += (pos / tau + lse) * inv_b;

        // Numerator: +‖a_i − o_i‖/τ.
        {
            let (ga_i, go_i) = (&mut ga[i * d..(i + 1) * d], &mut go[i * d..(i + 1) * d]);
            push(ga_i, go_i, a_i, other.row(i), inv_b / tau);
        }
        // Denominator: log Σ exp(−‖a_i − x‖/τ) contributes −w/τ ∂‖a_i − x‖.
        for (&(is_anchor, j), &l) in terms.iter().zip(logits.iter()) {
            let wgt = (l - lse).exp();
            let s = -wgt * inv_b / tau;
            let x = if is_anchor { anchor.row(j) } else { other.row(j) };
            let mut gi = vec![0.0; d];
            let mut gx = vec![0.0; d];
            push(&mut gi, &mut gx, a_i, x, s);
            for k in 0..d {
                ga[i * d + k] += gi[k];
            }
            let target = if is_anchor { &mut ga } else { &mut go };
            for k in 0..d {
                target[j * d + k] += gx[k];
            }
        }
    }
    Ok((total, ga, go))
}

/// Response-based distillation: `α·CE(student, Y) + (1 − α)·KL(p_T ‖ p_S)`,
/// both averaged over non-ignored pixels. The teacher receives no gradient.
pub fn kd_loss(
    student: &Tensor<f64>,
    teacher: &Tensor<f64>,
    labels: &LabelMap,
    alpha: f64,
    ignore: u8,
) -> Result<(f64, Tensor<f64>)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("kd alpha {alpha} outside [0, 1]")));
    }
    student.same_dims(teacher, "kd_loss")?;
    let (ce, mut grad) = cross_entropy(student, labels, ignore)?;
    let c = student.channels();
    let n = labels.data().iter().filter(|&&y| y != ignore).count() as f64;
    let mut ls = vec![0.0; c];
    let mut lt = vec![0.0; c];
    let mut kl = 0.0;
    for (((ps, pt), g), &y) in student
        .data()
        .chunks_exact(c)
        .zip(teacher.data().chunks_exact(c))
        .zip(grad.data_mut().chunks_exact_mut(c))
        .zip(labels.data())
    {
        if y == ignore {
            continue;
        }
        log_softmax(ps, &mut ls);
        log_softmax(pt, &mut lt);
        for k in 0..c {
            let t = lt[k].exp();
            kl += t * (lt[k] - ls[k]);
            g[k] = alpha * g[k] + (1.0 - alpha) * (ls[k].exp() - t) / n;
        }
    }
    Ok((alpha * ce + (1.0 - alpha) * kl / n, grad))
}

/// Which optional terms enter the total.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossToggles {
    pub orth: bool,
    pub con: bool,
    pub aux: bool,
}

impl LossToggles {
    pub const ALL: LossToggles = LossToggles { orth: true, con: true, aux: true };
    pub const NONE: LossToggles = LossToggles { orth: false, con: false, aux: false };
}

/// Unweighted sum of the enabled per-modality terms.
pub fn total_loss(report: &LossReport, toggles: LossToggles) -> f64 {
    Modality::BOTH
        .iter()
        .map(|&m| {
            let t = report.terms(m);
            let mut s = t.seg;
            if toggles.orth {
                s += t.orth;
            }
            if toggles.con {
                s += t.con;
            }
            if toggles.aux {
                s += t.aux;
            }
            s
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::TermValues;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand64(dims: [usize; 4], seed: u64, scale: f64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(dims, |_| rng.random_range(-scale..scale))
    }

    fn labels(dims: [usize; 3], c: u8, seed: u64) -> LabelMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dims.iter().product::<usize>()).map(|_| rng.random_range(0..c)).collect();
        LabelMap::new(dims, data).unwrap()
    }

    /// Per-pixel softmax CE written out with explicit exponentials.
    fn ce_oracle(logits: &Tensor<f64>, y: &LabelMap) -> f64 {
        let [b, h, w, c] = logits.dims();
        let (mut s, mut n) = (0.0, 0.0);
        for bi in 0..b {
            for i in 0..h {
                for j in 0..w {
                    let t = y.get(bi, i, j);
                    if t == 255 {
                        continue;
                    }
                    let z: f64 = (0..c).map(|k| logits.get([bi, i, j, k]).exp()).sum();
                    s -= (logits.get([bi, i, j, t as usize]).exp() / z).ln();
                    n += 1.0;
                }
            }
        }
        s / n
    }

    #[test]
    fn mixup_identities() {
        let a = Tensor::from_fn([2, 3, 3, 4], |[b, y, x, c]| (b + y * 3 + x * 5 + c * 7) as f32 * 0.1);
        let b = Tensor::from_fn([2, 3, 3, 4], |[b, y, x, c]| (b * 2 + y + x + c) as f32 * -0.3);
        assert_eq!(feature_mixup(&a, &b, 0.0).unwrap(), a);
        assert_eq!(feature_mixup(&a, &b, 1.0).unwrap(), b);
        let zeros = Tensor::zeros([1, 2, 2, 3]);
        let ones = Tensor::full([1, 2, 2, 3], 1.0);
        let m = feature_mixup(&zeros, &ones, 0.35).unwrap();
        assert!(m.data().iter().all(|&v| (v - 0.35).abs() < 1e-7));
        assert!(feature_mixup(&a, &zeros, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn mixup_is_linear(seed in any::<u64>(), lambda in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Tensor::from_fn([1, 2, 3, 4], |_| rng.random_range(-5.0f32..5.0));
            let b = Tensor::from_fn([1, 2, 3, 4], |_| rng.random_range(-5.0f32..5.0));
            let ab = feature_mixup(&a, &b, lambda).unwrap();
            let ba = feature_mixup(&b, &a, lambda).unwrap();
            for i in 0..a.len() {
                let lhs = ab.data()[i] + ba.data()[i];
                let rhs = a.data()[i] + b.data()[i];
                prop_assert!((lhs - rhs).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn uniform_and_saturated_cross_entropy() {
        let y = labels([2, 3, 3], 4, 1);
        let uniform = Tensor::<f64>::zeros([2, 3, 3, 4]);
        let (v, _, _) = seg_loss(&uniform, &uniform, &y, 255).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
        let (v, _, _) = aux_loss(&uniform, &uniform, &y, 255).unwrap();
        assert!((v - 2.0 * 4f64.ln()).abs() < 1e-12);
        let sat = Tensor::from_fn([2, 3, 3, 4], |[b, i, j, k]| if k as u8 == y.get(b, i, j) { 100.0 } else { 0.0 });
        assert!(seg_loss(&sat, &sat, &y, 255).unwrap().0 < 1e-6);
        assert!(aux_loss(&sat, &sat, &y, 255).unwrap().0 < 1e-6);
    }

    #[test]
    fn seg_loss_matches_hand_oracle() {
        let logits = rand64([1, 2, 2, 3], 11, 3.0);
        let mixed = rand64([1, 2, 2, 3], 12, 3.0);
        let y = labels([1, 2, 2], 3, 13);
        let want = 0.5 * (ce_oracle(&logits, &y) + ce_oracle(&mixed, &y));
        let got = seg_loss(&logits, &mixed, &y, 255).unwrap().0;
        assert!((got - want).abs() < 1e-9);
        let aux = aux_loss(&logits, &mixed, &y, 255).unwrap().0;
        assert!((aux - (ce_oracle(&logits, &y) + ce_oracle(&mixed, &y))).abs() < 1e-9);
    }

    #[test]
    fn ignored_pixels_are_skipped() {
        let logits = rand64([1, 2, 2, 3], 21, 2.0);
        let mut y = labels([1, 2, 2], 3, 22);
        y.set(0, 0, 1, 255);
        let (v, g) = cross_entropy(&logits, &y, 255).unwrap();
        assert!((v - ce_oracle(&logits, &y)).abs() < 1e-12);
        assert!((0..3).all(|k| g.get([0, 0, 1, k]) == 0.0));
        let all_ignored = LabelMap::filled([1, 2, 2], 255);
        assert!(cross_entropy(&logits, &all_ignored, 255).is_err());
        assert!(kd_loss(&logits, &logits, &all_ignored, 0.5, 255).is_err());
    }

    #[test]
    fn orthogonality_identities() {
        let inv = rand64([1, 8, 8, 4], 31, 1.0);
        let (v, _, _) = orthogonality_loss(&inv, &inv).unwrap();
        assert!((v - 64.0).abs() < 1e-9);
        let neg = inv.map(|x| -x);
        assert!((orthogonality_loss(&inv, &neg).unwrap().0 + 64.0).abs() < 1e-9);
        let e0 = Tensor::from_fn([2, 3, 3, 4], |[.., c]| if c == 0 { 1.0 } else { 0.0 });
        let e1 = Tensor::from_fn([2, 3, 3, 4], |[.., c]| if c == 1 { 1.0 } else { 0.0 });
        assert_eq!(orthogonality_loss(&e0, &e1).unwrap().0, 0.0);
        // zero vectors are guarded rather than producing NaN
        let z = Tensor::<f64>::zeros([1, 2, 2, 4]);
        let (v, g, _) = orthogonality_loss(&z, &rand64([1, 2, 2, 4], 3, 1.0)).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.data().iter().all(|x| x.is_finite()));
    }

    proptest! {
        #[test]
        fn orthogonality_bounded(seed in any::<u64>(), b in 1usize..3, h in 1usize..4, w in 1usize..4) {
            let inv = rand64([b, h, w, 3], seed, 10.0);
            let spc = rand64([b, h, w, 3], seed ^ 0xabc, 10.0);
            let (v, _, _) = orthogonality_loss(&inv, &spc).unwrap();
            let hw = (h * w) as f64;
            prop_assert!(v >= -hw - 1e-9 && v <= hw + 1e-9);
        }
    }

    #[test]
    fn pooling_examples() {
        let v = [3.0, 4.0];
        let constant = Tensor::from_fn([1, 3, 3, 2], |[.., c]| v[c]);
        let p = pool_normalize(&constant, Modality::Rgb);
        assert!((p.row(0)[0] - 0.6).abs() < 1e-12 && (p.row(0)[1] - 0.8).abs() < 1e-12);

        let checker = Tensor::from_fn([1, 2, 2, 2], |[_, y, x, c]| if (y * 2 + x) % 2 == c { 1.0 } else { 0.0 });
        let p = pool_normalize(&checker, Modality::Depth);
        let s = 2f64.sqrt() / 2.0;
        assert!((p.row(0)[0] - s).abs() < 1e-12 && (p.row(0)[1] - s).abs() < 1e-12);

        let any = rand64([3, 2, 5, 4], 41, 2.0);
        let p = pool_normalize(&any, Modality::Rgb);
        for i in 0..3 {
            let n: f64 = p.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    fn unit_rows(b: usize, d: usize, seed: u64, m: Modality) -> PooledEmbedding {
        pool_normalize(&rand64([b, 1, 1, d], seed, 1.0), m)
    }

    /// Direct double loop over the written formula.
    fn infonce_oracle(a: &PooledEmbedding, o: &PooledEmbedding, tau: f64) -> f64 {
        let b = a.batch();
        let mut s = 0.0;
        for i in 0..b {
            let num = (-distance(a.row(i), o.row(i)) / tau).exp();
            let mut den = 0.0;
            for m in [a, o] {
                for j in 0..b {
                    if j != i {
                        den += (-distance(a.row(i), m.row(j)) / tau).exp();
                    }
                }
            }
            s += (num / den).ln();
        }
        -s / b as f64
    }

    #[test]
    fn degenerate_contrastive_is_log_of_negative_count() {
        for b in 2..6 {
            let rows: Vec<f64> = (0..b).flat_map(|_| [0.6, 0.8]).collect();
            let a = PooledEmbedding::from_rows(rows.clone(), b, 2, Modality::Rgb).unwrap();
            let o = PooledEmbedding::from_rows(rows, b, 2, Modality::Depth).unwrap();
            let (v, _, _) = contrastive_loss(&a, &o, 0.07, false).unwrap();
            assert!((v - (2.0 * (b as f64 - 1.0)).ln()).abs() < 1e-12, "B={b}");
        }
    }

    #[test]
    fn contrastive_matches_oracle_and_rejects_single_instance() {
        let a = unit_rows(3, 4, 51, Modality::Rgb);
        let o = unit_rows(3, 4, 52, Modality::Depth);
        let (v, _, _) = contrastive_loss(&a, &o, 0.07, false).unwrap();
        assert!((v - infonce_oracle(&a, &o, 0.07)).abs() < 1e-9);
        let one = unit_rows(1, 4, 53, Modality::Rgb);
        assert!(contrastive_loss(&one, &one, 0.07, false).is_err());
    }

    #[test]
    fn including_the_positive_raises_the_loss_above_zero() {
        let a = unit_rows(4, 4, 61, Modality::Rgb);
        let o = unit_rows(4, 4, 62, Modality::Depth);
        let (plain, _, _) = contrastive_loss(&a, &o, 0.07, false).unwrap();
        let (canon, _, _) = contrastive_loss(&a, &o, 0.07, true).unwrap();
        assert!(canon > plain);
        assert!(canon > 0.0);
    }

    proptest! {
        #[test]
        fn contrastive_is_permutation_equivariant(seed in any::<u64>(), b in 2usize..6) {
            let a = unit_rows(b, 3, seed, Modality::Rgb);
            let o = unit_rows(b, 3, seed.wrapping_add(1), Modality::Depth);
            let mut order: Vec<usize> = (0..b).collect();
            order.rotate_left(1);
            order.swap(0, b - 1);
            let (v1, _, _) = contrastive_loss(&a, &o, 0.07, false).unwrap();
            let (v2, _, _) = contrastive_loss(&a.permuted(&order), &o.permuted(&order), 0.07, false).unwrap();
            prop_assert!((v1 - v2).abs() < 1e-6);
        }

        #[test]
        fn class_losses_shift_invariant(seed in any::<u64>(), shift in -50.0f64..50.0) {
            let s = rand64([1, 2, 3, 3], seed, 4.0);
            let t = rand64([1, 2, 3, 3], seed ^ 7, 4.0);
            let y = labels([1, 2, 3], 3, seed);
            let add = |x: &Tensor<f64>| Tensor::from_fn(x.dims(), |[b, i, j, k]| x.get([b, i, j, k]) + shift * (1 + i + 2 * j) as f64);
            let (a0, ..) = seg_loss(&s, &t, &y, 255).unwrap();
            let (a1, ..) = seg_loss(&add(&s), &add(&t), &y, 255).unwrap();
            prop_assert!((a0 - a1).abs() < 1e-5);
            let (b0, ..) = aux_loss(&s, &t, &y, 255).unwrap();
            let (b1, ..) = aux_loss(&add(&s), &add(&t), &y, 255).unwrap();
            prop_assert!((b0 - b1).abs() < 1e-5);
            let (c0, _) = kd_loss(&s, &t, &y, 0.3, 255).unwrap();
            let (c1, _) = kd_loss(&add(&s), &add(&t), &y, 0.3, 255).unwrap();
            prop_assert!((c0 - c1).abs() < 1e-5);
        }
    }

    #[test]
    fn kd_special_cases() {
        let s = rand64([2, 2, 2, 3], 71, 2.0);
        let t = rand64([2, 2, 2, 3], 72, 2.0);
        let y = labels([2, 2, 2], 3, 73);
        let (ce, gce) = cross_entropy(&s, &y, 255).unwrap();
        let (v, g) = kd_loss(&s, &t, &y, 1.0, 255).unwrap();
        assert_eq!(v, ce);
        assert_eq!(g, gce);
        let (v, g) = kd_loss(&s, &s, &y, 0.0, 255).unwrap();
        assert!(v.abs() < 1e-12);
        assert!(g.data().iter().all(|x| x.abs() < 1e-12));
        assert!(kd_loss(&s, &t, &y, 1.5, 255).is_err());
    }

    #[test]
    fn total_respects_toggles() {
        let mut r = LossReport::default();
        assert_eq!(total_loss(&r, LossToggles::ALL), 0.0);
        r.rgb = TermValues { seg: 1.0, orth: 2.0, con: 3.0, aux: 4.0 };
        r.depth = TermValues { seg: 5.0, orth: 6.0, con: 7.0, aux: 8.0 };
        assert_eq!(total_loss(&r, LossToggles::ALL), 36.0);
        let no_aux = LossToggles { aux: false, ..LossToggles::ALL };
        assert_eq!(total_loss(&r, no_aux), 36.0 - 12.0);
        assert_eq!(total_loss(&r, LossToggles::NONE), 6.0);
    }
}
