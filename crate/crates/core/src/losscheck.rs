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

//! Self-check of the loss functions: closed-form identities and
//! finite-difference gradient checks on small float64 instances.

use crate::error::Result;
use crate::losses::{
    aux_loss, contrastive_loss, cross_entropy, feature_mixup, kd_loss, orthogonality_loss, pool_normalize,
    pool_normalize_backward, seg_loss, total_loss, LossToggles,
};
use crate::tensor::Tensor;
use crate::types::{LabelMap, LossReport, Modality, TermValues, IGNORE_LABEL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;

/// Finite-difference step of the gradient checks.
pub const FD_STEP: f64 = 1e-5;
/// Bound on the relative gradient error.
pub const GRAD_TOL: f64 = 1e-4;
/// Tolerance of the closed-form identities.
pub const IDENTITY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    Identity,
    Gradient,
}

/// One check: `value` must lie within `tol` of `expected` (identities), or
/// below `expected` (gradient errors).
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    pub value: f64,
    pub expected: f64,
    pub tol: f64,
}

impl Check {
    fn identity(name: impl Into<String>, value: f64, expected: f64) -> Self {
        Self {
            name: name.into(),
            kind: CheckKind::Identity,
            value,
            expected,
            tol: IDENTITY_TOL,
        }
    }

    fn gradient(name: impl Into<String>, rel_err: f64) -> Self {
        Self {
            name: name.into(),
            kind: CheckKind::Gradient,
            value: rel_err,
            expected: GRAD_TOL,
            tol: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        match self.kind {
            CheckKind::Identity => (self.value - self.expected).abs() <= self.tol,
            CheckKind::Gradient => self.value < self.expected,
        }
    }
}

impl fmt::Display for Check {
    /// `<name> <value> <expected> <status>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{} {:.10e} {:.10e} {}", self.name, self.value, self.expected, status)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(dims: [usize; 4], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| r.random_range(-1.0..1.0))
}

/// Labels in `0..c`, with every fifth pixel ignored.
fn random_labels(dims: [usize; 3], c: usize, r: &mut ChaCha8Rng) -> LabelMap {
    let n = dims.iter().product();
    let data = (0..n)
        .map(|i| if i % 5 == 4 { IGNORE_LABEL } else { r.random_range(0..c) as u8 })
        .collect();
    LabelMap::new(dims, data).expect("label dims")
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Relative error `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)` between an analytic and a
/// numeric gradient.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_gradient(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + FD_STEP;
            let plus = f(&probe);
            probe.data_mut()[i] = orig - FD_STEP;
            let minus = f(&probe);
            probe.data_mut()[i] = orig;
            (plus - minus) / (2.0 * FD_STEP)
        })
        .collect()
}

fn uniform_labels(dims: [usize; 3], c: usize) -> LabelMap {
    let n = dims.iter().product();
    LabelMap::new(dims, (0..n).map(|i| (i % c) as u8).collect()).expect("label dims")
}

/// Logits with `margin` on the labelled class and zero elsewhere.
fn one_hot_logits(labels: &LabelMap, c: usize, margin: f64) -> Tensor<f64> {
    let [b, h, w] = labels.dims();
    Tensor::from_fn([b, h, w, c], |[bi, y, x, k]| {
        if labels.get(bi, y, x) as usize == k {
            margin
        } else {
            0.0
        }
    })
}

fn mixup_checks(out: &mut Vec<Check>) -> Result<()> {
    let mut r = rng(1);
    let own = random([2, 3, 3, 4], &mut r).to_f32();
    let other = random([2, 3, 3, 4], &mut r).to_f32();
    let diff = |a: &Tensor, b: &Tensor| max_abs_diff(&a.to_f64().into_vec(), &b.to_f64().into_vec());
    out.push(Check::identity("mixup_lambda0_is_own", diff(&feature_mixup(&own, &other, 0.0)?, &own), 0.0));
    out.push(Check::identity("mixup_lambda1_is_other", diff(&feature_mixup(&own, &other, 1.0)?, &other), 0.0));
    let zeros = Tensor::zeros([1, 2, 2, 4]);
    let ones = Tensor::full([1, 2, 2, 4], 1.0);
    let m = feature_mixup(&zeros, &ones, 0.35)?;
    let worst = m.data().iter().map(|&v| (v as f64 - 0.35).abs()).fold(0.0, f64::max);
    out.push(Check::identity("mixup_035_interpolates", 0.35 + worst, 0.35));
    let mut sum = feature_mixup(&own, &other, 0.35)?;
    sum.add_assign(&feature_mixup(&other, &own, 0.35)?);
    let mut plain = own.clone();
    plain.add_assign(&other);
    out.push(Check::identity("mixup_is_linear", diff(&sum, &plain), 0.0));
    Ok(())
}

fn ce_checks(out: &mut Vec<Check>) -> Result<()> {
    let labels = uniform_labels([2, 3, 3], 4);
    let uniform = Tensor::<f64>::zeros([2, 3, 3, 4]);
    out.push(Check::identity(
        "seg_uniform_is_ln4",
        seg_loss(&uniform, &uniform, &labels, IGNORE_LABEL)?.0,
        4f64.ln(),
    ));
    let sharp = one_hot_logits(&labels, 4, 100.0);
    out.push(Check::identity("seg_saturated_is_zero", seg_loss(&sharp, &sharp, &labels, IGNORE_LABEL)?.0, 0.0));
    out.push(Check::identity(
        "aux_uniform_is_2ln4",
        aux_loss(&uniform, &uniform, &labels, IGNORE_LABEL)?.0,
        2.0 * 4f64.ln(),
    ));
    out.push(Check::identity("aux_saturated_is_zero", aux_loss(&sharp, &sharp, &labels, IGNORE_LABEL)?.0, 0.0));

    let mut r = rng(2);
    let s = random([2, 3, 3, 3], &mut r);
    let t = random([2, 3, 3, 3], &mut r);
    let y = random_labels([2, 3, 3], 3, &mut r);
    let ce = cross_entropy(&s, &y, IGNORE_LABEL)?.0;
    out.push(Check::identity("kd_alpha1_is_ce", kd_loss(&s, &t, &y, 1.0, IGNORE_LABEL)?.0, ce));
    out.push(Check::identity("kd_identical_alpha0_is_zero", kd_loss(&s, &s, &y, 0.0, IGNORE_LABEL)?.0, 0.0));

    // A per-pixel constant added to every class logit leaves softmax unchanged.
    let shift = |x: &Tensor<f64>| {
        let c = x.channels();
        let mut y = x.clone();
        for (p, px) in y.data_mut().chunks_exact_mut(c).enumerate() {
            px.iter_mut().for_each(|v| *v += 3.0 * (p as f64).sin() + 1.0);
        }
        y
    };
    let (ss, ts) = (shift(&s), shift(&t));
    out.push(Check::identity(
        "seg_shift_invariant",
        seg_loss(&ss, &ts, &y, IGNORE_LABEL)?.0,
        seg_loss(&s, &t, &y, IGNORE_LABEL)?.0,
    ));
    out.push(Check::identity(
        "aux_shift_invariant",
        aux_loss(&ss, &ts, &y, IGNORE_LABEL)?.0,
        aux_loss(&s, &t, &y, IGNORE_LABEL)?.0,
    ));
    out.push(Check::identity(
        "kd_shift_invariant",
        kd_loss(&ss, &ts, &y, 0.5, IGNORE_LABEL)?.0,
        kd_loss(&s, &t, &y, 0.5, IGNORE_LABEL)?.0,
    ));
    Ok(())
}

fn orthogonality_checks(out: &mut Vec<Check>) -> Result<()> {
    let (h, w) = (8, 8);
    let hw = (h * w) as f64;
    let mut r = rng(3);
    let inv = random([2, h, w, 4], &mut r);
    out.push(Check::identity("orth_identical_is_hw", orthogonality_loss(&inv, &inv)?.0, hw));
    let neg = inv.map(|v| -v);
    out.push(Check::identity("orth_negated_is_minus_hw", orthogonality_loss(&inv, &neg)?.0, -hw));
    let e0 = Tensor::<f64>::from_fn([2, h, w, 4], |[_, _, _, c]| if c == 0 { 1.0 } else { 0.0 });
    let e1 = Tensor::<f64>::from_fn([2, h, w, 4], |[_, _, _, c]| if c == 1 { 1.0 } else { 0.0 });
    out.push(Check::identity("orth_orthogonal_is_zero", orthogonality_loss(&e0, &e1)?.0, 0.0));
    Ok(())
}

fn pooling_checks(out: &mut Vec<Check>) -> Result<()> {
    let v = [3.0, -4.0, 0.0, 12.0];
    let constant = Tensor::<f64>::from_fn([1, 3, 3, 4], |[_, _, _, c]| v[c]);
    let p = pool_normalize(&constant, Modality::Rgb);
    let expect: Vec<f64> = v.iter().map(|x| x / 13.0).collect();
    out.push(Check::identity("pool_constant_map", max_abs_diff(p.row(0), &expect), 0.0));

    let hand = Tensor::<f64>::from_vec([1, 2, 2, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0])?;
    let p = pool_normalize(&hand, Modality::Depth);
    let half_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    out.push(Check::identity("pool_hand_case", max_abs_diff(p.row(0), &[half_sqrt2, half_sqrt2]), 0.0));

    let mut r = rng(4);
    let p = pool_normalize(&random([4, 3, 3, 4], &mut r), Modality::Rgb);
    let worst = (0..p.batch())
        .map(|i| (p.row(i).iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    out.push(Check::identity("pool_rows_unit_norm", worst, 0.0));
    Ok(())
}

fn contrastive_checks(out: &mut Vec<Check>) -> Result<()> {
    for b in 2..=5 {
        let same = Tensor::<f64>::from_fn([b, 2, 2, 4], |[_, _, _, c]| c as f64 + 1.0);
        let pa = pool_normalize(&same, Modality::Rgb);
        let po = pool_normalize(&same, Modality::Depth);
        let (l, _, _) = contrastive_loss(&pa, &po, 0.07, false)?;
        out.push(Check::identity(
            format!("con_degenerate_b{b}_is_ln_2(b-1)"),
            l,
            (2.0 * (b as f64 - 1.0)).ln(),
        ));
    }
    let mut r = rng(5);
    let pa = pool_normalize(&random([4, 2, 2, 4], &mut r), Modality::Rgb);
    let po = pool_normalize(&random([4, 2, 2, 4], &mut r), Modality::Depth);
    let order = [2, 0, 3, 1];
    out.push(Check::identity(
        "con_permutation_equivariant",
        contrastive_loss(&pa.permuted(&order), &po.permuted(&order), 0.07, false)?.0,
        contrastive_loss(&pa, &po, 0.07, false)?.0,
    ));
    Ok(())
}

fn total_checks(out: &mut Vec<Check>) {
    out.push(Check::identity("total_all_zero", total_loss(&LossReport::default(), LossToggles::ALL), 0.0));
    let counted = LossReport {
        rgb: TermValues { seg: 1.0, orth: 2.0, con: 3.0, aux: 4.0 },
        depth: TermValues { seg: 5.0, orth: 6.0, con: 7.0, aux: 8.0 },
        total: 0.0,
    };
    out.push(Check::identity("total_one_to_eight_is_36", total_loss(&counted, LossToggles::ALL), 36.0));
    let mut r = rng(6);
    let mut terms = || TermValues {
        seg: r.random_range(0.0..3.0),
        orth: r.random_range(-3.0..3.0),
        con: r.random_range(0.0..3.0),
        aux: r.random_range(0.0..3.0),
    };
    let report = LossReport { rgb: terms(), depth: terms(), total: 0.0 };
    let no_aux = LossToggles { aux: false, ..LossToggles::ALL };
    let expect = report.rgb.seg + report.rgb.orth + report.rgb.con + report.depth.seg + report.depth.orth + report.depth.con;
    out.push(Check::identity("total_without_aux", total_loss(&report, no_aux), expect));
}

/// Closed-form identities of every loss.
pub fn identity_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    mixup_checks(&mut out)?;
    ce_checks(&mut out)?;
    orthogonality_checks(&mut out)?;
    pooling_checks(&mut out)?;
    contrastive_checks(&mut out)?;
    total_checks(&mut out);
    Ok(out)
}

/// Analytic against central-difference gradients, `B = 2`, `h = w = 3`,
/// `F/2 = 4`, `C = 3`.
pub fn gradient_checks() -> Result<Vec<Check>> {
    let (b, h, w, d, c) = (2, 3, 3, 4, 3);
    let mut r = rng(7);
    let mut out = Vec::new();
    let y = random_labels([b, h, w], c, &mut r);
    let ignore = IGNORE_LABEL;

    let s = random([b, h, w, c], &mut r);
    let s_mix = random([b, h, w, c], &mut r);
    let (_, ga, gb) = seg_loss(&s, &s_mix, &y, ignore)?;
    let na = numeric_gradient(&s, |x| seg_loss(x, &s_mix, &y, ignore).expect("seg").0);
    let nb = numeric_gradient(&s_mix, |x| seg_loss(&s, x, &y, ignore).expect("seg").0);
    out.push(Check::gradient("grad_seg_logits", relative_error(ga.data(), &na)));
    out.push(Check::gradient("grad_seg_mixed_logits", relative_error(gb.data(), &nb)));

    let (_, ga, gb) = aux_loss(&s, &s_mix, &y, ignore)?;
    let na = numeric_gradient(&s, |x| aux_loss(x, &s_mix, &y, ignore).expect("aux").0);
    let nb = numeric_gradient(&s_mix, |x| aux_loss(&s, x, &y, ignore).expect("aux").0);
    out.push(Check::gradient("grad_aux_inv_logits", relative_error(ga.data(), &na)));
    out.push(Check::gradient("grad_aux_spc_logits", relative_error(gb.data(), &nb)));

    let teacher = random([b, h, w, c], &mut r);
    for alpha in [0.0, 0.5, 1.0] {
        let (_, g) = kd_loss(&s, &teacher, &y, alpha, ignore)?;
        let n = numeric_gradient(&s, |x| kd_loss(x, &teacher, &y, alpha, ignore).expect("kd").0);
        out.push(Check::gradient(format!("grad_kd_alpha{alpha}"), relative_error(g.data(), &n)));
    }

    let inv = random([b, h, w, d], &mut r);
    let spc = random([b, h, w, d], &mut r);
    let (_, gi, gs) = orthogonality_loss(&inv, &spc)?;
    let ni = numeric_gradient(&inv, |x| orthogonality_loss(x, &spc).expect("orth").0);
    let ns = numeric_gradient(&spc, |x| orthogonality_loss(&inv, x).expect("orth").0);
    out.push(Check::gradient("grad_orth_inv", relative_error(gi.data(), &ni)));
    out.push(Check::gradient("grad_orth_spc", relative_error(gs.data(), &ns)));

    let other = random([b, h, w, d], &mut r);
    for include_positive in [false, true] {
        let con = |a: &Tensor<f64>, o: &Tensor<f64>| {
            let (pa, po) = (pool_normalize(a, Modality::Rgb), pool_normalize(o, Modality::Depth));
            contrastive_loss(&pa, &po, 0.07, include_positive).expect("con").0
        };
        let (pa, po) = (pool_normalize(&inv, Modality::Rgb), pool_normalize(&other, Modality::Depth));
        let (_, ra, ro) = contrastive_loss(&pa, &po, 0.07, include_positive)?;
        let ga = pool_normalize_backward(&pa, &ra);
        let go = pool_normalize_backward(&po, &ro);
        let na = numeric_gradient(&inv, |x| con(x, &other));
        let no = numeric_gradient(&other, |x| con(&inv, x));
        let tag = if include_positive { "_with_positive" } else { "" };
        out.push(Check::gradient(format!("grad_con_anchor{tag}"), relative_error(ga.data(), &na)));
        out.push(Check::gradient(format!("grad_con_other{tag}"), relative_error(go.data(), &no)));
    }
    Ok(out)
}

/// Identities followed by gradient checks.
pub fn run_suite() -> Result<Vec<Check>> {
    let mut all = identity_checks()?;
    all.extend(gradient_checks()?);
    Ok(all)
}
