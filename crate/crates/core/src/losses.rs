//! Dice and cross-entropy losses and the per-step training objectives.
//!
//! Both primitives take probability maps (sigmoid outputs) and binary
//! targets of identical shape and return a scalar node on the tape.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensornet::{Function, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiceForm {
    /// `Σp² + Σt²` in the denominator.
    #[default]
    Squared,
    /// `Σp + Σt` in the denominator.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub dice_weight: f64,
    pub ce_weight: f64,
    /// Label smoothing for the protuberance objective.
    pub label_smoothing: f64,
    /// Numerical guard added to the dice numerator and denominator.
    pub dice_delta: f64,
    #[serde(default)]
    pub dice_form: DiceForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { dice_weight: 0.5, ce_weight: 0.5, label_smoothing: 0.01, dice_delta: 1e-5, dice_form: DiceForm::Squared }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dice_weight < 0.0 || self.ce_weight < 0.0 {
            return invalid("loss weights must be >= 0");
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return invalid(format!("label smoothing must lie in [0, 0.5), got {}", self.label_smoothing));
        }
        if !(self.dice_delta > 0.0) {
            return invalid("dice delta must be > 0");
        }
        Ok(())
    }
}

fn check_pair<T: Scalar>(g: &Graph<T>, pred: Var, target: Var) -> Result<()> {
    let (a, b) = (g.shape(pred), g.shape(target));
    if a != b {
        return invalid(format!("loss shape mismatch: prediction {a:?} vs target {b:?}"));
    }
    Ok(())
}

struct DiceFn<T> {
    delta: T,
    form: DiceForm,
    /// Per channel: (Σ p·t, denominator) over batch and space.
    sums: Vec<(T, T)>,
}

fn dice_sums<T: Scalar>(p: &Tensor<T>, t: &Tensor<T>, form: DiceForm) -> Vec<(T, T)> {
    let s = p.shape();
    let sl = s.spatial_len();
    let mut sums = vec![(T::zero(), T::zero()); s.c];
    for n in 0..s.n {
        for (c, acc) in sums.iter_mut().enumerate() {
            let off = (n * s.c + c) * sl;
            let (pp, tt) = (&p.data()[off..off + sl], &t.data()[off..off + sl]);
            for (&a, &b) in pp.iter().zip(tt) {
                acc.0 += a * b;
                acc.1 += match form {
                    DiceForm::Squared => a * a + b * b,
                    DiceForm::Plain => a + b,
                };
            }
        }
    }
    sums
}

impl<T: Scalar> Function<T> for DiceFn<T> {
    fn name(&self) -> &'static str {
        "dice"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        if !needs[0] {
            return vec![None, None];
        }
        let (p, t) = (inputs[0], inputs[1]);
        let s = p.shape();
        let sl = s.spatial_len();
        let two = T::lit(2.0);
        let scale = grad[0] / T::lit(s.c as f64);
        let mut dp = vec![T::zero(); p.data().len()];
        for n in 0..s.n {
            for (c, &(inter, den)) in self.sums.iter().enumerate() {
                let d = den + self.delta;
                let num = two * inter + self.delta;
                let off = (n * s.c + c) * sl;
                for i in off..off + sl {
                    let (pv, tv) = (p.data()[i], t.data()[i]);
                    let dden = match self.form {
                        DiceForm::Squared => two * pv,
                        DiceForm::Plain => T::one(),
                    };
                    // d/dp of −num/d
                    dp[i] = -scale * (two * tv / d - num * dden / (d * d));
                }
            }
        }
        vec![Some(dp), None]
    }
}

/// `mean_c [1 − (2Σpt + δ) / (D + δ)]`, sums taken per channel over batch and space.
pub fn dice_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var, delta: f64, form: DiceForm) -> Result<Var> {
    check_pair(g, pred, target)?;
    let delta = T::lit(delta);
    let sums = dice_sums(g.value(pred), g.value(target), form);
    let two = T::lit(2.0);
    let mut loss = T::zero();
    for &(inter, den) in &sums {
        loss += T::one() - (two * inter + delta) / (den + delta);
    }
    loss /= T::lit(sums.len() as f64);
    Ok(g.custom(&[pred, target], Tensor::scalar(loss), Box::new(DiceFn { delta, form, sums })))
}

struct BceFn<T> {
    eps: T,
}

/// Probability floor inside logarithms.
fn clip<T: Scalar>(p: T) -> (T, bool) {
    let lo = T::lit(1e-12);
    let hi = T::one() - T::epsilon();
    if p < lo {
        (lo, false)
    } else if p > hi {
        (hi, false)
    } else {
        (p, true)
    }
}

impl<T: Scalar> Function<T> for BceFn<T> {
    fn name(&self) -> &'static str {
        "bce"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        if !needs[0] {
            return vec![None, None];
        }
        let (p, t) = (inputs[0], inputs[1]);
        let scale = grad[0] / T::lit(p.data().len() as f64);
        let half = T::lit(0.5);
        let dp = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&pv, &tv)| {
                let (pc, inside) = clip(pv);
                if !inside {
                    return T::zero();
                }
                let ts = tv * (T::one() - self.eps) + self.eps * half;
                scale * (pc - ts) / (pc * (T::one() - pc))
            })
            .collect();
        vec![Some(dp), None]
    }
}

/// Mean binary cross-entropy against `t' = t(1 − ε) + ε/2`.
pub fn ce_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var, eps: f64) -> Result<Var> {
    check_pair(g, pred, target)?;
    if !(0.0..0.5).contains(&eps) {
        return invalid(format!("label smoothing must lie in [0, 0.5), got {eps}"));
    }
    let e = T::lit(eps);
    let half = T::lit(0.5);
    let (p, t) = (g.value(pred), g.value(target));
    let mut s = T::zero();
    for (&pv, &tv) in p.data().iter().zip(t.data()) {
        let (pc, _) = clip(pv);
        let ts = tv * (T::one() - e) + e * half;
        s -= ts * pc.ln() + (T::one() - ts) * (T::one() - pc).ln();
    }
    let loss = s / T::lit(p.data().len() as f64);
    Ok(g.custom(&[pred, target], Tensor::scalar(loss), Box::new(BceFn { eps: e })))
}

/// `dice_weight·dice + ce_weight·ce` on one channel, no smoothing.
fn seg_term<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var, cfg: &LossConfig) -> Result<Var> {
    let d = dice_loss(g, pred, target, cfg.dice_delta, cfg.dice_form)?;
    let c = ce_loss(g, pred, target, 0.0)?;
    g.weighted_sum(&[(d, T::lit(cfg.dice_weight)), (c, T::lit(cfg.ce_weight))])
}

/// Base-network objective summed over the kidney (channel 0) and tumor
/// (channel 1) heads. `kidney_gt` is the whole organ, tumor included.
pub fn step1_loss<T: Scalar>(g: &mut Graph<T>, base_out: Var, kidney_gt: Var, tumor_gt: Var, cfg: &LossConfig) -> Result<Var> {
    if g.shape(base_out).c != 2 {
        return invalid(format!("base output must have 2 channels, got {}", g.shape(base_out).c));
    }
    let k = g.slice_channels(base_out, 0, 1)?;
    let t = g.slice_channels(base_out, 1, 1)?;
    let lk = seg_term(g, k, kidney_gt, cfg)?;
    let lt = seg_term(g, t, tumor_gt, cfg)?;
    g.weighted_sum(&[(lk, T::one()), (lt, T::one())])
}

/// Protuberance objective: smoothed cross-entropy only.
pub fn step2_loss<T: Scalar>(g: &mut Graph<T>, prot_out: Var, target: Var, cfg: &LossConfig) -> Result<Var> {
    ce_loss(g, prot_out, target, cfg.label_smoothing)
}

/// Fusion objective plus the base objective kept as intermediate supervision.
pub fn step3_loss<T: Scalar>(
    g: &mut Graph<T>,
    fusion_out: Var,
    base_out: Var,
    kidney_gt: Var,
    tumor_gt: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let lf = seg_term(g, fusion_out, tumor_gt, cfg)?;
    let lb = step1_loss(g, base_out, kidney_gt, tumor_gt, cfg)?;
    g.weighted_sum(&[(lf, T::one()), (lb, T::one())])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::Shape;

    fn tensor(shape: Shape, v: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, v).unwrap()
    }

    #[test]
    fn dice_perfect_and_disjoint() {
        let s = Shape::new(1, 1, 2, 2, 4);
        let t: Vec<f64> = (0..16).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let mut g = Graph::new();
        let p = g.input(tensor(s, t.clone()));
        let tt = g.input(tensor(s, t.clone()));
        let l = dice_loss(&mut g, p, tt, 1e-5, DiceForm::Squared).unwrap();
        assert!(g.value(l).item() < 1e-6);
        let inv: Vec<f64> = t.iter().map(|v| 1.0 - v).collect();
        let q = g.input(tensor(s, inv));
        let l = dice_loss(&mut g, q, tt, 1e-5, DiceForm::Squared).unwrap();
        assert!(g.value(l).item() >= 1.0 - 1e-6);
    }

    #[test]
    fn dice_uniform_half_closed_form() {
        // N voxels, half of them target, prediction 0.5 everywhere:
        // Σpt = N/4, Σp² = N/4, Σt² = N/2
        let n = 64.0;
        let delta = 1e-5;
        let want = 1.0 - (2.0 * n / 4.0 + delta) / (n / 4.0 + n / 2.0 + delta);
        let s = Shape::new(1, 1, 4, 4, 4);
        let mut g = Graph::new();
        let p = g.input(Tensor::filled(s, 0.5));
        let t = g.input(tensor(s, (0..64).map(|i| (i < 32) as u8 as f64).collect()));
        let l = dice_loss(&mut g, p, t, delta, DiceForm::Squared).unwrap();
        assert!((g.value(l).item() - want).abs() < 1e-12);
    }

    #[test]
    fn ce_zero_at_perfect_ones() {
        let s = Shape::new(1, 1, 2, 2, 2);
        let mut g = Graph::<f64>::new();
        let p = g.input(Tensor::filled(s, 1.0));
        let t = g.input(Tensor::filled(s, 1.0));
        let l = ce_loss(&mut g, p, t, 0.0).unwrap();
        assert!(g.value(l).item().abs() < 1e-12);
        assert!(ce_loss(&mut g, p, t, 0.5).is_err());
    }

    #[test]
    fn smoothed_ce_is_stationary_at_0995() {
        // logit of 0.995; the gradient through the sigmoid must vanish
        let z0 = (0.995f64 / 0.005).ln();
        let s = Shape::scalar();
        let mut g = Graph::<f64>::new();
        let z = g.leaf(Tensor::filled(s, z0), true);
        let p = g.sigmoid(z);
        let t = g.input(Tensor::filled(s, 1.0));
        let l = ce_loss(&mut g, p, t, 0.01).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(z).unwrap()[0].abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut g = Graph::<f64>::new();
        let p = g.input(Tensor::zeros(Shape::new(1, 1, 2, 2, 2)));
        let t = g.input(Tensor::zeros(Shape::new(1, 1, 2, 2, 1)));
        assert!(dice_loss(&mut g, p, t, 1e-5, DiceForm::Squared).is_err());
        assert!(ce_loss(&mut g, p, t, 0.0).is_err());
    }

    #[test]
    fn step_losses_perfect_and_supervision() {
        let s1 = Shape::new(1, 1, 2, 2, 2);
        let kid: Vec<f64> = vec![1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let tum: Vec<f64> = vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let both: Vec<f64> = kid.iter().chain(&tum).copied().collect();
        let cfg = LossConfig::default();
        let mut g = Graph::new();
        let out = g.input(tensor(Shape::new(1, 2, 2, 2, 2), both));
        let k = g.input(tensor(s1, kid.clone()));
        let t = g.input(tensor(s1, tum.clone()));
        let l1 = step1_loss(&mut g, out, k, t, &cfg).unwrap();
        assert!(g.value(l1).item() < 1e-6);
        let fused = g.input(tensor(s1, tum.clone()));
        let l3 = step3_loss(&mut g, fused, out, k, t, &cfg).unwrap();
        assert!(g.value(l3).item() < 1e-6);
        // fusion perfect, base wrong: intermediate supervision keeps the loss up
        let wrong: Vec<f64> = kid.iter().chain(&tum).map(|v| 1.0 - v).collect();
        let bad = g.input(tensor(Shape::new(1, 2, 2, 2, 2), wrong));
        let l3 = step3_loss(&mut g, fused, bad, k, t, &cfg).unwrap();
        assert!(g.value(l3).item() > 1.0);
        let l1 = step1_loss(&mut g, bad, k, t, &cfg).unwrap();
        assert!(g.value(l1).item() > 1.0);
    }
}
