//! Finite-difference checks over every differentiable op, every loss, the
//! fusion wiring and a full network, in 64-bit.

use rand::Rng as _;

use crate::error::Result;
use crate::losses::{ce_loss, dice_loss, step1_loss, step2_loss, step3_loss, DiceForm, LossConfig};
use crate::seed::{child_rng, Rng};
use crate::tensornet::gradcheck::{check_inputs, check_params, GradCheckReport};
use crate::tensornet::{Function, Graph, Network, NetworkConfig, Shape, Tensor, Var};
use crate::training::fuse;

/// Elementwise tolerance for op and loss checks.
pub const OP_TOL: f64 = 1e-4;
/// Tolerance for the full network check.
pub const NETWORK_TOL: f64 = 1e-3;
const H: f64 = 1e-6;

/// `Σ rᵢ xᵢ` against a fixed random `r`, to reduce any tensor to a scalar.
struct Project {
    r: Vec<f64>,
}

impl Function<f64> for Project {
    fn name(&self) -> &'static str {
        "project"
    }

    fn backward(&self, _inputs: &[&Tensor<f64>], _out: &Tensor<f64>, grad: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![needs[0].then(|| self.r.iter().map(|r| r * grad[0]).collect())]
    }
}

fn project(g: &mut Graph<f64>, x: Var, seed: u64) -> Var {
    let mut rng = child_rng(seed, 99);
    let r: Vec<f64> = (0..g.shape(x).numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v = g.value(x).data().iter().zip(&r).map(|(a, b)| a * b).sum();
    g.custom(&[x], Tensor::scalar(v), Box::new(Project { r }))
}

fn uniform(rng: &mut Rng, s: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::new(s, (0..s.numel()).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

fn binary(rng: &mut Rng, s: Shape, p: f64) -> Tensor<f64> {
    Tensor::new(s, (0..s.numel()).map(|_| rng.random_bool(p) as u8 as f64).collect()).expect("shape")
}

/// Up to `k` random probes in input `i`, all of them for small inputs.
fn probes(rng: &mut Rng, inputs: &[Tensor<f64>], which: &[usize], k: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for &i in which {
        let n = inputs[i].data().len();
        if n <= k {
            out.extend((0..n).map(|j| (i, j)));
        } else {
            out.extend((0..k).map(|_| (i, rng.random_range(0..n))));
        }
    }
    out
}

type Body = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

fn case(label: &str, inputs: Vec<Tensor<f64>>, rng: &mut Rng, which: &[usize], body: Body) -> Result<GradCheckReport> {
    let p = probes(rng, &inputs, which, 24);
    check_inputs(label, &inputs, &p, H, body)
}

/// One report per op and loss.
pub fn op_reports(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = child_rng(seed, 0);
    let r = &mut rng;
    let x = Shape::new(2, 2, 4, 4, 4);
    let one = Shape::new(2, 1, 4, 4, 4);
    let mut out = Vec::new();

    let conv_in = |r: &mut Rng, cout: usize| {
        vec![uniform(r, x, -1.0, 1.0), uniform(r, Shape::new(cout, 2, 3, 3, 3), -0.5, 0.5), uniform(r, Shape::new(cout, 1, 1, 1, 1), -0.5, 0.5)]
    };
    out.push(case("conv3d", conv_in(r, 3), r, &[0, 1, 2], |g, v| {
        let y = g.conv3d(v[0], v[1], v[2], 1)?;
        Ok(project(g, y, 1))
    })?);
    out.push(case("conv3d stride 2", conv_in(r, 3), r, &[0, 1, 2], |g, v| {
        let y = g.conv3d(v[0], v[1], v[2], 2)?;
        Ok(project(g, y, 2))
    })?);
    let pw = vec![uniform(r, x, -1.0, 1.0), uniform(r, Shape::new(3, 2, 1, 1, 1), -0.5, 0.5), uniform(r, Shape::new(3, 1, 1, 1, 1), -0.5, 0.5)];
    out.push(case("conv3d 1x1", pw, r, &[0, 1, 2], |g, v| {
        let y = g.conv3d(v[0], v[1], v[2], 1)?;
        Ok(project(g, y, 3))
    })?);
    out.push(case("maxpool", vec![uniform(r, x, -1.0, 1.0)], r, &[0], |g, v| {
        let y = g.maxpool(v[0])?;
        Ok(project(g, y, 4))
    })?);
    out.push(case("upsample", vec![uniform(r, Shape::new(2, 2, 2, 3, 2), -1.0, 1.0)], r, &[0], |g, v| {
        let y = g.upsample(v[0])?;
        Ok(project(g, y, 5))
    })?);
    out.push(case("relu", vec![uniform(r, x, -1.0, 1.0)], r, &[0], |g, v| {
        let y = g.relu(v[0]);
        Ok(project(g, y, 6))
    })?);
    out.push(case("sigmoid", vec![uniform(r, x, -4.0, 4.0)], r, &[0], |g, v| {
        let y = g.sigmoid(v[0]);
        Ok(project(g, y, 7))
    })?);
    out.push(case("add", vec![uniform(r, x, -1.0, 1.0), uniform(r, x, -1.0, 1.0)], r, &[0, 1], |g, v| {
        let y = g.add(v[0], v[1])?;
        Ok(project(g, y, 8))
    })?);
    out.push(case("clamp01", vec![uniform(r, x, -0.5, 1.5)], r, &[0], |g, v| {
        let y = g.clamp01(v[0]);
        Ok(project(g, y, 9))
    })?);
    out.push(case("concat", vec![uniform(r, one, -1.0, 1.0), uniform(r, x, -1.0, 1.0)], r, &[0, 1], |g, v| {
        let y = g.concat(v[0], v[1])?;
        Ok(project(g, y, 10))
    })?);
    out.push(case("slice_channels", vec![uniform(r, Shape::new(2, 3, 2, 2, 2), -1.0, 1.0)], r, &[0], |g, v| {
        let y = g.slice_channels(v[0], 1, 2)?;
        Ok(project(g, y, 11))
    })?);
    let sc = Shape::scalar();
    out.push(case("weighted_sum", vec![uniform(r, sc, -1.0, 1.0), uniform(r, sc, -1.0, 1.0)], r, &[0, 1], |g, v| {
        g.weighted_sum(&[(v[0], 0.7), (v[1], -1.3)])
    })?);

    let pt = |r: &mut Rng, s: Shape| vec![uniform(r, s, 0.05, 0.95), binary(r, s, 0.4)];
    out.push(case("dice squared", pt(r, x), r, &[0], |g, v| dice_loss(g, v[0], v[1], 1e-5, DiceForm::Squared))?);
    out.push(case("dice plain", pt(r, x), r, &[0], |g, v| dice_loss(g, v[0], v[1], 1e-5, DiceForm::Plain))?);
    out.push(case("cross-entropy", pt(r, x), r, &[0], |g, v| ce_loss(g, v[0], v[1], 0.0))?);
    out.push(case("cross-entropy smoothed", pt(r, x), r, &[0], |g, v| ce_loss(g, v[0], v[1], 0.01))?);
    let b2 = Shape::new(2, 2, 4, 4, 4);
    let s1 = vec![uniform(r, b2, 0.05, 0.95), binary(r, one, 0.5), binary(r, one, 0.2)];
    out.push(case("step1 loss", s1, r, &[0], |g, v| step1_loss(g, v[0], v[1], v[2], &LossConfig::default()))?);
    out.push(case("step2 loss", pt(r, one), r, &[0], |g, v| step2_loss(g, v[0], v[1], &LossConfig::default()))?);
    let s3 = vec![uniform(r, one, 0.05, 0.95), uniform(r, b2, 0.05, 0.95), binary(r, one, 0.5), binary(r, one, 0.2)];
    out.push(case("step3 loss", s3, r, &[0, 1], |g, v| step3_loss(g, v[0], v[1], v[2], v[3], &LossConfig::default()))?);
    let fz = vec![uniform(r, one, 0.0, 0.6), uniform(r, one, 0.0, 0.6), uniform(r, one, -1.0, 1.0)];
    out.push(case("fuse", fz, r, &[0, 1, 2], |g, v| {
        let y = fuse(g, v[0], v[1], v[2])?;
        Ok(project(g, y, 12))
    })?);
    Ok(out)
}

/// The desk base network under the step-1 loss: `params` random parameter
/// entries checked on each of `inputs` random inputs.
pub fn network_reports(seed: u64, params: usize, inputs: usize) -> Result<Vec<GradCheckReport>> {
    let mut rng = child_rng(seed, 1);
    let net = Network::<f64>::build(NetworkConfig::new(4, 2, 1, 2), &mut rng)?;
    let s = Shape::new(1, 1, 8, 8, 8);
    let mut out = Vec::with_capacity(inputs);
    for k in 0..inputs {
        let x = uniform(&mut rng, s, -1.0, 1.0);
        let kid = binary(&mut rng, s, 0.5);
        let tum = binary(&mut rng, s, 0.2);
        let probes: Vec<(usize, usize)> = (0..params)
            .map(|_| {
                let i = rng.random_range(0..net.params().len());
                (i, rng.random_range(0..net.params().get(i).len()))
            })
            .collect();
        let r = check_params(&format!("base network, input {k}"), &net, &probes, H, |g, n| {
            let xi = g.input(x.clone());
            let ki = g.input(kid.clone());
            let ti = g.input(tum.clone());
            let f = n.forward(g, xi)?;
            Ok((step1_loss(g, f.output, ki, ti, &LossConfig::default())?, f.bindings))
        })?;
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        for r in op_reports(7).unwrap() {
            assert!(r.passes(OP_TOL), "{r:?}");
        }
    }
}
