//! The three training steps and the wiring shared with inference.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::config::{StageConfig, TrainConfig};
use super::data::{image_batch, SynthSource};
use super::schedule::sgd_update;
use crate::error::{invalid, Error, Result};
use crate::losses::{step1_loss, step2_loss, step3_loss};
use crate::pipeline::Case;
use crate::seed::{child_rng, child_seed};
use crate::tensornet::{checkpoint, Forward, Graph, Network, NetworkConfig, Var};

pub const BASE_CKPT: &str = "base.ckpt";
pub const PROT_CKPT: &str = "prot.ckpt";
pub const FUSION_CKPT: &str = "fusion.ckpt";

/// Loss log name for step `n`.
pub fn loss_log_name(step: u8) -> String {
    format!("step{step}_loss.csv")
}

/// Fusion network input: channel 0 is the image, channel 1 is
/// `clamp01(tumor + prot)`.
pub fn fuse<T: crate::Scalar>(g: &mut Graph<T>, tumor: Var, prot: Var, image: Var) -> Result<Var> {
    let (st, sp, si) = (g.shape(tumor), g.shape(prot), g.shape(image));
    if st != sp || st != si || st.c != 1 {
        return invalid(format!("fuse needs matching single-channel inputs, got {st:?}, {sp:?}, {si:?}"));
    }
    let sum = g.add(tumor, prot)?;
    let mask = g.clamp01(sum);
    g.concat(image, mask)
}

/// Every intermediate of the full base → protuberance → fusion pass.
pub struct FullForward {
    pub base: Forward,
    pub prot: Forward,
    pub fusion: Forward,
    /// Fusion network input.
    pub fused: Var,
}

/// Base output channel 0 (kidney probability) feeds the protuberance
/// network; channel 1 (tumor probability) is fused with its output.
pub fn full_forward<T: crate::Scalar>(
    g: &mut Graph<T>,
    base: &Network<T>,
    prot: &Network<T>,
    fusion: &Network<T>,
    image: Var,
) -> Result<FullForward> {
    let b = base.forward(g, image)?;
    let kidney = g.slice_channels(b.output, 0, 1)?;
    let tumor = g.slice_channels(b.output, 1, 1)?;
    let p = prot.forward(g, kidney)?;
    let fused = fuse(g, tumor, p.output, image)?;
    let f = fusion.forward(g, fused)?;
    Ok(FullForward { base: b, prot: p, fusion: f, fused })
}

/// Outcome of one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub checkpoint: PathBuf,
    pub losses: Vec<f64>,
    /// Digest of the trained parameters.
    pub digest: String,
}

fn stage_seed(cfg: &TrainConfig, step: u8) -> u64 {
    child_seed(cfg.seed, step as u64)
}

fn check_batch(available: usize, stage: &StageConfig, what: &str) -> Result<()> {
    if available < stage.batch_size {
        return invalid(format!("{what}: {available} samples cannot fill one batch of {}", stage.batch_size));
    }
    Ok(())
}

pub fn load_network(path: &Path, expect: &NetworkConfig, role: &str) -> Result<Network<f32>> {
    let (net, _) = checkpoint::load::<f32>(path)?;
    if net.config() != expect {
        return invalid(format!(
            "{}: {role} checkpoint config {:?} does not match the training config {:?}",
            path.display(),
            net.config(),
            expect
        ));
    }
    Ok(net)
}

fn finite_loss(v: f32, stage: u8, step: usize) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::NumericFault(format!("step {stage}: loss is {v} at iteration {step}")));
    }
    Ok(v as f64)
}

/// Drives `body` for every iteration of a stage, writing `step,lr,loss` lines.
fn train_loop(
    stage: u8,
    sc: &StageConfig,
    seed: u64,
    out: &Path,
    mut body: impl FnMut(usize, u64, f64) -> Result<f64>,
) -> Result<Vec<f64>> {
    let sched = sc.schedule()?;
    let mut log = String::new();
    let mut losses = Vec::with_capacity(sc.steps);
    for step in 0..sc.steps {
        let lr = sched.lr_at(step)?;
        let loss = body(step, child_seed(seed, step as u64 + 1), lr)?;
        writeln!(log, "{step},{lr},{loss}").expect("string write");
        losses.push(loss);
    }
    fs::write(out.join(loss_log_name(stage)), log)?;
    Ok(losses)
}

fn meta(cfg: &TrainConfig, stage: u8, losses: &[f64]) -> serde_json::Value {
    json!({
        "stage": stage,
        "seed": cfg.seed,
        "patch": cfg.patch,
        "threshold": cfg.threshold,
        "final_loss": losses.last().copied(),
    })
}

/// Step 1: the base network on image patches.
pub fn run_step1(cfg: &TrainConfig, cases: &[Case], out: &Path) -> Result<StageReport> {
    cfg.validate()?;
    check_batch(cases.len(), &cfg.step1, "step 1 training images")?;
    fs::create_dir_all(out)?;
    let seed = stage_seed(cfg, 1);
    let mut base = match &cfg.data.init_base {
        Some(p) => {
            let mut n = load_network(p, &cfg.networks.base, "initial base")?;
            n.params_mut().zero_momentum();
            n
        }
        None => Network::<f32>::build(cfg.networks.base, &mut child_rng(seed, 0))?,
    };
    let losses = train_loop(1, &cfg.step1, seed, out, |step, step_seed, lr| {
        let b = image_batch(cases, cfg.step1.batch_size, cfg.patch, &cfg.augment, step_seed)?;
        let mut g = Graph::new();
        let x = g.input(b.image);
        let k = g.input(b.kidney);
        let t = g.input(b.tumor);
        let f = base.forward(&mut g, x)?;
        let loss = step1_loss(&mut g, f.output, k, t, &cfg.loss)?;
        let v = finite_loss(g.value(loss).item(), 1, step)?;
        let grads = g.backward(loss)?;
        base.params_mut().load_grads(&grads, &f.bindings);
        sgd_update(base.params_mut(), lr, &cfg.sgd)?;
        Ok(v)
    })?;
    let path = out.join(BASE_CKPT);
    checkpoint::save(&path, &base, meta(cfg, 1, &losses))?;
    Ok(StageReport { checkpoint: path, losses, digest: base.params().digest() })
}

/// Step 2: the protuberance network alone on degraded synthetic masks.
pub fn run_step2(cfg: &TrainConfig, synth: &SynthSource, out: &Path) -> Result<StageReport> {
    cfg.validate()?;
    check_batch(synth.len(), &cfg.step2, "step 2 synthetic samples")?;
    fs::create_dir_all(out)?;
    let seed = stage_seed(cfg, 2);
    let mut prot = Network::<f32>::build(cfg.networks.protuberance, &mut child_rng(seed, 0))?;
    let fg = cfg.augment.foreground_fraction;
    let losses = train_loop(2, &cfg.step2, seed, out, |step, step_seed, lr| {
        let b = synth.batch(cfg.step2.batch_size, cfg.step2_patch(), &cfg.step2_augment, fg, step_seed)?;
        let mut g = Graph::new();
        let x = g.input(b.input);
        let t = g.input(b.target);
        let f = prot.forward(&mut g, x)?;
        let loss = step2_loss(&mut g, f.output, t, &cfg.loss)?;
        let v = finite_loss(g.value(loss).item(), 2, step)?;
        let grads = g.backward(loss)?;
        prot.params_mut().load_grads(&grads, &f.bindings);
        sgd_update(prot.params_mut(), lr, &cfg.sgd)?;
        Ok(v)
    })?;
    let path = out.join(PROT_CKPT);
    checkpoint::save(&path, &prot, meta(cfg, 2, &losses))?;
    Ok(StageReport { checkpoint: path, losses, digest: prot.params().digest() })
}

/// Result of step 3: the jointly trained base and fusion networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Step3Report {
    pub base: StageReport,
    pub fusion: StageReport,
    /// Protuberance digest before and after; equal under the freeze.
    pub prot_digest: (String, String),
}

/// Step 3: base and fusion trained jointly with the protuberance network
/// frozen. Writes all three checkpoints to `out`.
pub fn run_step3(cfg: &TrainConfig, cases: &[Case], base_ckpt: &Path, prot_ckpt: &Path, out: &Path) -> Result<Step3Report> {
    cfg.validate()?;
    check_batch(cases.len(), &cfg.step3, "step 3 training images")?;
    let mut base = load_network(base_ckpt, &cfg.networks.base, "base")?;
    let mut prot = load_network(prot_ckpt, &cfg.networks.protuberance, "protuberance")?;
    fs::create_dir_all(out)?;
    base.params_mut().zero_momentum();
    prot.params_mut().set_frozen(true);
    let prot_before = prot.params().digest();
    let seed = stage_seed(cfg, 3);
    let mut fusion = Network::<f32>::build(cfg.networks.fusion, &mut child_rng(seed, 0))?;
    let losses = train_loop(3, &cfg.step3, seed, out, |step, step_seed, lr| {
        let b = image_batch(cases, cfg.step3.batch_size, cfg.patch, &cfg.augment, step_seed)?;
        let mut g = Graph::new();
        let x = g.input(b.image);
        let k = g.input(b.kidney);
        let t = g.input(b.tumor);
        let f = full_forward(&mut g, &base, &prot, &fusion, x)?;
        let loss = step3_loss(&mut g, f.fusion.output, f.base.output, k, t, &cfg.loss)?;
        let v = finite_loss(g.value(loss).item(), 3, step)?;
        let grads = g.backward(loss)?;
        base.params_mut().load_grads(&grads, &f.base.bindings);
        fusion.params_mut().load_grads(&grads, &f.fusion.bindings);
        prot.params_mut().load_grads(&grads, &f.prot.bindings);
        sgd_update(base.params_mut(), lr, &cfg.sgd)?;
        sgd_update(fusion.params_mut(), lr, &cfg.sgd)?;
        sgd_update(prot.params_mut(), lr, &cfg.sgd)?;
        Ok(v)
    })?;
    let prot_after = prot.params().digest();
    let m = meta(cfg, 3, &losses);
    let base_path = out.join(BASE_CKPT);
    let fusion_path = out.join(FUSION_CKPT);
    checkpoint::save(&base_path, &base, m.clone())?;
    checkpoint::save(&fusion_path, &fusion, m)?;
    let prot_dst = out.join(PROT_CKPT);
    let same = prot_dst.exists() && fs::canonicalize(&prot_dst)? == fs::canonicalize(prot_ckpt)?;
    if !same {
        fs::copy(prot_ckpt, &prot_dst)?;
    }
    Ok(Step3Report {
        base: StageReport { checkpoint: base_path, losses: losses.clone(), digest: base.params().digest() },
        fusion: StageReport { checkpoint: fusion_path, losses, digest: fusion.params().digest() },
        prot_digest: (prot_before, prot_after),
    })
}
