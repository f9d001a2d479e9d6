//! Step-1 baseline against the full three-network cascade on phantoms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{Case, Split};
use super::phantom::{make_phantom_dataset, PhantomConfig};
use crate::error::Result;
use crate::evalmetrics::{evaluate_pairs, EvalPair, SetReport};
use crate::synthgen::generate_dataset;
use crate::training::{predict, run_step1, run_step2, run_step3, Models, SynthSource, TrainConfig, BASE_CKPT, PROT_CKPT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub phantom: PhantomConfig,
    pub n_phantoms: usize,
    pub n_synth: usize,
}

impl ExperimentConfig {
    /// 60 training and 20 test phantoms at 32³ with the desk networks.
    pub fn desk(seed: u64) -> Self {
        let phantom = PhantomConfig::for_grid(32);
        Self { train: TrainConfig { seed, ..TrainConfig::desk() }, phantom, n_phantoms: 80, n_synth: 400 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub all: SetReport,
    /// Test phantoms with an isodense tumor only.
    pub isodense: SetReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub baseline: ArmResult,
    pub full: ArmResult,
}

fn score(models: &Models, cases: &[Case], threshold: f64, background: f32) -> Result<ArmResult> {
    let mut all = Vec::with_capacity(cases.len());
    let mut iso = Vec::new();
    for c in cases {
        let p = predict(models, &c.image, threshold, background)?;
        let pair = EvalPair {
            name: c.name.clone(),
            pred_tumor: p.tumor,
            gt_tumor: c.tumor.clone(),
            pred_kidney: Some(p.kidney),
            gt_kidney: Some(c.kidney.clone()),
        };
        if c.isodense == Some(true) {
            iso.push(pair.clone());
        }
        all.push(pair);
    }
    Ok(ArmResult { all: evaluate_pairs(&all)?, isodense: evaluate_pairs(&iso)? })
}

/// Generate data under `dir`, train steps 1–3 and score both arms on the
/// test split.
pub fn run_phantom_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentResult> {
    let seed = cfg.train.seed;
    let ph = dir.join("phantoms");
    let manifest = make_phantom_dataset(cfg.n_phantoms, seed, &cfg.phantom, &ph)?;
    let train = manifest.load_cases(&ph, Some(Split::Train))?;
    let test = manifest.load_cases(&ph, Some(Split::Test))?;
    let synth_dir = dir.join("synth");
    generate_dataset(cfg.n_synth, seed, &cfg.phantom.shapes, &synth_dir)?;
    let synth = SynthSource::open(synth_dir.join(crate::synthgen::MANIFEST_NAME))?;

    let (s1, s2, s3) = (dir.join("step1"), dir.join("step2"), dir.join("step3"));
    run_step1(&cfg.train, &train, &s1)?;
    run_step2(&cfg.train, &synth, &s2)?;
    run_step3(&cfg.train, &train, &s1.join(BASE_CKPT), &s2.join(PROT_CKPT), &s3)?;

    let bg = cfg.train.augment.background as f32;
    let thr = cfg.train.threshold;
    Ok(ExperimentResult {
        baseline: score(&Models::load(&s1)?, &test, thr, bg)?,
        full: score(&Models::load(&s3)?, &test, thr, bg)?,
    })
}
