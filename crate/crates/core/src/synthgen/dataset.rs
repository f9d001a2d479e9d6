//! Seeded on-disk generation of the synthetic protuberance dataset.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compose::{try_compose, ComposeLimits, SynthSample, TargetMode};
use super::shapes::{gen_kidney_shape, gen_tumor_shape, ShapeParams};
use crate::error::{invalid, Error, Result};
use crate::seed::{child_seed, rng_from};
use crate::volume::pvol;
use crate::volume::EulerZyx;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kidney: ShapeParams,
    pub tumor: ShapeParams,
    pub limits: ComposeLimits,
    /// Shape pairs drawn per sample before giving up.
    pub max_rounds: usize,
}

impl SynthConfig {
    /// Defaults for an `n³` grid.
    pub fn for_grid(n: usize) -> Self {
        Self { kidney: ShapeParams::kidney(n), tumor: ShapeParams::tumor(n), limits: ComposeLimits::default(), max_rounds: 1000 }
    }

    pub fn validate(&self) -> Result<()> {
        self.kidney.validate()?;
        self.tumor.validate()?;
        self.limits.validate()?;
        if self.kidney.grid != self.tumor.grid {
            return invalid("kidney and tumor grids differ");
        }
        if self.max_rounds == 0 {
            return invalid("max_rounds must be >= 1");
        }
        Ok(())
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::for_grid(64)
    }
}

/// One accepted sample from its own seed, redrawing shape pairs whenever a
/// pair exhausts its placement budget.
pub fn generate_sample(seed: u64, cfg: &SynthConfig) -> Result<SynthSample> {
    cfg.validate()?;
    let mut rng = rng_from(seed);
    let mut attempts = 0u64;
    for _ in 0..cfg.max_rounds {
        let kidney = gen_kidney_shape(&mut rng, &cfg.kidney)?;
        let tumor = gen_tumor_shape(&mut rng, &cfg.tumor)?;
        match try_compose(&kidney, &tumor, &mut rng, &cfg.limits)? {
            Ok(mut s) => {
                s.meta.attempts += attempts;
                s.meta.seed = seed;
                return Ok(s);
            }
            Err(_) => attempts += cfg.limits.attempts as u64,
        }
    }
    invalid(format!("no acceptable placement after {} shape pairs", cfg.max_rounds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub input_path: String,
    pub target_path: String,
    pub kidney_path: String,
    pub tumor_path: String,
    pub seed: u64,
    pub coverage_ratio: f64,
    pub containment_ratio: f64,
    pub rotation: EulerZyx,
    pub scale: f64,
    pub offset: [i64; 3],
    pub attempts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub master_seed: u64,
    pub grid: [usize; 3],
    pub target: TargetMode,
    /// False when generation stopped on an error; `samples` then lists only
    /// what was written.
    pub complete: bool,
    pub samples: Vec<SampleRecord>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(&crate::error::read_file(path)?)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    /// Placements tried per accepted sample, over the whole set.
    pub fn acceptance_rate(&self) -> f64 {
        let tried: u64 = self.samples.iter().map(|s| s.attempts).sum();
        if tried == 0 {
            0.0
        } else {
            self.samples.len() as f64 / tried as f64
        }
    }
}

fn write_sample(out: &Path, index: usize, s: &SynthSample) -> Result<SampleRecord> {
    let name = |kind: &str| format!("synth_{index:05}_{kind}.pvol");
    let rec = SampleRecord {
        index,
        input_path: name("input"),
        target_path: name("target"),
        kidney_path: name("kidney"),
        tumor_path: name("tumor"),
        seed: s.meta.seed,
        coverage_ratio: s.meta.coverage_ratio,
        containment_ratio: s.meta.containment_ratio,
        rotation: s.meta.rotation,
        scale: s.meta.scale,
        offset: s.meta.offset,
        attempts: s.meta.attempts,
    };
    pvol::write_mask(out.join(&rec.input_path), &s.input_mask)?;
    pvol::write_mask(out.join(&rec.target_path), &s.target_mask)?;
    pvol::write_mask(out.join(&rec.kidney_path), &s.kidney_mask)?;
    pvol::write_mask(out.join(&rec.tumor_path), &s.tumor_mask)?;
    Ok(rec)
}

/// Write `n` accepted samples and `manifest.json` into `out_dir`.
///
/// Sample `i` is drawn from `child_seed(master_seed, i)`, so the output is
/// a pure function of `(n, master_seed, cfg)` regardless of thread count.
pub fn generate_dataset(n: usize, master_seed: u64, cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    if n == 0 {
        return invalid("n must be >= 1");
    }
    cfg.validate()?;
    let out: PathBuf = out_dir.as_ref().to_path_buf();
    fs::create_dir_all(&out)?;
    let results: Vec<Result<SampleRecord>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = generate_sample(child_seed(master_seed, i as u64), cfg)?;
            write_sample(&out, i, &s)
        })
        .collect();
    let mut samples = Vec::with_capacity(n);
    let mut first_err = None;
    for r in results {
        match r {
            Ok(rec) => samples.push(rec),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        master_seed,
        grid: cfg.kidney.grid.as_array(),
        target: cfg.limits.target,
        complete: first_err.is_none(),
        samples,
    };
    let saved = manifest.save(out.join(MANIFEST_NAME));
    match first_err {
        Some(e) => Err(e),
        None => saved.map(|_| manifest),
    }
}
