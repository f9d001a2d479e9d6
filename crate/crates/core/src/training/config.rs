//! Training configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::schedule::{Schedule, SgdConfig};
use crate::error::{invalid, Result};
use crate::losses::LossConfig;
use crate::synthgen::Step2AugConfig;
use crate::tensornet::NetworkConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Networks {
    pub base: NetworkConfig,
    pub protuberance: NetworkConfig,
    pub fusion: NetworkConfig,
}

/// Optimization settings of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
}

impl StageConfig {
    pub fn full(steps: usize, batch_size: usize, warmup_fraction: f64) -> Self {
        Self { steps, batch_size, base_lr: 1e-4, peak_lr: 0.1, warmup_fraction }
    }

    pub fn schedule(&self) -> Result<Schedule> {
        if self.batch_size == 0 {
            return invalid("batch_size must be >= 1");
        }
        Schedule::new(self.base_lr, self.peak_lr, self.warmup_fraction, self.steps)
    }
}

/// Spatial and intensity augmentation of image patches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageAugConfig {
    /// Each Euler angle is uniform in `±rotation` degrees.
    pub rotation: f64,
    pub scale: [f64; 2],
    pub noise_std: [f64; 2],
    pub p_rotate: f64,
    pub p_scale: f64,
    pub p_noise: f64,
    /// Share of patches centered on a labeled voxel.
    pub foreground_fraction: f64,
    /// Intensity of voxels brought in from outside the image.
    pub background: f64,
}

impl Default for ImageAugConfig {
    fn default() -> Self {
        Self {
            rotation: 10.0,
            scale: [0.9, 1.1],
            noise_std: [0.0, 0.05],
            p_rotate: 0.5,
            p_scale: 0.5,
            p_noise: 0.5,
            foreground_fraction: 0.5,
            background: -1.0,
        }
    }
}

impl ImageAugConfig {
    pub fn off() -> Self {
        Self { p_rotate: 0.0, p_scale: 0.0, p_noise: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=180.0).contains(&self.rotation) {
            return invalid("rotation must lie in [0, 180] degrees");
        }
        if !(self.scale[0] >= 0.1 && self.scale[0] <= self.scale[1] && self.scale[1] <= 10.0) {
            return invalid(format!("scale range {:?} must be ordered within [0.1, 10]", self.scale));
        }
        if !(self.noise_std[0] >= 0.0 && self.noise_std[0] <= self.noise_std[1]) {
            return invalid(format!("noise range {:?} must be ordered and >= 0", self.noise_std));
        }
        for p in [self.p_rotate, self.p_scale, self.p_noise, self.foreground_fraction] {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("probability {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Dataset and checkpoint locations; relative paths resolve against the
/// directory of the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    /// Image dataset manifest (steps 1 and 3).
    #[serde(default)]
    pub images: Option<PathBuf>,
    /// Synthetic mask manifest (step 2).
    #[serde(default)]
    pub synth: Option<PathBuf>,
    /// Optional checkpoint to start the base network from.
    #[serde(default)]
    pub init_base: Option<PathBuf>,
    /// Step-3 inputs; default to `base.ckpt` / `prot.ckpt` in the output directory.
    #[serde(default)]
    pub base_ckpt: Option<PathBuf>,
    #[serde(default)]
    pub prot_ckpt: Option<PathBuf>,
}

impl DataPaths {
    pub fn resolve(&self, root: &Path) -> Self {
        let r = |p: &Option<PathBuf>| p.as_ref().map(|p| root.join(p));
        Self {
            images: r(&self.images),
            synth: r(&self.synth),
            init_base: r(&self.init_base),
            base_ckpt: r(&self.base_ckpt),
            prot_ckpt: r(&self.prot_ckpt),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    /// Edge of the cubic training patch.
    pub patch: usize,
    /// Patch edge for step 2; defaults to `patch`.
    #[serde(default)]
    pub step2_patch: Option<usize>,
    pub networks: Networks,
    pub loss: LossConfig,
    pub sgd: SgdConfig,
    pub step1: StageConfig,
    pub step2: StageConfig,
    pub step3: StageConfig,
    pub augment: ImageAugConfig,
    pub step2_augment: Step2AugConfig,
    /// Binarization threshold at inference.
    pub threshold: f64,
    #[serde(default)]
    pub data: DataPaths,
}

impl TrainConfig {
    /// Full-size reference settings.
    pub fn full() -> Self {
        Self {
            seed: 0,
            patch: 128,
            step2_patch: None,
            networks: Networks {
                base: NetworkConfig::full_base(),
                protuberance: NetworkConfig::full_protuberance(),
                fusion: NetworkConfig::full_fusion(),
            },
            loss: LossConfig::default(),
            sgd: SgdConfig::default(),
            step1: StageConfig::full(250_000, 8, 0.3),
            step2: StageConfig::full(100_000, 16, 0.1),
            step3: StageConfig::full(100_000, 4, 0.3),
            augment: ImageAugConfig::default(),
            step2_augment: Step2AugConfig::default(),
            threshold: 0.5,
            data: DataPaths::default(),
        }
    }

    /// Small two-level networks on 32³ patches, trainable in minutes on a CPU.
    pub fn desk() -> Self {
        Self {
            patch: 32,
            step2_patch: Some(16),
            networks: Networks {
                base: NetworkConfig::new(4, 2, 1, 2),
                protuberance: NetworkConfig::new(2, 2, 1, 1),
                fusion: NetworkConfig::new(4, 2, 2, 1),
            },
            step1: StageConfig { steps: 1200, batch_size: 4, base_lr: 1e-4, peak_lr: 0.01, warmup_fraction: 0.3 },
            step2: StageConfig { steps: 2000, batch_size: 8, base_lr: 1e-4, peak_lr: 0.1, warmup_fraction: 0.1 },
            step3: StageConfig { steps: 500, batch_size: 2, base_lr: 1e-4, peak_lr: 0.003, warmup_fraction: 0.3 },
            ..Self::full()
        }
    }

    pub fn step2_patch(&self) -> usize {
        self.step2_patch.unwrap_or(self.patch)
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.networks;
        n.protuberance.check_grid([self.step2_patch(); 3])?;
        for (name, c) in [("base", &n.base), ("protuberance", &n.protuberance), ("fusion", &n.fusion)] {
            c.validate()?;
            c.check_grid([self.patch; 3]).map_err(|e| crate::Error::InvalidArgument(format!("{name}: {e}")))?;
        }
        if n.base.input_channels != 1 || n.base.output_channels != 2 {
            return invalid("base network must map 1 channel to 2 (kidney, tumor)");
        }
        if n.protuberance.input_channels != 1 || n.protuberance.output_channels != 1 {
            return invalid("protuberance network must map 1 channel to 1");
        }
        if n.fusion.input_channels != 2 || n.fusion.output_channels != 1 {
            return invalid("fusion network must map 2 channels to 1");
        }
        self.loss.validate()?;
        for s in [&self.step1, &self.step2, &self.step3] {
            s.schedule()?;
        }
        self.augment.validate()?;
        self.step2_augment.validate()?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return invalid("threshold must lie in (0, 1)");
        }
        Ok(())
    }

    /// Read a JSON config and resolve its data paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: TrainConfig = serde_json::from_slice(&crate::error::read_file(path)?)?;
        let root = path.parent().unwrap_or(Path::new("."));
        cfg.data = cfg.data.resolve(root);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        TrainConfig::full().validate().unwrap();
        TrainConfig::desk().validate().unwrap();
        let p = TrainConfig::full();
        assert_eq!((p.step1.steps, p.step1.batch_size), (250_000, 8));
        assert_eq!((p.step2.steps, p.step2.batch_size), (100_000, 16));
        assert_eq!((p.step3.steps, p.step3.batch_size), (100_000, 4));
        assert_eq!(p.step2.warmup_fraction, 0.1);
    }

    #[test]
    fn json_round_trip_and_paths() {
        let d = tempfile::tempdir().unwrap();
        let mut cfg = TrainConfig::desk();
        cfg.data.images = Some("ph/dataset.json".into());
        std::fs::write(d.path().join("c.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
        let back = TrainConfig::load(d.path().join("c.json")).unwrap();
        assert_eq!(back.data.images.unwrap(), d.path().join("ph/dataset.json"));
        assert_eq!(back.networks, cfg.networks);
    }

    #[test]
    fn bad_patch_rejected() {
        let cfg = TrainConfig { patch: 30, ..TrainConfig::desk() };
        assert!(cfg.validate().is_err());
    }
}
