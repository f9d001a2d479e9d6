//! Whole-image prediction from trained checkpoints.

use std::path::Path;

use super::stages::{full_forward, BASE_CKPT, FUSION_CKPT, PROT_CKPT};
use crate::error::{invalid, Error, Result};
use crate::tensornet::{checkpoint, Graph, Network, Tensor};
use crate::volume::{crop_padded, Dims, Mask, Volume};

/// Trained networks. Without protuberance and fusion checkpoints the tumor
/// comes from the base network's tumor head.
#[derive(Debug, Clone)]
pub struct Models {
    pub base: Network<f32>,
    pub cascade: Option<(Network<f32>, Network<f32>)>,
    /// Edge of the training patch, read from the base checkpoint.
    pub patch: usize,
}

impl Models {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (base, header) = checkpoint::load::<f32>(dir.join(BASE_CKPT))?;
        let patch = header.meta.get("patch").and_then(|v| v.as_u64()).map(|v| v as usize);
        let Some(patch) = patch else {
            return Err(Error::Format(format!("{}: checkpoint meta lacks the training patch size", dir.join(BASE_CKPT).display())));
        };
        let (p, f) = (dir.join(PROT_CKPT), dir.join(FUSION_CKPT));
        let cascade = match (p.exists(), f.exists()) {
            (true, true) => {
                let prot = checkpoint::load::<f32>(&p)?.0;
                let fusion = checkpoint::load::<f32>(&f)?.0;
                Some((prot, fusion))
            }
            (_, false) => None,
            (false, true) => return invalid(format!("{}: fusion checkpoint without {PROT_CKPT}", dir.display())),
        };
        let m = Self { base, cascade, patch };
        m.check()?;
        Ok(m)
    }

    pub fn base_only(base: Network<f32>, patch: usize) -> Result<Self> {
        let m = Self { base, cascade: None, patch };
        m.check()?;
        Ok(m)
    }

    pub fn full(base: Network<f32>, prot: Network<f32>, fusion: Network<f32>, patch: usize) -> Result<Self> {
        let m = Self { base, cascade: Some((prot, fusion)), patch };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        let b = self.base.config();
        if b.input_channels != 1 || b.output_channels != 2 {
            return invalid("base network must map 1 channel to 2");
        }
        b.check_grid([self.patch; 3])?;
        if let Some((p, f)) = &self.cascade {
            if p.config().input_channels != 1 || p.config().output_channels != 1 {
                return invalid("protuberance network must map 1 channel to 1");
            }
            if f.config().input_channels != 2 || f.config().output_channels != 1 {
                return invalid("fusion network must map 2 channels to 1");
            }
            p.config().check_grid([self.patch; 3])?;
            f.config().check_grid([self.patch; 3])?;
        }
        Ok(())
    }

    /// Kidney and tumor probabilities for one `patch³` tile.
    pub fn predict_tile(&self, tile: &Volume<f32>) -> Result<(Volume<f32>, Volume<f32>)> {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_volumes(&[tile])?);
        match &self.cascade {
            Some((prot, fusion)) => {
                let f = full_forward(&mut g, &self.base, prot, fusion, x)?;
                Ok((g.value(f.base.output).volume(0, 0), g.value(f.fusion.output).volume(0, 0)))
            }
            None => {
                let f = self.base.forward(&mut g, x)?;
                let out = g.value(f.output);
                Ok((out.volume(0, 0), out.volume(0, 1)))
            }
        }
    }
}

/// Binary masks and the averaged probabilities they were thresholded from.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub kidney: Mask,
    pub tumor: Mask,
    pub kidney_prob: Volume<f32>,
    pub tumor_prob: Volume<f32>,
}

/// Window origins along one axis: a single (padded) window when `n <= p`,
/// otherwise stride `p / 2` with the last window flush to the end.
pub fn tile_origins(n: usize, p: usize) -> Vec<usize> {
    if n <= p {
        return vec![0];
    }
    let stride = (p / 2).max(1);
    let mut v: Vec<usize> = (0..=(n - p)).step_by(stride).collect();
    if *v.last().expect("nonempty") != n - p {
        v.push(n - p);
    }
    v
}

/// Tiled prediction with half-patch overlap; overlapping tiles are averaged.
/// Space outside the image is filled with `background`.
pub fn predict(models: &Models, image: &Volume<f32>, threshold: f64, background: f32) -> Result<Prediction> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return invalid(format!("threshold {threshold} outside (0, 1)"));
    }
    if !image.all_finite() {
        return Err(Error::NumericFault("input image has non-finite voxels".into()));
    }
    let dims = image.dims();
    let p = models.patch;
    let [nz, ny, nx] = dims.as_array();
    let (oz, oy, ox) = (tile_origins(nz, p), tile_origins(ny, p), tile_origins(nx, p));
    let mut ksum = vec![0f32; dims.len()];
    let mut tsum = vec![0f32; dims.len()];
    let mut count = vec![0u32; dims.len()];
    for &z0 in &oz {
        for &y0 in &oy {
            for &x0 in &ox {
                let origin = [z0 as i64, y0 as i64, x0 as i64];
                let tile = crop_padded(image, origin, Dims::cube(p), background)?;
                let (k, t) = models.predict_tile(&tile)?;
                for z in 0..p.min(nz - z0) {
                    for y in 0..p.min(ny - y0) {
                        for x in 0..p.min(nx - x0) {
                            let i = dims.index(z0 + z, y0 + y, x0 + x);
                            ksum[i] += k.get(z, y, x);
                            tsum[i] += t.get(z, y, x);
                            count[i] += 1;
                        }
                    }
                }
            }
        }
    }
    let avg = |s: Vec<f32>| -> Result<Volume<f32>> {
        let d = s.into_iter().zip(&count).map(|(v, &c)| v / c as f32).collect();
        Volume::new(dims, image.spacing(), d)
    };
    let kidney_prob = avg(ksum)?;
    let tumor_prob = avg(tsum)?;
    let thr = threshold as f32;
    Ok(Prediction {
        kidney: kidney_prob.threshold(thr),
        tumor: tumor_prob.threshold(thr),
        kidney_prob,
        tumor_prob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use crate::tensornet::NetworkConfig;
    use crate::volume::Spacing;

    fn models(cascade: bool) -> Models {
        let mut rng = rng_from(4);
        let base = Network::build(NetworkConfig::new(2, 2, 1, 2), &mut rng).unwrap();
        if cascade {
            let prot = Network::build(NetworkConfig::new(2, 2, 1, 1), &mut rng).unwrap();
            let fusion = Network::build(NetworkConfig::new(2, 2, 2, 1), &mut rng).unwrap();
            Models::full(base, prot, fusion, 8).unwrap()
        } else {
            Models::base_only(base, 8).unwrap()
        }
    }

    #[test]
    fn origins_cover_the_axis() {
        assert_eq!(tile_origins(8, 8), vec![0]);
        assert_eq!(tile_origins(5, 8), vec![0]);
        assert_eq!(tile_origins(16, 8), vec![0, 4, 8]);
        assert_eq!(tile_origins(13, 8), vec![0, 4, 5]);
    }

    #[test]
    fn background_image_gives_binary_masks_of_input_dims() {
        for cascade in [false, true] {
            let m = models(cascade);
            let img = Volume::filled(Dims::new(12, 8, 19).unwrap(), Spacing::iso(1.0), -1.0f32);
            let p = predict(&m, &img, 0.5, -1.0).unwrap();
            assert_eq!(p.kidney.dims(), img.dims());
            assert_eq!(p.tumor.dims(), img.dims());
            assert!(p.tumor_prob.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn single_tile_equals_untiled_forward() {
        let m = models(true);
        let img = Volume::from_fn(Dims::cube(8), Spacing::iso(1.0), |z, y, x| ((z * 3 + y * 5 + x) % 7) as f32 / 7.0 - 0.5);
        let p = predict(&m, &img, 0.5, -1.0).unwrap();
        let (k, t) = m.predict_tile(&img).unwrap();
        assert_eq!(p.kidney_prob, k);
        assert_eq!(p.tumor_prob, t);
    }
}
