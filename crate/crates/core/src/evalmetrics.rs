//! Voxel dice and lesion-level detection metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::pipeline::{DatasetManifest, Split};
use crate::volume::{connected_components, pvol, Connectivity, Mask};

fn same_dims(a: &Mask, b: &Mask) -> Result<()> {
    if a.dims() != b.dims() {
        return invalid(format!("mask dims differ: {:?} vs {:?}", a.dims(), b.dims()));
    }
    Ok(())
}

/// `2|P∩G| / (|P| + |G|)`; 1 when both masks are empty.
pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    same_dims(pred, gt)?;
    let (p, g) = (pred.count(), gt.count());
    if p + g == 0 {
        return Ok(1.0);
    }
    let i = pred.overlap_count(gt)?;
    Ok(2.0 * i as f64 / (p + g) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeDice {
    /// Over kidney ∪ tumor.
    pub kidney: f64,
    pub tumor: f64,
    pub composite: f64,
}

pub fn composite_from(kidney: f64, tumor: f64) -> CompositeDice {
    CompositeDice { kidney, tumor, composite: 0.5 * (kidney + tumor) }
}

pub fn composite_dice(pred_kidney: &Mask, pred_tumor: &Mask, gt_kidney: &Mask, gt_tumor: &Mask) -> Result<CompositeDice> {
    for m in [pred_tumor, gt_kidney, gt_tumor] {
        same_dims(pred_kidney, m)?;
    }
    let k = dice(&pred_kidney.union(pred_tumor)?, &gt_kidney.union(gt_tumor)?)?;
    let t = dice(pred_tumor, gt_tumor)?;
    Ok(composite_from(k, t))
}

/// One ground-truth lesion and the predicted components touching it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionMatch {
    /// 26-connected component id in the ground truth.
    pub gt_id: u32,
    pub size: usize,
    /// Predicted component ids overlapping the lesion.
    pub matched: Vec<u32>,
    /// Dice between the union of `matched` and the lesion.
    pub dice: f64,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionReport {
    pub lesions: Vec<LesionMatch>,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    /// Predicted component ids that touch no ground-truth lesion.
    pub fp_components: Vec<u32>,
}

impl LesionReport {
    /// `TP / (TP + FN)`, `None` without ground-truth lesions.
    pub fn sensitivity(&self) -> Option<f64> {
        let n = self.tp + self.fn_;
        (n > 0).then(|| self.tp as f64 / n as f64)
    }
}

/// A lesion is detected when the predicted components overlapping it, taken
/// together, reach dice above 0.5 against it. Predicted components touching
/// no lesion are false positives.
pub fn lesion_match(pred: &Mask, gt: &Mask) -> Result<LesionReport> {
    same_dims(pred, gt)?;
    let pl = connected_components(pred, Connectivity::TwentySix);
    let gl = connected_components(gt, Connectivity::TwentySix);
    let psize = pl.sizes();
    let gsize = gl.sizes();
    // (gt id, pred id) -> overlap voxels
    let mut overlap: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&p, &g) in pl.labels.iter().zip(&gl.labels) {
        if p > 0 && g > 0 {
            *overlap.entry((g, p)).or_default() += 1;
        }
    }
    let mut touched = BTreeSet::new();
    let mut lesions = Vec::with_capacity(gl.count);
    for g in 1..=gl.count as u32 {
        let hits: Vec<(u32, usize)> = overlap.range((g, 0)..=(g, u32::MAX)).map(|(&(_, p), &n)| (p, n)).collect();
        let inter: usize = hits.iter().map(|h| h.1).sum();
        let union: usize = hits.iter().map(|h| psize[h.0 as usize - 1]).sum();
        let size = gsize[g as usize - 1];
        let d = 2.0 * inter as f64 / (union + size) as f64;
        touched.extend(hits.iter().map(|h| h.0));
        lesions.push(LesionMatch { gt_id: g, size, matched: hits.iter().map(|h| h.0).collect(), dice: d, detected: d > 0.5 });
    }
    let fp_components: Vec<u32> = (1..=pl.count as u32).filter(|p| !touched.contains(p)).collect();
    let tp = lesions.iter().filter(|l| l.detected).count();
    Ok(LesionReport { tp, fn_: lesions.len() - tp, fp: fp_components.len(), fp_components, lesions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub name: String,
    pub tumor_dice: f64,
    /// Present when kidney masks exist on both sides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kidney_dice: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composite_dice: Option<f64>,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetReport {
    pub per_image: Vec<ImageEval>,
    pub mean_tumor_dice: f64,
    /// Pooled over the set; null without ground-truth lesions.
    pub sensitivity: Option<f64>,
    pub fps_per_image: f64,
}

/// Masks for one image; kidney masks are optional.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub name: String,
    pub pred_tumor: Mask,
    pub gt_tumor: Mask,
    pub pred_kidney: Option<Mask>,
    pub gt_kidney: Option<Mask>,
}

pub fn evaluate_image(p: &EvalPair) -> Result<ImageEval> {
    let l = lesion_match(&p.pred_tumor, &p.gt_tumor)
        .map_err(|e| crate::Error::InvalidArgument(format!("{}: {e}", p.name)))?;
    let tumor_dice = dice(&p.pred_tumor, &p.gt_tumor)?;
    let comp = match (&p.pred_kidney, &p.gt_kidney) {
        (Some(pk), Some(gk)) => Some(composite_dice(pk, &p.pred_tumor, gk, &p.gt_tumor)?),
        _ => None,
    };
    Ok(ImageEval {
        name: p.name.clone(),
        tumor_dice,
        kidney_dice: comp.map(|c| c.kidney),
        composite_dice: comp.map(|c| c.composite),
        tp: l.tp,
        fn_: l.fn_,
        fp: l.fp,
    })
}

pub fn aggregate(per_image: Vec<ImageEval>) -> Result<SetReport> {
    if per_image.is_empty() {
        return invalid("no images to evaluate");
    }
    let n = per_image.len() as f64;
    let tp: usize = per_image.iter().map(|e| e.tp).sum();
    let fneg: usize = per_image.iter().map(|e| e.fn_).sum();
    let fp: usize = per_image.iter().map(|e| e.fp).sum();
    Ok(SetReport {
        mean_tumor_dice: per_image.iter().map(|e| e.tumor_dice).sum::<f64>() / n,
        sensitivity: (tp + fneg > 0).then(|| tp as f64 / (tp + fneg) as f64),
        fps_per_image: fp as f64 / n,
        per_image,
    })
}

pub fn evaluate_pairs(pairs: &[EvalPair]) -> Result<SetReport> {
    aggregate(pairs.iter().map(evaluate_image).collect::<Result<_>>()?)
}

pub const TUMOR_SUFFIX: &str = "_tumor.pvol";
pub const KIDNEY_SUFFIX: &str = "_kidney.pvol";

fn names_in(dir: &Path) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    let entries = fs::read_dir(dir).map_err(|e| crate::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?;
    for e in entries {
        let name = e?.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(TUMOR_SUFFIX) {
            out.insert(stem.to_string());
        }
    }
    Ok(out)
}

fn optional_mask(path: PathBuf) -> Result<Option<Mask>> {
    if path.exists() {
        Ok(Some(pvol::read_mask(path)?))
    } else {
        Ok(None)
    }
}

fn load_pair(name: &str, pred_dir: &Path, gt_tumor: PathBuf, gt_kidney: PathBuf) -> Result<EvalPair> {
    let pt = pred_dir.join(format!("{name}{TUMOR_SUFFIX}"));
    if !pt.exists() {
        return invalid(format!("missing prediction for {name}: {}", pt.display()));
    }
    Ok(EvalPair {
        name: name.to_string(),
        pred_tumor: pvol::read_mask(pt)?,
        gt_tumor: pvol::read_mask(gt_tumor)?,
        pred_kidney: optional_mask(pred_dir.join(format!("{name}{KIDNEY_SUFFIX}")))?,
        gt_kidney: optional_mask(gt_kidney)?,
    })
}

/// Pair predictions with ground truth and score the set.
///
/// `gt` is either a directory of `<name>_tumor.pvol` (optionally
/// `<name>_kidney.pvol`) files, paired one to one with `pred_dir`, or a
/// dataset manifest whose test entries are scored. Prediction names are the
/// image file stem without a trailing `_image`.
pub fn evaluate_set(pred_dir: impl AsRef<Path>, gt: impl AsRef<Path>) -> Result<SetReport> {
    let (pred_dir, gt) = (pred_dir.as_ref(), gt.as_ref());
    let mut pairs = Vec::new();
    if gt.is_dir() {
        let (pn, gn) = (names_in(pred_dir)?, names_in(gt)?);
        if let Some(x) = gn.difference(&pn).next() {
            return invalid(format!("missing prediction for {x} in {}", pred_dir.display()));
        }
        if let Some(x) = pn.difference(&gn).next() {
            return invalid(format!("missing ground truth for {x} in {}", gt.display()));
        }
        for name in &gn {
            let g = |s: &str| gt.join(format!("{name}{s}"));
            pairs.push(load_pair(name, pred_dir, g(TUMOR_SUFFIX), g(KIDNEY_SUFFIX))?);
        }
    } else {
        let m = DatasetManifest::load(gt)?;
        let root = gt.parent().unwrap_or(Path::new("."));
        for e in m.entries.iter().filter(|e| e.split == Split::Test) {
            let name = prediction_name(Path::new(&e.image_path));
            pairs.push(load_pair(&name, pred_dir, root.join(&e.tumor_path), root.join(&e.kidney_path))?);
        }
    }
    evaluate_pairs(&pairs)
}

/// File stem of an image with a trailing `_image` removed.
pub fn prediction_name(image: &Path) -> String {
    let stem = image.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    stem.strip_suffix("_image").map(str::to_string).unwrap_or(stem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, Spacing};

    fn mask(n: usize, f: impl Fn(usize, usize, usize) -> bool) -> Mask {
        Mask::from_fn(Dims::cube(n), Spacing::iso(1.0), f)
    }

    fn cube(n: usize, lo: [usize; 3], hi: [usize; 3]) -> Mask {
        mask(n, |z, y, x| (lo[0]..hi[0]).contains(&z) && (lo[1]..hi[1]).contains(&y) && (lo[2]..hi[2]).contains(&x))
    }

    #[test]
    fn dice_cases() {
        let a = cube(8, [0, 0, 0], [2, 5, 1]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let e = mask(8, |_, _, _| false);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert_eq!(dice(&a, &e).unwrap(), 0.0);
        let b = cube(8, [1, 0, 0], [3, 5, 1]);
        // |a| = |b| = 10, overlap 5
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert!(dice(&a, &cube(9, [0, 0, 0], [1, 1, 1])).is_err());
    }

    #[test]
    fn composite_cases() {
        let k = cube(8, [0, 0, 0], [6, 6, 6]);
        let t = cube(8, [1, 1, 1], [3, 3, 3]);
        let c = composite_dice(&k, &t, &k, &t).unwrap();
        assert_eq!((c.kidney, c.tumor, c.composite), (1.0, 1.0, 1.0));
        let none = mask(8, |_, _, _| false);
        let c = composite_dice(&k.union(&t).unwrap(), &none, &k, &t).unwrap();
        assert_eq!(c.composite, 0.5);
        assert!((composite_from(0.9737, 0.8509).composite - 0.9123).abs() < 5e-5);
    }

    #[test]
    fn lesion_cases() {
        let two = cube(12, [0, 0, 0], [2, 2, 2]).union(&cube(12, [6, 6, 6], [9, 9, 9])).unwrap();
        let r = lesion_match(&two, &two).unwrap();
        assert_eq!((r.tp, r.fn_, r.fp), (2, 0, 0));
        assert_eq!(r.sensitivity(), Some(1.0));
        let empty = mask(12, |_, _, _| false);
        let r = lesion_match(&empty, &cube(12, [0, 0, 0], [2, 2, 2])).unwrap();
        assert_eq!((r.tp, r.fn_, r.fp), (0, 1, 0));
        // a sliver touching the lesion: dice <= 0.5, neither TP nor FP
        let gt = cube(12, [0, 0, 0], [4, 4, 4]);
        let sliver = cube(12, [3, 3, 3], [5, 5, 5]);
        let r = lesion_match(&sliver, &gt).unwrap();
        assert_eq!((r.tp, r.fn_, r.fp), (0, 1, 0));
        // a far-away blob is a false positive
        let far = gt.union(&cube(12, [10, 10, 10], [12, 12, 12])).unwrap();
        let r = lesion_match(&far, &gt).unwrap();
        assert_eq!((r.tp, r.fn_, r.fp), (1, 0, 1));
    }

    #[test]
    fn set_averaging() {
        let gt = cube(8, [0, 0, 0], [3, 3, 3]);
        let empty = mask(8, |_, _, _| false);
        let perfect = EvalPair { name: "a".into(), pred_tumor: gt.clone(), gt_tumor: gt.clone(), pred_kidney: None, gt_kidney: None };
        let r = evaluate_pairs(std::slice::from_ref(&perfect)).unwrap();
        assert_eq!((r.mean_tumor_dice, r.sensitivity, r.fps_per_image), (1.0, Some(1.0), 0.0));
        let miss = EvalPair { name: "b".into(), pred_tumor: empty, gt_tumor: gt, pred_kidney: None, gt_kidney: None };
        let r = evaluate_pairs(&[perfect, miss]).unwrap();
        assert_eq!(r.sensitivity, Some(0.5));
        assert_eq!(r.mean_tumor_dice, 0.5);
    }

    #[test]
    fn set_from_directories() {
        let d = tempfile::tempdir().unwrap();
        let (p, g) = (d.path().join("p"), d.path().join("g"));
        fs::create_dir_all(&p).unwrap();
        fs::create_dir_all(&g).unwrap();
        let t = cube(8, [2, 2, 2], [5, 5, 5]);
        pvol::write_mask(p.join("c1_tumor.pvol"), &t).unwrap();
        pvol::write_mask(g.join("c1_tumor.pvol"), &t).unwrap();
        let r = evaluate_set(&p, &g).unwrap();
        assert_eq!(r.per_image.len(), 1);
        pvol::write_mask(g.join("c2_tumor.pvol"), &t).unwrap();
        let e = evaluate_set(&p, &g).unwrap_err().to_string();
        assert!(e.contains("c2"), "{e}");
        assert_eq!(prediction_name(Path::new("x/phantom_0003_image.pvol")), "phantom_0003");
    }
}
