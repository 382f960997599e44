//! Synthetic ambiguous-segmentation corpus: grayscale images of one soft
//! blob on a structured background, each annotated by several simulated
//! experts who disagree about the boundary.
//!
//! The blob is a rotated superellipse level set rho(x, y) <= 1, where
//! rho = (|u|^p + |v|^p)^(1/p) in the blob's axes. Expert k thresholds the
//! same field at 1 + bias_k + jitter_k(angle): a per-expert radial bias
//! spread evenly across +-0.35*ambiguity plus a smooth 3-harmonic angular
//! wobble of amplitude 0.12*ambiguity. Ambiguity only scales those offsets;
//! every random draw is made on streams independent of it, so two datasets
//! that differ only in ambiguity contain byte-identical images.
//!
//! Directory layout:
//!     <dir>/manifest.json
//!     <dir>/img/<id>.pgm
//!     <dir>/masks/<id>_e<k>.pgm    (k = 1..=experts)
//! The first floor(count * split) records are the train split.

use crate::error::{Result, SsbError};
use crate::grid::Grid;
use crate::pgm;
use crate::rng::stream;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub count: usize,
    pub grid_size: usize,
    /// Number of simulated annotators per image.
    pub experts: u32,
    /// Boundary disagreement level in [0, 1].
    pub ambiguity: f64,
    /// Fraction of records in the train split.
    pub split: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { count: 200, grid_size: 32, experts: 4, ambiguity: 0.4, split: 0.9, seed: 0 }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(SsbError::InvalidArgument("count must be at least 1".into()));
        }
        if self.grid_size < 8 {
            return Err(SsbError::InvalidArgument("grid_size must be at least 8".into()));
        }
        if self.experts == 0 {
            return Err(SsbError::InvalidArgument("experts must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return Err(SsbError::InvalidArgument(format!(
                "ambiguity must be in [0, 1], got {}",
                self.ambiguity
            )));
        }
        if !(0.0..=1.0).contains(&self.split) {
            return Err(SsbError::InvalidArgument(format!(
                "split must be in [0, 1], got {}",
                self.split
            )));
        }
        Ok(())
    }

    pub fn train_count(&self) -> usize {
        ((self.count as f64 * self.split).floor() as usize).min(self.count)
    }
}

#[derive(Debug, Clone)]
pub struct DatasetRecord {
    pub id: String,
    pub image: Grid,
    pub expert_masks: Vec<Grid>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub image: String,
    pub masks: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub generator_version: String,
    pub config: DatasetConfig,
    pub records: Vec<ManifestRecord>,
}

/// Superellipse field shared by the image and every expert mask of a record.
struct BlobShape {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos_t: f64,
    sin_t: f64,
    p: f64,
    soft: f64,
    height: f64,
    ramp_cos: f64,
    ramp_sin: f64,
}

impl BlobShape {
    /// All draws happen in a fixed order on the record's shape stream.
    fn draw(cfg: &DatasetConfig, index: u64) -> BlobShape {
        let s = cfg.grid_size as f64;
        let mut rng = stream(cfg.seed, &[b"record-shape", &index.to_le_bytes()]);
        let cx = rng.gen_range(0.35..0.65) * s;
        let cy = rng.gen_range(0.35..0.65) * s;
        let a = rng.gen_range(0.16..0.30) * s;
        let b = rng.gen_range(0.16..0.30) * s;
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let p = rng.gen_range(1.7..3.5);
        let soft = rng.gen_range(0.06..0.16);
        let height = rng.gen_range(0.45..0.62);
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        BlobShape {
            cx,
            cy,
            a,
            b,
            cos_t: theta.cos(),
            sin_t: theta.sin(),
            p,
            soft,
            height,
            ramp_cos: phi.cos(),
            ramp_sin: phi.sin(),
        }
    }

    fn rho(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.cx;
        let dy = py - self.cy;
        let u = (dx * self.cos_t + dy * self.sin_t) / self.a;
        let v = (-dx * self.sin_t + dy * self.cos_t) / self.b;
        (u.abs().powf(self.p) + v.abs().powf(self.p)).powf(1.0 / self.p)
    }

    fn angle(&self, px: f64, py: f64) -> f64 {
        (py - self.cy).atan2(px - self.cx)
    }
}

/// Coarse value-noise lattice, bilinearly upsampled; range [0, 1].
const NOISE_LATTICE: usize = 5;

fn background_noise(cfg: &DatasetConfig, index: u64) -> Vec<f64> {
    let s = cfg.grid_size;
    let mut rng = stream(cfg.seed, &[b"record-image", &index.to_le_bytes()]);
    let k = NOISE_LATTICE;
    let lattice: Vec<f64> = (0..k * k).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut grain = Vec::with_capacity(s * s);
    for _ in 0..s * s {
        grain.push(rng.gen_range(-1.0..1.0));
    }
    let mut out = Vec::with_capacity(s * s);
    for y in 0..s {
        for x in 0..s {
            let gx = (x as f64 + 0.5) / s as f64 * (k - 1) as f64;
            let gy = (y as f64 + 0.5) / s as f64 * (k - 1) as f64;
            let x0 = gx.floor() as usize;
            let y0 = gy.floor() as usize;
            let x1 = (x0 + 1).min(k - 1);
            let y1 = (y0 + 1).min(k - 1);
            let fx = gx - x0 as f64;
            let fy = gy - y0 as f64;
            let top = lattice[y0 * k + x0] * (1.0 - fx) + lattice[y0 * k + x1] * fx;
            let bot = lattice[y1 * k + x0] * (1.0 - fx) + lattice[y1 * k + x1] * fx;
            let coarse = top * (1.0 - fy) + bot * fy;
            out.push(0.12 * coarse + 0.015 * grain[y * s + x]);
        }
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Per-expert boundary offset in rho units: even bias spread plus a smooth
/// angular wobble. Draw count is independent of ambiguity.
struct ExpertBoundary {
    bias: f64,
    amps: [f64; 3],
    phases: [f64; 3],
}

impl ExpertBoundary {
    fn draw(cfg: &DatasetConfig, index: u64, k: u32) -> ExpertBoundary {
        let mut rng =
            stream(cfg.seed, &[b"record-expert", &index.to_le_bytes(), &k.to_le_bytes()]);
        let spread = if cfg.experts == 1 {
            0.0
        } else {
            -1.0 + 2.0 * (k - 1) as f64 / (cfg.experts - 1) as f64
        };
        let bias = 0.35 * cfg.ambiguity * spread;
        let amp_scale = 0.12 * cfg.ambiguity / 3.0;
        let mut amps = [0.0; 3];
        let mut phases = [0.0; 3];
        for h in 0..3 {
            amps[h] = rng.gen_range(0.0..1.0) * amp_scale;
            phases[h] = rng.gen_range(0.0..std::f64::consts::TAU);
        }
        ExpertBoundary { bias, amps, phases }
    }

    fn threshold(&self, angle: f64) -> f64 {
        let mut t = 1.0 + self.bias;
        for h in 0..3 {
            t += self.amps[h] * ((h + 1) as f64 * angle + self.phases[h]).sin();
        }
        t
    }
}

/// Deterministically build record `index` of the configured dataset.
pub fn gen_record(cfg: &DatasetConfig, index: u64) -> Result<DatasetRecord> {
    cfg.validate()?;
    if index >= cfg.count as u64 {
        return Err(SsbError::InvalidArgument(format!(
            "record index {index} out of range 0..{}",
            cfg.count
        )));
    }
    let s = cfg.grid_size;
    let shape = BlobShape::draw(cfg, index);
    let noise = background_noise(cfg, index);
    let mut image = Grid::zeros(s, s);
    for y in 0..s {
        for x in 0..s {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let proj = (px - s as f64 / 2.0) * shape.ramp_cos
                + (py - s as f64 / 2.0) * shape.ramp_sin;
            let ramp = 0.5 + proj / s as f64;
            let rho = shape.rho(px, py);
            let v = 0.18
                + 0.10 * ramp
                + noise[y * s + x]
                + shape.height * sigmoid((1.0 - rho) / shape.soft);
            image.set(y, x, v.clamp(0.0, 1.0));
        }
    }
    let mut expert_masks = Vec::with_capacity(cfg.experts as usize);
    for k in 1..=cfg.experts {
        let boundary = ExpertBoundary::draw(cfg, index, k);
        let mut mask = Grid::zeros(s, s);
        for y in 0..s {
            for x in 0..s {
                let px = x as f64 + 0.5;
                let py = y as f64 + 0.5;
                let rho = shape.rho(px, py);
                if rho <= boundary.threshold(shape.angle(px, py)) {
                    mask.set(y, x, 1.0);
                }
            }
        }
        expert_masks.push(mask);
    }
    Ok(DatasetRecord { id: format!("{index:05}"), image, expert_masks })
}

/// Write the full dataset; returns the manifest that was stored.
pub fn write_dataset(cfg: &DatasetConfig, dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let img_dir = dir.join("img");
    let mask_dir = dir.join("masks");
    for d in [dir, &img_dir, &mask_dir] {
        std::fs::create_dir_all(d).map_err(|e| SsbError::io(d.display().to_string(), e))?;
    }
    let train_count = cfg.train_count();
    let mut records = Vec::with_capacity(cfg.count);
    for index in 0..cfg.count as u64 {
        let rec = gen_record(cfg, index)?;
        let image_rel = format!("img/{}.pgm", rec.id);
        pgm::write_image_pgm(&dir.join(&image_rel), &rec.image)?;
        let mut mask_rels = Vec::with_capacity(rec.expert_masks.len());
        for (i, m) in rec.expert_masks.iter().enumerate() {
            let rel = format!("masks/{}_e{}.pgm", rec.id, i + 1);
            pgm::write_mask_pgm(&dir.join(&rel), m)?;
            mask_rels.push(rel);
        }
        let split = if (index as usize) < train_count { Split::Train } else { Split::Test };
        records.push(ManifestRecord { id: rec.id, split, image: image_rel, masks: mask_rels });
    }
    let manifest = Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        generator_version: env!("CARGO_PKG_VERSION").to_string(),
        config: *cfg,
        records,
    };
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| SsbError::Dataset(format!("manifest encode: {e}")))?;
    pgm::atomic_write(&dir.join("manifest.json"), &json)?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct LoadedRecord {
    pub id: String,
    pub split: Split,
    pub image: Grid,
    pub expert_masks: Vec<Grid>,
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub config: DatasetConfig,
    pub records: Vec<LoadedRecord>,
}

impl LoadedDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &LoadedRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Read a dataset directory back; images come back 8-bit quantized, which is
/// the stored truth.
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let manifest_path = dir.join("manifest.json");
    let bytes = std::fs::read(&manifest_path)
        .map_err(|e| SsbError::io(manifest_path.display().to_string(), e))?;
    let manifest: Manifest = serde_json::from_slice(&bytes)
        .map_err(|e| SsbError::Dataset(format!("manifest parse: {e}")))?;
    if manifest.format_version != MANIFEST_FORMAT_VERSION {
        return Err(SsbError::Dataset(format!(
            "unsupported manifest format_version {}",
            manifest.format_version
        )));
    }
    manifest.config.validate()?;
    if manifest.records.len() != manifest.config.count {
        return Err(SsbError::Dataset(format!(
            "manifest lists {} records but config.count is {}",
            manifest.records.len(),
            manifest.config.count
        )));
    }
    let mut records = Vec::with_capacity(manifest.records.len());
    for mr in &manifest.records {
        if mr.masks.len() != manifest.config.experts as usize {
            return Err(SsbError::Dataset(format!(
                "record {} has {} masks, expected {}",
                mr.id,
                mr.masks.len(),
                manifest.config.experts
            )));
        }
        let image = pgm::read_image_pgm(&dir.join(&mr.image))?;
        let size = manifest.config.grid_size;
        if image.height() != size || image.width() != size {
            return Err(SsbError::Dataset(format!(
                "record {} image is {}x{}, expected {size}x{size}",
                mr.id,
                image.height(),
                image.width()
            )));
        }
        let mut expert_masks = Vec::with_capacity(mr.masks.len());
        for rel in &mr.masks {
            let m = pgm::read_mask_pgm(&dir.join(rel))?;
            image.check_same_shape(&m, "dataset mask")?;
            expert_masks.push(m);
        }
        records.push(LoadedRecord { id: mr.id.clone(), split: mr.split, image, expert_masks });
    }
    Ok(LoadedDataset { config: manifest.config, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> DatasetConfig {
        DatasetConfig { count: 6, grid_size: 32, experts: 4, ambiguity: 0.4, split: 0.75, seed: 3 }
    }

    #[test]
    fn records_are_deterministic() {
        let cfg = small_cfg();
        let a = gen_record(&cfg, 2).unwrap();
        let b = gen_record(&cfg, 2).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.expert_masks, b.expert_masks);
        let c = gen_record(&cfg, 3).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn images_do_not_depend_on_ambiguity() {
        let lo = DatasetConfig { ambiguity: 0.1, ..small_cfg() };
        let hi = DatasetConfig { ambiguity: 0.8, ..small_cfg() };
        for idx in 0..3u64 {
            let a = gen_record(&lo, idx).unwrap();
            let b = gen_record(&hi, idx).unwrap();
            assert_eq!(a.image, b.image, "record {idx}");
            assert_ne!(a.expert_masks, b.expert_masks, "record {idx}");
        }
    }

    #[test]
    fn masks_share_a_core_and_differ_at_high_ambiguity() {
        let cfg = DatasetConfig { ambiguity: 0.8, ..small_cfg() };
        for idx in 0..cfg.count as u64 {
            let rec = gen_record(&cfg, idx).unwrap();
            for m in &rec.expert_masks {
                assert!(m.sum() > 0.0, "record {idx}: empty expert mask");
            }
            // Intersection of all experts is nonempty: the blob core
            // survives the most conservative annotator.
            let mut core = rec.expert_masks[0].clone();
            for m in &rec.expert_masks[1..] {
                core = core.zip_map(m, |a, b| a * b).unwrap();
            }
            assert!(core.sum() > 0.0, "record {idx}: experts share no pixel");
            // At high ambiguity annotators disagree somewhere.
            let all_equal =
                rec.expert_masks.windows(2).all(|w| w[0] == w[1]);
            assert!(!all_equal, "record {idx}: all experts identical");
        }
    }

    #[test]
    fn image_values_stay_in_unit_range() {
        let cfg = small_cfg();
        let rec = gen_record(&cfg, 0).unwrap();
        assert!(rec.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn write_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let manifest = write_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(manifest.records.len(), 6);
        assert_eq!(cfg.train_count(), 4);
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.config, cfg);
        assert_eq!(loaded.split(Split::Train).count(), 4);
        assert_eq!(loaded.split(Split::Test).count(), 2);
        for (lr, idx) in loaded.records.iter().zip(0u64..) {
            let gen = gen_record(&cfg, idx).unwrap();
            assert_eq!(lr.expert_masks, gen.expert_masks);
            // Stored image is the quantized original.
            let q = pgm::image_from_bytes(
                cfg.grid_size,
                cfg.grid_size,
                &pgm::image_to_bytes(&gen.image),
            )
            .unwrap();
            assert_eq!(lr.image, q);
        }
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig { count: 3, ..small_cfg() };
        write_dataset(&cfg, d1.path()).unwrap();
        write_dataset(&cfg, d2.path()).unwrap();
        for rel in ["manifest.json", "img/00001.pgm", "masks/00001_e2.pgm"] {
            let a = std::fs::read(d1.path().join(rel)).unwrap();
            let b = std::fs::read(d2.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel}");
        }
    }

    #[test]
    fn single_expert_dataset_is_valid() {
        let cfg = DatasetConfig { experts: 1, count: 2, ..small_cfg() };
        let rec = gen_record(&cfg, 0).unwrap();
        assert_eq!(rec.expert_masks.len(), 1);
        assert!(rec.expert_masks[0].sum() > 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(DatasetConfig { count: 0, ..small_cfg() }.validate().is_err());
        assert!(DatasetConfig { experts: 0, ..small_cfg() }.validate().is_err());
        assert!(DatasetConfig { ambiguity: 1.5, ..small_cfg() }.validate().is_err());
        assert!(DatasetConfig { split: -0.1, ..small_cfg() }.validate().is_err());
        assert!(DatasetConfig { grid_size: 4, ..small_cfg() }.validate().is_err());
        assert!(gen_record(&small_cfg(), 6).is_err());
    }
}
