//! Synthetic crack-like masks and noisy feature maps.
//!
//! Masks are drawn as random-walk polylines with a bounded turning angle,
//! stamped with a square brush of `stroke_width` pixels. Walking stops as
//! soon as the requested foreground fraction is reached, so the achieved
//! ratio overshoots by at most one brush stamp. Feature channel `k`
//! (1-based) is the mask box-blurred with radius `k - 1` plus Gaussian noise.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::format::{read_grid, read_pgm_mask, write_grid, write_pgm_mask};
use crate::grid::{Grid2D, MaskGrid};
use crate::rng::XorShift64Star;

/// Foreground fractions of the three reference crack datasets.
pub const RATIO_PRESETS: [(&str, f64); 3] = [
    ("deepcrack", 0.0505),
    ("crack500", 0.073),
    ("panelcrack", 0.0315),
];

pub const MAX_ATTEMPTS: u64 = 50;
/// Accepted relative deviation of the achieved foreground fraction.
pub const RATIO_TOLERANCE: f64 = 0.3;
const MAX_TURN: f64 = PI / 10.0;
const FEATURE_STREAM: u64 = 0xFEA7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub target_ratio: f64,
    pub stroke_width: usize,
    pub n_curves: usize,
    pub feature_noise: f64,
    pub feature_channels: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            height: 96,
            width: 96,
            target_ratio: 0.05,
            stroke_width: 2,
            n_curves: 3,
            feature_noise: 0.25,
            feature_channels: 2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(param("synthetic image size must be positive"));
        }
        if !(self.target_ratio > 0.0 && self.target_ratio <= 0.2) {
            return Err(param(format!(
                "target_ratio must lie in (0, 0.2], got {}",
                self.target_ratio
            )));
        }
        if self.stroke_width == 0 {
            return Err(param("stroke_width must be >= 1"));
        }
        if self.n_curves == 0 {
            return Err(param("n_curves must be >= 1"));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(param(format!(
                "feature_noise must be >= 0, got {}",
                self.feature_noise
            )));
        }
        if self.feature_channels == 0 {
            return Err(param("feature_channels must be >= 1"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSample {
    pub mask: MaskGrid,
    pub features: Vec<Grid2D>,
}

impl SynthSample {
    pub fn new(mask: MaskGrid, features: Vec<Grid2D>) -> Result<Self> {
        if features.is_empty() {
            return Err(param("a sample needs at least one feature channel"));
        }
        for f in &features {
            crate::grid::check_shape(mask.shape(), f.shape())?;
        }
        Ok(SynthSample { mask, features })
    }
}

struct Canvas {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    covered: usize,
}

impl Canvas {
    fn stamp(&mut self, y: f64, x: f64, brush: usize) {
        let half = (brush as isize - 1) / 2;
        let (cy, cx) = (y.floor() as isize, x.floor() as isize);
        for dy in 0..brush as isize {
            for dx in 0..brush as isize {
                let (r, c) = (cy - half + dy, cx - half + dx);
                if r < 0 || c < 0 || r >= self.height as isize || c >= self.width as isize {
                    continue;
                }
                let idx = r as usize * self.width + c as usize;
                if !self.bits[idx] {
                    self.bits[idx] = true;
                    self.covered += 1;
                }
            }
        }
    }
}

fn walk_attempt(cfg: &SynthConfig, rng: &mut XorShift64Star) -> Canvas {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let n = cfg.height * cfg.width;
    let target = ((cfg.target_ratio * n as f64).round() as usize).max(1);
    let mut canvas = Canvas {
        height: cfg.height,
        width: cfg.width,
        bits: vec![false; n],
        covered: 0,
    };
    for curve in 0..cfg.n_curves {
        // each curve stops at its cumulative share of the target
        let share = target * (curve + 1) / cfg.n_curves;
        let budget = 4 * (target / (cfg.n_curves * cfg.stroke_width) + 1);
        let (mut y, mut x) = (rng.uniform(0.0, h), rng.uniform(0.0, w));
        let mut heading = rng.uniform(0.0, TAU);
        for _ in 0..budget {
            canvas.stamp(y, x, cfg.stroke_width);
            if canvas.covered >= share {
                break;
            }
            heading += rng.uniform(-MAX_TURN, MAX_TURN);
            let (mut ny, mut nx) = (y + heading.sin(), x + heading.cos());
            if ny < 0.0 || ny >= h || nx < 0.0 || nx >= w {
                // bounce back into the image
                heading += PI;
                ny = (y + heading.sin()).clamp(0.0, h - 1e-9);
                nx = (x + heading.cos()).clamp(0.0, w - 1e-9);
            }
            y = ny;
            x = nx;
        }
    }
    canvas
}

/// Rasterizes a crack-like mask whose foreground fraction lies within
/// [`RATIO_TOLERANCE`] of the target. Deterministic in `cfg.seed`.
pub fn generate_mask(cfg: &SynthConfig) -> Result<MaskGrid> {
    cfg.validate()?;
    let n = (cfg.height * cfg.width) as f64;
    let mut last = 0.0;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = XorShift64Star::stream(cfg.seed, attempt);
        let canvas = walk_attempt(cfg, &mut rng);
        let ratio = canvas.covered as f64 / n;
        if (ratio - cfg.target_ratio).abs() <= RATIO_TOLERANCE * cfg.target_ratio {
            return MaskGrid::from_bits(cfg.height, cfg.width, &canvas.bits);
        }
        last = ratio;
    }
    Err(Error::Generation(format!(
        "could not reach foreground ratio {} on a {}x{} image in {MAX_ATTEMPTS} attempts \
         (last {last:.4}); try a larger image, thinner strokes or a different ratio",
        cfg.target_ratio, cfg.height, cfg.width
    )))
}

/// Mean over the `(2r+1)^2` window clipped to the image.
pub fn box_blur(grid: &Grid2D, radius: usize) -> Grid2D {
    if radius == 0 {
        return grid.clone();
    }
    let (h, w) = (grid.height(), grid.width());
    // summed-area table with a zero border
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for r in 0..h {
        for c in 0..w {
            sat[(r + 1) * (w + 1) + c + 1] = grid.get(r, c) + sat[r * (w + 1) + c + 1]
                + sat[(r + 1) * (w + 1) + c]
                - sat[r * (w + 1) + c];
        }
    }
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let (r0, r1) = (r.saturating_sub(radius), (r + radius + 1).min(h));
        for c in 0..w {
            let (c0, c1) = (c.saturating_sub(radius), (c + radius + 1).min(w));
            let sum = sat[r1 * (w + 1) + c1] - sat[r0 * (w + 1) + c1] - sat[r1 * (w + 1) + c0]
                + sat[r0 * (w + 1) + c0];
            out.push(sum / ((r1 - r0) * (c1 - c0)) as f64);
        }
    }
    Grid2D::new(h, w, out).expect("same shape")
}

/// Feature channels for `mask`: channel `k` is `box_blur(mask, k - 1)` plus
/// `N(0, feature_noise^2)` noise.
pub fn generate_features(mask: &MaskGrid, cfg: &SynthConfig) -> Result<SynthSample> {
    cfg.validate()?;
    let mut rng = XorShift64Star::stream(cfg.seed, FEATURE_STREAM);
    let features = (0..cfg.feature_channels)
        .map(|k| {
            let mut ch = box_blur(mask.as_grid(), k);
            for v in ch.data_mut() {
                *v += cfg.feature_noise * rng.normal();
            }
            ch
        })
        .collect();
    SynthSample::new(mask.clone(), features)
}

pub fn generate_sample(cfg: &SynthConfig) -> Result<SynthSample> {
    generate_features(&generate_mask(cfg)?, cfg)
}

/// Seed of sample `index` in a dataset generated from `base`.
pub fn sample_seed(base: u64, index: usize) -> u64 {
    XorShift64Star::stream(base, index as u64).next_u64()
}

/// A dataset recipe: `n_samples` images from `synth`, reseeded per dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub synth: SynthConfig,
    pub n_samples: usize,
}

impl DatasetSpec {
    /// Generates the dataset for `seed` (ignoring `synth.seed`).
    pub fn build(&self, seed: u64) -> Result<Vec<SynthSample>> {
        (0..self.n_samples)
            .map(|i| generate_sample(&self.synth.with_seed(sample_seed(seed, i))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seed: u64,
    pub mask: String,
    pub features: Vec<String>,
    pub achieved_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub config: SynthConfig,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `count` samples (PGM masks, grid-text features) and a manifest into `dir`.
pub fn write_dataset(dir: &Path, cfg: &SynthConfig, count: usize) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let seed = sample_seed(cfg.seed, i);
        let sample = generate_sample(&cfg.with_seed(seed))?;
        let mask_name = format!("mask_{i:04}.pgm");
        write_pgm_mask(&dir.join(&mask_name), &sample.mask)?;
        let mut features = Vec::with_capacity(sample.features.len());
        for (k, f) in sample.features.iter().enumerate() {
            let name = format!("feat_{i:04}_c{}.txt", k + 1);
            write_grid(&dir.join(&name), f)?;
            features.push(name);
        }
        entries.push(ManifestEntry {
            seed,
            mask: mask_name,
            features,
            achieved_ratio: sample.mask.foreground_ratio(),
        });
    }
    let manifest = Manifest {
        schema: "v1".into(),
        config: *cfg,
        entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Loads every sample listed in a manifest; paths resolve against its directory.
pub fn load_manifest(path: &Path) -> Result<Vec<SynthSample>> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    let base: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest
        .entries
        .iter()
        .map(|e| {
            let mask = read_pgm_mask(&base.join(&e.mask))?;
            let features = e
                .features
                .iter()
                .map(|f| read_grid(&base.join(f)))
                .collect::<Result<Vec<_>>>()?;
            SynthSample::new(mask, features)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{binarize, confusion, metrics};

    #[test]
    fn mask_is_deterministic() {
        let cfg = SynthConfig { seed: 17, ..Default::default() };
        assert_eq!(generate_mask(&cfg).unwrap(), generate_mask(&cfg).unwrap());
        let other = SynthConfig { seed: 18, ..cfg };
        assert_ne!(generate_mask(&cfg).unwrap(), generate_mask(&other).unwrap());
    }

    #[test]
    fn ratio_band_at_five_percent() {
        for seed in 0..10 {
            let cfg = SynthConfig { seed, target_ratio: 0.05, ..Default::default() };
            let r = generate_mask(&cfg).unwrap().foreground_ratio();
            assert!((0.035..=0.065).contains(&r), "seed {seed}: {r}");
        }
    }

    #[test]
    fn mean_ratio_over_seeds_at_three_percent() {
        let mean: f64 = (0..20)
            .map(|seed| {
                let cfg = SynthConfig { seed, target_ratio: 0.03, ..Default::default() };
                generate_mask(&cfg).unwrap().foreground_ratio()
            })
            .sum::<f64>()
            / 20.0;
        assert!((mean - 0.03).abs() <= 0.003, "{mean}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = SynthConfig::default();
        for bad in [
            SynthConfig { n_curves: 0, ..base },
            SynthConfig { stroke_width: 0, ..base },
            SynthConfig { target_ratio: 0.0, ..base },
            SynthConfig { target_ratio: 0.25, ..base },
            SynthConfig { feature_channels: 0, ..base },
            SynthConfig { feature_noise: -1.0, ..base },
        ] {
            assert!(matches!(generate_mask(&bad), Err(Error::Param(_))), "{bad:?}");
        }
    }

    #[test]
    fn unreachable_ratio_is_generation_error() {
        // one pixel of a 4x4 image is already 6.25%
        let cfg = SynthConfig { height: 4, width: 4, target_ratio: 0.01, ..Default::default() };
        assert!(matches!(generate_mask(&cfg), Err(Error::Generation(_))));
    }

    #[test]
    fn noise_free_features() {
        let cfg = SynthConfig { feature_noise: 0.0, feature_channels: 3, ..Default::default() };
        let sample = generate_sample(&cfg).unwrap();
        assert_eq!(&sample.features[0], sample.mask.as_grid());
        for ch in &sample.features[1..] {
            assert!(ch.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(ch.data().iter().any(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn box_blur_reference_values() {
        let g = Grid2D::new(3, 3, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let b = box_blur(&g, 1);
        // corner windows hold 4 pixels, edges 6, the centre 9
        assert_eq!(b.get(0, 0), 0.25);
        assert_eq!(b.get(0, 1), 1.0 / 6.0);
        assert_eq!(b.get(1, 1), 1.0 / 9.0);
    }

    #[test]
    fn features_are_bit_identical_on_rerun() {
        let cfg = SynthConfig { seed: 5, ..Default::default() };
        assert_eq!(generate_sample(&cfg).unwrap(), generate_sample(&cfg).unwrap());
    }

    #[test]
    fn channel_one_is_informative() {
        let cfg = SynthConfig { seed: 2, feature_noise: 0.25, ..Default::default() };
        let s = generate_sample(&cfg).unwrap();
        let best = (1..20)
            .map(|i| {
                let pred = binarize(&s.features[0].map(|v| v.clamp(0.0, 1.0)), i as f64 / 20.0).unwrap();
                metrics(&confusion(&pred, &s.mask).unwrap()).iou.unwrap_or(0.0)
            })
            .fold(0.0, f64::max);
        assert!(best > 0.3, "{best}");
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { height: 32, width: 32, seed: 9, ..Default::default() };
        let manifest = write_dataset(dir.path(), &cfg, 3).unwrap();
        assert_eq!(manifest.entries.len(), 3);
        let loaded = load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
        for (entry, sample) in manifest.entries.iter().zip(&loaded) {
            let fresh = generate_sample(&cfg.with_seed(entry.seed)).unwrap();
            assert_eq!(sample, &fresh);
            assert_eq!(entry.achieved_ratio, fresh.mask.foreground_ratio());
        }
    }
}
