//! Seeded synthetic leaf images: green noise texture for healthy leaves,
//! the same texture with dark-brown elliptical lesions for anthracnose.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use cashew_core::spray::{LeafLabel, METERS_PER_DEG_LAT, METERS_PER_DEG_LON, STUDY_SITE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::image_io::{write_ppm, RgbImage};

/// Class order used by every model and report.
pub const CLASSES: [LeafLabel; 2] = [LeafLabel::Anthracnose, LeafLabel::Healthy];

/// Side of a square five-acre field, in meters.
pub const FIELD_SIDE_M: f64 = 142.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub train_per_class: usize,
    /// Held-out images per class; 0 skips the test split.
    pub test_per_class: usize,
    pub size: usize,
    pub lesions: (usize, usize),
    /// Semi-axis range of a lesion, in pixels.
    pub lesion_radius: (f64, f64),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            train_per_class: 300,
            test_per_class: 100,
            size: 96,
            lesions: (3, 7),
            lesion_radius: (6.0, 15.0),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.train_per_class >= 1,
            "need at least one training image per class"
        );
        ensure!(self.size >= 32, "image size must be at least 32 pixels");
        ensure!(
            self.lesions.0 >= 1 && self.lesions.0 <= self.lesions.1,
            "lesion count range must be positive and ordered"
        );
        let (lo, hi) = self.lesion_radius;
        ensure!(
            lo > 0.0 && lo <= hi,
            "lesion radius range must be positive and ordered"
        );
        Ok(())
    }
}

fn image_rng(seed: u64, split: u64, class: usize, index: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&split.to_le_bytes());
    key[16..24].copy_from_slice(&(class as u64).to_le_bytes());
    key[24..].copy_from_slice(&(index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Green leaf texture: per-image tint and brightness, a smooth blotch field
/// and per-pixel noise.
fn leaf_texture(size: usize, bright: f64, rng: &mut impl Rng) -> RgbImage {
    let base = [
        rng.random_range(55.0..70.0) * bright,
        rng.random_range(130.0..155.0) * bright,
        rng.random_range(40.0..55.0) * bright,
    ];
    const COARSE: usize = 9;
    let blotch: Vec<f64> = (0..COARSE * COARSE)
        .map(|_| rng.random_range(-18.0..18.0))
        .collect();
    let mut img = RgbImage::new(size, size);
    let step = (size - 1) as f64 / (COARSE - 1) as f64;
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 / step, y as f64 / step);
            let (ix, iy) = ((fx as usize).min(COARSE - 2), (fy as usize).min(COARSE - 2));
            let (tx, ty) = (fx - ix as f64, fy - iy as f64);
            let at = |i: usize, j: usize| blotch[j * COARSE + i];
            let b = at(ix, iy) * (1.0 - tx) * (1.0 - ty)
                + at(ix + 1, iy) * tx * (1.0 - ty)
                + at(ix, iy + 1) * (1.0 - tx) * ty
                + at(ix + 1, iy + 1) * tx * ty;
            let mut px = [0u8; 3];
            for (c, p) in px.iter_mut().enumerate() {
                *p = clamp_u8(
                    base[c] + b * if c == 1 { 1.0 } else { 0.5 } + rng.random_range(-12.0..12.0),
                );
            }
            img.put(x, y, px);
        }
    }
    img
}

fn add_lesions(img: &mut RgbImage, spec: &SynthSpec, bright: f64, rng: &mut impl Rng) {
    let n = rng.random_range(spec.lesions.0..=spec.lesions.1);
    let size = img.width as f64;
    for _ in 0..n {
        let (cx, cy) = (rng.random_range(0.0..size), rng.random_range(0.0..size));
        let a = rng.random_range(spec.lesion_radius.0..=spec.lesion_radius.1);
        let b = rng.random_range(spec.lesion_radius.0..=spec.lesion_radius.1);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let (s, c) = theta.sin_cos();
        let tone = [
            rng.random_range(80.0..110.0) * bright,
            rng.random_range(48.0..68.0) * bright,
            rng.random_range(20.0..38.0) * bright,
        ];
        let r = a.max(b).ceil();
        let (x0, x1) = (
            (cx - r).max(0.0) as usize,
            ((cx + r).ceil() as usize).min(img.width - 1),
        );
        let (y0, y1) = (
            (cy - r).max(0.0) as usize,
            ((cy + r).ceil() as usize).min(img.height - 1),
        );
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
                let d = (u / a).powi(2) + (v / b).powi(2);
                if d <= 1.0 {
                    // darker core, lighter margin
                    let shade = 0.8 + 0.2 * d;
                    let px =
                        [0, 1, 2].map(|k| clamp_u8(tone[k] * shade + rng.random_range(-8.0..8.0)));
                    img.put(x, y, px);
                }
            }
        }
    }
}

/// One synthetic image of `label`, fully determined by its coordinates.
pub fn synth_image(spec: &SynthSpec, split: u64, label: LeafLabel, index: usize) -> RgbImage {
    let class = CLASSES
        .iter()
        .position(|&c| c == label)
        .expect("known class");
    let mut rng = image_rng(spec.seed, split, class, index);
    // lighting differs between captures and scales leaf and lesions alike
    let bright = rng.random_range(0.9..1.1);
    let mut img = leaf_texture(spec.size, bright, &mut rng);
    if label == LeafLabel::Anthracnose {
        add_lesions(&mut img, spec, bright, &mut rng);
    }
    img
}

/// Survey position of an image: healthy leaves anywhere in the field,
/// diseased leaves concentrated in an outbreak patch.
fn survey_position(seed: u64, label: LeafLabel, index: usize) -> (f64, f64) {
    let mut rng = image_rng(
        seed,
        2,
        if label == LeafLabel::Healthy { 1 } else { 0 },
        index,
    );
    let (east, north) = match label {
        LeafLabel::Healthy => (
            rng.random_range(0.0..FIELD_SIDE_M),
            rng.random_range(0.0..FIELD_SIDE_M),
        ),
        LeafLabel::Anthracnose => {
            let r = 30.0 * rng.random::<f64>().sqrt();
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            (100.0 + r * t.cos(), 100.0 + r * t.sin())
        }
    };
    let lat = STUDY_SITE.0 + north / METERS_PER_DEG_LAT;
    let lon = STUDY_SITE.1 + east / (METERS_PER_DEG_LON * STUDY_SITE.0.to_radians().cos());
    (lat, lon)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthSummary {
    pub train_images: usize,
    pub test_images: usize,
}

fn write_split(
    spec: &SynthSpec,
    root: &Path,
    split: u64,
    per_class: usize,
    survey: Option<&mut String>,
) -> Result<usize> {
    let name = if split == 0 { "train" } else { "test" };
    let dir = root.join(name);
    let mut manifest = String::new();
    let mut jobs = Vec::new();
    for label in CLASSES {
        fs::create_dir_all(dir.join(label.as_str()))
            .with_context(|| format!("creating {}", dir.display()))?;
        for i in 0..per_class {
            let rel = format!("{}/{i:04}.ppm", label.as_str());
            writeln!(manifest, "{rel}\t{label}").expect("string write");
            jobs.push((label, i, rel));
        }
    }
    jobs.par_iter().try_for_each(|(label, i, rel)| {
        write_ppm(&synth_image(spec, split, *label, *i), &dir.join(rel))
    })?;
    if let Some(survey) = survey {
        for (label, i, rel) in &jobs {
            let (lat, lon) = survey_position(spec.seed, *label, *i);
            writeln!(survey, "{name}/{rel}\t{lat}\t{lon}").expect("string write");
        }
    }
    fs::write(dir.join("manifest.tsv"), manifest)
        .with_context(|| format!("writing manifest in {}", dir.display()))?;
    Ok(jobs.len())
}

/// Writes `train/` and `test/` splits with per-class subdirectories and a
/// `manifest.tsv` each, plus `survey.tsv` giving a field position for every
/// image of the held-out split (or of `train/` when there is none).
pub fn gen_synth(spec: &SynthSpec, out_dir: &Path) -> Result<SynthSummary> {
    spec.validate()?;
    let mut survey = String::from("file\tlat\tlon\n");
    let has_test = spec.test_per_class > 0;
    let train = write_split(
        spec,
        out_dir,
        0,
        spec.train_per_class,
        (!has_test).then_some(&mut survey),
    )?;
    let test = if has_test {
        write_split(spec, out_dir, 1, spec.test_per_class, Some(&mut survey))?
    } else {
        0
    };
    fs::write(out_dir.join("survey.tsv"), survey).context("writing survey.tsv")?;
    Ok(SynthSummary {
        train_images: train,
        test_images: test,
    })
}
