//! Fixed file layout of a pipeline work directory and dataset loading.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cashew_core::graph::{load_model, ModelGraph};
use cashew_core::quantizer::LabeledImage;
use cashew_core::spray::LeafLabel;
use rayon::prelude::*;

use crate::image_io::read_ppm;
use crate::synth::CLASSES;

pub const SYNTH_DIR: &str = "synth";
pub const SURVEY: &str = "synth/survey.tsv";
pub const MODEL_F32: &str = "model_float32.cshw";
pub const MODEL_INT8: &str = "model_int8.cshw";
pub const TRAIN_LOG: &str = "train_log.tsv";
pub const TRAIN_SUMMARY: &str = "train_summary.txt";
pub const CALIBRATION: &str = "calibration.tsv";
pub const DETECTIONS: &str = "detections.tsv";
pub const BENCH_TXT: &str = "bench.txt";
pub const BENCH_TSV: &str = "bench.tsv";
pub const BUDGET: &str = "budget.tsv";
pub const SPRAY_PLAN: &str = "spray_plan.tsv";
pub const SPRAY_SAVINGS: &str = "spray_savings.tsv";
pub const FEATURES: &str = "features.tsv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelKind {
    Float32,
    Int8,
}

impl ModelKind {
    pub fn file(self) -> &'static str {
        match self {
            ModelKind::Float32 => MODEL_F32,
            ModelKind::Int8 => MODEL_INT8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Float32 => "float32",
            ModelKind::Int8 => "int8",
        }
    }
}

pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)
            .with_context(|| format!("creating work directory {}", root.display()))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    pub fn model(&self, kind: ModelKind) -> Result<ModelGraph> {
        let p = self.path(kind.file());
        if !p.exists() {
            let hint = match kind {
                ModelKind::Float32 => "run train-head first",
                ModelKind::Int8 => "run calibrate and quantize first",
            };
            bail!("missing {} model {} ({hint})", kind.as_str(), p.display());
        }
        load_model(&p).with_context(|| format!("loading {}", p.display()))
    }

    pub fn split_dir(&self, split: Split) -> PathBuf {
        self.root.join(SYNTH_DIR).join(split.as_str())
    }

    pub fn dataset(&self, split: Split) -> Result<Dataset> {
        Dataset::load(&self.split_dir(split))
    }
}

pub fn class_index(label: LeafLabel) -> usize {
    CLASSES
        .iter()
        .position(|&c| c == label)
        .expect("known class")
}

/// Images listed in a `manifest.tsv` (`file<TAB>label`, paths relative to
/// the manifest), in manifest order.
pub struct Dataset {
    pub files: Vec<String>,
    pub items: Vec<LabeledImage>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = dir.join("manifest.tsv");
        let text = fs::read_to_string(&manifest)
            .with_context(|| format!("reading {} (run gen-synth first)", manifest.display()))?;
        let mut entries = Vec::new();
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let Some((file, label)) = line.split_once('\t') else {
                bail!("{}:{}: expected file<TAB>label", manifest.display(), i + 1);
            };
            let label: LeafLabel = label
                .parse()
                .with_context(|| format!("{}:{}", manifest.display(), i + 1))?;
            entries.push((file.to_string(), class_index(label)));
        }
        if entries.is_empty() {
            bail!("{} lists no images", manifest.display());
        }
        let items = entries
            .par_iter()
            .map(|(file, label)| {
                Ok(LabeledImage {
                    image: read_ppm(&dir.join(file))?.to_tensor(),
                    label: *label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            files: entries.into_iter().map(|(f, _)| f).collect(),
            items,
        })
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|d| d.label).collect()
    }
}
