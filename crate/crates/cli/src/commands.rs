//! Subcommand definitions and their implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use cashew_core::evalbench::{
    benchmark, budget_check, classification_metrics, features_tsv, render_table, render_tsv,
    ConfusionMatrix, DeviceRow,
};
use cashew_core::graph::{
    build_cashew_net, plan_arena, save_model, to_bytes, CashewNetConfig, ModelGraph,
};
use cashew_core::quantizer::{argmax, calibrate, predict, quantize_model, CalibrationStats};
use cashew_core::spray::{
    aggregate, compare_uniform, grid_covering, grid_from_bounds, parse_detections_file, plan_spray,
    write_detections, DetectionRecord, SprayPolicy,
};
use cashew_core::trainer::{extract_features, install_head, train_head, TrainConfig};
use clap::{Args, Parser, Subcommand};

use crate::image_io::read_ppm;
use crate::synth::{gen_synth, SynthSpec, CLASSES};
use crate::workdir::*;

#[derive(Parser, Debug)]
#[command(
    name = "cashew",
    version,
    about = "Leaf-disease edge inference pipeline"
)]
pub struct Cli {
    /// Directory holding every artifact of the pipeline
    #[arg(long, global = true, default_value = "work")]
    pub workdir: PathBuf,
    /// Seed for every random choice
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic two-class leaf image set
    GenSynth(GenSynthArgs),
    /// Build the network and train its classifier head on frozen features
    TrainHead(TrainArgs),
    /// Record activation ranges of the float model
    Calibrate(CalibrateArgs),
    /// Convert the float model to int8 using the calibration stats
    Quantize,
    /// Classify one PPM image
    Infer(InferArgs),
    /// Confusion matrix and F1 on a dataset split
    Eval(EvalArgs),
    /// Latency, peak RAM and flash of the float and int8 models
    Bench(BenchArgs),
    /// Check a model against flash and RAM budgets
    Budget(BudgetArgs),
    /// Turn geo-tagged detections into a variable-rate spray plan
    PlanSpray(SprayArgs),
    /// Write penultimate features of a dataset split as TSV
    ExportFeatures(FeatureArgs),
}

#[derive(Args, Debug)]
pub struct GenSynthArgs {
    #[arg(long, default_value_t = 300)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 100)]
    pub test_per_class: usize,
    /// Image side in pixels
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub lesions_min: usize,
    #[arg(long, default_value_t = 7)]
    pub lesions_max: usize,
    /// Smallest lesion semi-axis in pixels
    #[arg(long, default_value_t = 6.0)]
    pub lesion_radius_min: f64,
    /// Largest lesion semi-axis in pixels
    #[arg(long, default_value_t = 15.0)]
    pub lesion_radius_max: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Channel width multiplier of the backbone
    #[arg(long, default_value_t = 0.35)]
    pub width_mult: f64,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr_max: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    /// Global gradient-norm bound; 0 disables clipping
    #[arg(long, default_value_t = 5.0)]
    pub clip_norm: f64,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Split whose images calibrate the activation ranges
    #[arg(long, value_enum, default_value_t = Split::Train)]
    pub split: Split,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// P6 PPM image
    pub image: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::Int8)]
    pub model: ModelKind,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value_t = ModelKind::Int8)]
    pub model: ModelKind,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Timed runs per model
    #[arg(long, default_value_t = 30)]
    pub reps: usize,
    /// Discarded runs before timing
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    /// Split used for the accuracy column and the timed image
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
}

#[derive(Args, Debug)]
pub struct BudgetArgs {
    #[arg(long, value_enum, default_value_t = ModelKind::Int8)]
    pub model: ModelKind,
    /// Flash budget in bytes
    #[arg(long, default_value_t = 583_600)]
    pub flash_budget: usize,
    /// RAM budget in bytes
    #[arg(long, default_value_t = 1_600_000)]
    pub ram_budget: usize,
}

#[derive(Args, Debug)]
pub struct SprayArgs {
    /// Detections TSV (lat, lon, label, confidence); defaults to the one eval writes
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Grid cell side in meters
    #[arg(long, default_value_t = 10.0)]
    pub cell_size: f64,
    #[arg(long, default_value_t = 0.2)]
    pub threshold: f64,
    /// Liters per hectare at the threshold
    #[arg(long, default_value_t = 2.0)]
    pub base_rate: f64,
    /// Liters per hectare at full severity
    #[arg(long, default_value_t = 6.0)]
    pub max_rate: f64,
    /// Uniform rate compared against; defaults to the max rate
    #[arg(long)]
    pub uniform_rate: Option<f64>,
    /// Field corners as sw_lat,sw_lon,ne_lat,ne_lon; defaults to the records' extent
    #[arg(long, value_delimiter = ',', num_args = 4)]
    pub bounds: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct FeatureArgs {
    #[arg(long, value_enum, default_value_t = ModelKind::Float32)]
    pub model: ModelKind,
    #[arg(long, value_enum, default_value_t = Split::Train)]
    pub split: Split,
}

pub fn run(cli: Cli) -> Result<()> {
    let wd = Workdir::new(&cli.workdir)?;
    match cli.command {
        Command::GenSynth(a) => cmd_gen_synth(&wd, a, cli.seed),
        Command::TrainHead(a) => cmd_train_head(&wd, a, cli.seed),
        Command::Calibrate(a) => cmd_calibrate(&wd, a),
        Command::Quantize => cmd_quantize(&wd),
        Command::Infer(a) => cmd_infer(&wd, a),
        Command::Eval(a) => cmd_eval(&wd, a),
        Command::Bench(a) => cmd_bench(&wd, a),
        Command::Budget(a) => cmd_budget(&wd, a),
        Command::PlanSpray(a) => cmd_plan_spray(&wd, a),
        Command::ExportFeatures(a) => cmd_export_features(&wd, a),
    }
}

fn class_names() -> Vec<String> {
    CLASSES.iter().map(|c| c.as_str().to_string()).collect()
}

fn cmd_gen_synth(wd: &Workdir, a: GenSynthArgs, seed: u64) -> Result<()> {
    let spec = SynthSpec {
        train_per_class: a.train_per_class,
        test_per_class: a.test_per_class,
        size: a.size,
        lesions: (a.lesions_min, a.lesions_max),
        lesion_radius: (a.lesion_radius_min, a.lesion_radius_max),
        seed,
    };
    let dir = wd.path(SYNTH_DIR);
    let s = gen_synth(&spec, &dir)?;
    println!(
        "wrote {} training and {} test images to {}",
        s.train_images,
        s.test_images,
        dir.display()
    );
    Ok(())
}

fn cmd_train_head(wd: &Workdir, a: TrainArgs, seed: u64) -> Result<()> {
    let train = wd.dataset(Split::Train)?;
    let dims = train.items[0].image.shape().dims().to_vec();
    ensure!(
        dims[1] == dims[2],
        "training images must be square, got {}x{}",
        dims[2],
        dims[1]
    );
    let labels = train.labels();
    let present = labels.iter().max().map_or(0, |m| m + 1);
    ensure!(
        present <= a.classes,
        "dataset has {present} classes but --classes is {}",
        a.classes
    );
    let net = CashewNetConfig {
        width_multiplier: a.width_mult,
        num_classes: a.classes,
        input_size: dims[1],
        seed,
        ..CashewNetConfig::default()
    };
    let mut g = build_cashew_net(&net)?;
    let cfg = TrainConfig {
        total_steps: a.steps,
        lr_max: a.lr_max,
        weight_decay: a.weight_decay,
        clip_norm: (a.clip_norm > 0.0).then_some(a.clip_norm),
        dropout_rate: net.dropout,
        batch_size: a.batch_size,
        hidden_units: net.head_units,
        seed,
        ..TrainConfig::default()
    };

    let images: Vec<_> = train.items.iter().map(|d| d.image.clone()).collect();
    let x = extract_features(&g, &images)?.cast::<f64>();
    let test = wd
        .split_dir(Split::Test)
        .join("manifest.tsv")
        .exists()
        .then(|| wd.dataset(Split::Test))
        .transpose()?;
    let val = match &test {
        Some(t) => {
            let imgs: Vec<_> = t.items.iter().map(|d| d.image.clone()).collect();
            Some((extract_features(&g, &imgs)?.cast::<f64>(), t.labels()))
        }
        None => None,
    };
    let report = train_head(
        &x,
        &labels,
        val.as_ref().map(|(f, l)| (f, l.as_slice())),
        &cfg,
    )?;
    install_head(&mut g, &report)?;
    g.meta.insert("class_names".into(), class_names().join(","));
    save_model(&g, wd.path(MODEL_F32))?;
    wd.write(TRAIN_LOG, report.to_tsv())?;

    let mut s = String::new();
    writeln!(s, "images\t{}", x.rows())?;
    writeln!(s, "feature_dim\t{}", x.dim())?;
    writeln!(s, "steps\t{}", cfg.total_steps)?;
    writeln!(
        s,
        "final_loss\t{:.6}",
        report.losses.last().copied().unwrap_or(f64::NAN)
    )?;
    writeln!(s, "train_accuracy\t{:.4}", report.train_accuracy)?;
    if let Some(v) = report.validation_accuracy {
        writeln!(s, "validation_accuracy\t{v:.4}")?;
    }
    wd.write(TRAIN_SUMMARY, &s)?;
    print!("{s}");
    Ok(())
}

fn cmd_calibrate(wd: &Workdir, a: CalibrateArgs) -> Result<()> {
    let g = wd.model(ModelKind::Float32)?;
    let data = wd.dataset(a.split)?;
    let images: Vec<_> = data.items.iter().map(|d| d.image.clone()).collect();
    let stats = calibrate(&g, &images)?;
    let p = wd.write(CALIBRATION, stats.to_tsv())?;
    println!(
        "calibrated {} tensors over {} images -> {}",
        stats.ranges.len(),
        stats.image_count,
        p.display()
    );
    Ok(())
}

fn cmd_quantize(wd: &Workdir) -> Result<()> {
    let path = wd.path(CALIBRATION);
    if !path.exists() {
        bail!(
            "missing calibration stats: {} not found (run calibrate first)",
            path.display()
        );
    }
    let g = wd.model(ModelKind::Float32)?;
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let stats = CalibrationStats::from_tsv(&text, &path)?;
    let q = quantize_model(&g, &stats)?;
    save_model(&q, wd.path(MODEL_INT8))?;
    let (fb, qb) = (to_bytes(&g).len(), to_bytes(&q).len());
    println!(
        "int8 model {qb} bytes, float32 {fb} bytes, ratio {:.4}",
        qb as f64 / fb as f64
    );
    Ok(())
}

fn names_of(g: &ModelGraph) -> Vec<String> {
    match g.meta.get("class_names") {
        Some(s) => s.split(',').map(str::to_string).collect(),
        None => class_names(),
    }
}

fn cmd_infer(wd: &Workdir, a: InferArgs) -> Result<()> {
    let g = wd.model(a.model)?;
    let img = read_ppm(&a.image)?.to_tensor();
    let probs = predict(&g, &[&img])?.remove(0);
    let names = names_of(&g);
    let best = argmax(&probs);
    println!("label\t{}", names.get(best).map_or("?", String::as_str));
    for (n, p) in names.iter().zip(&probs) {
        println!("p({n})\t{p:.6}");
    }
    Ok(())
}

fn cmd_eval(wd: &Workdir, a: EvalArgs) -> Result<()> {
    let g = wd.model(a.model)?;
    let data = wd.dataset(a.split)?;
    let images: Vec<_> = data.items.iter().map(|d| &d.image).collect();
    let probs = predict(&g, &images)?;
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let names = names_of(&g);
    let mut cm = ConfusionMatrix::new(names.clone())?;
    for (d, &p) in data.items.iter().zip(&preds) {
        cm.record(d.label, p)?;
    }
    let metrics = classification_metrics(&cm);
    let report = format!(
        "model\t{}\nsplit\t{}\nimages\t{}\n\n{}\n{}",
        a.model.as_str(),
        a.split.as_str(),
        cm.total(),
        cm.render(),
        metrics.render(&names)
    );
    wd.write(&format!("eval_{}.txt", a.model.as_str()), &report)?;

    let mut pred_tsv = String::from("file\ttruth\tpredicted\tconfidence\n");
    for ((file, d), (p, pr)) in data
        .files
        .iter()
        .zip(&data.items)
        .zip(preds.iter().zip(&probs))
    {
        writeln!(
            pred_tsv,
            "{file}\t{}\t{}\t{:.6}",
            names[d.label], names[*p], pr[*p]
        )?;
    }
    wd.write(&format!("predictions_{}.tsv", a.model.as_str()), pred_tsv)?;

    let detections = survey_detections(wd, a.split, &data.files, &preds, &probs)?;
    if !detections.is_empty() {
        wd.write(DETECTIONS, write_detections(&detections))?;
    }
    print!("{report}");
    Ok(())
}

/// Pairs predictions with the survey positions of their images.
fn survey_detections(
    wd: &Workdir,
    split: Split,
    files: &[String],
    preds: &[usize],
    probs: &[Vec<f32>],
) -> Result<Vec<DetectionRecord>> {
    let path = wd.path(SURVEY);
    let Ok(text) = fs::read_to_string(&path) else {
        return Ok(Vec::new());
    };
    let mut positions = std::collections::HashMap::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        ensure!(f.len() == 3, "{}: malformed line {line:?}", path.display());
        positions.insert(
            f[0].to_string(),
            (f[1].parse::<f64>()?, f[2].parse::<f64>()?),
        );
    }
    let mut out = Vec::new();
    for ((file, &p), pr) in files.iter().zip(preds).zip(probs) {
        if let Some(&(lat, lon)) = positions.get(&format!("{}/{file}", split.as_str())) {
            let conf = (pr[p] as f64).clamp(0.0, 1.0);
            out.push(DetectionRecord::new(lat, lon, CLASSES[p], conf)?);
        }
    }
    Ok(out)
}

fn accuracy(g: &ModelGraph, images: &[&cashew_core::Tensor32], labels: &[usize]) -> Result<f64> {
    let probs = predict(g, images)?;
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

fn cmd_bench(wd: &Workdir, a: BenchArgs) -> Result<()> {
    let data = wd.dataset(a.split)?;
    let images: Vec<_> = data.items.iter().map(|d| &d.image).collect();
    let labels = data.labels();
    let mut rows = Vec::new();
    for kind in [ModelKind::Int8, ModelKind::Float32] {
        let g = wd.model(kind)?;
        let bench = benchmark(&g, images[0], a.reps, a.warmup)?;
        ensure!(
            bench.label_stable,
            "{} model changed its prediction between runs",
            kind.as_str()
        );
        rows.push(DeviceRow {
            name: kind.as_str().to_string(),
            bench,
            accuracy: Some(accuracy(&g, &images, &labels)?),
        });
    }
    let (q, f) = (&rows[0].bench, &rows[1].bench);
    let mut text = render_table(&rows);
    writeln!(text)?;
    writeln!(
        text,
        "latency ratio int8/float32\t{:.4}",
        q.median.as_secs_f64() / f.median.as_secs_f64()
    )?;
    writeln!(
        text,
        "peak RAM ratio int8/float32\t{:.4}",
        q.arena_bytes as f64 / f.arena_bytes as f64
    )?;
    writeln!(
        text,
        "flash ratio int8/float32\t{:.4}",
        q.model_bytes as f64 / f.model_bytes as f64
    )?;
    wd.write(BENCH_TXT, &text)?;
    wd.write(BENCH_TSV, render_tsv(&rows))?;
    print!("{text}");
    Ok(())
}

fn cmd_budget(wd: &Workdir, a: BudgetArgs) -> Result<()> {
    let g = wd.model(a.model)?;
    let model_bytes = to_bytes(&g).len();
    let arena_bytes = plan_arena(&g)?.total_bytes;
    let check = budget_check(model_bytes, arena_bytes, a.flash_budget, a.ram_budget)?;
    let text = format!(
        "resource\tused_bytes\tbudget_bytes\tmargin\tverdict\n{}",
        check.render(model_bytes, arena_bytes, a.flash_budget, a.ram_budget)
    );
    wd.write(BUDGET, &text)?;
    print!("{text}");
    println!("overall\t{}", if check.passed() { "PASS" } else { "FAIL" });
    Ok(())
}

fn cmd_plan_spray(wd: &Workdir, a: SprayArgs) -> Result<()> {
    let path = a.detections.unwrap_or_else(|| wd.path(DETECTIONS));
    let records = parse_detections_file(&path)
        .with_context(|| format!("reading detections {}", path.display()))?;
    let grid = match a.bounds.as_deref() {
        Some(&[sw_lat, sw_lon, ne_lat, ne_lon]) => {
            grid_from_bounds((sw_lat, sw_lon), (ne_lat, ne_lon), a.cell_size)?
        }
        Some(_) => bail!("--bounds needs four values"),
        None => grid_covering(&records, a.cell_size)?,
    };
    let policy = SprayPolicy {
        threshold: a.threshold,
        base_rate: a.base_rate,
        max_rate: a.max_rate,
    };
    let plan = plan_spray(&aggregate(&records, &grid), policy)?;
    let savings = compare_uniform(&plan, a.uniform_rate.unwrap_or(a.max_rate))?;
    wd.write(SPRAY_PLAN, plan.to_tsv())?;
    wd.write(SPRAY_SAVINGS, savings.to_tsv())?;
    println!(
        "{} records, {}x{} cells of {} m, {} out of bounds",
        records.len(),
        grid.rows,
        grid.cols,
        grid.cell_size_m,
        plan.out_of_bounds
    );
    print!("{}", savings.to_tsv());
    Ok(())
}

fn cmd_export_features(wd: &Workdir, a: FeatureArgs) -> Result<()> {
    let g = wd.model(a.model)?;
    let data = wd.dataset(a.split)?;
    let images: Vec<_> = data.items.iter().map(|d| d.image.clone()).collect();
    let features = extract_features(&g, &images)?;
    let p = wd.write(FEATURES, features_tsv(&features, &data.labels()))?;
    println!(
        "{} rows of {} features -> {}",
        features.rows(),
        features.dim(),
        p.display()
    );
    Ok(())
}
