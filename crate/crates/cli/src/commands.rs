use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;

use sdped_core::augment::AugmentPlan;
use sdped_core::eval::benchmark_with_ids;
use sdped_core::io::{
    label_stems, load_annotation, load_dataset, load_partition, load_prediction, load_rgb, png_stems, save_label,
    save_prediction, save_rgb, ImageSample,
};
use sdped_core::model::{load_model, save_model};
use sdped_core::{Error, ModelConfig, Result, SdpedModel};

use crate::settings::Settings;

pub const PLAN_FILE: &str = "plan.tsv";

fn put(s: &mut Settings, key: &str, v: Option<impl ToString>) -> Result<()> {
    match v {
        Some(v) => s.set(key, v.to_string()),
        None => Ok(()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

/// Keeps the samples whose id is a listed id, or was derived from one by
/// augmentation (`<id>__...`). Every listed id must match something.
fn select(samples: Vec<ImageSample>, ids: &[String]) -> Result<Vec<ImageSample>> {
    let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let source_of = |id: &str| id.split_once("__").map_or(id, |(s, _)| s).to_string();
    let kept: Vec<ImageSample> = samples
        .into_iter()
        .filter(|s| wanted.contains(s.id.as_str()) || wanted.contains(source_of(&s.id).as_str()))
        .collect();
    let found: BTreeSet<String> = kept.iter().flat_map(|s| [s.id.clone(), source_of(&s.id)]).collect();
    let missing: Vec<&str> = wanted.iter().copied().filter(|id| !found.contains(*id)).collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!("partition ids not in the dataset: {}", missing.join(", "))));
    }
    Ok(kept)
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// Dataset root with images/ and edges/.
    #[arg(long)]
    data: PathBuf,
    /// Output dataset root.
    #[arg(long)]
    out: PathBuf,
    /// Restrict to the train ids of this partition header.
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long)]
    max_side: Option<usize>,
    /// Also add every label as an input of its own.
    #[arg(long)]
    noiseless: bool,
}

pub fn augment(a: AugmentArgs, mut s: Settings) -> Result<()> {
    put(&mut s, "max_side", a.max_side)?;
    if a.noiseless {
        s.set("noiseless", "true")?;
    }
    let mut samples = load_dataset(&a.data)?;
    if let Some(p) = &a.partition {
        samples = select(samples, &load_partition(p)?.train)?;
    }
    let plan = AugmentPlan::for_samples(&samples, s.max_side()?, s.noiseless()?)?;
    let (img_dir, edge_dir) = (a.out.join("images"), a.out.join("edges"));
    create_dir(&img_dir)?;
    create_dir(&edge_dir)?;
    plan.descriptors.par_iter().try_for_each(|d| {
        let pair = d.materialize(&samples)?;
        save_rgb(&pair.image, &img_dir.join(format!("{}.png", pair.id)))?;
        save_label(&pair.target, &edge_dir.join(format!("{}.png", pair.id)))
    })?;
    write_file(&a.out.join(PLAN_FILE), &plan.to_table())?;
    println!("{} derived pairs from {} sources", plan.len(), samples.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset root with images/ and edges/ (typically augment output).
    #[arg(long)]
    data: PathBuf,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Partition header; its train ids select samples and its epoch count
    /// is the default for `epochs`.
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Run log path (default: the model path with a .log extension).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from an existing model instead of a fresh one.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Architecture preset: default or micro.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n_csdb: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    crop: Option<usize>,
}

pub fn train(a: TrainArgs, mut s: Settings) -> Result<()> {
    put(&mut s, "model", a.model.as_deref())?;
    put(&mut s, "n_csdb", a.n_csdb)?;
    put(&mut s, "epochs", a.epochs)?;
    put(&mut s, "lambda", a.lambda)?;
    put(&mut s, "base_lr", a.lr)?;
    put(&mut s, "batch_size", a.batch_size)?;
    put(&mut s, "crop", a.crop)?;
    // Settle config errors before touching the data.
    s.train_config()?;
    if a.init.is_none() {
        s.model_config()?;
    }

    let mut samples = load_dataset(&a.data)?;
    let mut partition_name = None;
    if let Some(p) = &a.partition {
        let manifest = load_partition(p)?;
        if !s.contains("epochs") {
            s.set("epochs", manifest.header.epochs.to_string())?;
        }
        partition_name = Some(manifest.header.name());
        samples = select(samples, &manifest.train)?;
    }
    let cfg = s.train_config()?;
    let mut model = match &a.init {
        Some(path) => load_model(path)?,
        None => SdpedModel::build(s.model_config()?, cfg.seed)?,
    };

    let mut log = sdped_core::train::train(&mut model, &samples, &cfg)?;
    log.header.push(("data".into(), a.data.display().to_string()));
    if let Some(name) = partition_name {
        log.header.push(("partition".into(), name));
    }
    if let Some(init) = &a.init {
        log.header.push(("init".into(), init.display().to_string()));
    }
    log.header.extend(model_entries(model.config()));

    save_model(&model, &a.out)?;
    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("log"));
    write_file(&log_path, &log.to_text())?;
    if let Some(last) = log.records.last() {
        println!("trained {} epochs, final mean loss {:.6}", log.records.len(), last.mean_loss);
    } else {
        println!("no epochs run; wrote the initial model");
    }
    Ok(())
}

fn model_entries(c: &ModelConfig) -> Vec<(String, String)> {
    let f = c.fuse_channels;
    [
        ("n_csdb", c.n_csdb.to_string()),
        ("in_channels", c.in_channels.to_string()),
        ("stem_channels", c.stem_channels.to_string()),
        ("growth", c.growth.to_string()),
        ("trunk_channels", c.trunk_channels.to_string()),
        ("side_channels", c.side_channels.to_string()),
        ("fuse_channels", format!("{},{},{}", f[0], f[1], f[2])),
        ("leaky_slope", c.leaky_slope.to_string()),
        ("ablation_no_skipping", c.ablation_no_skipping.to_string()),
        ("ablation_single_fuse", c.ablation_single_fuse.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory of input PNGs.
    #[arg(long)]
    images: PathBuf,
    /// Directory for the prediction PNGs (same stems).
    #[arg(long)]
    out: PathBuf,
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let stems: Vec<String> = png_stems(&a.images)?.into_iter().collect();
    if stems.is_empty() {
        log::warn!("no PNG files in {}", a.images.display());
        return Ok(());
    }
    create_dir(&a.out)?;
    let failures: Vec<String> = stems
        .par_iter()
        .filter_map(|stem| {
            let run = || -> Result<()> {
                let image = load_rgb(&a.images.join(format!("{stem}.png")))?;
                let pred = model.forward(&image)?;
                save_prediction(&pred, &a.out.join(format!("{stem}.png")))
            };
            run().err().map(|e| {
                eprintln!("{stem}: {e}");
                stem.clone()
            })
        })
        .collect();
    println!("{} of {} images predicted", stems.len() - failures.len(), stems.len());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(format!("{} images failed: {}", failures.len(), failures.join(", "))))
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of prediction PNGs.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of labels, `<stem>.png` or `<stem>/` with several annotations.
    #[arg(long)]
    gt: PathBuf,
    /// JSON report path.
    #[arg(long)]
    report: PathBuf,
    /// PR-curve table path (default: the report path with a .tsv extension).
    #[arg(long)]
    curve: Option<PathBuf>,
    /// ratio (fraction of the diagonal) or pixels.
    #[arg(long)]
    tol_mode: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    /// Dataset preset: brind, mdbd, biped or uded.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    thresholds: Option<usize>,
    /// Match raw binarized predictions without thinning.
    #[arg(long)]
    no_thin: bool,
}

pub fn eval(a: EvalArgs, mut s: Settings) -> Result<()> {
    put(&mut s, "tol_mode", a.tol_mode.as_deref())?;
    put(&mut s, "tol", a.tol)?;
    put(&mut s, "tol_preset", a.preset.as_deref())?;
    put(&mut s, "n_thresholds", a.thresholds)?;
    if a.no_thin {
        s.set("thin", "false")?;
    }
    let tolerance = s.tolerance()?;
    let opts = s.bench_options()?;

    let pred_stems = png_stems(&a.pred)?;
    let gt_stems = label_stems(&a.gt)?;
    if pred_stems != gt_stems {
        let only_pred: Vec<_> = pred_stems.difference(&gt_stems).cloned().collect();
        let only_gt: Vec<_> = gt_stems.difference(&pred_stems).cloned().collect();
        return Err(Error::Data(format!(
            "prediction and ground-truth stems differ; without ground truth: [{}]; without prediction: [{}]",
            only_pred.join(", "),
            only_gt.join(", ")
        )));
    }
    let ids: Vec<String> = pred_stems.into_iter().collect();
    let loaded: Vec<_> = ids
        .par_iter()
        .map(|id| Ok((load_prediction(&a.pred.join(format!("{id}.png")))?, load_annotation(&a.gt, id)?)))
        .collect::<Result<_>>()?;
    let (preds, gts): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();

    let report = benchmark_with_ids(&ids, &preds, &gts, tolerance, &opts)?;
    write_file(&a.report, &report.to_json())?;
    let curve = a.curve.unwrap_or_else(|| a.report.with_extension("tsv"));
    write_file(&curve, &report.curve_tsv())?;
    println!("{}", report.summary());
    Ok(())
}

#[derive(Args, Debug)]
pub struct InfoArgs {
    #[arg(long)]
    model: PathBuf,
}

pub fn info(a: InfoArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    for (k, v) in model_entries(model.config()) {
        println!("{k}: {v}");
    }
    println!("param_count: {}", model.param_count());
    Ok(())
}
