use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use leuko_core::classify::{cross_validate, evaluate, nb_predict, samples_from_rows, Model, ModelKind};
use leuko_core::config::PipelineConfig;
use leuko_core::features::{read_feature_csv, write_feature_csv};
use leuko_core::io::{read_image, read_label_map, write_image, write_label_map, write_mask};
use leuko_core::kmeans::{FeatureSpace, KMeansConfig};
use leuko_core::metrics::{compare_segmenters, comparison_csv, evaluate as evaluate_seg, GroundTruthSet};
use leuko_core::overlap::Separation;
use leuko_core::pipeline::{load_model, run_pipeline};
use leuko_core::preprocess::preprocess;
use leuko_core::segment::{darkest_green_cluster, segment_image};
use leuko_core::synth::{make_corpus, write_corpus};

/// Leukemia screening on blood-smear images.
#[derive(Parser)]
#[command(name = "leuko", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Denoise, enhance and binarize one image.
    Preprocess(PreprocessArgs),
    /// Cluster the pixels of one image with k-means.
    Segment(SegmentArgs),
    /// Score a segmentation against one or more ground truths.
    EvaluateSeg(EvaluateSegArgs),
    /// Compare the three k-means variants against ground truths (CSV).
    Compare(CompareArgs),
    /// Extract per-cell features from a directory of images.
    Features(FeaturesArgs),
    /// Train a classifier on a labelled feature table.
    Train(TrainArgs),
    /// Apply a trained classifier to a feature table.
    Classify(ClassifyArgs),
    /// Cross-validate both classifiers, or score a trained model.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic smear corpus with ground truth.
    Synth(SynthArgs),
    /// Run the full pipeline over a batch of images.
    Pipeline(PipelineArgs),
}

/// Configuration layering shared by the image-processing subcommands.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat `section.key = value` configuration file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set kmeans.k=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Default)]
struct StageFlags {
    #[arg(long)]
    wiener_window: Option<usize>,
    #[arg(long)]
    median_window: Option<usize>,
    #[arg(long)]
    clahe_tiles: Option<usize>,
    #[arg(long)]
    clahe_clip: Option<f64>,
    /// Binarization threshold (foreground strictly below).
    #[arg(long)]
    threshold: Option<u16>,
    #[arg(long)]
    min_area: Option<usize>,
    #[arg(long)]
    max_area_factor: Option<f64>,
    /// Keep regions touching the image border.
    #[arg(long)]
    keep_border: bool,
    #[arg(long)]
    roundness_threshold: Option<f64>,
    #[arg(long)]
    solidity_threshold: Option<f64>,
    #[arg(long)]
    separation: Option<Separation>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    space: Option<FeatureSpace>,
    #[arg(long)]
    kmeans_seed: Option<u64>,
}

fn push<T: ToString>(out: &mut Vec<(String, String)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        out.push((key.to_string(), v.to_string()));
    }
}

impl StageFlags {
    fn overrides(&self, out: &mut Vec<(String, String)>) {
        push(out, "preprocess.wiener_window", self.wiener_window);
        push(out, "preprocess.median_window", self.median_window);
        push(out, "preprocess.clahe_tiles", self.clahe_tiles);
        push(out, "preprocess.clahe_clip", self.clahe_clip);
        push(out, "preprocess.binarize_threshold", self.threshold);
        push(out, "clean.min_area", self.min_area);
        push(out, "clean.max_area_factor", self.max_area_factor);
        if self.keep_border {
            push(out, "clean.remove_border", Some(false));
        }
        push(out, "overlap.roundness_threshold", self.roundness_threshold);
        push(out, "overlap.solidity_threshold", self.solidity_threshold);
        push(out, "overlap.separation", self.separation.map(|s| format!("{s:?}").to_lowercase()));
        push(out, "kmeans.k", self.k);
        push(out, "kmeans.feature_space", self.space.map(|s| s.name()));
        push(out, "kmeans.seed", self.kmeans_seed);
    }
}

/// Defaults < config file < `--set` pairs < dedicated flags.
fn resolve(cfg: &ConfigArgs, mut flags: Vec<(String, String)>) -> Result<PipelineConfig> {
    let text = match &cfg.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|source| leuko_core::Error::Io {
            path: p.clone(),
            source,
        })?),
        None => None,
    };
    let mut pairs = Vec::new();
    for s in &cfg.set {
        let (k, v) = s.split_once('=').ok_or_else(|| leuko_core::Error::Config {
            key: s.clone(),
            message: "expected KEY=VALUE".into(),
        })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    push(&mut pairs, "workers", cfg.workers);
    push(&mut pairs, "seed", cfg.seed);
    pairs.append(&mut flags);
    Ok(PipelineConfig::resolve(text.as_deref(), &pairs)?)
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    stages: StageFlags,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    stages: StageFlags,
}

#[derive(Args)]
struct EvaluateSegArgs {
    /// Segmentation label map (PNG).
    #[arg(long)]
    test: PathBuf,
    /// Ground-truth label map; repeat for several.
    #[arg(long, required = true)]
    truth: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, required = true)]
    truth: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Image file or directory (a corpus manifest supplies labels).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Write nested JSON instead of CSV.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    stages: StageFlags,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value = "knn")]
    model: ModelKind,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Labelled feature table.
    #[arg(long)]
    features: PathBuf,
    /// Score this trained model instead of cross-validating.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 60)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    benign_fraction: Option<f64>,
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    overlap_probability: Option<f64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trained model applied to every cell.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Write numbered intermediate images per input.
    #[arg(long)]
    dump_stages: bool,
    /// Write inputs with segment outlines drawn on them.
    #[arg(long)]
    overlays: bool,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    stages: StageFlags,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| leuko_core::Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| leuko_core::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path).map_err(|source| leuko_core::Error::Io {
        path: path.to_path_buf(),
        source,
    })?)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| leuko_core::Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<()> {
    let mut flags = Vec::new();
    a.stages.overrides(&mut flags);
    let cfg = resolve(&a.config, flags)?;
    let img = read_image(&a.input)?;
    let pre = preprocess(&img, &cfg.preprocess)?;
    ensure_dir(&a.out)?;
    write_image(&pre.gray, a.out.join("gray.png"))?;
    write_image(&pre.denoised, a.out.join("denoised.png"))?;
    write_image(&pre.enhanced, a.out.join("enhanced.png"))?;
    write_mask(&pre.mask, a.out.join("mask.png"))?;
    println!("foreground pixels: {}", pre.mask.count());
    Ok(())
}

fn cmd_segment(a: SegmentArgs) -> Result<()> {
    let mut flags = Vec::new();
    // `--seed` here means the clustering seed.
    push(&mut flags, "kmeans.seed", a.config.seed);
    a.stages.overrides(&mut flags);
    let cfg = resolve(&a.config, flags)?;
    let img = read_image(&a.input)?;
    let result = segment_image(&img, &cfg.kmeans)?;
    ensure_dir(&a.out)?;
    write_label_map(&result.assignments, a.out.join("assignments.png"))?;
    for j in 0..result.k() {
        write_mask(&result.cluster_mask(j), a.out.join(format!("cluster_{}.png", j + 1)))?;
    }
    let nucleus = (!img.is_gray()).then(|| darkest_green_cluster(&result, &img)).transpose()?;
    if let Some(j) = nucleus {
        write_mask(&result.cluster_mask(j), a.out.join("nucleus.png"))?;
    }
    let summary = serde_json::json!({
        "k": result.k(),
        "feature_space": cfg.kmeans.feature_space,
        "seed": cfg.kmeans.seed,
        "centroids": result.centroids,
        "inertia": result.inertia,
        "iterations": result.iterations,
        "inertia_history": result.inertia_history,
        "nucleus_cluster": nucleus.map(|j| j + 1),
    });
    write_text(&a.out.join("summary.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    println!("{} clusters, {} iterations, inertia {:.4}", result.k(), result.iterations, result.inertia);
    Ok(())
}

fn load_truths(paths: &[PathBuf]) -> Result<GroundTruthSet> {
    let maps = paths.iter().map(read_label_map).collect::<leuko_core::Result<Vec<_>>>()?;
    Ok(GroundTruthSet::new(maps)?)
}

fn cmd_evaluate_seg(a: EvaluateSegArgs) -> Result<()> {
    let test = read_label_map(&a.test)?;
    let report = evaluate_seg(&test, &load_truths(&a.truth)?)?;
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let img = read_image(&a.input)?;
    let truths = load_truths(&a.truth)?;
    let configs: Vec<KMeansConfig> = [FeatureSpace::Color, FeatureSpace::Intensity, FeatureSpace::Texture]
        .into_iter()
        .map(|feature_space| KMeansConfig {
            k: a.k,
            feature_space,
            seed: a.seed,
            ..KMeansConfig::default()
        })
        .collect();
    let rows = compare_segmenters(&img, &truths, &configs)?;
    emit(a.out.as_deref(), &comparison_csv(&rows))
}

fn cmd_features(a: FeaturesArgs) -> Result<()> {
    let mut flags = vec![("input".to_string(), a.input.display().to_string())];
    a.stages.overrides(&mut flags);
    let cfg = resolve(&a.config, flags)?;
    let run = run_pipeline(&cfg)?;
    let rows = run.report.feature_rows();
    let text = if a.json {
        let items: Vec<serde_json::Value> = rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "source_id": r.source_id,
                    "label": r.label,
                    "features": r.features.to_grouped_json(),
                })
            })
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({
            "schema": leuko_core::features::SCHEMA_VERSION,
            "cells": items,
        }))? + "\n"
    } else {
        write_feature_csv(&rows)
    };
    write_text(&a.out, &text)?;
    println!("{} cells from {} images", rows.len(), run.report.images.len());
    Ok(())
}

fn load_samples(path: &Path) -> Result<Vec<leuko_core::classify::LabeledSample>> {
    let rows = read_feature_csv(&read_text(path)?)?;
    samples_from_rows(&rows).with_context(|| format!("{}: training needs labelled rows", path.display()))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let samples = load_samples(&a.features)?;
    let model = Model::train(a.model, &samples, a.k)?;
    write_text(&a.out, &(model.to_json()? + "\n"))?;
    println!("trained {} on {} samples", format!("{:?}", a.model).to_lowercase(), samples.len());
    Ok(())
}

fn cmd_classify(a: ClassifyArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let rows = read_feature_csv(&read_text(&a.features)?)?;
    let mut out = String::from("source_id,prediction,posterior_malignant\n");
    for row in &rows {
        let label = model.predict(&row.features);
        let posterior = match &model {
            Model::NaiveBayes(nb) => format!("{:.6}", nb_predict(nb, &row.features).posterior_malignant),
            Model::Knn(_) => String::new(),
        };
        out.push_str(&format!("{},{},{}\n", row.source_id, label, posterior));
    }
    emit(a.out.as_deref(), &out)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let samples = load_samples(&a.features)?;
    let json = if let Some(model_path) = &a.model {
        let model = load_model(model_path)?;
        let (cm, metrics) = evaluate(&model, &samples)?;
        eprintln!(
            "accuracy {:.4}  sensitivity {}  specificity {}",
            metrics.accuracy, metrics.sensitivity, metrics.specificity
        );
        serde_json::json!({ "confusion": cm, "metrics": metrics })
    } else {
        let report = cross_validate(&samples, a.folds, a.seed, a.k)?;
        eprintln!(
            "kNN accuracy {:.4} ± {:.4}  NB accuracy {:.4} ± {:.4}",
            report.knn.accuracy.mean, report.knn.accuracy.std, report.nb.accuracy.mean, report.nb.accuracy.std
        );
        serde_json::to_value(&report)?
    };
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&json)? + "\n"))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut flags = Vec::new();
    push(&mut flags, "synth.benign_fraction", a.benign_fraction);
    push(&mut flags, "synth.cell_count", a.cells);
    push(&mut flags, "synth.overlap_probability", a.overlap_probability);
    push(&mut flags, "synth.width", a.width);
    push(&mut flags, "synth.height", a.height);
    let cfg = resolve(&a.config, flags)?;
    let items = make_corpus(a.n, &cfg.synth, cfg.seed)?;
    write_corpus(&items, &a.out)?;
    println!("wrote {} images to {}", items.len(), a.out.display());
    Ok(())
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let mut flags = Vec::new();
    push(&mut flags, "input", a.input.as_ref().map(|p| p.display()));
    push(&mut flags, "output", a.out.as_ref().map(|p| p.display()));
    push(&mut flags, "classify.model_path", a.model.as_ref().map(|p| p.display()));
    if a.dump_stages {
        push(&mut flags, "dump_stages", Some(true));
    }
    if a.overlays {
        push(&mut flags, "overlays", Some(true));
    }
    a.stages.overrides(&mut flags);
    let cfg = resolve(&a.config, flags)?;
    if a.print_config {
        print!("{}", cfg.to_kv_string());
        return Ok(());
    }
    let run = run_pipeline(&cfg)?;
    let s = &run.report.summary;
    println!(
        "{} images, {} cells ({} skipped); regions: {} single, {} grouped, {} removed",
        s.images, s.cells, s.skipped_cells, s.single_regions, s.grouped_regions, s.removed_regions
    );
    if let Some(m) = &s.metrics {
        println!("accuracy {:.4}  sensitivity {}  specificity {}", m.accuracy, m.sensitivity, m.specificity);
    }
    if cfg.output.is_none() {
        print!("{}", run.report.to_json()?);
    }
    Ok(())
}

/// The error chain joined with `: `, dropping links already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for link in e.chain().map(|c| c.to_string()) {
        if !out.ends_with(&link) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&link);
        }
    }
    out
}

fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<leuko_core::Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Segment(a) => cmd_segment(a),
        Command::EvaluateSeg(a) => cmd_evaluate_seg(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Features(a) => cmd_features(a),
        Command::Train(a) => cmd_train(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
