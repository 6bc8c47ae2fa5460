//! End-to-end driver: enhancement, binarization, cleaning, overlap handling,
//! nucleus clustering, cropping, features and optional classification, run
//! over a batch of images on a bounded worker pool.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::classify::{ConfusionMatrix, Label, Metrics, Model};
use crate::clean::{clean_labels, morphological_open_close};
use crate::config::PipelineConfig;
use crate::error::{io_err, Error, Result};
use crate::features::{extract_feature_vector, write_feature_csv, FeatureRow, FeatureVector};
use crate::io::{read_image, write_image, write_label_map, write_mask};
use crate::overlap::{classify_single_vs_grouped, separate_grouped, RegionAssessment};
use crate::preprocess::preprocess;
use crate::raster::{connected_components, BinaryMask, Connectivity, LabelMap, RasterImage};
use crate::region::{extract_regions, BoundingBox};
use crate::segment::{crop_cells, darkest_green_cluster, segment_image};
use crate::synth::{read_manifest, MANIFEST_FILE};

pub const TOOL_NAME: &str = "leuko";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub id: u32,
    pub source_id: String,
    pub bounding_box: BoundingBox,
    /// (row, col) in the source image.
    pub centroid: (f64, f64),
    pub area: usize,
    pub nucleus_area: usize,
    pub features: FeatureVector,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Label>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkippedCell {
    pub id: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterSummary {
    pub iterations: usize,
    pub inertia: f64,
    pub nucleus_cluster: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageReport {
    pub file: String,
    pub width: usize,
    pub height: usize,
    /// Known class of the image (from a corpus manifest).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    /// Roundness, solidity and disposition of every cleaned region.
    pub regions: Vec<RegionAssessment>,
    pub clustering: ClusterSummary,
    pub cells: Vec<CellReport>,
    pub skipped: Vec<SkippedCell>,
}

/// Intermediate images kept for `dump_stages` and overlays.
#[derive(Debug, Clone)]
pub struct Stages {
    pub gray: RasterImage,
    pub denoised: RasterImage,
    pub enhanced: RasterImage,
    pub binary: BinaryMask,
    pub morph: BinaryMask,
    pub cleaned: LabelMap,
    pub leucocytes: LabelMap,
    pub clusters: Vec<BinaryMask>,
    pub nucleus: BinaryMask,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub ms: f64,
}

#[derive(Debug, Clone)]
pub struct ImageResult {
    pub report: ImageReport,
    pub timings: Vec<StageTiming>,
    pub stages: Option<Stages>,
}

struct Clock {
    last: Instant,
    timings: Vec<StageTiming>,
}

impl Clock {
    fn new() -> Self {
        Self {
            last: Instant::now(),
            timings: Vec::new(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage,
            ms: (now - self.last).as_secs_f64() * 1e3,
        });
        self.last = now;
    }
}

fn as_rgb(img: &RasterImage) -> RasterImage {
    if img.is_gray() {
        RasterImage::from_rgb_fn(img.width(), img.height(), |r, c| {
            let v = img.get(r, c, 0);
            [v, v, v]
        })
        .expect("same dims")
    } else {
        img.clone()
    }
}

/// Single leucocytes plus the watershed pieces of grouped ones, as one
/// canonical label map. Pieces smaller than the clean min-area are dropped.
fn leucocyte_labels(cleaned: &LabelMap, cfg: &PipelineConfig) -> (LabelMap, Vec<RegionAssessment>) {
    let (w, h) = cleaned.dims();
    let partition = classify_single_vs_grouped(extract_regions(cleaned), &cfg.overlap);
    let mut out = LabelMap::zeros(w, h).expect("non-empty dims");
    let mut next = 1;
    for region in &partition.singles {
        for &(r, c) in &region.pixels {
            out.set(r, c, next);
        }
        next += 1;
    }
    if !partition.grouped.is_empty() {
        let mut grouped = BinaryMask::empty(w, h).expect("non-empty dims");
        for region in &partition.grouped {
            for &(r, c) in &region.pixels {
                grouped.set(r, c, true);
            }
        }
        let mut single_areas: Vec<f64> = partition.singles.iter().map(|r| r.area as f64).collect();
        single_areas.sort_by(f64::total_cmp);
        let reference = (!single_areas.is_empty()).then(|| {
            let n = single_areas.len();
            if n % 2 == 1 {
                single_areas[n / 2]
            } else {
                (single_areas[n / 2 - 1] + single_areas[n / 2]) / 2.0
            }
        });
        let pieces = separate_grouped(&grouped, &cfg.overlap, reference);
        for region in extract_regions(&pieces) {
            if region.area < cfg.clean.min_area {
                continue;
            }
            for &(r, c) in &region.pixels {
                out.set(r, c, next);
            }
            next += 1;
        }
    }
    (out.canonicalize(), partition.assessments)
}

/// Runs every stage on one image. `file` names the image in the report and
/// prefixes cell source ids.
pub fn analyze_image(
    file: &str,
    img: &RasterImage,
    label: Option<Label>,
    cfg: &PipelineConfig,
    model: Option<&Model>,
    keep_stages: bool,
) -> Result<ImageResult> {
    let mut clock = Clock::new();
    let pre = preprocess(img, &cfg.preprocess)?;
    clock.lap("preprocess");
    let morph = if cfg.clean.morph_radius > 0 {
        morphological_open_close(&pre.mask, cfg.clean.morph_radius)?
    } else {
        pre.mask.clone()
    };
    let components = connected_components(&morph, Connectivity::Eight);
    let cleaned = clean_labels(&components, &cfg.clean)?;
    clock.lap("clean");
    let (leucocytes, regions) = leucocyte_labels(&cleaned, cfg);
    clock.lap("overlap");
    let rgb = as_rgb(img);
    let clusters = segment_image(&rgb, &cfg.kmeans)?;
    let nucleus_cluster = darkest_green_cluster(&clusters, &rgb)?;
    let nucleus = clusters.cluster_mask(nucleus_cluster);
    clock.lap("kmeans");
    let crops = crop_cells(&rgb, &leucocytes, &nucleus)?;
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for crop in &crops {
        let id = crop.source_region.label;
        match extract_feature_vector(crop, &cfg.features) {
            Ok(features) => cells.push(CellReport {
                id,
                source_id: format!("{file}#{id}"),
                bounding_box: crop.source_region.bounding_box,
                centroid: crop.source_region.centroid,
                area: crop.source_region.area,
                nucleus_area: crop.nucleus_mask.count(),
                features,
                prediction: model.map(|m| m.predict(&features)),
            }),
            Err(e) => skipped.push(SkippedCell {
                id,
                reason: e.to_string(),
            }),
        }
    }
    clock.lap("features");
    let stages = keep_stages.then(|| Stages {
        gray: pre.gray.clone(),
        denoised: pre.denoised.clone(),
        enhanced: pre.enhanced.clone(),
        binary: pre.mask.clone(),
        morph: morph.clone(),
        cleaned: cleaned.clone(),
        leucocytes: leucocytes.clone(),
        clusters: (0..clusters.k()).map(|j| clusters.cluster_mask(j)).collect(),
        nucleus: nucleus.clone(),
    });
    Ok(ImageResult {
        report: ImageReport {
            file: file.to_string(),
            width: img.width(),
            height: img.height(),
            label,
            regions,
            clustering: ClusterSummary {
                iterations: clusters.iterations,
                inertia: clusters.inertia,
                nucleus_cluster: nucleus_cluster + 1,
            },
            cells,
            skipped,
        },
        timings: clock.timings,
        stages,
    })
}

/// One input image and its known class, if any.
#[derive(Debug, Clone)]
pub struct InputImage {
    pub path: PathBuf,
    pub name: String,
    pub label: Option<Label>,
}

fn is_image_file(p: &Path) -> bool {
    let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    matches!(ext.as_deref(), Some("png" | "pgm" | "ppm" | "pnm")) && !stem.ends_with("_labels") && !stem.ends_with("_classes")
}

/// Lists the images under `path`: a single file, the entries of a corpus
/// manifest, or every image in a directory (truth maps excluded), sorted.
pub fn list_inputs(path: impl AsRef<Path>) -> Result<Vec<InputImage>> {
    let path = path.as_ref();
    let meta = fs::metadata(path).map_err(io_err(path))?;
    if meta.is_file() {
        return Ok(vec![InputImage {
            path: path.to_path_buf(),
            name: path.file_name().and_then(|n| n.to_str()).unwrap_or("input").to_string(),
            label: None,
        }]);
    }
    if path.join(MANIFEST_FILE).is_file() {
        let entries = read_manifest(path)?;
        if entries.is_empty() {
            return Err(Error::EmptyInput(path.to_path_buf()));
        }
        return Ok(entries
            .into_iter()
            .map(|e| InputImage {
                path: path.join(&e.file),
                name: e.file,
                label: Some(e.label),
            })
            .collect());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    Ok(files
        .into_iter()
        .map(|p| InputImage {
            name: p.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string(),
            path: p,
            label: None,
        })
        .collect())
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Summary {
    pub images: usize,
    pub cells: usize,
    pub skipped_cells: usize,
    pub single_regions: usize,
    pub grouped_regions: usize,
    pub removed_regions: usize,
    pub predicted_benign: usize,
    pub predicted_malignant: usize,
    /// Per-cell predictions scored against the image classes, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
}

/// Self-contained run record. Timings are kept apart so that the report is
/// byte-identical across runs with the same config and inputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub config: PipelineConfig,
    pub images: Vec<ImageReport>,
    pub summary: Summary,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Feature rows of every cell, labelled with the image class if known.
    pub fn feature_rows(&self) -> Vec<FeatureRow> {
        self.images
            .iter()
            .flat_map(|img| {
                img.cells.iter().map(move |c| FeatureRow {
                    source_id: c.source_id.clone(),
                    label: img.label.map(|l| l.to_string()),
                    features: c.features,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageTimings {
    pub file: String,
    pub stages: Vec<StageTiming>,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: RunReport,
    pub timings: Vec<ImageTimings>,
    pub stages: Vec<Option<Stages>>,
}

fn summarize(images: &[ImageReport]) -> Summary {
    use crate::overlap::Disposition;
    let mut s = Summary {
        images: images.len(),
        ..Summary::default()
    };
    let mut cm = ConfusionMatrix::default();
    for img in images {
        s.cells += img.cells.len();
        s.skipped_cells += img.skipped.len();
        for r in &img.regions {
            match r.disposition {
                Disposition::Single => s.single_regions += 1,
                Disposition::Grouped => s.grouped_regions += 1,
                Disposition::Removed => s.removed_regions += 1,
            }
        }
        for c in &img.cells {
            match c.prediction {
                Some(Label::Benign) => s.predicted_benign += 1,
                Some(Label::Malignant) => s.predicted_malignant += 1,
                None => {}
            }
            if let (Some(p), Some(t)) = (c.prediction, img.label) {
                cm.record(t, p);
            }
        }
    }
    if cm.total() > 0 {
        s.metrics = Some(cm.metrics());
        s.confusion = Some(cm);
    }
    s
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))
}

/// Processes already-decoded images in order on `cfg.workers` threads.
pub fn run_on_images(
    inputs: &[(String, RasterImage, Option<Label>)],
    cfg: &PipelineConfig,
    model: Option<&Model>,
) -> Result<PipelineRun> {
    cfg.validate()?;
    let keep = cfg.dump_stages || cfg.overlays;
    let results: Vec<ImageResult> = thread_pool(cfg.workers)?.install(|| {
        inputs
            .par_iter()
            .map(|(name, img, label)| analyze_image(name, img, *label, cfg, model, keep))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut images = Vec::with_capacity(results.len());
    let mut timings = Vec::with_capacity(results.len());
    let mut stages = Vec::with_capacity(results.len());
    for r in results {
        timings.push(ImageTimings {
            file: r.report.file.clone(),
            stages: r.timings,
        });
        images.push(r.report);
        stages.push(r.stages);
    }
    let summary = summarize(&images);
    // Worker count and output directory do not affect results and are not
    // echoed, so reports compare equal across them.
    let echo = PipelineConfig {
        workers: 0,
        output: None,
        ..cfg.clone()
    };
    Ok(PipelineRun {
        report: RunReport {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            config: echo,
            images,
            summary,
        },
        timings,
        stages,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    Model::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
}

/// Reads `cfg.input`, runs the batch and, when `cfg.output` is set, writes
/// the report and requested images there.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let input = cfg.input.as_deref().ok_or_else(|| Error::Config {
        key: "input".into(),
        message: "an input file or directory is required".into(),
    })?;
    let model = cfg.classify.model_path.as_deref().map(load_model).transpose()?;
    let listed = list_inputs(input)?;
    let decoded: Vec<(String, RasterImage, Option<Label>)> = thread_pool(cfg.workers)?.install(|| {
        listed
            .par_iter()
            .map(|i| Ok((i.name.clone(), read_image(&i.path)?, i.label)))
            .collect::<Result<Vec<_>>>()
    })?;
    let run = run_on_images(&decoded, cfg, model.as_ref())?;
    if let Some(out) = cfg.output.as_deref() {
        write_outputs(&run, &decoded, cfg, out)?;
    }
    Ok(run)
}

/// Leucocyte outlines in green and nucleus outlines in red.
pub fn draw_overlay(img: &RasterImage, leucocytes: &LabelMap, nucleus: &BinaryMask) -> RasterImage {
    let mut out = as_rgb(img);
    let (w, h) = img.dims();
    let edge = |inside: &dyn Fn(usize, usize) -> bool, r: usize, c: usize| {
        inside(r, c)
            && [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)].iter().any(|&(dr, dc)| {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize || !inside(nr as usize, nc as usize)
            })
    };
    let cell_of = |r: usize, c: usize| leucocytes.get(r, c);
    for r in 0..h {
        for c in 0..w {
            let l = cell_of(r, c);
            let in_cell = |rr: usize, cc: usize| l != 0 && cell_of(rr, cc) == l;
            let in_nucleus = |rr: usize, cc: usize| cell_of(rr, cc) != 0 && nucleus.get(rr, cc);
            let color = if edge(&in_cell, r, c) {
                Some([0, 255, 0])
            } else if edge(&in_nucleus, r, c) {
                Some([255, 0, 0])
            } else {
                None
            };
            if let Some(rgb) = color {
                for (ch, v) in rgb.into_iter().enumerate() {
                    out.set(r, c, ch, v);
                }
            }
        }
    }
    out
}

fn stem(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(s, _)| s)
}

/// report.json, timings.json, features.csv, plus overlays/ and stages/
/// when enabled.
pub fn write_outputs(run: &PipelineRun, inputs: &[(String, RasterImage, Option<Label>)], cfg: &PipelineConfig, out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    fs::create_dir_all(out).map_err(io_err(out))?;
    let write = |name: &str, text: String| {
        let p = out.join(name);
        fs::write(&p, text).map_err(io_err(&p))
    };
    write("report.json", run.report.to_json()?)?;
    write("timings.json", serde_json::to_string_pretty(&run.timings)? + "\n")?;
    write("features.csv", write_feature_csv(&run.report.feature_rows()))?;
    for ((name, img, _), stages) in inputs.iter().zip(&run.stages) {
        let Some(s) = stages else { continue };
        if cfg.overlays {
            let dir = out.join("overlays");
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            write_image(&draw_overlay(img, &s.leucocytes, &s.nucleus), dir.join(format!("{}_overlay.png", stem(name))))?;
        }
        if cfg.dump_stages {
            let dir = out.join("stages").join(stem(name));
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            write_image(&s.gray, dir.join("01_gray.png"))?;
            write_image(&s.denoised, dir.join("02_denoised.png"))?;
            write_image(&s.enhanced, dir.join("03_enhanced.png"))?;
            write_mask(&s.binary, dir.join("04_binary.png"))?;
            write_mask(&s.morph, dir.join("05_morph.png"))?;
            write_mask(&s.cleaned.foreground(), dir.join("06_cleaned.png"))?;
            write_label_map(&s.leucocytes, dir.join("07_leucocytes.png"))?;
            for (j, m) in s.clusters.iter().enumerate() {
                write_mask(m, dir.join(format!("08_cluster_{}.png", j + 1)))?;
            }
            write_mask(&s.nucleus, dir.join("09_nucleus.png"))?;
        }
    }
    Ok(())
}
