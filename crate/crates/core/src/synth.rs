//! Synthetic blood-smear generator with exact ground truth.
//!
//! Leucocytes are star-shaped radial-noise outlines: a near-circular cell
//! body (cytoplasm) holding a nucleus. Benign nuclei are small and smooth,
//! malignant nuclei are enlarged and ragged. Each compartment carries its
//! own luminance texture, and small dark blobs stand in for platelets.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::Label;
use crate::error::{invalid, io_err, Error, Result};
use crate::io::{write_image, write_label_map};
use crate::raster::{BinaryMask, LabelMap, RasterImage};

/// Class codes used in [`SmearTruth::class_map`].
pub const CLASS_BACKGROUND: u32 = 0;
pub const CLASS_CYTOPLASM: u32 = 1;
pub const CLASS_NUCLEUS: u32 = 2;

const PLACEMENT_ATTEMPTS: usize = 500;
/// Free space kept between non-overlapping cells and the frame.
const GAP: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StainColors {
    pub background: [u8; 3],
    pub cytoplasm: [u8; 3],
    pub nucleus: [u8; 3],
    pub distractor: [u8; 3],
}

impl Default for StainColors {
    fn default() -> Self {
        Self {
            background: [236, 230, 240],
            cytoplasm: [150, 160, 214],
            nucleus: [92, 52, 132],
            distractor: [128, 96, 156],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmearSpec {
    pub width: usize,
    pub height: usize,
    pub cell_count: usize,
    /// Probability that a cell is benign.
    pub benign_fraction: f64,
    pub cell_radius_min: f64,
    pub cell_radius_max: f64,
    /// Nucleus to cell area ratios.
    pub benign_nucleus_ratio: f64,
    pub malignant_nucleus_ratio: f64,
    /// Radial noise amplitudes as fractions of the nucleus radius.
    pub benign_noise_max: f64,
    pub malignant_noise_min: f64,
    pub malignant_noise_max: f64,
    /// Probability that a cell after the first is placed overlapping another.
    pub overlap_probability: f64,
    pub max_distractors: usize,
    pub colors: StainColors,
    /// Per-channel Gaussian pixel noise.
    pub noise_sigma: f64,
    /// Luminance texture per compartment.
    pub background_texture: f64,
    pub cytoplasm_texture: f64,
    pub nucleus_texture: f64,
    pub seed: u64,
}

impl Default for SmearSpec {
    fn default() -> Self {
        Self {
            width: 200,
            height: 200,
            cell_count: 3,
            benign_fraction: 0.5,
            cell_radius_min: 22.0,
            cell_radius_max: 28.0,
            benign_nucleus_ratio: 0.45,
            malignant_nucleus_ratio: 0.75,
            benign_noise_max: 0.04,
            malignant_noise_min: 0.15,
            malignant_noise_max: 0.3,
            overlap_probability: 0.15,
            max_distractors: 3,
            colors: StainColors::default(),
            noise_sigma: 2.0,
            background_texture: 1.5,
            cytoplasm_texture: 5.0,
            nucleus_texture: 16.0,
            seed: 0,
        }
    }
}

impl SmearSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return invalid("image must be at least 32×32");
        }
        if self.cell_count == 0 {
            return invalid("cell_count must be at least 1");
        }
        for (name, v) in [
            ("benign_fraction", self.benign_fraction),
            ("overlap_probability", self.overlap_probability),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return invalid(format!("{name} must lie in [0, 1]"));
            }
        }
        for (name, v) in [
            ("benign_nucleus_ratio", self.benign_nucleus_ratio),
            ("malignant_nucleus_ratio", self.malignant_nucleus_ratio),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return invalid(format!("{name} must lie in (0, 1)"));
            }
        }
        if !(self.cell_radius_min >= 4.0 && self.cell_radius_min <= self.cell_radius_max) {
            return invalid("cell radius range must satisfy 4 ≤ min ≤ max");
        }
        if 2.0 * (self.cell_radius_max + GAP) > self.width.min(self.height) as f64 {
            return invalid("cells do not fit in the image");
        }
        if !(0.0..=self.malignant_noise_max).contains(&self.malignant_noise_min) || self.benign_noise_max < 0.0 {
            return invalid("radial noise amplitudes must be non-negative and ordered");
        }
        for v in [self.noise_sigma, self.background_texture, self.cytoplasm_texture, self.nucleus_texture] {
            if !(v >= 0.0) {
                return invalid("noise levels must be non-negative");
            }
        }
        Ok(())
    }
}

/// Star-shaped outline r(θ) = base·(1 + Σ aₖ cos(fₖθ + φₖ)), capped at `cap`.
#[derive(Debug, Clone, PartialEq)]
struct RadialShape {
    cx: f64,
    cy: f64,
    base: f64,
    cap: f64,
    harmonics: Vec<(f64, f64, f64)>,
}

impl RadialShape {
    fn random(cx: f64, cy: f64, base: f64, amplitude: f64, freqs: (u32, u32), terms: usize, rng: &mut impl Rng) -> Self {
        let weights: Vec<f64> = (0..terms).map(|_| rng.random_range(0.5..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let harmonics = weights
            .iter()
            .map(|w| {
                let f = rng.random_range(freqs.0..=freqs.1) as f64;
                (amplitude * w / total, f, rng.random_range(0.0..2.0 * PI))
            })
            .collect();
        Self {
            cx,
            cy,
            base,
            cap: f64::INFINITY,
            harmonics,
        }
    }

    fn radius_at(&self, theta: f64) -> f64 {
        let s: f64 = self.harmonics.iter().map(|(a, f, p)| a * (f * theta + p).cos()).sum();
        (self.base * (1.0 + s)).min(self.cap)
    }

    /// Distance of (x, y) from the centre relative to the outline radius.
    fn relative_distance(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        (dx * dx + dy * dy).sqrt() / self.radius_at(dy.atan2(dx))
    }
}

#[derive(Debug, Clone)]
struct CellShape {
    label: Label,
    radius: f64,
    body: RadialShape,
    nucleus: RadialShape,
    group: u32,
}

/// Ground truth of one leucocyte.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellTruth {
    /// Instance id in [`SmearTruth::labels`].
    pub id: u32,
    pub label: Label,
    /// (row, col).
    pub center: (f64, f64),
    pub radius: f64,
    /// Cells sharing an id touch or overlap.
    pub overlap_group: u32,
    pub nucleus_area: usize,
    pub cytoplasm_area: usize,
    #[serde(skip)]
    pub nucleus_mask: BinaryMask,
    #[serde(skip)]
    pub cytoplasm_mask: BinaryMask,
}

impl CellTruth {
    pub fn mask(&self) -> BinaryMask {
        self.nucleus_mask.or(&self.cytoplasm_mask).expect("same dims")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmearTruth {
    pub seed: u64,
    pub cells: Vec<CellTruth>,
    /// Cell instance ids (0 = background).
    #[serde(skip)]
    pub labels: LabelMap,
    /// Background / cytoplasm / nucleus per pixel.
    #[serde(skip)]
    pub class_map: LabelMap,
}

impl SmearTruth {
    pub fn nucleus_mask(&self) -> BinaryMask {
        BinaryMask::from_fn(self.class_map.width(), self.class_map.height(), |r, c| {
            self.class_map.get(r, c) == CLASS_NUCLEUS
        })
        .expect("non-empty dims")
    }

    pub fn cell_mask(&self) -> BinaryMask {
        self.labels.foreground()
    }
}

fn draw_label(spec: &SmearSpec, rng: &mut impl Rng) -> Label {
    if rng.random::<f64>() < spec.benign_fraction {
        Label::Benign
    } else {
        Label::Malignant
    }
}

fn make_cell(spec: &SmearSpec, cx: f64, cy: f64, radius: f64, label: Label, group: u32, rng: &mut impl Rng) -> CellShape {
    let body = RadialShape::random(cx, cy, radius, 0.02, (2, 3), 2, rng);
    let mut nucleus = match label {
        Label::Benign => {
            let amp = rng.random_range(0.0..=spec.benign_noise_max);
            RadialShape::random(cx, cy, radius * spec.benign_nucleus_ratio.sqrt(), amp, (2, 4), 2, rng)
        }
        Label::Malignant => {
            let amp = rng.random_range(spec.malignant_noise_min..=spec.malignant_noise_max);
            RadialShape::random(cx, cy, radius * spec.malignant_nucleus_ratio.sqrt(), amp, (4, 9), 3, rng)
        }
    };
    // The cell outline dips to 0.98·radius; keep a cytoplasm rim inside it.
    nucleus.cap = 0.93 * radius;
    CellShape {
        label,
        radius,
        body,
        nucleus,
        group,
    }
}

fn fits_frame(spec: &SmearSpec, cx: f64, cy: f64, reach: f64) -> bool {
    cx - reach >= GAP && cy - reach >= GAP && cx + reach <= spec.width as f64 - 1.0 - GAP && cy + reach <= spec.height as f64 - 1.0 - GAP
}

fn place_cells(spec: &SmearSpec, rng: &mut ChaCha8Rng) -> Result<Vec<CellShape>> {
    let mut cells: Vec<CellShape> = Vec::new();
    let mut attempts = 0;
    let mut next_group = 1;
    while cells.len() < spec.cell_count {
        let radius = rng.random_range(spec.cell_radius_min..=spec.cell_radius_max);
        let reach = radius * 1.02;
        let overlap = !cells.is_empty() && rng.random::<f64>() < spec.overlap_probability;
        let mut placed = None;
        while placed.is_none() {
            attempts += 1;
            if attempts > PLACEMENT_ATTEMPTS * spec.cell_count {
                return Err(Error::Unplaceable {
                    requested: spec.cell_count,
                    attempts: attempts - 1,
                });
            }
            let (cx, cy, partner) = if overlap {
                let j = rng.random_range(0..cells.len());
                let d = rng.random_range(1.8..1.95) * (radius + cells[j].radius) / 2.0;
                let a = rng.random_range(0.0..2.0 * PI);
                (cells[j].body.cx + d * a.cos(), cells[j].body.cy + d * a.sin(), Some(j))
            } else {
                (
                    rng.random_range(0.0..spec.width as f64),
                    rng.random_range(0.0..spec.height as f64),
                    None,
                )
            };
            if !fits_frame(spec, cx, cy, reach) {
                continue;
            }
            let clear = cells.iter().enumerate().all(|(i, o)| {
                let dist = ((o.body.cx - cx).powi(2) + (o.body.cy - cy).powi(2)).sqrt();
                Some(i) == partner || dist >= reach + o.radius * 1.02 + GAP
            });
            if clear {
                placed = Some((cx, cy, partner));
            }
        }
        let (cx, cy, partner) = placed.expect("placed");
        let group = match partner {
            Some(j) => cells[j].group,
            None => {
                next_group += 1;
                next_group - 1
            }
        };
        let label = draw_label(spec, rng);
        cells.push(make_cell(spec, cx, cy, radius, label, group, rng));
    }
    Ok(cells)
}

/// Owner cell and compartment of a pixel centre, if any.
fn classify_pixel(cells: &[CellShape], x: f64, y: f64) -> Option<(usize, u32)> {
    let mut nucleus: Option<(usize, f64)> = None;
    let mut body: Option<(usize, f64)> = None;
    for (i, cell) in cells.iter().enumerate() {
        let d = cell.body.relative_distance(x, y);
        if d > 1.0 {
            continue;
        }
        let dn = cell.nucleus.relative_distance(x, y);
        if dn <= 1.0 && nucleus.is_none_or(|(_, best)| dn < best) {
            nucleus = Some((i, dn));
        }
        if body.is_none_or(|(_, best)| d < best) {
            body = Some((i, d));
        }
    }
    match (nucleus, body) {
        (Some((i, _)), _) => Some((i, CLASS_NUCLEUS)),
        (None, Some((i, _))) => Some((i, CLASS_CYTOPLASM)),
        _ => None,
    }
}

/// Draws one smear image and its ground truth.
pub fn generate(spec: &SmearSpec) -> Result<(RasterImage, SmearTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cells = place_cells(spec, &mut rng)?;
    let (w, h) = (spec.width, spec.height);

    let mut blobs = Vec::new();
    let n_blobs = rng.random_range(0..=spec.max_distractors);
    for _ in 0..PLACEMENT_ATTEMPTS {
        if blobs.len() >= n_blobs {
            break;
        }
        let r = rng.random_range(2.0..4.0);
        let (x, y) = (rng.random_range(r..w as f64 - r), rng.random_range(r..h as f64 - r));
        if cells.iter().all(|c| ((c.body.cx - x).powi(2) + (c.body.cy - y).powi(2)).sqrt() > c.radius * 1.02 + r + GAP) {
            blobs.push((x, y, r));
        }
    }

    let mut labels = LabelMap::zeros(w, h)?;
    let mut class_map = LabelMap::zeros(w, h)?;
    let mut data = Vec::with_capacity(w * h * 3);
    let pixel_noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    for r in 0..h {
        for c in 0..w {
            let (x, y) = (c as f64, r as f64);
            let (base, texture) = match classify_pixel(&cells, x, y) {
                Some((i, class)) => {
                    labels.set(r, c, i as u32 + 1);
                    class_map.set(r, c, class);
                    if class == CLASS_NUCLEUS {
                        (spec.colors.nucleus, spec.nucleus_texture)
                    } else {
                        (spec.colors.cytoplasm, spec.cytoplasm_texture)
                    }
                }
                None if blobs.iter().any(|&(bx, by, br)| (bx - x).powi(2) + (by - y).powi(2) <= br * br) => {
                    (spec.colors.distractor, spec.background_texture)
                }
                None => (spec.colors.background, spec.background_texture),
            };
            let lum = texture * unit.sample(&mut rng);
            for v in base {
                let noise = if spec.noise_sigma > 0.0 { pixel_noise.sample(&mut rng) } else { 0.0 };
                data.push((v as f64 + lum + noise).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    let image = RasterImage::new(w, h, 3, data)?;

    let truths = cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let id = i as u32 + 1;
            let nucleus_mask = BinaryMask::from_fn(w, h, |r, c| labels.get(r, c) == id && class_map.get(r, c) == CLASS_NUCLEUS)?;
            let cytoplasm_mask = BinaryMask::from_fn(w, h, |r, c| labels.get(r, c) == id && class_map.get(r, c) == CLASS_CYTOPLASM)?;
            Ok(CellTruth {
                id,
                label: cell.label,
                center: (cell.body.cy, cell.body.cx),
                radius: cell.radius,
                overlap_group: cell.group,
                nucleus_area: nucleus_mask.count(),
                cytoplasm_area: cytoplasm_mask.count(),
                nucleus_mask,
                cytoplasm_mask,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok((
        image,
        SmearTruth {
            seed: spec.seed,
            cells: truths,
            labels,
            class_map,
        },
    ))
}

/// Per-image seed: SplitMix64 of the master seed mixed with the image index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub label: Label,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub entry: ManifestEntry,
    pub image: RasterImage,
    pub truth: SmearTruth,
}

/// `n` images, round(n·benign_fraction) of them benign. Every cell in an
/// image shares the image's class.
pub fn make_corpus(n: usize, spec: &SmearSpec, seed: u64) -> Result<Vec<CorpusItem>> {
    if n == 0 {
        return invalid("corpus size must be at least 1");
    }
    spec.validate()?;
    let n_benign = (n as f64 * spec.benign_fraction).round() as usize;
    let mut classes: Vec<Label> = (0..n)
        .map(|i| if i < n_benign { Label::Benign } else { Label::Malignant })
        .collect();
    classes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..n)
        .into_par_iter()
        .map(|i| {
            let label = classes[i];
            let image_seed = derive_seed(seed, i as u64);
            let image_spec = SmearSpec {
                benign_fraction: if label == Label::Benign { 1.0 } else { 0.0 },
                seed: image_seed,
                ..spec.clone()
            };
            let (image, truth) = generate(&image_spec)?;
            Ok(CorpusItem {
                entry: ManifestEntry {
                    file: format!("img_{i:03}.png"),
                    label,
                    seed: image_seed,
                },
                image,
                truth,
            })
        })
        .collect()
}

pub const MANIFEST_FILE: &str = "manifest.csv";

pub fn manifest_csv(entries: &[ManifestEntry]) -> String {
    let mut out = String::from("file,label,seed\n");
    for e in entries {
        out.push_str(&format!("{},{},{}\n", e.file, e.label, e.seed));
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some("file,label,seed") {
        return Err(Error::Format("manifest header must be `file,label,seed`".into()));
    }
    lines
        .map(|line| {
            let cols: Vec<&str> = line.trim().split(',').collect();
            let [file, label, seed] = cols[..] else {
                return Err(Error::Format(format!("bad manifest row `{line}`")));
            };
            Ok(ManifestEntry {
                file: file.to_string(),
                label: label.parse()?,
                seed: seed.parse().map_err(|_| Error::Format(format!("bad seed `{seed}`")))?,
            })
        })
        .collect()
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    parse_manifest(&fs::read_to_string(&path).map_err(io_err(&path))?)
}

fn stem(file: &str) -> &str {
    file.strip_suffix(".png").unwrap_or(file)
}

/// Paths of the instance and class truth maps for a corpus image.
pub fn truth_paths(dir: impl AsRef<Path>, file: &str) -> (PathBuf, PathBuf) {
    let dir = dir.as_ref();
    (
        dir.join(format!("{}_labels.png", stem(file))),
        dir.join(format!("{}_classes.png", stem(file))),
    )
}

/// Writes images, truth label maps, JSON sidecars and the manifest.
pub fn write_corpus(items: &[CorpusItem], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for item in items {
        write_image(&item.image, dir.join(&item.entry.file))?;
        let (labels_path, classes_path) = truth_paths(dir, &item.entry.file);
        write_label_map(&item.truth.labels, labels_path)?;
        write_label_map(&item.truth.class_map, classes_path)?;
        let sidecar = serde_json::json!({
            "file": item.entry.file,
            "label": item.entry.label,
            "seed": item.entry.seed,
            "width": item.image.width(),
            "height": item.image.height(),
            "cells": item.truth.cells,
        });
        let path = dir.join(format!("{}.json", stem(&item.entry.file)));
        fs::write(&path, serde_json::to_string_pretty(&sidecar)?).map_err(io_err(&path))?;
    }
    let entries: Vec<ManifestEntry> = items.iter().map(|i| i.entry.clone()).collect();
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest_csv(&entries)).map_err(io_err(&path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlap::roundness;
    use crate::region::mask_regions;

    fn spec(seed: u64) -> SmearSpec {
        SmearSpec {
            seed,
            ..SmearSpec::default()
        }
    }

    #[test]
    fn same_seed_same_output() {
        let (a, ta) = generate(&spec(3)).unwrap();
        let (b, tb) = generate(&spec(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = generate(&spec(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn all_benign() {
        let s = SmearSpec {
            benign_fraction: 1.0,
            cell_count: 4,
            ..spec(1)
        };
        let (_, t) = generate(&s).unwrap();
        assert!(t.cells.iter().all(|c| c.label == Label::Benign));
    }

    #[test]
    fn no_overlap_gives_disjoint_cells() {
        for seed in 0..10 {
            let s = SmearSpec {
                overlap_probability: 0.0,
                ..spec(seed)
            };
            let (_, t) = generate(&s).unwrap();
            let groups: std::collections::HashSet<u32> = t.cells.iter().map(|c| c.overlap_group).collect();
            assert_eq!(groups.len(), t.cells.len());
            // Each truth cell is its own 8-connected component.
            assert_eq!(mask_regions(&t.cell_mask()).len(), t.cells.len());
        }
    }

    #[test]
    fn masks_partition_cells() {
        let s = SmearSpec {
            overlap_probability: 1.0,
            ..spec(11)
        };
        let (_, t) = generate(&s).unwrap();
        let mut rebuilt = LabelMap::zeros(s.width, s.height).unwrap();
        for cell in &t.cells {
            assert!(cell.nucleus_mask.and(&cell.cytoplasm_mask).unwrap().is_empty());
            assert!(cell.nucleus_area > 0 && cell.cytoplasm_area > 0);
            for r in 0..s.height {
                for c in 0..s.width {
                    if cell.mask().get(r, c) {
                        assert_eq!(rebuilt.get(r, c), 0);
                        rebuilt.set(r, c, cell.id);
                    }
                }
            }
        }
        assert_eq!(rebuilt, t.labels);
    }

    #[test]
    fn nucleus_shapes_follow_class() {
        let mut benign_round = Vec::new();
        let mut ratios = [Vec::new(), Vec::new()];
        for seed in 0..20 {
            for label in [Label::Benign, Label::Malignant] {
                let s = SmearSpec {
                    benign_fraction: if label == Label::Benign { 1.0 } else { 0.0 },
                    overlap_probability: 0.0,
                    ..spec(seed)
                };
                let (_, t) = generate(&s).unwrap();
                for cell in &t.cells {
                    let region = &mask_regions(&cell.nucleus_mask)[0];
                    if label == Label::Benign {
                        benign_round.push(roundness(region));
                    }
                    let ratio = cell.nucleus_area as f64 / (cell.nucleus_area + cell.cytoplasm_area) as f64;
                    ratios[label as usize].push(ratio);
                }
            }
        }
        assert!(benign_round.iter().all(|&r| r > 0.85), "{benign_round:?}");
        let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&ratios[0]) - 0.45).abs() < 0.05, "{}", mean(&ratios[0]));
        assert!(mean(&ratios[1]) > 0.6, "{}", mean(&ratios[1]));
    }

    #[test]
    fn crowded_spec_is_unplaceable() {
        let s = SmearSpec {
            width: 80,
            height: 80,
            cell_count: 10,
            overlap_probability: 0.0,
            ..spec(0)
        };
        assert!(matches!(generate(&s), Err(Error::Unplaceable { .. })));
    }

    #[test]
    fn corpus_class_counts_and_manifest() {
        let small = SmearSpec {
            width: 120,
            height: 120,
            cell_count: 1,
            ..SmearSpec::default()
        };
        let items = make_corpus(9, &small, 5).unwrap();
        let entries: Vec<ManifestEntry> = items.iter().map(|i| i.entry.clone()).collect();
        let benign = entries.iter().filter(|e| e.label == Label::Benign).count();
        assert_eq!(benign, 5);
        let again: Vec<ManifestEntry> = make_corpus(9, &small, 5).unwrap().into_iter().map(|i| i.entry).collect();
        assert_eq!(entries, again);
        assert_eq!(parse_manifest(&manifest_csv(&entries)).unwrap(), entries);
        for item in &items {
            assert!(item.truth.cells.iter().all(|c| c.label == item.entry.label));
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
