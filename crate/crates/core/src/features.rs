//! Per-leucocyte feature vectors: geometric descriptors of the nucleus,
//! GLCM texture statistics, intensity statistics and mean gray level.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::raster::{check_dims, to_grayscale, BinaryMask, RasterImage};
use crate::region::{mask_regions, Region};
use crate::segment::CellCrop;

/// Version tag written at the top of feature tables.
pub const SCHEMA_VERSION: &str = "leuko-features/1";

pub const FEATURE_NAMES: [&str; 18] = [
    "area",
    "perimeter",
    "radius",
    "elongation",
    "eccentricity",
    "rectangularity",
    "convexity",
    "compactness",
    "solidity",
    "symmetry",
    "entropy",
    "energy",
    "homogeneity",
    "correlation",
    "mean",
    "variance",
    "std_dev",
    "mean_gray",
];

pub const FEATURE_COUNT: usize = FEATURE_NAMES.len();

/// Named scalar features of one leucocyte, in [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub area: f64,
    pub perimeter: f64,
    pub radius: f64,
    pub elongation: f64,
    pub eccentricity: f64,
    pub rectangularity: f64,
    pub convexity: f64,
    pub compactness: f64,
    pub solidity: f64,
    pub symmetry: f64,
    pub entropy: f64,
    pub energy: f64,
    pub homogeneity: f64,
    pub correlation: f64,
    pub mean: f64,
    pub variance: f64,
    pub std_dev: f64,
    pub mean_gray: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.area,
            self.perimeter,
            self.radius,
            self.elongation,
            self.eccentricity,
            self.rectangularity,
            self.convexity,
            self.compactness,
            self.solidity,
            self.symmetry,
            self.entropy,
            self.energy,
            self.homogeneity,
            self.correlation,
            self.mean,
            self.variance,
            self.std_dev,
            self.mean_gray,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != FEATURE_COUNT {
            return invalid(format!("expected {FEATURE_COUNT} features, got {}", v.len()));
        }
        Ok(Self {
            area: v[0],
            perimeter: v[1],
            radius: v[2],
            elongation: v[3],
            eccentricity: v[4],
            rectangularity: v[5],
            convexity: v[6],
            compactness: v[7],
            solidity: v[8],
            symmetry: v[9],
            entropy: v[10],
            energy: v[11],
            homogeneity: v[12],
            correlation: v[13],
            mean: v[14],
            variance: v[15],
            std_dev: v[16],
            mean_gray: v[17],
        })
    }

    /// JSON with the features grouped by kind.
    pub fn to_grouped_json(&self) -> serde_json::Value {
        serde_json::json!({
            "geometric": {
                "area": self.area, "perimeter": self.perimeter, "radius": self.radius,
                "elongation": self.elongation, "eccentricity": self.eccentricity,
                "rectangularity": self.rectangularity, "convexity": self.convexity,
                "compactness": self.compactness, "solidity": self.solidity, "symmetry": self.symmetry,
            },
            "texture": {
                "entropy": self.entropy, "energy": self.energy,
                "homogeneity": self.homogeneity, "correlation": self.correlation,
            },
            "statistical": { "mean": self.mean, "variance": self.variance, "std_dev": self.std_dev },
            "color": { "mean_gray": self.mean_gray },
        })
    }
}

/// 1 − minor/major; 0 for degenerate axes.
pub fn elongation(region: &Region) -> f64 {
    if region.major_axis <= 0.0 {
        return 0.0;
    }
    1.0 - region.minor_axis / region.major_axis
}

pub fn eccentricity(region: &Region) -> f64 {
    let (a, b) = (region.major_axis, region.minor_axis);
    if a <= 0.0 {
        return 0.0;
    }
    (a * a - b * b).max(0.0).sqrt() / a
}

/// area / (major × minor).
pub fn rectangularity(region: &Region) -> f64 {
    let denom = region.major_axis * region.minor_axis;
    if denom <= 0.0 {
        return 0.0;
    }
    region.area as f64 / denom
}

/// convex perimeter / perimeter.
pub fn convexity(region: &Region) -> f64 {
    if region.perimeter <= 0.0 {
        return 1.0;
    }
    region.convex_perimeter / region.perimeter
}

/// 4π·area / perimeter².
pub fn compactness(region: &Region) -> f64 {
    if region.perimeter <= 0.0 {
        return 1.0;
    }
    4.0 * PI * region.area as f64 / (region.perimeter * region.perimeter)
}

/// 1 − |left − right| / area, counting pixels on either side of the major
/// axis drawn through the centroid.
pub fn symmetry(region: &Region) -> f64 {
    let (sin, cos) = region.orientation.sin_cos();
    let (mut left, mut right) = (0i64, 0i64);
    for &(r, c) in &region.pixels {
        // Signed distance along the axis normal (-sin, cos) in (col, row) space.
        let d = -(c as f64 - region.centroid.1) * sin + (r as f64 - region.centroid.0) * cos;
        if d > 1e-9 {
            left += 1;
        } else if d < -1e-9 {
            right += 1;
        }
    }
    1.0 - (left - right).abs() as f64 / region.area as f64
}

/// Neighbour offsets (row, col) accumulated by default: 0°, 90°, 45°, 135°.
pub const GLCM_OFFSETS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

/// Normalized symmetric gray-level co-occurrence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Glcm {
    pub levels: usize,
    /// Row-major `levels`×`levels` probabilities.
    pub matrix: Vec<f64>,
    pub offsets: Vec<(isize, isize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureFeatures {
    pub entropy: f64,
    pub energy: f64,
    pub homogeneity: f64,
    pub correlation: f64,
}

/// Quantizes an 8-bit value into `levels` equal-width bins.
#[inline]
pub fn quantize(v: u8, levels: usize) -> usize {
    v as usize * levels / 256
}

impl Glcm {
    /// Counts pairs (p, p + offset) with both pixels inside `mask`, in both
    /// orders, then normalizes.
    pub fn compute(img: &RasterImage, mask: &BinaryMask, levels: usize, offsets: &[(isize, isize)]) -> Result<Glcm> {
        if !img.is_gray() {
            return invalid("GLCM needs a single-channel image");
        }
        check_dims(img.dims(), mask.dims())?;
        if !(2..=256).contains(&levels) {
            return invalid("GLCM levels must lie in 2..=256");
        }
        if mask.count() < 2 {
            return invalid("GLCM needs at least two masked pixels");
        }
        let (w, h) = img.dims();
        let mut counts = vec![0u64; levels * levels];
        for r in 0..h {
            for c in 0..w {
                if !mask.get(r, c) {
                    continue;
                }
                let a = quantize(img.get(r, c, 0), levels);
                for &(dr, dc) in offsets {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let (nr, nc) = (nr as usize, nc as usize);
                    if !mask.get(nr, nc) {
                        continue;
                    }
                    let b = quantize(img.get(nr, nc, 0), levels);
                    counts[a * levels + b] += 1;
                    counts[b * levels + a] += 1;
                }
            }
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return invalid("mask has no neighbouring pixel pairs");
        }
        Ok(Glcm {
            levels,
            matrix: counts.iter().map(|&n| n as f64 / total as f64).collect(),
            offsets: offsets.to_vec(),
        })
    }

    #[inline]
    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.levels + j]
    }

    pub fn features(&self) -> TextureFeatures {
        let n = self.levels;
        let (mut energy, mut entropy, mut homogeneity) = (0.0, 0.0, 0.0);
        let (mut mu_i, mut mu_j) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let p = self.p(i, j);
                energy += p * p;
                if p > 0.0 {
                    entropy -= p * p.log2();
                }
                homogeneity += p / (1.0 + (i as f64 - j as f64).abs());
                mu_i += i as f64 * p;
                mu_j += j as f64 * p;
            }
        }
        let (mut var_i, mut var_j, mut cov) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let p = self.p(i, j);
                let (di, dj) = (i as f64 - mu_i, j as f64 - mu_j);
                var_i += di * di * p;
                var_j += dj * dj * p;
                cov += di * dj * p;
            }
        }
        let correlation = if var_i > 0.0 && var_j > 0.0 {
            cov / (var_i.sqrt() * var_j.sqrt())
        } else {
            0.0
        };
        TextureFeatures {
            entropy,
            energy,
            homogeneity,
            correlation,
        }
    }
}

/// Haralick entropy, energy, homogeneity and correlation of the masked crop.
pub fn glcm_features(img_crop: &RasterImage, mask: &BinaryMask, levels: usize) -> Result<TextureFeatures> {
    Ok(Glcm::compute(img_crop, mask, levels, &GLCM_OFFSETS)?.features())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatisticalFeatures {
    pub mean: f64,
    pub variance: f64,
    pub std_dev: f64,
}

/// Population mean, variance and standard deviation of masked intensities.
pub fn statistical_features(img_crop: &RasterImage, mask: &BinaryMask) -> Result<StatisticalFeatures> {
    if !img_crop.is_gray() {
        return invalid("statistics need a single-channel image");
    }
    check_dims(img_crop.dims(), mask.dims())?;
    let values: Vec<f64> = img_crop
        .data()
        .iter()
        .zip(mask.bits())
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v as f64)
        .collect();
    if values.is_empty() {
        return invalid("statistics need a non-empty mask");
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(StatisticalFeatures {
        mean,
        variance,
        std_dev: variance.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeSource {
    Nucleus,
    Cell,
}

impl std::str::FromStr for ShapeSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "nucleus" => Ok(ShapeSource::Nucleus),
            "cell" => Ok(ShapeSource::Cell),
            other => Err(format!("unknown shape source `{other}` (nucleus|cell)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub glcm_levels: usize,
    pub shape_source: ShapeSource,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            glcm_levels: 8,
            shape_source: ShapeSource::Nucleus,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.glcm_levels < 2 || self.glcm_levels > 256 {
            return invalid("glcm_levels must lie in 2..=256");
        }
        Ok(())
    }
}

/// Largest 8-connected component of a mask (first in raster order on ties).
pub fn largest_region(mask: &BinaryMask) -> Option<Region> {
    let mut best: Option<Region> = None;
    for r in mask_regions(mask) {
        if best.as_ref().is_none_or(|b| r.area > b.area) {
            best = Some(r);
        }
    }
    best
}

/// Geometric features of `region` in [`FEATURE_NAMES`] order (first ten).
pub fn shape_features(region: &Region) -> [f64; 10] {
    [
        region.area as f64,
        region.perimeter,
        region.equivalent_diameter / 2.0,
        elongation(region),
        eccentricity(region),
        rectangularity(region),
        convexity(region),
        compactness(region),
        crate::overlap::solidity(region),
        symmetry(region),
    ]
}

/// Features of one cell. Shape is measured on the largest nucleus component
/// (or the whole cell), texture and statistics on the nucleus pixels of the
/// gray crop, and mean gray over the whole cell.
pub fn extract_feature_vector(cell: &CellCrop, cfg: &FeatureConfig) -> Result<FeatureVector> {
    cfg.validate()?;
    let gray = to_grayscale(&cell.leucocyte_image);
    let cell_mask = cell.cell_mask();
    let shape_mask = match cfg.shape_source {
        ShapeSource::Nucleus => &cell.nucleus_mask,
        ShapeSource::Cell => &cell_mask,
    };
    let shape_region = largest_region(shape_mask)
        .ok_or_else(|| Error::InvalidArgument("cell has no nucleus pixels".into()))?;
    let nucleus = shape_region.to_mask(shape_mask.width(), shape_mask.height());
    let nucleus = if cfg.shape_source == ShapeSource::Nucleus {
        nucleus
    } else {
        cell.nucleus_mask.clone()
    };
    let texture = glcm_features(&gray, &nucleus, cfg.glcm_levels)?;
    let stats = statistical_features(&gray, &nucleus)?;
    let whole = statistical_features(&gray, &cell_mask)?;
    let mut v = [0.0; FEATURE_COUNT];
    v[..10].copy_from_slice(&shape_features(&shape_region));
    v[10..].copy_from_slice(&[
        texture.entropy,
        texture.energy,
        texture.homogeneity,
        texture.correlation,
        stats.mean,
        stats.variance,
        stats.std_dev,
        whole.mean,
    ]);
    FeatureVector::from_slice(&v)
}

/// One row of a feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub source_id: String,
    /// Class label when known (`benign` / `malignant`).
    pub label: Option<String>,
    pub features: FeatureVector,
}

/// CSV with a schema comment line, a header and one row per cell.
pub fn write_feature_csv(rows: &[FeatureRow]) -> String {
    let mut out = format!("# schema: {SCHEMA_VERSION}\nsource_id,label,{}\n", FEATURE_NAMES.join(","));
    for row in rows {
        out.push_str(&row.source_id);
        out.push(',');
        out.push_str(row.label.as_deref().unwrap_or(""));
        for v in row.features.to_array() {
            // Shortest round-trip representation.
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

pub fn read_feature_csv(text: &str) -> Result<Vec<FeatureRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let mut header = lines.next().ok_or_else(|| Error::Format("empty feature table".into()))?;
    if let Some(comment) = header.strip_prefix('#') {
        let tag = comment.trim().trim_start_matches("schema:").trim();
        if tag != SCHEMA_VERSION {
            return Err(Error::Format(format!("unsupported feature schema `{tag}`")));
        }
        header = lines.next().ok_or_else(|| Error::Format("missing header row".into()))?;
    }
    let expected = format!("source_id,label,{}", FEATURE_NAMES.join(","));
    if header.trim() != expected {
        return Err(Error::Format("feature table header does not match schema".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.trim().split(',').collect();
            if cols.len() != FEATURE_COUNT + 2 {
                return Err(Error::Format(format!("row {}: expected {} columns", i + 1, FEATURE_COUNT + 2)));
            }
            let values = cols[2..]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("row {}: {e}", i + 1))))
                .collect::<Result<Vec<f64>>>()?;
            Ok(FeatureRow {
                source_id: cols[0].to_string(),
                label: (!cols[1].is_empty()).then(|| cols[1].to_string()),
                features: FeatureVector::from_slice(&values)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::LabelMap;
    use crate::segment::crop_cells;

    fn rect_region(h: usize, w: usize) -> Region {
        let px = (0..h).flat_map(|r| (0..w).map(move |c| (r + 1, c + 1))).collect();
        Region::from_pixels(1, px)
    }

    fn disk_region(radius: f64) -> Region {
        let n = (2.0 * radius) as usize + 3;
        let c = n as f64 / 2.0;
        let mut px = Vec::new();
        for r in 0..n {
            for col in 0..n {
                if (r as f64 - c).powi(2) + (col as f64 - c).powi(2) <= radius * radius {
                    px.push((r, col));
                }
            }
        }
        Region::from_pixels(1, px)
    }

    #[test]
    fn disk_shape_features() {
        let d = disk_region(40.0);
        assert!(elongation(&d) < 0.05);
        assert!(eccentricity(&d) < 0.15);
        let comp = compactness(&d);
        assert!((0.9..=1.1).contains(&comp), "compactness {comp}");
        assert!((convexity(&d) - 1.0).abs() < 0.05);
        assert!(symmetry(&d) > 0.97);
    }

    #[test]
    fn rectangle_elongation() {
        let r = rect_region(10, 40);
        assert!((elongation(&r) - 0.75).abs() < 0.05);
    }

    #[test]
    fn equal_axes_give_zero_elongation() {
        let mut r = rect_region(5, 5);
        r.major_axis = 3.0;
        r.minor_axis = 3.0;
        assert_eq!(elongation(&r), 0.0);
        assert_eq!(eccentricity(&r), 0.0);
    }

    #[test]
    fn eccentricity_of_five_three() {
        let mut r = rect_region(5, 5);
        r.major_axis = 5.0;
        r.minor_axis = 3.0;
        assert!((eccentricity(&r) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn eccentricity_grows_with_aspect() {
        let mut last = -1.0;
        for w in [12, 16, 24, 36, 60] {
            let e = eccentricity(&rect_region(12, w));
            assert!(e > last);
            last = e;
        }
    }

    #[test]
    fn rectangularity_constant_over_aspect() {
        let values: Vec<f64> = [(20, 20), (20, 30), (20, 45), (15, 60), (10, 70)]
            .iter()
            .map(|&(h, w)| rectangularity(&rect_region(h, w)))
            .collect();
        for v in &values {
            assert!((v - values[0]).abs() < 0.05, "{values:?}");
        }
    }

    #[test]
    fn plus_sign_not_convex() {
        let mut px = Vec::new();
        for r in 0..31 {
            for c in 0..31 {
                if (12..19).contains(&r) || (12..19).contains(&c) {
                    px.push((r, c));
                }
            }
        }
        let region = Region::from_pixels(1, px);
        assert!(convexity(&region) < 0.9, "{}", convexity(&region));
    }

    #[test]
    fn square_compactness() {
        let r = rect_region(80, 80);
        assert!((compactness(&r) - PI / 4.0).abs() < 0.05);
    }

    #[test]
    fn constant_crop_texture() {
        let img = RasterImage::filled(6, 6, 1, 90).unwrap();
        let mask = BinaryMask::from_fn(6, 6, |_, _| true).unwrap();
        let t = glcm_features(&img, &mask, 8).unwrap();
        assert_eq!(t.energy, 1.0);
        assert_eq!(t.entropy, 0.0);
        assert_eq!(t.homogeneity, 1.0);
        assert_eq!(t.correlation, 0.0);
    }

    #[test]
    fn checkerboard_horizontal_glcm() {
        let img = RasterImage::from_gray_fn(6, 6, |r, c| if (r + c) % 2 == 0 { 0 } else { 255 }).unwrap();
        let mask = BinaryMask::from_fn(6, 6, |_, _| true).unwrap();
        let g = Glcm::compute(&img, &mask, 2, &[(0, 1)]).unwrap();
        assert_eq!(g.p(0, 1), 0.5);
        assert_eq!(g.p(1, 0), 0.5);
        let t = g.features();
        assert!((t.homogeneity - 0.5).abs() < 1e-12);
        assert!((t.entropy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn glcm_rejects_tiny_masks() {
        let img = RasterImage::filled(4, 4, 1, 0).unwrap();
        let mut mask = BinaryMask::empty(4, 4).unwrap();
        mask.set(0, 0, true);
        assert!(glcm_features(&img, &mask, 8).is_err());
        assert!(glcm_features(&img, &BinaryMask::from_fn(4, 4, |_, _| true).unwrap(), 1).is_err());
    }

    #[test]
    fn statistics_of_two_values() {
        let img = RasterImage::from_gray_fn(4, 1, |_, c| if c % 2 == 0 { 0 } else { 255 }).unwrap();
        let mask = BinaryMask::from_fn(4, 1, |_, _| true).unwrap();
        let s = statistical_features(&img, &mask).unwrap();
        assert_eq!(s.mean, 127.5);
        assert_eq!(s.variance, 16256.25);
        assert_eq!(s.std_dev * s.std_dev, s.variance);
        let flat = statistical_features(&RasterImage::filled(3, 3, 1, 100).unwrap(), &BinaryMask::from_fn(3, 3, |_, _| true).unwrap()).unwrap();
        assert_eq!((flat.mean, flat.variance), (100.0, 0.0));
        assert!(statistical_features(&img, &BinaryMask::empty(4, 1).unwrap()).is_err());
    }

    #[test]
    fn round_cell_vector() {
        let size = 80;
        let img = RasterImage::from_rgb_fn(size, size, |r, c| {
            let d2 = (r as f64 - 40.0).powi(2) + (c as f64 - 40.0).powi(2);
            if d2 <= 225.0 {
                [90, 50 + ((r * 7 + c * 3) % 20) as u8, 130]
            } else if d2 <= 625.0 {
                [170, 185, 225]
            } else {
                [235, 230, 240]
            }
        })
        .unwrap();
        let labels = LabelMap::from_fn(size, size, |r, c| {
            ((r as f64 - 40.0).powi(2) + (c as f64 - 40.0).powi(2) <= 625.0) as u32
        })
        .unwrap();
        let nucleus = BinaryMask::from_fn(size, size, |r, c| (r as f64 - 40.0).powi(2) + (c as f64 - 40.0).powi(2) <= 225.0).unwrap();
        let cells = crop_cells(&img, &labels, &nucleus).unwrap();
        let v = extract_feature_vector(&cells[0], &FeatureConfig::default()).unwrap();
        assert!(v.elongation < 0.2);
        assert!(v.compactness > 0.8);
        assert!((0.0..1.0).contains(&v.eccentricity));
        assert!(v.energy > 0.0 && v.energy <= 1.0);
        assert!((-1.0..=1.0).contains(&v.correlation));
        assert_eq!(v.area, nucleus.count() as f64);
    }

    #[test]
    fn csv_round_trip_and_header() {
        let fv = FeatureVector::from_slice(&(0..18).map(|i| i as f64 * 0.1 + 1.0 / 3.0).collect::<Vec<_>>()).unwrap();
        let rows = vec![
            FeatureRow {
                source_id: "img_000/1".into(),
                label: Some("benign".into()),
                features: fv,
            },
            FeatureRow {
                source_id: "img_001/2".into(),
                label: None,
                features: fv,
            },
        ];
        let text = write_feature_csv(&rows);
        assert!(text.starts_with("# schema: leuko-features/1\nsource_id,label,area,perimeter,radius,"));
        assert_eq!(read_feature_csv(&text).unwrap(), rows);
        assert!(read_feature_csv("# schema: other/9\n").is_err());
    }
}
