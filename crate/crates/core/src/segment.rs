//! Pixel clustering of smear images and nucleus/cytoplasm selection.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::kmeans::{kmeans_best_of, FeatureSpace, KMeansConfig};
use crate::raster::{check_dims, reflect, to_grayscale, BinaryMask, LabelMap, RasterImage};
use crate::region::{extract_regions, BoundingBox, Region};

/// Side of the square window used for the texture feature space.
pub const TEXTURE_WINDOW: usize = 7;

/// Per-pixel clustering of an image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterResult {
    /// Cluster index + 1 per pixel.
    pub assignments: LabelMap,
    /// Centroids in the normalized feature space.
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
    pub inertia_history: Vec<f64>,
}

impl ClusterResult {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn cluster_mask(&self, cluster: usize) -> BinaryMask {
        self.assignments.mask_of(cluster as u32 + 1)
    }
}

/// Raw (unnormalized) per-pixel feature vectors for a feature space.
pub fn pixel_features(img: &RasterImage, space: FeatureSpace) -> Vec<Vec<f64>> {
    match space {
        FeatureSpace::Intensity => to_grayscale(img).data().iter().map(|&v| vec![v as f64]).collect(),
        FeatureSpace::Color => {
            if img.is_gray() {
                img.data().iter().map(|&v| vec![v as f64; 3]).collect()
            } else {
                img.data()
                    .chunks_exact(3)
                    .map(|p| p.iter().map(|&v| v as f64).collect())
                    .collect()
            }
        }
        FeatureSpace::Texture => texture_features(&to_grayscale(img), TEXTURE_WINDOW),
    }
}

/// Local standard deviation and Shannon entropy (bits) of the intensity
/// histogram in a `window`×`window` neighbourhood.
fn texture_features(gray: &RasterImage, window: usize) -> Vec<Vec<f64>> {
    let (w, h) = gray.dims();
    let half = (window / 2) as isize;
    let k = (window * window) as f64;
    let mut out = Vec::with_capacity(w * h);
    let mut hist = [0u32; 256];
    let mut touched = Vec::with_capacity(window * window);
    for r in 0..h {
        for c in 0..w {
            let (mut s, mut s2) = (0.0, 0.0);
            for dr in -half..=half {
                let rr = reflect(r as isize + dr, h);
                for dc in -half..=half {
                    let v = gray.get(rr, reflect(c as isize + dc, w), 0);
                    s += v as f64;
                    s2 += (v as f64) * (v as f64);
                    if hist[v as usize] == 0 {
                        touched.push(v);
                    }
                    hist[v as usize] += 1;
                }
            }
            let mean = s / k;
            let std = (s2 / k - mean * mean).max(0.0).sqrt();
            let mut entropy = 0.0;
            for &v in &touched {
                let p = hist[v as usize] as f64 / k;
                entropy -= p * p.log2();
                hist[v as usize] = 0;
            }
            touched.clear();
            out.push(vec![std, entropy]);
        }
    }
    out
}

/// Min-max scales each dimension to [0, 1]; constant dimensions map to 0.
pub fn normalize_columns(points: &mut [Vec<f64>]) {
    let Some(dim) = points.first().map(Vec::len) else {
        return;
    };
    for d in 0..dim {
        let (lo, hi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[d]), hi.max(p[d])));
        let range = hi - lo;
        for p in points.iter_mut() {
            p[d] = if range > 0.0 { (p[d] - lo) / range } else { 0.0 };
        }
    }
}

/// Clusters the pixels of `img` in the configured feature space.
pub fn segment_image(img: &RasterImage, cfg: &KMeansConfig) -> Result<ClusterResult> {
    cfg.validate()?;
    let mut points = pixel_features(img, cfg.feature_space);
    normalize_columns(&mut points);
    let clustering = kmeans_best_of(&points, cfg.k, cfg.max_iters, cfg.tol, cfg.seed, cfg.restarts)?;
    let assignments = LabelMap::new(
        img.width(),
        img.height(),
        clustering.assignments.iter().map(|&a| a as u32 + 1).collect(),
    )?;
    Ok(ClusterResult {
        assignments,
        centroids: clustering.centroids,
        inertia: clustering.inertia,
        iterations: clustering.iterations,
        inertia_history: clustering.inertia_history,
    })
}

/// Index (0-based) of the cluster whose pixels have the lowest mean green
/// value; ties go to the lower index and empty clusters are skipped.
pub fn darkest_green_cluster(result: &ClusterResult, img: &RasterImage) -> Result<usize> {
    if img.is_gray() {
        return invalid("nucleus selection needs an RGB image");
    }
    check_dims(result.assignments.dims(), img.dims())?;
    let k = result.k();
    let mut sums = vec![0u64; k];
    let mut counts = vec![0u64; k];
    for (i, &a) in result.assignments.labels().iter().enumerate() {
        let j = a as usize - 1;
        sums[j] += img.data()[i * 3 + 1] as u64;
        counts[j] += 1;
    }
    let mut best: Option<(usize, f64)> = None;
    for j in 0..k {
        if counts[j] == 0 {
            continue;
        }
        let mean = sums[j] as f64 / counts[j] as f64;
        if best.is_none_or(|(_, m)| mean < m) {
            best = Some((j, mean));
        }
    }
    Ok(best.expect("at least one non-empty cluster").0)
}

/// Mask of the nucleus cluster (darkest in the green channel).
pub fn select_nucleus_cluster(result: &ClusterResult, img: &RasterImage) -> Result<BinaryMask> {
    Ok(result.cluster_mask(darkest_green_cluster(result, img)?))
}

/// One leucocyte cut out of the smear.
#[derive(Debug, Clone)]
pub struct CellCrop {
    /// Crop of the source image; pixels outside the leucocyte are set to white.
    pub leucocyte_image: RasterImage,
    pub nucleus_mask: BinaryMask,
    pub cytoplasm_mask: BinaryMask,
    pub source_region: Region,
    /// Crop rectangle in source coordinates.
    pub crop_box: BoundingBox,
}

impl CellCrop {
    /// Leucocyte pixels (nucleus ∪ cytoplasm) in crop coordinates.
    pub fn cell_mask(&self) -> BinaryMask {
        self.nucleus_mask.or(&self.cytoplasm_mask).expect("same crop dims")
    }
}

/// Margin added around each leucocyte bounding box.
pub const CROP_MARGIN: usize = 2;

/// Crops every labelled leucocyte to its bounding box plus a margin and
/// splits it into nucleus (region ∩ nucleus mask) and cytoplasm (the rest).
pub fn crop_cells(img: &RasterImage, leucocyte_labels: &LabelMap, nucleus_mask: &BinaryMask) -> Result<Vec<CellCrop>> {
    check_dims(img.dims(), leucocyte_labels.dims())?;
    check_dims(img.dims(), nucleus_mask.dims())?;
    let (w, h) = img.dims();
    let mut out = Vec::new();
    for region in extract_regions(leucocyte_labels) {
        let b = region.bounding_box.expanded(CROP_MARGIN, w, h);
        let mut crop = img.crop(b.top, b.left, b.height, b.width)?;
        let mut nucleus = BinaryMask::empty(b.width, b.height)?;
        let mut cytoplasm = BinaryMask::empty(b.width, b.height)?;
        let mut inside = BinaryMask::empty(b.width, b.height)?;
        for &(r, c) in &region.pixels {
            let (lr, lc) = (r - b.top, c - b.left);
            inside.set(lr, lc, true);
            if nucleus_mask.get(r, c) {
                nucleus.set(lr, lc, true);
            } else {
                cytoplasm.set(lr, lc, true);
            }
        }
        for lr in 0..b.height {
            for lc in 0..b.width {
                if !inside.get(lr, lc) {
                    for ch in 0..crop.channels() {
                        crop.set(lr, lc, ch, 255);
                    }
                }
            }
        }
        out.push(CellCrop {
            leucocyte_image: crop,
            nucleus_mask: nucleus,
            cytoplasm_mask: cytoplasm,
            source_region: region,
            crop_box: b,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result_from(assign: Vec<u32>, w: usize, h: usize, k: usize) -> ClusterResult {
        ClusterResult {
            assignments: LabelMap::new(w, h, assign).unwrap(),
            centroids: vec![vec![0.0]; k],
            inertia: 0.0,
            iterations: 1,
            inertia_history: vec![0.0],
        }
    }

    #[test]
    fn uniform_image_cannot_be_split() {
        let img = RasterImage::filled(8, 8, 3, 120).unwrap();
        let cfg = KMeansConfig {
            k: 2,
            ..Default::default()
        };
        assert!(segment_image(&img, &cfg).is_err());
    }

    #[test]
    fn two_tone_intensity_partition() {
        let img = RasterImage::from_gray_fn(20, 10, |r, c| if (r + 2 * c) % 7 < 3 { 40 } else { 220 }).unwrap();
        let cfg = KMeansConfig {
            k: 2,
            feature_space: FeatureSpace::Intensity,
            ..Default::default()
        };
        let res = segment_image(&img, &cfg).unwrap();
        let dark_label = res.assignments.labels()[img.data().iter().position(|&v| v == 40).unwrap()];
        for (i, &v) in img.data().iter().enumerate() {
            assert_eq!(res.assignments.labels()[i] == dark_label, v == 40);
        }
    }

    #[test]
    fn every_pixel_in_one_cluster() {
        let img = RasterImage::from_rgb_fn(16, 16, |r, c| [(r * 16) as u8, (c * 16) as u8, 90]).unwrap();
        for space in [FeatureSpace::Intensity, FeatureSpace::Color, FeatureSpace::Texture] {
            let cfg = KMeansConfig {
                feature_space: space,
                ..Default::default()
            };
            let res = segment_image(&img, &cfg).unwrap();
            let union = (0..res.k()).fold(BinaryMask::empty(16, 16).unwrap(), |acc, j| acc.or(&res.cluster_mask(j)).unwrap());
            assert_eq!(union.count(), 256);
            let total: usize = (0..res.k()).map(|j| res.cluster_mask(j).count()).sum();
            assert_eq!(total, 256);
        }
    }

    #[test]
    fn nucleus_cluster_is_darkest_green() {
        // Column bands with green 200, 90, 150 assigned to clusters 1, 2, 3.
        let greens = [200u8, 90, 150];
        let img = RasterImage::from_rgb_fn(3, 2, |_, c| [10, greens[c], 10]).unwrap();
        let res = result_from(vec![1, 2, 3, 1, 2, 3], 3, 2, 3);
        assert_eq!(darkest_green_cluster(&res, &img).unwrap(), 1);
        let mask = select_nucleus_cluster(&res, &img).unwrap();
        assert!(mask.get(0, 1) && mask.get(1, 1));
        assert_eq!(mask.count(), 2);

        let flat = RasterImage::filled(3, 2, 3, 60).unwrap();
        assert_eq!(darkest_green_cluster(&res, &flat).unwrap(), 0);
        let gray = RasterImage::filled(3, 2, 1, 60).unwrap();
        assert!(select_nucleus_cluster(&res, &gray).is_err());
    }

    #[test]
    fn crop_box_margin() {
        let img = RasterImage::filled(100, 100, 3, 200).unwrap();
        let labels = LabelMap::from_fn(100, 100, |r, c| ((5..25).contains(&r) && (5..25).contains(&c)) as u32).unwrap();
        let nucleus = BinaryMask::empty(100, 100).unwrap();
        let cells = crop_cells(&img, &labels, &nucleus).unwrap();
        assert_eq!(cells.len(), 1);
        let b = cells[0].crop_box;
        assert_eq!((b.top, b.left, b.height, b.width), (3, 3, 24, 24));
        assert_eq!(cells[0].cytoplasm_mask.count(), 400);
        assert_eq!(cells[0].nucleus_mask.count(), 0);
    }

    #[test]
    fn all_nucleus_cell_has_no_cytoplasm() {
        let img = RasterImage::filled(30, 30, 3, 100).unwrap();
        let inside = |r: usize, c: usize| (10..20).contains(&r) && (8..18).contains(&c);
        let labels = LabelMap::from_fn(30, 30, |r, c| inside(r, c) as u32).unwrap();
        let nucleus = BinaryMask::from_fn(30, 30, inside).unwrap();
        let cells = crop_cells(&img, &labels, &nucleus).unwrap();
        assert!(cells[0].cytoplasm_mask.is_empty());
        assert_eq!(cells[0].nucleus_mask.count(), 100);
        // Margin pixels outside the leucocyte are cleaned to white.
        assert_eq!(cells[0].leucocyte_image.pixel(0, 0), &[255, 255, 255]);
    }

    #[test]
    fn no_regions_no_crops() {
        let img = RasterImage::filled(10, 10, 3, 0).unwrap();
        let cells = crop_cells(&img, &LabelMap::zeros(10, 10).unwrap(), &BinaryMask::empty(10, 10).unwrap()).unwrap();
        assert!(cells.is_empty());
    }
}
