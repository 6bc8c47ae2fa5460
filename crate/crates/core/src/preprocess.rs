//! Denoising, contrast enhancement and binarization.
//!
//! Every filter pads by symmetric reflection (edge pixel duplicated), so
//! borders never pick up a dark halo.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::raster::{reflect, to_grayscale, BinaryMask, RasterImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub wiener_window: usize,
    pub median_window: usize,
    pub clahe_tiles: usize,
    pub clahe_clip: f64,
    pub binarize_threshold: u16,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            wiener_window: 5,
            median_window: 3,
            clahe_tiles: 8,
            clahe_clip: 2.0,
            binarize_threshold: 192,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        check_window(self.wiener_window)?;
        check_window(self.median_window)?;
        if self.clahe_tiles == 0 {
            return invalid("clahe_tiles must be at least 1");
        }
        if !(self.clahe_clip > 0.0) {
            return invalid("clahe_clip must be positive");
        }
        if self.binarize_threshold > 255 {
            return invalid("binarize_threshold must be within 0..=255");
        }
        Ok(())
    }
}

/// Output of [`preprocess`]: the enhanced gray image and its binarization.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub gray: RasterImage,
    pub denoised: RasterImage,
    pub enhanced: RasterImage,
    pub mask: BinaryMask,
}

/// Gray conversion, Wiener, median, CLAHE, then thresholding.
pub fn preprocess(img: &RasterImage, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    cfg.validate()?;
    let gray = to_grayscale(img);
    let denoised = median_filter(&wiener_filter(&gray, cfg.wiener_window)?, cfg.median_window)?;
    let enhanced = equalize_adaptive(&denoised, cfg.clahe_tiles, cfg.clahe_clip)?;
    let mask = binarize(&enhanced, cfg.binarize_threshold)?;
    Ok(Preprocessed {
        gray,
        denoised,
        enhanced,
        mask,
    })
}

fn check_window(window: usize) -> Result<()> {
    if window < 3 || window.is_multiple_of(2) {
        return invalid(format!("window must be odd and at least 3, got {window}"));
    }
    Ok(())
}

fn require_gray(img: &RasterImage) -> Result<()> {
    if !img.is_gray() {
        return invalid("filter expects a single-channel image");
    }
    Ok(())
}

/// Visits the `window`×`window` neighbourhood of every pixel.
fn for_each_window(img: &RasterImage, window: usize, mut f: impl FnMut(usize, &[u8])) {
    let (w, h) = img.dims();
    let half = (window / 2) as isize;
    let mut buf = Vec::with_capacity(window * window);
    for r in 0..h {
        for c in 0..w {
            buf.clear();
            for dr in -half..=half {
                let rr = reflect(r as isize + dr, h);
                for dc in -half..=half {
                    buf.push(img.get(rr, reflect(c as isize + dc, w), 0));
                }
            }
            f(r * w + c, &buf);
        }
    }
}

/// Adaptive local-statistics Wiener filter. The noise power is the mean of
/// all local variances.
pub fn wiener_filter(img: &RasterImage, window: usize) -> Result<RasterImage> {
    require_gray(img)?;
    check_window(window)?;
    let n = img.width() * img.height();
    let mut means = vec![0.0; n];
    let mut vars = vec![0.0; n];
    for_each_window(img, window, |i, vals| {
        let k = vals.len() as f64;
        let mean = vals.iter().map(|&v| v as f64).sum::<f64>() / k;
        let var = vals.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / k;
        means[i] = mean;
        vars[i] = var;
    });
    let noise = vars.iter().sum::<f64>() / n as f64;
    let data = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let (mu, var) = (means[i], vars[i]);
            let denom = var.max(noise);
            let gain = if denom > 0.0 {
                (var - noise).max(0.0) / denom
            } else {
                0.0
            };
            (mu + gain * (x as f64 - mu)).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    RasterImage::new(img.width(), img.height(), 1, data)
}

pub fn median_filter(img: &RasterImage, window: usize) -> Result<RasterImage> {
    require_gray(img)?;
    check_window(window)?;
    let mut data = vec![0u8; img.width() * img.height()];
    for_each_window(img, window, |i, vals| {
        let mut sorted = vals.to_vec();
        let mid = sorted.len() / 2;
        data[i] = *sorted.select_nth_unstable(mid).1;
    });
    RasterImage::new(img.width(), img.height(), 1, data)
}

/// Contrast-limited adaptive histogram equalization on a `tiles`×`tiles`
/// grid (reduced when the image is smaller). Each tile's histogram is
/// clipped at `clip`×(tile pixels / 256), the excess
/// spread evenly over all bins, and pixels blend the four nearest tile mappings bilinearly.
/// A non-finite `clip` disables clipping.
pub fn equalize_adaptive(img: &RasterImage, tiles: usize, clip: f64) -> Result<RasterImage> {
    require_gray(img)?;
    if tiles == 0 {
        return invalid("tiles must be at least 1");
    }
    if !(clip > 0.0) {
        return invalid("clip must be positive");
    }
    let (w, h) = img.dims();
    let ty = tiles.min(h);
    let tx = tiles.min(w);
    let row_edges: Vec<usize> = (0..=ty).map(|i| i * h / ty).collect();
    let col_edges: Vec<usize> = (0..=tx).map(|j| j * w / tx).collect();

    let mut luts = vec![[0u8; 256]; ty * tx];
    for i in 0..ty {
        for j in 0..tx {
            let mut hist = [0.0f64; 256];
            for r in row_edges[i]..row_edges[i + 1] {
                for c in col_edges[j]..col_edges[j + 1] {
                    hist[img.get(r, c, 0) as usize] += 1.0;
                }
            }
            let total = ((row_edges[i + 1] - row_edges[i]) * (col_edges[j + 1] - col_edges[j])) as f64;
            if clip.is_finite() {
                clip_histogram(&mut hist, clip * total / 256.0);
            }
            let mut cdf = 0.0;
            for (v, count) in hist.iter().enumerate() {
                cdf += count;
                luts[i * tx + j][v] = (cdf * 255.0 / total).round().min(255.0) as u8;
            }
        }
    }

    let row_centers: Vec<f64> = (0..ty)
        .map(|i| (row_edges[i] + row_edges[i + 1]) as f64 / 2.0 - 0.5)
        .collect();
    let col_centers: Vec<f64> = (0..tx)
        .map(|j| (col_edges[j] + col_edges[j + 1]) as f64 / 2.0 - 0.5)
        .collect();
    let row_interp: Vec<(usize, usize, f64)> = (0..h).map(|r| interp_cell(&row_centers, r as f64)).collect();
    let col_interp: Vec<(usize, usize, f64)> = (0..w).map(|c| interp_cell(&col_centers, c as f64)).collect();

    let mut data = Vec::with_capacity(w * h);
    for (r, &(i0, i1, fy)) in row_interp.iter().enumerate() {
        for (c, &(j0, j1, fx)) in col_interp.iter().enumerate() {
            let v = img.get(r, c, 0) as usize;
            let top = (1.0 - fx) * luts[i0 * tx + j0][v] as f64 + fx * luts[i0 * tx + j1][v] as f64;
            let bottom = (1.0 - fx) * luts[i1 * tx + j0][v] as f64 + fx * luts[i1 * tx + j1][v] as f64;
            data.push(((1.0 - fy) * top + fy * bottom).round() as u8);
        }
    }
    RasterImage::new(w, h, 1, data)
}

// Excess above the limit is spread evenly over all bins (real-valued, so the
// mapping depends only on the normalized histogram).
fn clip_histogram(hist: &mut [f64; 256], limit: f64) {
    let mut excess = 0.0;
    for count in hist.iter_mut() {
        if *count > limit {
            excess += *count - limit;
            *count = limit;
        }
    }
    let share = excess / 256.0;
    for count in hist.iter_mut() {
        *count += share;
    }
}

/// Neighbouring tile centres around `x` and the blend weight of the second.
fn interp_cell(centers: &[f64], x: f64) -> (usize, usize, f64) {
    let last = centers.len() - 1;
    if x <= centers[0] {
        return (0, 0, 0.0);
    }
    if x >= centers[last] {
        return (last, last, 0.0);
    }
    let i = centers.iter().rposition(|&c| c <= x).unwrap();
    let t = (x - centers[i]) / (centers[i + 1] - centers[i]);
    (i, i + 1, t)
}

/// Foreground where intensity is strictly below `threshold` (stained cells
/// are darker than plasma).
pub fn binarize(img: &RasterImage, threshold: u16) -> Result<BinaryMask> {
    require_gray(img)?;
    if threshold > 255 {
        return invalid("threshold must be within 0..=255");
    }
    let bits = img.data().iter().map(|&v| (v as u16) < threshold).collect();
    BinaryMask::new(img.width(), img.height(), bits)
}
