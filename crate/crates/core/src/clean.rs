//! Removal of border-touching and abnormally sized components, and binary
//! opening/closing with a disk structuring element.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::raster::{BinaryMask, LabelMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleanConfig {
    pub min_area: usize,
    /// Upper area bound as a multiple of the median component area.
    pub max_area_factor: f64,
    pub remove_border: bool,
    /// Disk radius for the open/close pass on the binary mask; 0 skips it.
    pub morph_radius: usize,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            min_area: 200,
            max_area_factor: 4.0,
            remove_border: true,
            morph_radius: 2,
        }
    }
}

impl CleanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_area < 1 {
            return invalid("min_area must be at least 1");
        }
        if !(self.max_area_factor > 1.0) {
            return invalid("max_area_factor must exceed 1");
        }
        Ok(())
    }
}

/// Drops every region with a pixel on the outermost rows or columns.
pub fn remove_border_objects(labels: &LabelMap) -> LabelMap {
    let (w, h) = labels.dims();
    let mut touching = std::collections::HashSet::new();
    for c in 0..w {
        touching.insert(labels.get(0, c));
        touching.insert(labels.get(h - 1, c));
    }
    for r in 0..h {
        touching.insert(labels.get(r, 0));
        touching.insert(labels.get(r, w - 1));
    }
    labels.retain(|l| !touching.contains(&l))
}

fn region_areas(labels: &LabelMap) -> Vec<usize> {
    let mut areas = vec![0usize; labels.max_label() as usize + 1];
    for &l in labels.labels() {
        areas[l as usize] += 1;
    }
    areas
}

/// Keeps regions whose area lies in `min_area..=max_area`.
pub fn filter_by_area(labels: &LabelMap, min_area: usize, max_area: usize) -> Result<LabelMap> {
    if min_area < 1 {
        return invalid("min_area must be at least 1");
    }
    if min_area > max_area {
        return invalid(format!("min_area {min_area} exceeds max_area {max_area}"));
    }
    let areas = region_areas(labels);
    Ok(labels.retain(|l| {
        let a = areas[l as usize];
        a >= min_area && a <= max_area
    }))
}

/// Median area of the positive labels, or `None` for an empty map.
pub fn median_area(labels: &LabelMap) -> Option<f64> {
    let mut areas: Vec<usize> = region_areas(labels).into_iter().skip(1).filter(|&a| a > 0).collect();
    if areas.is_empty() {
        return None;
    }
    areas.sort_unstable();
    let n = areas.len();
    Some(if n % 2 == 1 {
        areas[n / 2] as f64
    } else {
        (areas[n / 2 - 1] + areas[n / 2]) as f64 / 2.0
    })
}

/// Border removal followed by the area gate. The upper bound is
/// `max_area_factor` × the median area of the regions that pass `min_area`.
pub fn clean_labels(labels: &LabelMap, cfg: &CleanConfig) -> Result<LabelMap> {
    cfg.validate()?;
    let base = if cfg.remove_border {
        remove_border_objects(labels)
    } else {
        labels.canonicalize()
    };
    let large_enough = filter_by_area(&base, cfg.min_area, usize::MAX)?;
    let Some(median) = median_area(&large_enough) else {
        return Ok(large_enough);
    };
    let max_area = (cfg.max_area_factor * median).floor() as usize;
    filter_by_area(&large_enough, cfg.min_area, max_area.max(cfg.min_area))
}

/// Offsets of the digital disk {(dr, dc) : dr² + dc² ≤ radius²}.
pub fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= r * r {
                out.push((dr, dc));
            }
        }
    }
    out
}

// Out-of-frame pixels are neutral: they never erode a pixel nor dilate into one.
fn morph(mask: &BinaryMask, se: &[(isize, isize)], erode: bool) -> BinaryMask {
    let (w, h) = mask.dims();
    BinaryMask::from_fn(w, h, |r, c| {
        let mut inside = se.iter().filter_map(|&(dr, dc)| {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            (nr >= 0 && nc >= 0 && nr < h as isize && nc < w as isize)
                .then(|| mask.get(nr as usize, nc as usize))
        });
        if erode {
            inside.all(|b| b)
        } else {
            inside.any(|b| b)
        }
    })
    .expect("dims preserved")
}

pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    morph(mask, &disk_offsets(radius), true)
}

pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    morph(mask, &disk_offsets(radius), false)
}

pub fn open(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let se = disk_offsets(radius);
    morph(&morph(mask, &se, true), &se, false)
}

pub fn close(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let se = disk_offsets(radius);
    morph(&morph(mask, &se, false), &se, true)
}

/// Opening then closing with a disk of `radius`.
pub fn morphological_open_close(mask: &BinaryMask, radius: usize) -> Result<BinaryMask> {
    if radius < 1 {
        return invalid("structuring element radius must be at least 1");
    }
    Ok(close(&open(mask, radius), radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{connected_components, Connectivity};

    fn blocks(w: usize, h: usize, rects: &[(usize, usize, usize, usize)]) -> LabelMap {
        let m = BinaryMask::from_fn(w, h, |r, c| {
            rects
                .iter()
                .any(|&(t, l, hh, ww)| r >= t && r < t + hh && c >= l && c < l + ww)
        })
        .unwrap();
        connected_components(&m, Connectivity::Eight)
    }

    fn disk(radius: f64, size: usize) -> BinaryMask {
        let c = (size as f64 - 1.0) / 2.0;
        BinaryMask::from_fn(size, size, |r, col| {
            (r as f64 - c).powi(2) + (col as f64 - c).powi(2) <= radius * radius
        })
        .unwrap()
    }

    #[test]
    fn border_removal() {
        let l = blocks(20, 20, &[(0, 0, 3, 3), (8, 8, 4, 4), (17, 5, 3, 2)]);
        let out = remove_border_objects(&l);
        assert_eq!(out.region_count(), 1);
        assert_eq!(out.get(9, 9), 1);
        assert_eq!(remove_border_objects(&out), out);

        let all_edge = blocks(10, 10, &[(0, 0, 10, 1), (4, 9, 2, 1)]);
        assert!(remove_border_objects(&all_edge).labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn area_bounds() {
        // Areas 5, 300 and 5000.
        let l = blocks(
            200,
            120,
            &[(2, 2, 1, 5), (10, 10, 15, 20), (40, 40, 50, 100)],
        );
        let out = filter_by_area(&l, 200, 4000).unwrap();
        assert_eq!(out.region_count(), 1);
        assert_eq!(out.get(12, 12), 1);
        assert_eq!(filter_by_area(&l, 1, usize::MAX).unwrap(), l);
        assert!(filter_by_area(&l, 10, 5).is_err());
        let empty = LabelMap::zeros(4, 4).unwrap();
        assert_eq!(filter_by_area(&empty, 1, 10).unwrap(), empty);
    }

    #[test]
    fn clean_uses_median_relative_bound() {
        // Three 20x20 cells, one 60x60 blob, one speck.
        let l = blocks(
            200,
            200,
            &[(10, 10, 20, 20), (10, 50, 20, 20), (10, 90, 20, 20), (60, 60, 60, 60), (150, 150, 2, 2)],
        );
        let out = clean_labels(&l, &CleanConfig::default()).unwrap();
        assert_eq!(out.region_count(), 3);
        assert_eq!(out.get(80, 80), 0);
    }

    #[test]
    fn opening_removes_isolated_pixel() {
        let mut m = BinaryMask::empty(9, 9).unwrap();
        m.set(4, 4, true);
        assert!(open(&m, 1).is_empty());
        assert!(morphological_open_close(&m, 1).unwrap().is_empty());
    }

    #[test]
    fn large_disk_barely_changes() {
        let d = disk(30.0, 81);
        let out = morphological_open_close(&d, 2).unwrap();
        let change = (out.count() as f64 - d.count() as f64).abs() / d.count() as f64;
        assert!(change < 0.03, "change {change}");
    }

    #[test]
    fn closing_fills_crack() {
        let mut m = BinaryMask::from_fn(30, 30, |r, c| (5..25).contains(&r) && (5..25).contains(&c)).unwrap();
        for r in 8..22 {
            m.set(r, 15, false);
        }
        let out = morphological_open_close(&m, 1).unwrap();
        for r in 8..22 {
            assert!(out.get(r, 15), "row {r}");
        }
    }

    #[test]
    fn opening_and_closing_bracket_input() {
        let m = BinaryMask::from_fn(40, 30, |r, c| (r * 13 + c * 7) % 11 < 6 || (r / 5 + c / 7) % 2 == 0).unwrap();
        let o = open(&m, 2);
        let c = close(&m, 2);
        for i in 0..m.bits().len() {
            assert!(!o.bits()[i] || m.bits()[i]);
            assert!(!m.bits()[i] || c.bits()[i]);
        }
        let once = morphological_open_close(&m, 2).unwrap();
        let twice = morphological_open_close(&once, 2).unwrap();
        assert_eq!(once, twice);
    }
}
