//! Per-component geometric measurements.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use serde::Serialize;

use crate::raster::{BinaryMask, LabelMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BoundingBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl BoundingBox {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top && row < self.top + self.height && col >= self.left && col < self.left + self.width
    }

    /// Grows the box by `margin` on every side, clamped to a `width`×`height` frame.
    pub fn expanded(&self, margin: usize, width: usize, height: usize) -> BoundingBox {
        let top = self.top.saturating_sub(margin);
        let left = self.left.saturating_sub(margin);
        let bottom = (self.top + self.height + margin).min(height);
        let right = (self.left + self.width + margin).min(width);
        BoundingBox {
            top,
            left,
            height: bottom - top,
            width: right - left,
        }
    }
}

/// One labelled component and its cached measurements.
///
/// Coordinates are (row, col). The perimeter is the length of the outer
/// 8-connected contour through boundary pixel centres, with axial steps
/// weighing 1 and diagonal steps √2. The hull is taken over boundary pixel
/// centres; `convex_area` counts the lattice points it covers (shoelace area
/// plus Pick's boundary correction), so a filled convex shape has
/// `convex_area == area`. Axis lengths are 4·√λ of the second central
/// moments of the pixel squares.
#[derive(Debug, Clone, Serialize)]
pub struct Region {
    pub label: u32,
    #[serde(skip)]
    pub pixels: Vec<(usize, usize)>,
    pub area: usize,
    pub centroid: (f64, f64),
    pub bounding_box: BoundingBox,
    pub perimeter: f64,
    #[serde(skip)]
    pub convex_hull: Vec<(f64, f64)>,
    pub convex_area: f64,
    pub convex_perimeter: f64,
    pub major_axis: f64,
    pub minor_axis: f64,
    /// Angle of the major axis against the column axis, radians, rows pointing down.
    pub orientation: f64,
    pub equivalent_diameter: f64,
}

impl Region {
    /// Builds a region from its pixel list. Panics on an empty list.
    pub fn from_pixels(label: u32, mut pixels: Vec<(usize, usize)>) -> Region {
        assert!(!pixels.is_empty(), "a region needs at least one pixel");
        pixels.sort_unstable();
        pixels.dedup();
        let area = pixels.len();

        let top = pixels.iter().map(|p| p.0).min().unwrap();
        let bottom = pixels.iter().map(|p| p.0).max().unwrap();
        let left = pixels.iter().map(|p| p.1).min().unwrap();
        let right = pixels.iter().map(|p| p.1).max().unwrap();
        let bounding_box = BoundingBox {
            top,
            left,
            height: bottom - top + 1,
            width: right - left + 1,
        };

        // Local grid with a one-pixel background frame.
        let gw = bounding_box.width + 2;
        let gh = bounding_box.height + 2;
        let mut grid = vec![false; gw * gh];
        for &(r, c) in &pixels {
            grid[(r - top + 1) * gw + (c - left + 1)] = true;
        }

        let perimeter = trace_contour(&grid, gw, (pixels[0].0 - top + 1, pixels[0].1 - left + 1));

        let boundary: Vec<(i64, i64)> = pixels
            .iter()
            .filter(|&&(r, c)| {
                let (gr, gc) = (r - top + 1, c - left + 1);
                !(grid[(gr - 1) * gw + gc]
                    && grid[(gr + 1) * gw + gc]
                    && grid[gr * gw + gc - 1]
                    && grid[gr * gw + gc + 1])
            })
            .map(|&(r, c)| (r as i64, c as i64))
            .collect();
        let hull = convex_hull(boundary);
        let (convex_area, convex_perimeter) = hull_measures(&hull);

        let n = area as f64;
        let (sr, sc) = pixels
            .iter()
            .fold((0.0, 0.0), |acc, &(r, c)| (acc.0 + r as f64, acc.1 + c as f64));
        let centroid = (sr / n, sc / n);
        let (mut crr, mut ccc, mut crc) = (0.0, 0.0, 0.0);
        for &(r, c) in &pixels {
            let dr = r as f64 - centroid.0;
            let dc = c as f64 - centroid.1;
            crr += dr * dr;
            ccc += dc * dc;
            crc += dr * dc;
        }
        // Each pixel is a unit square contributing 1/12 of variance per axis.
        let var_r = crr / n + 1.0 / 12.0;
        let var_c = ccc / n + 1.0 / 12.0;
        let cov = crc / n;
        let half_trace = (var_r + var_c) / 2.0;
        let spread = (((var_c - var_r) / 2.0).powi(2) + cov * cov).sqrt();
        let major_axis = 4.0 * (half_trace + spread).sqrt();
        let minor_axis = 4.0 * (half_trace - spread).max(0.0).sqrt();
        let orientation = 0.5 * (2.0 * cov).atan2(var_c - var_r);

        Region {
            label,
            pixels,
            area,
            centroid,
            bounding_box,
            perimeter,
            convex_hull: hull.iter().map(|&(r, c)| (r as f64, c as f64)).collect(),
            convex_area,
            convex_perimeter,
            major_axis,
            minor_axis,
            orientation,
            equivalent_diameter: (4.0 * n / PI).sqrt(),
        }
    }

    /// The region rendered into a mask of the given frame size.
    pub fn to_mask(&self, width: usize, height: usize) -> BinaryMask {
        let mut m = BinaryMask::empty(width, height).expect("positive frame");
        for &(r, c) in &self.pixels {
            m.set(r, c, true);
        }
        m
    }
}

/// One region per positive label, ordered by label.
pub fn extract_regions(labels: &LabelMap) -> Vec<Region> {
    let w = labels.width();
    let mut groups: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    for (i, &l) in labels.labels().iter().enumerate() {
        if l > 0 {
            groups.entry(l).or_default().push((i / w, i % w));
        }
    }
    groups
        .into_iter()
        .map(|(label, px)| Region::from_pixels(label, px))
        .collect()
}

/// Regions of a binary mask, one per 8-connected component.
pub fn mask_regions(mask: &BinaryMask) -> Vec<Region> {
    extract_regions(&crate::raster::connected_components(
        mask,
        crate::raster::Connectivity::Eight,
    ))
}

// Clockwise in screen coordinates (rows down): E, SE, S, SW, W, NW, N, NE.
const DIRS: [(isize, isize); 8] = [
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
];

fn dir_index(dr: isize, dc: isize) -> usize {
    DIRS.iter()
        .position(|&d| d == (dr, dc))
        .expect("backtrack pixel is a neighbour")
}

/// Moore-neighbour tracing of the outer contour containing `start`, which must
/// be the first foreground pixel in raster order. Stops when the first move
/// out of `start` would repeat.
fn trace_contour(grid: &[bool], gw: usize, start: (usize, usize)) -> f64 {
    let fg = |r: isize, c: isize| grid[r as usize * gw + c as usize];
    let start = (start.0 as isize, start.1 as isize);
    let mut cur = start;
    let mut back = (start.0, start.1 - 1);
    let mut first_move: Option<usize> = None;
    let mut length = 0.0;
    loop {
        let b = dir_index(back.0 - cur.0, back.1 - cur.1);
        let mut found = None;
        let mut last_bg = back;
        for k in 1..8 {
            let d = (b + k) % 8;
            let n = (cur.0 + DIRS[d].0, cur.1 + DIRS[d].1);
            if fg(n.0, n.1) {
                found = Some(d);
                break;
            }
            last_bg = n;
        }
        let Some(d) = found else {
            return 0.0;
        };
        if cur == start {
            match first_move {
                None => first_move = Some(d),
                Some(f) if f == d => return length,
                Some(_) => {}
            }
        }
        length += if d % 2 == 0 { 1.0 } else { SQRT_2 };
        back = last_bg;
        cur = (cur.0 + DIRS[d].0, cur.1 + DIRS[d].1);
    }
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Andrew's monotone chain; collinear points are dropped.
pub(crate) fn convex_hull(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// (lattice points covered, polygon perimeter) of a closed hull polygon.
fn hull_measures(hull: &[(i64, i64)]) -> (f64, f64) {
    if hull.len() == 1 {
        return (1.0, 0.0);
    }
    let mut twice_area = 0i64;
    let mut boundary = 0i64;
    let mut perimeter = 0.0;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        twice_area += a.0 * b.1 - b.0 * a.1;
        let (dr, dc) = (b.0 - a.0, b.1 - a.1);
        boundary += gcd(dr, dc);
        perimeter += ((dr * dr + dc * dc) as f64).sqrt();
    }
    // Pick: interior + boundary = A + B/2 + 1.
    let area = twice_area.abs() as f64 / 2.0 + boundary as f64 / 2.0 + 1.0;
    (area, perimeter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{connected_components, Connectivity};

    fn disk(radius: f64, size: usize) -> BinaryMask {
        let c = (size as f64 - 1.0) / 2.0;
        BinaryMask::from_fn(size, size, |r, col| {
            let (dr, dc) = (r as f64 - c, col as f64 - c);
            dr * dr + dc * dc <= radius * radius
        })
        .unwrap()
    }

    fn rect(h: usize, w: usize, pad: usize) -> BinaryMask {
        BinaryMask::from_fn(w + 2 * pad, h + 2 * pad, |r, c| {
            r >= pad && r < pad + h && c >= pad && c < pad + w
        })
        .unwrap()
    }

    fn only_region(mask: &BinaryMask) -> Region {
        let regions = mask_regions(mask);
        assert_eq!(regions.len(), 1);
        regions.into_iter().next().unwrap()
    }

    #[test]
    fn single_pixel() {
        let r = Region::from_pixels(1, vec![(3, 4)]);
        assert_eq!(r.area, 1);
        assert!((r.equivalent_diameter - (4.0 / PI).sqrt()).abs() < 1e-12);
        assert!((r.equivalent_diameter - 1.128).abs() < 1e-3);
        assert_eq!(r.perimeter, 0.0);
        assert_eq!(r.convex_area, 1.0);
        assert_eq!(r.convex_perimeter, 0.0);
        assert!(r.major_axis >= r.minor_axis && r.minor_axis > 0.0);
    }

    #[test]
    fn filled_square() {
        let r = only_region(&rect(10, 10, 3));
        assert_eq!(r.area, 100);
        assert_eq!(r.convex_area, 100.0);
        assert_eq!(
            r.bounding_box,
            BoundingBox {
                top: 3,
                left: 3,
                height: 10,
                width: 10
            }
        );
        assert!((r.perimeter - 36.0).abs() < 1e-9);
        assert!((r.convex_perimeter - 36.0).abs() < 1e-9);
        assert!((r.major_axis - r.minor_axis).abs() < 1e-9);
    }

    #[test]
    fn disk_matches_analytic_circle() {
        let radius = 30.0;
        let r = only_region(&disk(radius, 71));
        let area = PI * radius * radius;
        let perim = 2.0 * PI * radius;
        assert!((r.area as f64 - area).abs() / area < 0.02, "area {}", r.area);
        assert!((r.perimeter - perim).abs() / perim < 0.05, "perimeter {}", r.perimeter);
        assert!(r.convex_area >= r.area as f64);
        assert!(r.convex_perimeter <= r.perimeter + 1e-9);
        assert!((r.major_axis - 2.0 * radius).abs() < 1.0);
    }

    #[test]
    fn rectangle_axes_follow_sides() {
        let r = only_region(&rect(10, 40, 2));
        let k = 4.0 / 12f64.sqrt();
        assert!((r.major_axis - 40.0 * k).abs() < 1e-9);
        assert!((r.minor_axis - 10.0 * k).abs() < 1e-9);
        assert!(r.orientation.abs() < 1e-9);
        let t = only_region(&rect(40, 10, 2));
        assert!((t.orientation.abs() - PI / 2.0).abs() < 1e-9);
    }

    #[test]
    fn line_segment_hull_counts_lattice_points() {
        let r = Region::from_pixels(1, (0..7).map(|c| (2, c)).collect());
        assert_eq!(r.convex_area, 7.0);
        assert!((r.convex_perimeter - 12.0).abs() < 1e-12);
        assert!((r.perimeter - 12.0).abs() < 1e-12);
    }

    #[test]
    fn contour_of_thin_diagonal() {
        let r = Region::from_pixels(1, vec![(0, 0), (1, 1), (2, 2)]);
        assert!((r.perimeter - 4.0 * SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn contour_ignores_holes() {
        let mut m = rect(9, 9, 1);
        m.set(5, 5, false);
        let r = only_region(&m);
        assert!((r.perimeter - 32.0).abs() < 1e-9);
        assert_eq!(r.convex_area, 81.0);
        assert_eq!(r.area, 80);
    }

    #[test]
    fn areas_sum_to_foreground() {
        let m = BinaryMask::from_fn(30, 20, |r, c| (r * 7 + c * 3) % 5 < 2).unwrap();
        let regions = extract_regions(&connected_components(&m, Connectivity::Four));
        let total: usize = regions.iter().map(|r| r.area).sum();
        assert_eq!(total, m.count());
    }

    #[test]
    fn recomputation_from_pixels_is_identical() {
        let r = only_region(&disk(12.5, 31));
        let again = Region::from_pixels(r.label, r.pixels.clone());
        assert_eq!(again.perimeter, r.perimeter);
        assert_eq!(again.convex_area, r.convex_area);
        assert_eq!(again.major_axis, r.major_axis);
        assert_eq!(again.centroid, r.centroid);
    }

    #[test]
    fn expanded_box_is_clamped() {
        let b = BoundingBox {
            top: 5,
            left: 5,
            height: 20,
            width: 20,
        };
        let e = b.expanded(2, 100, 100);
        assert_eq!((e.top, e.left, e.height, e.width), (3, 3, 24, 24));
        let edge = BoundingBox {
            top: 0,
            left: 1,
            height: 4,
            width: 9,
        }
        .expanded(2, 10, 5);
        assert_eq!((edge.top, edge.left, edge.height, edge.width), (0, 0, 5, 10));
    }
}
