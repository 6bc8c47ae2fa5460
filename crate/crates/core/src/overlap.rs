//! Detection of grouped (touching or overlapping) leucocytes and their
//! separation.
//!
//! A region is a single leucocyte when its roundness exceeds the threshold,
//! otherwise it is grouped. Regions with solidity below the solidity
//! threshold are abnormal and dropped. Grouped regions are split by a
//! marker-controlled watershed on the Euclidean distance transform.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::raster::{connected_components, BinaryMask, Connectivity, LabelMap};
use crate::region::Region;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Separation {
    None,
    Watershed,
}

impl std::str::FromStr for Separation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(Separation::None),
            "watershed" => Ok(Separation::Watershed),
            other => Err(format!("unknown separation `{other}` (none|watershed)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlapConfig {
    pub roundness_threshold: f64,
    pub solidity_threshold: f64,
    pub separation: Separation,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        Self {
            roundness_threshold: 0.80,
            solidity_threshold: 0.80,
            separation: Separation::Watershed,
        }
    }
}

impl OverlapConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("roundness_threshold", self.roundness_threshold),
            ("solidity_threshold", self.solidity_threshold),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return invalid(format!("{name} must lie in (0, 1]"));
            }
        }
        Ok(())
    }
}

/// 4π·area / convex_perimeter². Degenerate hulls (single pixel) give 1.
pub fn roundness(region: &Region) -> f64 {
    if region.convex_perimeter <= 0.0 {
        return 1.0;
    }
    4.0 * PI * region.area as f64 / (region.convex_perimeter * region.convex_perimeter)
}

/// area / convex_area.
pub fn solidity(region: &Region) -> f64 {
    if region.convex_area <= 0.0 {
        return 1.0;
    }
    region.area as f64 / region.convex_area
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Disposition {
    Single,
    Grouped,
    Removed,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionAssessment {
    pub label: u32,
    pub area: usize,
    pub roundness: f64,
    pub solidity: f64,
    pub disposition: Disposition,
}

#[derive(Debug, Clone, Default)]
pub struct OverlapPartition {
    pub singles: Vec<Region>,
    pub grouped: Vec<Region>,
    pub removed: Vec<Region>,
    pub assessments: Vec<RegionAssessment>,
}

pub fn assess(region: &Region, cfg: &OverlapConfig) -> RegionAssessment {
    let r = roundness(region);
    let s = solidity(region);
    let disposition = if s < cfg.solidity_threshold {
        Disposition::Removed
    } else if r > cfg.roundness_threshold {
        Disposition::Single
    } else {
        Disposition::Grouped
    };
    RegionAssessment {
        label: region.label,
        area: region.area,
        roundness: r,
        solidity: s,
        disposition,
    }
}

/// Splits regions into singles (roundness above threshold) and grouped
/// (at or below); low-solidity regions go to `removed`.
pub fn classify_single_vs_grouped(regions: Vec<Region>, cfg: &OverlapConfig) -> OverlapPartition {
    let mut out = OverlapPartition::default();
    for region in regions {
        let a = assess(&region, cfg);
        match a.disposition {
            Disposition::Single => out.singles.push(region),
            Disposition::Grouped => out.grouped.push(region),
            Disposition::Removed => out.removed.push(region),
        }
        out.assessments.push(a);
    }
    out
}

/// Exact Euclidean distance from each foreground pixel to the nearest
/// background pixel; everything outside the frame counts as background.
pub fn distance_transform(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = mask.dims();
    let (pw, ph) = (w + 2, h + 2);
    let inf = ((pw * pw + ph * ph) * 4) as f64;
    let mut grid = vec![0.0; pw * ph];
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) {
                grid[(r + 1) * pw + c + 1] = inf;
            }
        }
    }
    let mut line = Vec::with_capacity(pw.max(ph));
    let mut out_line = vec![0.0; pw.max(ph)];
    for c in 0..pw {
        line.clear();
        line.extend((0..ph).map(|r| grid[r * pw + c]));
        edt_1d(&line, &mut out_line[..ph]);
        for r in 0..ph {
            grid[r * pw + c] = out_line[r];
        }
    }
    for r in 0..ph {
        line.clear();
        line.extend_from_slice(&grid[r * pw..(r + 1) * pw]);
        edt_1d(&line, &mut out_line[..pw]);
        grid[r * pw..(r + 1) * pw].copy_from_slice(&out_line[..pw]);
    }
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            out.push(grid[(r + 1) * pw + c + 1].sqrt());
        }
    }
    out
}

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher).
fn edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let intersect = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    for q in 1..n {
        // z[0] is -inf, so the loop always stops at k = 0.
        let mut s = intersect(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        *out = (q as f64 - p as f64).powi(2) + f[p];
    }
}

fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Minimum marker spacing for a typical single-cell area: half the
/// equivalent radius.
pub fn marker_separation(cell_area: f64) -> f64 {
    0.5 * (cell_area / PI).sqrt()
}

/// Splits grouped leucocytes in `mask`. The marker spacing is derived from
/// `reference_area` (median single-cell area) or, when absent, from the
/// median component area of the mask itself.
pub fn separate_grouped(mask: &BinaryMask, cfg: &OverlapConfig, reference_area: Option<f64>) -> LabelMap {
    let components = connected_components(mask, Connectivity::Eight);
    if cfg.separation == Separation::None || mask.is_empty() {
        return components;
    }
    let area = reference_area.or_else(|| {
        let mut counts = vec![0usize; components.max_label() as usize + 1];
        for &l in components.labels() {
            counts[l as usize] += 1;
        }
        median(counts.into_iter().skip(1).map(|c| c as f64).collect())
    });
    let min_sep = marker_separation(area.unwrap_or(1.0));
    watershed_split(mask, &components, min_sep)
}

/// Regional maxima whose dynamic is below this (in pixels) are grid
/// artefacts, e.g. the saddle between two obliquely fused disks.
pub const MARKER_DYNAMIC: f64 = 1.0;

/// Regional maxima of `dist` with dynamic at least `h`: flooding from the
/// top, a maximum's dynamic is its height above the level where its basin
/// first meets one with a higher peak. The global peak of each component
/// always qualifies.
fn prominent_maxima(dist: &[f64], w: usize, h: usize, min_dynamic: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..w * h).filter(|&i| dist[i] > 0.0).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));

    const UNSEEN: usize = usize::MAX;
    let mut parent = vec![UNSEEN; w * h];
    // Peak pixel of each root.
    let mut peak = vec![UNSEEN; w * h];
    let mut dynamic = vec![f64::INFINITY; w * h];
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let higher = |a: usize, b: usize| dist[a] > dist[b] || (dist[a] == dist[b] && a < b);

    for &i in &order {
        parent[i] = i;
        peak[i] = i;
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        for &(dr, dc) in Connectivity::Eight.offsets() {
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                continue;
            }
            let j = nr as usize * w + nc as usize;
            if parent[j] == UNSEEN {
                continue;
            }
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri == rj {
                continue;
            }
            let (pi, pj) = (peak[ri], peak[rj]);
            let (keep, lose) = if higher(pi, pj) { (ri, rj) } else { (rj, ri) };
            let lost_peak = peak[lose];
            if lost_peak != i {
                dynamic[lost_peak] = dynamic[lost_peak].min(dist[lost_peak] - dist[i]);
            } else {
                dynamic[i] = 0.0;
            }
            parent[lose] = keep;
        }
    }
    order
        .into_iter()
        .filter(|&i| peak[i] == i && dynamic[i] >= min_dynamic)
        .collect()
}

fn watershed_split(mask: &BinaryMask, components: &LabelMap, min_sep: f64) -> LabelMap {
    let (w, h) = mask.dims();
    let dist = distance_transform(mask);

    let candidates = prominent_maxima(&dist, w, h, MARKER_DYNAMIC);

    let mut markers: Vec<usize> = Vec::new();
    let min_sep2 = min_sep * min_sep;
    for &i in &candidates {
        let (r, c) = ((i / w) as f64, (i % w) as f64);
        let clash = markers.iter().any(|&m| {
            components.labels()[m] == components.labels()[i] && {
                let (mr, mc) = ((m / w) as f64, (m % w) as f64);
                (mr - r).powi(2) + (mc - c).powi(2) < min_sep2
            }
        });
        if !clash {
            markers.push(i);
        }
    }

    // Flood from the markers in order of decreasing distance.
    let mut labels = vec![0u32; w * h];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for (n, &m) in markers.iter().enumerate() {
        labels[m] = n as u32 + 1;
        heap.push((dist[m].to_bits(), Reverse(seq), m));
        seq += 1;
    }
    while let Some((_, _, i)) = heap.pop() {
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        for &(dr, dc) in Connectivity::Four.offsets() {
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                continue;
            }
            let j = nr as usize * w + nc as usize;
            if mask.bits()[j] && labels[j] == 0 {
                labels[j] = labels[i];
                heap.push((dist[j].to_bits(), Reverse(seq), j));
                seq += 1;
            }
        }
    }

    // Foreground unreachable through 4-adjacency keeps its own component.
    let mut next = markers.len() as u32;
    let mut fresh = std::collections::HashMap::new();
    for i in 0..w * h {
        if mask.bits()[i] && labels[i] == 0 {
            let key = components.labels()[i];
            labels[i] = *fresh.entry(key).or_insert_with(|| {
                next += 1;
                next
            });
        }
    }
    LabelMap::new(w, h, labels).expect("dims preserved").canonicalize()
}
