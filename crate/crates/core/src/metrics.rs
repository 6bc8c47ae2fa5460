//! Segmentation agreement metrics: Probabilistic Rand Index, Variation of
//! Information and Global Consistency Error.
//!
//! All three are computed from label contingency tables in O(N + L²) and are
//! invariant to renaming labels. Label 0 is treated as an ordinary segment.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kmeans::{FeatureSpace, KMeansConfig};
use crate::raster::{check_dims, LabelMap, RasterImage};
use crate::segment::segment_image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegEvalReport {
    pub pri: f64,
    /// Bits.
    pub voi: f64,
    pub gce: f64,
}

/// A non-empty set of same-shape reference segmentations.
#[derive(Debug, Clone)]
pub struct GroundTruthSet {
    segmentations: Vec<LabelMap>,
}

impl GroundTruthSet {
    pub fn new(segmentations: Vec<LabelMap>) -> Result<Self> {
        let Some(first) = segmentations.first() else {
            return invalid("ground-truth set must not be empty");
        };
        for s in &segmentations[1..] {
            check_dims(first.dims(), s.dims())?;
        }
        Ok(Self { segmentations })
    }

    pub fn single(truth: LabelMap) -> Self {
        Self {
            segmentations: vec![truth],
        }
    }

    pub fn segmentations(&self) -> &[LabelMap] {
        &self.segmentations
    }

    pub fn dims(&self) -> (usize, usize) {
        self.segmentations[0].dims()
    }
}

struct Contingency {
    n: u64,
    rows: HashMap<u32, u64>,
    cols: HashMap<u32, u64>,
    joint: HashMap<(u32, u32), u64>,
}

impl Contingency {
    fn new(a: &LabelMap, b: &LabelMap) -> Result<Self> {
        check_dims(a.dims(), b.dims())?;
        let mut rows = HashMap::new();
        let mut cols = HashMap::new();
        let mut joint = HashMap::new();
        for (&x, &y) in a.labels().iter().zip(b.labels()) {
            *rows.entry(x).or_insert(0) += 1;
            *cols.entry(y).or_insert(0) += 1;
            *joint.entry((x, y)).or_insert(0) += 1;
        }
        Ok(Self {
            n: a.len() as u64,
            rows,
            cols,
            joint,
        })
    }
}

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

fn sum_pairs<'a>(counts: impl Iterator<Item = &'a u64>) -> u64 {
    counts.map(|&c| pairs(c)).sum()
}

/// Probabilistic Rand Index of `test` against a set of ground truths: the
/// fraction of pixel pairs on which `test` agrees with the ground-truth
/// probability that the pair shares a label.
pub fn pri(test: &LabelMap, truths: &GroundTruthSet) -> Result<f64> {
    check_dims(test.dims(), truths.dims())?;
    if test.len() < 2 {
        return invalid("PRI needs at least two pixels");
    }
    let total = pairs(test.len() as u64) as f64;
    let mut agree = 0.0;
    for truth in truths.segmentations() {
        let t = Contingency::new(test, truth)?;
        let same_test = sum_pairs(t.rows.values());
        let same_truth = sum_pairs(t.cols.values());
        let same_both = sum_pairs(t.joint.values());
        // Pairs on which test and this truth agree.
        let agreeing = pairs(t.n) + 2 * same_both - same_test - same_truth;
        agree += agreeing as f64;
    }
    Ok(agree / truths.segmentations().len() as f64 / total)
}

fn entropy_bits<'a>(counts: impl Iterator<Item = &'a u64>, n: f64) -> f64 {
    counts
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Variation of Information H(X) + H(Y) − 2·I(X;Y), in bits.
pub fn voi(x: &LabelMap, y: &LabelMap) -> Result<f64> {
    let t = Contingency::new(x, y)?;
    let n = t.n as f64;
    let hx = entropy_bits(t.rows.values(), n);
    let hy = entropy_bits(t.cols.values(), n);
    let hxy = entropy_bits(t.joint.values(), n);
    // I = H(X) + H(Y) − H(X,Y).
    Ok((2.0 * hxy - hx - hy).max(0.0))
}

/// Global Consistency Error: per-pixel local refinement error
/// E(s, g, p) = |R(s,p) \ R(g,p)| / |R(s,p)|, summed in each direction,
/// with the smaller sum divided by the pixel count.
pub fn gce(s: &LabelMap, g: &LabelMap) -> Result<f64> {
    let t = Contingency::new(s, g)?;
    let (mut s_to_g, mut g_to_s) = (0.0, 0.0);
    for (&(a, b), &nab) in &t.joint {
        let na = t.rows[&a] as f64;
        let nb = t.cols[&b] as f64;
        let nab = nab as f64;
        s_to_g += nab * (na - nab) / na;
        g_to_s += nab * (nb - nab) / nb;
    }
    Ok(s_to_g.min(g_to_s) / t.n as f64)
}

pub fn evaluate(test: &LabelMap, truths: &GroundTruthSet) -> Result<SegEvalReport> {
    let pri = pri(test, truths)?;
    let k = truths.segmentations().len() as f64;
    let mut voi_sum = 0.0;
    let mut gce_sum = 0.0;
    for truth in truths.segmentations() {
        voi_sum += voi(test, truth)?;
        gce_sum += gce(test, truth)?;
    }
    Ok(SegEvalReport {
        pri,
        voi: voi_sum / k,
        gce: gce_sum / k,
    })
}

/// Adjusted Rand Index between two labelings of the same pixels.
pub fn adjusted_rand_index(a: &LabelMap, b: &LabelMap) -> Result<f64> {
    let t = Contingency::new(a, b)?;
    let index = sum_pairs(t.joint.values()) as f64;
    let sa = sum_pairs(t.rows.values()) as f64;
    let sb = sum_pairs(t.cols.values()) as f64;
    let total = pairs(t.n) as f64;
    let expected = sa * sb / total;
    let max = (sa + sb) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub segmenter: String,
    pub report: SegEvalReport,
}

/// Display name for a clustering variant.
pub fn segmenter_name(space: FeatureSpace) -> &'static str {
    match space {
        FeatureSpace::Color => "Color k-means",
        FeatureSpace::Intensity => "k-means",
        FeatureSpace::Texture => "Texture based",
    }
}

/// Scores each clustering variant against the ground truths.
pub fn compare_segmenters(img: &RasterImage, truths: &GroundTruthSet, configs: &[KMeansConfig]) -> Result<Vec<ComparisonRow>> {
    if configs.is_empty() {
        return invalid("at least one segmenter configuration is required");
    }
    configs
        .iter()
        .map(|cfg| {
            let seg = segment_image(img, cfg)?;
            Ok(ComparisonRow {
                segmenter: segmenter_name(cfg.feature_space).to_string(),
                report: evaluate(&seg.assignments, truths)?,
            })
        })
        .collect()
}

/// CSV in the column order PRI, GCE, VOI.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("segmenter,PRI,GCE,VOI\n");
    for row in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            row.segmenter, row.report.pri, row.report.gce, row.report.voi
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, h: usize, v: &[u32]) -> LabelMap {
        LabelMap::new(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn identical_maps() {
        let x = map(3, 2, &[1, 1, 2, 2, 3, 3]);
        assert_eq!(pri(&x, &GroundTruthSet::single(x.clone())).unwrap(), 1.0);
        assert_eq!(voi(&x, &x).unwrap(), 0.0);
        assert_eq!(gce(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn two_pixel_disagreement() {
        let test = map(2, 1, &[1, 1]);
        let truth = map(2, 1, &[1, 2]);
        assert_eq!(pri(&test, &GroundTruthSet::single(truth)).unwrap(), 0.0);
    }

    #[test]
    fn single_pixel_rejected() {
        let x = map(1, 1, &[0]);
        assert!(pri(&x, &GroundTruthSet::single(x.clone())).is_err());
    }

    #[test]
    fn one_cluster_vs_halves() {
        let x = map(4, 1, &[1, 1, 1, 1]);
        let y = map(4, 1, &[1, 1, 2, 2]);
        assert!((voi(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        // y refines x, so the g→s direction is error-free.
        assert_eq!(gce(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = map(2, 2, &[0; 4]);
        let b = map(4, 1, &[0; 4]);
        assert!(voi(&a, &b).is_err());
        assert!(gce(&a, &b).is_err());
        assert!(GroundTruthSet::new(vec![a, b]).is_err());
        assert!(GroundTruthSet::new(vec![]).is_err());
    }

    #[test]
    fn multiple_truths_average_pair_probabilities() {
        let test = map(2, 1, &[1, 1]);
        let same = map(2, 1, &[5, 5]);
        let diff = map(2, 1, &[5, 6]);
        let truths = GroundTruthSet::new(vec![same, diff]).unwrap();
        assert!((pri(&test, &truths).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ari_of_permuted_labels_is_one() {
        let a = map(6, 1, &[1, 1, 2, 2, 3, 3]);
        let b = map(6, 1, &[7, 7, 4, 4, 9, 9]);
        assert!((adjusted_rand_index(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_column_order() {
        let rows = vec![ComparisonRow {
            segmenter: "k-means".into(),
            report: SegEvalReport {
                pri: 0.942,
                voi: 0.092,
                gce: 0.0091,
            },
        }];
        assert_eq!(
            comparison_csv(&rows),
            "segmenter,PRI,GCE,VOI\nk-means,0.942000,0.009100,0.092000\n"
        );
    }
}
