use proptest::prelude::*;

use leuko_core::classify::{knn_predict, knn_train, nb_predict, nb_train, stratified_folds, Label, LabeledSample};
use leuko_core::clean::{close, dilate, erode, open};
use leuko_core::config::PipelineConfig;
use leuko_core::features::{largest_region, shape_features, FeatureVector, Glcm, FEATURE_COUNT, GLCM_OFFSETS};
use leuko_core::kmeans::kmeans;
use leuko_core::metrics::{gce, pri, voi, GroundTruthSet};
use leuko_core::preprocess::median_filter;
use leuko_core::{connected_components, BinaryMask, Connectivity, LabelMap, RasterImage};

fn label_map(w: usize, h: usize, max: u32) -> impl Strategy<Value = LabelMap> {
    prop::collection::vec(0..max, w * h).prop_map(move |v| LabelMap::new(w, h, v).unwrap())
}

fn mask(w: usize, h: usize) -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(prop::bool::weighted(0.45), w * h).prop_map(move |v| BinaryMask::new(w, h, v).unwrap())
}

fn subset(a: &BinaryMask, b: &BinaryMask) -> bool {
    a.bits().iter().zip(b.bits()).all(|(&x, &y)| !x || y)
}

fn samples(rows: Vec<(Vec<f64>, bool)>) -> Vec<LabeledSample> {
    rows.into_iter()
        .enumerate()
        .map(|(i, (f, m))| LabeledSample {
            features: FeatureVector::from_slice(&f).unwrap(),
            label: if m { Label::Malignant } else { Label::Benign },
            source_id: format!("s{i:03}"),
        })
        .collect()
}

fn labelled_rows() -> impl Strategy<Value = Vec<(Vec<f64>, bool)>> {
    prop::collection::vec((prop::collection::vec(-5.0f64..5.0, FEATURE_COUNT), any::<bool>()), 6..40).prop_filter(
        "both classes",
        |rows| rows.iter().filter(|r| r.1).count() >= 2 && rows.iter().filter(|r| !r.1).count() >= 2,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_stay_in_range(a in label_map(9, 7, 4), b in label_map(9, 7, 4)) {
        let p = pri(&a, &GroundTruthSet::single(b.clone())).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        let v = voi(&a, &b).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!((v - voi(&b, &a).unwrap()).abs() < 1e-12);
        let g = gce(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&g));
        prop_assert!((g - gce(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pri_averages_over_truths(a in label_map(6, 6, 3), b in label_map(6, 6, 3), c in label_map(6, 6, 3)) {
        let both = pri(&a, &GroundTruthSet::new(vec![b.clone(), c.clone()]).unwrap()).unwrap();
        let pb = pri(&a, &GroundTruthSet::single(b)).unwrap();
        let pc = pri(&a, &GroundTruthSet::single(c)).unwrap();
        prop_assert!((both - (pb + pc) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn opening_and_closing_bracket_the_mask(m in mask(16, 14), radius in 1usize..3) {
        let o = open(&m, radius);
        let c = close(&m, radius);
        prop_assert!(subset(&o, &m));
        prop_assert!(subset(&m, &c));
        prop_assert_eq!(open(&o, radius), o.clone());
        prop_assert_eq!(close(&c, radius), c);
        prop_assert!(subset(&erode(&m, radius), &dilate(&m, radius)));
    }

    #[test]
    fn components_partition_the_foreground(m in mask(15, 12)) {
        let four = connected_components(&m, Connectivity::Four);
        let eight = connected_components(&m, Connectivity::Eight);
        prop_assert_eq!(four.foreground(), m.clone());
        prop_assert_eq!(eight.foreground(), m);
        prop_assert!(eight.region_count() <= four.region_count());
    }

    #[test]
    fn glcm_is_a_symmetric_distribution(
        data in prop::collection::vec(any::<u8>(), 12 * 10),
        levels in prop::sample::select(vec![2usize, 4, 8, 16]),
    ) {
        let img = RasterImage::new(12, 10, 1, data).unwrap();
        let all = BinaryMask::from_fn(12, 10, |_, _| true).unwrap();
        let g = Glcm::compute(&img, &all, levels, &GLCM_OFFSETS).unwrap();
        prop_assert!((g.matrix.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..levels {
            for j in 0..levels {
                prop_assert_eq!(g.p(i, j), g.p(j, i));
            }
        }
        let f = g.features();
        prop_assert!(f.energy > 0.0 && f.energy <= 1.0);
        prop_assert!(f.entropy >= 0.0 && f.entropy <= 2.0 * (levels as f64).log2() + 1e-12);
        prop_assert!(f.homogeneity > 0.0 && f.homogeneity <= 1.0 + 1e-12);
        prop_assert!(f.correlation.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn nb_posteriors_are_a_distribution(rows in labelled_rows(), q in prop::collection::vec(-8.0f64..8.0, FEATURE_COUNT)) {
        let model = nb_train(&samples(rows)).unwrap();
        let p = nb_predict(&model, &FeatureVector::from_slice(&q).unwrap());
        prop_assert!((0.0..=1.0).contains(&p.posterior_benign));
        prop_assert!((p.posterior_benign + p.posterior_malignant - 1.0).abs() < 1e-12);
        prop_assert!(p.posterior >= 0.5);
    }

    #[test]
    fn knn_ignores_training_order(rows in labelled_rows(), q in prop::collection::vec(-8.0f64..8.0, FEATURE_COUNT)) {
        let s = samples(rows);
        let mut reversed = s.clone();
        reversed.reverse();
        let q = FeatureVector::from_slice(&q).unwrap();
        let a = knn_predict(&knn_train(&s, 3).unwrap(), &q);
        let b = knn_predict(&knn_train(&reversed, 3).unwrap(), &q);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn one_nn_recalls_training_points(rows in labelled_rows()) {
        let s = samples(rows);
        let model = knn_train(&s, 1).unwrap();
        for x in &s {
            prop_assert_eq!(knn_predict(&model, &x.features), x.label);
        }
    }

    #[test]
    fn folds_are_stratified(rows in labelled_rows(), folds in 2usize..5, seed in any::<u64>()) {
        let s = samples(rows);
        let per_class = |m: bool| s.iter().filter(|x| (x.label == Label::Malignant) == m).count();
        prop_assume!(per_class(true) >= folds && per_class(false) >= folds);
        let assignment = stratified_folds(&s, folds, seed).unwrap();
        for m in [false, true] {
            let mut counts = vec![0usize; folds];
            for (x, &f) in s.iter().zip(&assignment) {
                if (x.label == Label::Malignant) == m {
                    counts[f] += 1;
                }
            }
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1, "{:?}", counts);
        }
    }

    #[test]
    fn kmeans_inertia_never_rises(
        points in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), 12..80),
        k in 2usize..5,
        seed in any::<u64>(),
    ) {
        let c = kmeans(&points, k, 50, 0.0, seed).unwrap();
        prop_assert!(c.inertia_history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(c.assignments.len(), points.len());
        prop_assert!(c.assignments.iter().all(|&a| a < k));
    }

    #[test]
    fn rectangle_shape_is_scale_and_rotation_stable(h in 30usize..60, w in 30usize..60) {
        let m = BinaryMask::from_fn(w + 4, h + 4, |r, c| (2..h + 2).contains(&r) && (2..w + 2).contains(&c)).unwrap();
        let base = shape_features(&largest_region(&m).unwrap());
        let big = shape_features(&largest_region(&m.upscale(2)).unwrap());
        let turned = shape_features(&largest_region(&m.rotate90()).unwrap());
        for i in 3..10 {
            prop_assert!((base[i] - big[i]).abs() <= 0.05, "feature {} {} vs {}", i, base[i], big[i]);
            prop_assert!((base[i] - turned[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn median_stays_within_neighbourhood_range(data in prop::collection::vec(any::<u8>(), 10 * 9)) {
        let img = RasterImage::new(10, 9, 1, data.clone()).unwrap();
        let out = median_filter(&img, 3).unwrap();
        let (lo, hi) = (*data.iter().min().unwrap(), *data.iter().max().unwrap());
        prop_assert!(out.data().iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn config_text_round_trips(k in 2usize..8, thr in 0.5f64..0.95, min_area in 1usize..500, seed in any::<u64>()) {
        let cfg = PipelineConfig::default()
            .with_overrides([
                ("kmeans.k", k.to_string().as_str()),
                ("overlap.roundness_threshold", thr.to_string().as_str()),
                ("clean.min_area", min_area.to_string().as_str()),
                ("seed", seed.to_string().as_str()),
            ])
            .unwrap();
        prop_assert_eq!(PipelineConfig::from_kv_str(&cfg.to_kv_string()).unwrap(), cfg);
    }
}
