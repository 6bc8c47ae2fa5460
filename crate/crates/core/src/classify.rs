//! Benign/malignant classification: k-nearest neighbours on min-max
//! normalized features and Gaussian Naive Bayes, with confusion-matrix
//! evaluation and stratified cross-validation.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::features::{FeatureRow, FeatureVector, FEATURE_COUNT};

/// Persisted model format tag.
pub const MODEL_FORMAT: &str = "leuko-model/1";
pub const VARIANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malignant,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malignant => "malignant",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benign" => Ok(Label::Benign),
            "malignant" => Ok(Label::Malignant),
            other => Err(Error::Format(format!("unknown label `{other}` (benign|malignant)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: FeatureVector,
    pub label: Label,
    pub source_id: String,
}

/// Converts labelled feature-table rows; unlabelled rows are an error.
pub fn samples_from_rows(rows: &[FeatureRow]) -> Result<Vec<LabeledSample>> {
    rows.iter()
        .map(|row| {
            let label = row
                .label
                .as_deref()
                .ok_or_else(|| Error::Format(format!("row `{}` has no label", row.source_id)))?
                .parse()?;
            Ok(LabeledSample {
                features: row.features,
                label,
                source_id: row.source_id.clone(),
            })
        })
        .collect()
}

fn require_both_classes(samples: &[LabeledSample]) -> Result<()> {
    let has = |l| samples.iter().any(|s| s.label == l);
    if !has(Label::Benign) || !has(Label::Malignant) {
        return invalid("training data must contain both classes");
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub samples: Vec<LabeledSample>,
}

impl KnnModel {
    /// Maps raw features to [0, 1] by the training ranges; a zero-width
    /// range maps to 0.
    pub fn normalize(&self, x: &FeatureVector) -> [f64; FEATURE_COUNT] {
        let mut out = x.to_array();
        for (i, v) in out.iter_mut().enumerate() {
            let range = self.maxs[i] - self.mins[i];
            *v = if range > 0.0 { (*v - self.mins[i]) / range } else { 0.0 };
        }
        out
    }

    /// The k nearest training samples as (distance, index), nearest first;
    /// equal distances are ordered by source id.
    pub fn neighbors(&self, x: &FeatureVector) -> Vec<(f64, usize)> {
        let q = self.normalize(x);
        let mut dists: Vec<(f64, usize)> = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let p = self.normalize(&s.features);
                let d2: f64 = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2.sqrt(), i)
            })
            .collect();
        dists.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| self.samples[a.1].source_id.cmp(&self.samples[b.1].source_id))
                .then(a.1.cmp(&b.1))
        });
        dists.truncate(self.k);
        dists
    }
}

pub fn knn_train(samples: &[LabeledSample], k: usize) -> Result<KnnModel> {
    if k == 0 || k.is_multiple_of(2) {
        return invalid(format!("k must be odd and positive, got {k}"));
    }
    if samples.len() < k {
        return invalid(format!("k = {k} exceeds the {} training samples", samples.len()));
    }
    require_both_classes(samples)?;
    let mut mins = vec![f64::INFINITY; FEATURE_COUNT];
    let mut maxs = vec![f64::NEG_INFINITY; FEATURE_COUNT];
    for s in samples {
        for (i, v) in s.features.to_array().into_iter().enumerate() {
            mins[i] = mins[i].min(v);
            maxs[i] = maxs[i].max(v);
        }
    }
    Ok(KnnModel {
        k,
        mins,
        maxs,
        samples: samples.to_vec(),
    })
}

pub fn knn_predict(model: &KnnModel, x: &FeatureVector) -> Label {
    let malignant = model
        .neighbors(x)
        .iter()
        .filter(|(_, i)| model.samples[*i].label == Label::Malignant)
        .count();
    if 2 * malignant > model.k {
        Label::Malignant
    } else {
        Label::Benign
    }
}

/// Gaussian Naive Bayes parameters, indexed by [`Label`] (benign first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub priors: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NbPrediction {
    pub label: Label,
    /// Posterior of the predicted label.
    pub posterior: f64,
    pub posterior_benign: f64,
    pub posterior_malignant: f64,
}

pub fn nb_train(samples: &[LabeledSample]) -> Result<NaiveBayesModel> {
    require_both_classes(samples)?;
    let mut counts = [0usize; 2];
    let mut means = [vec![0.0; FEATURE_COUNT], vec![0.0; FEATURE_COUNT]];
    for s in samples {
        let c = s.label.index();
        counts[c] += 1;
        for (m, v) in means[c].iter_mut().zip(s.features.to_array()) {
            *m += v;
        }
    }
    for c in 0..2 {
        for m in &mut means[c] {
            *m /= counts[c] as f64;
        }
    }
    let mut variances = [vec![0.0; FEATURE_COUNT], vec![0.0; FEATURE_COUNT]];
    for s in samples {
        let c = s.label.index();
        for (i, v) in s.features.to_array().into_iter().enumerate() {
            variances[c][i] += (v - means[c][i]).powi(2);
        }
    }
    for c in 0..2 {
        for v in &mut variances[c] {
            *v = (*v / counts[c] as f64).max(VARIANCE_FLOOR);
        }
    }
    let n = samples.len() as f64;
    Ok(NaiveBayesModel {
        priors: [counts[0] as f64 / n, counts[1] as f64 / n],
        means,
        variances,
    })
}

impl NaiveBayesModel {
    /// log P(c) + Σ log N(x_i; μ_ci, σ²_ci) per class.
    pub fn log_joint(&self, x: &FeatureVector) -> [f64; 2] {
        let x = x.to_array();
        let mut out = [0.0; 2];
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.priors[c].ln();
            for i in 0..FEATURE_COUNT {
                let var = self.variances[c][i];
                let d = x[i] - self.means[c][i];
                *o -= 0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var);
            }
        }
        out
    }
}

pub fn nb_predict(model: &NaiveBayesModel, x: &FeatureVector) -> NbPrediction {
    let [lb, lm] = model.log_joint(x);
    let top = lb.max(lm);
    let (eb, em) = ((lb - top).exp(), (lm - top).exp());
    let (pb, pm) = (eb / (eb + em), em / (eb + em));
    let label = if lm > lb { Label::Malignant } else { Label::Benign };
    NbPrediction {
        label,
        posterior: if label == Label::Malignant { pm } else { pb },
        posterior_benign: pb,
        posterior_malignant: pm,
    }
}

/// A trained classifier of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Knn(KnnModel),
    NaiveBayes(NaiveBayesModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Knn,
    Nb,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "knn" => Ok(ModelKind::Knn),
            "nb" => Ok(ModelKind::Nb),
            other => Err(format!("unknown model kind `{other}` (knn|nb)")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    model: Model,
}

impl Model {
    pub fn train(kind: ModelKind, samples: &[LabeledSample], k: usize) -> Result<Model> {
        Ok(match kind {
            ModelKind::Knn => Model::Knn(knn_train(samples, k)?),
            ModelKind::Nb => Model::NaiveBayes(nb_train(samples)?),
        })
    }

    pub fn predict(&self, x: &FeatureVector) -> Label {
        match self {
            Model::Knn(m) => knn_predict(m, x),
            Model::NaiveBayes(m) => nb_predict(m, x).label,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument {
            format: MODEL_FORMAT.into(),
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Format(format!("unsupported model format `{}`", doc.format)));
        }
        Ok(doc.model)
    }
}

/// Counts with malignant as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// A ratio that may be undefined because its denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ratio {
    Defined(f64),
    Undefined { reason: String },
}

impl Ratio {
    fn of(num: usize, den: usize, reason: &str) -> Ratio {
        if den == 0 {
            Ratio::Undefined { reason: reason.into() }
        } else {
            Ratio::Defined(num as f64 / den as f64)
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Ratio::Defined(v) => Some(*v),
            Ratio::Undefined { .. } => None,
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Defined(v) => write!(f, "{v:.4}"),
            Ratio::Undefined { reason } => write!(f, "undefined ({reason})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub sensitivity: Ratio,
    pub specificity: Ratio,
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Malignant, Label::Malignant) => self.tp += 1,
            (Label::Benign, Label::Malignant) => self.fp += 1,
            (Label::Benign, Label::Benign) => self.tn += 1,
            (Label::Malignant, Label::Benign) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            accuracy: (self.tp + self.tn) as f64 / self.total().max(1) as f64,
            sensitivity: Ratio::of(self.tp, self.tp + self.fn_, "no malignant samples"),
            specificity: Ratio::of(self.tn, self.tn + self.fp, "no benign samples"),
        }
    }
}

pub fn evaluate(model: &Model, test: &[LabeledSample]) -> Result<(ConfusionMatrix, Metrics)> {
    if test.is_empty() {
        return invalid("test set must not be empty");
    }
    let mut cm = ConfusionMatrix::default();
    for s in test {
        cm.record(s.label, model.predict(&s.features));
    }
    let m = cm.metrics();
    Ok((cm, m))
}

/// Seeded stratified fold index per sample: each class is shuffled and dealt
/// round-robin, the fold counter carrying over from one class to the next.
pub fn stratified_folds(samples: &[LabeledSample], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return invalid("folds must be at least 2");
    }
    if folds > samples.len() {
        return invalid(format!("{folds} folds exceed the {} samples", samples.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; samples.len()];
    let mut counter = 0;
    for label in [Label::Benign, Label::Malignant] {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == label).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assignment[i] = counter % folds;
            counter += 1;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_size: usize,
    pub knn: ConfusionMatrix,
    pub nb: ConfusionMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population mean and standard deviation; `None` entries are skipped.
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Option<MeanStd> {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(MeanStd { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: MeanStd,
    pub sensitivity: Option<MeanStd>,
    pub specificity: Option<MeanStd>,
}

impl Aggregate {
    fn over(cms: &[ConfusionMatrix]) -> Aggregate {
        let ms: Vec<Metrics> = cms.iter().map(|c| c.metrics()).collect();
        Aggregate {
            accuracy: MeanStd::of(ms.iter().map(|m| Some(m.accuracy))).expect("at least one fold"),
            sensitivity: MeanStd::of(ms.iter().map(|m| m.sensitivity.value())),
            specificity: MeanStd::of(ms.iter().map(|m| m.specificity.value())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub seed: u64,
    pub knn_k: usize,
    pub assignment: Vec<usize>,
    pub per_fold: Vec<FoldResult>,
    pub knn: Aggregate,
    pub nb: Aggregate,
}

/// Trains and scores both classifiers on every fold.
pub fn cross_validate(samples: &[LabeledSample], folds: usize, seed: u64, knn_k: usize) -> Result<CvReport> {
    let assignment = stratified_folds(samples, folds, seed)?;
    let mut per_fold = Vec::with_capacity(folds);
    for f in 0..folds {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (s, &a) in samples.iter().zip(&assignment) {
            if a == f { test.push(s.clone()) } else { train.push(s.clone()) }
        }
        if require_both_classes(&train).is_err() {
            return invalid(format!("fold {f}: training split lacks a class; use fewer folds"));
        }
        let knn = Model::Knn(knn_train(&train, knn_k)?);
        let nb = Model::NaiveBayes(nb_train(&train)?);
        per_fold.push(FoldResult {
            fold: f,
            test_size: test.len(),
            knn: evaluate(&knn, &test)?.0,
            nb: evaluate(&nb, &test)?.0,
        });
    }
    let knn_cms: Vec<ConfusionMatrix> = per_fold.iter().map(|r| r.knn).collect();
    let nb_cms: Vec<ConfusionMatrix> = per_fold.iter().map(|r| r.nb).collect();
    Ok(CvReport {
        folds,
        seed,
        knn_k,
        assignment,
        per_fold,
        knn: Aggregate::over(&knn_cms),
        nb: Aggregate::over(&nb_cms),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(first: f64) -> FeatureVector {
        let mut v = [1.0; FEATURE_COUNT];
        v[0] = first;
        FeatureVector::from_slice(&v).unwrap()
    }

    fn sample(x: f64, label: Label, id: &str) -> LabeledSample {
        LabeledSample {
            features: fv(x),
            label,
            source_id: id.into(),
        }
    }

    fn line(n: usize) -> Vec<LabeledSample> {
        (0..n)
            .map(|i| {
                let label = if i < n / 2 { Label::Benign } else { Label::Malignant };
                sample(i as f64, label, &format!("s{i:03}"))
            })
            .collect()
    }

    #[test]
    fn knn_stores_training_points() {
        let m = knn_train(&line(10), 5).unwrap();
        assert_eq!(m.samples.len(), 10);
        assert!(knn_train(&line(10), 11).is_err());
        assert!(knn_train(&line(10), 4).is_err());
        let one_class: Vec<_> = line(10).into_iter().filter(|s| s.label == Label::Benign).collect();
        assert!(knn_train(&one_class, 1).is_err());
    }

    #[test]
    fn constant_column_normalizes_to_zero() {
        let m = knn_train(&line(10), 3).unwrap();
        let n = m.normalize(&fv(4.5));
        assert_eq!(n[1], 0.0);
        assert!((n[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn knn_exact_match_and_majority() {
        let data = line(10);
        let m = knn_train(&data, 1).unwrap();
        assert_eq!(knn_predict(&m, &fv(7.0)), Label::Malignant);
        let data = vec![
            sample(0.0, Label::Malignant, "a"),
            sample(0.1, Label::Malignant, "b"),
            sample(0.2, Label::Benign, "c"),
            sample(10.0, Label::Benign, "d"),
            sample(11.0, Label::Benign, "e"),
        ];
        let m = knn_train(&data, 3).unwrap();
        assert_eq!(knn_predict(&m, &fv(0.05)), Label::Malignant);
    }

    #[test]
    fn knn_ties_follow_source_id() {
        let data = vec![
            sample(1.0, Label::Malignant, "z"),
            sample(-1.0, Label::Benign, "a"),
            sample(5.0, Label::Malignant, "m"),
        ];
        let m = knn_train(&data, 1).unwrap();
        assert_eq!(knn_predict(&m, &fv(0.0)), Label::Benign);
    }

    #[test]
    fn nb_boundary_and_priors() {
        let mut data = Vec::new();
        for (i, d) in [-1.0, 1.0].iter().enumerate() {
            data.push(sample(0.0 + d, Label::Benign, &format!("b{i}")));
            data.push(sample(10.0 + d, Label::Malignant, &format!("m{i}")));
        }
        let m = nb_train(&data).unwrap();
        assert_eq!(m.priors, [0.5, 0.5]);
        let mid = nb_predict(&m, &fv(5.0));
        assert_eq!(mid.label, Label::Benign);
        assert!((mid.posterior_benign - 0.5).abs() < 1e-9);
        assert_eq!(nb_predict(&m, &fv(4.9)).label, Label::Benign);
        assert_eq!(nb_predict(&m, &fv(5.1)).label, Label::Malignant);
        let at_mean = nb_predict(&m, &fv(10.0));
        assert_eq!(at_mean.label, Label::Malignant);
        assert!(at_mean.posterior > 0.99);
        assert!((at_mean.posterior_benign + at_mean.posterior_malignant - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nb_priors_from_counts() {
        let data: Vec<_> = (0..60)
            .map(|i| sample(i as f64, if i < 20 { Label::Benign } else { Label::Malignant }, &i.to_string()))
            .collect();
        let m = nb_train(&data).unwrap();
        assert!((m.priors[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.priors[1] - 2.0 / 3.0).abs() < 1e-12);
        // Constant columns are floored rather than zero.
        assert_eq!(m.variances[0][1], VARIANCE_FLOOR);
    }

    #[test]
    fn metrics_from_counts() {
        let cm = ConfusionMatrix { tp: 26, fp: 4, tn: 26, fn_: 4 };
        assert_eq!(cm.total(), 60);
        let cm56 = ConfusionMatrix { tp: 26, fp: 2, tn: 26, fn_: 2 };
        assert!((cm56.metrics().accuracy - 0.928).abs() < 1e-3);
        let benign_only = ConfusionMatrix { tp: 0, fp: 1, tn: 3, fn_: 0 };
        assert!(benign_only.metrics().sensitivity.value().is_none());
        assert_eq!(benign_only.metrics().specificity, Ratio::Defined(0.75));
    }

    #[test]
    fn perfect_predictions() {
        let data = line(10);
        let m = Model::train(ModelKind::Knn, &data, 1).unwrap();
        let (cm, met) = evaluate(&m, &data).unwrap();
        assert_eq!(cm.total(), 10);
        assert_eq!(met.accuracy, 1.0);
        assert_eq!(met.sensitivity, Ratio::Defined(1.0));
        assert_eq!(met.specificity, Ratio::Defined(1.0));
        assert!(evaluate(&m, &[]).is_err());
    }

    #[test]
    fn folds_are_stratified_and_seeded() {
        let data = line(20);
        let a = stratified_folds(&data, 5, 3).unwrap();
        assert_eq!(a, stratified_folds(&data, 5, 3).unwrap());
        for f in 0..5 {
            let members: Vec<_> = (0..20).filter(|&i| a[i] == f).collect();
            assert_eq!(members.len(), 4);
            assert_eq!(members.iter().filter(|&&i| data[i].label == Label::Benign).count(), 2);
        }
        assert!(stratified_folds(&data, 1, 0).is_err());
        assert!(stratified_folds(&data, 21, 0).is_err());
    }

    #[test]
    fn leave_one_out_on_separable_data() {
        let data: Vec<_> = line(12)
            .into_iter()
            .map(|mut s| {
                if s.label == Label::Malignant {
                    s.features.area += 100.0;
                }
                s
            })
            .collect();
        let r = cross_validate(&data, 12, 1, 1).unwrap();
        assert_eq!(r.knn.accuracy.mean, 1.0);
        assert_eq!(r.nb.accuracy.mean, 1.0);
    }

    #[test]
    fn model_json_round_trip() {
        let data = line(10);
        for kind in [ModelKind::Knn, ModelKind::Nb] {
            let m = Model::train(kind, &data, 3).unwrap();
            assert_eq!(Model::from_json(&m.to_json().unwrap()).unwrap(), m);
        }
        assert!(Model::from_json(r#"{"format":"other","model":{"kind":"knn"}}"#).is_err());
    }
}
