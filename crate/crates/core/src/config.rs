//! Pipeline configuration: nested sections resolved from defaults, an
//! optional flat `section.key = value` file, and command-line overrides,
//! in that order.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::classify::ModelKind;
use crate::clean::CleanConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::kmeans::KMeansConfig;
use crate::overlap::OverlapConfig;
use crate::preprocess::PreprocessConfig;
use crate::synth::SmearSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    pub model: ModelKind,
    /// Neighbour count for kNN (odd).
    pub k: usize,
    pub folds: usize,
    /// Trained model applied by the pipeline, if any.
    pub model_path: Option<String>,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Knn,
            k: 5,
            folds: 5,
            model_path: None,
        }
    }
}

impl ClassifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k.is_multiple_of(2) {
            return Err(config_err("classify.k", "must be odd and positive"));
        }
        if self.folds < 2 {
            return Err(config_err("classify.folds", "must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Master seed for corpus generation and fold assignment.
    pub seed: u64,
    /// Worker threads for batch processing; 0 uses all cores.
    pub workers: usize,
    pub input: Option<String>,
    pub output: Option<String>,
    /// Write numbered intermediate images per input.
    pub dump_stages: bool,
    /// Write input images with segment boundaries drawn on them.
    pub overlays: bool,
    pub preprocess: PreprocessConfig,
    pub clean: CleanConfig,
    pub kmeans: KMeansConfig,
    pub overlap: OverlapConfig,
    pub features: FeatureConfig,
    pub classify: ClassifyConfig,
    pub synth: SmearSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            workers: 0,
            input: None,
            output: None,
            dump_stages: false,
            overlays: false,
            preprocess: PreprocessConfig::default(),
            clean: CleanConfig::default(),
            kmeans: KMeansConfig::default(),
            overlap: OverlapConfig::default(),
            features: FeatureConfig::default(),
            classify: ClassifyConfig::default(),
            synth: SmearSpec::default(),
        }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

fn section(name: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::InvalidArgument(m) => config_err(name, m),
        other => other,
    })
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Format(format!("line {}: expected `key = value`", n + 1)));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Format(format!("line {}: empty key", n + 1)));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Converts `raw` to a JSON value shaped like `current`.
fn coerce(key: &str, current: &Value, raw: &str) -> Result<Value> {
    let mismatch = |expected: &str| config_err(key, format!("expected {expected}, got `{raw}`"));
    Ok(match current {
        Value::Bool(_) => match raw {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            _ => return Err(mismatch("a boolean (true|false)")),
        },
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| mismatch("an unsigned integer"))?),
        Value::Number(n) if n.is_i64() => Value::from(raw.parse::<i64>().map_err(|_| mismatch("an integer"))?),
        Value::Number(_) => {
            let v: f64 = raw.parse().map_err(|_| mismatch("a number"))?;
            serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(|| mismatch("a finite number"))?
        }
        Value::Array(items) => {
            let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
            if parts.len() != items.len() {
                return Err(mismatch(&format!("{} comma-separated values", items.len())));
            }
            Value::Array(
                items
                    .iter()
                    .zip(parts)
                    .map(|(item, p)| coerce(key, item, p))
                    .collect::<Result<_>>()?,
            )
        }
        Value::Null if raw.is_empty() => Value::Null,
        Value::Null | Value::String(_) => Value::String(raw.to_string()),
        Value::Object(_) => return Err(config_err(key, "is a section, not a value")),
    })
}

fn set_path(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config_err(key, "unknown key"))?;
        let child = obj.get_mut(*part).ok_or_else(|| config_err(key, "unknown key"))?;
        if i + 1 == parts.len() {
            *child = coerce(key, child, raw)?;
            return Ok(());
        }
        node = child;
    }
    unreachable!("split yields at least one part")
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        Value::Null => {}
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(|v| v.to_string()).collect();
            out.push((prefix.to_string(), parts.join(",")));
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

impl PipelineConfig {
    /// Applies `key = value` overrides on top of `self`.
    pub fn with_overrides<'a>(&self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<PipelineConfig> {
        let mut root = serde_json::to_value(self)?;
        for (key, raw) in pairs {
            set_path(&mut root, key, raw)?;
        }
        serde_json::from_value(root).map_err(|e| config_err("config", e.to_string()))
    }

    /// Defaults, then the file text (if any), then flag overrides.
    pub fn resolve(file_text: Option<&str>, flags: &[(String, String)]) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        if let Some(text) = file_text {
            let pairs = parse_kv(text)?;
            cfg = cfg.with_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        }
        cfg = cfg.with_overrides(flags.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_kv_str(text: &str) -> Result<PipelineConfig> {
        Self::resolve(Some(text), &[])
    }

    /// Every resolved key, sorted, one `key = value` per line.
    pub fn to_kv_string(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut pairs = Vec::new();
        flatten("", &value, &mut pairs);
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        section("preprocess", self.preprocess.validate())?;
        section("clean", self.clean.validate())?;
        section("kmeans", self.kmeans.validate())?;
        section("overlap", self.overlap.validate())?;
        section("features", self.features.validate())?;
        self.classify.validate()?;
        section("synth", self.synth.validate())?;
        Ok(())
    }

    /// JSON object form, used for the report echo.
    pub fn to_json_value(&self) -> Map<String, Value> {
        match serde_json::to_value(self).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("config is a struct"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kmeans::FeatureSpace;

    #[test]
    fn defaults_without_file_or_flags() {
        let cfg = PipelineConfig::resolve(None, &[]).unwrap();
        assert_eq!(cfg.kmeans.k, 3);
        assert_eq!(cfg.preprocess.binarize_threshold, 192);
        assert_eq!(cfg.overlap.roundness_threshold, 0.80);
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn flags_beat_file() {
        let file = "# tuned\nkmeans.k = 4\nkmeans.feature_space = texture\n";
        let flags = vec![("kmeans.k".to_string(), "5".to_string())];
        let cfg = PipelineConfig::resolve(Some(file), &flags).unwrap();
        assert_eq!(cfg.kmeans.k, 5);
        assert_eq!(cfg.kmeans.feature_space, FeatureSpace::Texture);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = PipelineConfig::from_kv_str("kmeans.kk = 3").unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "kmeans.kk"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(PipelineConfig::from_kv_str("kmeans = 3").is_err());
    }

    #[test]
    fn type_mismatch_names_expected_type() {
        let err = PipelineConfig::from_kv_str("clean.min_area = lots").unwrap_err().to_string();
        assert!(err.contains("clean.min_area") && err.contains("unsigned integer"), "{err}");
        let err = PipelineConfig::from_kv_str("clean.remove_border = yes").unwrap_err().to_string();
        assert!(err.contains("boolean"), "{err}");
    }

    #[test]
    fn invalid_value_reports_section() {
        let err = PipelineConfig::from_kv_str("kmeans.k = 1").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "kmeans"), "{err:?}");
        let err = PipelineConfig::from_kv_str("kmeans.feature_space = fourier").unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.kmeans.k = 4;
        cfg.overlap.roundness_threshold = 0.75;
        cfg.input = Some("in dir".into());
        cfg.synth.colors.nucleus = [1, 2, 3];
        cfg.classify.model = ModelKind::Nb;
        let text = cfg.to_kv_string();
        assert!(text.contains("synth.colors.nucleus = 1,2,3"));
        assert_eq!(PipelineConfig::from_kv_str(&text).unwrap(), cfg);
    }
}
