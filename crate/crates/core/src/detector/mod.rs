//! Heatmap predictors for AMM images.
//!
//! A detector maps an AMM image to four landmark heatmaps. Two providers
//! ship with the crate: a deterministic gradient-edge detector usable without
//! any trained model, and a loader for heatmaps computed elsewhere (for
//! example by a network trained on AMM images) and exchanged as raw files.

mod baseline;
mod external;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::amm::AmmImage;
use crate::heatmap::{HeatmapError, HeatmapStack};

pub use baseline::{baseline_gradient_heatmaps, detect_edges, BaselineParams};
pub use external::{read_heatmaps, write_heatmaps, HeatmapMeta, META_EXT, RAW_EXT};

pub const BASELINE_ID: &str = "baseline-gradient";

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("unknown detector '{0}'")]
    UnknownDetector(String),
    #[error("duplicate detector id '{0}'")]
    DuplicateId(String),
    #[error("only {found} edges found in the anchor column, need 4")]
    NoEdgesFound { found: usize },
    #[error("heatmap shape {got:?} does not match expected {expected:?} (n, v, w)")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("invalid detector parameter '{key}': {reason}")]
    BadParam { key: String, reason: String },
    #[error("{path}: {reason}")]
    File { path: PathBuf, reason: String },
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    BaselineGradient,
    ExternalFile,
}

/// Serializable description of a detector and its parameters.
///
/// Recognized parameters:
/// * baseline-gradient: `smoothing_window`, `min_sep`, `sigma` (numbers)
/// * external-file: `path`, the file prefix without extension; the token
///   `{clip_id}` is replaced by the clip being measured
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorDescriptor {
    pub id: String,
    pub kind: DetectorKind,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

impl DetectorDescriptor {
    pub fn baseline() -> Self {
        Self {
            id: BASELINE_ID.to_string(),
            kind: DetectorKind::BaselineGradient,
            params: BTreeMap::new(),
        }
    }

    pub fn external(id: impl Into<String>, prefix: impl Into<String>) -> Self {
        let mut params = BTreeMap::new();
        params.insert("path".to_string(), Value::String(prefix.into()));
        Self {
            id: id.into(),
            kind: DetectorKind::ExternalFile,
            params,
        }
    }

    /// Copy with `{clip_id}` substituted in every string parameter.
    pub fn for_clip(&self, clip_id: &str) -> Self {
        let params = self
            .params
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    Value::String(s) => Value::String(s.replace("{clip_id}", clip_id)),
                    other => other.clone(),
                };
                (k.clone(), v)
            })
            .collect();
        Self {
            id: self.id.clone(),
            kind: self.kind,
            params,
        }
    }

    fn number(&self, key: &str) -> Result<Option<f64>, DetectorError> {
        match self.params.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| DetectorError::BadParam {
                key: key.to_string(),
                reason: format!("expected a number, got {v}"),
            }),
        }
    }

    fn count(&self, key: &str) -> Result<Option<usize>, DetectorError> {
        match self.number(key)? {
            None => Ok(None),
            Some(n) if n >= 1.0 && n.fract() == 0.0 => Ok(Some(n as usize)),
            Some(n) => Err(DetectorError::BadParam {
                key: key.to_string(),
                reason: format!("expected a positive integer, got {n}"),
            }),
        }
    }

    /// Build the detector. `sigma` is the pipeline-wide heatmap width, used
    /// unless the descriptor overrides it.
    pub fn instantiate(&self, sigma: f64) -> Result<Box<dyn HeatmapDetector>, DetectorError> {
        match self.kind {
            DetectorKind::BaselineGradient => {
                let defaults = BaselineParams::default();
                let params = BaselineParams {
                    smoothing_window: self
                        .count("smoothing_window")?
                        .unwrap_or(defaults.smoothing_window),
                    min_sep: self.count("min_sep")?,
                    sigma: self.number("sigma")?.unwrap_or(sigma),
                };
                Ok(Box::new(baseline::BaselineGradient {
                    id: self.id.clone(),
                    params,
                }))
            }
            DetectorKind::ExternalFile => {
                let prefix = match self.params.get("path") {
                    Some(Value::String(s)) => PathBuf::from(s),
                    _ => {
                        return Err(DetectorError::BadParam {
                            key: "path".into(),
                            reason: "external-file detector needs a string 'path'".into(),
                        })
                    }
                };
                Ok(Box::new(external::ExternalFile {
                    id: self.id.clone(),
                    prefix,
                }))
            }
        }
    }
}

pub trait HeatmapDetector: Send + Sync {
    fn id(&self) -> &str;
    fn predict(&self, amm: &AmmImage) -> Result<HeatmapStack, DetectorError>;
}

/// Run the detector described by `d` on `amm`.
pub fn predict(
    amm: &AmmImage,
    d: &DetectorDescriptor,
    sigma: f64,
) -> Result<HeatmapStack, DetectorError> {
    d.instantiate(sigma)?.predict(amm)
}

/// Named detectors available to a run.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRegistry {
    descriptors: Vec<DetectorDescriptor>,
}

impl Default for DetectorRegistry {
    fn default() -> Self {
        Self {
            descriptors: vec![DetectorDescriptor::baseline()],
        }
    }
}

impl DetectorRegistry {
    pub fn empty() -> Self {
        Self {
            descriptors: Vec::new(),
        }
    }

    pub fn register(&mut self, d: DetectorDescriptor) -> Result<(), DetectorError> {
        if self.descriptors.iter().any(|e| e.id == d.id) {
            return Err(DetectorError::DuplicateId(d.id));
        }
        self.descriptors.push(d);
        Ok(())
    }

    pub fn resolve(&self, id: &str) -> Result<&DetectorDescriptor, DetectorError> {
        self.descriptors
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| DetectorError::UnknownDetector(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.descriptors.iter().map(|d| d.id.as_str())
    }
}
