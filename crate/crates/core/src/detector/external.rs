//! Heatmaps computed outside this crate, exchanged as a raw float file plus
//! a JSON sidecar.
//!
//! `<prefix>.hmraw` holds `n * v * w` little-endian `f32` values, channel
//! major then row major. `<prefix>.hmmeta` is `{"n":4,"v":V,"w":W}` with an
//! optional `"kind"` of `"logits"` (default) or `"targets"`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::amm::AmmImage;
use crate::heatmap::{Heatmap, HeatmapStack, ScoreKind, LANDMARK_COUNT};

use super::{DetectorError, HeatmapDetector};

pub const RAW_EXT: &str = "hmraw";
pub const META_EXT: &str = "hmmeta";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub n: usize,
    pub v: usize,
    pub w: usize,
    #[serde(default)]
    pub kind: ScoreKind,
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = OsString::from(prefix.as_os_str());
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn file_err(path: &Path, reason: impl ToString) -> DetectorError {
    DetectorError::File {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

pub fn write_heatmaps(prefix: &Path, stack: &HeatmapStack) -> Result<(), DetectorError> {
    let meta = HeatmapMeta {
        n: stack.channels.len(),
        v: stack.v_count(),
        w: stack.w_count(),
        kind: stack.kind,
    };
    let mut raw = Vec::with_capacity(meta.n * meta.v * meta.w * 4);
    for c in &stack.channels {
        for &x in &c.data {
            raw.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let raw_path = with_ext(prefix, RAW_EXT);
    fs::write(&raw_path, raw).map_err(|e| file_err(&raw_path, e))?;
    let meta_path = with_ext(prefix, META_EXT);
    let json = serde_json::to_vec(&meta).map_err(|e| file_err(&meta_path, e))?;
    fs::write(&meta_path, json).map_err(|e| file_err(&meta_path, e))
}

pub fn read_heatmaps(prefix: &Path) -> Result<HeatmapStack, DetectorError> {
    let meta_path = with_ext(prefix, META_EXT);
    let meta_bytes = fs::read(&meta_path).map_err(|e| file_err(&meta_path, e))?;
    let meta: HeatmapMeta =
        serde_json::from_slice(&meta_bytes).map_err(|e| file_err(&meta_path, e))?;
    if meta.n != LANDMARK_COUNT {
        return Err(DetectorError::ShapeMismatch {
            expected: (LANDMARK_COUNT, meta.v, meta.w),
            got: (meta.n, meta.v, meta.w),
        });
    }
    let raw_path = with_ext(prefix, RAW_EXT);
    let raw = fs::read(&raw_path).map_err(|e| file_err(&raw_path, e))?;
    let plane = meta.v * meta.w;
    if raw.len() != meta.n * plane * 4 {
        return Err(file_err(
            &raw_path,
            format!(
                "{} bytes, metadata declares {}x{}x{} float32 values",
                raw.len(),
                meta.n,
                meta.v,
                meta.w
            ),
        ));
    }
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    let channels = values
        .chunks_exact(plane)
        .map(|c| Heatmap {
            v_count: meta.v,
            w_count: meta.w,
            data: c.to_vec(),
        })
        .collect();
    Ok(HeatmapStack::new(meta.kind, channels)?)
}

pub(super) struct ExternalFile {
    pub(super) id: String,
    pub(super) prefix: PathBuf,
}

impl HeatmapDetector for ExternalFile {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(&self, amm: &AmmImage) -> Result<HeatmapStack, DetectorError> {
        let stack = read_heatmaps(&self.prefix)?;
        let got = (stack.channels.len(), stack.v_count(), stack.w_count());
        let expected = (LANDMARK_COUNT, amm.v_count(), amm.w_count());
        if got != expected {
            return Err(DetectorError::ShapeMismatch { expected, got });
        }
        Ok(stack)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amm::AmmPoint;
    use crate::heatmap::{make_targets, HeatmapConfig};

    #[test]
    fn file_layout_is_channel_major_f32_le() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("clip.v1");
        let channels = (0..4)
            .map(|c| Heatmap {
                v_count: 2,
                w_count: 3,
                data: (0..6).map(|i| (c * 10 + i) as f64).collect(),
            })
            .collect();
        let stack = HeatmapStack::new(ScoreKind::Logits, channels).unwrap();
        write_heatmaps(&prefix, &stack).unwrap();
        let raw = fs::read(dir.path().join("clip.v1.hmraw")).unwrap();
        assert_eq!(raw.len(), 4 * 6 * 4);
        // channel 1, row 1, column 0 -> flat index 6 + 3
        assert_eq!(f32::from_le_bytes(raw[36..40].try_into().unwrap()), 13.0);
        let meta: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("clip.v1.hmmeta")).unwrap())
                .unwrap();
        assert_eq!(meta["n"], 4);
        assert_eq!(meta["v"], 2);
        assert_eq!(meta["w"], 3);
        assert_eq!(read_heatmaps(&prefix).unwrap(), stack);
    }

    #[test]
    fn meta_without_kind_reads_as_logits() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("m");
        fs::write(dir.path().join("m.hmmeta"), r#"{"n":4,"v":1,"w":1}"#).unwrap();
        fs::write(dir.path().join("m.hmraw"), [0u8; 16]).unwrap();
        assert_eq!(read_heatmaps(&prefix).unwrap().kind, ScoreKind::Logits);
    }

    #[test]
    fn wrong_channel_count_and_truncated_raw() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("m");
        fs::write(dir.path().join("m.hmmeta"), r#"{"n":3,"v":1,"w":1}"#).unwrap();
        fs::write(dir.path().join("m.hmraw"), [0u8; 12]).unwrap();
        assert!(matches!(
            read_heatmaps(&prefix),
            Err(DetectorError::ShapeMismatch { .. })
        ));
        fs::write(dir.path().join("m.hmmeta"), r#"{"n":4,"v":1,"w":1}"#).unwrap();
        assert!(matches!(read_heatmaps(&prefix), Err(DetectorError::File { .. })));
        assert!(matches!(
            read_heatmaps(&dir.path().join("absent")),
            Err(DetectorError::File { .. })
        ));
    }

    #[test]
    fn target_round_trip_keeps_kind() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("t");
        let coords: Vec<AmmPoint> = [3.0, 9.0, 15.0, 21.0]
            .iter()
            .map(|&y| AmmPoint { x: 2.0, y })
            .collect();
        let cfg = HeatmapConfig {
            sigma: 1.0,
            v_count: 24,
            w_count: 5,
        };
        let stack = make_targets(&coords, &cfg).unwrap();
        write_heatmaps(&prefix, &stack).unwrap();
        assert_eq!(read_heatmaps(&prefix).unwrap().kind, ScoreKind::Targets);
    }
}
