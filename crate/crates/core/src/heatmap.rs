//! Gaussian heatmap targets and soft-argmax readout at the anchor column.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amm::AmmPoint;

/// Landmarks per measurement: IVS top, IVS/LVID, LVID/LVPW, LVPW bottom.
pub const LANDMARK_COUNT: usize = 4;
pub const DEFAULT_SIGMA: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeatmapError {
    #[error("landmark ({x}, {y}) outside the {v_count}x{w_count} AMM grid")]
    CoordinateOutOfGrid {
        x: f64,
        y: f64,
        v_count: usize,
        w_count: usize,
    },
    #[error("expected {expected} landmarks, got {got}")]
    WrongLandmarkCount { expected: usize, got: usize },
    #[error("non-finite score in column {column}")]
    NonFiniteScore { column: usize },
    #[error("anchor column {column} outside heatmap of width {w_count}")]
    ColumnOutOfRange { column: usize, w_count: usize },
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("heatmap channels disagree in shape")]
    ShapeMismatch,
}

/// How the values of a heatmap are to be read.
///
/// `Logits` are unnormalized log-scores (a network's raw output) and go
/// straight through the softmax. `Targets` are non-negative likelihood maps
/// such as the unit Gaussians built by [`make_targets`]; they are turned into
/// logits by taking the natural log, so the softmax reduces to normalizing by
/// their sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    #[default]
    Logits,
    Targets,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapConfig {
    pub sigma: f64,
    pub v_count: usize,
    pub w_count: usize,
}

/// One `V x W` score grid, row-major (rows are scanline samples).
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub v_count: usize,
    pub w_count: usize,
    pub data: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(v_count: usize, w_count: usize) -> Self {
        Self {
            v_count,
            w_count,
            data: vec![0.0; v_count * w_count],
        }
    }

    pub fn get(&self, v: usize, w: usize) -> f64 {
        self.data[v * self.w_count + w]
    }

    pub fn column(&self, w: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.v_count).map(move |v| self.get(v, w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    pub kind: ScoreKind,
    pub channels: Vec<Heatmap>,
}

impl HeatmapStack {
    pub fn new(kind: ScoreKind, channels: Vec<Heatmap>) -> Result<Self, HeatmapError> {
        if channels.len() != LANDMARK_COUNT {
            return Err(HeatmapError::WrongLandmarkCount {
                expected: LANDMARK_COUNT,
                got: channels.len(),
            });
        }
        let (v, w) = (channels[0].v_count, channels[0].w_count);
        if channels
            .iter()
            .any(|c| c.v_count != v || c.w_count != w || c.data.len() != v * w)
        {
            return Err(HeatmapError::ShapeMismatch);
        }
        Ok(Self { kind, channels })
    }

    pub fn v_count(&self) -> usize {
        self.channels[0].v_count
    }

    pub fn w_count(&self) -> usize {
        self.channels[0].w_count
    }
}

/// One unit-amplitude Gaussian per landmark:
/// `exp(-((w - x)^2 + (v - y)^2) / (2 sigma^2))`.
pub fn make_targets(
    amm_coords: &[AmmPoint],
    cfg: &HeatmapConfig,
) -> Result<HeatmapStack, HeatmapError> {
    if !(cfg.sigma > 0.0) {
        return Err(HeatmapError::NonPositiveSigma(cfg.sigma));
    }
    if amm_coords.len() != LANDMARK_COUNT {
        return Err(HeatmapError::WrongLandmarkCount {
            expected: LANDMARK_COUNT,
            got: amm_coords.len(),
        });
    }
    let max_x = cfg.w_count as f64 - 1.0;
    let max_y = cfg.v_count as f64 - 1.0;
    let denom = 2.0 * cfg.sigma * cfg.sigma;
    let channels = amm_coords
        .iter()
        .map(|c| {
            if !(c.x >= 0.0 && c.x <= max_x && c.y >= 0.0 && c.y <= max_y) {
                return Err(HeatmapError::CoordinateOutOfGrid {
                    x: c.x,
                    y: c.y,
                    v_count: cfg.v_count,
                    w_count: cfg.w_count,
                });
            }
            let mut h = Heatmap::zeros(cfg.v_count, cfg.w_count);
            for v in 0..cfg.v_count {
                let dy = v as f64 - c.y;
                for w in 0..cfg.w_count {
                    let dx = w as f64 - c.x;
                    h.data[v * cfg.w_count + w] = (-(dx * dx + dy * dy) / denom).exp();
                }
            }
            Ok(h)
        })
        .collect::<Result<Vec<_>, _>>()?;
    HeatmapStack::new(ScoreKind::Targets, channels)
}

/// Softmax over one column of logits, followed by the expected row index.
///
/// `-inf` entries carry zero probability; `NaN`, `+inf` or a column with no
/// finite entry is rejected.
pub fn soft_argmax(logits: &[f64], column: usize) -> Result<f64, HeatmapError> {
    if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(HeatmapError::NonFiniteScore { column });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(HeatmapError::NonFiniteScore { column });
    }
    let mut total = 0.0;
    let mut weighted = 0.0;
    for (v, &l) in logits.iter().enumerate() {
        let e = (l - max).exp();
        total += e;
        weighted += v as f64 * e;
    }
    let last = logits.len().saturating_sub(1) as f64;
    Ok((weighted / total).clamp(0.0, last))
}

/// Soft-argmax of one heatmap channel, read along the anchor column.
pub fn soft_argmax_column(h: &Heatmap, anchor_column: usize) -> Result<AmmPoint, HeatmapError> {
    column_readout(h, anchor_column, ScoreKind::Logits)
}

fn column_readout(
    h: &Heatmap,
    anchor_column: usize,
    kind: ScoreKind,
) -> Result<AmmPoint, HeatmapError> {
    if anchor_column >= h.w_count {
        return Err(HeatmapError::ColumnOutOfRange {
            column: anchor_column,
            w_count: h.w_count,
        });
    }
    let logits: Vec<f64> = match kind {
        ScoreKind::Logits => h.column(anchor_column).collect(),
        ScoreKind::Targets => h
            .column(anchor_column)
            .map(|s| if s > 0.0 { s.ln() } else if s.is_nan() { s } else { f64::NEG_INFINITY })
            .collect(),
    };
    Ok(AmmPoint {
        x: anchor_column as f64,
        y: soft_argmax(&logits, anchor_column)?,
    })
}

/// Read all channels and order the landmarks by row so that consecutive
/// pairs are the three wall/cavity segments.
pub fn extract_landmarks(
    h: &HeatmapStack,
    anchor_column: usize,
) -> Result<Vec<AmmPoint>, HeatmapError> {
    let mut points = h
        .channels
        .iter()
        .map(|c| column_readout(c, anchor_column, h.kind))
        .collect::<Result<Vec<_>, _>>()?;
    points.sort_by(|a, b| a.y.total_cmp(&b.y));
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_column(values: &[f64]) -> Heatmap {
        Heatmap {
            v_count: values.len(),
            w_count: 1,
            data: values.to_vec(),
        }
    }

    #[test]
    fn peaked_logit_gives_its_row() {
        let mut col = vec![0.0; 32];
        col[7] = 100.0;
        let p = soft_argmax_column(&single_column(&col), 0).unwrap();
        assert!((p.y - 7.0).abs() < 1e-6);
        assert_eq!(p.x, 0.0);
    }

    #[test]
    fn uniform_column_is_centre() {
        let p = soft_argmax_column(&single_column(&[0.3; 256]), 0).unwrap();
        assert_eq!(p.y, 127.5);
    }

    #[test]
    fn two_point_distribution() {
        let mut col = vec![f64::NEG_INFINITY; 10];
        col[2] = 1.5;
        col[6] = 1.5;
        assert_eq!(soft_argmax(&col, 0).unwrap(), 4.0);
    }

    #[test]
    fn non_finite_scores_rejected() {
        assert!(soft_argmax(&[0.0, f64::NAN], 3).is_err());
        assert!(soft_argmax(&[0.0, f64::INFINITY], 3).is_err());
        assert_eq!(
            soft_argmax(&[f64::NEG_INFINITY; 4], 3),
            Err(HeatmapError::NonFiniteScore { column: 3 })
        );
    }

    #[test]
    fn readout_column_checked() {
        let h = Heatmap::zeros(4, 3);
        assert!(matches!(
            soft_argmax_column(&h, 3),
            Err(HeatmapError::ColumnOutOfRange { .. })
        ));
    }

    fn cfg() -> HeatmapConfig {
        HeatmapConfig {
            sigma: 2.0,
            v_count: 64,
            w_count: 16,
        }
    }

    fn pts(rows: [f64; 4]) -> Vec<AmmPoint> {
        rows.iter().map(|&y| AmmPoint { x: 8.0, y }).collect()
    }

    #[test]
    fn targets_peak_at_one_and_decay() {
        let stack = make_targets(&pts([5.0, 20.0, 40.0, 58.0]), &cfg()).unwrap();
        assert_eq!(stack.kind, ScoreKind::Targets);
        let h = &stack.channels[1];
        assert_eq!(h.get(20, 8), 1.0);
        assert!((h.get(22, 8) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((h.get(20, 10) - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn targets_reject_bad_input() {
        assert!(matches!(
            make_targets(&pts([5.0, 20.0, 40.0, 64.0]), &cfg()),
            Err(HeatmapError::CoordinateOutOfGrid { .. })
        ));
        assert!(make_targets(&pts([5.0, 20.0, 40.0, 50.0])[..3], &cfg()).is_err());
        let mut bad = cfg();
        bad.sigma = 0.0;
        assert!(make_targets(&pts([5.0, 20.0, 40.0, 50.0]), &bad).is_err());
    }

    #[test]
    fn scrambled_channels_come_out_sorted() {
        let stack = make_targets(&pts([40.0, 5.0, 58.0, 20.0]), &cfg()).unwrap();
        let rows: Vec<f64> = extract_landmarks(&stack, 8)
            .unwrap()
            .iter()
            .map(|p| p.y)
            .collect();
        let want = [5.0, 20.0, 40.0, 58.0];
        for (got, want) in rows.iter().zip(want) {
            assert!((got - want).abs() < 0.5, "{rows:?}");
        }
    }

    #[test]
    fn uniform_stack_reads_centre() {
        let channels = (0..4)
            .map(|_| Heatmap {
                v_count: 9,
                w_count: 3,
                data: vec![0.25; 27],
            })
            .collect();
        let stack = HeatmapStack::new(ScoreKind::Logits, channels).unwrap();
        for p in extract_landmarks(&stack, 1).unwrap() {
            assert_eq!(p, AmmPoint { x: 1.0, y: 4.0 });
        }
    }
}
