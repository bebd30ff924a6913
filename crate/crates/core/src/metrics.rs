//! Length measurements and agreement statistics.
//!
//! Lengths are centimetres throughout; the success detection rate takes its
//! per-sample errors and thresholds in millimetres.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amm::{AmmError, Point, Scanline};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("landmarks are not ordered along the scanline")]
    UnorderedLandmarks,
    #[error("ground-truth {0} length is zero")]
    ZeroGroundTruthLength(&'static str),
    #[error("landmark sets differ in size: {0} vs {1}")]
    CountMismatch(usize, usize),
    #[error("no samples to evaluate")]
    EmptySampleSet,
    #[error("thresholds must be ascending")]
    UnsortedThresholds,
    #[error("need at least 2 paired values, got {0}")]
    TooFewSamples(usize),
    #[error("one of the series has zero variance")]
    ZeroVariance,
    #[error(transparent)]
    Geometry(#[from] AmmError),
}

pub const STRUCTURES: [&str; 3] = ["ivs", "lvid", "lvpw"];

/// Thickness of the septum, cavity diameter and posterior wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentLengths {
    pub ivs_cm: f64,
    pub lvid_cm: f64,
    pub lvpw_cm: f64,
}

impl SegmentLengths {
    pub fn as_array(&self) -> [f64; 3] {
        [self.ivs_cm, self.lvid_cm, self.lvpw_cm]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self {
            ivs_cm: a[0],
            lvid_cm: a[1],
            lvpw_cm: a[2],
        }
    }
}

/// Consecutive distances between the four landmarks, scaled to centimetres.
pub fn segment_lengths(
    lms: &[Point; 4],
    spacing_cm_per_px: f64,
) -> Result<SegmentLengths, MetricsError> {
    let (first, last) = (lms[0], lms[3]);
    let dir = Point::new(last.x - first.x, last.y - first.y);
    let along: Vec<f64> = lms
        .iter()
        .map(|p| (p.x - first.x) * dir.x + (p.y - first.y) * dir.y)
        .collect();
    if dir == Point::default() {
        if lms.iter().any(|&p| p != first) {
            return Err(MetricsError::UnorderedLandmarks);
        }
    } else if along.windows(2).any(|w| w[1] < w[0]) {
        return Err(MetricsError::UnorderedLandmarks);
    }
    Ok(SegmentLengths {
        ivs_cm: lms[0].distance(lms[1]) * spacing_cm_per_px,
        lvid_cm: lms[1].distance(lms[2]) * spacing_cm_per_px,
        lvpw_cm: lms[2].distance(lms[3]) * spacing_cm_per_px,
    })
}

/// Per-structure errors plus their mean over the three segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureErrors {
    pub per_structure: [f64; 3],
    pub average: f64,
}

impl StructureErrors {
    fn from(per_structure: [f64; 3]) -> Self {
        Self {
            per_structure,
            average: per_structure.iter().sum::<f64>() / 3.0,
        }
    }
}

pub fn mae(pred: &SegmentLengths, gt: &SegmentLengths) -> StructureErrors {
    let (p, g) = (pred.as_array(), gt.as_array());
    StructureErrors::from([
        (p[0] - g[0]).abs(),
        (p[1] - g[1]).abs(),
        (p[2] - g[2]).abs(),
    ])
}

/// Absolute percentage errors as fractions (0.1 = 10 %).
pub fn mape(pred: &SegmentLengths, gt: &SegmentLengths) -> Result<StructureErrors, MetricsError> {
    let (p, g) = (pred.as_array(), gt.as_array());
    let mut out = [0.0; 3];
    for k in 0..3 {
        if g[k] == 0.0 {
            return Err(MetricsError::ZeroGroundTruthLength(STRUCTURES[k]));
        }
        out[k] = (p[k] - g[k]).abs() / g[k];
    }
    Ok(StructureErrors::from(out))
}

/// Mean Euclidean landmark displacement, in centimetres.
pub fn coordinate_error(
    pred: &[Point],
    gt: &[Point],
    spacing_cm_per_px: f64,
) -> Result<f64, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::CountMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::EmptySampleSet);
    }
    let total: f64 = pred.iter().zip(gt).map(|(a, b)| a.distance(*b)).sum();
    Ok(total / pred.len() as f64 * spacing_cm_per_px)
}

/// Errors for one evaluated sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub mae_per_structure: [f64; 3],
    pub mape_per_structure: [f64; 3],
    pub ce_cm: f64,
    pub mae_avg_cm: f64,
}

pub fn evaluate_sample(
    pred: &[Point; 4],
    gt: &[Point; 4],
    spacing_cm_per_px: f64,
) -> Result<SampleEval, MetricsError> {
    let pl = segment_lengths(pred, spacing_cm_per_px)?;
    let gl = segment_lengths(gt, spacing_cm_per_px)?;
    let m = mae(&pl, &gl);
    Ok(SampleEval {
        mae_per_structure: m.per_structure,
        mape_per_structure: mape(&pl, &gl)?.per_structure,
        ce_cm: coordinate_error(pred, gt, spacing_cm_per_px)?,
        mae_avg_cm: m.average,
    })
}

/// Orthogonal projection onto the scanline's supporting line, clamped to the
/// segment. This is how free B-mode predictions are forced onto a scanline.
pub fn project_to_scanline(pred: &[Point], sl: &Scanline) -> Result<Vec<Point>, MetricsError> {
    sl.check_non_degenerate()?;
    let (a, b) = (sl.p_start, sl.p_end);
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    Ok(pred
        .iter()
        .map(|p| {
            let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
            a.lerp(b, t)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdrCurve {
    pub thresholds_mm: Vec<f64>,
    pub rates: Vec<f64>,
}

/// Fraction of samples whose average length error is within each threshold
/// (inclusive).
pub fn sdr_curve(
    per_sample_mae_avg_mm: &[f64],
    thresholds_mm: &[f64],
) -> Result<SdrCurve, MetricsError> {
    if per_sample_mae_avg_mm.is_empty() {
        return Err(MetricsError::EmptySampleSet);
    }
    if thresholds_mm.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(MetricsError::UnsortedThresholds);
    }
    let n = per_sample_mae_avg_mm.len() as f64;
    let rates = thresholds_mm
        .iter()
        .map(|&e| per_sample_mae_avg_mm.iter().filter(|&&m| m <= e).count() as f64 / n)
        .collect();
    Ok(SdrCurve {
        thresholds_mm: thresholds_mm.to_vec(),
        rates,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::CountMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(MetricsError::TooFewSamples(xs.len()));
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Limits-of-agreement multiplier (95 % under normality).
pub const LOA_MULTIPLIER: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub bias: f64,
    pub sd: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

/// Bias and limits of agreement of `a - b`, using the sample standard deviation.
pub fn bland_altman(a: &[f64], b: &[f64]) -> Result<BlandAltman, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::CountMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(MetricsError::TooFewSamples(a.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let bias = mean(&diffs);
    let var = diffs.iter().map(|d| (d - bias).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
    let sd = var.sqrt();
    Ok(BlandAltman {
        bias,
        sd,
        loa_low: bias - LOA_MULTIPLIER * sd,
        loa_high: bias + LOA_MULTIPLIER * sd,
    })
}
