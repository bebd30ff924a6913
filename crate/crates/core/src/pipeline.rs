//! End-to-end measurement and evaluation.
//!
//! Measurement: clip -> AMM along the scanline -> detector heatmaps ->
//! soft-argmax rows at the anchor column -> nearest path samples -> lengths.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::amm::{
    nearest_index, synthesize_amm, AmmImage, AmmPoint, EchoClip, Point, Scanline,
    DEFAULT_V_COUNT, DEFAULT_W_COUNT,
};
use crate::detector::{predict, DetectorDescriptor, DetectorRegistry};
use crate::formats::{coordinate_convention, AnnotationRecord, Phase};
use crate::heatmap::{extract_landmarks, DEFAULT_SIGMA};
use crate::indices::{self, CardiacIndices, PairedMeasurement, INDEX_NAMES};
use crate::metrics::{
    bland_altman, evaluate_sample, pearson, sdr_curve, segment_lengths, BlandAltman,
    SegmentLengths, STRUCTURES,
};
use crate::Error;

fn default_v_count() -> usize {
    DEFAULT_V_COUNT
}
fn default_w_count() -> usize {
    DEFAULT_W_COUNT
}
fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}
fn default_window() -> usize {
    5
}

/// Run configuration; every field has a default so a partial JSON file works.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_v_count")]
    pub v_count: usize,
    #[serde(default = "default_w_count")]
    pub w_count: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_window")]
    pub smoothing_window: usize,
    /// Baseline edge separation in rows; `None` means `v_count / 16`.
    #[serde(default)]
    pub min_sep: Option<usize>,
    /// Extra detectors, e.g. external heatmap files.
    #[serde(default)]
    pub detectors: Vec<DetectorDescriptor>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            v_count: DEFAULT_V_COUNT,
            w_count: DEFAULT_W_COUNT,
            sigma: DEFAULT_SIGMA,
            smoothing_window: 5,
            min_sep: None,
            detectors: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn baseline_descriptor(&self) -> DetectorDescriptor {
        let mut d = DetectorDescriptor::baseline();
        d.params
            .insert("smoothing_window".into(), Value::from(self.smoothing_window));
        if let Some(m) = self.min_sep {
            d.params.insert("min_sep".into(), Value::from(m));
        }
        d
    }

    /// Baseline detector (with this config's parameters) plus `detectors`.
    pub fn registry(&self) -> Result<DetectorRegistry, Error> {
        let mut reg = DetectorRegistry::empty();
        reg.register(self.baseline_descriptor())?;
        for d in &self.detectors {
            reg.register(d.clone())?;
        }
        Ok(reg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConventions {
    pub lvm: String,
    pub volumes: String,
    pub fs: String,
    pub rwt: String,
    pub ef: String,
}

impl Default for IndexConventions {
    fn default() -> Self {
        Self {
            lvm: indices::LVM_FORMULA.into(),
            volumes: indices::VOLUME_FORMULA.into(),
            fs: indices::FS_FORMULA.into(),
            rwt: indices::RWT_FORMULA.into(),
            ef: indices::EF_FORMULA.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicesReport {
    #[serde(flatten)]
    pub values: CardiacIndices,
    pub conventions: IndexConventions,
}

/// Result of measuring one clip along one scanline.
///
/// `landmarks_bmode[i]` is exactly sample `path_indices[i]` of the
/// `v_count`-point path from `scanline.p_start` to `scanline.p_end`, so the
/// scanline membership of every landmark can be re-derived from this record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementReport {
    pub coordinate_convention: String,
    pub clip_id: String,
    pub phase: Phase,
    pub scanline: Scanline,
    pub spacing_cm_per_px: f64,
    pub landmarks_bmode: [Point; 4],
    pub landmarks_amm: [AmmPoint; 4],
    pub path_indices: [usize; 4],
    pub segment_lengths: SegmentLengths,
    pub detector_id: String,
    pub v_count: usize,
    pub w_count: usize,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paired: Option<Box<MeasurementReport>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardiac_indices: Option<IndicesReport>,
}

impl MeasurementReport {
    /// This report followed by its paired report, if any.
    pub fn samples(&self) -> impl Iterator<Item = &MeasurementReport> {
        std::iter::once(self).chain(self.paired.as_deref())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Identity of a clip being measured.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipInfo {
    pub id: String,
    pub phase: Phase,
}

/// Intermediate products of one measurement, for inspection.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub amm: AmmImage,
    pub report: MeasurementReport,
}

pub fn measure_clip(
    clip: &EchoClip,
    info: &ClipInfo,
    sl: &Scanline,
    detector: &DetectorDescriptor,
    cfg: &PipelineConfig,
) -> Result<Measurement, Error> {
    let ctx = |e: Error| e.with_clip(&info.id);
    let amm = synthesize_amm(clip, sl, cfg.v_count).map_err(|e| ctx(e.into()))?;
    let stack = predict(&amm, &detector.for_clip(&info.id), cfg.sigma).map_err(|e| ctx(e.into()))?;
    let amm_points = extract_landmarks(&stack, amm.anchor_column).map_err(|e| ctx(e.into()))?;
    let mut path_indices = [0usize; 4];
    let mut landmarks_bmode = [Point::default(); 4];
    for (k, a) in amm_points.iter().enumerate() {
        let idx = nearest_index(a.y, amm.v_count()).map_err(|e| ctx(e.into()))?;
        path_indices[k] = idx;
        landmarks_bmode[k] = amm.path.points[idx];
    }
    let lengths =
        segment_lengths(&landmarks_bmode, clip.spacing_cm_per_px).map_err(|e| ctx(e.into()))?;
    let report = MeasurementReport {
        coordinate_convention: coordinate_convention(),
        clip_id: info.id.clone(),
        phase: info.phase,
        scanline: *sl,
        spacing_cm_per_px: clip.spacing_cm_per_px,
        landmarks_bmode,
        landmarks_amm: [amm_points[0], amm_points[1], amm_points[2], amm_points[3]],
        path_indices,
        segment_lengths: lengths,
        detector_id: detector.id.clone(),
        v_count: cfg.v_count,
        w_count: clip.w_count(),
        sigma: cfg.sigma,
        paired: None,
        cardiac_indices: None,
    };
    Ok(Measurement { amm, report })
}

/// Combine an ED and an ES report (either order) into one report carrying
/// the cardiac indices; the first argument stays the top-level record.
pub fn pair_reports(
    mut primary: MeasurementReport,
    secondary: MeasurementReport,
) -> Result<MeasurementReport, Error> {
    let (ed, es) = match (primary.phase, secondary.phase) {
        (Phase::EndDiastole, Phase::EndSystole) => (&primary, &secondary),
        (Phase::EndSystole, Phase::EndDiastole) => (&secondary, &primary),
        _ => {
            return Err(Error::PhaseMismatch {
                first: primary.clip_id.clone(),
                second: secondary.clip_id.clone(),
            })
        }
    };
    let values = CardiacIndices::from_pair(&PairedMeasurement {
        ed: ed.segment_lengths,
        es: es.segment_lengths,
    })?;
    primary.cardiac_indices = Some(IndicesReport {
        values,
        conventions: IndexConventions::default(),
    });
    primary.paired = Some(Box::new(secondary));
    Ok(primary)
}

/// One CSV row of an evaluation. Lengths and CE in cm, MAPE as fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub id: String,
    pub mae_ivs: f64,
    pub mae_lvid: f64,
    pub mae_lvpw: f64,
    pub mape_ivs: f64,
    pub mape_lvid: f64,
    pub mape_lvpw: f64,
    pub ce: f64,
    pub mae_avg: f64,
}

impl EvaluationRow {
    fn values(&self) -> [f64; 8] {
        [
            self.mae_ivs,
            self.mae_lvid,
            self.mae_lvpw,
            self.mape_ivs,
            self.mape_lvid,
            self.mape_lvpw,
            self.ce,
            self.mae_avg,
        ]
    }
}

const ROW_FIELDS: [&str; 8] = [
    "mae_ivs", "mae_lvid", "mae_lvpw", "mape_ivs", "mape_lvid", "mape_lvpw", "ce", "mae_avg",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdrPoint {
    pub threshold_mm: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub sample_count: usize,
    /// Keyed by structure or index name; `None` where undefined (fewer than
    /// two samples or zero variance).
    pub pearson: std::collections::BTreeMap<String, Option<f64>>,
    pub bland_altman: std::collections::BTreeMap<String, Option<BlandAltman>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub sample_count: usize,
    pub mean: std::collections::BTreeMap<String, f64>,
    /// Sample standard deviation; `None` with a single sample.
    pub sd: std::collections::BTreeMap<String, Option<f64>>,
    pub sdr: Vec<SdrPoint>,
    /// Predicted vs. annotated segment lengths (cm).
    pub lengths: Agreement,
    /// Predicted vs. annotated cardiac indices, over paired reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Agreement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_conventions: Option<IndexConventions>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<EvaluationRow>,
    pub summary: EvaluationSummary,
}

/// SDR thresholds 0, 0.5, ..., 6 mm.
pub fn default_thresholds_mm() -> Vec<f64> {
    (0..=12).map(|k| k as f64 * 0.5).collect()
}

fn agreement(names: &[&str], pred: &[Vec<f64>], gt: &[Vec<f64>]) -> Agreement {
    let mut out = Agreement {
        sample_count: pred.first().map_or(0, Vec::len),
        pearson: Default::default(),
        bland_altman: Default::default(),
    };
    for (k, name) in names.iter().enumerate() {
        out.pearson
            .insert(name.to_string(), pearson(&pred[k], &gt[k]).ok());
        out.bland_altman
            .insert(name.to_string(), bland_altman(&pred[k], &gt[k]).ok());
    }
    out
}

fn ground_truth_lengths(
    ann: &AnnotationRecord,
    spacing: f64,
) -> Result<SegmentLengths, Error> {
    segment_lengths(&ann.landmarks_bmode, spacing).map_err(|e| Error::from(e).with_clip(&ann.clip_id))
}

/// Score predicted reports against annotations. Rows are sorted by clip id.
pub fn evaluate(
    reports: &[MeasurementReport],
    annotations: &[AnnotationRecord],
    thresholds_mm: &[f64],
) -> Result<Evaluation, Error> {
    let by_id: HashMap<&str, &AnnotationRecord> =
        annotations.iter().map(|a| (a.clip_id.as_str(), a)).collect();
    let lookup = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnmatchedSample(id.to_string()))
    };

    let mut samples: Vec<&MeasurementReport> = reports.iter().flat_map(|r| r.samples()).collect();
    if samples.is_empty() {
        return Err(Error::UnmatchedSample("<no predictions>".into()));
    }
    samples.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));

    let mut rows = Vec::with_capacity(samples.len());
    let mut pred_len = vec![Vec::new(); 3];
    let mut gt_len = vec![Vec::new(); 3];
    for r in &samples {
        let ann = lookup(&r.clip_id)?;
        let e = evaluate_sample(&r.landmarks_bmode, &ann.landmarks_bmode, r.spacing_cm_per_px)
            .map_err(|e| Error::from(e).with_clip(&r.clip_id))?;
        let gt = ground_truth_lengths(ann, r.spacing_cm_per_px)?;
        for k in 0..3 {
            pred_len[k].push(r.segment_lengths.as_array()[k]);
            gt_len[k].push(gt.as_array()[k]);
        }
        rows.push(EvaluationRow {
            id: r.clip_id.clone(),
            mae_ivs: e.mae_per_structure[0],
            mae_lvid: e.mae_per_structure[1],
            mae_lvpw: e.mae_per_structure[2],
            mape_ivs: e.mape_per_structure[0],
            mape_lvid: e.mape_per_structure[1],
            mape_lvpw: e.mape_per_structure[2],
            ce: e.ce_cm,
            mae_avg: e.mae_avg_cm,
        });
    }

    let n = rows.len() as f64;
    let mut mean = std::collections::BTreeMap::new();
    let mut sd = std::collections::BTreeMap::new();
    for (k, name) in ROW_FIELDS.iter().enumerate() {
        let xs: Vec<f64> = rows.iter().map(|r| r.values()[k]).collect();
        let m = xs.iter().sum::<f64>() / n;
        mean.insert(name.to_string(), m);
        let s = (rows.len() > 1).then(|| {
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        });
        sd.insert(name.to_string(), s);
    }

    let mae_mm: Vec<f64> = rows.iter().map(|r| r.mae_avg * 10.0).collect();
    let curve = sdr_curve(&mae_mm, thresholds_mm)?;
    let sdr = curve
        .thresholds_mm
        .iter()
        .zip(&curve.rates)
        .map(|(&threshold_mm, &rate)| SdrPoint { threshold_mm, rate })
        .collect();

    let mut pred_ix = vec![Vec::new(); 6];
    let mut gt_ix = vec![Vec::new(); 6];
    let mut paired_reports: Vec<&MeasurementReport> = reports
        .iter()
        .filter(|r| r.paired.is_some() && r.cardiac_indices.is_some())
        .collect();
    paired_reports.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    for r in &paired_reports {
        let other = r.paired.as_deref().expect("filtered");
        let (ed, es) = if r.phase == Phase::EndDiastole { (*r, other) } else { (other, *r) };
        let gt = CardiacIndices::from_pair(&PairedMeasurement {
            ed: ground_truth_lengths(lookup(&ed.clip_id)?, ed.spacing_cm_per_px)?,
            es: ground_truth_lengths(lookup(&es.clip_id)?, es.spacing_cm_per_px)?,
        })
        .map_err(|e| Error::from(e).with_clip(&r.clip_id))?;
        let pred = r.cardiac_indices.as_ref().expect("filtered").values;
        for k in 0..6 {
            pred_ix[k].push(pred.as_array()[k]);
            gt_ix[k].push(gt.as_array()[k]);
        }
    }
    let has_indices = !paired_reports.is_empty();

    Ok(Evaluation {
        rows,
        summary: EvaluationSummary {
            sample_count: samples.len(),
            mean,
            sd,
            sdr,
            lengths: agreement(&STRUCTURES, &pred_len, &gt_len),
            indices: has_indices.then(|| agreement(&INDEX_NAMES, &pred_ix, &gt_ix)),
            index_conventions: has_indices.then(IndexConventions::default),
        },
    })
}

impl Evaluation {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), Error> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Output(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Output(e.to_string()))
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }
}
