//! Python bindings for the AMM left-ventricle measurement pipeline.
//!
//! Structured values (reports, manifests, specs, annotations) cross the
//! boundary as plain dicts with the same field names as the JSON files.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::de::DeserializeOwned;
use serde::Serialize;

use lvamm::amm::{self, AmmImage, EchoClip, Frame};
use lvamm::detector::{DetectorDescriptor, BASELINE_ID};
use lvamm::formats::{self, AnnotationRecord, LoadedClip};
use lvamm::indices;
use lvamm::metrics::{self, SegmentLengths};
use lvamm::phantom::PhantomSpec;
use lvamm::pipeline::{self, ClipInfo, MeasurementReport, PipelineConfig};

create_exception!(lvamm, InputError, PyValueError, "Bad or inconsistent input.");
create_exception!(
    lvamm,
    ProcessingError,
    PyRuntimeError,
    "A valid input could not be measured."
);

const HEATMAP_DETECTOR_ID: &str = "heatmap-file";

fn raise(e: lvamm::Error) -> PyErr {
    if e.is_input_error() {
        InputError::new_err(e.to_string())
    } else {
        ProcessingError::new_err(e.to_string())
    }
}

fn core<E: Into<lvamm::Error>>(e: E) -> PyErr {
    raise(e.into())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>, what: &str) -> PyResult<T> {
    let text: String = obj
        .py()
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&text).map_err(|e| InputError::new_err(format!("malformed {what}: {e}")))
}

fn frame_from_rows(rows: Vec<Vec<f64>>) -> PyResult<Frame> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(InputError::new_err("frame rows differ in length"));
    }
    Frame::new(width, height, rows.concat()).map_err(core)
}

/// A pixel position; origin top-left, x rightward, y downward.
#[pyclass(module = "lvamm", from_py_object)]
#[derive(Clone, Copy)]
struct Point {
    #[pyo3(get, set)]
    x: f64,
    #[pyo3(get, set)]
    y: f64,
}

impl From<amm::Point> for Point {
    fn from(p: amm::Point) -> Self {
        Point { x: p.x, y: p.y }
    }
}

impl From<Point> for amm::Point {
    fn from(p: Point) -> Self {
        amm::Point::new(p.x, p.y)
    }
}

#[pymethods]
impl Point {
    #[new]
    fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    fn distance(&self, other: Point) -> f64 {
        amm::Point::from(*self).distance(other.into())
    }

    fn __repr__(&self) -> String {
        format!("Point(x={}, y={})", self.x, self.y)
    }

    fn __eq__(&self, other: Point) -> bool {
        self.x == other.x && self.y == other.y
    }
}

/// Operator scanline from the septum side to the posterior wall.
#[pyclass(module = "lvamm", from_py_object)]
#[derive(Clone, Copy)]
struct Scanline {
    inner: amm::Scanline,
}

#[pymethods]
impl Scanline {
    #[new]
    fn new(p_start: Point, p_end: Point) -> PyResult<Self> {
        let inner = amm::Scanline::new(p_start.into(), p_end.into()).map_err(core)?;
        Ok(Scanline { inner })
    }

    /// Parse `"x0,y0,x1,y1"`.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        let v: Vec<f64> = text
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| InputError::new_err(format!("bad scanline '{text}': {e}")))?;
        match v[..] {
            [x0, y0, x1, y1] => Self::new(Point::new(x0, y0), Point::new(x1, y1)),
            _ => Err(InputError::new_err(format!(
                "bad scanline '{text}': expected 4 numbers"
            ))),
        }
    }

    #[getter]
    fn p_start(&self) -> Point {
        self.inner.p_start.into()
    }

    #[getter]
    fn p_end(&self) -> Point {
        self.inner.p_end.into()
    }

    fn length(&self) -> f64 {
        self.inner.length()
    }

    fn perpendicular_distance(&self, p: Point) -> f64 {
        self.inner.perpendicular_distance(p.into())
    }

    /// The `v_count` equidistant sample points, endpoints included.
    fn sample(&self, v_count: usize, width: usize, height: usize) -> PyResult<Vec<Point>> {
        let path = amm::sample_scanline(&self.inner, v_count, amm::FrameSize { width, height })
            .map_err(core)?;
        Ok(path.points.into_iter().map(Point::from).collect())
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        let (a, b) = (self.inner.p_start, self.inner.p_end);
        format!("Scanline(({}, {}) -> ({}, {}))", a.x, a.y, b.x, b.y)
    }
}

/// AMM image: `v_count` rows along the scanline by `w_count` frames.
#[pyclass(module = "lvamm")]
struct Amm {
    inner: AmmImage,
}

#[pymethods]
impl Amm {
    #[getter]
    fn v_count(&self) -> usize {
        self.inner.v_count()
    }

    #[getter]
    fn w_count(&self) -> usize {
        self.inner.w_count()
    }

    #[getter]
    fn anchor_column(&self) -> usize {
        self.inner.anchor_column
    }

    fn get(&self, v: usize, w: usize) -> PyResult<f64> {
        if v >= self.inner.v_count() || w >= self.inner.w_count() {
            return Err(pyo3::exceptions::PyIndexError::new_err(format!("({v}, {w})")));
        }
        Ok(self.inner.get(v, w))
    }

    /// Row-major `v_count` x `w_count` nested lists.
    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner
            .data()
            .chunks(self.inner.w_count())
            .map(<[f64]>::to_vec)
            .collect()
    }

    fn path(&self) -> Vec<Point> {
        self.inner.path.points.iter().copied().map(Point::from).collect()
    }

    fn to_png<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &formats::amm_png(&self.inner))
    }
}

/// A W-frame window of a video centred on its anchor frame.
#[pyclass(module = "lvamm")]
struct Clip {
    id: String,
    phase: formats::Phase,
    inner: EchoClip,
}

impl Clip {
    fn info(&self) -> ClipInfo {
        ClipInfo {
            id: self.id.clone(),
            phase: self.phase,
        }
    }
}

fn pipeline_config(
    v_count: Option<usize>,
    sigma: Option<f64>,
    config: Option<&Bound<'_, PyAny>>,
    w_count: usize,
) -> PyResult<PipelineConfig> {
    let mut cfg: PipelineConfig = match config {
        Some(c) => from_py(c, "pipeline config")?,
        None => PipelineConfig::default(),
    };
    cfg.w_count = w_count;
    if let Some(v) = v_count {
        cfg.v_count = v;
    }
    if let Some(s) = sigma {
        cfg.sigma = s;
    }
    Ok(cfg)
}

fn resolve_detector(
    cfg: &mut PipelineConfig,
    detector: Option<&str>,
    heatmap: Option<String>,
) -> PyResult<DetectorDescriptor> {
    let id = match (detector, &heatmap) {
        (Some(id), _) => id.to_string(),
        (None, Some(_)) => HEATMAP_DETECTOR_ID.to_string(),
        (None, None) => BASELINE_ID.to_string(),
    };
    if let Some(prefix) = heatmap {
        cfg.detectors
            .push(DetectorDescriptor::external(HEATMAP_DETECTOR_ID, prefix));
    }
    let registry = cfg.registry().map_err(raise)?;
    Ok(registry.resolve(&id).map_err(core)?.clone())
}

#[pymethods]
impl Clip {
    /// Build a clip from in-memory frames (each a list of rows of floats in
    /// [0, 1]).
    #[new]
    #[pyo3(signature = (frames, anchor_index, id = "clip".to_string(), phase = "ED", spacing_cm_per_px = 0.05, frame_interval_s = 0.02, w_count = amm::DEFAULT_W_COUNT))]
    fn new(
        frames: Vec<Vec<Vec<f64>>>,
        anchor_index: usize,
        id: String,
        phase: &str,
        spacing_cm_per_px: f64,
        frame_interval_s: f64,
        w_count: usize,
    ) -> PyResult<Self> {
        let phase: formats::Phase = serde_json::from_value(serde_json::Value::from(phase))
            .map_err(|_| InputError::new_err(format!("phase must be 'ED' or 'ES', got '{phase}'")))?;
        let frames = frames
            .into_iter()
            .map(frame_from_rows)
            .collect::<PyResult<Vec<_>>>()?;
        let inner = amm::extract_clip(&frames, anchor_index, w_count, spacing_cm_per_px, frame_interval_s)
            .map_err(core)?;
        Ok(Clip { id, phase, inner })
    }

    #[getter]
    fn id(&self) -> &str {
        &self.id
    }

    #[getter]
    fn phase(&self) -> &'static str {
        match self.phase {
            formats::Phase::EndDiastole => "ED",
            formats::Phase::EndSystole => "ES",
        }
    }

    #[getter]
    fn w_count(&self) -> usize {
        self.inner.w_count()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.size().width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.size().height
    }

    #[getter]
    fn spacing_cm_per_px(&self) -> f64 {
        self.inner.spacing_cm_per_px
    }

    /// Frame `w` of the window as nested rows.
    fn frame(&self, w: usize) -> PyResult<Vec<Vec<f64>>> {
        let f = self
            .inner
            .frames
            .get(w)
            .ok_or_else(|| pyo3::exceptions::PyIndexError::new_err(w))?;
        Ok(f.data().chunks(f.width()).map(<[f64]>::to_vec).collect())
    }

    #[pyo3(signature = (scanline, v_count = amm::DEFAULT_V_COUNT))]
    fn amm(&self, py: Python<'_>, scanline: Scanline, v_count: usize) -> PyResult<Amm> {
        let inner = py
            .detach(|| amm::synthesize_amm(&self.inner, &scanline.inner, v_count))
            .map_err(core)?;
        Ok(Amm { inner })
    }

    /// Measure IVS, LVID and LVPW along `scanline`; returns the report dict.
    #[pyo3(signature = (scanline, detector = None, heatmap = None, v_count = None, sigma = None, config = None))]
    #[allow(clippy::too_many_arguments)]
    fn measure<'py>(
        &self,
        py: Python<'py>,
        scanline: Scanline,
        detector: Option<&str>,
        heatmap: Option<String>,
        v_count: Option<usize>,
        sigma: Option<f64>,
        config: Option<&Bound<'py, PyAny>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let report = self.run(py, &scanline, detector, heatmap, v_count, sigma, config)?;
        to_py(py, &report)
    }

    /// Measure this clip and `other` (one ED, one ES) along the same
    /// scanline; the report carries cardiac indices.
    #[pyo3(signature = (other, scanline, detector = None, heatmap = None, v_count = None, sigma = None, config = None))]
    #[allow(clippy::too_many_arguments)]
    fn measure_pair<'py>(
        &self,
        py: Python<'py>,
        other: PyRef<'py, Clip>,
        scanline: Scanline,
        detector: Option<&str>,
        heatmap: Option<String>,
        v_count: Option<usize>,
        sigma: Option<f64>,
        config: Option<&Bound<'py, PyAny>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let a = self.run(py, &scanline, detector, heatmap.clone(), v_count, sigma, config)?;
        let b = other.run(py, &scanline, detector, heatmap, v_count, sigma, config)?;
        to_py(py, &pipeline::pair_reports(a, b).map_err(raise)?)
    }

    fn __repr__(&self) -> String {
        format!(
            "Clip(id='{}', phase='{}', {}x{}, w_count={})",
            self.id,
            self.phase(),
            self.width(),
            self.height(),
            self.w_count()
        )
    }
}

impl Clip {
    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        py: Python<'_>,
        sl: &Scanline,
        detector: Option<&str>,
        heatmap: Option<String>,
        v_count: Option<usize>,
        sigma: Option<f64>,
        config: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<MeasurementReport> {
        let mut cfg = pipeline_config(v_count, sigma, config, self.inner.w_count())?;
        let det = resolve_detector(&mut cfg, detector, heatmap)?;
        let info = self.info();
        py.detach(|| pipeline::measure_clip(&self.inner, &info, &sl.inner, &det, &cfg))
            .map(|m| m.report)
            .map_err(raise)
    }
}

/// Read a clip manifest and its PNG frames.
#[pyfunction]
#[pyo3(signature = (manifest, w_count = amm::DEFAULT_W_COUNT))]
fn load_clip(py: Python<'_>, manifest: PathBuf, w_count: usize) -> PyResult<Clip> {
    let LoadedClip { manifest, clip } = py
        .detach(|| formats::load_manifest(&manifest, w_count))
        .map_err(core)?;
    Ok(Clip {
        id: manifest.id,
        phase: manifest.phase,
        inner: clip,
    })
}

/// Write a synthetic phantom dataset to `out_dir`; returns the written paths.
#[pyfunction]
#[pyo3(signature = (out_dir, spec = None, seed = None, noise_sd = None, frames = None, spacing = 0.05, angle_deg = 0.0))]
#[allow(clippy::too_many_arguments)]
fn emit_phantom<'py>(
    py: Python<'py>,
    out_dir: PathBuf,
    spec: Option<&Bound<'py, PyAny>>,
    seed: Option<u64>,
    noise_sd: Option<f64>,
    frames: Option<usize>,
    spacing: f64,
    angle_deg: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let mut spec: PhantomSpec = match spec {
        Some(s) => from_py(s, "phantom spec")?,
        None => PhantomSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(n) = noise_sd {
        spec.noise_sd = n;
    }
    if let Some(f) = frames {
        spec.frame_count = f;
    }
    spec.validate().map_err(core)?;
    let sl = formats::phantom_scanline(&spec, angle_deg);
    let ds = py
        .detach(|| formats::emit_phantom_dataset(&spec, &out_dir, &sl, spacing))
        .map_err(core)?;
    let paths = serde_json::json!({
        "ed_manifest": ds.ed_manifest,
        "es_manifest": ds.es_manifest,
        "annotations": ds.annotations,
        "spec": ds.spec,
    });
    to_py(py, &paths)
}

/// Score report dicts against annotation dicts; returns `(rows, summary)`.
#[pyfunction]
#[pyo3(signature = (reports, annotations, thresholds_mm = None))]
fn evaluate<'py>(
    py: Python<'py>,
    reports: &Bound<'py, PyAny>,
    annotations: &Bound<'py, PyAny>,
    thresholds_mm: Option<Vec<f64>>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let reports: Vec<MeasurementReport> = from_py(reports, "reports")?;
    let annotations: Vec<AnnotationRecord> = from_py(annotations, "annotations")?;
    let thresholds = thresholds_mm.unwrap_or_else(pipeline::default_thresholds_mm);
    let ev = pipeline::evaluate(&reports, &annotations, &thresholds).map_err(raise)?;
    Ok((to_py(py, &ev.rows)?, to_py(py, &ev.summary)?))
}

/// Read an annotations JSON file as a list of dicts.
#[pyfunction]
fn read_annotations(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &formats::read_annotations(&path).map_err(core)?)
}

/// Bilinear sample of a frame (nested rows) at `(x, y)`; clamps at the border.
#[pyfunction]
fn bilinear_sample(frame: Vec<Vec<f64>>, x: f64, y: f64) -> PyResult<f64> {
    amm::bilinear_sample(&frame_from_rows(frame)?, amm::Point::new(x, y)).map_err(core)
}

fn lengths_dict<'py>(py: Python<'py>, s: &SegmentLengths) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, s)
}

/// IVS, LVID and LVPW in cm from four landmarks ordered along the scanline.
#[pyfunction]
fn segment_lengths(py: Python<'_>, landmarks: [Point; 4], spacing_cm_per_px: f64) -> PyResult<Bound<'_, PyAny>> {
    let pts = landmarks.map(amm::Point::from);
    let s = metrics::segment_lengths(&pts, spacing_cm_per_px).map_err(core)?;
    lengths_dict(py, &s)
}

/// Mean landmark distance in cm.
#[pyfunction]
fn coordinate_error(pred: [Point; 4], gt: [Point; 4], spacing_cm_per_px: f64) -> PyResult<f64> {
    metrics::coordinate_error(&pred.map(amm::Point::from), &gt.map(amm::Point::from), spacing_cm_per_px)
        .map_err(core)
}

/// LV mass in grams from end-diastolic IVS, LVID and LVPW (cm).
#[pyfunction]
fn lv_mass(ivs: f64, lvid: f64, lvpw: f64) -> PyResult<f64> {
    indices::lv_mass(&SegmentLengths::from_array([ivs, lvid, lvpw])).map_err(core)
}

/// Teichholz volume in mL from LVID in cm.
#[pyfunction]
fn teichholz_volume(lvid_cm: f64) -> PyResult<f64> {
    indices::teichholz_volume(lvid_cm).map_err(core)
}

/// Ejection fraction as a fraction in [0, 1].
#[pyfunction]
fn ejection_fraction(edv: f64, esv: f64) -> PyResult<f64> {
    indices::ejection_fraction(edv, esv).map_err(core)
}

#[pyfunction]
fn fractional_shortening(ed_lvid: f64, es_lvid: f64) -> PyResult<f64> {
    indices::fractional_shortening(ed_lvid, es_lvid).map_err(core)
}

#[pyfunction]
fn relative_wall_thickness(ed_lvpw: f64, ed_lvid: f64) -> PyResult<f64> {
    indices::relative_wall_thickness(ed_lvpw, ed_lvid).map_err(core)
}

#[pymodule(name = "lvamm")]
fn lvamm_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("InputError", py.get_type::<InputError>())?;
    m.add("ProcessingError", py.get_type::<ProcessingError>())?;
    m.add("COORDINATE_CONVENTION", formats::coordinate_convention())?;
    m.add("DEFAULT_V_COUNT", amm::DEFAULT_V_COUNT)?;
    m.add("DEFAULT_W_COUNT", amm::DEFAULT_W_COUNT)?;
    m.add_class::<Point>()?;
    m.add_class::<Scanline>()?;
    m.add_class::<Amm>()?;
    m.add_class::<Clip>()?;
    m.add_function(wrap_pyfunction!(load_clip, m)?)?;
    m.add_function(wrap_pyfunction!(emit_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(read_annotations, m)?)?;
    m.add_function(wrap_pyfunction!(bilinear_sample, m)?)?;
    m.add_function(wrap_pyfunction!(segment_lengths, m)?)?;
    m.add_function(wrap_pyfunction!(coordinate_error, m)?)?;
    m.add_function(wrap_pyfunction!(lv_mass, m)?)?;
    m.add_function(wrap_pyfunction!(teichholz_volume, m)?)?;
    m.add_function(wrap_pyfunction!(ejection_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(fractional_shortening, m)?)?;
    m.add_function(wrap_pyfunction!(relative_wall_thickness, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ragged_frames_are_rejected() {
        assert!(frame_from_rows(vec![vec![0.0, 1.0], vec![0.5]]).is_err());
        let f = frame_from_rows(vec![vec![0.0, 1.0], vec![0.5, 0.25]]).unwrap();
        assert_eq!((f.width(), f.height(), f.get(1, 1)), (2, 2, 0.25));
    }

    #[test]
    fn heatmap_prefix_registers_external_detector() {
        let mut cfg = PipelineConfig::default();
        let d = resolve_detector(&mut cfg, None, Some("/tmp/{clip_id}".into())).unwrap();
        assert_eq!(d.id, HEATMAP_DETECTOR_ID);
        assert_eq!(d.for_clip("a").params["path"], "/tmp/a");
        let mut cfg = PipelineConfig::default();
        assert_eq!(resolve_detector(&mut cfg, None, None).unwrap().id, BASELINE_ID);
    }
}
