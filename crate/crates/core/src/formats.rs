//! On-disk formats: clip manifests, grayscale PNG frames and annotation files.
//!
//! All coordinates are pixels with the origin at the top-left corner, x
//! increasing rightward and y downward. Every JSON object this crate emits
//! carries that statement in its `coordinate_convention` field.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageEncoder, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amm::{extract_clip, AmmError, AmmImage, EchoClip, Frame, Point, Scanline};
use crate::phantom::{ground_truth_landmarks, keyframes, render_video, PhantomError, PhantomSpec};

pub const COORDINATE_CONVENTION: &str =
    "pixels; origin top-left; x rightward; y downward";

pub fn coordinate_convention() -> String {
    COORDINATE_CONVENTION.to_string()
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}: frame is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch {
        file: String,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },
    #[error("malformed annotations {path}: {reason}")]
    MalformedAnnotations { path: PathBuf, reason: String },
    #[error("cannot decode image {name}: {reason}")]
    Decode { name: String, reason: String },
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error(transparent)]
    Clip(#[from] AmmError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
}

fn io_err(path: &Path, e: impl ToString) -> FormatError {
    FormatError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "ES")]
    EndSystole,
    #[serde(rename = "ED")]
    EndDiastole,
}

/// A clip described by an ordered list of frame images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    #[serde(default = "coordinate_convention")]
    pub coordinate_convention: String,
    pub id: String,
    /// Paths relative to the manifest's directory (absolute paths also accepted).
    pub frame_files: Vec<String>,
    /// Index of the ES/ED frame within `frame_files`.
    pub anchor_index: usize,
    pub phase: Phase,
    pub spacing_cm_per_px: f64,
    pub frame_interval_s: f64,
}

impl ClipManifest {
    pub fn check(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.frame_files.is_empty() {
            return Err("no frame files".into());
        }
        if self.anchor_index >= self.frame_files.len() {
            return Err(format!(
                "anchor_index {} outside {} frames",
                self.anchor_index,
                self.frame_files.len()
            ));
        }
        if !(self.spacing_cm_per_px > 0.0) {
            return Err("spacing_cm_per_px must be positive".into());
        }
        if !(self.frame_interval_s > 0.0) {
            return Err("frame_interval_s must be positive".into());
        }
        Ok(())
    }
}

/// Decode a PNG into a frame normalized to `[0, 1]` (8-bit by 255, 16-bit by
/// 65535; colour images are converted to luma first).
pub fn decode_png(bytes: &[u8], name: &str) -> Result<Frame, FormatError> {
    let decode_err = |e: &dyn ToString| FormatError::Decode {
        name: name.to_string(),
        reason: e.to_string(),
    };
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| decode_err(&e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let frame = match img {
        DynamicImage::ImageLuma16(buf) => Frame::new(
            w,
            h,
            buf.into_raw().iter().map(|&p| f64::from(p) / 65535.0).collect(),
        ),
        DynamicImage::ImageLuma8(buf) => Frame::from_u8(w, h, buf.as_raw()),
        other => Frame::from_u8(w, h, other.to_luma8().as_raw()),
    };
    frame.map_err(|e| decode_err(&e))
}

/// Encode 8-bit grayscale pixels as PNG.
pub fn encode_gray_png(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(Cursor::new(&mut out))
        .write_image(
            pixels,
            width as u32,
            height as u32,
            image::ExtendedColorType::L8,
        )
        .expect("in-memory PNG encoding of a correctly sized buffer");
    out
}

pub fn frame_png(frame: &Frame) -> Vec<u8> {
    encode_gray_png(frame.width(), frame.height(), &frame.to_u8())
}

/// AMM image as PNG: rows are scanline samples, columns are frames.
pub fn amm_png(amm: &AmmImage) -> Vec<u8> {
    encode_gray_png(amm.w_count(), amm.v_count(), &amm.to_u8())
}

pub fn read_manifest(path: &Path) -> Result<ClipManifest, FormatError> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => FormatError::MissingFile(path.to_path_buf()),
        _ => io_err(path, e),
    })?;
    let malformed = |reason: String| FormatError::MalformedManifest {
        path: path.to_path_buf(),
        reason,
    };
    let manifest: ClipManifest =
        serde_json::from_slice(&bytes).map_err(|e| malformed(e.to_string()))?;
    manifest.check().map_err(malformed)?;
    Ok(manifest)
}

/// Turn decoded frames into a clip, enforcing equal dimensions.
pub fn assemble_clip(
    manifest: &ClipManifest,
    frames: Vec<Frame>,
    w_count: usize,
) -> Result<EchoClip, FormatError> {
    if let Some(first) = frames.first() {
        let size = first.size();
        for (i, f) in frames.iter().enumerate() {
            if f.size() != size {
                return Err(FormatError::DimensionMismatch {
                    file: manifest.frame_files[i].clone(),
                    got_w: f.width(),
                    got_h: f.height(),
                    want_w: size.width,
                    want_h: size.height,
                });
            }
        }
    }
    Ok(extract_clip(
        &frames,
        manifest.anchor_index,
        w_count,
        manifest.spacing_cm_per_px,
        manifest.frame_interval_s,
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedClip {
    pub manifest: ClipManifest,
    pub clip: EchoClip,
}

/// Read a manifest and its frames, then extract the `w_count`-frame clip
/// centred on the anchor.
pub fn load_manifest(path: &Path, w_count: usize) -> Result<LoadedClip, FormatError> {
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let frames = manifest
        .frame_files
        .iter()
        .map(|name| {
            let p = base.join(name);
            let bytes = fs::read(&p).map_err(|_| FormatError::MissingFile(p.clone()))?;
            decode_png(&bytes, name)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let clip = assemble_clip(&manifest, frames, w_count)?;
    Ok(LoadedClip { manifest, clip })
}

/// Expert landmarks for one clip: four points along the scanline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub clip_id: String,
    pub scanline: Scanline,
    pub landmarks_bmode: [Point; 4],
    pub phase: Phase,
}

/// Largest perpendicular distance tolerated between an annotated landmark
/// and its scanline.
pub const ANNOTATION_COLLINEARITY_PX: f64 = 0.5;

impl AnnotationRecord {
    pub fn check(&self) -> Result<(), String> {
        self.scanline
            .check_non_degenerate()
            .map_err(|e| e.to_string())?;
        for p in &self.landmarks_bmode {
            let d = self.scanline.perpendicular_distance(*p);
            if !(d <= ANNOTATION_COLLINEARITY_PX) {
                return Err(format!(
                    "{}: landmark ({}, {}) is {d:.3} px off the scanline",
                    self.clip_id, p.x, p.y
                ));
            }
        }
        let (a, b) = (self.scanline.p_start, self.scanline.p_end);
        let along: Vec<f64> = self
            .landmarks_bmode
            .iter()
            .map(|p| (p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y))
            .collect();
        if along.windows(2).any(|w| w[1] < w[0]) {
            return Err(format!("{}: landmarks not ordered along the scanline", self.clip_id));
        }
        Ok(())
    }
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, FormatError> {
    let bytes = fs::read(path).map_err(|_| FormatError::MissingFile(path.to_path_buf()))?;
    let malformed = |reason: String| FormatError::MalformedAnnotations {
        path: path.to_path_buf(),
        reason,
    };
    let records: Vec<AnnotationRecord> =
        serde_json::from_slice(&bytes).map_err(|e| malformed(e.to_string()))?;
    for r in &records {
        r.check().map_err(malformed)?;
    }
    Ok(records)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| io_err(path, e))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Files written by [`emit_phantom_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomDataset {
    pub ed_manifest: PathBuf,
    pub es_manifest: PathBuf,
    pub annotations: PathBuf,
    pub spec: PathBuf,
}

/// Default scanline for phantom datasets: vertical through the image centre,
/// reaching 20 px beyond the outermost wall excursion (clamped to the frame).
pub fn default_phantom_scanline(spec: &PhantomSpec) -> Scanline {
    phantom_scanline(spec, 0.0)
}

/// Like [`default_phantom_scanline`] but tilted by `angle_deg` from vertical
/// about its midpoint, keeping the same vertical extent. Positive angles run
/// down and to the right.
pub fn phantom_scanline(spec: &PhantomSpec, angle_deg: f64) -> Scanline {
    let x = ((spec.width() - 1) / 2) as f64;
    let bottom = (spec.height() - 1) as f64;
    let (lo, hi) = spec
        .baseline_rows
        .iter()
        .zip(&spec.amplitudes_px)
        .fold((bottom, 0.0f64), |(lo, hi), (b, a)| {
            (lo.min(b - a.abs()), hi.max(b + a.abs()))
        });
    let (top, bot) = ((lo - 20.0).max(0.0), (hi + 20.0).min(bottom));
    let dx = (bot - top) / 2.0 * angle_deg.to_radians().tan();
    Scanline {
        p_start: Point::new(x - dx, top),
        p_end: Point::new(x + dx, bot),
    }
}

/// Render a phantom video into `dir` as PNG frames with ED and ES manifests
/// and ground-truth annotations along `sl`.
pub fn emit_phantom_dataset(
    spec: &PhantomSpec,
    dir: &Path,
    sl: &Scanline,
    spacing_cm_per_px: f64,
) -> Result<PhantomDataset, FormatError> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| io_err(&frames_dir, e))?;
    let video = render_video(spec)?;
    let mut frame_files = Vec::with_capacity(video.len());
    for (k, frame) in video.iter().enumerate() {
        let name = format!("frames/frame_{k:04}.png");
        let p = dir.join(&name);
        fs::write(&p, frame_png(frame)).map_err(|e| io_err(&p, e))?;
        frame_files.push(name);
    }
    let keys = keyframes(spec)?;
    let mut annotations = Vec::new();
    let mut paths = Vec::new();
    for (phase, anchor, tag) in [
        (Phase::EndDiastole, keys.ed, "ed"),
        (Phase::EndSystole, keys.es, "es"),
    ] {
        let id = format!("phantom-{}-{tag}", spec.seed);
        let manifest = ClipManifest {
            coordinate_convention: coordinate_convention(),
            id: id.clone(),
            frame_files: frame_files.clone(),
            anchor_index: anchor,
            phase,
            spacing_cm_per_px,
            frame_interval_s: spec.frame_interval_s,
        };
        let p = dir.join(format!("{tag}.json"));
        write_json(&p, &manifest)?;
        paths.push(p);
        annotations.push(AnnotationRecord {
            clip_id: id,
            scanline: *sl,
            landmarks_bmode: ground_truth_landmarks(spec, spec.frame_time(anchor), sl)?,
            phase,
        });
    }
    let annotations_path = dir.join("annotations.json");
    write_json(&annotations_path, &annotations)?;
    let spec_path = dir.join("phantom.json");
    write_json(&spec_path, spec)?;
    Ok(PhantomDataset {
        ed_manifest: paths[0].clone(),
        es_manifest: paths[1].clone(),
        annotations: annotations_path,
        spec: spec_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_frames(dir: &Path, sizes: &[(usize, usize)]) -> Vec<String> {
        sizes
            .iter()
            .enumerate()
            .map(|(i, &(w, h))| {
                let name = format!("f{i}.png");
                let px: Vec<u8> = (0..w * h).map(|k| (k * 37 % 256) as u8).collect();
                fs::write(dir.join(&name), encode_gray_png(w, h, &px)).unwrap();
                name
            })
            .collect()
    }

    fn manifest(files: Vec<String>, anchor: usize) -> ClipManifest {
        ClipManifest {
            coordinate_convention: coordinate_convention(),
            id: "c1".into(),
            frame_files: files,
            anchor_index: anchor,
            phase: Phase::EndDiastole,
            spacing_cm_per_px: 0.05,
            frame_interval_s: 0.02,
        }
    }

    #[test]
    fn single_frame_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_frames(dir.path(), &[(8, 6)]);
        let p = dir.path().join("m.json");
        write_json(&p, &manifest(files, 0)).unwrap();
        let loaded = load_manifest(&p, 1).unwrap();
        assert_eq!(loaded.clip.w_count(), 1);
        assert_eq!(loaded.clip.anchor_index, 0);
        assert_eq!(loaded.clip.frames[0].get(1, 0), 37.0 / 255.0);
    }

    #[test]
    fn mixed_sizes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_frames(dir.path(), &[(8, 6), (8, 6), (6, 8)]);
        let p = dir.path().join("m.json");
        write_json(&p, &manifest(files, 1)).unwrap();
        match load_manifest(&p, 4) {
            Err(FormatError::DimensionMismatch { file, .. }) => assert_eq!(file, "f2.png"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_frame_and_bad_json() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        write_json(&p, &manifest(vec!["nope.png".into()], 0)).unwrap();
        assert!(matches!(load_manifest(&p, 4), Err(FormatError::MissingFile(_))));
        fs::write(&p, "{\"id\": 3}").unwrap();
        assert!(matches!(
            load_manifest(&p, 4),
            Err(FormatError::MalformedManifest { .. })
        ));
        write_json(&p, &manifest(vec!["a.png".into()], 1)).unwrap();
        assert!(matches!(
            load_manifest(&p, 4),
            Err(FormatError::MalformedManifest { .. })
        ));
        assert!(matches!(
            load_manifest(&dir.path().join("absent.json"), 4),
            Err(FormatError::MissingFile(_))
        ));
    }

    #[test]
    fn manifest_phase_spelling() {
        let json = serde_json::to_value(manifest(vec!["a.png".into()], 0)).unwrap();
        assert_eq!(json["phase"], "ED");
        assert_eq!(json["coordinate_convention"], COORDINATE_CONVENTION);
    }

    #[test]
    fn png_round_trip_is_lossless_for_8_bit() {
        let px: Vec<u8> = (0..=255).collect();
        let f = decode_png(&encode_gray_png(16, 16, &px), "x").unwrap();
        assert_eq!(f.to_u8(), px);
        assert_eq!(frame_png(&f), encode_gray_png(16, 16, &px));
    }

    #[test]
    fn phantom_dataset_reloads_rendered_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PhantomSpec {
            img_size: [64, 48],
            frame_count: 12,
            baseline_rows: [10.0, 18.0, 40.0, 48.0],
            amplitudes_px: [1.0, 2.0, -2.0, -1.0],
            ..PhantomSpec::default()
        };
        let sl = default_phantom_scanline(&spec);
        let out = emit_phantom_dataset(&spec, dir.path(), &sl, 0.05).unwrap();
        let video = render_video(&spec).unwrap();
        let loaded = load_manifest(&out.ed_manifest, 4).unwrap();
        let keys = keyframes(&spec).unwrap();
        assert_eq!(loaded.manifest.anchor_index, keys.ed);
        let expected = Frame::from_u8(48, 64, &video[keys.ed].to_u8()).unwrap();
        assert_eq!(loaded.clip.frames[loaded.clip.anchor_index], expected);
        let ann = read_annotations(&out.annotations).unwrap();
        assert_eq!(ann.len(), 2);
        assert_eq!(ann[1].phase, Phase::EndSystole);
    }

    #[test]
    fn off_line_annotation_rejected() {
        let rec = AnnotationRecord {
            clip_id: "a".into(),
            scanline: Scanline {
                p_start: Point::new(10.0, 0.0),
                p_end: Point::new(10.0, 100.0),
            },
            landmarks_bmode: [
                Point::new(10.0, 10.0),
                Point::new(10.6, 20.0),
                Point::new(10.0, 60.0),
                Point::new(10.0, 70.0),
            ],
            phase: Phase::EndSystole,
        };
        assert!(rec.check().is_err());
    }
}
