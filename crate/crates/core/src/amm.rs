//! Scanline geometry, bilinear resampling and anatomical M-mode synthesis.
//!
//! An AMM image is a `V x W` grid: row `v` is the `v`-th equidistant sample
//! along the scanline, column `w` is the `w`-th frame of the clip. The anchor
//! frame always sits at column `W / 2`, so landmark coordinates in AMM space
//! have a fixed x and only the row index carries information.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default number of samples along the scanline (rows of the AMM image).
pub const DEFAULT_V_COUNT: usize = 256;
/// Default number of frames in an extracted clip (columns of the AMM image).
pub const DEFAULT_W_COUNT: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AmmError {
    #[error("degenerate scanline: start and end coincide at ({x}, {y})")]
    DegenerateScanline { x: f64, y: f64 },
    #[error("point ({x}, {y}) lies outside the {width}x{height} frame")]
    OutOfFrame {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("sample count must be at least 2, got {0}")]
    TooFewSamples(usize),
    #[error("AMM row {y} outside [0, {max}]")]
    IndexOutOfRange { y: f64, max: f64 },
    #[error("video contains no frames")]
    EmptyVideo,
    #[error("anchor {anchor} outside video of {len} frames")]
    AnchorOutOfRange { anchor: usize, len: usize },
    #[error("clip window must hold at least one frame")]
    EmptyWindow,
    #[error("frame {index} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch {
        index: usize,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("pixel spacing must be positive, got {0}")]
    NonPositiveSpacing(f64),
    #[error("frame buffer of {len} values does not match {width}x{height}")]
    BadFrameBuffer {
        len: usize,
        width: usize,
        height: usize,
    },
}

/// A point in pixel coordinates: origin top-left, x rightward, y downward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Affine blend `self * (1 - t) + other * t`; exact at `t = 0` and `t = 1`.
    pub fn lerp(self, other: Point, t: f64) -> Point {
        Point {
            x: self.x * (1.0 - t) + other.x * t,
            y: self.y * (1.0 - t) + other.y * t,
        }
    }
}

/// Landmark location on the anchor frame.
pub type BModePoint = Point;

/// Landmark location in AMM space: `x` is a time column, `y` a fractional
/// row (sample index along the scanline).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AmmPoint {
    pub x: f64,
    pub y: f64,
}

/// Virtual scanline placed by the operator on the anchor frame.
///
/// The direction matters: samples run from `p_start` to `p_end`, and
/// landmarks are reported in that order (septum first for a PLAX view).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scanline {
    pub p_start: Point,
    pub p_end: Point,
}

impl Scanline {
    pub fn new(p_start: Point, p_end: Point) -> Result<Self, AmmError> {
        let sl = Self { p_start, p_end };
        sl.check_non_degenerate()?;
        Ok(sl)
    }

    pub fn length(&self) -> f64 {
        self.p_start.distance(self.p_end)
    }

    pub fn check_non_degenerate(&self) -> Result<(), AmmError> {
        if self.p_start == self.p_end {
            return Err(AmmError::DegenerateScanline {
                x: self.p_start.x,
                y: self.p_start.y,
            });
        }
        Ok(())
    }

    pub fn check_inside(&self, size: FrameSize) -> Result<(), AmmError> {
        size.check_point(self.p_start)?;
        size.check_point(self.p_end)
    }

    /// Perpendicular distance from `p` to the infinite line through the scanline.
    pub fn perpendicular_distance(&self, p: Point) -> f64 {
        let dx = self.p_end.x - self.p_start.x;
        let dy = self.p_end.y - self.p_start.y;
        ((p.x - self.p_start.x) * dy - (p.y - self.p_start.y) * dx).abs() / dx.hypot(dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSize {
    pub width: usize,
    pub height: usize,
}

impl FrameSize {
    fn check_point(self, p: Point) -> Result<(), AmmError> {
        let max_x = self.width as f64 - 1.0;
        let max_y = self.height as f64 - 1.0;
        // NaN fails every comparison and is rejected here as well.
        if p.x >= 0.0 && p.x <= max_x && p.y >= 0.0 && p.y <= max_y {
            Ok(())
        } else {
            Err(AmmError::OutOfFrame {
                x: p.x,
                y: p.y,
                width: self.width,
                height: self.height,
            })
        }
    }
}

/// `V` equidistant points on a scanline, both endpoints included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub points: Vec<Point>,
    /// Distance between consecutive samples, in pixels.
    pub spacing: f64,
}

impl SamplePath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> Point {
        self.points[0]
    }

    pub fn end(&self) -> Point {
        self.points[self.points.len() - 1]
    }
}

pub fn sample_scanline(
    sl: &Scanline,
    v_count: usize,
    size: FrameSize,
) -> Result<SamplePath, AmmError> {
    if v_count < 2 {
        return Err(AmmError::TooFewSamples(v_count));
    }
    sl.check_non_degenerate()?;
    sl.check_inside(size)?;
    let last = (v_count - 1) as f64;
    let points = (0..v_count)
        .map(|k| sl.p_start.lerp(sl.p_end, k as f64 / last))
        .collect();
    Ok(SamplePath {
        points,
        spacing: sl.length() / last,
    })
}

/// Single-channel frame with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, AmmError> {
        if data.len() != width * height || width == 0 || height == 0 {
            return Err(AmmError::BadFrameBuffer {
                len: data.len(),
                width,
                height,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn size(&self) -> FrameSize {
        FrameSize {
            width: self.width,
            height: self.height,
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    /// Frame from 8-bit samples, scaled to `[0, 1]`.
    pub fn from_u8(width: usize, height: usize, pixels: &[u8]) -> Result<Self, AmmError> {
        Self::new(
            width,
            height,
            pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
        )
    }

    /// Quantize to 8 bits with round-to-nearest; inverse of [`Frame::from_u8`].
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }
}

pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Bilinear blend of the four pixels surrounding `p`. No extrapolation:
/// points outside `[0, width-1] x [0, height-1]` are rejected.
pub fn bilinear_sample(frame: &Frame, p: Point) -> Result<f64, AmmError> {
    frame.size().check_point(p)?;
    Ok(bilinear_unchecked(frame, p))
}

#[inline]
fn bilinear_unchecked(frame: &Frame, p: Point) -> f64 {
    let x0 = (p.x.floor() as usize).min(frame.width - 1);
    let y0 = (p.y.floor() as usize).min(frame.height - 1);
    let x1 = (x0 + 1).min(frame.width - 1);
    let y1 = (y0 + 1).min(frame.height - 1);
    let fx = p.x - x0 as f64;
    let fy = p.y - y0 as f64;
    let top = (1.0 - fx) * frame.get(x0, y0) + fx * frame.get(x1, y0);
    let bottom = (1.0 - fx) * frame.get(x0, y1) + fx * frame.get(x1, y1);
    (1.0 - fy) * top + fy * bottom
}

/// `W` consecutive frames centred on an anchor (ES or ED) frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoClip {
    pub frames: Vec<Frame>,
    pub anchor_index: usize,
    pub spacing_cm_per_px: f64,
    pub frame_interval_s: f64,
}

impl EchoClip {
    pub fn w_count(&self) -> usize {
        self.frames.len()
    }

    pub fn size(&self) -> FrameSize {
        self.frames[0].size()
    }

    pub fn anchor_frame(&self) -> &Frame {
        &self.frames[self.anchor_index]
    }
}

/// Cut a `w_count`-frame window centred on `anchor`. Window positions that
/// fall outside the video repeat the nearest edge frame.
pub fn extract_clip(
    video: &[Frame],
    anchor: usize,
    w_count: usize,
    spacing_cm_per_px: f64,
    frame_interval_s: f64,
) -> Result<EchoClip, AmmError> {
    if video.is_empty() {
        return Err(AmmError::EmptyVideo);
    }
    if anchor >= video.len() {
        return Err(AmmError::AnchorOutOfRange {
            anchor,
            len: video.len(),
        });
    }
    if w_count == 0 {
        return Err(AmmError::EmptyWindow);
    }
    if !(spacing_cm_per_px > 0.0) {
        return Err(AmmError::NonPositiveSpacing(spacing_cm_per_px));
    }
    let size = video[0].size();
    for (index, f) in video.iter().enumerate() {
        if f.size() != size {
            return Err(AmmError::DimensionMismatch {
                index,
                got_w: f.width,
                got_h: f.height,
                want_w: size.width,
                want_h: size.height,
            });
        }
    }
    let half = (w_count / 2) as isize;
    let last = video.len() as isize - 1;
    let frames = (0..w_count as isize)
        .map(|i| {
            let src = (anchor as isize - half + i).clamp(0, last);
            video[src as usize].clone()
        })
        .collect();
    Ok(EchoClip {
        frames,
        anchor_index: w_count / 2,
        spacing_cm_per_px,
        frame_interval_s,
    })
}

/// Anatomical M-mode image, `v_count` rows by `w_count` columns, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AmmImage {
    data: Vec<f64>,
    v_count: usize,
    w_count: usize,
    pub path: SamplePath,
    pub anchor_column: usize,
}

impl AmmImage {
    /// Assemble an AMM image from raw rows; `data.len()` must be `V * W`.
    pub fn from_parts(data: Vec<f64>, w_count: usize, path: SamplePath) -> Option<Self> {
        let v_count = path.len();
        if w_count == 0 || data.len() != v_count * w_count {
            return None;
        }
        Some(Self {
            data,
            v_count,
            w_count,
            path,
            anchor_column: w_count / 2,
        })
    }

    pub fn v_count(&self) -> usize {
        self.v_count
    }

    pub fn w_count(&self) -> usize {
        self.w_count
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, v: usize, w: usize) -> f64 {
        self.data[v * self.w_count + w]
    }

    pub fn column(&self, w: usize) -> Vec<f64> {
        (0..self.v_count).map(|v| self.get(v, w)).collect()
    }

    pub fn anchor_profile(&self) -> Vec<f64> {
        self.column(self.anchor_column)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }
}

/// Trace the clip along `v_count` equidistant scanline samples: entry
/// `(v, w)` is the bilinear sample of frame `w` at path point `v`.
pub fn synthesize_amm(
    clip: &EchoClip,
    sl: &Scanline,
    v_count: usize,
) -> Result<AmmImage, AmmError> {
    if clip.frames.is_empty() {
        return Err(AmmError::EmptyVideo);
    }
    let path = sample_scanline(sl, v_count, clip.size())?;
    let w_count = clip.w_count();
    let mut data = vec![0.0; v_count * w_count];
    for (w, frame) in clip.frames.iter().enumerate() {
        if frame.size() != clip.size() {
            return Err(AmmError::DimensionMismatch {
                index: w,
                got_w: frame.width,
                got_h: frame.height,
                want_w: clip.size().width,
                want_h: clip.size().height,
            });
        }
        for (v, &p) in path.points.iter().enumerate() {
            data[v * w_count + w] = bilinear_unchecked(frame, p);
        }
    }
    Ok(AmmImage {
        data,
        v_count,
        w_count,
        path,
        anchor_column: w_count / 2,
    })
}

/// Map a B-mode landmark into AMM space: column `W / 2`, row = index of the
/// path sample with the nearest y-coordinate (lowest index on ties).
///
/// A horizontal scanline has no y-variation, so the nearest x-coordinate is
/// used instead.
pub fn bmode_to_amm(c: BModePoint, path: &SamplePath, w_count: usize) -> AmmPoint {
    let horizontal = path.start().y == path.end().y;
    let key = |p: &Point| if horizontal { p.x } else { p.y };
    let target = if horizontal { c.x } else { c.y };
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (v, p) in path.points.iter().enumerate() {
        let d = (key(p) - target).abs();
        if d < best_dist {
            best = v;
            best_dist = d;
        }
    }
    AmmPoint {
        x: (w_count / 2) as f64,
        y: best as f64,
    }
}

/// Nearest path index for a fractional AMM row; exact halves round down.
pub fn nearest_index(y: f64, v_count: usize) -> Result<usize, AmmError> {
    let max = v_count.saturating_sub(1) as f64;
    if !(y >= 0.0 && y <= max) {
        return Err(AmmError::IndexOutOfRange { y, max });
    }
    let floor = y.floor();
    let idx = if y - floor > 0.5 { floor + 1.0 } else { floor };
    Ok(idx as usize)
}

/// Map an AMM landmark back onto the scanline. The result is always one of
/// the path samples, so it lies on the scanline by construction.
pub fn amm_to_bmode(a: AmmPoint, path: &SamplePath) -> Result<BModePoint, AmmError> {
    Ok(path.points[nearest_index(a.y, path.len())?])
}

#[cfg(test)]
mod tests {
    use super::*;

    const BIG: FrameSize = FrameSize {
        width: 256,
        height: 256,
    };

    fn sl(x0: f64, y0: f64, x1: f64, y1: f64) -> Scanline {
        Scanline {
            p_start: Point::new(x0, y0),
            p_end: Point::new(x1, y1),
        }
    }

    #[test]
    fn axis_aligned_scanline_divides_evenly() {
        let path = sample_scanline(&sl(0.0, 0.0, 0.0, 10.0), 11, BIG).unwrap();
        assert_eq!(path.len(), 11);
        for (k, p) in path.points.iter().enumerate() {
            assert_eq!(*p, Point::new(0.0, k as f64));
        }
        assert_eq!(path.spacing, 1.0);
    }

    #[test]
    fn two_sample_path_is_the_endpoints() {
        let path = sample_scanline(&sl(0.0, 0.0, 3.0, 4.0), 2, BIG).unwrap();
        assert_eq!(path.points, vec![Point::new(0.0, 0.0), Point::new(3.0, 4.0)]);
        assert_eq!(path.spacing, 5.0);
    }

    #[test]
    fn scanline_errors() {
        assert!(matches!(
            sample_scanline(&sl(5.0, 5.0, 5.0, 5.0), 10, BIG),
            Err(AmmError::DegenerateScanline { .. })
        ));
        assert!(matches!(
            sample_scanline(&sl(0.0, 0.0, 0.0, 256.0), 10, BIG),
            Err(AmmError::OutOfFrame { .. })
        ));
        assert!(matches!(
            sample_scanline(&sl(-0.1, 0.0, 0.0, 10.0), 10, BIG),
            Err(AmmError::OutOfFrame { .. })
        ));
        assert_eq!(
            sample_scanline(&sl(0.0, 0.0, 0.0, 10.0), 1, BIG),
            Err(AmmError::TooFewSamples(1))
        );
        assert!(Scanline::new(Point::new(1.0, 1.0), Point::new(1.0, 1.0)).is_err());
    }

    #[test]
    fn path_points_are_equidistant() {
        let path = sample_scanline(&sl(10.3, 20.7, 200.1, 240.9), 256, BIG).unwrap();
        for pair in path.points.windows(2) {
            assert!((pair[0].distance(pair[1]) - path.spacing).abs() < 1e-9);
        }
        assert_eq!(path.end(), Point::new(200.1, 240.9));
    }

    fn ramp_frame() -> Frame {
        let mut f = Frame::filled(16, 12, 0.0);
        for y in 0..12 {
            for x in 0..16 {
                f.set(x, y, (x * 7 + y * 13) as f64 / 400.0);
            }
        }
        f
    }

    #[test]
    fn bilinear_at_integer_point_is_lookup() {
        let f = ramp_frame();
        assert_eq!(bilinear_sample(&f, Point::new(3.0, 7.0)).unwrap(), f.get(3, 7));
        assert_eq!(bilinear_sample(&f, Point::new(15.0, 11.0)).unwrap(), f.get(15, 11));
    }

    #[test]
    fn bilinear_center_of_block_is_average() {
        let f = Frame::new(2, 2, vec![0.0, 0.0, 100.0, 100.0]).unwrap();
        assert_eq!(bilinear_sample(&f, Point::new(0.5, 0.5)).unwrap(), 50.0);
    }

    #[test]
    fn bilinear_rejects_outside_points() {
        let f = ramp_frame();
        assert!(bilinear_sample(&f, Point::new(15.01, 3.0)).is_err());
        assert!(bilinear_sample(&f, Point::new(2.0, -1e-9)).is_err());
        assert!(bilinear_sample(&f, Point::new(f64::NAN, 1.0)).is_err());
    }

    fn video(n: usize) -> Vec<Frame> {
        (0..n).map(|i| Frame::filled(4, 4, i as f64 / n as f64)).collect()
    }

    fn source_indices(clip: &EchoClip, n: usize) -> Vec<usize> {
        clip.frames
            .iter()
            .map(|f| (f.get(0, 0) * n as f64).round() as usize)
            .collect()
    }

    #[test]
    fn clip_is_centred_on_anchor() {
        let clip = extract_clip(&video(100), 50, 64, 0.05, 0.02).unwrap();
        assert_eq!(clip.anchor_index, 32);
        assert_eq!(source_indices(&clip, 100), (18..82).collect::<Vec<_>>());
    }

    #[test]
    fn clip_clamps_at_left_edge() {
        let clip = extract_clip(&video(10), 0, 8, 0.05, 0.02).unwrap();
        assert_eq!(clip.anchor_index, 4);
        assert_eq!(source_indices(&clip, 10), vec![0, 0, 0, 0, 0, 1, 2, 3]);
    }

    #[test]
    fn single_frame_window() {
        let clip = extract_clip(&video(10), 7, 1, 0.05, 0.02).unwrap();
        assert_eq!(clip.anchor_index, 0);
        assert_eq!(source_indices(&clip, 10), vec![7]);
    }

    #[test]
    fn clip_errors() {
        assert_eq!(extract_clip(&[], 0, 4, 0.05, 0.02), Err(AmmError::EmptyVideo));
        assert!(matches!(
            extract_clip(&video(3), 3, 4, 0.05, 0.02),
            Err(AmmError::AnchorOutOfRange { .. })
        ));
        let mut v = video(3);
        v.push(Frame::filled(5, 4, 0.0));
        assert!(matches!(
            extract_clip(&v, 0, 4, 0.05, 0.02),
            Err(AmmError::DimensionMismatch { index: 3, .. })
        ));
    }

    #[test]
    fn constant_clip_gives_constant_amm() {
        let clip = extract_clip(&[Frame::filled(32, 32, 0.4)], 0, 8, 0.05, 0.02).unwrap();
        let amm = synthesize_amm(&clip, &sl(3.5, 2.25, 28.0, 30.0), 40).unwrap();
        assert_eq!(amm.v_count(), 40);
        assert_eq!(amm.w_count(), 8);
        assert_eq!(amm.anchor_column, 4);
        assert!(amm.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn static_clip_columns_are_identical() {
        let clip = extract_clip(&[ramp_frame()], 0, 6, 0.05, 0.02).unwrap();
        let amm = synthesize_amm(&clip, &sl(1.2, 0.5, 14.0, 10.9), 30).unwrap();
        let first = amm.column(0);
        for w in 1..6 {
            assert_eq!(amm.column(w), first);
        }
    }

    #[test]
    fn nearest_index_rounds_half_down() {
        assert_eq!(nearest_index(7.0, 10).unwrap(), 7);
        assert_eq!(nearest_index(2.4, 10).unwrap(), 2);
        assert_eq!(nearest_index(2.5, 10).unwrap(), 2);
        assert_eq!(nearest_index(2.5000001, 10).unwrap(), 3);
        assert_eq!(nearest_index(9.0, 10).unwrap(), 9);
        assert!(nearest_index(9.01, 10).is_err());
        assert!(nearest_index(-0.01, 10).is_err());
        assert!(nearest_index(f64::NAN, 10).is_err());
    }

    #[test]
    fn bmode_to_amm_hits_own_sample() {
        let path = sample_scanline(&sl(10.0, 10.0, 40.0, 200.0), 256, BIG).unwrap();
        let a = bmode_to_amm(path.points[7], &path, 64);
        assert_eq!(a, AmmPoint { x: 32.0, y: 7.0 });
        assert_eq!(amm_to_bmode(a, &path).unwrap(), path.points[7]);
    }

    #[test]
    fn horizontal_scanline_uses_x() {
        let path = sample_scanline(&sl(10.0, 50.0, 110.0, 50.0), 101, BIG).unwrap();
        let a = bmode_to_amm(Point::new(42.2, 50.0), &path, 64);
        assert_eq!(a.y, 32.0);
    }
}
