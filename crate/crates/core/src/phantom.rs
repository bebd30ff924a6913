//! Synthetic PLAX-like clips with analytic wall positions.
//!
//! Four horizontal edges move sinusoidally: the septum band spans rows
//! `[r0, r1]`, the cavity `[r1, r2]` and the posterior wall `[r2, r3]`.
//! Pixels integrate band coverage over their row extent `[y - 0.5, y + 0.5]`,
//! so the edge at row `r` appears as a half-intensity crossing exactly at `r`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amm::{Frame, Point, Scanline};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhantomError {
    #[error("wall rows lose their ordering at t = {t} s")]
    OrderingViolation { t: f64 },
    #[error("scanline does not cross every wall edge")]
    NoIntersection,
    #[error("invalid phantom: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    /// `[height, width]` in pixels.
    pub img_size: [usize; 2],
    pub frame_count: usize,
    pub frame_interval_s: f64,
    /// Resting rows of IVS top, IVS bottom, LVPW top, LVPW bottom.
    pub baseline_rows: [f64; 4],
    pub amplitudes_px: [f64; 4],
    pub period_s: f64,
    pub wall_intensity: f64,
    pub cavity_intensity: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            img_size: [256, 256],
            frame_count: 50,
            frame_interval_s: 0.02,
            baseline_rows: [60.0, 80.0, 172.0, 190.0],
            // Septum moves down and the posterior wall up: contraction peaks
            // at a quarter period.
            amplitudes_px: [6.0, 8.0, -10.0, -8.0],
            period_s: 1.0,
            wall_intensity: 0.8,
            cavity_intensity: 0.15,
            noise_sd: 0.02,
            seed: 7,
        }
    }
}

impl PhantomSpec {
    pub fn height(&self) -> usize {
        self.img_size[0]
    }

    pub fn width(&self) -> usize {
        self.img_size[1]
    }

    pub fn frame_time(&self, frame_index: usize) -> f64 {
        frame_index as f64 * self.frame_interval_s
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: &str| Err(PhantomError::InvalidSpec(m.to_string()));
        if self.height() < 2 || self.width() < 2 {
            return bad("image must be at least 2x2");
        }
        if self.frame_count == 0 {
            return bad("frame_count must be positive");
        }
        if !(self.period_s > 0.0) {
            return bad("period_s must be positive");
        }
        if !(self.frame_interval_s > 0.0) {
            return bad("frame_interval_s must be positive");
        }
        if !(self.noise_sd >= 0.0) {
            return bad("noise_sd must be non-negative");
        }
        for v in [self.wall_intensity, self.cavity_intensity] {
            if !(0.0..=1.0).contains(&v) {
                return bad("intensities must lie in [0, 1]");
            }
        }
        // Rows are affine in s = sin(.) in [-1, 1], so ordering holds for all
        // t iff it holds at both extremes.
        for s in [-1.0, 1.0] {
            let rows = self.rows_at_phase(s);
            if rows.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(PhantomError::OrderingViolation {
                    t: if s > 0.0 { self.period_s / 4.0 } else { 0.75 * self.period_s },
                });
            }
        }
        Ok(())
    }

    fn rows_at_phase(&self, s: f64) -> [f64; 4] {
        std::array::from_fn(|k| self.baseline_rows[k] + self.amplitudes_px[k] * s)
    }
}

/// Analytic edge rows at time `t`.
pub fn wall_rows(spec: &PhantomSpec, t: f64) -> Result<[f64; 4], PhantomError> {
    let s = (2.0 * std::f64::consts::PI * t / spec.period_s).sin();
    let rows = spec.rows_at_phase(s);
    if rows.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(PhantomError::OrderingViolation { t });
    }
    Ok(rows)
}

fn overlap(lo: f64, hi: f64, y: f64) -> f64 {
    ((hi.min(y + 0.5)) - (lo.max(y - 0.5))).max(0.0)
}

/// Noise-free intensity of pixel row `y` given the edge rows.
fn row_intensity(spec: &PhantomSpec, rows: &[f64; 4], y: f64) -> f64 {
    spec.wall_intensity * (overlap(rows[0], rows[1], y) + overlap(rows[2], rows[3], y))
        + spec.cavity_intensity * overlap(rows[1], rows[2], y)
}

fn noise_rng(seed: u64, frame_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_index as u64);
    rng
}

/// Render the frame at time `t`. Noise is drawn from a stream keyed by
/// `(seed, frame_index)`, so frames are reproducible individually.
pub fn render_frame(
    spec: &PhantomSpec,
    t: f64,
    frame_index: usize,
) -> Result<Frame, PhantomError> {
    spec.validate()?;
    let rows = wall_rows(spec, t)?;
    let (h, w) = (spec.height(), spec.width());
    let profile: Vec<f64> = (0..h).map(|y| row_intensity(spec, &rows, y as f64)).collect();
    let mut data = Vec::with_capacity(h * w);
    if spec.noise_sd > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sd)
            .map_err(|e| PhantomError::InvalidSpec(e.to_string()))?;
        let mut rng = noise_rng(spec.seed, frame_index);
        for &base in &profile {
            for _ in 0..w {
                data.push((base + normal.sample(&mut rng)).clamp(0.0, 1.0));
            }
        }
    } else {
        for &base in &profile {
            data.extend(std::iter::repeat_n(base.clamp(0.0, 1.0), w));
        }
    }
    Ok(Frame::new(w, h, data).expect("buffer sized from spec"))
}

/// All `frame_count` frames, frame `k` at `t = k * frame_interval_s`.
pub fn render_video(spec: &PhantomSpec) -> Result<Vec<Frame>, PhantomError> {
    (0..spec.frame_count)
        .map(|k| render_frame(spec, spec.frame_time(k), k))
        .collect()
}

/// Intersections of the scanline with the four edge rows, ordered from
/// `p_start` to `p_end`.
pub fn ground_truth_landmarks(
    spec: &PhantomSpec,
    t: f64,
    sl: &Scanline,
) -> Result<[Point; 4], PhantomError> {
    let rows = wall_rows(spec, t)?;
    let dy = sl.p_end.y - sl.p_start.y;
    if dy == 0.0 {
        return Err(PhantomError::NoIntersection);
    }
    let mut hits = [(0.0, Point::default()); 4];
    for (k, &row) in rows.iter().enumerate() {
        let s = (row - sl.p_start.y) / dy;
        if !(0.0..=1.0).contains(&s) {
            return Err(PhantomError::NoIntersection);
        }
        let p = Point::new(sl.p_start.x + s * (sl.p_end.x - sl.p_start.x), row);
        hits[k] = (s, p);
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(hits.map(|(_, p)| p))
}

/// LV internal diameter in pixels (rows `r2 - r1`) at time `t`.
pub fn cavity_rows(spec: &PhantomSpec, t: f64) -> Result<f64, PhantomError> {
    let rows = wall_rows(spec, t)?;
    Ok(rows[2] - rows[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyframes {
    /// Frame with the widest cavity.
    pub ed: usize,
    /// Frame with the narrowest cavity.
    pub es: usize,
}

/// End-diastolic and end-systolic frame indices (first occurrence on ties).
pub fn keyframes(spec: &PhantomSpec) -> Result<Keyframes, PhantomError> {
    spec.validate()?;
    let lvid: Vec<f64> = (0..spec.frame_count)
        .map(|k| cavity_rows(spec, spec.frame_time(k)))
        .collect::<Result<_, _>>()?;
    let mut ed = 0;
    let mut es = 0;
    for (k, &d) in lvid.iter().enumerate() {
        if d > lvid[ed] {
            ed = k;
        }
        if d < lvid[es] {
            es = k;
        }
    }
    Ok(Keyframes { ed, es })
}
