//! Reference detector: strongest intensity edges along the anchor column.

use crate::amm::{AmmImage, AmmPoint};
use crate::heatmap::{make_targets, HeatmapConfig, HeatmapStack, DEFAULT_SIGMA, LANDMARK_COUNT};

use super::{DetectorError, HeatmapDetector};

const MIN_EDGE_STRENGTH: f64 = 1e-9;
// Relative tolerance for treating neighbouring gradient values as one plateau;
// the moving average leaves rounding noise on otherwise flat runs.
const PLATEAU_RTOL: f64 = 1e-9;

fn level(a: f64, b: f64) -> bool {
    (a - b).abs() <= PLATEAU_RTOL * a.abs().max(b.abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineParams {
    pub smoothing_window: usize,
    /// Minimum row separation between accepted edges; `None` means `V / 16`.
    pub min_sep: Option<usize>,
    pub sigma: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            smoothing_window: 5,
            min_sep: None,
            sigma: DEFAULT_SIGMA,
        }
    }
}

impl BaselineParams {
    fn min_sep_for(&self, v_count: usize) -> usize {
        self.min_sep.unwrap_or(v_count / 16).max(1)
    }
}

pub(super) struct BaselineGradient {
    pub(super) id: String,
    pub(super) params: BaselineParams,
}

impl HeatmapDetector for BaselineGradient {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(&self, amm: &AmmImage) -> Result<HeatmapStack, DetectorError> {
        baseline_gradient_heatmaps(amm, &self.params)
    }
}

/// Centred moving average; the window shrinks symmetrically near the ends.
fn smooth(profile: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = profile.len();
    (0..n)
        .map(|i| {
            let r = half.min(i).min(n - 1 - i);
            let span = &profile[i - r..=i + r];
            span.iter().sum::<f64>() / span.len() as f64
        })
        .collect()
}

/// Absolute central difference; zero at both ends.
fn gradient(m: &[f64]) -> Vec<f64> {
    let n = m.len();
    (0..n)
        .map(|i| {
            if i == 0 || i + 1 == n {
                0.0
            } else {
                (m[i + 1] - m[i - 1]).abs() / 2.0
            }
        })
        .collect()
}

/// Local maxima of `g` as `(row, strength)`; a flat run counts once, at its middle.
fn local_maxima(g: &[f64]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let mut a = 0;
    while a < g.len() {
        let mut b = a;
        while b + 1 < g.len() && level(g[b + 1], g[a]) {
            b += 1;
        }
        let peak = g[a..=b].iter().copied().fold(f64::MIN, f64::max);
        let rises = a == 0 || g[a - 1] < g[a];
        let falls = b + 1 == g.len() || g[b + 1] < g[b];
        if rises && falls && peak > MIN_EDGE_STRENGTH {
            out.push(((a + b) / 2, peak));
        }
        a = b + 1;
    }
    out
}

/// Sub-row edge positions along an intensity profile, top to bottom.
///
/// The profile is smoothed, differentiated, and the four strongest local
/// maxima at least `min_sep` rows apart are kept. Each is refined to the
/// gradient-weighted centroid of its neighbourhood.
pub fn detect_edges(profile: &[f64], params: &BaselineParams) -> Result<Vec<f64>, DetectorError> {
    let g = gradient(&smooth(profile, params.smoothing_window.max(1)));
    let min_sep = params.min_sep_for(profile.len());
    let mut candidates = local_maxima(&g);
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut accepted: Vec<usize> = Vec::with_capacity(LANDMARK_COUNT);
    for (row, _) in candidates {
        if accepted.iter().all(|&r| r.abs_diff(row) >= min_sep) {
            accepted.push(row);
            if accepted.len() == LANDMARK_COUNT {
                break;
            }
        }
    }
    if accepted.len() < LANDMARK_COUNT {
        return Err(DetectorError::NoEdgesFound {
            found: accepted.len(),
        });
    }
    accepted.sort_unstable();
    let reach = params.smoothing_window.max(1).min((min_sep / 2).max(1));
    Ok(accepted
        .into_iter()
        .map(|row| {
            let lo = row.saturating_sub(reach);
            let hi = (row + reach).min(g.len() - 1);
            let (mut mass, mut moment) = (0.0, 0.0);
            for (v, &w) in g.iter().enumerate().take(hi + 1).skip(lo) {
                mass += w;
                moment += v as f64 * w;
            }
            moment / mass
        })
        .collect())
}

/// Detect four edges in the anchor column and emit unit Gaussian heatmaps
/// centred on them.
pub fn baseline_gradient_heatmaps(
    amm: &AmmImage,
    params: &BaselineParams,
) -> Result<HeatmapStack, DetectorError> {
    let rows = detect_edges(&amm.anchor_profile(), params)?;
    let x = amm.anchor_column as f64;
    let coords: Vec<AmmPoint> = rows.into_iter().map(|y| AmmPoint { x, y }).collect();
    let cfg = HeatmapConfig {
        sigma: params.sigma,
        v_count: amm.v_count(),
        w_count: amm.w_count(),
    };
    Ok(make_targets(&coords, &cfg)?)
}
