//! Line-profile SIL edge detection.
//!
//! The lens surface fluoresces, so a line through the SIL shows two edge
//! peaks. Each peak sits on a background step (dim inside the lens,
//! brighter interface emission outside); the fit model is a Gaussian plus a
//! step of the same width centred on the peak.

use serde::{Deserialize, Serialize};

use statrs::distribution::{ContinuousCDF, Normal};

use super::{normal_cdf, robust_level, ImageError};
use crate::lm::{minimize, FnProblem, LmConfig};
use crate::model::{PlMap, Point2, SilFit, SilMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "orientation", content = "index", rename_all = "lowercase")]
pub enum ProfileLine {
    /// Horizontal profile along a map row; edges are x coordinates.
    Row(usize),
    /// Vertical profile along a map column; edges are y coordinates.
    Column(usize),
}

/// Two fitted edge peaks along one line, positions in µm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileEdges {
    pub line: ProfileLine,
    /// Coordinate of the line itself (y for a row, x for a column).
    pub line_coordinate: f64,
    pub low_edge: f64,
    pub high_edge: f64,
    /// Mean Gaussian width of the two edge peaks.
    pub edge_sigma: f64,
}

impl ProfileEdges {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.low_edge + self.high_edge)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.high_edge - self.low_edge)
    }

    /// The line read as a SIL fit: centre is the chord midpoint on the line,
    /// radius the half chord (equal to the SIL radius only for a line
    /// through the centre).
    pub fn as_sil_fit(&self) -> SilFit {
        let center = match self.line {
            ProfileLine::Row(_) => Point2::new(self.midpoint(), self.line_coordinate),
            ProfileLine::Column(_) => Point2::new(self.line_coordinate, self.midpoint()),
        };
        SilFit { center, radius: self.half_width(), method: SilMethod::Profile, residual: 0.0, eccentricity: None }
    }
}

/// Fits both SIL edge peaks on one row or column of the map.
pub fn detect_sil_profile(map: &PlMap, line: ProfileLine) -> Result<ProfileEdges, ImageError> {
    let (values, line_coordinate) = match line {
        ProfileLine::Row(r) => {
            if r >= map.rows() {
                return Err(ImageError::LineOutOfRange { index: r, len: map.rows() });
            }
            (map.row(r).to_vec(), r as f64 * map.pixel_size())
        }
        ProfileLine::Column(c) => {
            if c >= map.cols() {
                return Err(ImageError::LineOutOfRange { index: c, len: map.cols() });
            }
            (map.column(c), c as f64 * map.pixel_size())
        }
    };
    let px = map.pixel_size();
    let coords: Vec<f64> = (0..values.len()).map(|i| i as f64 * px).collect();
    let (low_idx, high_idx) = find_edge_peaks(&values)?;
    let low = fit_edge(&coords, &values, low_idx, px, -1.0)?;
    let high = fit_edge(&coords, &values, high_idx, px, 1.0)?;
    if high.0 <= low.0 {
        return Err(ImageError::PeaksNotFound("edge peaks out of order".into()));
    }
    Ok(ProfileEdges { line, line_coordinate, low_edge: low.0, high_edge: high.0, edge_sigma: 0.5 * (low.1 + high.1) })
}

/// Result of the two-profile SIL centre search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileCenter {
    pub fit: SilFit,
    pub horizontal: ProfileEdges,
    pub vertical: ProfileEdges,
    pub edge_sigma: f64,
}

/// Combines a horizontal and a vertical profile into a 2D centre. The lines
/// start at the map centre and are moved onto the row and column nearest the
/// current estimate until they stop changing.
pub fn detect_sil_center_profile(map: &PlMap) -> Result<ProfileCenter, ImageError> {
    let px = map.pixel_size();
    let mut row = map.rows() / 2;
    let mut col = map.cols() / 2;
    let mut result = None;
    for _ in 0..5 {
        let h = detect_sil_profile(map, ProfileLine::Row(row))?;
        let v = detect_sil_profile(map, ProfileLine::Column(col))?;
        let center = Point2::new(h.midpoint(), v.midpoint());
        result = Some((h, v, center));
        let next_col = ((center.x / px).round().max(0.0) as usize).min(map.cols() - 1);
        let next_row = ((center.y / px).round().max(0.0) as usize).min(map.rows() - 1);
        if (next_row, next_col) == (row, col) {
            break;
        }
        row = next_row;
        col = next_col;
    }
    let (h, v, center) = result.expect("loop runs at least once");
    // Half chords at distance d from the centre satisfy R² = h² + d².
    let r_h = h.half_width().hypot(h.line_coordinate - center.y);
    let r_v = v.half_width().hypot(v.line_coordinate - center.x);
    let radius = 0.5 * (r_h + r_v);
    Ok(ProfileCenter {
        fit: SilFit {
            center,
            radius,
            method: SilMethod::Profile,
            residual: (r_h - r_v).abs() / radius,
            eccentricity: None,
        },
        horizontal: h,
        vertical: v,
        edge_sigma: 0.5 * (h.edge_sigma + v.edge_sigma),
    })
}

/// Half width of the running median used as the local background.
const BACKGROUND_HALF_WINDOW: usize = 7;

/// Family-wise probability of a noise excursion passing for an edge peak.
const FALSE_ALARM: f64 = 1e-3;

/// Indices of the outermost significant peaks on a [1 2 1]/4 smoothed copy.
///
/// The background is a running median, so the brighter interface level
/// outside the lens does not count as a peak. A sample is significant when
/// it exceeds that background by `z·σ`, with `z = max(3, Φ⁻¹(1 − α/N))` over
/// the `N` samples of the line and σ the larger of the robust residual
/// scatter and the local Poisson level.
fn find_edge_peaks(values: &[f64]) -> Result<(usize, usize), ImageError> {
    let n = values.len();
    if n < 8 {
        return Err(ImageError::PeaksNotFound(format!("profile has only {n} samples")));
    }
    // [1 2 1] smoothing, truncated and renormalised at the ends. `gain` is
    // the resulting noise scale per unit Poisson σ: √(6/16) inside, √5/3 at
    // the ends.
    let (smooth, gain): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|i| {
            let taps = [(i.checked_sub(1), 1.0), (Some(i), 2.0), ((i + 1 < n).then_some(i + 1), 1.0)];
            let (mut sum, mut norm, mut sq) = (0.0, 0.0, 0.0);
            for (j, w) in taps {
                if let Some(j) = j {
                    sum += w * values[j];
                    norm += w;
                    sq += w * w;
                }
            }
            (sum / norm, sq.sqrt() / norm)
        })
        .unzip();
    let local: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(BACKGROUND_HALF_WINDOW);
            let hi = (i + BACKGROUND_HALF_WINDOW + 1).min(n);
            super::median(&mut smooth[lo..hi].to_vec())
        })
        .collect();
    let residual: Vec<f64> = smooth.iter().zip(&local).map(|(s, b)| s - b).collect();
    let scatter = 1.4826 * mad(&residual);
    let z = Normal::standard().inverse_cdf(1.0 - FALSE_ALARM / n as f64).max(3.0);
    let threshold: Vec<f64> =
        local.iter().zip(&gain).map(|(&b, &g)| b + z * scatter.max(g * b.max(0.0).sqrt())).collect();

    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < n {
        if smooth[i] > threshold[i] {
            let start = i;
            while i < n && smooth[i] > threshold[i] {
                i += 1;
            }
            match runs.last_mut() {
                // Close gaps of up to two samples.
                Some(last) if start - last.1 <= 2 => last.1 = i,
                _ => runs.push((start, i)),
            }
        } else {
            i += 1;
        }
    }
    if runs.len() < 2 {
        let (background, _) = robust_level(values);
        return Err(ImageError::PeaksNotFound(format!(
            "{} significant region(s) at {z:.2} sigma (background {background:.3})",
            runs.len()
        )));
    }
    let argmax =
        |(a, b): (usize, usize)| (a..b).max_by(|&x, &y| smooth[x].total_cmp(&smooth[y])).expect("run is non-empty");
    Ok((argmax(runs[0]), argmax(runs[runs.len() - 1])))
}

fn mad(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let med = super::median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    super::median(&mut dev)
}

/// Fits one edge peak; `outside` is −1 when the lens exterior lies at lower
/// coordinates. Returns (centre, σ) in µm.
fn fit_edge(coords: &[f64], values: &[f64], peak: usize, px: f64, outside: f64) -> Result<(f64, f64), ImageError> {
    let n = values.len();
    let peak_value = values[peak];
    let floor = {
        let lo = values[peak.saturating_sub(6)..peak].iter().copied().fold(peak_value, f64::min);
        let hi = values[peak..(peak + 7).min(n)].iter().copied().fold(peak_value, f64::min);
        lo.max(hi)
    };
    let half = 0.5 * (peak_value + floor);
    let mut left = peak;
    while left > 0 && values[left - 1] > half {
        left -= 1;
    }
    let mut right = peak;
    while right + 1 < n && values[right + 1] > half {
        right += 1;
    }
    let sigma0 = (((right - left + 1) as f64) * px / 2.3548).max(0.5 * px);
    let reach = ((4.0 * sigma0 / px).ceil() as usize).clamp(4, 30);
    let lo = peak.saturating_sub(reach);
    let hi = (peak + reach + 1).min(n);
    if hi - lo < 7 {
        return Err(ImageError::PeaksNotFound("edge peak too close to the map border".into()));
    }
    let xs = &coords[lo..hi];
    let ys = &values[lo..hi];
    let end_mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (first, last) = (end_mean(&ys[..2]), end_mean(&ys[ys.len() - 2..]));
    let (b_out, b_in) = if outside < 0.0 { (first, last) } else { (last, first) };

    let problem = FnProblem {
        count: xs.len(),
        f: |p: &[f64], out: &mut [f64]| {
            let s = p[2].exp();
            if !(s.is_finite() && s > 0.0) {
                return false;
            }
            for (o, (x, y)) in out.iter_mut().zip(xs.iter().zip(ys)) {
                let z = (x - p[1]) / s;
                let step = normal_cdf(outside * z);
                *o = p[0] * (-0.5 * z * z).exp() + p[3] + (p[4] - p[3]) * step - y;
            }
            true
        },
    };
    let start = [peak_value - 0.5 * (b_in + b_out), coords[peak], sigma0.ln(), b_in, b_out];
    let fit = minimize(&problem, &start, LmConfig::default());
    let (amp, mu, s) = (fit.params[0], fit.params[1], fit.params[2].exp());
    if !fit.converged || amp <= 0.0 || mu < xs[0] || mu > xs[xs.len() - 1] {
        return Err(ImageError::FitNotConverged);
    }
    Ok((mu, s))
}
