//! 2D Gaussian emitter localisation.

use statrs::distribution::{ContinuousCDF, Normal};

use super::{median, robust_level, ImageError, Roi};
use crate::lm::{minimize, FnProblem, LmConfig};
use crate::model::{EmitterFit, EmitterMethod, PlMap, Point2};

/// Family-wise probability of reporting a peak in a pure-noise ROI.
const FALSE_ALARM: f64 = 1e-3;

struct Patch {
    xs: Vec<f64>,
    ys: Vec<f64>,
    values: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Patch {
    fn value(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

fn cut(map: &PlMap, roi: &Roi) -> Patch {
    let px = map.pixel_size();
    let col_lo = (roi.x0 / px).ceil().max(0.0) as usize;
    let col_hi = ((roi.x1 / px).floor() as isize).min(map.cols() as isize - 1);
    let row_lo = (roi.y0 / px).ceil().max(0.0) as usize;
    let row_hi = ((roi.y1 / px).floor() as isize).min(map.rows() as isize - 1);
    let mut patch = Patch { xs: vec![], ys: vec![], values: vec![], rows: 0, cols: 0 };
    if col_hi < col_lo as isize || row_hi < row_lo as isize {
        return patch;
    }
    let (col_hi, row_hi) = (col_hi as usize, row_hi as usize);
    patch.rows = row_hi - row_lo + 1;
    patch.cols = col_hi - col_lo + 1;
    for r in row_lo..=row_hi {
        for c in col_lo..=col_hi {
            let p = map.position(r, c);
            patch.xs.push(p.x);
            patch.ys.push(p.y);
            patch.values.push(map.get(r, c));
        }
    }
    patch
}

/// Fits `B + A·exp(−(x−x₀)²/2σx² − (y−y₀)²/2σy²)` inside `roi`.
///
/// The background level and noise come from the ROI border. A peak must
/// exceed the background on the 3×3 box sum by `max(3, z)` standard
/// deviations, `z` being the one-sided 0.1 % Bonferroni quantile for the
/// number of pixels searched, so pure-noise ROIs are rejected. The fit starts from
/// the centroid and second moments around the peak; a negative background is
/// pinned to zero and the fit repeated.
pub fn locate_emitter(map: &PlMap, roi: &Roi) -> Result<EmitterFit, ImageError> {
    let patch = cut(map, roi);
    if patch.rows < 3 || patch.cols < 3 {
        return Err(ImageError::InvalidRoi(patch.values.len()));
    }
    let (rows, cols) = (patch.rows, patch.cols);
    let border: Vec<f64> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .filter(|&(r, c)| r == 0 || c == 0 || r == rows - 1 || c == cols - 1)
        .map(|(r, c)| patch.value(r, c))
        .collect();
    let (background, noise) = robust_level(&border);

    let mut best = (0usize, 0usize, f64::NEG_INFINITY);
    for r in 1..rows - 1 {
        for c in 1..cols - 1 {
            let mut sum = 0.0;
            for dr in 0..3 {
                for dc in 0..3 {
                    sum += patch.value(r + dr - 1, c + dc - 1);
                }
            }
            if sum > best.2 {
                best = (r, c, sum);
            }
        }
    }
    let (pr, pc, box_sum) = best;
    let excess = box_sum - 9.0 * background;
    let searched = ((rows - 2) * (cols - 2)) as f64;
    let z = Normal::standard().inverse_cdf(1.0 - FALSE_ALARM / searched).max(3.0);
    if !(excess > 0.0 && excess > z * 3.0 * noise) {
        return Err(ImageError::NoPeak);
    }

    // Moments of the background-subtracted spot within four pixels of the peak.
    let (mut w_sum, mut mx, mut my) = (0.0, 0.0, 0.0);
    let mut local = Vec::new();
    for r in pr.saturating_sub(4)..(pr + 5).min(rows) {
        for c in pc.saturating_sub(4)..(pc + 5).min(cols) {
            let i = r * cols + c;
            let w = (patch.values[i] - background).max(0.0);
            w_sum += w;
            mx += w * patch.xs[i];
            my += w * patch.ys[i];
            local.push((i, w));
        }
    }
    mx /= w_sum;
    my /= w_sum;
    let (mut vx, mut vy) = (0.0, 0.0);
    for &(i, w) in &local {
        vx += w * (patch.xs[i] - mx).powi(2);
        vy += w * (patch.ys[i] - my).powi(2);
    }
    let px = map.pixel_size();
    let sx0 = (vx / w_sum).sqrt().max(0.5 * px);
    let sy0 = (vy / w_sum).sqrt().max(0.5 * px);
    let mut peak_vals: Vec<f64> = local.iter().map(|&(i, _)| patch.values[i]).collect();
    let top = peak_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let _ = median(&mut peak_vals);
    let amplitude0 = (top - background).max(f64::MIN_POSITIVE);

    let free = fit_spot(&patch, &[amplitude0, mx, my, sx0.ln(), sy0.ln(), background], true)?;
    let params = if free[5] >= 0.0 {
        free
    } else {
        let mut pinned = fit_spot(&patch, &[amplitude0, mx, my, sx0.ln(), sy0.ln()], false)?;
        pinned.push(0.0);
        pinned
    };
    let center = Point2::new(params[1], params[2]);
    if params[0] <= 0.0 || !roi.contains(center) {
        return Err(ImageError::FitNotConverged);
    }
    Ok(EmitterFit {
        center,
        widths: (params[3].exp(), params[4].exp()),
        amplitude: params[0],
        background: params[5],
        method: EmitterMethod::Gaussian2d,
    })
}

fn fit_spot(patch: &Patch, start: &[f64], with_background: bool) -> Result<Vec<f64>, ImageError> {
    let problem = FnProblem {
        count: patch.values.len(),
        f: |p: &[f64], out: &mut [f64]| {
            let (sx, sy) = (p[3].exp(), p[4].exp());
            if !(sx.is_finite() && sy.is_finite() && sx > 0.0 && sy > 0.0) {
                return false;
            }
            let b = if with_background { p[5] } else { 0.0 };
            for (i, o) in out.iter_mut().enumerate() {
                let zx = (patch.xs[i] - p[1]) / sx;
                let zy = (patch.ys[i] - p[2]) / sy;
                *o = p[0] * (-0.5 * (zx * zx + zy * zy)).exp() + b - patch.values[i];
            }
            true
        },
    };
    let out = minimize(&problem, start, LmConfig::default());
    if !out.converged || out.params.iter().any(|v| !v.is_finite()) {
        return Err(ImageError::FitNotConverged);
    }
    Ok(out.params)
}
