//! Lateral and axial PSF widths from xy and xz confocal scans.

use serde::{Deserialize, Serialize};

use super::{fit_gaussian_1d, ImageError, Roi};
use crate::model::PlMap;

/// FWHM of a Gaussian in units of its standard deviation, `2√(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.3548;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfWidths {
    pub lateral_fwhm_nm: f64,
    pub axial_fwhm_nm: f64,
}

/// Fits 1D Gaussians to line cuts through the spot maximum: along x on the
/// xy map and along z (map rows) on the xz map. `roi` restricts the
/// lateral search window on both maps; the xz map keeps its full z range.
pub fn extract_psf_widths(map_xy: &PlMap, map_xz: &PlMap, roi: Option<&Roi>) -> Result<PsfWidths, ImageError> {
    let (row, _) = peak_pixel(map_xy, roi, true)?;
    let (c0, c1) = col_range(map_xy, roi);
    let xs: Vec<f64> = (c0..=c1).map(|c| c as f64 * map_xy.pixel_size()).collect();
    let ys: Vec<f64> = (c0..=c1).map(|c| map_xy.get(row, c)).collect();
    let lateral = fit_gaussian_1d(&xs, &ys)?.sigma;

    let (_, col) = peak_pixel(map_xz, roi, false)?;
    let zs: Vec<f64> = (0..map_xz.rows()).map(|r| r as f64 * map_xz.pixel_size()).collect();
    let axial = fit_gaussian_1d(&zs, &map_xz.column(col))?.sigma;
    Ok(PsfWidths { lateral_fwhm_nm: FWHM_PER_SIGMA * lateral * 1e3, axial_fwhm_nm: FWHM_PER_SIGMA * axial * 1e3 })
}

fn col_range(map: &PlMap, roi: Option<&Roi>) -> (usize, usize) {
    let px = map.pixel_size();
    let last = map.cols() - 1;
    match roi {
        Some(r) => {
            (((r.x0 / px).ceil().max(0.0) as usize).min(last), ((r.x1 / px).floor().max(0.0) as usize).min(last))
        }
        None => (0, last),
    }
}

fn row_range(map: &PlMap, roi: Option<&Roi>) -> (usize, usize) {
    let px = map.pixel_size();
    let last = map.rows() - 1;
    match roi {
        Some(r) => {
            (((r.y0 / px).ceil().max(0.0) as usize).min(last), ((r.y1 / px).floor().max(0.0) as usize).min(last))
        }
        None => (0, last),
    }
}

/// Pixel with the largest 3×3 box sum inside the search window.
fn peak_pixel(map: &PlMap, roi: Option<&Roi>, use_roi_rows: bool) -> Result<(usize, usize), ImageError> {
    let (c0, c1) = col_range(map, roi);
    let (r0, r1) = if use_roi_rows { row_range(map, roi) } else { (0, map.rows() - 1) };
    if c1 < c0 + 4 || (map.rows() > 1 && r1 < r0) {
        return Err(ImageError::InvalidRoi((c1 + 1).saturating_sub(c0) * (r1 + 1).saturating_sub(r0)));
    }
    let mut best = (r0, c0, f64::NEG_INFINITY);
    for r in r0..=r1 {
        for c in c0..=c1 {
            let mut sum = 0.0;
            for rr in r.saturating_sub(1)..=(r + 1).min(map.rows() - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(map.cols() - 1) {
                    sum += map.get(rr, cc);
                }
            }
            if sum > best.2 {
                best = (r, c, sum);
            }
        }
    }
    if best.2.is_nan() || best.2 <= 0.0 {
        return Err(ImageError::NoPeak);
    }
    Ok((best.0, best.1))
}
