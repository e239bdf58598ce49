//! Registration of emitters inside solid immersion lenses from PL maps.
//!
//! The SIL centre is found three independent ways: an algebraic circle fit
//! and a direct ellipse fit to ring points extracted from the map, and a
//! pair of orthogonal line profiles whose edge peaks are fitted with
//! Gaussians. Emitters are located with a 2D Gaussian fit; their offset from
//! the SIL centre is divided by the lens magnification.

mod circle;
mod ellipse;
mod emitter;
mod profile;
mod psf;
mod ring;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EmitterFit, Point2, SilFit, SilMethod};

pub use circle::fit_circle_algebraic;
pub use ellipse::{fit_ellipse, EllipseGeometry};
pub use emitter::locate_emitter;
pub use profile::{detect_sil_center_profile, detect_sil_profile, ProfileCenter, ProfileEdges, ProfileLine};
pub use psf::{extract_psf_widths, PsfWidths, FWHM_PER_SIGMA};
pub use ring::{extract_ring_points, RingPoints, DEFAULT_SECTORS};

/// Hemispherical SIL magnification, equal to the 4H-SiC refractive index.
pub const DEFAULT_MAGNIFICATION: f64 = 2.6;

const MAX_RING_ITERATIONS: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImageError {
    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("points are collinear")]
    CollinearPoints,
    #[error("conic fit is degenerate or not an ellipse")]
    DegenerateConic,
    #[error("edge peaks not found: {0}")]
    PeaksNotFound(String),
    #[error("no significant peak in the region of interest")]
    NoPeak,
    #[error("fit did not converge")]
    FitNotConverged,
    #[error("magnification factor must be positive, got {0}")]
    NonPositiveFactor(f64),
    #[error("region of interest covers {0} pixels, too few to fit")]
    InvalidRoi(usize),
    #[error("profile line index {index} outside 0..{len}")]
    LineOutOfRange { index: usize, len: usize },
}

/// Rectangular region in map coordinates, µm, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Roi {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0: x0.min(x1), y0: y0.min(y1), x1: x0.max(x1), y1: y0.max(y1) }
    }

    pub fn centered(center: Point2, half_width: f64) -> Self {
        Self::new(center.x - half_width, center.y - half_width, center.x + half_width, center.y + half_width)
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
}

/// Divides an apparent offset seen through the lens by its magnification.
pub fn magnification_correct(apparent: Point2, factor: f64) -> Result<Point2, ImageError> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(ImageError::NonPositiveFactor(factor));
    }
    Ok(Point2::new(apparent.x / factor, apparent.y / factor))
}

/// True emitter offset from the SIL centre.
pub fn emitter_sil_displacement(sil: &SilFit, emitter: &EmitterFit, magnification: f64) -> Result<Point2, ImageError> {
    magnification_correct(emitter.center - sil.center, magnification)
}

/// Runs one SIL-centre method on a map. The circle and ellipse methods take
/// their search band from the profile method.
pub fn detect_sil(map: &crate::PlMap, method: SilMethod) -> Result<SilFit, ImageError> {
    let seed = detect_sil_center_profile(map)?;
    match method {
        SilMethod::Profile => Ok(seed.fit),
        SilMethod::Circle | SilMethod::Ellipse => {
            // Sector radii are measured about the current centre, so refit
            // until the centre stops moving.
            let mut fit = seed.fit;
            for _ in 0..MAX_RING_ITERATIONS {
                let ring = extract_ring_points(map, fit.center, fit.radius, seed.edge_sigma, DEFAULT_SECTORS)?;
                let next = if method == SilMethod::Circle {
                    fit_circle_algebraic(&ring.points)?
                } else {
                    fit_ellipse(&ring.points)?
                };
                let step = next.center.distance(fit.center);
                fit = next;
                if step < 1e-9 {
                    break;
                }
            }
            Ok(fit)
        }
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median and a noise scale `max(1.4826·MAD, √median)`; the Poisson floor
/// keeps noiseless backgrounds from producing a zero threshold.
pub(crate) fn robust_level(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    let med = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    let mad = median(&mut dev);
    (med, (1.4826 * mad).max(med.max(0.0).sqrt()))
}

pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(z / std::f64::consts::SQRT_2))
}

/// `offset + amplitude·exp(−(x − center)²/2σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Gaussian1d {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
    pub offset: f64,
}

pub(crate) fn fit_gaussian_1d(xs: &[f64], ys: &[f64]) -> Result<Gaussian1d, ImageError> {
    use crate::lm::{minimize, FnProblem, LmConfig};
    if xs.len() < 5 {
        return Err(ImageError::InsufficientPoints { needed: 5, got: xs.len() });
    }
    let (imax, &ymax) = ys.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).ok_or(ImageError::NoPeak)?;
    let edge = 0.5 * (ys[0] + ys[ys.len() - 1]);
    let offset0 = edge.min(ymax);
    let weights: Vec<f64> = ys.iter().map(|y| (y - offset0).max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(ImageError::NoPeak);
    }
    let mean = weights.iter().zip(xs).map(|(w, x)| w * x).sum::<f64>() / total;
    let var = weights.iter().zip(xs).map(|(w, x)| w * (x - mean).powi(2)).sum::<f64>() / total;
    let step = (xs[xs.len() - 1] - xs[0]).abs() / (xs.len() - 1) as f64;
    let sigma0 = var.sqrt().max(0.5 * step);
    let problem = FnProblem {
        count: xs.len(),
        f: |p: &[f64], out: &mut [f64]| {
            let s = p[2].exp();
            for (o, (x, y)) in out.iter_mut().zip(xs.iter().zip(ys)) {
                let z = (x - p[1]) / s;
                *o = p[0] * (-0.5 * z * z).exp() + p[3] - y;
            }
            s.is_finite() && s > 0.0
        },
    };
    let start = [ymax - offset0, xs[imax], sigma0.ln(), offset0];
    let out = minimize(&problem, &start, LmConfig::default());
    if !out.converged || out.params[0] <= 0.0 {
        return Err(ImageError::FitNotConverged);
    }
    Ok(Gaussian1d {
        amplitude: out.params[0],
        center: out.params[1],
        sigma: out.params[2].exp(),
        offset: out.params[3],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EmitterMethod;

    #[test]
    fn magnification_examples() {
        let c = magnification_correct(Point2::new(0.52, 0.26), 2.6).unwrap();
        assert!((c.x - 0.2).abs() < 1e-15 && (c.y - 0.1).abs() < 1e-15);
        let p = Point2::new(0.3, -0.7);
        assert_eq!(magnification_correct(p, 1.0).unwrap(), p);
        assert_eq!(magnification_correct(Point2::default(), 7.0).unwrap(), Point2::default());
        assert!(matches!(magnification_correct(p, 0.0), Err(ImageError::NonPositiveFactor(_))));
    }

    #[test]
    fn displacement_at_center_is_zero() {
        let sil = SilFit {
            center: Point2::new(4.0, 4.5),
            radius: 3.5,
            method: SilMethod::Circle,
            residual: 0.0,
            eccentricity: None,
        };
        let emitter = EmitterFit {
            center: Point2::new(4.0, 4.5),
            widths: (0.15, 0.15),
            amplitude: 100.0,
            background: 1.0,
            method: EmitterMethod::Gaussian2d,
        };
        assert_eq!(emitter_sil_displacement(&sil, &emitter, 2.6).unwrap(), Point2::default());
        let moved = EmitterFit { center: Point2::new(4.3, 4.1), ..emitter };
        assert_eq!(emitter_sil_displacement(&sil, &moved, 1.0).unwrap(), moved.center - sil.center);
    }

    #[test]
    fn gaussian_1d_exact() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 * 0.02).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 7.0 + 500.0 * (-0.5 * ((x - 0.41) / 0.0467).powi(2)).exp()).collect();
        let g = fit_gaussian_1d(&xs, &ys).unwrap();
        assert!((g.center - 0.41).abs() < 1e-9);
        assert!((g.sigma - 0.0467).abs() < 1e-9);
        assert!((g.offset - 7.0).abs() < 1e-6);
    }

    #[test]
    fn robust_level_floor() {
        let (m, s) = robust_level(&[4.0; 9]);
        assert_eq!((m, s), (4.0, 2.0));
    }
}
