//! Ring-point extraction for the circle and ellipse SIL fits.

use serde::{Deserialize, Serialize};

use super::{median, robust_level, ImageError};
use crate::model::{PlMap, Point2};

pub const DEFAULT_SECTORS: usize = 36;

const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingPoints {
    pub points: Vec<Point2>,
    /// Count threshold a pixel had to exceed to contribute.
    pub threshold: f64,
}

/// Samples the SIL edge as one point per angular sector.
///
/// Pixels within `±max(3·ring_sigma, 3 px)` of `radius` around `center` that
/// exceed the brighter of the two flanking annulus backgrounds by 3σ are
/// kept. Each sector yields the excess-weighted mean radius, placed at the
/// sector's mid angle. Sector boundaries sit half a sector off the axes.
pub fn extract_ring_points(
    map: &PlMap,
    center: Point2,
    radius: f64,
    ring_sigma: f64,
    sectors: usize,
) -> Result<RingPoints, ImageError> {
    let px = map.pixel_size();
    let band = (3.0 * ring_sigma).max(3.0 * px);
    let mut inner = Vec::new();
    let mut outer = Vec::new();
    let mut candidates = Vec::new();
    for row in 0..map.rows() {
        for col in 0..map.cols() {
            let p = map.position(row, col);
            let d = p - center;
            let r = d.norm();
            let value = map.get(row, col);
            if (r - radius).abs() <= band {
                candidates.push((d, r, value));
            } else if r < radius - band && r >= radius - 2.0 * band {
                inner.push(value);
            } else if r > radius + band && r <= radius + 2.0 * band {
                outer.push(value);
            }
        }
    }
    if candidates.is_empty() {
        return Err(ImageError::PeaksNotFound("ring band lies outside the map".into()));
    }
    let inner_level = median(&mut inner.clone());
    let outer_level = if outer.is_empty() { inner_level } else { median(&mut outer.clone()) };
    let (_, noise) = robust_level(if outer_level > inner_level { &outer } else { &inner });
    let threshold = inner_level.max(outer_level) + 3.0 * noise;

    let width = std::f64::consts::TAU / sectors as f64;
    let offset = 0.5 * width;
    let mut weight = vec![0.0; sectors];
    let mut moment = vec![0.0; sectors];
    for (d, r, value) in candidates {
        if value <= threshold {
            continue;
        }
        let t = (d.y.atan2(d.x) - offset).rem_euclid(std::f64::consts::TAU) / width;
        let k = (t as usize).min(sectors - 1);
        let w = value - threshold;
        // Pixels on a boundary are shared so mirror-symmetric rings stay symmetric.
        let frac = t - t.floor();
        let neighbour = if frac < BOUNDARY_EPS {
            Some((k + sectors - 1) % sectors)
        } else if frac > 1.0 - BOUNDARY_EPS {
            Some((k + 1) % sectors)
        } else {
            None
        };
        match neighbour {
            Some(j) => {
                for s in [k, j] {
                    weight[s] += 0.5 * w;
                    moment[s] += 0.5 * w * r;
                }
            }
            None => {
                weight[k] += w;
                moment[k] += w * r;
            }
        }
    }
    let points: Vec<Point2> = (0..sectors)
        .filter(|&k| weight[k] > 0.0)
        .map(|k| {
            let angle = offset + (k as f64 + 0.5) * width;
            let r = moment[k] / weight[k];
            Point2::new(center.x + r * angle.cos(), center.y + r * angle.sin())
        })
        .collect();
    if points.len() < 5 {
        return Err(ImageError::PeaksNotFound(format!("only {} of {sectors} sectors show the ring", points.len())));
    }
    Ok(RingPoints { points, threshold })
}
