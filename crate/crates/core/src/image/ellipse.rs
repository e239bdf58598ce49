//! Direct least-squares ellipse fit (Fitzgibbon, Pilu & Fisher) in the
//! numerically stable partitioned form of Halíř & Flusser.

use nalgebra::{Matrix2, Matrix3, Vector3};

use super::ImageError;
use crate::model::{Point2, SilFit, SilMethod};

/// Geometric parameters of a fitted ellipse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseGeometry {
    pub center: Point2,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Orientation of the major axis, radians.
    pub angle: f64,
}

impl EllipseGeometry {
    pub fn eccentricity(&self) -> f64 {
        (1.0 - (self.semi_minor / self.semi_major).powi(2)).max(0.0).sqrt()
    }
}

/// Fits `Ax² + Bxy + Cy² + Dx + Ey + F = 0` subject to `4AC − B² = 1`.
///
/// The SIL radius is reported as the geometric mean of the semi-axes and the
/// eccentricity is attached to the result.
pub fn fit_ellipse(points: &[Point2]) -> Result<SilFit, ImageError> {
    let (geometry, residual) = fit_ellipse_geometry(points)?;
    let radius = (geometry.semi_major * geometry.semi_minor).sqrt();
    Ok(SilFit {
        center: geometry.center,
        radius,
        method: SilMethod::Ellipse,
        residual: residual / radius,
        eccentricity: Some(geometry.eccentricity()),
    })
}

pub(crate) fn fit_ellipse_geometry(points: &[Point2]) -> Result<(EllipseGeometry, f64), ImageError> {
    if points.len() < 5 {
        return Err(ImageError::InsufficientPoints { needed: 5, got: points.len() });
    }
    let mut distinct: Vec<Point2> = points.to_vec();
    distinct.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    distinct.dedup();
    if distinct.len() < 5 {
        return Err(ImageError::DegenerateConic);
    }

    // Normalise to zero mean and unit RMS radius.
    let n = points.len() as f64;
    let mean = Point2::new(points.iter().map(|p| p.x).sum::<f64>() / n, points.iter().map(|p| p.y).sum::<f64>() / n);
    let scale = (points.iter().map(|p| (*p - mean).norm().powi(2)).sum::<f64>() / n).sqrt();
    if scale.is_nan() || scale <= 0.0 {
        return Err(ImageError::DegenerateConic);
    }
    let norm: Vec<Point2> =
        points.iter().map(|&p| Point2::new((p.x - mean.x) / scale, (p.y - mean.y) / scale)).collect();

    let mut s1 = Matrix3::zeros();
    let mut s2 = Matrix3::zeros();
    let mut s3 = Matrix3::zeros();
    for p in &norm {
        let quad = Vector3::new(p.x * p.x, p.x * p.y, p.y * p.y);
        let lin = Vector3::new(p.x, p.y, 1.0);
        s1 += quad * quad.transpose();
        s2 += quad * lin.transpose();
        s3 += lin * lin.transpose();
    }
    let s3_inv = s3.try_inverse().ok_or(ImageError::DegenerateConic)?;
    let t = -s3_inv * s2.transpose();
    let reduced = s1 + s2 * t;
    // Inverse of the constraint block [[0,0,2],[0,−1,0],[2,0,0]].
    let c1_inv = Matrix3::new(0.0, 0.0, 0.5, 0.0, -1.0, 0.0, 0.5, 0.0, 0.0);
    let m = c1_inv * reduced;

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in m.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-8 * (1.0 + lambda.re.abs()) {
            continue;
        }
        let Some(v) = null_vector(&(m - Matrix3::identity() * lambda.re)) else {
            continue;
        };
        let constraint = 4.0 * v[0] * v[2] - v[1] * v[1];
        if constraint <= 0.0 {
            continue;
        }
        let v = v / constraint.sqrt();
        let cost = (v.transpose() * reduced * v)[(0, 0)];
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, v));
        }
    }
    let (_, quad) = best.ok_or(ImageError::DegenerateConic)?;
    let lin = t * quad;
    let conic = [quad[0], quad[1], quad[2], lin[0], lin[1], lin[2]];

    let geometry = conic_geometry(&conic).ok_or(ImageError::DegenerateConic)?;
    let sampson = sampson_rms(&conic, &norm) * scale;
    Ok((
        EllipseGeometry {
            center: Point2::new(mean.x + scale * geometry.center.x, mean.y + scale * geometry.center.y),
            semi_major: geometry.semi_major * scale,
            semi_minor: geometry.semi_minor * scale,
            angle: geometry.angle,
        },
        sampson,
    ))
}

/// Eigenvector for a (numerically) singular 3×3 matrix: the largest cross
/// product of two of its rows.
fn null_vector(a: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let rows = [a.row(0).transpose(), a.row(1).transpose(), a.row(2).transpose()];
    let candidates = [rows[0].cross(&rows[1]), rows[0].cross(&rows[2]), rows[1].cross(&rows[2])];
    let best = candidates.into_iter().max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared()))?;
    let norm = best.norm();
    (norm > 0.0 && norm.is_finite()).then(|| best / norm)
}

fn conic_geometry(c: &[f64; 6]) -> Option<EllipseGeometry> {
    let [a, b, cc, d, e, f] = *c;
    let center = Matrix2::new(2.0 * a, b, b, 2.0 * cc).try_inverse()? * nalgebra::Vector2::new(-d, -e);
    let (x0, y0) = (center[0], center[1]);
    let f0 = f + 0.5 * (d * x0 + e * y0);
    let quad = Matrix2::new(a, 0.5 * b, 0.5 * b, cc);
    let eig = quad.symmetric_eigen();
    let (l0, l1) = (eig.eigenvalues[0], eig.eigenvalues[1]);
    let ax0 = -f0 / l0;
    let ax1 = -f0 / l1;
    if !(ax0 > 0.0 && ax1 > 0.0) {
        return None;
    }
    let (r0, r1) = (ax0.sqrt(), ax1.sqrt());
    let (major, minor, idx) = if r0 >= r1 { (r0, r1, 0) } else { (r1, r0, 1) };
    let dir = eig.eigenvectors.column(idx);
    Some(EllipseGeometry {
        center: Point2::new(x0, y0),
        semi_major: major,
        semi_minor: minor,
        angle: dir[1].atan2(dir[0]),
    })
}

fn sampson_rms(c: &[f64; 6], points: &[Point2]) -> f64 {
    let [a, b, cc, d, e, f] = *c;
    let sum: f64 = points
        .iter()
        .map(|p| {
            let value = a * p.x * p.x + b * p.x * p.y + cc * p.y * p.y + d * p.x + e * p.y + f;
            let gx = 2.0 * a * p.x + b * p.y + d;
            let gy = b * p.x + 2.0 * cc * p.y + e;
            let g2 = gx * gx + gy * gy;
            if g2 > 0.0 {
                value * value / g2
            } else {
                0.0
            }
        })
        .sum();
    (sum / points.len() as f64).sqrt()
}
