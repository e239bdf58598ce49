use nalgebra::{DMatrix, DVector, Matrix2};

use super::ImageError;
use crate::model::{Point2, SilFit, SilMethod};

/// Kåsa circle fit: minimises `Σ(xᵢ² + yᵢ² + D·xᵢ + E·yᵢ + F)²`.
///
/// Points are centred on their mean first so the normal equations stay
/// well conditioned far from the origin.
pub fn fit_circle_algebraic(points: &[Point2]) -> Result<SilFit, ImageError> {
    if points.len() < 3 {
        return Err(ImageError::InsufficientPoints { needed: 3, got: points.len() });
    }
    let n = points.len() as f64;
    let mean = Point2::new(points.iter().map(|p| p.x).sum::<f64>() / n, points.iter().map(|p| p.y).sum::<f64>() / n);
    let centred: Vec<Point2> = points.iter().map(|&p| p - mean).collect();

    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &centred {
        sxx += p.x * p.x;
        sxy += p.x * p.y;
        syy += p.y * p.y;
    }
    let eig = Matrix2::new(sxx, sxy, sxy, syy).symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if hi <= 0.0 || lo <= 1e-12 * hi {
        return Err(ImageError::CollinearPoints);
    }

    let design = DMatrix::from_fn(centred.len(), 3, |i, j| match j {
        0 => centred[i].x,
        1 => centred[i].y,
        _ => 1.0,
    });
    let rhs = DVector::from_iterator(centred.len(), centred.iter().map(|p| -(p.x * p.x + p.y * p.y)));
    let solution = design.svd(true, true).solve(&rhs, 1e-14).map_err(|_| ImageError::CollinearPoints)?;
    let (d, e, f) = (solution[0], solution[1], solution[2]);
    let local = Point2::new(-0.5 * d, -0.5 * e);
    let r2 = local.x * local.x + local.y * local.y - f;
    if !(r2.is_finite() && r2 > 0.0) {
        return Err(ImageError::CollinearPoints);
    }
    let radius = r2.sqrt();
    let center = local + mean;
    let rms = (points.iter().map(|p| (p.distance(center) - radius).powi(2)).sum::<f64>() / n).sqrt();
    Ok(SilFit { center, radius, method: SilMethod::Circle, residual: rms / radius, eccentricity: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn circle_points(c: Point2, r: f64, n: usize, phase: f64) -> Vec<Point2> {
        (0..n)
            .map(|i| {
                let t = phase + i as f64 * std::f64::consts::TAU / n as f64;
                Point2::new(c.x + r * t.cos(), c.y + r * t.sin())
            })
            .collect()
    }

    #[test]
    fn exact_circle_recovered() {
        let fit = fit_circle_algebraic(&circle_points(Point2::new(2.0, 3.0), 1.5, 8, 0.1)).unwrap();
        assert!((fit.center.x - 2.0).abs() < 1e-9 * 2.0);
        assert!((fit.center.y - 3.0).abs() < 1e-9 * 3.0);
        assert!((fit.radius - 1.5).abs() < 1e-9 * 1.5);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn noisy_circle_center_within_tolerance() {
        let clean = circle_points(Point2::new(2.0, 3.0), 1.5, 8, 0.1);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let mut within = 0;
        for seed in 0..200u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noisy: Vec<Point2> =
                clean.iter().map(|p| Point2::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng))).collect();
            let fit = fit_circle_algebraic(&noisy).unwrap();
            if fit.center.distance(Point2::new(2.0, 3.0)) <= 0.02 {
                within += 1;
            }
            if seed == 0 {
                assert!(fit.center.distance(Point2::new(2.0, 3.0)) <= 0.02);
            }
        }
        // Centre error per axis is ≈ σ·√(2/n) = 0.01, so ≈ 86 % land inside 0.02.
        assert!(within >= 160, "{within}");
    }

    #[test]
    fn degenerate_inputs() {
        let line = [Point2::new(0.0, 0.0), Point2::new(1.0, 1.0), Point2::new(2.0, 2.0)];
        assert_eq!(fit_circle_algebraic(&line), Err(ImageError::CollinearPoints));
        assert!(matches!(fit_circle_algebraic(&line[..2]), Err(ImageError::InsufficientPoints { needed: 3, got: 2 })));
    }

    proptest! {
        #[test]
        fn rigid_motion_equivariance(
            cx in -5.0f64..5.0, cy in -5.0f64..5.0, r in 0.5f64..4.0,
            angle in 0.0f64..std::f64::consts::TAU, tx in -20.0f64..20.0, ty in -20.0f64..20.0,
            wobble in proptest::collection::vec(-0.05f64..0.05, 12),
        ) {
            let pts: Vec<Point2> = circle_points(Point2::new(cx, cy), r, 12, 0.3)
                .iter()
                .zip(&wobble)
                .map(|(p, w)| Point2::new(p.x + w, p.y - 0.5 * w))
                .collect();
            let (s, c) = angle.sin_cos();
            let move_point = |p: Point2| Point2::new(c * p.x - s * p.y + tx, s * p.x + c * p.y + ty);
            let base = fit_circle_algebraic(&pts).unwrap();
            let moved: Vec<Point2> = pts.iter().map(|&p| move_point(p)).collect();
            let fit = fit_circle_algebraic(&moved).unwrap();
            prop_assert!(fit.center.distance(move_point(base.center)) < 1e-9);
            prop_assert!((fit.radius - base.radius).abs() < 1e-9);
        }
    }
}
