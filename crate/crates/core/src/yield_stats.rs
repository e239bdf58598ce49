//! Emitter-creation statistics: Poisson outcome probabilities, the
//! expectation value recovered from empty-site counts, pulse-energy
//! planning, and placement scatter (displacements, Rayleigh scale).

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::model::{ModelError, Point2, RayleighFit, YieldEstimate};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum YieldError {
    #[error("Poisson rate must be finite and non-negative, got {0}")]
    NegativeRate(f64),
    #[error("every site is occupied; the expectation value is unbounded")]
    AllSitesOccupied,
    #[error("need at least one site")]
    NoSites,
    #[error("confidence must lie in (0, 1), got {0}")]
    InvalidConfidence(f64),
    #[error("multi-emitter fraction limit must lie in (0, 1], got {0}")]
    InvalidConstraint(f64),
    #[error("yield curve is empty")]
    EmptyCurve,
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("radius {value} at index {index} is negative or not finite")]
    NegativeRadius { index: usize, value: f64 },
    #[error("all radii are zero; the Rayleigh scale is undefined")]
    DegenerateSample,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Probabilities of zero, one, and more than one emitter at a site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonOutcome {
    pub p0: f64,
    pub p1: f64,
    pub p_multi: f64,
}

impl PoissonOutcome {
    /// Share of occupied sites that hold more than one emitter
    /// (0 in the λ → 0 limit).
    pub fn multi_fraction(&self) -> f64 {
        let occupied = self.p1 + self.p_multi;
        if occupied > 0.0 {
            self.p_multi / occupied
        } else {
            0.0
        }
    }
}

pub fn poisson_pmf(lambda: f64) -> Result<PoissonOutcome, YieldError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(YieldError::NegativeRate(lambda));
    }
    let p0 = (-lambda).exp();
    let p1 = lambda * p0;
    // 1 − e^{−λ} − λe^{−λ} without losing the small-λ tail.
    let p_multi = (-(-lambda).exp_m1() - p1).max(0.0);
    Ok(PoissonOutcome { p0, p1, p_multi })
}

/// Maximum-likelihood λ from the fraction of empty sites, `−ln(n_empty/n_sites)`,
/// with Clopper-Pearson bounds on the empty fraction mapped through `−ln`.
pub fn estimate_lambda_from_occupancy(
    n_sites: u32,
    n_empty: u32,
    confidence: f64,
) -> Result<YieldEstimate, YieldError> {
    if n_sites == 0 {
        return Err(YieldError::NoSites);
    }
    if n_empty > n_sites {
        return Err(ModelError::EmptyExceedsTotal { n_sites, n_empty }.into());
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(YieldError::InvalidConfidence(confidence));
    }
    if n_empty == 0 {
        return Err(YieldError::AllSitesOccupied);
    }
    let (n, k) = (f64::from(n_sites), f64::from(n_empty));
    let alpha = 1.0 - confidence;
    let lambda = (-(k / n).ln()).max(0.0);
    let p_low = beta_quantile(alpha / 2.0, k, n - k + 1.0);
    let p_high = if n_empty == n_sites { 1.0 } else { beta_quantile(1.0 - alpha / 2.0, k + 1.0, n - k) };
    let ci_low = (-p_high.ln()).max(0.0).min(lambda);
    let ci_high = (-p_low.ln()).max(lambda);
    Ok(YieldEstimate::new(lambda, ci_low, ci_high, confidence, n_sites, n_empty)?)
}

/// Inverse of the regularized incomplete beta function by bisection.
fn beta_quantile(q: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One point of a measured yield curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YieldPoint {
    pub energy_nj: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulsePlan {
    pub energy_nj: f64,
    pub lambda: f64,
    pub outcome: PoissonOutcome,
    pub multi_fraction: f64,
    /// False when no candidate met the multi-emitter limit and the plan
    /// instead minimises the multi-emitter fraction.
    pub constraint_met: bool,
}

/// Chooses the pulse energy with the highest single-emitter probability whose
/// multi-emitter share of occupied sites stays within `max_multi_fraction`.
/// Candidates are the curve points themselves.
pub fn plan_pulse_energy(curve: &[YieldPoint], max_multi_fraction: f64) -> Result<PulsePlan, YieldError> {
    plan_pulse_energy_with(curve, max_multi_fraction, 0)
}

/// As [`plan_pulse_energy`], additionally considering `subdivisions` linearly
/// interpolated points inside every gap of the energy-sorted curve.
pub fn plan_pulse_energy_with(
    curve: &[YieldPoint],
    max_multi_fraction: f64,
    subdivisions: usize,
) -> Result<PulsePlan, YieldError> {
    if curve.is_empty() {
        return Err(YieldError::EmptyCurve);
    }
    if !(max_multi_fraction > 0.0 && max_multi_fraction <= 1.0) {
        return Err(YieldError::InvalidConstraint(max_multi_fraction));
    }
    let mut sorted = curve.to_vec();
    for p in &sorted {
        if !(p.lambda.is_finite() && p.lambda >= 0.0) {
            return Err(YieldError::NegativeRate(p.lambda));
        }
    }
    sorted.sort_by(|a, b| a.energy_nj.total_cmp(&b.energy_nj).then(a.lambda.total_cmp(&b.lambda)));

    let mut candidates = Vec::with_capacity(sorted.len() * (subdivisions + 1));
    for (i, p) in sorted.iter().enumerate() {
        candidates.push(*p);
        if let Some(next) = sorted.get(i + 1) {
            for s in 1..=subdivisions {
                let t = s as f64 / (subdivisions + 1) as f64;
                candidates.push(YieldPoint {
                    energy_nj: p.energy_nj + t * (next.energy_nj - p.energy_nj),
                    lambda: p.lambda + t * (next.lambda - p.lambda),
                });
            }
        }
    }

    let plans: Vec<PulsePlan> = candidates
        .iter()
        .map(|c| {
            let outcome = poisson_pmf(c.lambda)?;
            let multi_fraction = outcome.multi_fraction();
            Ok(PulsePlan {
                energy_nj: c.energy_nj,
                lambda: c.lambda,
                outcome,
                multi_fraction,
                constraint_met: multi_fraction <= max_multi_fraction,
            })
        })
        .collect::<Result<_, YieldError>>()?;

    let tie_break =
        |a: &PulsePlan, b: &PulsePlan| b.energy_nj.total_cmp(&a.energy_nj).then(b.lambda.total_cmp(&a.lambda));
    let best = if plans.iter().any(|p| p.constraint_met) {
        plans
            .iter()
            .filter(|p| p.constraint_met)
            .max_by(|a, b| a.outcome.p1.total_cmp(&b.outcome.p1).then_with(|| tie_break(a, b)))
    } else {
        plans.iter().max_by(|a, b| {
            b.multi_fraction
                .total_cmp(&a.multi_fraction)
                .then(a.outcome.p1.total_cmp(&b.outcome.p1))
                .then_with(|| tie_break(a, b))
        })
    };
    Ok(*best.expect("candidate list is non-empty"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementStats {
    pub mean: Point2,
    /// Sample standard deviation per axis.
    pub std: Point2,
    /// Distance of each point from the collective mean.
    pub radial: Vec<f64>,
}

pub fn displacement_stats(points: &[Point2]) -> Result<DisplacementStats, YieldError> {
    if points.len() < 2 {
        return Err(YieldError::InsufficientData { needed: 2, got: points.len() });
    }
    let n = points.len() as f64;
    let mean = Point2::new(points.iter().map(|p| p.x).sum::<f64>() / n, points.iter().map(|p| p.y).sum::<f64>() / n);
    let var_x = points.iter().map(|p| (p.x - mean.x).powi(2)).sum::<f64>() / (n - 1.0);
    let var_y = points.iter().map(|p| (p.y - mean.y).powi(2)).sum::<f64>() / (n - 1.0);
    let radial = points.iter().map(|p| p.distance(mean)).collect();
    Ok(DisplacementStats { mean, std: Point2::new(var_x.sqrt(), var_y.sqrt()), radial })
}

/// Rayleigh maximum-likelihood scale `σ̂ = √(Σr²/2N)`.
pub fn fit_rayleigh(radial: &[f64]) -> Result<RayleighFit, YieldError> {
    if radial.len() < 2 {
        return Err(YieldError::InsufficientData { needed: 2, got: radial.len() });
    }
    if let Some((index, &value)) = radial.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r >= 0.0)) {
        return Err(YieldError::NegativeRadius { index, value });
    }
    let n = radial.len() as f64;
    let sum_sq: f64 = radial.iter().map(|r| r * r).sum();
    if sum_sq == 0.0 {
        return Err(YieldError::DegenerateSample);
    }
    let sigma = (sum_sq / (2.0 * n)).sqrt();
    let s2 = sigma * sigma;
    let log_likelihood = radial.iter().map(|r| r.ln() - s2.ln() - r * r / (2.0 * s2)).sum();
    Ok(RayleighFit { sigma, n_samples: radial.len(), log_likelihood })
}
