//! Closed-form laser-writing physics: the multiphoton-ionization intensity
//! bound, the matching pulse energy, and the pulse-energy saturation model
//! `I(E) = a·Eⁿ / (1 + k·Eⁿ)` with its weighted fit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::{self, LeastSquares, LmConfig};
use crate::model::{BeamParams, MaterialConstants, SaturationFitParams, ELEMENTARY_CHARGE_C};

/// Photon energy of the 790 nm writing laser, eV.
pub const WRITING_PHOTON_ENERGY_EV: f64 = 1.57;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhysicsError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("pulse energies span a factor {0:.3}, need at least 2")]
    NarrowEnergySpan(f64),
    #[error("invalid sample {index}: {reason}")]
    InvalidSample { index: usize, reason: &'static str },
    #[error("saturation fit did not converge")]
    FitNotConverged,
    #[error("{name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

/// Upper intensity bound (W/m²) for multiphoton ionization to dominate over
/// tunnelling: `m·c·n·ε₀·E_g·ω² / e²`, with the band gap converted to J.
pub fn keldysh_intensity_threshold(constants: &MaterialConstants) -> f64 {
    let bandgap_j = constants.bandgap_ev * ELEMENTARY_CHARGE_C;
    let omega = constants.laser_angular_frequency;
    constants.effective_mass
        * constants.speed_of_light
        * constants.refractive_index
        * constants.vacuum_permittivity
        * bandgap_j
        * omega
        * omega
        / (constants.electron_charge * constants.electron_charge)
}

/// Pulse energy (J) reaching `intensity` over the focal spot:
/// `I·π·w²·τ`.
pub fn threshold_pulse_energy(intensity: f64, beam: &BeamParams) -> Result<f64, PhysicsError> {
    if !(intensity.is_finite() && intensity > 0.0) {
        return Err(PhysicsError::NonPositive { name: "intensity", value: intensity });
    }
    Ok(intensity * std::f64::consts::PI * beam.beam_waist * beam.beam_waist * beam.pulse_duration)
}

/// Photoluminescence count rate for pulse energy `energy_nj`.
pub fn saturation_model(energy_nj: f64, params: &SaturationFitParams) -> f64 {
    let power = energy_nj.powf(params.exponent);
    params.amplitude * power / (1.0 + params.saturation_param * power)
}

/// One point of a PL-versus-pulse-energy sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationSample {
    pub energy_nj: f64,
    pub intensity: f64,
    /// Standard error of `intensity`; unweighted when absent.
    pub sigma: Option<f64>,
}

impl SaturationSample {
    pub fn new(energy_nj: f64, intensity: f64, sigma: Option<f64>) -> Self {
        Self { energy_nj, intensity, sigma }
    }
}

struct SaturationProblem<'a> {
    samples: &'a [SaturationSample],
}

impl SaturationProblem<'_> {
    fn weight(sample: &SaturationSample) -> f64 {
        sample.sigma.map_or(1.0, |s| 1.0 / s)
    }
}

// Parameters are (ln a, ln n, ln k), which keeps all three positive.
impl LeastSquares for SaturationProblem<'_> {
    fn residual_count(&self) -> usize {
        self.samples.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) -> bool {
        let (a, n, k) = (p[0].exp(), p[1].exp(), p[2].exp());
        if !(a.is_finite() && n.is_finite() && k.is_finite()) || n == 0.0 {
            return false;
        }
        for (o, s) in out.iter_mut().zip(self.samples) {
            let power = s.energy_nj.powf(n);
            let model = if power.is_infinite() { a / k } else { a * power / (1.0 + k * power) };
            *o = Self::weight(s) * (model - s.intensity);
        }
        true
    }

    fn jacobian(&self, p: &[f64], jac: &mut nalgebra::DMatrix<f64>) -> bool {
        let (a, n, k) = (p[0].exp(), p[1].exp(), p[2].exp());
        for (i, s) in self.samples.iter().enumerate() {
            let w = Self::weight(s);
            let power = s.energy_nj.powf(n);
            if !power.is_finite() {
                return false;
            }
            let denom = 1.0 + k * power;
            let model = a * power / denom;
            let ln_e = if s.energy_nj > 0.0 { s.energy_nj.ln() } else { 0.0 };
            jac[(i, 0)] = w * model;
            jac[(i, 1)] = w * model * n * ln_e / denom;
            jac[(i, 2)] = -w * model * k * power / denom;
        }
        true
    }
}

/// Weighted nonlinear least-squares fit of the saturation model.
///
/// Starts from the log-log slope of the three lowest-energy points and, in
/// addition, from the best point of an exponent scan in which `a` and `k`
/// are solved linearly via `1/I = E⁻ⁿ/a + k/a`. The lower-cost solution wins.
pub fn fit_saturation_model(samples: &[SaturationSample]) -> Result<SaturationFitParams, PhysicsError> {
    if samples.len() < 4 {
        return Err(PhysicsError::InsufficientData { needed: 4, got: samples.len() });
    }
    for (index, s) in samples.iter().enumerate() {
        if !(s.energy_nj.is_finite() && s.energy_nj >= 0.0) {
            return Err(PhysicsError::InvalidSample { index, reason: "energy must be >= 0" });
        }
        if !s.intensity.is_finite() {
            return Err(PhysicsError::InvalidSample { index, reason: "intensity not finite" });
        }
        if let Some(sigma) = s.sigma {
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(PhysicsError::InvalidSample { index, reason: "sigma must be > 0" });
            }
        }
    }
    let usable: Vec<&SaturationSample> = samples.iter().filter(|s| s.energy_nj > 0.0 && s.intensity > 0.0).collect();
    if usable.len() < 3 {
        return Err(PhysicsError::InsufficientData { needed: 3, got: usable.len() });
    }
    let e_min = usable.iter().map(|s| s.energy_nj).fold(f64::INFINITY, f64::min);
    let e_max = usable.iter().map(|s| s.energy_nj).fold(0.0, f64::max);
    if e_max / e_min < 2.0 {
        return Err(PhysicsError::NarrowEnergySpan(e_max / e_min));
    }

    let problem = SaturationProblem { samples };
    let mut starts = vec![slope_initial_guess(&usable)];
    if let Some(scan) = exponent_scan_guess(&usable, &problem) {
        starts.push(scan);
    }

    let config = LmConfig { max_iterations: 1000, ..LmConfig::default() };
    let best = starts
        .iter()
        .map(|start| lm::minimize(&problem, start, config))
        .filter(|o| o.converged && o.cost.is_finite())
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .ok_or(PhysicsError::FitNotConverged)?;

    let (a, n, k) = (best.params[0].exp(), best.params[1].exp(), best.params[2].exp());
    let errs = best.standard_errors(samples.len()).unwrap_or_else(|| vec![f64::NAN; 3]);
    let mut fit = SaturationFitParams::new(a, n, k).map_err(|_| PhysicsError::FitNotConverged)?;
    // Delta method: d(exp u) = exp(u)·du.
    fit.amplitude_err = a * errs[0];
    fit.exponent_err = n * errs[1];
    fit.saturation_param_err = k * errs[2];
    fit.rss = best.cost;
    Ok(fit)
}

fn slope_initial_guess(usable: &[&SaturationSample]) -> Vec<f64> {
    let mut by_energy: Vec<&SaturationSample> = usable.to_vec();
    by_energy.sort_by(|a, b| a.energy_nj.total_cmp(&b.energy_nj));
    let low = &by_energy[..3];
    let xs: Vec<f64> = low.iter().map(|s| s.energy_nj.ln()).collect();
    let ys: Vec<f64> = low.iter().map(|s| s.intensity.ln()).collect();
    let (slope, intercept) = linear_regression(&xs, &ys);
    let n = slope.clamp(0.1, 20.0);
    let a = intercept.exp();
    let peak = usable.iter().map(|s| s.intensity).fold(0.0, f64::max);
    let k = (a / peak).max(1e-12);
    vec![a.ln(), n.ln(), k.ln()]
}

fn exponent_scan_guess(usable: &[&SaturationSample], problem: &SaturationProblem<'_>) -> Option<Vec<f64>> {
    let mut residuals = vec![0.0; problem.residual_count()];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for step in 1..=120 {
        let n = 0.1 * step as f64;
        // Weighted linear fit of 1/I = u·E⁻ⁿ + v with relative weights.
        let (mut s_ww, mut s_wx, mut s_wxx, mut s_wy, mut s_wxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for s in usable {
            let rel = s.sigma.map_or(1.0, |sig| s.intensity / sig);
            let w = rel * rel * s.intensity * s.intensity;
            let x = s.energy_nj.powf(-n);
            let y = 1.0 / s.intensity;
            s_ww += w;
            s_wx += w * x;
            s_wxx += w * x * x;
            s_wy += w * y;
            s_wxy += w * x * y;
        }
        let det = s_ww * s_wxx - s_wx * s_wx;
        if det.abs() < f64::MIN_POSITIVE {
            continue;
        }
        let u = (s_ww * s_wxy - s_wx * s_wy) / det;
        let v = (s_wxx * s_wy - s_wx * s_wxy) / det;
        if !(u > 0.0 && u.is_finite()) {
            continue;
        }
        let a = 1.0 / u;
        let k = (v / u).max(1e-12 * a);
        let params = vec![a.ln(), n.ln(), k.ln()];
        if !problem.residuals(&params, &mut residuals) {
            continue;
        }
        let cost: f64 = residuals.iter().map(|r| r * r).sum();
        if cost.is_finite() && best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, params));
        }
    }
    best.map(|(_, p)| p)
}

fn linear_regression(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 1.0 };
    (slope, my - slope * mx)
}

/// Energy of the `n`-photon process implied by a power-law exponent, with
/// the exponent's error carried through: `(n·E_ph, δn·E_ph)` in eV.
pub fn effective_process_energy(
    exponent: f64,
    exponent_err: f64,
    photon_energy_ev: f64,
) -> Result<(f64, f64), PhysicsError> {
    if !(exponent.is_finite() && exponent > 0.0) {
        return Err(PhysicsError::NonPositive { name: "exponent", value: exponent });
    }
    Ok((exponent * photon_energy_ev, exponent_err.abs() * photon_energy_ev))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(a: f64, n: f64, k: f64) -> SaturationFitParams {
        SaturationFitParams::new(a, n, k).unwrap()
    }

    #[test]
    fn keldysh_matches_hand_computed_value() {
        // 0.37·mₑ·c·2.6·ε₀·(3.23 eV in J)·(2.4e15)²/e², evaluated at 30 digits.
        let expected = 2.701_146_333_147_794_6e17;
        let got = keldysh_intensity_threshold(&MaterialConstants::sic_4h());
        assert!(((got - expected) / expected).abs() < 1e-13, "{got}");
    }

    #[test]
    fn keldysh_scaling() {
        let base = MaterialConstants::sic_4h();
        let i0 = keldysh_intensity_threshold(&base);
        let mut fast = base;
        fast.laser_angular_frequency *= 2.0;
        assert_eq!(keldysh_intensity_threshold(&fast) / i0, 4.0);
        let mut heavy_charge = base;
        heavy_charge.electron_charge *= 2.0;
        assert_eq!(keldysh_intensity_threshold(&heavy_charge) / i0, 0.25);
    }

    #[test]
    fn pulse_energy_from_intensity() {
        let planar = BeamParams::new(350e-9, 250e-15).unwrap();
        let sil = BeamParams::new(190e-9, 250e-15).unwrap();
        let e_planar = threshold_pulse_energy(1.38e17, &planar).unwrap();
        let e_sil = threshold_pulse_energy(1.38e17, &sil).unwrap();
        assert!((e_planar - 1.327_715_595e-8).abs() < 1e-16);
        assert!((e_sil - 3.912_696_570e-9).abs() < 1e-16);
        let half = BeamParams::new(175e-9, 250e-15).unwrap();
        let ratio = threshold_pulse_energy(1.38e17, &half).unwrap() / e_planar;
        assert!((ratio - 0.25).abs() < 1e-15);
        assert!(threshold_pulse_energy(0.0, &planar).is_err());
    }

    #[test]
    fn saturation_model_limits() {
        let p = params(7500.0, 5.75, 12.5e-3);
        assert_eq!(saturation_model(0.0, &p), 0.0);
        let pure = params(2.0, 3.0, 0.0);
        assert_eq!(saturation_model(2.0, &pure), 16.0);
        let far = saturation_model(1e4, &p);
        assert!((far - p.plateau()).abs() / p.plateau() < 1e-12);
    }

    fn noiseless(p: &SaturationFitParams, energies: &[f64]) -> Vec<SaturationSample> {
        energies.iter().map(|&e| SaturationSample::new(e, saturation_model(e, p), None)).collect()
    }

    #[test]
    fn noiseless_round_trip_is_exact() {
        for (truth, energies) in [
            (params(7500.0, 5.75, 12.5e-3), vec![1.4, 2.05, 2.7, 3.35, 4.0]),
            (params(549.0, 3.67, 1.83e-3), vec![4.0, 8.0, 12.0, 16.0, 20.0]),
            (params(1.0, 2.0, 0.5), vec![0.5, 1.0, 1.5, 2.0, 3.0, 4.0]),
        ] {
            let fit = fit_saturation_model(&noiseless(&truth, &energies)).unwrap();
            let rel = |a: f64, b: f64| ((a - b) / b).abs();
            assert!(rel(fit.amplitude, truth.amplitude) < 1e-6, "{fit:?}");
            assert!(rel(fit.exponent, truth.exponent) < 1e-6, "{fit:?}");
            assert!(rel(fit.saturation_param, truth.saturation_param) < 1e-6, "{fit:?}");
        }
    }

    #[test]
    fn fit_rejects_bad_input() {
        let p = params(1.0, 2.0, 0.5);
        let few = noiseless(&p, &[1.0, 2.0, 3.0]);
        assert!(matches!(fit_saturation_model(&few), Err(PhysicsError::InsufficientData { .. })));
        let narrow = noiseless(&p, &[1.0, 1.2, 1.4, 1.6]);
        assert!(matches!(fit_saturation_model(&narrow), Err(PhysicsError::NarrowEnergySpan(_))));
    }

    #[test]
    fn process_energy() {
        let (e, err) = effective_process_energy(3.67, 0.15, WRITING_PHOTON_ENERGY_EV).unwrap();
        assert!((e - 5.7619).abs() < 1e-9 && (err - 0.2355).abs() < 1e-9);
        let (e, _) = effective_process_energy(5.75, 0.15, WRITING_PHOTON_ENERGY_EV).unwrap();
        assert!((e - 9.0275).abs() < 1e-9);
        assert_eq!(effective_process_energy(1.0, 0.0, 1.57).unwrap().0, 1.57);
        assert!(effective_process_energy(0.0, 0.1, 1.57).is_err());
    }

    proptest! {
        #[test]
        fn saturation_model_monotone(
            a in 1e-3f64..1e6,
            n in 0.1f64..8.0,
            k in 0.0f64..1.0,
            e1 in 0.0f64..50.0,
            e2 in 0.0f64..50.0,
        ) {
            let p = params(a, n, k);
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(saturation_model(lo, &p) <= saturation_model(hi, &p));
        }

        #[test]
        fn keldysh_homogeneity(s in 0.1f64..10.0) {
            let base = MaterialConstants::sic_4h();
            let i0 = keldysh_intensity_threshold(&base);
            let ratio = |f: fn(&mut MaterialConstants, f64)| {
                let mut c = base;
                f(&mut c, s);
                keldysh_intensity_threshold(&c) / i0
            };
            let close = |got: f64, want: f64| ((got - want) / want).abs() < 1e-12;
            prop_assert!(close(ratio(|c, s| c.effective_mass *= s), s));
            prop_assert!(close(ratio(|c, s| c.refractive_index *= s), s));
            prop_assert!(close(ratio(|c, s| c.bandgap_ev *= s), s));
            prop_assert!(close(ratio(|c, s| c.laser_angular_frequency *= s), s * s));
            prop_assert!(close(ratio(|c, s| c.electron_charge *= s), 1.0 / (s * s)));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn noiseless_round_trip_any(n in 1.5f64..7.0, saturation_at in 1.5f64..3.5) {
            // k puts the half-saturation point inside the sampled range.
            let k = saturation_at.powf(-n);
            let truth = params(1000.0 * k, n, k);
            let fit = fit_saturation_model(&noiseless(&truth, &[1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0])).unwrap();
            prop_assert!((fit.exponent / n - 1.0).abs() < 1e-6, "{:?}", fit);
            prop_assert!((fit.saturation_param / k - 1.0).abs() < 1e-6, "{:?}", fit);
        }
    }
}
