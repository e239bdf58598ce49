//! Hanbury Brown-Twiss correlation analysis and emitter brightness fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::{self, FnProblem, LmConfig};
use crate::model::PhotonStream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhotonError {
    #[error("stream has no events")]
    EmptyStream,
    #[error("stream has no events on channel {0}")]
    MissingChannel(u8),
    #[error("bin width must be positive and the delay window at least one bin")]
    InvalidBinning,
    #[error("signal fraction rho must lie in (0, 1], got {0}")]
    RhoOutOfRange(f64),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid sample {index}: {reason}")]
    InvalidSample { index: usize, reason: &'static str },
    #[error("power saturation fit did not converge")]
    FitNotConverged,
}

/// Normalised cross-correlation histogram `g²(τ)` with `τ = t₁ − t₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Histogram {
    pub bin_width_ps: u64,
    /// Bin centres, ps, symmetric about zero.
    pub delays_ps: Vec<i64>,
    pub normalized: Vec<f64>,
    pub raw_coincidences: Vec<u64>,
    /// Coincidences per bin expected for uncorrelated light.
    pub normalization_constant: f64,
}

impl G2Histogram {
    fn central_index(&self) -> usize {
        self.delays_ps.len() / 2
    }

    /// Central-bin `g²(0)` with its counting error `√N / normalisation`.
    pub fn g2_zero(&self) -> (f64, f64) {
        let i = self.central_index();
        let raw = self.raw_coincidences[i] as f64;
        (self.normalized[i], raw.sqrt() / self.normalization_constant)
    }
}

/// Correlates every channel-1 event with every channel-0 event within
/// `±max_delay_ps`. Bin `j` covers `[(j − ½)·w, (j + ½)·w)`; the window spans
/// `⌊max_delay/w⌋` bins either side of zero.
///
/// Normalisation is `r₀·r₁·w·T = N₀·N₁·w/T`, so uncorrelated streams give 1.
pub fn build_g2(stream: &PhotonStream, bin_width_ps: u64, max_delay_ps: u64) -> Result<G2Histogram, PhotonError> {
    if stream.is_empty() {
        return Err(PhotonError::EmptyStream);
    }
    if bin_width_ps == 0 || max_delay_ps < bin_width_ps || stream.duration_ps() == 0 {
        return Err(PhotonError::InvalidBinning);
    }
    let t0 = stream.channel_times(0);
    let t1 = stream.channel_times(1);
    if t0.is_empty() {
        return Err(PhotonError::MissingChannel(0));
    }
    if t1.is_empty() {
        return Err(PhotonError::MissingChannel(1));
    }

    let half_bins = (max_delay_ps / bin_width_ps) as i64;
    let n_bins = (2 * half_bins + 1) as usize;
    let w = i128::from(bin_width_ps);
    // Delays d with −(K+½)w ≤ d < (K+½)w land in bins −K..=K.
    let reach = ((w * (2 * i128::from(half_bins) + 1) + 1) / 2) as u64;

    let raw = t1
        .par_chunks(4096)
        .map(|chunk| {
            let mut hist = vec![0u64; n_bins];
            let mut start = t0.partition_point(|&t| t + reach < chunk[0]);
            for &stop in chunk {
                while start < t0.len() && t0[start] + reach < stop {
                    start += 1;
                }
                for &s in &t0[start..] {
                    let d = i128::from(stop) - i128::from(s);
                    let bin = (2 * d + w).div_euclid(2 * w);
                    if bin < -i128::from(half_bins) {
                        break;
                    }
                    if bin <= i128::from(half_bins) {
                        hist[(bin + i128::from(half_bins)) as usize] += 1;
                    }
                }
            }
            hist
        })
        .reduce(
            || vec![0u64; n_bins],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );

    let duration = stream.duration_ps() as f64;
    let normalization_constant = t0.len() as f64 * t1.len() as f64 * bin_width_ps as f64 / duration;
    let delays_ps = (-half_bins..=half_bins).map(|j| j * bin_width_ps as i64).collect();
    let normalized = raw.iter().map(|&c| c as f64 / normalization_constant).collect();
    Ok(G2Histogram { bin_width_ps, delays_ps, normalized, raw_coincidences: raw, normalization_constant })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectedG2 {
    pub value: f64,
    /// Set when the corrected value fell below zero and was clamped.
    pub clamped: bool,
}

/// Removes uncorrelated background from a measured `g²(0)`:
/// `(g²_raw − (1 − ρ²)) / ρ²`, with `ρ = S/(S+B)`.
pub fn g2_background_correct(g2_raw: f64, rho: f64) -> Result<CorrectedG2, PhotonError> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(PhotonError::RhoOutOfRange(rho));
    }
    let rho2 = rho * rho;
    let value = (g2_raw - (1.0 - rho2)) / rho2;
    if value < 0.0 {
        Ok(CorrectedG2 { value: 0.0, clamped: true })
    } else {
        Ok(CorrectedG2 { value, clamped: false })
    }
}

/// Emitter-number class read off `g²(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", content = "n_estimate")]
pub enum EmitterCount {
    Single,
    Few(u32),
    NotSingle,
}

impl EmitterCount {
    /// Ordering key: 1 for `Single`, N for `Few(N)`, unbounded otherwise.
    pub fn as_count(&self) -> u32 {
        match *self {
            EmitterCount::Single => 1,
            EmitterCount::Few(n) => n,
            EmitterCount::NotSingle => u32::MAX,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EmitterCount::Single => "Single",
            EmitterCount::Few(_) => "Few",
            EmitterCount::NotSingle => "NotSingle",
        }
    }
}

/// `g²(0) ≤ 0.5` is a single emitter; below 1, N equal emitters satisfy
/// `g²(0) = 1 − 1/N`.
pub fn classify_emitter_count(g2_zero: f64) -> EmitterCount {
    if g2_zero <= 0.5 {
        EmitterCount::Single
    } else if g2_zero < 1.0 {
        let n = (1.0 / (1.0 - g2_zero)).round();
        EmitterCount::Few(n.min(f64::from(u32::MAX - 1)).max(2.0) as u32)
    } else {
        EmitterCount::NotSingle
    }
}

/// `C(P) = I_sat·P/(P + P_sat) + b·P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSaturationFit {
    /// Saturated count rate, counts/s.
    pub i_sat: f64,
    /// Saturation excitation power, mW.
    pub p_sat: f64,
    /// Linear background, counts/s per mW.
    pub background_slope: f64,
    pub i_sat_err: f64,
    pub p_sat_err: f64,
    pub background_slope_err: f64,
}

impl PowerSaturationFit {
    pub fn new(i_sat: f64, p_sat: f64, background_slope: f64) -> Self {
        Self { i_sat, p_sat, background_slope, i_sat_err: 0.0, p_sat_err: 0.0, background_slope_err: 0.0 }
    }

    pub fn with_errors(mut self, i_sat_err: f64, p_sat_err: f64, background_slope_err: f64) -> Self {
        self.i_sat_err = i_sat_err;
        self.p_sat_err = p_sat_err;
        self.background_slope_err = background_slope_err;
        self
    }

    pub fn evaluate(&self, power_mw: f64) -> f64 {
        self.i_sat * power_mw / (power_mw + self.p_sat) + self.background_slope * power_mw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub power_mw: f64,
    pub counts: f64,
}

/// Least-squares fit of the power-saturation curve. With `fit_background`
/// the linear slope is free but clamped to zero (and the fit repeated) if it
/// comes out negative.
pub fn fit_power_saturation(samples: &[PowerSample], fit_background: bool) -> Result<PowerSaturationFit, PhotonError> {
    if samples.len() < 4 {
        return Err(PhotonError::InsufficientData { needed: 4, got: samples.len() });
    }
    for (index, s) in samples.iter().enumerate() {
        if !(s.power_mw.is_finite() && s.power_mw > 0.0) {
            return Err(PhotonError::InvalidSample { index, reason: "power must be > 0" });
        }
        if !s.counts.is_finite() {
            return Err(PhotonError::InvalidSample { index, reason: "counts not finite" });
        }
    }
    let (i0, p0) = lineweaver_burk(samples).ok_or(PhotonError::FitNotConverged)?;

    if fit_background {
        let free = solve_power(samples, &[i0.ln(), p0.ln(), 0.0], true)?;
        if free.background_slope >= 0.0 {
            return Ok(free);
        }
    }
    solve_power(samples, &[i0.ln(), p0.ln()], false)
}

fn solve_power(samples: &[PowerSample], start: &[f64], with_slope: bool) -> Result<PowerSaturationFit, PhotonError> {
    let problem = FnProblem {
        count: samples.len(),
        f: |p: &[f64], out: &mut [f64]| {
            let (i_sat, p_sat) = (p[0].exp(), p[1].exp());
            let slope = if with_slope { p[2] } else { 0.0 };
            if !(i_sat.is_finite() && p_sat.is_finite() && p_sat > 0.0) {
                return false;
            }
            for (o, s) in out.iter_mut().zip(samples) {
                *o = i_sat * s.power_mw / (s.power_mw + p_sat) + slope * s.power_mw - s.counts;
            }
            true
        },
    };
    let outcome = lm::minimize(&problem, start, LmConfig::default());
    if !outcome.converged || !outcome.cost.is_finite() {
        return Err(PhotonError::FitNotConverged);
    }
    let errs = outcome.standard_errors(samples.len()).unwrap_or_else(|| vec![f64::NAN; 3]);
    let (i_sat, p_sat) = (outcome.params[0].exp(), outcome.params[1].exp());
    let (slope, slope_err) = if with_slope { (outcome.params[2], errs[2]) } else { (0.0, 0.0) };
    Ok(PowerSaturationFit::new(i_sat, p_sat, slope).with_errors(i_sat * errs[0], p_sat * errs[1], slope_err))
}

/// Linear fit of `1/C = 1/I_sat + (P_sat/I_sat)·(1/P)` for a starting point.
fn lineweaver_burk(samples: &[PowerSample]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> =
        samples.iter().filter(|s| s.counts > 0.0).map(|s| (1.0 / s.power_mw, 1.0 / s.counts)).collect();
    if pts.len() < 2 {
        return None;
    }
    // Weight by C² so high-count points dominate, as they would in C-space.
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y) in &pts {
        let w = 1.0 / (y * y);
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let det = sw * sxx - sx * sx;
    let (slope, intercept) =
        if det.abs() > 0.0 { ((sw * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det) } else { (0.0, sy / sw) };
    let max_c = samples.iter().map(|s| s.counts).fold(0.0, f64::max);
    let mean_p = samples.iter().map(|s| s.power_mw).sum::<f64>() / samples.len() as f64;
    let i_sat = if intercept > 0.0 { 1.0 / intercept } else { 2.0 * max_c };
    let p_sat = if slope > 0.0 { slope * i_sat } else { mean_p };
    (i_sat.is_finite() && p_sat.is_finite() && i_sat > 0.0 && p_sat > 0.0).then_some((i_sat, p_sat))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Enhancement {
    /// `I_sat(SIL) / I_sat(bulk)`.
    pub collection_enhancement: f64,
    pub collection_enhancement_err: f64,
    /// `P_sat(bulk) / P_sat(SIL)`.
    pub power_intensification: f64,
    pub power_intensification_err: f64,
}

/// Ratios of saturated brightness and saturation power, errors added in
/// quadrature in relative terms.
pub fn enhancement_factors(sil: &PowerSaturationFit, bulk: &PowerSaturationFit) -> Enhancement {
    let collection = sil.i_sat / bulk.i_sat;
    let intensification = bulk.p_sat / sil.p_sat;
    let rel = |a: f64, da: f64| if a != 0.0 { da / a } else { 0.0 };
    Enhancement {
        collection_enhancement: collection,
        collection_enhancement_err: collection * rel(sil.i_sat, sil.i_sat_err).hypot(rel(bulk.i_sat, bulk.i_sat_err)),
        power_intensification: intensification,
        power_intensification_err: intensification
            * rel(sil.p_sat, sil.p_sat_err).hypot(rel(bulk.p_sat, bulk.p_sat_err)),
    }
}
