//! Seeded generators for synthetic maps, photon streams, saturation sweeps
//! and write arrays.
//!
//! Every generator is a pure function of its spec. Randomness comes from
//! ChaCha8 seeded with the spec seed; independent parts (map rows, emitters,
//! sites) each draw from their own stream of that generator, so parallel
//! rendering gives the same bits as serial rendering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{normal_cdf, FWHM_PER_SIGMA};
use crate::model::{PhotonEvent, PhotonStream, PlMap, Point2, SaturationFitParams, DEFAULT_PIXEL_SIZE_UM};
use crate::physics::{saturation_model, SaturationSample};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid spec: {0}")]
    SpecInvalid(String),
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<(), SimError> {
    if ok {
        Ok(())
    } else {
        Err(SimError::SpecInvalid(what()))
    }
}

fn positive(name: &str, v: f64) -> Result<(), SimError> {
    check(v.is_finite() && v > 0.0, || format!("{name} must be positive, got {v}"))
}

fn non_negative(name: &str, v: f64) -> Result<(), SimError> {
    check(v.is_finite() && v >= 0.0, || format!("{name} must be non-negative, got {v}"))
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn poisson_draw(mean: f64, rng: &mut ChaCha8Rng) -> f64 {
    if mean > 0.0 {
        Poisson::new(mean).expect("mean is positive and finite").sample(rng)
    } else {
        0.0
    }
}

fn default_true() -> bool {
    true
}

fn default_pixel() -> f64 {
    DEFAULT_PIXEL_SIZE_UM
}

/// A point emitter in the scene; `z` is the depth offset from the focal
/// plane, µm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub z: f64,
    pub peak_counts: f64,
    pub sigma_lat: f64,
    pub sigma_ax: f64,
}

/// Synthetic PL map of one SIL. Lengths in µm, levels in counts per pixel.
///
/// The expected image is
/// `inner + (interface − inner)·Φ((r − R)/w) + A·exp(−(r − R)²/2w²)`
/// plus `P·exp(−ρ²/2σ_lat² − z²/2σ_ax²)` per emitter, where `r` is the
/// distance from the SIL centre and `ρ` from the emitter. The background
/// steps smoothly from the dim lens interior to the brighter SiC interface
/// outside. Pixel (row, col) sits at x = col·pixel_size, y = row·pixel_size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "default_pixel")]
    pub pixel_size: f64,
    pub sil_center: Point2,
    pub sil_radius: f64,
    pub ring_amplitude: f64,
    pub ring_width: f64,
    pub interface_background: f64,
    pub inner_background: f64,
    #[serde(default)]
    pub emitters: Vec<EmitterSpec>,
    /// Sample Poisson counts; when false the expected image is returned.
    #[serde(default = "default_true")]
    pub noise: bool,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    /// 80×80 map at the default pixel size with a 3.5 µm SIL centred in it.
    pub fn sil_scene(seed: u64) -> Self {
        let rows = 80;
        let px = DEFAULT_PIXEL_SIZE_UM;
        let mid = 0.5 * (rows - 1) as f64 * px;
        Self {
            rows,
            cols: rows,
            pixel_size: px,
            sil_center: Point2::new(mid, mid),
            sil_radius: 3.5,
            ring_amplitude: 100.0,
            ring_width: 0.2,
            interface_background: 40.0,
            inner_background: 20.0,
            emitters: Vec::new(),
            noise: true,
            label: "synthetic".into(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        check(self.rows > 0 && self.cols > 0, || "map must have at least one pixel".into())?;
        positive("pixel_size", self.pixel_size)?;
        positive("sil_radius", self.sil_radius)?;
        positive("ring_width", self.ring_width)?;
        non_negative("ring_amplitude", self.ring_amplitude)?;
        non_negative("interface_background", self.interface_background)?;
        non_negative("inner_background", self.inner_background)?;
        check(self.sil_center.x.is_finite() && self.sil_center.y.is_finite(), || "sil_center must be finite".into())?;
        for (i, e) in self.emitters.iter().enumerate() {
            check(e.x.is_finite() && e.y.is_finite() && e.z.is_finite(), || {
                format!("emitter {i} position must be finite")
            })?;
            non_negative(&format!("emitter {i} peak_counts"), e.peak_counts)?;
            positive(&format!("emitter {i} sigma_lat"), e.sigma_lat)?;
            positive(&format!("emitter {i} sigma_ax"), e.sigma_ax)?;
        }
        Ok(())
    }

    /// Noise-free count level at a point.
    pub fn expected(&self, p: Point2) -> f64 {
        let r = (p - self.sil_center).norm();
        let z = (r - self.sil_radius) / self.ring_width;
        let mut value = self.inner_background
            + (self.interface_background - self.inner_background) * normal_cdf(z)
            + self.ring_amplitude * (-0.5 * z * z).exp();
        for e in &self.emitters {
            let d = p - Point2::new(e.x, e.y);
            let lat = (d.x * d.x + d.y * d.y) / (e.sigma_lat * e.sigma_lat);
            let ax = e.z * e.z / (e.sigma_ax * e.sigma_ax);
            value += e.peak_counts * (-0.5 * (lat + ax)).exp();
        }
        value
    }
}

/// Renders a scene. Row `r` draws from stream `r` of the seed.
pub fn render_map(spec: &SceneSpec) -> Result<PlMap, SimError> {
    spec.validate()?;
    let (rows, cols, px) = (spec.rows, spec.cols, spec.pixel_size);
    let grid: Vec<Vec<f64>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(spec.seed, r as u64);
            (0..cols)
                .map(|c| {
                    let mean = spec.expected(Point2::new(c as f64 * px, r as f64 * px));
                    if spec.noise {
                        poisson_draw(mean, &mut rng)
                    } else {
                        mean
                    }
                })
                .collect()
        })
        .collect();
    PlMap::from_grid(&grid, px, spec.label.clone()).map_err(|e| SimError::SpecInvalid(e.to_string()))
}

/// Single emitter scanned in the focal plane (xy) and in depth (xz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfSpec {
    pub lateral_fwhm_nm: f64,
    pub axial_fwhm_nm: f64,
    pub peak_counts: f64,
    #[serde(default)]
    pub background: f64,
    pub pixel_size: f64,
    /// The spot sits at the centre of a square scan of this half width, µm.
    pub half_extent: f64,
    #[serde(default = "default_true")]
    pub noise: bool,
    #[serde(default)]
    pub seed: u64,
}

/// Returns the (xy, xz) scans. In the xz scan rows run along depth.
pub fn render_psf_maps(spec: &PsfSpec) -> Result<(PlMap, PlMap), SimError> {
    positive("lateral_fwhm_nm", spec.lateral_fwhm_nm)?;
    positive("axial_fwhm_nm", spec.axial_fwhm_nm)?;
    positive("pixel_size", spec.pixel_size)?;
    positive("half_extent", spec.half_extent)?;
    non_negative("peak_counts", spec.peak_counts)?;
    non_negative("background", spec.background)?;
    let n = 2 * (spec.half_extent / spec.pixel_size).round() as usize + 1;
    check(n >= 5, || "scan must span at least five pixels".into())?;
    let mid = ((n - 1) / 2) as f64 * spec.pixel_size;
    let sigma_lat = spec.lateral_fwhm_nm * 1e-3 / FWHM_PER_SIGMA;
    let sigma_ax = spec.axial_fwhm_nm * 1e-3 / FWHM_PER_SIGMA;
    let scene = |sigma_y: f64, stream_base: u64| {
        let grid: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|r| {
                let mut rng = substream(spec.seed, stream_base + r as u64);
                let dy = r as f64 * spec.pixel_size - mid;
                (0..n)
                    .map(|c| {
                        let dx = c as f64 * spec.pixel_size - mid;
                        let mean = spec.background
                            + spec.peak_counts
                                * (-0.5 * (dx * dx / (sigma_lat * sigma_lat) + dy * dy / (sigma_y * sigma_y))).exp();
                        if spec.noise {
                            poisson_draw(mean, &mut rng)
                        } else {
                            mean
                        }
                    })
                    .collect()
            })
            .collect();
        PlMap::from_grid(&grid, spec.pixel_size, "psf").map_err(|e| SimError::SpecInvalid(e.to_string()))
    };
    Ok((scene(sigma_lat, 0)?, scene(sigma_ax, n as u64)?))
}

/// Two-detector correlation experiment: `n_emitters` identical antibunched
/// sources plus Poissonian background behind a 50/50 beamsplitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HbtSpec {
    pub n_emitters: u32,
    /// Detected rate of each emitter, counts/s, summed over both detectors.
    pub emitter_rate: f64,
    /// Background rate, counts/s, summed over both detectors.
    pub background_rate: f64,
    /// Dead time of each emitter after a photon, ns.
    pub antibunching_ns: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
}

impl HbtSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        non_negative("emitter_rate", self.emitter_rate)?;
        non_negative("background_rate", self.background_rate)?;
        non_negative("antibunching_ns", self.antibunching_ns)?;
        positive("duration_s", self.duration_s)?;
        check(self.duration_s * 1e12 < u64::MAX as f64, || "duration_s is too long".into())?;
        check(self.emitter_rate * self.antibunching_ns * 1e-9 < 1.0, || {
            "emitter_rate × antibunching time must be below 1".into()
        })?;
        Ok(())
    }
}

/// Each emitter is a renewal process with interval `τ_d + Exp(λ₀)`, where
/// `λ₀ = R/(1 − R·τ_d)` so the mean rate equals the spec rate and no two
/// photons of one emitter are closer than `τ_d`. Stream 0 of the seed drives
/// the background, stream `i + 1` emitter `i`.
pub fn simulate_hbt(spec: &HbtSpec) -> Result<PhotonStream, SimError> {
    spec.validate()?;
    let duration_ps = (spec.duration_s * 1e12).round() as u64;
    let dead_ps = spec.antibunching_ns * 1e3;
    let mut events: Vec<PhotonEvent> = (0..=spec.n_emitters as u64)
        .into_par_iter()
        .flat_map_iter(|source| {
            let mut rng = substream(spec.seed, source);
            let (rate, dead) = if source == 0 { (spec.background_rate, 0.0) } else { (spec.emitter_rate, dead_ps) };
            let mut out = Vec::new();
            if rate > 0.0 {
                let rate_ps = rate * 1e-12;
                let free = Exp::new(rate_ps / (1.0 - rate_ps * dead)).expect("rate is positive");
                // Start in the stationary state: first gap is a plain free wait.
                let mut t = free.sample(&mut rng);
                while t < duration_ps as f64 {
                    out.push(PhotonEvent::new(rng.random_range(0..2u8), t as u64));
                    t += dead + free.sample(&mut rng);
                }
            }
            out
        })
        .collect();
    events.sort_unstable();
    PhotonStream::new(events, duration_ps).map_err(|e| SimError::SpecInvalid(e.to_string()))
}

/// Number of emitters created at each of `n_sites` laser-written sites.
pub fn simulate_write_array(n_sites: usize, lambda: f64, seed: u64) -> Result<Vec<u32>, SimError> {
    non_negative("lambda", lambda)?;
    let mut rng = substream(seed, 0);
    if lambda == 0.0 {
        return Ok(vec![0; n_sites]);
    }
    let dist = Poisson::new(lambda).map_err(|e| SimError::SpecInvalid(e.to_string()))?;
    Ok((0..n_sites).map(|_| dist.sample(&mut rng) as u32).collect())
}

/// Saturation-model values at `energies_nj` with multiplicative Gaussian
/// noise of relative size `noise_fraction`. Each sample carries
/// `σ = noise_fraction·I_true` when noise is on.
pub fn simulate_saturation_sweep(
    params: &SaturationFitParams,
    energies_nj: &[f64],
    noise_fraction: f64,
    seed: u64,
) -> Result<Vec<SaturationSample>, SimError> {
    non_negative("noise_fraction", noise_fraction)?;
    positive("amplitude", params.amplitude)?;
    positive("exponent", params.exponent)?;
    non_negative("saturation_param", params.saturation_param)?;
    for &e in energies_nj {
        positive("energy", e)?;
    }
    let mut rng = substream(seed, 0);
    Ok(energies_nj
        .iter()
        .map(|&e| {
            let truth = saturation_model(e, params);
            let z: f64 = rng.sample(StandardNormal);
            if noise_fraction > 0.0 {
                SaturationSample::new(e, truth * (1.0 + noise_fraction * z), Some(noise_fraction * truth))
            } else {
                SaturationSample::new(e, truth, None)
            }
        })
        .collect())
}
