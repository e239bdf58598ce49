//! Shared domain types.
//!
//! Every type here is validated on construction and immutable afterwards, so
//! the analysis modules can assume the invariants hold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default confocal map step size in µm.
pub const DEFAULT_PIXEL_SIZE_UM: f64 = 0.13;

/// Electron rest mass in kg.
pub const ELECTRON_MASS_KG: f64 = 9.109_383_701_5e-31;
/// Elementary charge in C.
pub const ELEMENTARY_CHARGE_C: f64 = 1.602_176_634e-19;
/// Vacuum permittivity in F/m.
pub const VACUUM_PERMITTIVITY_F_PER_M: f64 = 8.854_187_812_8e-12;
/// Speed of light in m/s.
pub const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("grid is empty")]
    EmptyGrid,
    #[error("grid row {row} has {found} entries, expected {expected}")]
    NonRectangular { row: usize, expected: usize, found: usize },
    #[error("negative count {value} at row {row}, col {col}")]
    NegativeCount { row: usize, col: usize, value: f64 },
    #[error("non-finite count at row {row}, col {col}")]
    NonFiniteCount { row: usize, col: usize },
    #[error("pixel size must be positive and finite, got {0}")]
    NonPositivePixelSize(f64),
    #[error("channel {channel} out of range at event {index} (expected 0 or 1)")]
    ChannelOutOfRange { index: usize, channel: u8 },
    #[error("event {index} at {time_ps} ps is earlier than its predecessor")]
    UnsortedEvents { index: usize, time_ps: u64 },
    #[error("event {index} at {time_ps} ps lies beyond the duration {duration_ps} ps")]
    EventAfterDuration { index: usize, time_ps: u64, duration_ps: u64 },
    #[error("{name} must be strictly positive and finite, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("{name} must be non-negative and finite, got {value}")]
    NegativeParameter { name: &'static str, value: f64 },
    #[error("confidence bounds out of order: {low} <= {value} <= {high} violated")]
    BoundsOutOfOrder { low: f64, value: f64, high: f64 },
    #[error("{n_empty} empty sites exceed {n_sites} total")]
    EmptyExceedsTotal { n_sites: u32, n_empty: u32 },
}

pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<f64, ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(ModelError::NonPositiveParameter { name, value })
    }
}

pub(crate) fn require_non_negative(name: &'static str, value: f64) -> Result<f64, ModelError> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(ModelError::NegativeParameter { name, value })
    }
}

/// A point or displacement in the map plane, µm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

/// A photoluminescence map: a `rows × cols` grid of non-negative counts.
///
/// Pixel `(row, col)` is centred at `x = col · pixel_size`, `y = row · pixel_size`
/// (µm), so the map origin is the centre of the first pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlMap {
    rows: usize,
    cols: usize,
    pixel_size: f64,
    counts: Vec<f64>,
    label: String,
}

impl PlMap {
    /// Builds a map from a row-major grid of counts.
    pub fn from_grid(grid: &[Vec<f64>], pixel_size: f64, label: impl Into<String>) -> Result<Self, ModelError> {
        let rows = grid.len();
        let cols = grid.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return Err(ModelError::EmptyGrid);
        }
        for (row, line) in grid.iter().enumerate() {
            if line.len() != cols {
                return Err(ModelError::NonRectangular { row, expected: cols, found: line.len() });
            }
        }
        let counts = grid.iter().flatten().copied().collect();
        Self::from_vec(rows, cols, pixel_size, counts, label)
    }

    /// Builds a map from a flat row-major vector.
    pub fn from_vec(
        rows: usize,
        cols: usize,
        pixel_size: f64,
        counts: Vec<f64>,
        label: impl Into<String>,
    ) -> Result<Self, ModelError> {
        if rows == 0 || cols == 0 {
            return Err(ModelError::EmptyGrid);
        }
        if counts.len() != rows * cols {
            return Err(ModelError::NonRectangular {
                row: counts.len() / cols,
                expected: rows * cols,
                found: counts.len(),
            });
        }
        if !(pixel_size.is_finite() && pixel_size > 0.0) {
            return Err(ModelError::NonPositivePixelSize(pixel_size));
        }
        for (i, &value) in counts.iter().enumerate() {
            let (row, col) = (i / cols, i % cols);
            if !value.is_finite() {
                return Err(ModelError::NonFiniteCount { row, col });
            }
            if value < 0.0 {
                return Err(ModelError::NegativeCount { row, col, value });
            }
        }
        Ok(Self { rows, cols, pixel_size, counts, label: label.into() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Pixel pitch in µm.
    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Row-major counts.
    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.counts[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.counts[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    /// Centre of pixel `(row, col)` in µm.
    pub fn position(&self, row: usize, col: usize) -> Point2 {
        Point2::new(col as f64 * self.pixel_size, row as f64 * self.pixel_size)
    }

    /// Returns a copy with every count multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, ModelError> {
        let counts = self.counts.iter().map(|c| c * factor).collect();
        Self::from_vec(self.rows, self.cols, self.pixel_size, counts, self.label.clone())
    }
}

/// One detection event: detector channel and arrival time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PhotonEvent {
    pub time_ps: u64,
    pub channel: u8,
}

impl PhotonEvent {
    pub const fn new(channel: u8, time_ps: u64) -> Self {
        Self { time_ps, channel }
    }
}

/// Time-tagged two-channel detection record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhotonStream {
    events: Vec<PhotonEvent>,
    duration_ps: u64,
}

impl PhotonStream {
    /// Validates an already sorted event list.
    pub fn new(events: Vec<PhotonEvent>, duration_ps: u64) -> Result<Self, ModelError> {
        let mut previous = 0u64;
        for (index, event) in events.iter().enumerate() {
            if event.channel > 1 {
                return Err(ModelError::ChannelOutOfRange { index, channel: event.channel });
            }
            if event.time_ps < previous {
                return Err(ModelError::UnsortedEvents { index, time_ps: event.time_ps });
            }
            if event.time_ps > duration_ps {
                return Err(ModelError::EventAfterDuration { index, time_ps: event.time_ps, duration_ps });
            }
            previous = event.time_ps;
        }
        Ok(Self { events, duration_ps })
    }

    /// Sorts by time (channel breaks ties), then validates.
    pub fn from_unsorted(mut events: Vec<PhotonEvent>, duration_ps: u64) -> Result<Self, ModelError> {
        events.sort_unstable();
        Self::new(events, duration_ps)
    }

    pub fn events(&self) -> &[PhotonEvent] {
        &self.events
    }

    pub fn duration_ps(&self) -> u64 {
        self.duration_ps
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Arrival times on one channel, ascending.
    pub fn channel_times(&self, channel: u8) -> Vec<u64> {
        self.events.iter().filter(|e| e.channel == channel).map(|e| e.time_ps).collect()
    }
}

/// Material and laser constants entering the multiphoton-ionization threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialConstants {
    /// Effective carrier mass, kg.
    pub effective_mass: f64,
    pub refractive_index: f64,
    /// Band gap, eV.
    pub bandgap_ev: f64,
    /// Laser angular frequency, rad/s.
    pub laser_angular_frequency: f64,
    /// C.
    pub electron_charge: f64,
    /// F/m.
    pub vacuum_permittivity: f64,
    /// m/s.
    pub speed_of_light: f64,
}

impl MaterialConstants {
    pub fn new(
        effective_mass: f64,
        refractive_index: f64,
        bandgap_ev: f64,
        laser_angular_frequency: f64,
        electron_charge: f64,
        vacuum_permittivity: f64,
        speed_of_light: f64,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            effective_mass: require_positive("effective_mass", effective_mass)?,
            refractive_index: require_positive("refractive_index", refractive_index)?,
            bandgap_ev: require_positive("bandgap_ev", bandgap_ev)?,
            laser_angular_frequency: require_positive("laser_angular_frequency", laser_angular_frequency)?,
            electron_charge: require_positive("electron_charge", electron_charge)?,
            vacuum_permittivity: require_positive("vacuum_permittivity", vacuum_permittivity)?,
            speed_of_light: require_positive("speed_of_light", speed_of_light)?,
        })
    }

    /// 4H-SiC written with a 790 nm femtosecond laser: m = 0.37 mₑ, n = 2.6,
    /// E_g = 3.23 eV, ω = 2.4×10¹⁵ rad/s, CODATA values for e, ε₀ and c.
    pub fn sic_4h() -> Self {
        Self {
            effective_mass: 0.37 * ELECTRON_MASS_KG,
            refractive_index: 2.6,
            bandgap_ev: 3.23,
            laser_angular_frequency: 2.4e15,
            electron_charge: ELEMENTARY_CHARGE_C,
            vacuum_permittivity: VACUUM_PERMITTIVITY_F_PER_M,
            speed_of_light: SPEED_OF_LIGHT_M_PER_S,
        }
    }
}

impl Default for MaterialConstants {
    fn default() -> Self {
        Self::sic_4h()
    }
}

/// Focused writing beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    /// m.
    pub beam_waist: f64,
    /// s.
    pub pulse_duration: f64,
}

impl BeamParams {
    pub fn new(beam_waist: f64, pulse_duration: f64) -> Result<Self, ModelError> {
        Ok(Self {
            beam_waist: require_positive("beam_waist", beam_waist)?,
            pulse_duration: require_positive("pulse_duration", pulse_duration)?,
        })
    }
}

/// Parameters of `I(E) = a·Eⁿ / (1 + k·Eⁿ)` (E in nJ) with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationFitParams {
    pub amplitude: f64,
    pub exponent: f64,
    pub saturation_param: f64,
    pub amplitude_err: f64,
    pub exponent_err: f64,
    pub saturation_param_err: f64,
    /// Weighted residual sum of squares of the fit (0 for hand-built params).
    pub rss: f64,
}

impl SaturationFitParams {
    pub fn new(amplitude: f64, exponent: f64, saturation_param: f64) -> Result<Self, ModelError> {
        Ok(Self {
            amplitude: require_positive("amplitude", amplitude)?,
            exponent: require_positive("exponent", exponent)?,
            saturation_param: require_non_negative("saturation_param", saturation_param)?,
            amplitude_err: 0.0,
            exponent_err: 0.0,
            saturation_param_err: 0.0,
            rss: 0.0,
        })
    }

    /// Asymptotic count rate `a/k`; infinite when `k = 0`.
    pub fn plateau(&self) -> f64 {
        self.amplitude / self.saturation_param
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SilMethod {
    Circle,
    Ellipse,
    Profile,
}

impl SilMethod {
    pub const ALL: [SilMethod; 3] = [SilMethod::Circle, SilMethod::Ellipse, SilMethod::Profile];

    pub fn name(self) -> &'static str {
        match self {
            SilMethod::Circle => "circle",
            SilMethod::Ellipse => "ellipse",
            SilMethod::Profile => "profile",
        }
    }
}

/// Located solid-immersion-lens outline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilFit {
    pub center: Point2,
    pub radius: f64,
    pub method: SilMethod,
    /// RMS misfit relative to the radius.
    pub residual: f64,
    /// Set by the ellipse method only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eccentricity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmitterMethod {
    Gaussian2d,
    Circle,
}

/// Located emitter spot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterFit {
    pub center: Point2,
    /// Gaussian standard deviations (σx, σy), µm.
    pub widths: (f64, f64),
    pub amplitude: f64,
    pub background: f64,
    pub method: EmitterMethod,
}

/// Poisson expectation value of emitters per written site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YieldEstimate {
    pub lambda: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
    pub n_sites: u32,
    pub n_empty: u32,
}

impl YieldEstimate {
    pub fn new(
        lambda: f64,
        ci_low: f64,
        ci_high: f64,
        confidence: f64,
        n_sites: u32,
        n_empty: u32,
    ) -> Result<Self, ModelError> {
        if n_empty > n_sites {
            return Err(ModelError::EmptyExceedsTotal { n_sites, n_empty });
        }
        if !(0.0 <= ci_low && ci_low <= lambda && lambda <= ci_high) {
            return Err(ModelError::BoundsOutOfOrder { low: ci_low, value: lambda, high: ci_high });
        }
        Ok(Self { lambda, ci_low, ci_high, confidence, n_sites, n_empty })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayleighFit {
    /// Scale parameter, µm.
    pub sigma: f64,
    pub n_samples: usize,
    pub log_likelihood: f64,
}
