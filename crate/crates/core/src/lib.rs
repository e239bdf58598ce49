//! Analysis toolkit for laser-written colour centres registered to solid
//! immersion lenses (SILs) in 4H-SiC.
//!
//! - [`physics`]: ionisation threshold and the pulse-energy saturation model.
//! - [`yield_stats`]: Poisson creation yield, pulse-energy planning, placement spread.
//! - [`photon_stats`]: g² histograms, background correction, power saturation.
//! - [`image`]: SIL centre detection, emitter localisation, PSF widths.
//! - [`spectral`]: zero-phonon-line identification.
//! - [`simulator`]: seeded synthetic data for all of the above.
//! - [`io`]: file formats and the JSON report envelope.

pub mod image;
pub mod io;
pub mod lm;
pub mod model;
pub mod photon_stats;
pub mod physics;
pub mod simulator;
pub mod spectral;
pub mod yield_stats;

pub use model::{
    BeamParams, EmitterFit, EmitterMethod, MaterialConstants, ModelError, PhotonEvent, PhotonStream, PlMap, Point2,
    RayleighFit, SaturationFitParams, SilFit, SilMethod, YieldEstimate,
};
