//! Porosity deconstruction and stochastic reconstruction for voxelized
//! tomography of additively-manufactured parts.
//!
//! The crate splits the part-generation problem by scale:
//!
//! * [`voxel`] / [`metrics`] — voxel volumes, connected-component pore
//!   extraction, and per-pore geometric descriptors.
//! * [`surface`] — boundary unrolling to a (θ, z) radial-deviation map and
//!   re-rolling generated maps back into voxel masks.
//! * [`mst`] — 2D wavelet scattering transform: Morlet filter bank,
//!   first/second-order coefficient cascade, and the precision/separation
//!   metrics used for validation.
//! * [`autodiff`] / [`synth`] — a small reverse-mode tensor engine and the
//!   microcanonical surface synthesizer driven by scattering statistics.
//! * [`gan`] — a 3D convolutional GAN over centered pore cubes and the
//!   plausibility-filtered pore bank.
//! * [`spatial`] / [`assembler`] — binned conditional sampling of pore
//!   specifications and overlap-safe placement with a moving window.
//! * [`validate`] — univariate/bivariate distribution comparisons,
//!   projection scattering transforms, and report bundles.
//! * [`synthetic`] — a parametric ground-truth part generator used as the
//!   test substrate in place of proprietary CT data.

pub mod assembler;
pub mod autodiff;
pub mod gan;
pub mod grid;
pub mod metrics;
pub mod mst;
pub mod plot;
pub mod spatial;
pub mod surface;
pub mod synth;
pub mod synthetic;
pub mod validate;
pub mod voxel;

pub use grid::Grid2;
pub use voxel::{LabeledVolume, Phase, Pore, VoxelVolume};

/// Crate-wide error type; each module keeps its own error enum and this
/// umbrella exists for callers (the CLI) that cross module boundaries.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Voxel(#[from] voxel::VoxelError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Surface(#[from] surface::SurfaceError),
    #[error(transparent)]
    Mst(#[from] mst::MstError),
    #[error(transparent)]
    Autodiff(#[from] autodiff::AutodiffError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Gan(#[from] gan::GanError),
    #[error(transparent)]
    Spatial(#[from] spatial::SpatialError),
    #[error(transparent)]
    Assemble(#[from] assembler::AssembleError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
