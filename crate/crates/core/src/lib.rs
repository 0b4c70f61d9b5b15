//! Multi-layer residual sparsifying transform (MRST) models for low-dose CT.
//!
//! The crate covers the full pipeline on synthetic 2D phantoms:
//!
//! * [`imaging`] — image container and overlapping-patch operators,
//! * [`mrst`] — MRST model learning by exact block coordinate descent,
//! * [`ctsim`] — parallel-beam projector, low-dose simulation and FBP,
//! * [`recon`] — PWLS reconstruction with an OS-LALM image update,
//! * [`metrics`] — RMSE / PSNR / SSIM over a circular region of interest,
//! * [`io`] — bit-exact file formats for images, sinograms and models.
//!
//! All numerics are f64; every operation is deterministic given its inputs
//! and an explicit RNG seed where randomness is involved.

pub mod ctsim;
pub mod error;
pub mod imaging;
pub mod io;
pub mod metrics;
pub mod mrst;
pub mod recon;

pub use error::{Error, Result};
