//! SAR annotation toolkit.
//!
//! Builds labelled building/non-building SAR datasets from tomographic
//! point clouds and auxiliary map data, end to end:
//!
//! 1. **tomosim** – TomoSAR forward model, inversion (beamforming and
//!    ridge-regularized least squares) and a synthetic urban-scene
//!    generator with per-point ground truth.
//! 2. **sargeom** – zero-Doppler acquisition geometry: world points to
//!    azimuth/range coordinates and SAR pixels, including layover.
//! 3. **label** – ray-casting point-in-polygon classification against
//!    building footprints, back-projection to a binary SAR mask and
//!    morphological densification.
//! 4. **coreg** – optical/TomoSAR cloud co-registration: height and
//!    density rasters, Sobel edges, cross-correlation coarse alignment,
//!    facade removal, Huber-weighted ICP and label transfer.
//! 5. **densecrf** – fully connected CRF with Potts compatibility and
//!    mean-field inference for refining per-pixel unary scores.
//! 6. **eval** – confusion-matrix metrics: precision/recall, pixel
//!    accuracy, mean accuracy, IU variants, false-alarm and quality rates.
//! 7. **dataprep** – overlapping patch extraction, dihedral augmentation
//!    and train/test splits.
//!
//! The `sarannot` binary drives the same pipeline from a single
//! line-oriented config file; see `config` and `commands`.

pub mod cloud;
pub mod commands;
pub mod config;
pub mod coreg;
pub mod dataprep;
pub mod densecrf;
pub mod eval;
pub mod io;
pub mod label;
pub mod raster;
pub mod sargeom;
pub mod tomosim;
