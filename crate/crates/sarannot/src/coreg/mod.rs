//! Optical-to-TomoSAR co-registration: rasterize both point clouds,
//! correlate Sobel edge images for a coarse planimetric shift and height
//! histograms for the vertical shift, drop facade points, refine with
//! Huber-weighted ICP, then project optical labels onto the SAR cloud.

mod align;
mod icp;
mod raster;

pub use align::{
    coarse_align_xy, coarse_align_z, remove_facade_points, xy_shift_to_world, XyShift,
};
pub use icp::{robust_icp, GridIndex3, IcpParams, IcpResult, RigidTransform3};
pub use raster::{
    rasterize_density, rasterize_mean_height, sobel_edges, DensityRaster, EdgeRaster,
    HeightRaster,
};

use crate::cloud::{PointClass, PointCloud};
use crate::raster::GeoRaster;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum CoregError {
    #[error("cell size must be positive, got {0}")]
    BadCellSize(f64),
    #[error("histogram bin width must be positive, got {0}")]
    BadBinWidth(f64),
    #[error("spread threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("raster must be at least 3x3 for edge extraction, got {0}x{1}")]
    RasterTooSmall(usize, usize),
    #[error("edge rasters use different cell sizes: {0} vs {1}")]
    CellSizeMismatch(f64, f64),
    #[error("correlation is degenerate: no shift with variance in the overlap")]
    DegenerateCorrelation,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("need at least 3 source points, got {0}")]
    TooFewPoints(usize),
    #[error("rotation matrix is not orthonormal with determinant +1")]
    NotARotation,
    #[error("source geometry is degenerate (collinear correspondences)")]
    DegenerateGeometry,
    #[error("invalid ICP parameter: {0}")]
    BadIcpParams(String),
}

/// Maps every cloud point into the label raster's frame and assigns the
/// covering cell's class: 0 reads as non-building, any other value as
/// building, and points outside the raster become unknown.
pub fn transfer_labels(
    label_raster: &GeoRaster<u8>,
    cloud: &PointCloud,
    transform: &RigidTransform3,
) -> Result<PointCloud, CoregError> {
    transform.validate()?;
    let points = cloud
        .points
        .par_chunks(crate::label::POINT_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|pt| {
                    let moved = transform.apply_point(&pt.position);
                    let class = match label_raster.cell_of(moved.easting, moved.northing) {
                        Some((col, row)) => {
                            if *label_raster.raster.get(col, row) == 0 {
                                PointClass::NonBuilding
                            } else {
                                PointClass::Building
                            }
                        }
                        None => PointClass::Unknown,
                    };
                    let mut labeled = *pt;
                    labeled.class = Some(class);
                    labeled
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat();
    Ok(PointCloud::new(points))
}
