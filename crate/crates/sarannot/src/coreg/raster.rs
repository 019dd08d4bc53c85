//! Cloud-to-raster aggregation (mean height, point density) and Sobel
//! edge extraction on the resulting grids.

use super::CoregError;
use crate::cloud::PointCloud;
use crate::raster::{GeoRaster, Raster};
use rayon::prelude::*;

/// Per-cell mean point height; cells without points are invalid and
/// excluded from every statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightRaster {
    pub heights: GeoRaster<f64>,
    /// 1 where the cell received at least one point.
    pub valid: Raster<u8>,
}

/// Per-cell point counts on the same frame as `HeightRaster`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRaster {
    pub counts: GeoRaster<u32>,
}

impl DensityRaster {
    /// Counts as floats, for edge extraction; every cell is valid.
    pub fn to_values(&self) -> GeoRaster<f64> {
        GeoRaster {
            raster: self.counts.raster.map(|&c| c as f64),
            origin_e: self.counts.origin_e,
            origin_n: self.counts.origin_n,
            cell_size: self.counts.cell_size,
        }
    }
}

/// Frame covering the cloud's bounding box; the max corner falls in the
/// last cell (half-open binning, one extra cell).
fn frame_of(cloud: &PointCloud, cell_size: f64) -> Option<(f64, f64, usize, usize)> {
    let ((min_e, min_n), (max_e, max_n)) = cloud.bbox_en()?;
    let width = ((max_e - min_e) / cell_size).floor() as usize + 1;
    let height = ((max_n - min_n) / cell_size).floor() as usize + 1;
    Some((min_e, min_n, width, height))
}

/// Flat cell indices per point, in point order; the parallel part is
/// per-point arithmetic only, so accumulation order stays fixed.
fn cell_indices(
    cloud: &PointCloud,
    origin_e: f64,
    origin_n: f64,
    cell_size: f64,
    width: usize,
    height: usize,
) -> Vec<Option<usize>> {
    cloud
        .points
        .par_chunks(crate::label::POINT_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|p| {
                    let col = ((p.position.easting - origin_e) / cell_size).floor();
                    let row = ((p.position.northing - origin_n) / cell_size).floor();
                    if col < 0.0 || row < 0.0 {
                        return None;
                    }
                    let (col, row) = (col as usize, row as usize);
                    (col < width && row < height).then_some(row * width + col)
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat()
}

/// Arithmetic mean of point heights per cell over the cloud's bounding
/// box. An empty cloud yields an empty, all-invalid raster.
pub fn rasterize_mean_height(
    cloud: &PointCloud,
    cell_size: f64,
) -> Result<HeightRaster, CoregError> {
    if !(cell_size > 0.0) {
        return Err(CoregError::BadCellSize(cell_size));
    }
    let Some((origin_e, origin_n, width, height)) = frame_of(cloud, cell_size) else {
        return Ok(HeightRaster {
            heights: GeoRaster {
                raster: Raster::filled(0, 0, 0.0),
                origin_e: 0.0,
                origin_n: 0.0,
                cell_size,
            },
            valid: Raster::filled(0, 0, 0),
        });
    };
    let cells = cell_indices(cloud, origin_e, origin_n, cell_size, width, height);
    let mut sum = vec![0.0f64; width * height];
    let mut count = vec![0u32; width * height];
    for (p, cell) in cloud.points.iter().zip(&cells) {
        if let Some(idx) = cell {
            sum[*idx] += p.position.height;
            count[*idx] += 1;
        }
    }
    let mut heights = Raster::filled(width, height, 0.0f64);
    let mut valid = Raster::filled(width, height, 0u8);
    for idx in 0..sum.len() {
        if count[idx] > 0 {
            heights.data_mut()[idx] = sum[idx] / count[idx] as f64;
            valid.data_mut()[idx] = 1;
        }
    }
    Ok(HeightRaster {
        heights: GeoRaster {
            raster: heights,
            origin_e,
            origin_n,
            cell_size,
        },
        valid,
    })
}

/// Point count per cell on the same frame as `rasterize_mean_height`.
pub fn rasterize_density(cloud: &PointCloud, cell_size: f64) -> Result<DensityRaster, CoregError> {
    if !(cell_size > 0.0) {
        return Err(CoregError::BadCellSize(cell_size));
    }
    let Some((origin_e, origin_n, width, height)) = frame_of(cloud, cell_size) else {
        return Ok(DensityRaster {
            counts: GeoRaster {
                raster: Raster::filled(0, 0, 0),
                origin_e: 0.0,
                origin_n: 0.0,
                cell_size,
            },
        });
    };
    let cells = cell_indices(cloud, origin_e, origin_n, cell_size, width, height);
    let mut counts = Raster::filled(width, height, 0u32);
    for cell in cells.into_iter().flatten() {
        counts.data_mut()[cell] += 1;
    }
    Ok(DensityRaster {
        counts: GeoRaster {
            raster: counts,
            origin_e,
            origin_n,
            cell_size,
        },
    })
}

/// Sobel edge magnitudes with a per-cell validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRaster {
    pub magnitude: GeoRaster<f64>,
    pub valid: Raster<u8>,
}

/// Gradient magnitude `sqrt(Gx^2 + Gy^2)` with the standard 3x3 Sobel
/// kernels. Borders replicate; invalid input cells contribute 0 to
/// their neighbors and have their own outputs flagged invalid.
pub fn sobel_edges(
    values: &GeoRaster<f64>,
    valid: Option<&Raster<u8>>,
) -> Result<EdgeRaster, CoregError> {
    let (w, h) = (values.raster.width(), values.raster.height());
    if w < 3 || h < 3 {
        return Err(CoregError::RasterTooSmall(w, h));
    }
    let value_at = |col: isize, row: isize| -> f64 {
        let c = col.clamp(0, w as isize - 1) as usize;
        let r = row.clamp(0, h as isize - 1) as usize;
        match valid {
            Some(v) if *v.get(c, r) == 0 => 0.0,
            _ => *values.raster.get(c, r),
        }
    };
    let rows: Vec<Vec<f64>> = (0..h as isize)
        .into_par_iter()
        .map(|row| {
            (0..w as isize)
                .map(|col| {
                    let mut gx = 0.0;
                    let mut gy = 0.0;
                    for dr in -1..=1isize {
                        for dc in -1..=1isize {
                            let v = value_at(col + dc, row + dr);
                            let wx = [-1.0, 0.0, 1.0][(dc + 1) as usize]
                                * [1.0, 2.0, 1.0][(dr + 1) as usize];
                            let wy = [1.0, 2.0, 1.0][(dc + 1) as usize]
                                * [-1.0, 0.0, 1.0][(dr + 1) as usize];
                            gx += wx * v;
                            gy += wy * v;
                        }
                    }
                    (gx * gx + gy * gy).sqrt()
                })
                .collect()
        })
        .collect();
    let magnitude = Raster::from_vec(w, h, rows.concat());
    let valid_out = match valid {
        Some(v) => v.clone(),
        None => Raster::filled(w, h, 1u8),
    };
    Ok(EdgeRaster {
        magnitude: GeoRaster {
            raster: magnitude,
            origin_e: values.origin_e,
            origin_n: values.origin_n,
            cell_size: values.cell_size,
        },
        valid: valid_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{TomoPoint, UtmPoint3};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn cloud_of(points: &[(f64, f64, f64)]) -> PointCloud {
        PointCloud::new(
            points
                .iter()
                .map(|&(e, n, h)| TomoPoint::new(UtmPoint3::new(e, n, h)))
                .collect(),
        )
    }

    #[test]
    fn rejects_non_positive_cell_size() {
        let c = cloud_of(&[(0.0, 0.0, 1.0)]);
        assert!(matches!(
            rasterize_mean_height(&c, 0.0),
            Err(CoregError::BadCellSize(_))
        ));
        assert!(matches!(
            rasterize_density(&c, -1.0),
            Err(CoregError::BadCellSize(_))
        ));
    }

    #[test]
    fn empty_cloud_gives_all_invalid_raster() {
        let hr = rasterize_mean_height(&PointCloud::default(), 1.0).unwrap();
        assert_eq!(hr.valid.count_set(), 0);
        assert!(hr.heights.raster.is_empty());
        let d = rasterize_density(&PointCloud::default(), 1.0).unwrap();
        assert!(d.counts.raster.is_empty());
    }

    #[test]
    fn single_point_and_in_cell_mean() {
        let hr = rasterize_mean_height(&cloud_of(&[(10.0, 20.0, 7.5)]), 2.0).unwrap();
        assert_eq!(hr.heights.raster.width(), 1);
        assert_eq!(hr.heights.raster.height(), 1);
        assert_eq!(hr.valid.count_set(), 1);
        assert_relative_eq!(*hr.heights.raster.get(0, 0), 7.5);

        let hr = rasterize_mean_height(
            &cloud_of(&[(0.2, 0.2, 2.0), (0.8, 0.8, 4.0), (3.5, 0.5, 9.0)]),
            1.0,
        )
        .unwrap();
        assert_relative_eq!(*hr.heights.raster.get(0, 0), 3.0);
        assert_relative_eq!(*hr.heights.raster.get(3, 0), 9.0);
        assert_eq!(*hr.valid.get(1, 0), 0);
    }

    #[test]
    fn planar_cloud_reproduces_the_plane() {
        // height = 0.5 * easting sampled on a fine jittered lattice
        let mut rng = StdRng::seed_from_u64(15);
        let k = 0.5;
        let mut pts = Vec::new();
        for i in 0..60 {
            for j in 0..60 {
                let e = i as f64 * 0.5 + rng.random_range(0.0..0.5);
                let n = j as f64 * 0.5 + rng.random_range(0.0..0.5);
                pts.push((e, n, k * e));
            }
        }
        let cell = 2.0;
        let hr = rasterize_mean_height(&cloud_of(&pts), cell).unwrap();
        // within each cell the plane spans k*cell in height; the mean
        // must stay within half that span of the cell-center value
        let half_span = k * cell / 2.0;
        for row in 0..hr.heights.raster.height() {
            for col in 0..hr.heights.raster.width() {
                if *hr.valid.get(col, row) == 0 {
                    continue;
                }
                let center_e = hr.heights.origin_e + (col as f64 + 0.5) * cell;
                let diff = (*hr.heights.raster.get(col, row) - k * center_e).abs();
                assert!(diff <= half_span + 1e-9, "cell ({col},{row}) off by {diff}");
            }
        }
    }

    #[test]
    fn density_counts_every_point_once() {
        let mut rng = StdRng::seed_from_u64(16);
        let pts: Vec<(f64, f64, f64)> = (0..5000)
            .map(|_| {
                (
                    rng.random_range(-30.0..30.0),
                    rng.random_range(-30.0..30.0),
                    rng.random_range(0.0..10.0),
                )
            })
            .collect();
        let d = rasterize_density(&cloud_of(&pts), 3.0).unwrap();
        let total: u64 = d.counts.raster.data().iter().map(|&c| c as u64).sum();
        assert_eq!(total, 5000);

        let d = rasterize_density(&cloud_of(&[(0.0, 0.0, 0.0); 7]), 1.0).unwrap();
        assert_eq!(*d.counts.raster.get(0, 0), 7);
    }

    fn plain(values: Raster<f64>) -> GeoRaster<f64> {
        GeoRaster {
            raster: values,
            origin_e: 0.0,
            origin_n: 0.0,
            cell_size: 1.0,
        }
    }

    #[test]
    fn sobel_rejects_small_rasters_and_zeroes_constants() {
        assert!(matches!(
            sobel_edges(&plain(Raster::filled(2, 3, 1.0)), None),
            Err(CoregError::RasterTooSmall(2, 3))
        ));
        let e = sobel_edges(&plain(Raster::filled(5, 5, 3.7)), None).unwrap();
        for v in e.magnitude.raster.data() {
            assert_relative_eq!(*v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn vertical_step_has_interior_magnitude_4h() {
        let h_step = 2.5;
        let mut r = Raster::filled(8, 6, 0.0);
        for row in 0..6 {
            for col in 4..8 {
                r.set(col, row, h_step);
            }
        }
        let e = sobel_edges(&plain(r), None).unwrap();
        for row in 1..5 {
            // columns adjacent to the step see the full 1-2-1 row sum
            assert_relative_eq!(*e.magnitude.raster.get(3, row), 4.0 * h_step, epsilon = 1e-12);
            assert_relative_eq!(*e.magnitude.raster.get(4, row), 4.0 * h_step, epsilon = 1e-12);
            // far from the step the response dies
            assert_relative_eq!(*e.magnitude.raster.get(1, row), 0.0, epsilon = 1e-12);
            assert_relative_eq!(*e.magnitude.raster.get(6, row), 0.0, epsilon = 1e-12);
        }
    }

    fn rot90(r: &Raster<f64>) -> Raster<f64> {
        // (col, row) -> (height-1-row, col)
        let (w, h) = (r.width(), r.height());
        let mut out = Raster::filled(h, w, 0.0);
        for row in 0..h {
            for col in 0..w {
                out.set(h - 1 - row, col, *r.get(col, row));
            }
        }
        out
    }

    #[test]
    fn rotating_the_input_rotates_the_edges() {
        let mut rng = StdRng::seed_from_u64(44);
        let r = Raster::from_vec(7, 5, (0..35).map(|_| rng.random_range(0.0..9.0)).collect());
        let edges = sobel_edges(&plain(r.clone()), None).unwrap();
        let edges_rot = sobel_edges(&plain(rot90(&r)), None).unwrap();
        let expected = rot90(&edges.magnitude.raster);
        for (a, b) in expected.data().iter().zip(edges_rot.magnitude.raster.data()) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn invalid_cells_are_zero_filled_and_flagged() {
        let mut values = Raster::filled(5, 5, 1.0);
        let mut valid = Raster::filled(5, 5, 1u8);
        values.set(2, 2, 100.0);
        valid.set(2, 2, 0);
        let e = sobel_edges(&plain(values), Some(&valid)).unwrap();
        // the hole is treated as 0, so its neighbors see a step from 1
        // to 0, not the bogus 100
        assert!(*e.magnitude.raster.get(1, 2) < 10.0);
        assert_eq!(*e.valid.get(2, 2), 0);
        assert_eq!(*e.valid.get(1, 2), 1);
    }
}
