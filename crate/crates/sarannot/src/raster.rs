//! Row-major 2-D grids used throughout the pipeline: binary masks, height
//! and density fields, edge magnitudes, label and unary rasters.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum RasterError {
    #[error("raster dimensions {0}x{1} and {2}x{3} do not match")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("raster must be at least {0}x{0}, got {1}x{2}")]
    TooSmall(usize, usize, usize),
}

/// Row-major 2-D grid. `(col, row)` indexing, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Raster<T> {
    /// Builds a raster from row-major data. Panics if the length is wrong.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "raster data length mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    /// Clamped accessor used for replicate-padding stencils.
    #[inline]
    pub fn get_clamped(&self, col: isize, row: isize) -> &T {
        let c = col.clamp(0, self.width as isize - 1) as usize;
        let r = row.clamp(0, self.height as isize - 1) as usize;
        self.get(c, r)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn same_dims<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U, F: FnMut(&T) -> U>(&self, f: F) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl Raster<u8> {
    /// Number of nonzero pixels.
    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// A `Raster` georeferenced in the UTM E/N plane.
///
/// Cell `(col, row)` covers `[origin_e + col*cell, origin_e + (col+1)*cell)`
/// in easting and `[origin_n + row*cell, ...)` in northing; the raster is
/// stored north-up with row 0 at `origin_n` (the *minimum* northing), which
/// keeps point binning a pure floor operation.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoRaster<T> {
    pub raster: Raster<T>,
    pub origin_e: f64,
    pub origin_n: f64,
    pub cell_size: f64,
}

impl<T> GeoRaster<T> {
    /// Maps a UTM position to a cell index, or `None` outside the frame.
    pub fn cell_of(&self, easting: f64, northing: f64) -> Option<(usize, usize)> {
        let c = ((easting - self.origin_e) / self.cell_size).floor();
        let r = ((northing - self.origin_n) / self.cell_size).floor();
        if c < 0.0 || r < 0.0 {
            return None;
        }
        let (c, r) = (c as usize, r as usize);
        if c >= self.raster.width() || r >= self.raster.height() {
            return None;
        }
        Some((c, r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let mut r = Raster::filled(4, 3, 0u8);
        r.set(3, 2, 7);
        assert_eq!(*r.get(3, 2), 7);
        assert_eq!(r.data()[2 * 4 + 3], 7);
    }

    #[test]
    fn clamped_access() {
        let r = Raster::from_vec(2, 2, vec![1u8, 2, 3, 4]);
        assert_eq!(*r.get_clamped(-5, 0), 1);
        assert_eq!(*r.get_clamped(9, 9), 4);
    }

    #[test]
    fn geo_cell_lookup() {
        let g = GeoRaster {
            raster: Raster::filled(10, 5, 0u8),
            origin_e: 100.0,
            origin_n: 200.0,
            cell_size: 2.0,
        };
        assert_eq!(g.cell_of(100.0, 200.0), Some((0, 0)));
        assert_eq!(g.cell_of(119.9, 209.9), Some((9, 4)));
        assert_eq!(g.cell_of(120.0, 200.0), None);
        assert_eq!(g.cell_of(99.9, 200.0), None);
    }
}
