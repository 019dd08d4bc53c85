//! Footprint-driven annotation: classify cloud points by ray casting
//! against building footprint polygons, back-project the building points
//! to SAR pixels and densify the result into a binary mask.

use crate::cloud::{PointClass, PointCloud};
use crate::raster::Raster;
use crate::sargeom::{project_to_sar, sar_to_pixel, GeometryError, SensorGeometry};
use rayon::prelude::*;
use thiserror::Error;

/// Binary building mask aligned to the `SensorGeometry` pixel grid
/// (0 = non-building, nonzero = building).
pub type BuildingMask = Raster<u8>;

/// Fixed work unit for parallel point loops; keeps chunk boundaries (and
/// therefore reduction order) independent of the worker count.
pub(crate) const POINT_CHUNK: usize = 16 * 1024;

#[derive(Error, Debug)]
pub enum PolygonError {
    #[error("polygon ring needs at least 3 vertices, got {0}")]
    DegenerateRing(usize),
    #[error("polygon ring has identical consecutive vertices at index {0}")]
    RepeatedVertex(usize),
}

/// Closed 2-D UTM ring set: one outer ring plus optional holes (inner
/// yards). Rings are stored without the repeated closing vertex; holes
/// must lie inside the outer ring.
#[derive(Debug, Clone, PartialEq)]
pub struct FootprintPolygon {
    pub outer: Vec<[f64; 2]>,
    pub holes: Vec<Vec<[f64; 2]>>,
}

impl FootprintPolygon {
    pub fn new(outer: Vec<[f64; 2]>) -> Self {
        Self {
            outer,
            holes: Vec::new(),
        }
    }

    pub fn with_holes(outer: Vec<[f64; 2]>, holes: Vec<Vec<[f64; 2]>>) -> Self {
        Self { outer, holes }
    }

    pub fn validate(&self) -> Result<(), PolygonError> {
        validate_ring(&self.outer)?;
        for hole in &self.holes {
            validate_ring(hole)?;
        }
        Ok(())
    }

    /// Axis-aligned bounding box of the outer ring.
    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.outer {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Enclosed area: |outer| minus the hole areas.
    pub fn area(&self) -> f64 {
        let outer = shoelace(&self.outer).abs();
        let holes: f64 = self.holes.iter().map(|h| shoelace(h).abs()).sum();
        (outer - holes).max(0.0)
    }

    /// Length of the outer ring.
    pub fn perimeter(&self) -> f64 {
        ring_edges(&self.outer)
            .map(|(a, b)| ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt())
            .sum()
    }
}

fn validate_ring(ring: &[[f64; 2]]) -> Result<(), PolygonError> {
    if ring.len() < 3 {
        return Err(PolygonError::DegenerateRing(ring.len()));
    }
    for i in 0..ring.len() {
        let j = (i + 1) % ring.len();
        if ring[i] == ring[j] {
            return Err(PolygonError::RepeatedVertex(i));
        }
    }
    Ok(())
}

fn shoelace(ring: &[[f64; 2]]) -> f64 {
    0.5 * ring_edges(ring)
        .map(|(a, b)| a[0] * b[1] - b[0] * a[1])
        .sum::<f64>()
}

/// Iterates the edges of an implicitly closed ring, including the wrap
/// edge from the last vertex back to the first.
pub fn ring_edges(ring: &[[f64; 2]]) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
    (0..ring.len()).map(|i| (ring[i], ring[(i + 1) % ring.len()]))
}

/// Even-odd crossing count of a horizontal ray from `p` toward +easting.
///
/// Half-open edge rule: an edge counts iff exactly one endpoint lies
/// strictly above the ray, which makes vertex and horizontal-edge hits
/// deterministic.
fn ray_crossings(p: [f64; 2], ring: &[[f64; 2]]) -> usize {
    let mut crossings = 0;
    for (a, b) in ring_edges(ring) {
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if x > p[0] {
                crossings += 1;
            }
        }
    }
    crossings
}

/// Classical ray-casting point-in-polygon test: even-odd rule over the
/// outer ring XOR containment in any hole.
pub fn point_in_polygon(p: [f64; 2], poly: &FootprintPolygon) -> Result<bool, PolygonError> {
    poly.validate()?;
    Ok(point_in_polygon_unchecked(p, poly))
}

/// As `point_in_polygon` but skips ring validation; used on hot paths
/// after footprints have been validated once at ingestion.
pub fn point_in_polygon_unchecked(p: [f64; 2], poly: &FootprintPolygon) -> bool {
    let in_outer = ray_crossings(p, &poly.outer) % 2 == 1;
    let in_hole = poly
        .holes
        .iter()
        .any(|h| ray_crossings(p, h) % 2 == 1);
    in_outer ^ in_hole
}

/// Uniform-grid spatial index bucketing footprints by bounding box, so a
/// query point only tests candidate polygons. Classification through the
/// index is identical to the exhaustive double loop.
pub struct FootprintIndex<'a> {
    polys: &'a [FootprintPolygon],
    bboxes: Vec<([f64; 2], [f64; 2])>,
    origin: [f64; 2],
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<u32>>,
}

impl<'a> FootprintIndex<'a> {
    /// Builds the index with a cell size near the median footprint
    /// bounding-box diameter.
    pub fn build(polys: &'a [FootprintPolygon]) -> Self {
        let bboxes: Vec<_> = polys.iter().map(|p| p.bbox()).collect();
        if polys.is_empty() {
            return Self {
                polys,
                bboxes,
                origin: [0.0, 0.0],
                cell: 1.0,
                cols: 0,
                rows: 0,
                buckets: Vec::new(),
            };
        }
        let mut diameters: Vec<f64> = bboxes
            .iter()
            .map(|(lo, hi)| ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt())
            .collect();
        diameters.sort_by(|a, b| a.total_cmp(b));
        let cell = diameters[diameters.len() / 2].max(1e-6);

        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for (blo, bhi) in &bboxes {
            for k in 0..2 {
                lo[k] = lo[k].min(blo[k]);
                hi[k] = hi[k].max(bhi[k]);
            }
        }
        let cols = (((hi[0] - lo[0]) / cell).floor() as usize + 1).max(1);
        let rows = (((hi[1] - lo[1]) / cell).floor() as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); cols * rows];
        for (idx, (blo, bhi)) in bboxes.iter().enumerate() {
            let c0 = ((blo[0] - lo[0]) / cell).floor() as usize;
            let c1 = (((bhi[0] - lo[0]) / cell).floor() as usize).min(cols - 1);
            let r0 = ((blo[1] - lo[1]) / cell).floor() as usize;
            let r1 = (((bhi[1] - lo[1]) / cell).floor() as usize).min(rows - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    buckets[r * cols + c].push(idx as u32);
                }
            }
        }
        Self {
            polys,
            bboxes,
            origin: lo,
            cell,
            cols,
            rows,
            buckets,
        }
    }

    /// True iff `p` lies inside at least one indexed footprint.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        if self.cols == 0 {
            return false;
        }
        let c = ((p[0] - self.origin[0]) / self.cell).floor();
        let r = ((p[1] - self.origin[1]) / self.cell).floor();
        if c < 0.0 || r < 0.0 {
            return false;
        }
        let (c, r) = (c as usize, r as usize);
        if c >= self.cols || r >= self.rows {
            return false;
        }
        self.buckets[r * self.cols + c].iter().any(|&idx| {
            let (lo, hi) = self.bboxes[idx as usize];
            p[0] >= lo[0]
                && p[0] <= hi[0]
                && p[1] >= lo[1]
                && p[1] <= hi[1]
                && point_in_polygon_unchecked(p, &self.polys[idx as usize])
        })
    }
}

/// Labels every point `building`/`nonbuilding` by footprint membership.
///
/// Footprints are assumed validated at ingestion; cloud and polygons must
/// share one UTM frame.
pub fn classify_cloud(cloud: &PointCloud, polys: &[FootprintPolygon]) -> PointCloud {
    let index = FootprintIndex::build(polys);
    let points = cloud
        .points
        .par_chunks(POINT_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|pt| {
                    let inside = index.contains([pt.position.easting, pt.position.northing]);
                    let mut labeled = *pt;
                    labeled.class = Some(if inside {
                        PointClass::Building
                    } else {
                        PointClass::NonBuilding
                    });
                    labeled
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat();
    PointCloud::new(points)
}

/// Exhaustive reference classifier, kept as the oracle for the indexed
/// path.
pub fn classify_cloud_exhaustive(cloud: &PointCloud, polys: &[FootprintPolygon]) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .map(|pt| {
            let p = [pt.position.easting, pt.position.northing];
            let inside = polys.iter().any(|poly| point_in_polygon_unchecked(p, poly));
            let mut labeled = *pt;
            labeled.class = Some(if inside {
                PointClass::Building
            } else {
                PointClass::NonBuilding
            });
            labeled
        })
        .collect();
    PointCloud::new(points)
}

/// Counters reported by `rasterize_building_points`. Out-of-frame and
/// wrong-side points are skipped, not errors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RasterizeStats {
    pub building_points: usize,
    pub rasterized: usize,
    pub out_of_frame: usize,
    pub wrong_side: usize,
}

/// Projects every building-class point to its SAR pixel and sets that
/// pixel. Writes are idempotent set-to-1, so the mask is independent of
/// point order.
pub fn rasterize_building_points(
    cloud: &PointCloud,
    g: &SensorGeometry,
) -> Result<(BuildingMask, RasterizeStats), GeometryError> {
    g.validate()?;
    let pixels: Vec<Option<Result<Option<(usize, usize)>, ()>>> = cloud
        .points
        .par_chunks(POINT_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|pt| {
                    if !pt.class.is_some_and(PointClass::is_building) {
                        return None;
                    }
                    Some(match project_to_sar(&pt.position, g) {
                        Ok(c) => Ok(sar_to_pixel(&c, g)),
                        Err(_) => Err(()),
                    })
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat();

    let mut mask = Raster::filled(g.width, g.height, 0u8);
    let mut stats = RasterizeStats::default();
    for px in pixels {
        let Some(projected) = px else { continue };
        stats.building_points += 1;
        match projected {
            Ok(Some((col, row))) => {
                mask.set(col, row, 1);
                stats.rasterized += 1;
            }
            Ok(None) => stats.out_of_frame += 1,
            Err(()) => stats.wrong_side += 1,
        }
    }
    Ok((mask, stats))
}

/// Binary dilation with a square structuring element of side
/// `2*radius + 1`, applied `iterations` times; `iterations = 0` is the
/// identity. Implemented as separable horizontal/vertical passes.
pub fn dilate(mask: &BuildingMask, radius: usize, iterations: usize) -> BuildingMask {
    let mut current = mask.clone();
    if radius == 0 {
        return current;
    }
    for _ in 0..iterations {
        current = dilate_axis(&current, radius, true);
        current = dilate_axis(&current, radius, false);
    }
    current
}

fn dilate_axis(mask: &BuildingMask, radius: usize, horizontal: bool) -> BuildingMask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = Raster::filled(w, h, 0u8);
    let r = radius as isize;
    let (outer, inner) = if horizontal { (h, w) } else { (w, h) };
    for o in 0..outer {
        // running count of set pixels inside the sliding window
        let at = |i: isize| -> u8 {
            if i < 0 || i >= inner as isize {
                0
            } else if horizontal {
                *mask.get(i as usize, o)
            } else {
                *mask.get(o, i as usize)
            }
        };
        let mut count: i32 = 0;
        for i in -r..=r {
            count += i32::from(at(i) != 0);
        }
        for i in 0..inner as isize {
            if count > 0 {
                if horizontal {
                    out.set(i as usize, o, 1);
                } else {
                    out.set(o, i as usize, 1);
                }
            }
            count += i32::from(at(i + r + 1) != 0);
            count -= i32::from(at(i - r) != 0);
        }
    }
    out
}
