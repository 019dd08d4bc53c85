//! SAR acquisition geometry.
//!
//! A straight-track zero-Doppler model: the sensor flies along a horizontal
//! line, every world point maps to the azimuth of its closest approach and
//! to the slant distance from the sensor at that azimuth. This is the
//! simplest geometry that exhibits layover (elevated scatterers map to
//! shorter ranges than their ground footprints).

use crate::cloud::UtmPoint3;
use thiserror::Error;

/// Default range pixel spacing, meters.
pub const DEFAULT_RG_SPACING: f64 = 0.588;
/// Default azimuth pixel spacing, meters.
pub const DEFAULT_AZ_SPACING: f64 = 1.1;
/// Default incidence angle, degrees.
pub const DEFAULT_INCIDENCE_DEG: f64 = 36.0;

#[derive(Error, Debug)]
pub enum GeometryError {
    #[error("heading vector must be unit length, |({0}, {1})| differs from 1 by more than 1e-12")]
    HeadingNotUnit(f64, f64),
    #[error("pixel spacings must be positive, got az {0}, rg {1}")]
    NonPositiveSpacing(f64, f64),
    #[error("incidence angle must lie in (0, 90) degrees, got {0}")]
    IncidenceOutOfRange(f64),
    #[error("point ({0}, {1}) lies on the wrong side of the track for a {2}-looking geometry")]
    SideViolation(f64, f64, LookSide),
}

/// Which side of the track the antenna illuminates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LookSide {
    Left,
    Right,
}

impl std::fmt::Display for LookSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LookSide::Left => "left",
            LookSide::Right => "right",
        })
    }
}

/// Zero-Doppler acquisition model mapping 3-D points to azimuth/range.
///
/// The track is the horizontal line through `track_origin`'s E/N position
/// at height `altitude`, directed along `heading`; `track_origin.height`
/// does not enter the projection. Azimuth is measured along the track from
/// the origin, range is the sensor-to-point slant distance.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorGeometry {
    pub track_origin: UtmPoint3,
    /// Unit along-track direction in the E-N plane.
    pub heading: [f64; 2],
    /// Absolute sensor height, meters.
    pub altitude: f64,
    pub look_side: LookSide,
    pub incidence_deg: f64,
    /// Azimuth pixel spacing, meters.
    pub az_spacing: f64,
    /// Range pixel spacing, meters.
    pub rg_spacing: f64,
    /// Azimuth coordinate of pixel column 0, meters.
    pub az0: f64,
    /// Range coordinate of pixel row 0, meters.
    pub rg0: f64,
    /// Frame width in pixels (azimuth axis).
    pub width: usize,
    /// Frame height in pixels (range axis).
    pub height: usize,
}

impl SensorGeometry {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let norm = (self.heading[0] * self.heading[0] + self.heading[1] * self.heading[1]).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(GeometryError::HeadingNotUnit(self.heading[0], self.heading[1]));
        }
        if self.az_spacing <= 0.0 || self.rg_spacing <= 0.0 {
            return Err(GeometryError::NonPositiveSpacing(self.az_spacing, self.rg_spacing));
        }
        if self.incidence_deg <= 0.0 || self.incidence_deg >= 90.0 {
            return Err(GeometryError::IncidenceOutOfRange(self.incidence_deg));
        }
        Ok(())
    }

    /// Signed cross-track coordinate of `p`: positive on the illuminated
    /// side. Right-looking means right of the heading direction.
    pub fn cross_track(&self, p: &UtmPoint3) -> f64 {
        let de = p.easting - self.track_origin.easting;
        let dn = p.northing - self.track_origin.northing;
        // perpendicular to heading, pointing right of travel
        let right = de * self.heading[1] - dn * self.heading[0];
        match self.look_side {
            LookSide::Right => right,
            LookSide::Left => -right,
        }
    }

    /// Along-track coordinate of `p` relative to the track origin.
    pub fn along_track(&self, p: &UtmPoint3) -> f64 {
        let de = p.easting - self.track_origin.easting;
        let dn = p.northing - self.track_origin.northing;
        de * self.heading[0] + dn * self.heading[1]
    }
}

/// Continuous SAR image coordinates: along-track position and slant range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SarCoord {
    pub azimuth: f64,
    pub range: f64,
}

/// Projects a world point into continuous azimuth/range coordinates.
///
/// Errors when the point lies strictly on the non-illuminated side of the
/// track; a point exactly beneath the track (cross-track zero) is accepted.
pub fn project_to_sar(p: &UtmPoint3, g: &SensorGeometry) -> Result<SarCoord, GeometryError> {
    let cross = g.cross_track(p);
    if cross < 0.0 {
        return Err(GeometryError::SideViolation(p.easting, p.northing, g.look_side));
    }
    let dz = g.altitude - p.height;
    Ok(SarCoord {
        azimuth: g.along_track(p),
        range: (cross * cross + dz * dz).sqrt(),
    })
}

/// Discrete pixel location of a continuous SAR coordinate, or `None` when
/// it falls outside the frame.
///
/// Cells are half-open: `col = floor((az - az0)/az_spacing)`, so a
/// coordinate exactly on the far edge is out of frame.
pub fn sar_to_pixel(c: &SarCoord, g: &SensorGeometry) -> Option<(usize, usize)> {
    let col = ((c.azimuth - g.az0) / g.az_spacing).floor();
    let row = ((c.range - g.rg0) / g.rg_spacing).floor();
    if col < 0.0 || row < 0.0 {
        return None;
    }
    let (col, row) = (col as usize, row as usize);
    if col >= g.width || row >= g.height {
        return None;
    }
    Some((col, row))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn test_geometry() -> SensorGeometry {
        SensorGeometry {
            track_origin: UtmPoint3::new(1000.0, 2000.0, 0.0),
            heading: [0.0, 1.0],
            altitude: 1000.0,
            look_side: LookSide::Right,
            incidence_deg: DEFAULT_INCIDENCE_DEG,
            az_spacing: DEFAULT_AZ_SPACING,
            rg_spacing: DEFAULT_RG_SPACING,
            az0: 0.0,
            rg0: 900.0,
            width: 512,
            height: 512,
        }
    }

    #[test]
    fn validate_rejects_bad_fields() {
        let mut g = test_geometry();
        g.heading = [0.5, 0.5];
        assert!(matches!(g.validate(), Err(GeometryError::HeadingNotUnit(..))));
        let mut g = test_geometry();
        g.rg_spacing = 0.0;
        assert!(matches!(g.validate(), Err(GeometryError::NonPositiveSpacing(..))));
        let mut g = test_geometry();
        g.incidence_deg = 90.0;
        assert!(matches!(g.validate(), Err(GeometryError::IncidenceOutOfRange(..))));
        assert!(test_geometry().validate().is_ok());
    }

    #[test]
    fn nadir_point_range_equals_altitude() {
        let g = test_geometry();
        // directly beneath the track, 30 m along it
        let p = UtmPoint3::new(1000.0, 2030.0, 0.0);
        let c = project_to_sar(&p, &g).unwrap();
        assert_relative_eq!(c.range, 1000.0, epsilon = 1e-9);
        assert_relative_eq!(c.azimuth, 30.0, epsilon = 1e-9);
    }

    #[test]
    fn flat_ground_range_is_pythagoras() {
        let g = test_geometry();
        let d = 700.0;
        let p = UtmPoint3::new(1000.0 + d, 2000.0, 0.0);
        let c = project_to_sar(&p, &g).unwrap();
        assert_relative_eq!(c.range, (1000.0f64 * 1000.0 + d * d).sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn building_top_lays_over_toward_sensor() {
        let g = test_geometry();
        let base = UtmPoint3::new(1600.0, 2100.0, 0.0);
        let top = UtmPoint3::new(1600.0, 2100.0, 40.0);
        let r_base = project_to_sar(&base, &g).unwrap().range;
        let r_top = project_to_sar(&top, &g).unwrap().range;
        assert!(r_top < r_base, "expected layover: {r_top} >= {r_base}");
    }

    #[test]
    fn wrong_side_is_rejected() {
        let g = test_geometry();
        let p = UtmPoint3::new(900.0, 2000.0, 0.0); // left of a north-heading right-looking track
        assert!(matches!(project_to_sar(&p, &g), Err(GeometryError::SideViolation(..))));
        let mut left = g.clone();
        left.look_side = LookSide::Left;
        assert!(project_to_sar(&p, &left).is_ok());
    }

    #[test]
    fn pixel_mapping_floor_rule() {
        let g = test_geometry();
        let at = |az, rg| SarCoord { azimuth: az, range: rg };
        assert_eq!(sar_to_pixel(&at(g.az0, g.rg0), &g), Some((0, 0)));
        assert_eq!(
            sar_to_pixel(&at(g.az0 + 1.5 * g.az_spacing, g.rg0 + 0.2 * g.rg_spacing), &g),
            Some((1, 0))
        );
        assert_eq!(sar_to_pixel(&at(g.az0 - 0.1 * g.az_spacing, g.rg0), &g), None);
        // far edge is excluded by the half-open cell rule
        assert_eq!(
            sar_to_pixel(&at(g.az0 + g.width as f64 * g.az_spacing, g.rg0), &g),
            None
        );
    }

    #[test]
    fn along_track_translation_equivariance() {
        let g = test_geometry();
        let p = UtmPoint3::new(1400.0, 2250.0, 17.0);
        let c0 = project_to_sar(&p, &g).unwrap();
        for t in [-120.0, -1.5, 3.25, 777.0] {
            let q = UtmPoint3::new(
                p.easting + t * g.heading[0],
                p.northing + t * g.heading[1],
                p.height,
            );
            let c = project_to_sar(&q, &g).unwrap();
            assert_relative_eq!(c.azimuth, c0.azimuth + t, epsilon = 1e-9);
            assert!((c.range - c0.range).abs() < 1e-9);
        }
    }

    #[test]
    fn range_decreases_monotonically_with_height() {
        let g = test_geometry();
        let mut prev = f64::INFINITY;
        for h in (0..10).map(|k| k as f64 * 100.0) {
            let p = UtmPoint3::new(1500.0, 2100.0, h);
            let r = project_to_sar(&p, &g).unwrap().range;
            assert!(r < prev, "range not strictly decreasing at h={h}");
            prev = r;
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // every pixel center maps back to its own pixel
            #[test]
            fn pixel_center_round_trip(col in 0usize..512, row in 0usize..512) {
                let g = test_geometry();
                let c = SarCoord {
                    azimuth: g.az0 + (col as f64 + 0.5) * g.az_spacing,
                    range: g.rg0 + (row as f64 + 0.5) * g.rg_spacing,
                };
                prop_assert_eq!(sar_to_pixel(&c, &g), Some((col, row)));
            }
        }
    }
}
