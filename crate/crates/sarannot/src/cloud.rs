//! Geocoded 3-D scatterer samples (UTM easting/northing/height) with
//! optional amplitude and class label.

use std::fmt;
use std::str::FromStr;

/// A point in a UTM zone with an ellipsoidal/local height, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtmPoint3 {
    pub easting: f64,
    pub northing: f64,
    pub height: f64,
}

impl UtmPoint3 {
    pub fn new(easting: f64, northing: f64, height: f64) -> Self {
        Self {
            easting,
            northing,
            height,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.easting.is_finite() && self.northing.is_finite() && self.height.is_finite()
    }
}

/// Point class, covering both the simulator's ground truth
/// (ground/roof/facade/outlier) and the annotation vocabulary
/// (building/nonbuilding/unknown).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointClass {
    Ground,
    Roof,
    Facade,
    Outlier,
    Building,
    NonBuilding,
    Unknown,
}

impl PointClass {
    /// True for classes that denote building structure.
    pub fn is_building(self) -> bool {
        matches!(self, PointClass::Roof | PointClass::Facade | PointClass::Building)
    }
}

impl fmt::Display for PointClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PointClass::Ground => "ground",
            PointClass::Roof => "roof",
            PointClass::Facade => "facade",
            PointClass::Outlier => "outlier",
            PointClass::Building => "building",
            PointClass::NonBuilding => "nonbuilding",
            PointClass::Unknown => "unknown",
        };
        f.write_str(s)
    }
}

impl FromStr for PointClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ground" => Ok(PointClass::Ground),
            "roof" => Ok(PointClass::Roof),
            "facade" => Ok(PointClass::Facade),
            "outlier" => Ok(PointClass::Outlier),
            "building" => Ok(PointClass::Building),
            "nonbuilding" => Ok(PointClass::NonBuilding),
            "unknown" => Ok(PointClass::Unknown),
            other => Err(format!("unknown point class '{other}'")),
        }
    }
}

/// One TomoSAR scatterer sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TomoPoint {
    pub position: UtmPoint3,
    pub amplitude: Option<f64>,
    pub class: Option<PointClass>,
}

impl TomoPoint {
    pub fn new(position: UtmPoint3) -> Self {
        Self {
            position,
            amplitude: None,
            class: None,
        }
    }

    pub fn with_class(position: UtmPoint3, class: PointClass) -> Self {
        Self {
            position,
            amplitude: None,
            class: Some(class),
        }
    }
}

/// An ordered collection of `TomoPoint`s sharing one UTM frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<TomoPoint>,
}

impl PointCloud {
    pub fn new(points: Vec<TomoPoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TomoPoint> {
        self.points.iter()
    }

    /// Axis-aligned bounding box `((min_e, min_n), (max_e, max_n))`,
    /// or `None` for an empty cloud.
    pub fn bbox_en(&self) -> Option<((f64, f64), (f64, f64))> {
        if self.points.is_empty() {
            return None;
        }
        let mut min_e = f64::INFINITY;
        let mut min_n = f64::INFINITY;
        let mut max_e = f64::NEG_INFINITY;
        let mut max_n = f64::NEG_INFINITY;
        for p in &self.points {
            min_e = min_e.min(p.position.easting);
            min_n = min_n.min(p.position.northing);
            max_e = max_e.max(p.position.easting);
            max_n = max_n.max(p.position.northing);
        }
        Some(((min_e, min_n), (max_e, max_n)))
    }

    /// Height range `(min, max)`, or `None` for an empty cloud.
    pub fn height_range(&self) -> Option<(f64, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &self.points {
            lo = lo.min(p.position.height);
            hi = hi.max(p.position.height);
        }
        Some((lo, hi))
    }
}
