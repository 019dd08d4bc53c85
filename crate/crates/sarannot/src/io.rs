//! File formats: point-cloud CSV, binary PGM masks, GeoJSON footprints,
//! flat binary unary files, georeference sidecars, metrics reports, and
//! the patch manifest.
//!
//! All writers go through [`atomic_write`] (temp file in the target
//! directory, then rename), so readers never observe a partial file.

use crate::cloud::{PointClass, PointCloud, TomoPoint, UtmPoint3};
use crate::coreg::RigidTransform3;
use crate::dataprep::Dihedral;
use crate::densecrf::UnaryField;
use crate::eval::{PrecisionRecall, SegMetrics};
use crate::label::FootprintPolygon;
use crate::raster::{GeoRaster, Raster};
use serde::Serialize;
use serde_json::{json, Value};
use std::fs;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let file_name = path
        .file_name()
        .ok_or_else(|| format_err(path, "path has no file name"))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| file_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| file_err(path, e))
}

fn read_to_string(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| file_err(path, e))
}

// ---------------------------------------------------------------------------
// point-cloud CSV

/// Serializes a cloud as `easting,northing,height[,amplitude][,class]`.
/// An optional column is emitted when any point carries the attribute;
/// points without it leave the field empty.
pub fn cloud_to_csv(cloud: &PointCloud) -> String {
    let has_amp = cloud.points.iter().any(|p| p.amplitude.is_some());
    let has_class = cloud.points.iter().any(|p| p.class.is_some());
    let mut out = String::from("easting,northing,height");
    if has_amp {
        out.push_str(",amplitude");
    }
    if has_class {
        out.push_str(",class");
    }
    out.push('\n');
    for p in &cloud.points {
        out.push_str(&format!(
            "{},{},{}",
            p.position.easting, p.position.northing, p.position.height
        ));
        if has_amp {
            out.push(',');
            if let Some(a) = p.amplitude {
                out.push_str(&a.to_string());
            }
        }
        if has_class {
            out.push(',');
            if let Some(c) = p.class {
                out.push_str(&c.to_string());
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_cloud_csv(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    atomic_write(path, cloud_to_csv(cloud).as_bytes())
}

pub fn read_cloud_csv(path: &Path) -> Result<PointCloud, IoError> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| format_err(path, "empty cloud file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let valid_header = matches!(
        cols.as_slice(),
        ["easting", "northing", "height"]
            | ["easting", "northing", "height", "amplitude"]
            | ["easting", "northing", "height", "class"]
            | ["easting", "northing", "height", "amplitude", "class"]
    );
    if !valid_header {
        return Err(parse_err(path, 1, format!("unrecognized header {header:?}")));
    }
    let amp_col = cols.iter().position(|&c| c == "amplitude");
    let class_col = cols.iter().position(|&c| c == "class");

    let mut points = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {} fields, got {}", cols.len(), fields.len()),
            ));
        }
        let num = |i: usize| -> Result<f64, IoError> {
            fields[i]
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad number {:?}", fields[i])))
        };
        let mut point = TomoPoint::new(UtmPoint3::new(num(0)?, num(1)?, num(2)?));
        if let Some(i) = amp_col {
            if !fields[i].is_empty() {
                point.amplitude = Some(num(i)?);
            }
        }
        if let Some(i) = class_col {
            if !fields[i].is_empty() {
                point.class = Some(PointClass::from_str(fields[i]).map_err(|e| {
                    parse_err(path, lineno, e.to_string())
                })?);
            }
        }
        points.push(point);
    }
    Ok(PointCloud::new(points))
}

// ---------------------------------------------------------------------------
// binary PGM (P5)

/// Encodes raw 8-bit samples as binary PGM with maxval 255.
pub fn pgm_bytes(raster: &Raster<u8>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", raster.width(), raster.height()).into_bytes();
    out.extend_from_slice(raster.data());
    out
}

pub fn write_pgm(path: &Path, raster: &Raster<u8>) -> Result<(), IoError> {
    atomic_write(path, &pgm_bytes(raster))
}

/// Writes a 0/1 mask with the on-disk convention 0 = background,
/// 255 = building.
pub fn write_mask_pgm(path: &Path, mask: &Raster<u8>) -> Result<(), IoError> {
    write_pgm(path, &mask.map(|&v| if v != 0 { 255u8 } else { 0 }))
}

pub fn read_pgm(path: &Path) -> Result<Raster<u8>, IoError> {
    let bytes = fs::read(path).map_err(|e| file_err(path, e))?;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(format_err(path, "not a binary PGM (missing P5 magic)"));
    }
    // header tokens may be separated by whitespace and '#' comment lines
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        while pos < bytes.len() {
            match bytes[pos] {
                b' ' | b'\t' | b'\r' | b'\n' => pos += 1,
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated PGM header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| format_err(path, "bad PGM header number"))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(format_err(path, format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the samples
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(format_err(path, "missing sample separator"));
    }
    pos += 1;
    let expected = width * height;
    if bytes.len() - pos != expected {
        return Err(format_err(
            path,
            format!("expected {expected} samples, found {}", bytes.len() - pos),
        ));
    }
    Ok(Raster::from_vec(width, height, bytes[pos..].to_vec()))
}

/// Reads a PGM and collapses it to a 0/1 mask (any nonzero sample is on).
pub fn read_mask_pgm(path: &Path) -> Result<Raster<u8>, IoError> {
    Ok(read_pgm(path)?.map(|&v| u8::from(v != 0)))
}

// ---------------------------------------------------------------------------
// GeoJSON footprints

/// A building outline with an optional `roof_height` property (meters
/// above the scene ground).
#[derive(Debug, Clone)]
pub struct Footprint {
    pub polygon: FootprintPolygon,
    pub roof_height: Option<f64>,
}

fn ring_from_json(path: &Path, ring: &Value) -> Result<Vec<[f64; 2]>, IoError> {
    let coords = ring
        .as_array()
        .ok_or_else(|| format_err(path, "ring is not an array"))?;
    let mut out = Vec::with_capacity(coords.len());
    for c in coords {
        let pair = c
            .as_array()
            .filter(|a| a.len() >= 2)
            .ok_or_else(|| format_err(path, "coordinate is not an [x, y] pair"))?;
        let x = pair[0]
            .as_f64()
            .ok_or_else(|| format_err(path, "non-numeric coordinate"))?;
        let y = pair[1]
            .as_f64()
            .ok_or_else(|| format_err(path, "non-numeric coordinate"))?;
        out.push([x, y]);
    }
    // GeoJSON rings repeat the first vertex at the end
    if out.len() >= 2 && out.first() == out.last() {
        out.pop();
    }
    Ok(out)
}

fn polygon_from_rings(path: &Path, rings: &Value) -> Result<FootprintPolygon, IoError> {
    let rings = rings
        .as_array()
        .filter(|r| !r.is_empty())
        .ok_or_else(|| format_err(path, "polygon has no rings"))?;
    let outer = ring_from_json(path, &rings[0])?;
    let holes = rings[1..]
        .iter()
        .map(|r| ring_from_json(path, r))
        .collect::<Result<Vec<_>, _>>()?;
    let poly = FootprintPolygon::with_holes(outer, holes);
    poly.validate()
        .map_err(|e| format_err(path, format!("invalid polygon: {e}")))?;
    Ok(poly)
}

fn footprints_from_geometry(
    path: &Path,
    geometry: &Value,
    roof_height: Option<f64>,
    out: &mut Vec<Footprint>,
) -> Result<(), IoError> {
    let gtype = geometry["type"].as_str().unwrap_or_default();
    match gtype {
        "Polygon" => out.push(Footprint {
            polygon: polygon_from_rings(path, &geometry["coordinates"])?,
            roof_height,
        }),
        "MultiPolygon" => {
            let polys = geometry["coordinates"]
                .as_array()
                .ok_or_else(|| format_err(path, "MultiPolygon without coordinates"))?;
            for rings in polys {
                out.push(Footprint {
                    polygon: polygon_from_rings(path, rings)?,
                    roof_height,
                });
            }
        }
        other => {
            return Err(format_err(
                path,
                format!("unsupported geometry type {other:?}"),
            ))
        }
    }
    Ok(())
}

fn feature_height(feature: &Value) -> Option<f64> {
    feature["properties"]["roof_height"].as_f64()
}

/// Reads footprints from a GeoJSON FeatureCollection, single Feature,
/// or bare Polygon/MultiPolygon geometry.
pub fn read_footprints(path: &Path) -> Result<Vec<Footprint>, IoError> {
    let text = read_to_string(path)?;
    let root: Value =
        serde_json::from_str(&text).map_err(|e| format_err(path, format!("bad JSON: {e}")))?;
    let mut out = Vec::new();
    match root["type"].as_str().unwrap_or_default() {
        "FeatureCollection" => {
            let features = root["features"]
                .as_array()
                .ok_or_else(|| format_err(path, "FeatureCollection without features"))?;
            for f in features {
                footprints_from_geometry(path, &f["geometry"], feature_height(f), &mut out)?;
            }
        }
        "Feature" => {
            footprints_from_geometry(path, &root["geometry"], feature_height(&root), &mut out)?
        }
        "Polygon" | "MultiPolygon" => footprints_from_geometry(path, &root, None, &mut out)?,
        other => {
            return Err(format_err(
                path,
                format!("unsupported GeoJSON root type {other:?}"),
            ))
        }
    }
    if out.is_empty() {
        return Err(format_err(path, "no polygons found"));
    }
    Ok(out)
}

fn ring_to_json(ring: &[[f64; 2]]) -> Value {
    let mut coords: Vec<Value> = ring.iter().map(|p| json!([p[0], p[1]])).collect();
    if let Some(first) = ring.first() {
        coords.push(json!([first[0], first[1]]));
    }
    Value::Array(coords)
}

pub fn write_footprints(path: &Path, footprints: &[Footprint]) -> Result<(), IoError> {
    let features: Vec<Value> = footprints
        .iter()
        .map(|f| {
            let mut rings = vec![ring_to_json(&f.polygon.outer)];
            rings.extend(f.polygon.holes.iter().map(|h| ring_to_json(h)));
            let properties = match f.roof_height {
                Some(h) => json!({ "roof_height": h }),
                None => json!({}),
            };
            json!({
                "type": "Feature",
                "properties": properties,
                "geometry": { "type": "Polygon", "coordinates": rings },
            })
        })
        .collect();
    let doc = json!({ "type": "FeatureCollection", "features": features });
    let mut text = serde_json::to_string_pretty(&doc)
        .map_err(|e| format_err(path, format!("serialize: {e}")))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

// ---------------------------------------------------------------------------
// unary potential files

/// Writes the unary field as a `W H L` header line followed by
/// row-major little-endian 32-bit reals (pixel-major, label-minor).
pub fn write_unary(path: &Path, u: &UnaryField) -> Result<(), IoError> {
    let mut bytes = format!("{} {} {}\n", u.width(), u.height(), u.labels()).into_bytes();
    bytes.reserve(u.data().len() * 4);
    for &v in u.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    atomic_write(path, &bytes)
}

pub fn read_unary(path: &Path) -> Result<UnaryField, IoError> {
    let bytes = fs::read(path).map_err(|e| file_err(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format_err(path, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| format_err(path, "header is not ASCII"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| format_err(path, "bad header number")))
        .collect::<Result<_, _>>()?;
    let [width, height, labels] = dims.as_slice() else {
        return Err(format_err(path, format!("expected `W H L`, got {header:?}")));
    };
    let body = &bytes[nl + 1..];
    let expected = width * height * labels * 4;
    if body.len() != expected {
        return Err(format_err(
            path,
            format!("expected {expected} payload bytes, found {}", body.len()),
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    UnaryField::new(*width, *height, *labels, values)
        .map_err(|e| format_err(path, e.to_string()))
}

// ---------------------------------------------------------------------------
// georeference sidecar

/// Pixel-grid placement of a raster in the UTM E/N plane. The origin
/// is the minimum-easting/minimum-northing corner of cell (0, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Georef {
    pub origin_easting: f64,
    pub origin_northing: f64,
    pub cell_size: f64,
    pub rows: usize,
    pub cols: usize,
}

pub fn write_georef(path: &Path, g: &Georef) -> Result<(), IoError> {
    let text = format!(
        "origin_easting = {}\norigin_northing = {}\ncell_size = {}\nrows = {}\ncols = {}\n",
        g.origin_easting, g.origin_northing, g.cell_size, g.rows, g.cols
    );
    atomic_write(path, text.as_bytes())
}

pub fn read_georef(path: &Path) -> Result<Georef, IoError> {
    let text = read_to_string(path)?;
    let mut origin_easting = None;
    let mut origin_northing = None;
    let mut cell_size = None;
    let mut rows = None;
    let mut cols = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, lineno, "expected `key = value`"))?;
        let value = value.trim();
        let bad = |what: &str| parse_err(path, lineno, format!("bad {what} {value:?}"));
        match key.trim() {
            "origin_easting" => origin_easting = Some(value.parse().map_err(|_| bad("number"))?),
            "origin_northing" => origin_northing = Some(value.parse().map_err(|_| bad("number"))?),
            "cell_size" => cell_size = Some(value.parse().map_err(|_| bad("number"))?),
            "rows" => rows = Some(value.parse().map_err(|_| bad("count"))?),
            "cols" => cols = Some(value.parse().map_err(|_| bad("count"))?),
            other => return Err(parse_err(path, lineno, format!("unknown key {other:?}"))),
        }
    }
    let missing = |what: &str| format_err(path, format!("missing {what}"));
    Ok(Georef {
        origin_easting: origin_easting.ok_or_else(|| missing("origin_easting"))?,
        origin_northing: origin_northing.ok_or_else(|| missing("origin_northing"))?,
        cell_size: cell_size.ok_or_else(|| missing("cell_size"))?,
        rows: rows.ok_or_else(|| missing("rows"))?,
        cols: cols.ok_or_else(|| missing("cols"))?,
    })
}

/// Reads a class raster plus its sidecar into a georeferenced raster.
pub fn read_label_raster(pgm_path: &Path, sidecar_path: &Path) -> Result<GeoRaster<u8>, IoError> {
    let raster = read_pgm(pgm_path)?;
    let georef = read_georef(sidecar_path)?;
    if raster.width() != georef.cols || raster.height() != georef.rows {
        return Err(format_err(
            pgm_path,
            format!(
                "raster is {}x{} but sidecar declares {}x{}",
                raster.width(),
                raster.height(),
                georef.cols,
                georef.rows
            ),
        ));
    }
    Ok(GeoRaster {
        raster,
        origin_e: georef.origin_easting,
        origin_n: georef.origin_northing,
        cell_size: georef.cell_size,
    })
}

// ---------------------------------------------------------------------------
// rigid-transform report

/// Writes a registration result as `key = value` text: the nine
/// rotation entries `r00..r22` (row-major), the translation `t0..t2`,
/// and the solver diagnostics.
pub fn write_transform(
    path: &Path,
    t: &RigidTransform3,
    iterations: usize,
    mean_distance: f64,
) -> Result<(), IoError> {
    let mut text = String::new();
    for row in 0..3 {
        for col in 0..3 {
            text.push_str(&format!("r{row}{col} = {}\n", t.rotation[(row, col)]));
        }
    }
    for i in 0..3 {
        text.push_str(&format!("t{i} = {}\n", t.translation[i]));
    }
    text.push_str(&format!("iterations = {iterations}\n"));
    text.push_str(&format!("mean_distance = {mean_distance}\n"));
    atomic_write(path, text.as_bytes())
}

/// Reads a transform report back, revalidating orthonormality.
pub fn read_transform(path: &Path) -> Result<RigidTransform3, IoError> {
    let text = read_to_string(path)?;
    let mut entries = std::collections::BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, idx + 1, "expected `key = value`"))?;
        entries.insert(key.trim().to_string(), value.trim().to_string());
    }
    let get = |key: &str| -> Result<f64, IoError> {
        entries
            .get(key)
            .ok_or_else(|| format_err(path, format!("missing {key}")))?
            .parse()
            .map_err(|_| format_err(path, format!("bad number for {key}")))
    };
    let mut rotation = nalgebra::Matrix3::zeros();
    for row in 0..3 {
        for col in 0..3 {
            rotation[(row, col)] = get(&format!("r{row}{col}"))?;
        }
    }
    let translation = nalgebra::Vector3::new(get("t0")?, get("t1")?, get("t2")?);
    RigidTransform3::new(rotation, translation)
        .map_err(|e| format_err(path, format!("not a rigid transform: {e}")))
}

// ---------------------------------------------------------------------------
// metrics report

/// Flat evaluation report. Undefined ratios serialize as JSON `null`
/// and as `undefined` in the text rendering.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MetricsReport {
    pub pa: f64,
    pub ma: f64,
    pub miu: f64,
    pub fwiu: f64,
    pub far: Option<f64>,
    pub qr: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fneg: u64,
    pub tn: u64,
}

impl MetricsReport {
    pub fn new(seg: &SegMetrics, pr: &PrecisionRecall, counts: (u64, u64, u64, u64)) -> Self {
        let (tp, fp, fneg, tn) = counts;
        Self {
            pa: seg.pa,
            ma: seg.ma,
            miu: seg.miu,
            fwiu: seg.fwiu,
            far: seg.far,
            qr: seg.qr,
            precision: pr.precision,
            recall: pr.recall,
            tp,
            fp,
            fneg,
            tn,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| match v {
            Some(x) => x.to_string(),
            None => "undefined".to_string(),
        };
        format!(
            "pa = {}\nma = {}\nmiu = {}\nfwiu = {}\nfar = {}\nqr = {}\n\
             precision = {}\nrecall = {}\ntp = {}\nfp = {}\nfn = {}\ntn = {}\n",
            self.pa,
            self.ma,
            self.miu,
            self.fwiu,
            opt(self.far),
            self.qr,
            opt(self.precision),
            opt(self.recall),
            self.tp,
            self.fp,
            self.fneg,
            self.tn
        )
    }
}

// ---------------------------------------------------------------------------
// patch naming and manifest

/// Canonical base name for a patch: `tile_<az>_<rg>_<aug>` where the
/// origin is the top-left pixel (azimuth column, range row).
pub fn patch_basename(origin: (usize, usize), op: Dihedral) -> String {
    format!("tile_{}_{}_{}", origin.0, origin.1, op.name())
}

/// One manifest record per written patch pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub name: String,
    pub origin: (usize, usize),
    pub augmentation: Dihedral,
    pub source: String,
}

pub fn manifest_text(records: &[PatchRecord]) -> String {
    let mut out = String::from("# name az rg aug source\n");
    for r in records {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            r.name,
            r.origin.0,
            r.origin.1,
            r.augmentation.name(),
            r.source
        ));
    }
    out
}

pub fn write_manifest(path: &Path, records: &[PatchRecord]) -> Result<(), IoError> {
    atomic_write(path, manifest_text(records).as_bytes())
}
