//! Declarative run configuration: a line-oriented `section.key = value`
//! text file with `#` comments. Every command reads the same file and
//! picks out the sections it needs; command-line flags override
//! individual values.

use crate::coreg::IcpParams;
use crate::dataprep::{Dihedral, PatchSpec};
use crate::densecrf::{Kernel, KernelKind, PairwiseParams};
use crate::sargeom::{LookSide, SensorGeometry};
use crate::tomosim::{BaselineSet, ElevationGrid, SceneSpec, SurfaceDensity};
use crate::tomosim::{
    DEFAULT_BASELINE_HALF_SPAN, DEFAULT_NUM_BASELINES, DEFAULT_SLANT_RANGE, DEFAULT_WAVELENGTH,
};
use crate::cloud::UtmPoint3;
use crate::io::Footprint;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected `section.key = value`, got {text:?}")]
    Malformed {
        path: String,
        line: usize,
        text: String,
    },
    #[error("{path}:{line}: duplicate key {key:?}")]
    DuplicateKey {
        path: String,
        line: usize,
        key: String,
    },
    #[error("bad value {value:?} for {key}: {msg}")]
    BadValue {
        key: String,
        value: String,
        msg: String,
    },
    #[error("missing required key {0}")]
    MissingKey(String),
    #[error("{key} refers to {path}, which does not exist")]
    MissingPath { key: String, path: String },
    #[error("invalid {what}: {msg}")]
    Invalid { what: String, msg: String },
}

/// Parsed configuration: a flat `section.key -> value` map plus the raw
/// bytes (hashed into run metadata).
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    raw: Vec<u8>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&raw, &path.display().to_string())
    }

    pub fn parse(raw: &[u8], origin: &str) -> Result<Self, ConfigError> {
        let text = String::from_utf8_lossy(raw);
        let mut values = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let malformed = || ConfigError::Malformed {
                path: origin.to_string(),
                line: lineno,
                text: raw_line.trim().to_string(),
            };
            let (key, value) = line.split_once('=').ok_or_else(malformed)?;
            let key = key.trim();
            if key.is_empty() || !key.contains('.') {
                return Err(malformed());
            }
            if values
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(ConfigError::DuplicateKey {
                    path: origin.to_string(),
                    line: lineno,
                    key: key.to_string(),
                });
            }
        }
        Ok(Self {
            values,
            raw: raw.to_vec(),
        })
    }

    /// Raw file bytes, hashed into the run-metadata file.
    pub fn raw_bytes(&self) -> &[u8] {
        &self.raw
    }

    /// Applies a command-line override for a single key.
    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key).ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str, value: &str) -> Result<T, ConfigError> {
        value.parse().map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            msg: format!("expected a {}", std::any::type_name::<T>()),
        })
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            Some(v) => self.parse_as(key, v),
            None => Ok(default),
        }
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get(key) {
            Some(v) => self.parse_as(key, v),
            None => Ok(default),
        }
    }

    pub fn u64_opt(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.get(key).map(|v| self.parse_as(key, v)).transpose()
    }

    pub fn f64_req(&self, key: &str) -> Result<f64, ConfigError> {
        let v = self.require(key)?;
        self.parse_as(key, v)
    }

    /// Input path; must exist when the command starts.
    pub fn input_path(&self, key: &str) -> Result<PathBuf, ConfigError> {
        let raw = self.require(key)?;
        let path = PathBuf::from(raw);
        if !path.exists() {
            return Err(ConfigError::MissingPath {
                key: key.to_string(),
                path: raw.to_string(),
            });
        }
        Ok(path)
    }

    /// The seed for stochastic steps; commands that draw random numbers
    /// refuse to run without one.
    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.u64_opt("run.seed")?
            .ok_or_else(|| ConfigError::MissingKey("run.seed (or --seed)".to_string()))
    }

    // -- section builders ---------------------------------------------------

    pub fn sensor_geometry(&self) -> Result<SensorGeometry, ConfigError> {
        let heading_e = self.f64("geometry.heading_e", 0.0)?;
        let heading_n = self.f64("geometry.heading_n", 1.0)?;
        let norm = (heading_e * heading_e + heading_n * heading_n).sqrt();
        if norm == 0.0 {
            return Err(ConfigError::Invalid {
                what: "geometry.heading".to_string(),
                msg: "zero heading vector".to_string(),
            });
        }
        let look_side = match self.get("geometry.look_side").unwrap_or("right") {
            "left" => LookSide::Left,
            "right" => LookSide::Right,
            other => {
                return Err(ConfigError::BadValue {
                    key: "geometry.look_side".to_string(),
                    value: other.to_string(),
                    msg: "expected left or right".to_string(),
                })
            }
        };
        let g = SensorGeometry {
            track_origin: UtmPoint3::new(
                self.f64("geometry.track_easting", 0.0)?,
                self.f64("geometry.track_northing", 0.0)?,
                0.0,
            ),
            heading: [heading_e / norm, heading_n / norm],
            altitude: self.f64("geometry.altitude", 10000.0)?,
            look_side,
            incidence_deg: self.f64("geometry.incidence_deg", crate::sargeom::DEFAULT_INCIDENCE_DEG)?,
            az_spacing: self.f64("geometry.az_spacing", crate::sargeom::DEFAULT_AZ_SPACING)?,
            rg_spacing: self.f64("geometry.rg_spacing", crate::sargeom::DEFAULT_RG_SPACING)?,
            az0: self.f64("geometry.az0", 0.0)?,
            rg0: self.f64_req("geometry.rg0")?,
            width: self.usize("geometry.width", 512)?,
            height: self.usize("geometry.height", 512)?,
        };
        g.validate().map_err(|e| ConfigError::Invalid {
            what: "geometry".to_string(),
            msg: e.to_string(),
        })?;
        Ok(g)
    }

    pub fn baseline_set(&self) -> Result<BaselineSet, ConfigError> {
        let half = DEFAULT_BASELINE_HALF_SPAN;
        BaselineSet::uniform(
            self.usize("tomosim.num_baselines", DEFAULT_NUM_BASELINES)?,
            self.f64("tomosim.baseline_min", -half)?,
            self.f64("tomosim.baseline_max", half)?,
            self.f64("tomosim.wavelength", DEFAULT_WAVELENGTH)?,
            self.f64("tomosim.slant_range", DEFAULT_SLANT_RANGE)?,
        )
        .map_err(|e| ConfigError::Invalid {
            what: "tomosim baselines".to_string(),
            msg: e.to_string(),
        })
    }

    pub fn elevation_grid(&self) -> Result<ElevationGrid, ConfigError> {
        ElevationGrid::uniform(
            self.f64("tomosim.grid_lo", -100.0)?,
            self.f64("tomosim.grid_hi", 100.0)?,
            self.usize("tomosim.grid_samples", 201)?,
        )
        .map_err(|e| ConfigError::Invalid {
            what: "tomosim elevation grid".to_string(),
            msg: e.to_string(),
        })
    }

    /// Scene specification; footprints come from the GeoJSON named by
    /// `io.footprints`, with `tomosim.default_roof_height` filling in
    /// features that carry no height property.
    pub fn scene_spec(&self, footprints: &[Footprint]) -> Result<SceneSpec, ConfigError> {
        let default_height = self.f64("tomosim.default_roof_height", 15.0)?;
        let buildings = footprints
            .iter()
            .map(|f| {
                (
                    f.polygon.clone(),
                    f.roof_height.unwrap_or(default_height),
                )
            })
            .collect();
        let spec = SceneSpec {
            domain_min: [
                self.f64_req("tomosim.domain_min_e")?,
                self.f64_req("tomosim.domain_min_n")?,
            ],
            domain_max: [
                self.f64_req("tomosim.domain_max_e")?,
                self.f64_req("tomosim.domain_max_n")?,
            ],
            buildings,
            ground_height: self.f64("tomosim.ground_height", 0.0)?,
            density: SurfaceDensity {
                ground: self.f64("tomosim.density_ground", 0.5)?,
                roof: self.f64("tomosim.density_roof", 1.0)?,
                facade: self.f64("tomosim.density_facade", 1.0)?,
            },
            position_noise_sigma: self.f64("tomosim.position_noise_sigma", 0.0)?,
            outlier_fraction: self.f64("tomosim.outlier_fraction", 0.0)?,
        };
        spec.validate().map_err(|e| ConfigError::Invalid {
            what: "scene".to_string(),
            msg: e.to_string(),
        })?;
        Ok(spec)
    }

    pub fn dilation(&self) -> Result<(usize, usize), ConfigError> {
        Ok((
            self.usize("label.dilation_radius", 1)?,
            self.usize("label.dilation_iterations", 1)?,
        ))
    }

    pub fn coreg_cell_size(&self) -> Result<f64, ConfigError> {
        self.f64("coreg.cell_size", 3.0)
    }

    pub fn coreg_spread_threshold(&self) -> Result<f64, ConfigError> {
        self.f64("coreg.spread_threshold", 3.0)
    }

    pub fn coreg_max_shift(&self) -> Result<usize, ConfigError> {
        self.usize("coreg.max_shift", 10)
    }

    pub fn coreg_z_bin(&self) -> Result<f64, ConfigError> {
        self.f64("coreg.z_bin", 1.0)
    }

    pub fn icp_params(&self) -> Result<IcpParams, ConfigError> {
        let d = IcpParams::default();
        Ok(IcpParams {
            max_iter: self.usize("coreg.icp_max_iter", d.max_iter)?,
            huber_delta: self.f64("coreg.icp_huber_delta", d.huber_delta)?,
            tol: self.f64("coreg.icp_tol", d.tol)?,
        })
    }

    pub fn crf_iterations(&self) -> Result<usize, ConfigError> {
        self.usize("crf.iterations", 10)
    }

    pub fn crf_params(&self) -> Result<PairwiseParams, ConfigError> {
        let defaults = PairwiseParams::defaults();
        let (dg, da, db) = match defaults.kernels.as_slice() {
            [s, b] => match (s.kind, b.kind) {
                (
                    KernelKind::Spatial { theta_gamma },
                    KernelKind::Bilateral {
                        theta_alpha,
                        theta_beta,
                    },
                ) => (theta_gamma, theta_alpha, theta_beta),
                _ => unreachable!("defaults are spatial + bilateral"),
            },
            _ => unreachable!("defaults hold two kernels"),
        };
        let mut kernels = Vec::new();
        let spatial_w = self.f64("crf.spatial_weight", 1.0)?;
        if spatial_w > 0.0 {
            kernels.push(Kernel {
                weight: spatial_w,
                kind: KernelKind::Spatial {
                    theta_gamma: self.f64("crf.theta_gamma", dg)?,
                },
            });
        }
        let bilateral_w = self.f64("crf.bilateral_weight", 1.0)?;
        if bilateral_w > 0.0 {
            kernels.push(Kernel {
                weight: bilateral_w,
                kind: KernelKind::Bilateral {
                    theta_alpha: self.f64("crf.theta_alpha", da)?,
                    theta_beta: self.f64("crf.theta_beta", db)?,
                },
            });
        }
        PairwiseParams::new(kernels).map_err(|e| ConfigError::Invalid {
            what: "crf kernels".to_string(),
            msg: e.to_string(),
        })
    }

    pub fn patch_spec(&self) -> Result<PatchSpec, ConfigError> {
        let d = PatchSpec::default();
        let spec = PatchSpec {
            size: self.usize("dataprep.patch_size", d.size)?,
            overlap: self.usize("dataprep.patch_overlap", d.overlap)?,
        };
        spec.validate().map_err(|e| ConfigError::Invalid {
            what: "patch spec".to_string(),
            msg: e.to_string(),
        })?;
        Ok(spec)
    }

    pub fn augmentations(&self) -> Result<Vec<Dihedral>, ConfigError> {
        let raw = self.get("dataprep.augmentations").unwrap_or("id");
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|name| {
                Dihedral::from_name(name).ok_or_else(|| ConfigError::BadValue {
                    key: "dataprep.augmentations".to_string(),
                    value: name.to_string(),
                    msg: "unknown symmetry name".to_string(),
                })
            })
            .collect()
    }

    pub fn train_fraction(&self) -> Result<f64, ConfigError> {
        self.f64("dataprep.train_fraction", 11.0 / 16.0)
    }
}
