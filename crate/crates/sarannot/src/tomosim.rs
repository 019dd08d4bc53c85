//! TomoSAR forward model and inversion, plus a synthetic urban-scene
//! generator producing point clouds with known per-point ground truth.
//!
//! The multi-baseline measurement at one azimuth-range cell is
//! `g = R*gamma + eps` where `R[n][q] = exp(-j*2*pi*xi_n*s_q)` with
//! spatial frequencies `xi_n = -2*b_n/(lambda*r)`. The generator plays
//! the role of the real tomographic cloud so the labeling chain can be
//! exercised against exact truth.

use crate::cloud::{PointClass, PointCloud, TomoPoint, UtmPoint3};
use crate::label::{ring_edges, FootprintIndex, FootprintPolygon, PolygonError};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Representative X-band spaceborne values; overridable via config.
pub const DEFAULT_WAVELENGTH: f64 = 0.031;
pub const DEFAULT_SLANT_RANGE: f64 = 700_000.0;
pub const DEFAULT_NUM_BASELINES: usize = 25;
pub const DEFAULT_BASELINE_HALF_SPAN: f64 = 135.0;

#[derive(Error, Debug)]
pub enum TomoError {
    #[error("baseline set needs at least 2 baselines, got {0}")]
    TooFewBaselines(usize),
    #[error("wavelength and slant range must be positive")]
    BadRadarConstants,
    #[error("elevation grid needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("elevation grid must be strictly increasing and uniform")]
    NonUniformGrid,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("ridge parameter must be positive, got {0}")]
    NonPositiveMu(f64),
    #[error("linear solve failed (non-finite inputs or singular system)")]
    SolverFailure,
    #[error("threshold fraction must lie in (0,1), got {0}")]
    BadThreshold(f64),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("scene domain is empty")]
    EmptyDomain,
    #[error(transparent)]
    Polygon(#[from] PolygonError),
}

/// Perpendicular baselines of the acquisition stack together with the
/// radar constants that turn them into elevation spatial frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSet {
    pub baselines: Vec<f64>,
    pub wavelength: f64,
    pub slant_range: f64,
}

impl BaselineSet {
    pub fn new(baselines: Vec<f64>, wavelength: f64, slant_range: f64) -> Result<Self, TomoError> {
        let bs = Self {
            baselines,
            wavelength,
            slant_range,
        };
        bs.validate()?;
        Ok(bs)
    }

    /// `n` baselines uniformly spaced over `[b_min, b_max]`.
    pub fn uniform(
        n: usize,
        b_min: f64,
        b_max: f64,
        wavelength: f64,
        slant_range: f64,
    ) -> Result<Self, TomoError> {
        if n < 2 {
            return Err(TomoError::TooFewBaselines(n));
        }
        let step = (b_max - b_min) / (n - 1) as f64;
        Self::new(
            (0..n).map(|i| b_min + step * i as f64).collect(),
            wavelength,
            slant_range,
        )
    }

    pub fn validate(&self) -> Result<(), TomoError> {
        if self.baselines.len() < 2 {
            return Err(TomoError::TooFewBaselines(self.baselines.len()));
        }
        if !(self.wavelength > 0.0 && self.slant_range > 0.0) {
            return Err(TomoError::BadRadarConstants);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.baselines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.baselines.is_empty()
    }

    /// Elevation spatial frequencies `xi_n = -2*b_n/(lambda*r)` (1/m).
    pub fn spatial_frequencies(&self) -> Vec<f64> {
        self.baselines
            .iter()
            .map(|b| -2.0 * b / (self.wavelength * self.slant_range))
            .collect()
    }

    /// Rayleigh elevation resolution `lambda*r / (2*span)`.
    pub fn rayleigh_resolution(&self) -> f64 {
        let lo = self.baselines.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self
            .baselines
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        self.wavelength * self.slant_range / (2.0 * (hi - lo))
    }
}

/// Uniform discretization of the elevation axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ElevationGrid {
    samples: Vec<f64>,
}

impl ElevationGrid {
    pub fn new(samples: Vec<f64>) -> Result<Self, TomoError> {
        if samples.len() < 2 {
            return Err(TomoError::TooFewSamples(samples.len()));
        }
        let step = samples[1] - samples[0];
        if step <= 0.0 {
            return Err(TomoError::NonUniformGrid);
        }
        for w in samples.windows(2) {
            let d = w[1] - w[0];
            if d <= 0.0 || (d - step).abs() > 1e-9 {
                return Err(TomoError::NonUniformGrid);
            }
        }
        Ok(Self { samples })
    }

    /// `q` samples spanning `[lo, hi]` inclusive.
    pub fn uniform(lo: f64, hi: f64, q: usize) -> Result<Self, TomoError> {
        if q < 2 {
            return Err(TomoError::TooFewSamples(q));
        }
        let step = (hi - lo) / (q - 1) as f64;
        Self::new((0..q).map(|i| lo + step * i as f64).collect())
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.samples[1] - self.samples[0]
    }
}

/// Complex reflectivity along the elevation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectivityProfile {
    pub gamma: Vec<Complex64>,
}

impl ReflectivityProfile {
    pub fn zeros(q: usize) -> Self {
        Self {
            gamma: vec![Complex64::ZERO; q],
        }
    }

    /// All-zero profile with a single complex amplitude at `index`.
    pub fn impulse(q: usize, index: usize, amplitude: Complex64) -> Self {
        let mut p = Self::zeros(q);
        p.gamma[index] = amplitude;
        p
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.gamma.iter().map(|c| c.norm()).collect()
    }
}

/// One multi-baseline measurement vector and the noise scale it was
/// generated with (0 for noiseless or real data).
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    pub g: Vec<Complex64>,
    pub noise_sigma: f64,
}

/// `R[n][q] = exp(-j*2*pi*xi_n*s_q)`; every entry has unit modulus.
pub fn steering_matrix(bs: &BaselineSet, grid: &ElevationGrid) -> DMatrix<Complex64> {
    let xi = bs.spatial_frequencies();
    let s = grid.samples();
    DMatrix::from_fn(xi.len(), s.len(), |n, q| {
        Complex64::from_polar(1.0, -std::f64::consts::TAU * xi[n] * s[q])
    })
}

/// `g = R*gamma + eps`, `eps` i.i.d. complex circular Gaussian with
/// per-component standard deviation `sigma` (so `E|eps|^2 = 2*sigma^2`).
/// Deterministic given `seed`.
pub fn forward(
    r: &DMatrix<Complex64>,
    gamma: &ReflectivityProfile,
    sigma: f64,
    seed: u64,
) -> Result<MeasurementVector, TomoError> {
    if r.ncols() != gamma.len() {
        return Err(TomoError::DimensionMismatch(format!(
            "steering matrix has {} columns but profile has {} samples",
            r.ncols(),
            gamma.len()
        )));
    }
    if sigma < 0.0 {
        return Err(TomoError::InvalidScene(format!(
            "noise sigma must be non-negative, got {sigma}"
        )));
    }
    let clean = r * DVector::from_column_slice(&gamma.gamma);
    let mut g: Vec<Complex64> = clean.iter().copied().collect();
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        for sample in &mut g {
            *sample += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok(MeasurementVector {
        g,
        noise_sigma: sigma,
    })
}

fn check_measurement_dims(
    g: &MeasurementVector,
    r: &DMatrix<Complex64>,
) -> Result<(), TomoError> {
    if r.nrows() != g.g.len() {
        return Err(TomoError::DimensionMismatch(format!(
            "steering matrix has {} rows but measurement has {} samples",
            r.nrows(),
            g.g.len()
        )));
    }
    Ok(())
}

/// Matched-filter (beamforming) estimate `gamma_hat = R^H * g / N`.
pub fn invert_beamforming(
    g: &MeasurementVector,
    r: &DMatrix<Complex64>,
) -> Result<ReflectivityProfile, TomoError> {
    check_measurement_dims(g, r)?;
    let n = r.nrows() as f64;
    let gamma = r.adjoint() * DVector::from_column_slice(&g.g) / Complex64::new(n, 0.0);
    Ok(ReflectivityProfile {
        gamma: gamma.iter().copied().collect(),
    })
}

/// Tikhonov-regularized least squares via the normal equations
/// `(R^H R + mu*I) gamma = R^H g`; the usable inversion when N << Q.
pub fn invert_ridge(
    g: &MeasurementVector,
    r: &DMatrix<Complex64>,
    mu: f64,
) -> Result<ReflectivityProfile, TomoError> {
    if !(mu > 0.0) {
        return Err(TomoError::NonPositiveMu(mu));
    }
    check_measurement_dims(g, r)?;
    if g.g.iter().any(|c| !c.re.is_finite() || !c.im.is_finite())
        || r.iter().any(|c| !c.re.is_finite() || !c.im.is_finite())
    {
        return Err(TomoError::SolverFailure);
    }
    let rh = r.adjoint();
    let mut a = &rh * r;
    for i in 0..a.nrows() {
        a[(i, i)] += Complex64::new(mu, 0.0);
    }
    let b = rh * DVector::from_column_slice(&g.g);
    let gamma = a.lu().solve(&b).ok_or(TomoError::SolverFailure)?;
    Ok(ReflectivityProfile {
        gamma: gamma.iter().copied().collect(),
    })
}

/// One detected elevation peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub elevation: f64,
    pub magnitude: f64,
}

/// Local maxima of `|gamma_hat|` above `threshold_fraction * max`,
/// sorted by elevation. Plateaus count once and report their lowest
/// elevation; an all-zero profile yields no detections.
pub fn detect_scatterers(
    gamma_hat: &ReflectivityProfile,
    grid: &ElevationGrid,
    threshold_fraction: f64,
) -> Result<Vec<Scatterer>, TomoError> {
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return Err(TomoError::BadThreshold(threshold_fraction));
    }
    if gamma_hat.len() != grid.len() {
        return Err(TomoError::DimensionMismatch(format!(
            "profile has {} samples but grid has {}",
            gamma_hat.len(),
            grid.len()
        )));
    }
    let mag = gamma_hat.magnitudes();
    let max = mag.iter().copied().fold(0.0f64, f64::max);
    if max == 0.0 {
        return Ok(Vec::new());
    }
    let threshold = threshold_fraction * max;
    let mut peaks = Vec::new();
    let mut start = 0;
    while start < mag.len() {
        let mut end = start;
        while end + 1 < mag.len() && mag[end + 1] == mag[start] {
            end += 1;
        }
        let left_lower = start == 0 || mag[start - 1] < mag[start];
        let right_lower = end + 1 == mag.len() || mag[end + 1] < mag[start];
        if left_lower && right_lower && mag[start] > threshold {
            peaks.push(Scatterer {
                elevation: grid.samples()[start],
                magnitude: mag[start],
            });
        }
        start = end + 1;
    }
    Ok(peaks)
}

/// Per-surface-class sampling densities in points per square meter
/// (facade area is vertical: perimeter times wall height).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceDensity {
    pub ground: f64,
    pub roof: f64,
    pub facade: f64,
}

/// Synthetic urban scene: rectangular ground domain, extruded building
/// footprints, sampling densities and corruption parameters.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    /// Ground domain corners `(min, max)` in easting/northing.
    pub domain_min: [f64; 2],
    pub domain_max: [f64; 2],
    pub buildings: Vec<(FootprintPolygon, f64)>,
    pub ground_height: f64,
    pub density: SurfaceDensity,
    pub position_noise_sigma: f64,
    pub outlier_fraction: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), TomoError> {
        if !(self.domain_max[0] > self.domain_min[0] && self.domain_max[1] > self.domain_min[1]) {
            return Err(TomoError::EmptyDomain);
        }
        for (poly, roof) in &self.buildings {
            poly.validate()?;
            if *roof <= self.ground_height {
                return Err(TomoError::InvalidScene(format!(
                    "roof height {} must exceed ground height {}",
                    roof, self.ground_height
                )));
            }
        }
        if self.density.ground < 0.0 || self.density.roof < 0.0 || self.density.facade < 0.0 {
            return Err(TomoError::InvalidScene("negative density".into()));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(TomoError::InvalidScene(format!(
                "outlier fraction {} outside [0,1]",
                self.outlier_fraction
            )));
        }
        if self.position_noise_sigma < 0.0 {
            return Err(TomoError::InvalidScene("negative position noise".into()));
        }
        Ok(())
    }

    pub fn domain_area(&self) -> f64 {
        (self.domain_max[0] - self.domain_min[0]) * (self.domain_max[1] - self.domain_min[1])
    }
}

fn round_count(x: f64) -> usize {
    x.round().max(0.0) as usize
}

/// Samples a ground-truth point cloud: ground points over the domain
/// minus footprints, roof points inside footprints at their roof
/// heights, facade points on footprint edges at uniform heights, plus
/// Gaussian position noise and uniformly scattered outliers. Every
/// point carries its true class; deterministic given `seed`.
pub fn generate_scene_cloud(spec: &SceneSpec, seed: u64) -> Result<PointCloud, TomoError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let footprints: Vec<FootprintPolygon> =
        spec.buildings.iter().map(|(p, _)| p.clone()).collect();
    let index = FootprintIndex::build(&footprints);

    let mut points = Vec::new();
    let sample_in_domain = |rng: &mut ChaCha8Rng| {
        [
            rng.random_range(spec.domain_min[0]..spec.domain_max[0]),
            rng.random_range(spec.domain_min[1]..spec.domain_max[1]),
        ]
    };

    // ground: uniform over the domain minus all footprints
    let footprint_area: f64 = spec.buildings.iter().map(|(p, _)| p.area()).sum();
    let ground_area = (spec.domain_area() - footprint_area).max(0.0);
    let ground_target = round_count(spec.density.ground * ground_area);
    let mut attempts = 0usize;
    let attempt_budget = 1000 * ground_target + 1000;
    let mut placed = 0usize;
    while placed < ground_target {
        attempts += 1;
        if attempts > attempt_budget {
            return Err(TomoError::InvalidScene(
                "ground sampling exhausted; footprints cover the domain".into(),
            ));
        }
        let p = sample_in_domain(&mut rng);
        if index.contains(p) {
            continue;
        }
        points.push(TomoPoint::with_class(
            UtmPoint3::new(p[0], p[1], spec.ground_height),
            PointClass::Ground,
        ));
        placed += 1;
    }

    // roofs and facades, per building
    for (poly, roof_height) in &spec.buildings {
        let roof_target = round_count(spec.density.roof * poly.area());
        let (lo, hi) = poly.bbox();
        let mut placed = 0usize;
        let mut attempts = 0usize;
        let attempt_budget = 1000 * roof_target + 1000;
        while placed < roof_target {
            attempts += 1;
            if attempts > attempt_budget {
                return Err(TomoError::InvalidScene(
                    "roof sampling exhausted; degenerate footprint".into(),
                ));
            }
            let p = [
                rng.random_range(lo[0]..hi[0]),
                rng.random_range(lo[1]..hi[1]),
            ];
            if !crate::label::point_in_polygon_unchecked(p, poly) {
                continue;
            }
            points.push(TomoPoint::with_class(
                UtmPoint3::new(p[0], p[1], *roof_height),
                PointClass::Roof,
            ));
            placed += 1;
        }

        let wall_height = roof_height - spec.ground_height;
        let perimeter = poly.perimeter();
        let facade_target = round_count(spec.density.facade * perimeter * wall_height);
        let edges: Vec<([f64; 2], [f64; 2], f64)> = ring_edges(&poly.outer)
            .map(|(a, b)| {
                let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                (a, b, len)
            })
            .collect();
        for _ in 0..facade_target {
            // pick an arc-length position along the outer ring
            let mut t = rng.random_range(0.0..perimeter);
            let mut pos = edges[0].0;
            for (a, b, len) in &edges {
                if t <= *len {
                    let f = if *len > 0.0 { t / *len } else { 0.0 };
                    pos = [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])];
                    break;
                }
                t -= len;
            }
            let h = rng.random_range(spec.ground_height..*roof_height);
            points.push(TomoPoint::with_class(
                UtmPoint3::new(pos[0], pos[1], h),
                PointClass::Facade,
            ));
        }
    }

    // Gaussian position noise on all regular points
    if spec.position_noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.position_noise_sigma).expect("positive sigma");
        for p in &mut points {
            p.position.easting += normal.sample(&mut rng);
            p.position.northing += normal.sample(&mut rng);
            p.position.height += normal.sample(&mut rng);
        }
    }

    // outliers sized so that outliers/total matches the requested fraction
    let n_regular = points.len();
    if spec.outlier_fraction > 0.0 && n_regular > 0 {
        if spec.outlier_fraction >= 1.0 {
            return Err(TomoError::InvalidScene(
                "outlier fraction of 1 leaves no regular points to scale from".into(),
            ));
        }
        let f = spec.outlier_fraction;
        let n_out = round_count(f / (1.0 - f) * n_regular as f64);
        let max_roof = spec
            .buildings
            .iter()
            .map(|(_, h)| *h)
            .fold(spec.ground_height, f64::max);
        let span = (max_roof - spec.ground_height).max(1.0);
        let h_lo = spec.ground_height - span;
        let h_hi = max_roof + span;
        for _ in 0..n_out {
            let p = sample_in_domain(&mut rng);
            points.push(TomoPoint::with_class(
                UtmPoint3::new(p[0], p[1], rng.random_range(h_lo..h_hi)),
                PointClass::Outlier,
            ));
        }
    }

    Ok(PointCloud::new(points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn default_baselines() -> BaselineSet {
        BaselineSet::uniform(
            DEFAULT_NUM_BASELINES,
            -DEFAULT_BASELINE_HALF_SPAN,
            DEFAULT_BASELINE_HALF_SPAN,
            DEFAULT_WAVELENGTH,
            DEFAULT_SLANT_RANGE,
        )
        .unwrap()
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        assert!(matches!(
            BaselineSet::new(vec![1.0], 0.031, 7e5),
            Err(TomoError::TooFewBaselines(1))
        ));
        assert!(matches!(
            BaselineSet::new(vec![0.0, 1.0], 0.0, 7e5),
            Err(TomoError::BadRadarConstants)
        ));
        assert!(matches!(
            ElevationGrid::new(vec![0.0]),
            Err(TomoError::TooFewSamples(1))
        ));
        assert!(matches!(
            ElevationGrid::new(vec![0.0, 1.0, 1.5]),
            Err(TomoError::NonUniformGrid)
        ));
        assert!(matches!(
            ElevationGrid::new(vec![0.0, -1.0]),
            Err(TomoError::NonUniformGrid)
        ));
    }

    #[test]
    fn zero_baselines_give_all_ones_matrix() {
        let bs = BaselineSet::new(vec![0.0, 0.0, 0.0], 0.031, 7e5).unwrap();
        let grid = ElevationGrid::uniform(-50.0, 50.0, 11).unwrap();
        let r = steering_matrix(&bs, &grid);
        for c in r.iter() {
            assert_relative_eq!(c.re, 1.0, epsilon = 1e-12);
            assert_relative_eq!(c.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn entries_match_phase_formula_and_unit_modulus() {
        let bs = default_baselines();
        let grid = ElevationGrid::uniform(-100.0, 100.0, 41).unwrap();
        let r = steering_matrix(&bs, &grid);
        let xi = bs.spatial_frequencies();
        for (n, &x) in xi.iter().enumerate() {
            for (q, &s) in grid.samples().iter().enumerate() {
                let expected = Complex64::from_polar(1.0, -std::f64::consts::TAU * x * s);
                assert_relative_eq!(r[(n, q)].re, expected.re, epsilon = 1e-12);
                assert_relative_eq!(r[(n, q)].im, expected.im, epsilon = 1e-12);
                assert_relative_eq!(r[(n, q)].norm(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn opposite_baselines_conjugate_rows() {
        let bs = BaselineSet::new(vec![-80.0, 80.0], 0.031, 7e5).unwrap();
        let grid = ElevationGrid::uniform(-60.0, 60.0, 31).unwrap();
        let r = steering_matrix(&bs, &grid);
        for q in 0..grid.len() {
            let conj = r[(1, q)].conj();
            assert_relative_eq!(r[(0, q)].re, conj.re, epsilon = 1e-12);
            assert_relative_eq!(r[(0, q)].im, conj.im, epsilon = 1e-12);
        }
    }

    /// Baselines chosen so xi_n*s_q lands on an N-point DFT lattice; the
    /// steering matrix is then the DFT matrix and (1/N) R^H R = I.
    fn dft_case(n: usize) -> (BaselineSet, ElevationGrid) {
        let (lambda, r) = (0.031, 7e5);
        // xi_k = k/n  =>  b_k = -k*lambda*r/(2n)
        let baselines: Vec<f64> = (0..n)
            .map(|k| -(k as f64 / n as f64) * lambda * r / 2.0)
            .collect();
        let bs = BaselineSet::new(baselines, lambda, r).unwrap();
        let grid = ElevationGrid::uniform(0.0, (n - 1) as f64, n).unwrap();
        (bs, grid)
    }

    #[test]
    fn dft_sampling_is_orthogonal() {
        let (bs, grid) = dft_case(16);
        let r = steering_matrix(&bs, &grid);
        let gram = r.adjoint() * &r / Complex64::new(16.0, 0.0);
        for i in 0..16 {
            for j in 0..16 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(gram[(i, j)].re, expected, epsilon = 1e-9);
                assert_relative_eq!(gram[(i, j)].im, 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn forward_is_linear_and_selects_columns() {
        let bs = default_baselines();
        let grid = ElevationGrid::uniform(-100.0, 100.0, 51).unwrap();
        let r = steering_matrix(&bs, &grid);

        let zero = forward(&r, &ReflectivityProfile::zeros(51), 0.0, 1).unwrap();
        assert!(zero.g.iter().all(|c| c.norm() == 0.0));

        let q0 = 17;
        let g = forward(
            &r,
            &ReflectivityProfile::impulse(51, q0, Complex64::ONE),
            0.0,
            1,
        )
        .unwrap();
        for n in 0..bs.len() {
            assert_relative_eq!(g.g[n].re, r[(n, q0)].re, epsilon = 1e-12);
            assert_relative_eq!(g.g[n].im, r[(n, q0)].im, epsilon = 1e-12);
        }

        assert!(matches!(
            forward(&r, &ReflectivityProfile::zeros(50), 0.0, 1),
            Err(TomoError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn forward_is_deterministic_per_seed() {
        let bs = default_baselines();
        let grid = ElevationGrid::uniform(-100.0, 100.0, 51).unwrap();
        let r = steering_matrix(&bs, &grid);
        let gamma = ReflectivityProfile::impulse(51, 10, Complex64::ONE);
        let a = forward(&r, &gamma, 0.1, 42).unwrap();
        let b = forward(&r, &gamma, 0.1, 42).unwrap();
        let c = forward(&r, &gamma, 0.1, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_power_is_two_sigma_squared() {
        let bs = default_baselines();
        let grid = ElevationGrid::uniform(-100.0, 100.0, 51).unwrap();
        let r = steering_matrix(&bs, &grid);
        let gamma = ReflectivityProfile::zeros(51);
        let sigma = 0.3;
        let mut total = 0.0;
        let mut count = 0usize;
        for seed in 0..400 {
            let g = forward(&r, &gamma, sigma, seed).unwrap();
            for c in &g.g {
                total += c.norm_sqr();
                count += 1;
            }
        }
        let mean_power = total / count as f64;
        assert!(count >= 10_000);
        assert_relative_eq!(mean_power, 2.0 * sigma * sigma, max_relative = 0.05);
    }

    #[test]
    fn beamforming_peaks_at_the_scatterer() {
        let bs = default_baselines();
        let grid = ElevationGrid::uniform(-100.0, 100.0, 201).unwrap();
        let r = steering_matrix(&bs, &grid);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let q0 = rng.random_range(0..201);
            let g = forward(
                &r,
                &ReflectivityProfile::impulse(201, q0, Complex64::ONE),
                0.0,
                0,
            )
            .unwrap();
            let est = invert_beamforming(&g, &r).unwrap();
            let mag = est.magnitudes();
            let argmax = mag
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert!(
                (argmax as i64 - q0 as i64).unsigned_abs() <= 1,
                "peak at {argmax}, truth {q0}"
            );
        }

        let zero = MeasurementVector {
            g: vec![Complex64::ZERO; bs.len()],
            noise_sigma: 0.0,
        };
        let est = invert_beamforming(&zero, &r).unwrap();
        assert!(est.magnitudes().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn two_scatterers_at_twice_rayleigh_separate() {
        let bs = default_baselines();
        let rho = bs.rayleigh_resolution();
        // cells at resolution scale (2*rho spans 24 cells): the mutual
        // sidelobe of two in-phase scatterers pulls each peak a few
        // meters outward, which grids much finer than rho would resolve
        // as a multi-cell miss
        let ds = 2.0 * rho / 24.0;
        let grid = ElevationGrid::uniform(-100.0 * ds, 100.0 * ds, 201).unwrap();
        let r = steering_matrix(&bs, &grid);
        let (q1, q2) = (88usize, 112usize);
        let mut gamma = ReflectivityProfile::zeros(201);
        gamma.gamma[q1] = Complex64::ONE;
        gamma.gamma[q2] = Complex64::ONE;
        let g = forward(&r, &gamma, 0.0, 0).unwrap();
        let est = invert_beamforming(&g, &r).unwrap();
        let peaks = detect_scatterers(&est, &grid, 0.5).unwrap();
        assert_eq!(peaks.len(), 2, "peaks: {peaks:?}");
        assert!((peaks[0].elevation - grid.samples()[q1]).abs() <= grid.spacing() + 1e-9);
        assert!((peaks[1].elevation - grid.samples()[q2]).abs() <= grid.spacing() + 1e-9);
    }

    #[test]
    fn ridge_shrinks_with_mu_and_recovers_orthogonal_case() {
        let bs = default_baselines();
        let grid = ElevationGrid::uniform(-100.0, 100.0, 201).unwrap();
        let r = steering_matrix(&bs, &grid);
        let gamma = ReflectivityProfile::impulse(201, 88, Complex64::new(2.0, -1.0));
        let g = forward(&r, &gamma, 0.0, 0).unwrap();

        assert!(matches!(
            invert_ridge(&g, &r, 0.0),
            Err(TomoError::NonPositiveMu(_))
        ));

        let norm =
            |p: &ReflectivityProfile| p.gamma.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let big = invert_ridge(&g, &r, 1e6).unwrap();
        let small = invert_ridge(&g, &r, 1e3).unwrap();
        assert!(norm(&big) < norm(&small));

        let residual = |p: &ReflectivityProfile| {
            let pred = &r * DVector::from_column_slice(&p.gamma);
            pred.iter()
                .zip(&g.g)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
        };
        let mut last = f64::INFINITY;
        for mu in [1e4, 1e2, 1.0, 1e-2, 1e-4] {
            let res = residual(&invert_ridge(&g, &r, mu).unwrap());
            assert!(
                res <= last + 1e-9,
                "residual must not increase as mu decreases"
            );
            last = res;
        }

        // zero data solves to zero
        let zero = MeasurementVector {
            g: vec![Complex64::ZERO; bs.len()],
            noise_sigma: 0.0,
        };
        let est = invert_ridge(&zero, &r, 1.0).unwrap();
        assert!(est.magnitudes().iter().all(|&m| m < 1e-15));

        // square orthogonal case: near-exact recovery at tiny mu
        let (bs, grid) = dft_case(32);
        let r = steering_matrix(&bs, &grid);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = ReflectivityProfile {
            gamma: (0..32)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        };
        let g = forward(&r, &truth, 0.0, 0).unwrap();
        let est = invert_ridge(&g, &r, 1e-12).unwrap();
        let err: f64 = est
            .gamma
            .iter()
            .zip(&truth.gamma)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let scale: f64 = truth.gamma.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        assert!(err / scale < 1e-6, "relative error {}", err / scale);
    }

    #[test]
    fn ridge_rejects_non_finite_inputs() {
        let bs = default_baselines();
        let grid = ElevationGrid::uniform(-10.0, 10.0, 11).unwrap();
        let r = steering_matrix(&bs, &grid);
        let mut g = MeasurementVector {
            g: vec![Complex64::ZERO; bs.len()],
            noise_sigma: 0.0,
        };
        g.g[0] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(
            invert_ridge(&g, &r, 1.0),
            Err(TomoError::SolverFailure)
        ));
    }

    #[test]
    fn scatterer_detection_rules() {
        let grid = ElevationGrid::uniform(0.0, 10.0, 11).unwrap();

        let impulse = ReflectivityProfile::impulse(11, 4, Complex64::new(0.0, 3.0));
        let peaks = detect_scatterers(&impulse, &grid, 0.5).unwrap();
        assert_eq!(peaks.len(), 1);
        assert_relative_eq!(peaks[0].elevation, 4.0);
        assert_relative_eq!(peaks[0].magnitude, 3.0);

        let mut two = ReflectivityProfile::zeros(11);
        two.gamma[2] = Complex64::ONE;
        two.gamma[8] = Complex64::ONE;
        let peaks = detect_scatterers(&two, &grid, 0.5).unwrap();
        assert_eq!(peaks.len(), 2);
        assert!(peaks[0].elevation < peaks[1].elevation);

        // sub-threshold secondary peak is dropped
        two.gamma[8] = Complex64::new(0.4, 0.0);
        let peaks = detect_scatterers(&two, &grid, 0.5).unwrap();
        assert_eq!(peaks.len(), 1);

        // flat profile: single detection at the lowest elevation
        let flat = ReflectivityProfile {
            gamma: vec![Complex64::ONE; 11],
        };
        let peaks = detect_scatterers(&flat, &grid, 0.5).unwrap();
        assert_eq!(peaks.len(), 1);
        assert_relative_eq!(peaks[0].elevation, 0.0);

        assert!(detect_scatterers(&ReflectivityProfile::zeros(11), &grid, 0.5)
            .unwrap()
            .is_empty());
        assert!(matches!(
            detect_scatterers(&impulse, &grid, 1.0),
            Err(TomoError::BadThreshold(_))
        ));
        assert!(matches!(
            detect_scatterers(&ReflectivityProfile::zeros(5), &grid, 0.5),
            Err(TomoError::DimensionMismatch(_))
        ));
    }

    fn square_footprint(x0: f64, y0: f64, side: f64) -> FootprintPolygon {
        FootprintPolygon::new(vec![
            [x0, y0],
            [x0 + side, y0],
            [x0 + side, y0 + side],
            [x0, y0 + side],
        ])
    }

    fn basic_scene() -> SceneSpec {
        SceneSpec {
            domain_min: [-20.0, -20.0],
            domain_max: [20.0, 20.0],
            buildings: vec![(square_footprint(0.0, 0.0, 10.0), 15.0)],
            ground_height: 0.0,
            density: SurfaceDensity {
                ground: 0.0,
                roof: 1.0,
                facade: 0.0,
            },
            position_noise_sigma: 0.0,
            outlier_fraction: 0.0,
        }
    }

    #[test]
    fn roof_sampling_counts_and_heights_are_exact() {
        let cloud = generate_scene_cloud(&basic_scene(), 99).unwrap();
        assert_eq!(cloud.len(), 100);
        let poly = square_footprint(0.0, 0.0, 10.0);
        for p in cloud.iter() {
            assert_eq!(p.class, Some(PointClass::Roof));
            assert_eq!(p.position.height, 15.0);
            assert!(crate::label::point_in_polygon_unchecked(
                [p.position.easting, p.position.northing],
                &poly
            ));
        }
    }

    #[test]
    fn ground_points_avoid_footprints() {
        let mut spec = basic_scene();
        spec.density = SurfaceDensity {
            ground: 1.0,
            roof: 0.0,
            facade: 0.0,
        };
        let cloud = generate_scene_cloud(&spec, 5).unwrap();
        // domain 40x40 minus the 10x10 footprint
        assert_eq!(cloud.len(), 1500);
        let poly = square_footprint(0.0, 0.0, 10.0);
        for p in cloud.iter() {
            assert_eq!(p.class, Some(PointClass::Ground));
            assert_eq!(p.position.height, 0.0);
            assert!(!crate::label::point_in_polygon_unchecked(
                [p.position.easting, p.position.northing],
                &poly
            ));
        }
    }

    #[test]
    fn facade_points_lie_between_ground_and_roof() {
        let mut spec = basic_scene();
        spec.density = SurfaceDensity {
            ground: 0.0,
            roof: 0.0,
            facade: 0.5,
        };
        let cloud = generate_scene_cloud(&spec, 5).unwrap();
        // perimeter 40 m x wall 15 m x 0.5 pts/m^2
        assert_eq!(cloud.len(), 300);
        for p in cloud.iter() {
            assert_eq!(p.class, Some(PointClass::Facade));
            assert!(p.position.height >= 0.0 && p.position.height <= 15.0);
            // on the square's boundary
            let (e, n) = (p.position.easting, p.position.northing);
            let on_edge = (e.abs() < 1e-9 || (e - 10.0).abs() < 1e-9) && (0.0..=10.0).contains(&n)
                || (n.abs() < 1e-9 || (n - 10.0).abs() < 1e-9) && (0.0..=10.0).contains(&e);
            assert!(on_edge, "({e}, {n}) not on footprint boundary");
        }
    }

    #[test]
    fn scene_generation_edge_cases() {
        let mut spec = basic_scene();
        spec.density = SurfaceDensity {
            ground: 0.0,
            roof: 0.0,
            facade: 0.0,
        };
        assert!(generate_scene_cloud(&spec, 0).unwrap().is_empty());

        spec.domain_max = spec.domain_min;
        assert!(matches!(
            generate_scene_cloud(&spec, 0),
            Err(TomoError::EmptyDomain)
        ));

        let mut spec = basic_scene();
        spec.buildings[0].1 = -1.0;
        assert!(matches!(
            generate_scene_cloud(&spec, 0),
            Err(TomoError::InvalidScene(_))
        ));
    }

    #[test]
    fn outlier_fraction_scales_counts() {
        let mut spec = basic_scene();
        spec.outlier_fraction = 0.2;
        let cloud = generate_scene_cloud(&spec, 11).unwrap();
        let outliers = cloud
            .iter()
            .filter(|p| p.class == Some(PointClass::Outlier))
            .count();
        assert_eq!(cloud.len(), 125);
        assert_eq!(outliers, 25);
    }

    #[test]
    fn scene_cloud_is_deterministic_per_seed() {
        let mut spec = basic_scene();
        spec.position_noise_sigma = 0.1;
        spec.outlier_fraction = 0.1;
        spec.density.ground = 0.5;
        spec.density.facade = 0.2;
        let a = generate_scene_cloud(&spec, 123).unwrap();
        let b = generate_scene_cloud(&spec, 123).unwrap();
        let c = generate_scene_cloud(&spec, 124).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
