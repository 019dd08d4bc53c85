//! Rigid 3-D transforms and Huber-weighted point-to-point ICP with a
//! uniform-grid nearest-neighbor index.

use super::CoregError;
use crate::cloud::{PointCloud, UtmPoint3};
use nalgebra::{Matrix3, Unit, Vector3};
use rayon::prelude::*;

/// Proper rigid motion `x -> R x + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, CoregError> {
        let t = Self {
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::from(t),
        }
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64, translation: [f64; 3]) -> Self {
        let rotation = nalgebra::Rotation3::from_axis_angle(
            &Unit::new_normalize(Vector3::from(axis)),
            angle,
        );
        Self {
            rotation: rotation.into_inner(),
            translation: Vector3::from(translation),
        }
    }

    /// Orthonormality and determinant +1, both within 1e-9.
    pub fn validate(&self) -> Result<(), CoregError> {
        let gram = self.rotation.transpose() * self.rotation;
        let drift = (gram - Matrix3::identity()).abs().max();
        if drift > 1e-9 || (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(CoregError::NotARotation);
        }
        Ok(())
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_point(&self, p: &UtmPoint3) -> UtmPoint3 {
        let v = self.apply(&Vector3::new(p.easting, p.northing, p.height));
        UtmPoint3::new(v.x, v.y, v.z)
    }

    /// `self` applied after `inner`: `x -> self(inner(x))`.
    pub fn compose(&self, inner: &Self) -> Self {
        Self {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        (((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
    }
}

/// Uniform-grid spatial index over 3-D points for nearest-neighbor
/// queries; ring search widens until no closer cell can exist.
pub struct GridIndex3 {
    points: Vec<Vector3<f64>>,
    origin: Vector3<f64>,
    cell: f64,
    dims: [usize; 3],
    buckets: Vec<Vec<u32>>,
}

impl GridIndex3 {
    pub fn build(points: Vec<Vector3<f64>>) -> Self {
        assert!(!points.is_empty(), "index needs at least one point");
        let mut lo = points[0];
        let mut hi = points[0];
        for p in &points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = (hi - lo).map(|e| e.max(1e-9));
        let volume = extent.x * extent.y * extent.z;
        let mut cell = (volume / points.len() as f64).cbrt().max(1e-9);
        // cap the total cell count so degenerate extents stay bounded
        loop {
            let dims = extent.map(|e| (e / cell).floor() + 1.0);
            if dims.x * dims.y * dims.z <= 2_000_000.0 {
                break;
            }
            cell *= 2.0;
        }
        let dims = [
            (extent.x / cell).floor() as usize + 1,
            (extent.y / cell).floor() as usize + 1,
            (extent.z / cell).floor() as usize + 1,
        ];
        let mut buckets = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for (i, p) in points.iter().enumerate() {
            let c = Self::cell_of(p, &lo, cell, &dims);
            buckets[Self::flat(&c, &dims)].push(i as u32);
        }
        Self {
            points,
            origin: lo,
            cell,
            dims,
            buckets,
        }
    }

    fn cell_of(p: &Vector3<f64>, origin: &Vector3<f64>, cell: f64, dims: &[usize; 3]) -> [usize; 3] {
        let mut out = [0usize; 3];
        for k in 0..3 {
            let v = ((p[k] - origin[k]) / cell).floor();
            out[k] = (v.max(0.0) as usize).min(dims[k] - 1);
        }
        out
    }

    fn flat(c: &[usize; 3], dims: &[usize; 3]) -> usize {
        (c[2] * dims[1] + c[1]) * dims[0] + c[0]
    }

    /// Index and distance of the closest point to `q`; ties keep the
    /// lowest point index (fixed scan order).
    pub fn nearest(&self, q: &Vector3<f64>) -> (usize, f64) {
        let center = Self::cell_of(q, &self.origin, self.cell, &self.dims);
        // distance from q to its (possibly clamped) center cell box;
        // nonzero only for queries outside the grid
        let mut outside = 0.0f64;
        for k in 0..3 {
            let lo = self.origin[k] + center[k] as f64 * self.cell;
            let hi = lo + self.cell;
            outside = outside.max(lo - q[k]).max(q[k] - hi);
        }
        let max_rad = (0..3)
            .map(|k| center[k].max(self.dims[k] - 1 - center[k]))
            .max()
            .unwrap();

        let mut best = (usize::MAX, f64::INFINITY);
        for rad in 0..=max_rad {
            // every cell on this ring is >= (rad-1)*cell away laterally
            // and >= `outside` away along the clamped axis, so once the
            // quadrature sum exceeds the best hit no ring can beat it
            let lateral = ((rad as f64 - 1.0) * self.cell).max(0.0);
            if best.1.is_finite() && lateral.hypot(outside) > best.1 {
                break;
            }
            // visit only the shell: full faces at |dz| = r or |dy| = r,
            // otherwise just the two dx endpoints
            let r = rad as isize;
            for dz in -r..=r {
                for dy in -r..=r {
                    if dz.abs() == r || dy.abs() == r {
                        for dx in -r..=r {
                            self.scan_cell(&center, dx, dy, dz, q, &mut best);
                        }
                    } else {
                        self.scan_cell(&center, -r, dy, dz, q, &mut best);
                        self.scan_cell(&center, r, dy, dz, q, &mut best);
                    }
                }
            }
        }
        best
    }

    fn scan_cell(
        &self,
        center: &[usize; 3],
        dx: isize,
        dy: isize,
        dz: isize,
        q: &Vector3<f64>,
        best: &mut (usize, f64),
    ) {
        let cx = center[0] as isize + dx;
        let cy = center[1] as isize + dy;
        let cz = center[2] as isize + dz;
        if cx < 0
            || cy < 0
            || cz < 0
            || cx as usize >= self.dims[0]
            || cy as usize >= self.dims[1]
            || cz as usize >= self.dims[2]
        {
            return;
        }
        let c = [cx as usize, cy as usize, cz as usize];
        for &idx in &self.buckets[Self::flat(&c, &self.dims)] {
            let d = (self.points[idx as usize] - q).norm();
            if d < best.1 {
                *best = (idx as usize, d);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// ICP knobs. `huber_delta = f64::INFINITY` disables the robust
/// weighting, which reduces to plain least squares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_iter: usize,
    pub huber_delta: f64,
    pub tol: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iter: 50,
            huber_delta: 1.0,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    /// Full registration including the initial guess.
    pub transform: RigidTransform3,
    pub iterations: usize,
    /// Mean nearest-correspondence distance at the last iteration.
    pub mean_distance: f64,
    /// Huber objective at the start of every iteration; non-increasing.
    pub objective_history: Vec<f64>,
}

fn huber_loss(d: f64, delta: f64) -> f64 {
    if d <= delta {
        0.5 * d * d
    } else {
        delta * (d - 0.5 * delta)
    }
}

fn to_vectors(cloud: &PointCloud) -> Vec<Vector3<f64>> {
    cloud
        .iter()
        .map(|p| Vector3::new(p.position.easting, p.position.northing, p.position.height))
        .collect()
}

/// Huber-weighted point-to-point ICP.
///
/// Alternates nearest-neighbor correspondence with a closed-form
/// weighted rigid solve (SVD of the weighted cross-covariance, with the
/// determinant sign corrected). IRLS weights `min(1, delta/r)` majorize
/// the Huber loss, so the objective never increases. Stops when the mean
/// correspondence distance changes by less than `tol`.
pub fn robust_icp(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform3,
    params: IcpParams,
) -> Result<IcpResult, CoregError> {
    if source.len() < 3 {
        return Err(CoregError::TooFewPoints(source.len()));
    }
    if target.is_empty() {
        return Err(CoregError::EmptyCloud);
    }
    if params.max_iter == 0 {
        return Err(CoregError::BadIcpParams("max_iter must be at least 1".into()));
    }
    if !(params.huber_delta > 0.0) {
        return Err(CoregError::BadIcpParams(format!(
            "huber_delta must be positive, got {}",
            params.huber_delta
        )));
    }
    if !(params.tol >= 0.0) {
        return Err(CoregError::BadIcpParams(format!(
            "tol must be non-negative, got {}",
            params.tol
        )));
    }
    init.validate()?;

    let src = to_vectors(source);
    let index = GridIndex3::build(to_vectors(target));

    let mut current = init.clone();
    let mut prev_mean = f64::INFINITY;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut mean_d = f64::INFINITY;

    for iter in 0..params.max_iter {
        iterations = iter + 1;
        let transformed: Vec<Vector3<f64>> = src.par_iter().map(|p| current.apply(p)).collect();
        let corr: Vec<(usize, f64)> =
            transformed.par_iter().map(|p| index.nearest(p)).collect();

        let objective: f64 = corr
            .iter()
            .map(|&(_, d)| huber_loss(d, params.huber_delta))
            .sum();
        history.push(objective);
        mean_d = corr.iter().map(|&(_, d)| d).sum::<f64>() / src.len() as f64;
        if (prev_mean - mean_d).abs() < params.tol {
            break;
        }
        prev_mean = mean_d;

        // IRLS majorization step: weights from current residuals, then
        // one weighted Kabsch solve
        let weights: Vec<f64> = corr
            .iter()
            .map(|&(_, d)| if d <= params.huber_delta { 1.0 } else { params.huber_delta / d })
            .collect();
        let wsum: f64 = weights.iter().sum();
        let mut p_bar = Vector3::zeros();
        let mut q_bar = Vector3::zeros();
        for ((p, &(j, _)), &w) in transformed.iter().zip(&corr).zip(&weights) {
            p_bar += w * p;
            q_bar += w * index.points[j];
        }
        p_bar /= wsum;
        q_bar /= wsum;

        let mut h = Matrix3::zeros();
        for ((p, &(j, _)), &w) in transformed.iter().zip(&corr).zip(&weights) {
            h += w * (p - p_bar) * (index.points[j] - q_bar).transpose();
        }
        let svd = h.svd(true, true);
        let sv = svd.singular_values;
        if sv[1] <= (sv[0] * 1e-9).max(1e-15) {
            return Err(CoregError::DegenerateGeometry);
        }
        let u = svd.u.expect("svd with u");
        let v = svd.v_t.expect("svd with v_t").transpose();
        let sign = (v * u.transpose()).determinant().signum();
        let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign)) * u.transpose();
        let increment = RigidTransform3 {
            rotation,
            translation: q_bar - rotation * p_bar,
        };
        current = increment.compose(&current);
    }

    current.validate()?;
    Ok(IcpResult {
        transform: current,
        iterations,
        mean_distance: mean_d,
        objective_history: history,
    })
}
