//! Coarse alignment: integer planimetric shift from edge-image
//! cross-correlation, vertical shift from height-histogram correlation,
//! and the facade filter that precedes fine registration.

use super::raster::EdgeRaster;
use super::CoregError;
use crate::cloud::PointCloud;

/// Planimetric alignment result: apply `(dx, dy)` cells to the second
/// image to register it onto the first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XyShift {
    pub dx: i64,
    pub dy: i64,
    pub score: f64,
}

/// Zero-normalized cross-correlation of two samples; `None` when either
/// side has no variance.
fn zncc(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    if a.len() < 2 {
        return None;
    }
    let (ma, mb) = (
        a.iter().sum::<f64>() / n,
        b.iter().sum::<f64>() / n,
    );
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Exhaustive integer-shift search maximizing ZNCC over the valid
/// overlap. Returns the displacement that registers `b` onto `a`; ties
/// break toward the smallest `dx^2+dy^2`, then lexicographic `(dx, dy)`.
pub fn coarse_align_xy(
    a: &EdgeRaster,
    b: &EdgeRaster,
    max_shift: usize,
) -> Result<XyShift, CoregError> {
    if (a.magnitude.cell_size - b.magnitude.cell_size).abs() > 1e-12 {
        return Err(CoregError::CellSizeMismatch(
            a.magnitude.cell_size,
            b.magnitude.cell_size,
        ));
    }
    let m = max_shift as i64;
    let (aw, ah) = (a.magnitude.raster.width() as i64, a.magnitude.raster.height() as i64);
    let (bw, bh) = (b.magnitude.raster.width() as i64, b.magnitude.raster.height() as i64);
    let mut best: Option<XyShift> = None;
    for dy in -m..=m {
        for dx in -m..=m {
            let mut sa = Vec::new();
            let mut sb = Vec::new();
            for r in 0..ah {
                let br = r - dy;
                if br < 0 || br >= bh {
                    continue;
                }
                for c in 0..aw {
                    let bc = c - dx;
                    if bc < 0 || bc >= bw {
                        continue;
                    }
                    if *a.valid.get(c as usize, r as usize) == 0
                        || *b.valid.get(bc as usize, br as usize) == 0
                    {
                        continue;
                    }
                    sa.push(*a.magnitude.raster.get(c as usize, r as usize));
                    sb.push(*b.magnitude.raster.get(bc as usize, br as usize));
                }
            }
            let Some(score) = zncc(&sa, &sb) else { continue };
            let candidate = XyShift { dx, dy, score };
            let better = match &best {
                None => true,
                Some(cur) => {
                    let (cn, nn) = (cur.dx * cur.dx + cur.dy * cur.dy, dx * dx + dy * dy);
                    score > cur.score
                        || (score == cur.score
                            && (nn < cn || (nn == cn && (dx, dy) < (cur.dx, cur.dy))))
                }
            };
            if better {
                best = Some(candidate);
            }
        }
    }
    best.ok_or(CoregError::DegenerateCorrelation)
}

/// Converts an index-space alignment shift into the world-frame
/// easting/northing displacement to add to the second cloud; the two
/// rasters' origins generally differ because each frame hugs its own
/// cloud's bounding box.
pub fn xy_shift_to_world(a: &EdgeRaster, b: &EdgeRaster, s: &XyShift) -> (f64, f64) {
    let cell = a.magnitude.cell_size;
    (
        a.magnitude.origin_e - b.magnitude.origin_e + s.dx as f64 * cell,
        a.magnitude.origin_n - b.magnitude.origin_n + s.dy as f64 * cell,
    )
}

fn height_histogram(cloud: &PointCloud, lo: f64, bin: f64, nbins: usize) -> Vec<f64> {
    let mut hist = vec![0.0f64; nbins];
    for p in cloud.iter() {
        let idx = (((p.position.height - lo) / bin).floor() as usize).min(nbins - 1);
        hist[idx] += 1.0;
    }
    hist
}

/// Vertical offset from height-histogram cross-correlation on a common
/// bin grid spanning both clouds. Returns the bin-quantized shift to add
/// to the second cloud's heights; ties break toward the smallest |dz|,
/// then the smaller dz.
pub fn coarse_align_z(
    cloud_a: &PointCloud,
    cloud_b: &PointCloud,
    bin: f64,
) -> Result<f64, CoregError> {
    if !(bin > 0.0) {
        return Err(CoregError::BadBinWidth(bin));
    }
    let (Some((lo_a, hi_a)), Some((lo_b, hi_b))) =
        (cloud_a.height_range(), cloud_b.height_range())
    else {
        return Err(CoregError::EmptyCloud);
    };
    let lo = lo_a.min(lo_b);
    let hi = hi_a.max(hi_b);
    let nbins = ((hi - lo) / bin).floor() as usize + 1;
    let ha = height_histogram(cloud_a, lo, bin, nbins);
    let hb = height_histogram(cloud_b, lo, bin, nbins);

    let n = nbins as i64;
    let mut best_k = 0i64;
    let mut best_score = f64::NEG_INFINITY;
    for k in -(n - 1)..=(n - 1) {
        let mut score = 0.0;
        for i in 0..n {
            let j = i - k;
            if j >= 0 && j < n {
                score += ha[i as usize] * hb[j as usize];
            }
        }
        let better = score > best_score
            || (score == best_score && (k.abs() < best_k.abs() || (k.abs() == best_k.abs() && k < best_k)));
        if better {
            best_score = score;
            best_k = k;
        }
    }
    Ok(best_k as f64 * bin)
}

/// Drops every point lying in a cell whose within-cell height spread
/// (max minus min) exceeds `spread_threshold`; facades show up as tall
/// vertical runs inside single cells.
pub fn remove_facade_points(
    cloud: &PointCloud,
    cell_size: f64,
    spread_threshold: f64,
) -> Result<PointCloud, CoregError> {
    if !(cell_size > 0.0) {
        return Err(CoregError::BadCellSize(cell_size));
    }
    if !(spread_threshold > 0.0) {
        return Err(CoregError::BadThreshold(spread_threshold));
    }
    let Some(((min_e, min_n), (max_e, max_n))) = cloud.bbox_en() else {
        return Ok(PointCloud::default());
    };
    let width = ((max_e - min_e) / cell_size).floor() as usize + 1;
    let height = ((max_n - min_n) / cell_size).floor() as usize + 1;
    let cell_of = |p: &crate::cloud::TomoPoint| -> usize {
        let col = (((p.position.easting - min_e) / cell_size).floor() as usize).min(width - 1);
        let row = (((p.position.northing - min_n) / cell_size).floor() as usize).min(height - 1);
        row * width + col
    };
    let mut lo = vec![f64::INFINITY; width * height];
    let mut hi = vec![f64::NEG_INFINITY; width * height];
    for p in cloud.iter() {
        let idx = cell_of(p);
        lo[idx] = lo[idx].min(p.position.height);
        hi[idx] = hi[idx].max(p.position.height);
    }
    let kept = cloud
        .iter()
        .filter(|p| {
            let idx = cell_of(p);
            hi[idx] - lo[idx] <= spread_threshold
        })
        .copied()
        .collect();
    Ok(PointCloud::new(kept))
}
