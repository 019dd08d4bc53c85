//! Fully-connected pairwise CRF over the pixel grid with Potts
//! compatibility and Gaussian kernels, refined by parallel mean-field
//! updates. Message passing is exact O(N^2) at desk scale; a windowed
//! mode truncates each pixel's neighborhood at three bandwidths for
//! larger frames.
//!
//! Energy of a labeling x:
//! `E(x) = sum_i u[i][x_i] + sum_{i<j} [x_i != x_j] * sum_m w_m * G_m(f_i, f_j)`
//! where `G_m` is a unit-height Gaussian over spatial (and, for the
//! bilateral kernel, intensity) features.

use crate::raster::Raster;
use rayon::prelude::*;
use thiserror::Error;

/// Default smoothing parameters: one spatial and one bilateral kernel,
/// unit weights. Bandwidths in pixels, `theta_beta` in intensity units.
pub const DEFAULT_THETA_GAMMA: f64 = 3.0;
pub const DEFAULT_THETA_ALPHA: f64 = 60.0;
pub const DEFAULT_THETA_BETA: f64 = 10.0;

/// Brute-force search bound on `labels^pixels`.
const BRUTEFORCE_LIMIT: f64 = (1u32 << 20) as f64;

#[derive(Error, Debug)]
pub enum CrfError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unary potentials must be finite")]
    NonFinite,
    #[error("need at least 2 labels, got {0}")]
    TooFewLabels(usize),
    #[error("pairwise parameters invalid: {0}")]
    BadParams(String),
    #[error("label {0} out of range for {1} labels")]
    LabelOutOfRange(u8, usize),
    #[error("instance too large for exhaustive search: {0} labelings exceed 2^20")]
    TooLarge(f64),
}

/// Per-pixel, per-label unary potentials (negative log-scores), stored
/// as `u[(row*width + col)*labels + l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryField {
    width: usize,
    height: usize,
    labels: usize,
    u: Vec<f64>,
}

impl UnaryField {
    pub fn new(width: usize, height: usize, labels: usize, u: Vec<f64>) -> Result<Self, CrfError> {
        if labels < 2 {
            return Err(CrfError::TooFewLabels(labels));
        }
        if u.len() != width * height * labels {
            return Err(CrfError::DimensionMismatch(format!(
                "unary buffer holds {} values, expected {}",
                u.len(),
                width * height * labels
            )));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(CrfError::NonFinite);
        }
        Ok(Self {
            width,
            height,
            labels,
            u,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        labels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self, CrfError> {
        let mut u = Vec::with_capacity(width * height * labels);
        for row in 0..height {
            for col in 0..width {
                for l in 0..labels {
                    u.push(f(col, row, l));
                }
            }
        }
        Self::new(width, height, labels, u)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn at(&self, pixel: usize, label: usize) -> f64 {
        self.u[pixel * self.labels + label]
    }

    pub fn data(&self) -> &[f64] {
        &self.u
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    /// Pure smoothing over pixel distance.
    Spatial { theta_gamma: f64 },
    /// Appearance-preserving smoothing over pixel distance and
    /// intensity difference.
    Bilateral { theta_alpha: f64, theta_beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub weight: f64,
    pub kind: KernelKind,
}

/// Weighted Gaussian kernel bank with Potts compatibility.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseParams {
    pub kernels: Vec<Kernel>,
}

impl PairwiseParams {
    pub fn new(kernels: Vec<Kernel>) -> Result<Self, CrfError> {
        if kernels.is_empty() {
            return Err(CrfError::BadParams("need at least one kernel".into()));
        }
        for k in &kernels {
            if !(k.weight >= 0.0) {
                return Err(CrfError::BadParams(format!(
                    "kernel weight {} must be non-negative",
                    k.weight
                )));
            }
            let ok = match k.kind {
                KernelKind::Spatial { theta_gamma } => theta_gamma > 0.0,
                KernelKind::Bilateral {
                    theta_alpha,
                    theta_beta,
                } => theta_alpha > 0.0 && theta_beta > 0.0,
            };
            if !ok {
                return Err(CrfError::BadParams("bandwidths must be positive".into()));
            }
        }
        Ok(Self { kernels })
    }

    /// Conventional defaults; the source experiments report none.
    pub fn defaults() -> Self {
        Self {
            kernels: vec![
                Kernel {
                    weight: 1.0,
                    kind: KernelKind::Spatial {
                        theta_gamma: DEFAULT_THETA_GAMMA,
                    },
                },
                Kernel {
                    weight: 1.0,
                    kind: KernelKind::Bilateral {
                        theta_alpha: DEFAULT_THETA_ALPHA,
                        theta_beta: DEFAULT_THETA_BETA,
                    },
                },
            ],
        }
    }

    /// Largest spatial bandwidth across kernels; the windowed mode
    /// truncates messages at three times this radius.
    pub fn max_spatial_bandwidth(&self) -> f64 {
        self.kernels
            .iter()
            .map(|k| match k.kind {
                KernelKind::Spatial { theta_gamma } => theta_gamma,
                KernelKind::Bilateral { theta_alpha, .. } => theta_alpha,
            })
            .fold(0.0, f64::max)
    }

    /// Combined kernel value between two pixels.
    fn eval(&self, dx: f64, dy: f64, di: f64) -> f64 {
        let d2 = dx * dx + dy * dy;
        self.kernels
            .iter()
            .map(|k| {
                k.weight
                    * match k.kind {
                        KernelKind::Spatial { theta_gamma } => {
                            (-d2 / (2.0 * theta_gamma * theta_gamma)).exp()
                        }
                        KernelKind::Bilateral {
                            theta_alpha,
                            theta_beta,
                        } => (-d2 / (2.0 * theta_alpha * theta_alpha)
                            - di * di / (2.0 * theta_beta * theta_beta))
                            .exp(),
                    }
            })
            .sum()
    }
}

/// Per-pixel label distributions `q[pixel*labels + l]`, each row
/// summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalField {
    width: usize,
    height: usize,
    labels: usize,
    q: Vec<f64>,
}

impl MarginalField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn at(&self, pixel: usize, label: usize) -> f64 {
        self.q[pixel * self.labels + label]
    }

    pub fn data(&self) -> &[f64] {
        &self.q
    }

    /// Largest per-pixel deviation of the label sum from one.
    pub fn max_normalization_error(&self) -> f64 {
        self.q
            .chunks(self.labels)
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Message-passing strategy for one mean-field iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MessageMode {
    /// Every pixel talks to every other pixel.
    Exact,
    /// Each pixel only sees a square window of the given radius;
    /// approximation, sound when kernels have decayed at the border.
    Windowed { radius: usize },
}

fn check_image_dims(unary: &UnaryField, image: &Raster<f64>) -> Result<(), CrfError> {
    if unary.width() != image.width() || unary.height() != image.height() {
        return Err(CrfError::DimensionMismatch(format!(
            "unary field is {}x{} but image is {}x{}",
            unary.width(),
            unary.height(),
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

/// Total energy of a labeling; the pairwise term only charges pixel
/// pairs with differing labels (Potts).
pub fn energy(
    labeling: &Raster<u8>,
    unary: &UnaryField,
    pw: &PairwiseParams,
    image: &Raster<f64>,
) -> Result<f64, CrfError> {
    check_image_dims(unary, image)?;
    if labeling.width() != unary.width() || labeling.height() != unary.height() {
        return Err(CrfError::DimensionMismatch(format!(
            "labeling is {}x{} but unary field is {}x{}",
            labeling.width(),
            labeling.height(),
            unary.width(),
            unary.height()
        )));
    }
    for &l in labeling.data() {
        if l as usize >= unary.labels() {
            return Err(CrfError::LabelOutOfRange(l, unary.labels()));
        }
    }
    let n = unary.pixels();
    let w = unary.width();
    let labels = labeling.data();
    let intensities = image.data();

    let unary_term: f64 = (0..n).map(|i| unary.at(i, labels[i] as usize)).sum();

    // per-pixel partial sums over j > i, merged in index order
    let partials: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (xi, yi) = ((i % w) as f64, (i / w) as f64);
            let mut acc = 0.0;
            for j in (i + 1)..n {
                if labels[i] == labels[j] {
                    continue;
                }
                let (xj, yj) = ((j % w) as f64, (j / w) as f64);
                acc += pw.eval(xi - xj, yi - yj, intensities[i] - intensities[j]);
            }
            acc
        })
        .collect();
    Ok(unary_term + partials.iter().sum::<f64>())
}

fn softmax_neg_into(u: &[f64], out: &mut [f64]) {
    let min = u.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(u) {
        let e = (min - v).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Parallel mean-field refinement with exact message passing.
///
/// Starts from `Q = softmax(-u)` per pixel; each iteration gathers the
/// kernel-weighted marginals of all other pixels, applies the Potts
/// transform and renormalizes against the unaries. `iterations = 0`
/// returns the initialization.
pub fn mean_field_infer(
    unary: &UnaryField,
    pw: &PairwiseParams,
    image: &Raster<f64>,
    iterations: usize,
) -> Result<MarginalField, CrfError> {
    mean_field_infer_with(unary, pw, image, iterations, MessageMode::Exact)
}

/// As `mean_field_infer` with an explicit message-passing mode.
pub fn mean_field_infer_with(
    unary: &UnaryField,
    pw: &PairwiseParams,
    image: &Raster<f64>,
    iterations: usize,
    mode: MessageMode,
) -> Result<MarginalField, CrfError> {
    check_image_dims(unary, image)?;
    let (w, h, labels) = (unary.width(), unary.height(), unary.labels());
    let n = w * h;
    let intensities = image.data();

    let mut q = vec![0.0f64; n * labels];
    q.par_chunks_mut(labels).enumerate().for_each(|(i, row)| {
        softmax_neg_into(&unary.data()[i * labels..(i + 1) * labels], row);
    });

    for _ in 0..iterations {
        let prev = &q;
        let next: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let (ci, ri) = (i % w, i / w);
                let mut message = vec![0.0f64; labels];
                // neighbors in row-major order, fixed regardless of the
                // worker count
                let (r0, r1, c0, c1) = match mode {
                    MessageMode::Exact => (0, h, 0, w),
                    MessageMode::Windowed { radius } => (
                        ri.saturating_sub(radius),
                        (ri + radius + 1).min(h),
                        ci.saturating_sub(radius),
                        (ci + radius + 1).min(w),
                    ),
                };
                for rj in r0..r1 {
                    for cj in c0..c1 {
                        let j = rj * w + cj;
                        if j == i {
                            continue;
                        }
                        let k = pw.eval(
                            ci as f64 - cj as f64,
                            ri as f64 - rj as f64,
                            intensities[i] - intensities[j],
                        );
                        for l in 0..labels {
                            message[l] += k * prev[j * labels + l];
                        }
                    }
                }
                // Potts compatibility: penalty for label l is the mass
                // of all other labels
                let total: f64 = message.iter().sum();
                let mut combined = vec![0.0f64; labels];
                for l in 0..labels {
                    combined[l] = unary.at(i, l) + (total - message[l]);
                }
                let mut row = vec![0.0f64; labels];
                softmax_neg_into(&combined, &mut row);
                row
            })
            .collect();
        q = next;
    }
    Ok(MarginalField {
        width: w,
        height: h,
        labels,
        q,
    })
}

/// Per-pixel argmax readout; ties go to the lowest label index.
pub fn map_labeling(q: &MarginalField) -> Raster<u8> {
    let labels = q.labels();
    let data: Vec<u8> = q
        .data()
        .chunks(labels)
        .map(|row| {
            let mut best = 0usize;
            for l in 1..labels {
                if row[l] > row[best] {
                    best = l;
                }
            }
            best as u8
        })
        .collect();
    Raster::from_vec(q.width(), q.height(), data)
}

/// Exhaustive energy minimization over all `labels^pixels` labelings;
/// ties resolve to the lexicographically smallest labeling. Verification
/// oracle only, bounded at 2^20 labelings.
pub fn exact_map_bruteforce(
    unary: &UnaryField,
    pw: &PairwiseParams,
    image: &Raster<f64>,
) -> Result<Raster<u8>, CrfError> {
    check_image_dims(unary, image)?;
    let (w, h, labels) = (unary.width(), unary.height(), unary.labels());
    let n = w * h;
    let count = (labels as f64).powi(n as i32);
    if count > BRUTEFORCE_LIMIT {
        return Err(CrfError::TooLarge(count));
    }
    let intensities = image.data();

    // kernel values for every unordered pixel pair, computed once
    let mut pair_k = vec![0.0f64; n * n];
    for i in 0..n {
        let (xi, yi) = ((i % w) as f64, (i / w) as f64);
        for j in (i + 1)..n {
            let (xj, yj) = ((j % w) as f64, (j / w) as f64);
            pair_k[i * n + j] = pw.eval(xi - xj, yi - yj, intensities[i] - intensities[j]);
        }
    }

    let mut assignment = vec![0u8; n];
    let mut best = assignment.clone();
    let mut best_energy = f64::INFINITY;
    loop {
        let mut e: f64 = (0..n).map(|i| unary.at(i, assignment[i] as usize)).sum();
        for i in 0..n {
            for j in (i + 1)..n {
                if assignment[i] != assignment[j] {
                    e += pair_k[i * n + j];
                }
            }
        }
        // strict improvement keeps the lexicographically first optimum
        if e < best_energy {
            best_energy = e;
            best.copy_from_slice(&assignment);
        }
        // odometer increment in lexicographic order
        let mut pos = n;
        while pos > 0 {
            pos -= 1;
            if (assignment[pos] as usize) + 1 < labels {
                assignment[pos] += 1;
                for a in &mut assignment[pos + 1..] {
                    *a = 0;
                }
                break;
            }
            if pos == 0 {
                return Ok(Raster::from_vec(w, h, best));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn flat_image(w: usize, h: usize) -> Raster<f64> {
        Raster::filled(w, h, 0.0)
    }

    fn spatial(weight: f64, theta: f64) -> PairwiseParams {
        PairwiseParams::new(vec![Kernel {
            weight,
            kind: KernelKind::Spatial { theta_gamma: theta },
        }])
        .unwrap()
    }

    #[test]
    fn parameter_validation() {
        assert!(UnaryField::new(2, 2, 1, vec![0.0; 4]).is_err());
        assert!(UnaryField::new(2, 2, 2, vec![0.0; 7]).is_err());
        assert!(UnaryField::new(1, 1, 2, vec![f64::NAN, 0.0]).is_err());
        assert!(PairwiseParams::new(vec![]).is_err());
        assert!(PairwiseParams::new(vec![Kernel {
            weight: -1.0,
            kind: KernelKind::Spatial { theta_gamma: 1.0 },
        }])
        .is_err());
        assert!(PairwiseParams::new(vec![Kernel {
            weight: 1.0,
            kind: KernelKind::Bilateral {
                theta_alpha: 0.0,
                theta_beta: 1.0,
            },
        }])
        .is_err());
    }

    #[test]
    fn energy_of_two_pixel_instance_matches_hand_arithmetic() {
        let unary = UnaryField::new(2, 1, 2, vec![0.3, 0.7, 0.9, 0.2]).unwrap();
        let image = Raster::from_vec(2, 1, vec![10.0, 14.0]);
        let pw = PairwiseParams::new(vec![
            Kernel {
                weight: 1.5,
                kind: KernelKind::Spatial { theta_gamma: 2.0 },
            },
            Kernel {
                weight: 0.5,
                kind: KernelKind::Bilateral {
                    theta_alpha: 3.0,
                    theta_beta: 5.0,
                },
            },
        ])
        .unwrap();

        // labels differ: unaries 0.3 + 0.2 plus the full kernel stack
        let labeling = Raster::from_vec(2, 1, vec![0u8, 1]);
        let k = 1.5 * (-1.0f64 / 8.0).exp() + 0.5 * (-1.0f64 / 18.0 - 16.0 / 50.0).exp();
        let e = energy(&labeling, &unary, &pw, &image).unwrap();
        assert_relative_eq!(e, 0.3 + 0.2 + k, epsilon = 1e-12);

        // constant labeling: pairwise vanishes under Potts
        let constant = Raster::from_vec(2, 1, vec![1u8, 1]);
        let e = energy(&constant, &unary, &pw, &image).unwrap();
        assert_relative_eq!(e, 0.7 + 0.2, epsilon = 1e-12);

        // zero weights: unary sum for any labeling
        let zero = PairwiseParams::new(vec![Kernel {
            weight: 0.0,
            kind: KernelKind::Spatial { theta_gamma: 2.0 },
        }])
        .unwrap();
        let e = energy(&labeling, &unary, &zero, &image).unwrap();
        assert_relative_eq!(e, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn energy_rejects_mismatched_dims_and_labels() {
        let unary = UnaryField::new(2, 1, 2, vec![0.0; 4]).unwrap();
        let image = flat_image(2, 1);
        let wrong = Raster::from_vec(1, 2, vec![0u8, 0]);
        assert!(matches!(
            energy(&wrong, &unary, &PairwiseParams::defaults(), &image),
            Err(CrfError::DimensionMismatch(_))
        ));
        let bad = Raster::from_vec(2, 1, vec![0u8, 7]);
        assert!(matches!(
            energy(&bad, &unary, &PairwiseParams::defaults(), &image),
            Err(CrfError::LabelOutOfRange(7, 2))
        ));
    }

    #[test]
    fn zero_iterations_yield_unary_softmax() {
        let unary = UnaryField::new(2, 1, 2, vec![0.3, 0.7, 0.9, 0.2]).unwrap();
        let image = flat_image(2, 1);
        let q = mean_field_infer(&unary, &PairwiseParams::defaults(), &image, 0).unwrap();
        for i in 0..2 {
            let e0 = (-unary.at(i, 0)).exp();
            let e1 = (-unary.at(i, 1)).exp();
            assert_relative_eq!(q.at(i, 0), e0 / (e0 + e1), epsilon = 1e-12);
            assert_relative_eq!(q.at(i, 1), e1 / (e0 + e1), epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_weights_freeze_the_marginals() {
        let mut rng = StdRng::seed_from_u64(2);
        let unary = UnaryField::from_fn(4, 3, 3, |_, _, _| rng.random_range(-2.0..2.0)).unwrap();
        let image = flat_image(4, 3);
        let zero = spatial(0.0, 2.0);
        let q0 = mean_field_infer(&unary, &zero, &image, 0).unwrap();
        let q5 = mean_field_infer(&unary, &zero, &image, 5).unwrap();
        assert_eq!(q0.data(), q5.data());
        assert_eq!(
            map_labeling(&q5).data(),
            map_labeling(&q0).data(),
            "zero smoothing must keep the unary argmin"
        );
    }

    #[test]
    fn marginals_stay_normalized_every_iteration() {
        let mut rng = StdRng::seed_from_u64(6);
        let unary = UnaryField::from_fn(5, 4, 3, |_, _, _| rng.random_range(-3.0..3.0)).unwrap();
        let image = Raster::from_vec(5, 4, (0..20).map(|_| rng.random_range(0.0..255.0)).collect());
        for iters in 0..6 {
            let q =
                mean_field_infer(&unary, &PairwiseParams::defaults(), &image, iters).unwrap();
            assert!(q.max_normalization_error() < 1e-9);
        }
    }

    #[test]
    fn flipped_pixel_joins_the_majority() {
        // strong unaries vote label 1 everywhere except the center
        let unary = UnaryField::from_fn(3, 3, 2, |col, row, l| {
            let is_center = col == 1 && row == 1;
            match (is_center, l) {
                (false, 0) => 2.0,
                (false, 1) => 0.0,
                (true, 0) => 0.0,
                (true, 1) => 1.0,
                _ => unreachable!(),
            }
        })
        .unwrap();
        let image = flat_image(3, 3);
        let pw = spatial(2.0, 2.0);

        let q = mean_field_infer(&unary, &pw, &image, 10).unwrap();
        let map = map_labeling(&q);
        assert!(map.data().iter().all(|&l| l == 1), "map: {:?}", map.data());

        let brute = exact_map_bruteforce(&unary, &pw, &image).unwrap();
        assert_eq!(map.data(), brute.data());
    }

    #[test]
    fn map_labeling_tie_and_shift_rules() {
        let uniform = MarginalField {
            width: 2,
            height: 1,
            labels: 3,
            q: vec![1.0 / 3.0; 6],
        };
        assert!(map_labeling(&uniform).data().iter().all(|&l| l == 0));

        let onehot = MarginalField {
            width: 1,
            height: 1,
            labels: 3,
            q: vec![0.0, 0.0, 1.0],
        };
        assert_eq!(map_labeling(&onehot).data(), &[2]);

        // adding a per-pixel constant to the unaries keeps the argmax
        let mut rng = StdRng::seed_from_u64(8);
        let base: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let unary = UnaryField::new(2, 2, 3, base.clone()).unwrap();
        let shifted = UnaryField::new(
            2,
            2,
            3,
            base.iter()
                .enumerate()
                .map(|(k, v)| v + (k / 3) as f64 * 7.5)
                .collect(),
        )
        .unwrap();
        let image = flat_image(2, 2);
        let q0 = mean_field_infer(&unary, &spatial(0.5, 1.0), &image, 0).unwrap();
        let q1 = mean_field_infer(&shifted, &spatial(0.5, 1.0), &image, 0).unwrap();
        assert_eq!(map_labeling(&q0).data(), map_labeling(&q1).data());
    }

    #[test]
    fn windowed_mode_matches_exact_when_the_window_covers_the_frame() {
        let mut rng = StdRng::seed_from_u64(21);
        let unary = UnaryField::from_fn(4, 4, 2, |_, _, _| rng.random_range(-2.0..2.0)).unwrap();
        let image =
            Raster::from_vec(4, 4, (0..16).map(|_| rng.random_range(0.0..50.0)).collect());
        let pw = PairwiseParams::defaults();
        let exact = mean_field_infer(&unary, &pw, &image, 5).unwrap();
        let windowed = mean_field_infer_with(
            &unary,
            &pw,
            &image,
            5,
            MessageMode::Windowed { radius: 4 },
        )
        .unwrap();
        assert_eq!(exact.data(), windowed.data());
    }

    #[test]
    fn bruteforce_basics() {
        // zero pairwise weight: per-pixel unary argmin
        let mut rng = StdRng::seed_from_u64(14);
        let unary = UnaryField::from_fn(3, 2, 3, |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let image = flat_image(3, 2);
        let brute = exact_map_bruteforce(&unary, &spatial(0.0, 1.0), &image).unwrap();
        for i in 0..6 {
            let mut best = 0;
            for l in 1..3 {
                if unary.at(i, l) < unary.at(i, best) {
                    best = l;
                }
            }
            assert_eq!(brute.data()[i] as usize, best);
        }

        // single pixel: unary argmin
        let unary = UnaryField::new(1, 1, 3, vec![0.5, -0.2, 0.1]).unwrap();
        let brute =
            exact_map_bruteforce(&unary, &spatial(1.0, 1.0), &flat_image(1, 1)).unwrap();
        assert_eq!(brute.data(), &[1]);

        // full tie: lexicographically smallest labeling wins
        let unary = UnaryField::new(2, 1, 2, vec![0.0; 4]).unwrap();
        let brute =
            exact_map_bruteforce(&unary, &spatial(0.0, 1.0), &flat_image(2, 1)).unwrap();
        assert_eq!(brute.data(), &[0, 0]);

        // size guard: 2^21 labelings is over budget
        let unary = UnaryField::new(21, 1, 2, vec![0.0; 42]).unwrap();
        assert!(matches!(
            exact_map_bruteforce(&unary, &spatial(1.0, 1.0), &flat_image(21, 1)),
            Err(CrfError::TooLarge(_))
        ));
    }

    fn random_instance(rng: &mut StdRng) -> (UnaryField, PairwiseParams, Raster<f64>) {
        let unary = UnaryField::from_fn(3, 3, 2, |_, _, _| rng.random_range(-2.0..2.0)).unwrap();
        let pw = spatial(rng.random_range(0.1..2.0), rng.random_range(0.5..3.0));
        let image = flat_image(3, 3);
        (unary, pw, image)
    }

    #[test]
    fn bruteforce_beats_random_labelings() {
        let mut rng = StdRng::seed_from_u64(50);
        for _ in 0..50 {
            let (unary, pw, image) = random_instance(&mut rng);
            let brute = exact_map_bruteforce(&unary, &pw, &image).unwrap();
            let best = energy(&brute, &unary, &pw, &image).unwrap();
            for _ in 0..50 {
                let candidate = Raster::from_vec(
                    3,
                    3,
                    (0..9).map(|_| rng.random_range(0..2u8)).collect(),
                );
                let e = energy(&candidate, &unary, &pw, &image).unwrap();
                assert!(best <= e + 1e-12);
            }
        }
    }

    /// Instance with mostly decisive unaries (per-pixel log-odds gaps in
    /// [0.75, 4)) and a nearest-neighbor-scale kernel, weights up to 2.
    /// Mean field approximates marginals, not the MAP, so pixels whose
    /// total field is razor-thin can land on either side; keeping the
    /// unary gaps decisive bounds how often that happens.
    fn moderate_instance(rng: &mut StdRng) -> (UnaryField, PairwiseParams, Raster<f64>) {
        let prefs: Vec<(bool, f64)> = (0..9)
            .map(|_| (rng.random_bool(0.5), rng.random_range(0.75..4.0)))
            .collect();
        let unary = UnaryField::from_fn(3, 3, 2, |col, row, l| {
            let (pref, g) = prefs[row * 3 + col];
            if (l == 1) == pref {
                -g / 2.0
            } else {
                g / 2.0
            }
        })
        .unwrap();
        let pw = spatial(rng.random_range(0.1..2.0), 0.6);
        (unary, pw, flat_image(3, 3))
    }

    #[test]
    fn mean_field_matches_bruteforce_on_most_instances() {
        let mut rng = StdRng::seed_from_u64(4242);
        let mut agree = 0;
        for _ in 0..100 {
            let (unary, pw, image) = moderate_instance(&mut rng);
            let map = map_labeling(&mean_field_infer(&unary, &pw, &image, 10).unwrap());
            let brute = exact_map_bruteforce(&unary, &pw, &image).unwrap();
            if map.data() == brute.data() {
                agree += 1;
            }
        }
        assert!(agree >= 90, "mean field agreed on only {agree}/100");
    }

    #[test]
    fn smoothing_does_not_worsen_the_unary_map() {
        let mut rng = StdRng::seed_from_u64(777);
        let mut improved = 0;
        for _ in 0..100 {
            let (unary, pw, image) = random_instance(&mut rng);
            let smoothed = map_labeling(&mean_field_infer(&unary, &pw, &image, 10).unwrap());
            let unary_only = map_labeling(&mean_field_infer(&unary, &pw, &image, 0).unwrap());
            let e_smoothed = energy(&smoothed, &unary, &pw, &image).unwrap();
            let e_unary = energy(&unary_only, &unary, &pw, &image).unwrap();
            if e_smoothed <= e_unary + 1e-12 {
                improved += 1;
            }
        }
        assert!(improved >= 95, "MAP energy improved on only {improved}/100");
    }
}
