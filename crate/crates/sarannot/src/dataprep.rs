//! Training-data preparation: sliding-window patch extraction with
//! overlap and border clamping, dihedral augmentation, and train/test
//! split bookkeeping.

use crate::raster::Raster;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum DataprepError {
    #[error("overlap {overlap} must be smaller than patch size {size}")]
    BadOverlap { size: usize, overlap: usize },
    #[error("image {0}x{1} is smaller than the {2}-pixel patch")]
    ImageTooSmall(usize, usize, usize),
    #[error("image is {0}x{1} but mask is {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("{0:?} needs a square patch, got {1}x{2}")]
    NonSquare(Dihedral, usize, usize),
    #[error("train fraction {0} outside [0,1]")]
    BadFraction(f64),
    #[error("tile id {0:?} appears more than once")]
    DuplicateId(String),
    #[error("tile id {0:?} is listed as both train and test")]
    OverlappingSplit(String),
    #[error("tile id {0:?} is missing from the split lists")]
    UnassignedId(String),
    #[error("split lists name unknown tile id {0:?}")]
    UnknownId(String),
}

/// Sliding-window geometry. The stride is `size - overlap`; the final
/// window per axis clamps to the border so every pixel is covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub size: usize,
    pub overlap: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            size: 256,
            overlap: 32,
        }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<(), DataprepError> {
        if self.size == 0 || self.overlap >= self.size {
            return Err(DataprepError::BadOverlap {
                size: self.size,
                overlap: self.overlap,
            });
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.size - self.overlap
    }
}

/// One extracted image/mask window and its top-left pixel origin
/// `(col, row)` in the source frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub image: Raster<u8>,
    pub mask: Raster<u8>,
    pub origin: (usize, usize),
}

/// Window origins along one axis: multiples of the stride, with the
/// last origin clamped to `extent - size`. Origins are strictly
/// increasing, so clamping never emits a duplicate.
pub fn patch_origins(extent: usize, spec: &PatchSpec) -> Vec<usize> {
    let mut origins = Vec::new();
    let mut o = 0;
    loop {
        origins.push(o);
        if o + spec.size >= extent {
            break;
        }
        o = (o + spec.stride()).min(extent - spec.size);
    }
    origins
}

fn copy_window(src: &Raster<u8>, ox: usize, oy: usize, size: usize) -> Raster<u8> {
    let mut data = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            data.push(*src.get(ox + col, oy + row));
        }
    }
    Raster::from_vec(size, size, data)
}

/// Extracts all windows in row-major origin order.
pub fn extract_patches(
    image: &Raster<u8>,
    mask: &Raster<u8>,
    spec: &PatchSpec,
) -> Result<Vec<PatchPair>, DataprepError> {
    spec.validate()?;
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(DataprepError::DimensionMismatch(
            image.width(),
            image.height(),
            mask.width(),
            mask.height(),
        ));
    }
    if image.width() < spec.size || image.height() < spec.size {
        return Err(DataprepError::ImageTooSmall(
            image.width(),
            image.height(),
            spec.size,
        ));
    }
    let xs = patch_origins(image.width(), spec);
    let ys = patch_origins(image.height(), spec);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &oy in &ys {
        for &ox in &xs {
            out.push(PatchPair {
                image: copy_window(image, ox, oy, spec.size),
                mask: copy_window(mask, ox, oy, spec.size),
                origin: (ox, oy),
            });
        }
    }
    Ok(out)
}

/// The eight symmetries of the square. Rotations are clockwise;
/// `FlipH` mirrors columns, `FlipV` mirrors rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dihedral {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
    Transpose,
    AntiTranspose,
}

impl Dihedral {
    pub const ALL: [Dihedral; 8] = [
        Dihedral::Identity,
        Dihedral::Rot90,
        Dihedral::Rot180,
        Dihedral::Rot270,
        Dihedral::FlipH,
        Dihedral::FlipV,
        Dihedral::Transpose,
        Dihedral::AntiTranspose,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Dihedral::Identity => "id",
            Dihedral::Rot90 => "rot90",
            Dihedral::Rot180 => "rot180",
            Dihedral::Rot270 => "rot270",
            Dihedral::FlipH => "fliph",
            Dihedral::FlipV => "flipv",
            Dihedral::Transpose => "transpose",
            Dihedral::AntiTranspose => "antitranspose",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|d| d.name() == name)
    }

    fn needs_square(&self) -> bool {
        matches!(
            self,
            Dihedral::Rot90 | Dihedral::Rot270 | Dihedral::Transpose | Dihedral::AntiTranspose
        )
    }

    /// Applies the symmetry; the axis-swapping elements require a
    /// square input.
    pub fn apply(&self, r: &Raster<u8>) -> Result<Raster<u8>, DataprepError> {
        let (w, h) = (r.width(), r.height());
        if self.needs_square() && w != h {
            return Err(DataprepError::NonSquare(*self, w, h));
        }
        let n = w;
        let mut out = Raster::filled(w, h, 0u8);
        for row in 0..h {
            for col in 0..w {
                let v = match self {
                    Dihedral::Identity => *r.get(col, row),
                    Dihedral::Rot90 => *r.get(row, n - 1 - col),
                    Dihedral::Rot180 => *r.get(w - 1 - col, h - 1 - row),
                    Dihedral::Rot270 => *r.get(n - 1 - row, col),
                    Dihedral::FlipH => *r.get(w - 1 - col, row),
                    Dihedral::FlipV => *r.get(col, h - 1 - row),
                    Dihedral::Transpose => *r.get(row, col),
                    Dihedral::AntiTranspose => *r.get(n - 1 - row, n - 1 - col),
                };
                out.set(col, row, v);
            }
        }
        Ok(out)
    }
}

/// Applies each selected symmetry to the image and mask identically,
/// in the order given.
pub fn augment(
    patch: &PatchPair,
    ops: &[Dihedral],
) -> Result<Vec<(Dihedral, PatchPair)>, DataprepError> {
    ops.iter()
        .map(|op| {
            Ok((
                *op,
                PatchPair {
                    image: op.apply(&patch.image)?,
                    mask: op.apply(&patch.mask)?,
                    origin: patch.origin,
                },
            ))
        })
        .collect()
}

/// How to divide tiles between training and testing.
#[derive(Debug, Clone)]
pub enum SplitSpec {
    /// Seeded random draw of `round(fraction * n)` training tiles.
    Ratio { train_fraction: f64, seed: u64 },
    /// Caller-provided lists; must partition the tile set exactly.
    Explicit {
        train: Vec<String>,
        test: Vec<String>,
    },
}

/// Splits tile ids into disjoint, covering train/test lists. Both
/// outputs are sorted; the ratio mode is deterministic per seed.
pub fn split_train_test(
    ids: &[String],
    spec: &SplitSpec,
) -> Result<(Vec<String>, Vec<String>), DataprepError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(DataprepError::DuplicateId(id.clone()));
        }
    }
    match spec {
        SplitSpec::Ratio {
            train_fraction,
            seed,
        } => {
            if !(0.0..=1.0).contains(train_fraction) {
                return Err(DataprepError::BadFraction(*train_fraction));
            }
            let mut shuffled: Vec<String> = ids.to_vec();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            let n_train = (train_fraction * ids.len() as f64).round() as usize;
            let mut train: Vec<String> = shuffled[..n_train].to_vec();
            let mut test: Vec<String> = shuffled[n_train..].to_vec();
            train.sort();
            test.sort();
            Ok((train, test))
        }
        SplitSpec::Explicit { train, test } => {
            let train_set: BTreeSet<&str> = train.iter().map(String::as_str).collect();
            let test_set: BTreeSet<&str> = test.iter().map(String::as_str).collect();
            for id in train_set.intersection(&test_set) {
                return Err(DataprepError::OverlappingSplit(id.to_string()));
            }
            for id in train_set.union(&test_set) {
                if !seen.contains(id) {
                    return Err(DataprepError::UnknownId(id.to_string()));
                }
            }
            for id in &seen {
                if !train_set.contains(id) && !test_set.contains(id) {
                    return Err(DataprepError::UnassignedId(id.to_string()));
                }
            }
            let mut train: Vec<String> = train_set.iter().map(|s| s.to_string()).collect();
            let mut test: Vec<String> = test_set.iter().map(|s| s.to_string()).collect();
            train.sort();
            test.sort();
            Ok((train, test))
        }
    }
}
