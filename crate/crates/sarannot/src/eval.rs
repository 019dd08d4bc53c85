//! Segmentation evaluation: confusion matrices between predicted and
//! reference masks, detection precision/recall, and the aggregate pixel
//! metrics (pixel accuracy, mean accuracy, mean IU, frequency-weighted
//! IU, false-alarm rate, quality rate).
//!
//! False-alarm rate follows the verbal definition f_p/t_p with f_p the
//! count of all misclassified pixels, i.e. (total - correct)/correct.

use crate::raster::Raster;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("label {0} out of range for {1} classes")]
    LabelOutOfRange(u8, usize),
    #[error("confusion matrix must have at least one class")]
    NoClasses,
    #[error("confusion matrix holds no pixels")]
    EmptyMatrix,
}

/// `n[i][j]` counts pixels of true class `i` predicted as class `j`,
/// stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    num_classes: usize,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Result<Self, EvalError> {
        if num_classes == 0 {
            return Err(EvalError::NoClasses);
        }
        Ok(Self {
            counts: vec![0; num_classes * num_classes],
            num_classes,
        })
    }

    /// Binary matrix from detection counts; class 1 is the positive
    /// (building) class.
    pub fn from_binary_counts(tp: u64, fp: u64, fneg: u64, tn: u64) -> Self {
        let mut cm = Self::new(2).expect("two classes");
        cm.counts[0] = tn;
        cm.counts[1] = fp;
        cm.counts[2] = fneg;
        cm.counts[3] = tp;
        cm
    }

    /// Tallies `pred` against `reference`; both masks hold labels in
    /// `0..num_classes`. Counting is chunked and merged in chunk order,
    /// so the result is independent of the worker count.
    pub fn from_masks(
        pred: &Raster<u8>,
        reference: &Raster<u8>,
        num_classes: usize,
    ) -> Result<Self, EvalError> {
        if pred.width() != reference.width() || pred.height() != reference.height() {
            return Err(EvalError::DimensionMismatch(
                pred.width(),
                pred.height(),
                reference.width(),
                reference.height(),
            ));
        }
        let mut cm = Self::new(num_classes)?;
        let partials: Vec<Result<Self, EvalError>> = reference
            .data()
            .par_chunks(crate::label::POINT_CHUNK)
            .zip(pred.data().par_chunks(crate::label::POINT_CHUNK))
            .map(|(refs, preds)| {
                let mut local = Self::new(num_classes)?;
                for (&t, &p) in refs.iter().zip(preds) {
                    local.add(t, p)?;
                }
                Ok(local)
            })
            .collect();
        for partial in partials {
            cm.merge(&partial?);
        }
        Ok(cm)
    }

    pub fn add(&mut self, true_class: u8, pred_class: u8) -> Result<(), EvalError> {
        let l = self.num_classes;
        if true_class as usize >= l {
            return Err(EvalError::LabelOutOfRange(true_class, l));
        }
        if pred_class as usize >= l {
            return Err(EvalError::LabelOutOfRange(pred_class, l));
        }
        self.counts[true_class as usize * l + pred_class as usize] += 1;
        Ok(())
    }

    /// Element-wise sum; associative, so partial matrices can be merged
    /// in any grouping.
    pub fn merge(&mut self, other: &Self) {
        assert_eq!(self.num_classes, other.num_classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, true_class: usize, pred_class: usize) -> u64 {
        self.counts[true_class * self.num_classes + pred_class]
    }

    /// `t_i`: pixels whose true class is `i`.
    pub fn true_count(&self, i: usize) -> u64 {
        (0..self.num_classes).map(|j| self.count(i, j)).sum()
    }

    /// Pixels predicted as class `j`.
    pub fn pred_count(&self, j: usize) -> u64 {
        (0..self.num_classes).map(|i| self.count(i, j)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes).map(|i| self.count(i, i)).sum()
    }

    /// Detection counts of the binary convention (class 1 positive).
    pub fn binary_counts(&self) -> Option<(u64, u64, u64, u64)> {
        (self.num_classes == 2).then(|| {
            (
                self.count(1, 1),
                self.count(0, 1),
                self.count(1, 0),
                self.count(0, 0),
            )
        })
    }
}

/// Detection metrics in percent; `None` marks an undefined ratio (zero
/// denominator), never a crash.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// `precision = 100*tp/(tp+fp)`, `recall = 100*tp/(tp+fn)`.
pub fn precision_recall(tp: u64, fp: u64, fneg: u64) -> PrecisionRecall {
    let ratio = |num: u64, den: u64| (den > 0).then(|| 100.0 * num as f64 / den as f64);
    PrecisionRecall {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
    }
}

/// Aggregate segmentation metrics in percent. `far` is `None` when no
/// pixel is correct (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegMetrics {
    pub pa: f64,
    pub ma: f64,
    pub miu: f64,
    pub fwiu: f64,
    pub far: Option<f64>,
    pub qr: f64,
}

/// Per-class intersection over union in percent; `None` for classes
/// absent from both prediction and reference.
pub fn per_class_iu(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..cm.num_classes())
        .map(|i| {
            let union = cm.true_count(i) + cm.pred_count(i) - cm.count(i, i);
            (union > 0).then(|| 100.0 * cm.count(i, i) as f64 / union as f64)
        })
        .collect()
}

/// Computes the aggregate metric set. Classes with `t_i = 0` do not
/// appear in the reference and are excluded from the mean-accuracy and
/// mean-IU averages.
pub fn segmentation_metrics(cm: &ConfusionMatrix) -> Result<SegMetrics, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let correct = cm.correct();
    let pa = 100.0 * correct as f64 / total as f64;

    let mut acc_sum = 0.0;
    let mut iu_sum = 0.0;
    let mut fw_sum = 0.0;
    let mut present = 0usize;
    for i in 0..cm.num_classes() {
        let t_i = cm.true_count(i);
        if t_i == 0 {
            continue;
        }
        present += 1;
        let n_ii = cm.count(i, i) as f64;
        let union = (t_i + cm.pred_count(i)) as f64 - n_ii;
        acc_sum += n_ii / t_i as f64;
        iu_sum += n_ii / union;
        fw_sum += t_i as f64 * n_ii / union;
    }
    let ma = 100.0 * acc_sum / present as f64;
    let miu = 100.0 * iu_sum / present as f64;
    let fwiu = 100.0 * fw_sum / total as f64;
    let far = (correct > 0).then(|| 100.0 * (total - correct) as f64 / correct as f64);
    let qr = 100.0 * correct as f64 / (2 * total - correct) as f64;
    Ok(SegMetrics {
        pa,
        ma,
        miu,
        fwiu,
        far,
        qr,
    })
}

/// Per-image-mean variant: computes each image's metrics and averages
/// them, weighting images equally regardless of size. `far` averages
/// over the images where it is defined.
pub fn segmentation_metrics_mean(per_image: &[ConfusionMatrix]) -> Result<SegMetrics, EvalError> {
    if per_image.is_empty() {
        return Err(EvalError::EmptyMatrix);
    }
    let all: Vec<SegMetrics> = per_image
        .iter()
        .map(segmentation_metrics)
        .collect::<Result<_, _>>()?;
    let n = all.len() as f64;
    let mean = |f: fn(&SegMetrics) -> f64| all.iter().map(f).sum::<f64>() / n;
    let fars: Vec<f64> = all.iter().filter_map(|m| m.far).collect();
    Ok(SegMetrics {
        pa: mean(|m| m.pa),
        ma: mean(|m| m.ma),
        miu: mean(|m| m.miu),
        fwiu: mean(|m| m.fwiu),
        far: (!fars.is_empty()).then(|| fars.iter().sum::<f64>() / fars.len() as f64),
        qr: mean(|m| m.qr),
    })
}
