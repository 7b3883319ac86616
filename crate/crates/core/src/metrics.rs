//! Confusion-count segmentation metrics (IoU, F1, recall, precision).
//!
//! Ratios with a zero denominator are `None` and serialize as `null`. Dataset
//! metrics are micro-averaged: counts are summed over images first.

use std::iter::Sum;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::grid::{check_shape, Grid2D, MaskGrid};

/// Default binarization threshold; ties go to the foreground.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = ConfusionCounts>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub iou: Option<f64>,
    pub f1: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

impl MetricReport {
    /// Every defined value multiplied by 100.
    pub fn as_percent(&self) -> MetricReport {
        let pct = |v: Option<f64>| v.map(|x| x * 100.0);
        MetricReport {
            iou: pct(self.iou),
            f1: pct(self.f1),
            recall: pct(self.recall),
            precision: pct(self.precision),
        }
    }
}

pub fn binarize(pr: &Grid2D, threshold: f64) -> Result<MaskGrid> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(param(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let bits: Vec<bool> = pr.data().iter().map(|&v| v >= threshold).collect();
    MaskGrid::from_bits(pr.height(), pr.width(), &bits)
}

pub fn confusion(pred: &MaskGrid, truth: &MaskGrid) -> Result<ConfusionCounts> {
    check_shape(pred.shape(), truth.shape())?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p == 1.0, t == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> MetricReport {
    MetricReport {
        iou: ratio(c.tp, c.tp + c.fp + c.fn_),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        recall: ratio(c.tp, c.tp + c.fn_),
        precision: ratio(c.tp, c.tp + c.fp),
    }
}

/// Micro-averaged report over `(prediction, truth)` pairs.
pub fn dataset_metrics<'a>(
    pairs: impl IntoIterator<Item = (&'a MaskGrid, &'a MaskGrid)>,
) -> Result<(ConfusionCounts, MetricReport)> {
    let mut total = ConfusionCounts::default();
    for (pred, truth) in pairs {
        total = total + confusion(pred, truth)?;
    }
    Ok((total, metrics(&total)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(h: usize, w: usize, v: &[f64]) -> MaskGrid {
        MaskGrid::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn binarize_examples() {
        let pr = Grid2D::new(1, 2, vec![0.4, 0.6]).unwrap();
        assert_eq!(binarize(&pr, 0.5).unwrap(), mask(1, 2, &[0.0, 1.0]));
        let tie = Grid2D::new(1, 1, vec![0.5]).unwrap();
        assert_eq!(binarize(&tie, 0.5).unwrap(), mask(1, 1, &[1.0]));
        let zeros = Grid2D::zeros(2, 2).unwrap();
        assert_eq!(binarize(&zeros, 0.5).unwrap(), MaskGrid::zeros(2, 2).unwrap());
        assert!(binarize(&zeros, 1.0).is_err());
        assert!(binarize(&zeros, 0.0).is_err());
    }

    #[test]
    fn confusion_examples() {
        let c = confusion(&mask(2, 2, &[1.0, 0.0, 0.0, 1.0]), &mask(2, 2, &[1.0, 1.0, 0.0, 0.0]))
            .unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 1 });
        let m = mask(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let same = confusion(&m, &m).unwrap();
        assert_eq!((same.fp, same.fn_), (0, 0));
        let c = confusion(&MaskGrid::ones(2, 2).unwrap(), &MaskGrid::zeros(2, 2).unwrap()).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 0, fp: 4, fn_: 0, tn: 0 });
        assert!(confusion(&m, &MaskGrid::zeros(1, 4).unwrap()).is_err());
    }

    #[test]
    fn metrics_examples() {
        let r = metrics(&ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 0 });
        assert_eq!(r.iou, Some(1.0 / 3.0));
        assert_eq!((r.f1, r.precision, r.recall), (Some(0.5), Some(0.5), Some(0.5)));
        let empty = metrics(&ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 4 });
        assert_eq!(empty, MetricReport { iou: None, f1: None, recall: None, precision: None });
        let perfect = metrics(&ConfusionCounts { tp: 5, fp: 0, fn_: 0, tn: 3 });
        assert_eq!(perfect.iou, Some(1.0));
        assert_eq!(perfect.f1, Some(1.0));
    }

    #[test]
    fn undefined_serializes_as_null() {
        let json = serde_json::to_string(&metrics(&ConfusionCounts::default())).unwrap();
        assert_eq!(json, r#"{"iou":null,"f1":null,"recall":null,"precision":null}"#);
    }

    proptest! {
        #[test]
        fn f1_is_harmonic_and_bounds_iou(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
            let r = metrics(&ConfusionCounts { tp, fp, fn_, tn: 0 });
            if let (Some(iou), Some(f1)) = (r.iou, r.f1) {
                prop_assert!(iou <= f1);
                prop_assert!((f1 - 2.0 * iou / (1.0 + iou)).abs() <= 1e-12);
            }
            if let (Some(p), Some(rc), Some(f1)) = (r.precision, r.recall, r.f1) {
                if p + rc > 0.0 {
                    prop_assert!((f1 - 2.0 * p * rc / (p + rc)).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn micro_average_equals_concatenation(
            a in prop::collection::vec(any::<(bool, bool)>(), 12),
            b in prop::collection::vec(any::<(bool, bool)>(), 12),
        ) {
            let split = |v: &[(bool, bool)]| {
                let p: Vec<bool> = v.iter().map(|x| x.0).collect();
                let t: Vec<bool> = v.iter().map(|x| x.1).collect();
                (MaskGrid::from_bits(3, 4, &p).unwrap(), MaskGrid::from_bits(3, 4, &t).unwrap())
            };
            let (pa, ta) = split(&a);
            let (pb, tb) = split(&b);
            let joined: Vec<(bool, bool)> = a.iter().chain(&b).copied().collect();
            let pj = MaskGrid::from_bits(6, 4, &joined.iter().map(|x| x.0).collect::<Vec<_>>()).unwrap();
            let tj = MaskGrid::from_bits(6, 4, &joined.iter().map(|x| x.1).collect::<Vec<_>>()).unwrap();
            let (counts, report) = dataset_metrics([(&pa, &ta), (&pb, &tb)]).unwrap();
            prop_assert_eq!(counts, confusion(&pj, &tj).unwrap());
            prop_assert_eq!(report, metrics(&counts));
        }
    }
}
