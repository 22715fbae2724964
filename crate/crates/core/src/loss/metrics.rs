use std::iter::Sum;
use std::ops::{Add, AddAssign};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Pixel counts over valid pixels, water being the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn iou(&self) -> f64 {
        iou(self)
    }

    pub fn f1(&self) -> f64 {
        f1(self)
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// tp/(tp+fp+fn); 1.0 when there is neither predicted nor true water.
pub fn iou(c: &ConfusionCounts) -> f64 {
    let den = c.tp + c.fp + c.fn_;
    if den == 0 {
        1.0
    } else {
        c.tp as f64 / den as f64
    }
}

/// 2tp/(2tp+fp+fn); 1.0 when there is neither predicted nor true water.
pub fn f1(c: &ConfusionCounts) -> f64 {
    let den = 2 * c.tp + c.fp + c.fn_;
    if den == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / den as f64
    }
}

/// 1 where `p >= threshold`, else 0.
pub fn binarize(probs: &[f32], threshold: f32) -> Vec<f32> {
    probs.iter().map(|&p| if p >= threshold { 1.0 } else { 0.0 }).collect()
}

pub fn confusion_slices(pred: &[f32], target: &[f32], mask: &[f32]) -> Result<ConfusionCounts> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::dim(format!(
            "confusion inputs differ in length: pred {}, target {}, mask {}",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for ((&p, &t), &m) in pred.iter().zip(target).zip(mask) {
        if m != 1.0 {
            continue;
        }
        match (p == 1.0, t == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Counts over the mask = 1 pixels of binary rasters.
pub fn confusion(pred: &Raster, target: &Raster, mask: &Raster) -> Result<ConfusionCounts> {
    if !pred.same_extent(target) || !pred.same_extent(mask) {
        return Err(Error::dim(format!(
            "confusion rasters differ in extent: pred {}x{}x{}, target {}x{}x{}, mask {}x{}x{}",
            pred.channels(),
            pred.height(),
            pred.width(),
            target.channels(),
            target.height(),
            target.width(),
            mask.channels(),
            mask.height(),
            mask.width()
        )));
    }
    confusion_slices(pred.data(), target.data(), mask.data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::RasterKind;

    fn label(v: &[f32]) -> Raster {
        Raster::new(1, 1, v.len(), RasterKind::Label, v.to_vec()).unwrap()
    }

    #[test]
    fn overlap_example() {
        // pred 3 water, target 4 water, overlap 2
        let pred = label(&[1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let target = label(&[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let mask = label(&[1.0; 7]);
        let c = confusion(&pred, &target, &mask).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 2, fp: 1, fn_: 2, tn: 2 });
        assert!((c.iou() - 0.4).abs() < 1e-12);
        assert!((c.f1() - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn vacuous_case_is_perfect() {
        let c = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 12 };
        assert_eq!((c.iou(), c.f1()), (1.0, 1.0));
    }

    #[test]
    fn masked_out_pixels_not_counted() {
        let pred = label(&[1.0, 0.0]);
        let c = confusion(&pred, &label(&[0.0, 1.0]), &label(&[0.0, 0.0])).unwrap();
        assert_eq!(c, ConfusionCounts::default());
    }

    #[test]
    fn extent_mismatch_rejected() {
        let err = confusion(&label(&[1.0]), &label(&[1.0, 0.0]), &label(&[1.0])).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn threshold_is_inclusive() {
        assert_eq!(binarize(&[0.49, 0.5, 0.51], 0.5), vec![0.0, 1.0, 1.0]);
    }
}
