//! Detection metrics, the dataset runner and synthetic forgeries.

pub mod dataset;
pub mod synth;

use crate::error::{Error, Result};
use crate::mask::TamperMask;

/// Confusion-matrix tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl std::ops::Add for ConfusionCounts {
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

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = ConfusionCounts>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), |a, b| a + b)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }

    pub fn f1(&self) -> Option<f64> {
        ratio(2 * self.tp, 2 * self.tp + self.fn_ + self.fp)
    }

    /// Adds one image-level outcome.
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Image,
    Pixel,
}

/// Rates derived from a confusion matrix; undefined ratios are `None`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub level: Level,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub f1: Option<f64>,
}

impl MetricsReport {
    pub fn from_counts(level: Level, c: &ConfusionCounts) -> Self {
        Self {
            level,
            tpr: c.tpr(),
            fpr: c.fpr(),
            f1: c.f1(),
        }
    }
}

/// Per-pixel confusion of `predicted` against `truth`.
pub fn pixel_confusion(predicted: &TamperMask, truth: &TamperMask) -> Result<ConfusionCounts> {
    if (predicted.width, predicted.height) != (truth.width, truth.height) {
        return Err(Error::Shape(format!(
            "predicted mask is {}x{}, truth is {}x{}",
            predicted.width, predicted.height, truth.width, truth.height
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predicted.bits.iter().zip(&truth.bits) {
        c.record(p, t);
    }
    Ok(c)
}

/// An image is flagged as tampered when at least `min_pixels` pixels are
/// marked.
pub fn image_level_decision(mask: &TamperMask, min_pixels: usize) -> bool {
    mask.count() >= min_pixels.max(1)
}

/// `(f_p, f_measure)`: F1 of the summed counts, and the mean of per-image F1
/// over images where it is defined. `None` when nothing is defined.
pub fn aggregate_f_scores(per_image: &[ConfusionCounts]) -> (Option<f64>, Option<f64>) {
    let total: ConfusionCounts = per_image.iter().copied().sum();
    let defined: Vec<f64> = per_image.iter().filter_map(|c| c.f1()).collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    (total.f1(), mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn confusion_of_full_and_empty_masks() {
        let full = TamperMask::from_bits(10, 10, vec![true; 100]).unwrap();
        let empty = TamperMask::new(10, 10);
        assert_eq!(pixel_confusion(&full, &full).unwrap(), counts(100, 0, 0, 0));
        assert_eq!(pixel_confusion(&empty, &full).unwrap(), counts(0, 0, 100, 0));
        assert!(pixel_confusion(&empty, &TamperMask::new(10, 9)).is_err());
    }

    #[test]
    fn rates_from_counts() {
        let c = counts(80, 10, 20, 90);
        assert_abs_diff_eq!(c.tpr().unwrap(), 0.8);
        assert_abs_diff_eq!(c.fpr().unwrap(), 0.1);
        assert_abs_diff_eq!(c.f1().unwrap(), 160.0 / 190.0);
        let none = counts(0, 0, 0, 5);
        assert_eq!(none.tpr(), None);
        assert_eq!(none.f1(), None);
        assert_eq!(none.fpr(), Some(0.0));
    }

    #[test]
    fn image_decision_threshold() {
        let mut m = TamperMask::new(10, 10);
        assert!(!image_level_decision(&m, 1));
        m.set(3, 3, true);
        assert!(image_level_decision(&m, 1));
        for x in 4..8 {
            m.set(x, 3, true);
        }
        assert!(!image_level_decision(&m, 10));
    }

    #[test]
    fn f_score_aggregation() {
        let a = counts(100, 0, 0, 0);
        let b = counts(0, 0, 100, 0);
        let (fp, fm) = aggregate_f_scores(&[a, b]);
        assert_abs_diff_eq!(fp.unwrap(), 200.0 / 300.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fm.unwrap(), 0.5);

        let c = counts(40, 10, 10, 0);
        let (fp, fm) = aggregate_f_scores(&[c, c]);
        assert_abs_diff_eq!(fp.unwrap(), 0.8);
        assert_abs_diff_eq!(fm.unwrap(), 0.8);

        let (fp, fm) = aggregate_f_scores(&[counts(3, 1, 2, 7)]);
        assert_eq!(fp, fm);
    }

    #[test]
    fn f_measure_skips_undefined() {
        let (_, fm) = aggregate_f_scores(&[counts(10, 0, 0, 0), counts(0, 0, 0, 50)]);
        assert_abs_diff_eq!(fm.unwrap(), 1.0);
    }
}
