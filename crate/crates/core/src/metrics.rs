//! Confusion-matrix bookkeeping and per-class IoU / F1.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, data_err, Result};
use crate::tensor::Tensor;

/// `counts[t * classes + p]` = pixels of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(config_err!("{} counts for a {classes}x{classes} matrix", counts.len()));
        }
        Ok(Self { classes, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(config_err!("prediction has {} pixels, truth {}", pred.len(), truth.len()));
        }
        let c = self.classes;
        if let Some(&bad) = pred.iter().chain(truth).find(|&&v| v as usize >= c) {
            return Err(data_err!("label value {bad} outside [0, {c})"));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            self.counts[t as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(config_err!("cannot merge {}-class and {}-class matrices", self.classes, other.classes));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// `(tp, fp, fn)` for class `c`.
    pub fn outcomes(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.get(c, c);
        let predicted: u64 = (0..self.classes).map(|t| self.get(t, c)).sum();
        let actual: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
        (tp, predicted - tp, actual - tp)
    }

    /// `tp / (tp + fp + fn)`; `None` when the class appears in neither map.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        self.per_class(|tp, fp, fn_| tp / (tp + fp + fn_))
    }

    /// `2 tp / (2 tp + fp + fn)`; `None` when the class appears in neither map.
    pub fn f1_per_class(&self) -> Vec<Option<f64>> {
        self.per_class(|tp, fp, fn_| 2.0 * tp / (2.0 * tp + fp + fn_))
    }

    fn per_class(&self, f: impl Fn(f64, f64, f64) -> f64) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let (tp, fp, fn_) = self.outcomes(c);
                (tp + fp + fn_ > 0).then(|| f(tp as f64, fp as f64, fn_ as f64))
            })
            .collect()
    }

    pub fn mean_iou(&self) -> f64 {
        macro_mean(&self.iou_per_class(), 0)
    }

    pub fn mean_f1(&self) -> f64 {
        macro_mean(&self.f1_per_class(), 0)
    }

    pub fn summary(&self) -> MetricSummary {
        let iou = self.iou_per_class();
        let f1 = self.f1_per_class();
        MetricSummary {
            miou: macro_mean(&iou, 0),
            mf1: macro_mean(&f1, 0),
            miou_fg: macro_mean(&iou, 1),
            mf1_fg: macro_mean(&f1, 1),
            iou,
            f1,
        }
    }
}

/// Mean of the defined entries from index `skip` on; 0 when none are defined.
pub fn macro_mean(values: &[Option<f64>], skip: usize) -> f64 {
    let present: Vec<f64> = values.iter().skip(skip).flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Per-class scores with macro means over all classes and over the
/// foreground classes (background excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub iou: Vec<Option<f64>>,
    pub f1: Vec<Option<f64>>,
    pub miou: f64,
    pub mf1: f64,
    pub miou_fg: f64,
    pub mf1_fg: f64,
}

/// Per-pixel argmax over channels; ties go to the lowest class index.
pub fn argmax_channels(logits: &Tensor) -> Vec<u8> {
    let [n, c, h, w] = logits.shape();
    let plane = h * w;
    let mut out = vec![0u8; n * plane];
    for b in 0..n {
        let s = logits.sample(b);
        for p in 0..plane {
            let mut best = 0;
            for ci in 1..c {
                if s[ci * plane + p] > s[best * plane + p] {
                    best = ci;
                }
            }
            out[b * plane + p] = best as u8;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn counting_examples() {
        let mut cm = ConfusionMatrix::new(5);
        cm.accumulate(&[2; 4], &[2; 4]).unwrap();
        assert_eq!(cm.get(2, 2), 4);
        let mut cm = ConfusionMatrix::new(5);
        cm.accumulate(&[0; 10], &[1; 10]).unwrap();
        assert_eq!(cm.get(1, 0), 10);
        assert_eq!(cm.total(), 10);
        assert!(cm.accumulate(&[9], &[0]).is_err());
    }

    #[test]
    fn brute_force_oracle() {
        let mut rng = SeededRng::new(8);
        let mut cm = ConfusionMatrix::new(5);
        let mut oracle = [[0u64; 5]; 5];
        for _ in 0..100 {
            let p: Vec<u8> = (0..256).map(|_| rng.range(0, 5) as u8).collect();
            let t: Vec<u8> = (0..256).map(|_| rng.range(0, 5) as u8).collect();
            for i in 0..256 {
                oracle[t[i] as usize][p[i] as usize] += 1;
            }
            cm.accumulate(&p, &t).unwrap();
        }
        for t in 0..5 {
            for p in 0..5 {
                assert_eq!(cm.get(t, p), oracle[t][p]);
            }
        }
    }

    #[test]
    fn score_examples() {
        // class 0: tp 6, fp 2, fn 4
        let mut counts = vec![0u64; 4];
        counts[0] = 6;
        counts[1] = 4;
        counts[2] = 2;
        counts[3] = 1;
        let cm = ConfusionMatrix::from_counts(2, counts).unwrap();
        assert_eq!(cm.outcomes(0), (6, 2, 4));
        assert_eq!(cm.iou_per_class()[0], Some(0.5));
        assert!((cm.f1_per_class()[0].unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_missing_classes() {
        let mut cm = ConfusionMatrix::new(5);
        cm.accumulate(&[0, 1, 1, 3], &[0, 1, 1, 3]).unwrap();
        assert_eq!(cm.iou_per_class(), vec![Some(1.0), Some(1.0), None, Some(1.0), None]);
        assert_eq!(cm.mean_iou(), 1.0);
        assert_eq!(cm.mean_f1(), 1.0);
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&[0, 0], &[0, 2]).unwrap();
        assert_eq!(cm.iou_per_class()[2], Some(0.0));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let t = Tensor::from_vec([1, 3, 1, 2], vec![1.0, 0.0, 1.0, 5.0, 0.5, 5.0]).unwrap();
        assert_eq!(argmax_channels(&t), vec![0, 1]);
    }
}
