//! Confusion-matrix accumulation and intersection-over-union scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    pub classes: usize,
    /// counts[gt * classes + pred]
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn update(&mut self, gt: &[i64], pred: &[i64], ignore_index: i64) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::Config(format!(
                "confusion update length mismatch: {} vs {}",
                gt.len(),
                pred.len()
            )));
        }
        for (&g, &p) in gt.iter().zip(pred.iter()) {
            if g == ignore_index {
                continue;
            }
            if g < 0 || g >= self.classes as i64 || p < 0 || p >= self.classes as i64 {
                return Err(Error::Config(format!("class out of range: gt {g} pred {p}")));
            }
            self.counts[g as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
    }

    /// Per-class IoU; None for classes absent from both GT and predictions.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.counts[c * self.classes + c];
                let gt_total: u64 = (0..self.classes).map(|p| self.counts[c * self.classes + p]).sum();
                let pred_total: u64 = (0..self.classes).map(|g| self.counts[g * self.classes + c]).sum();
                let union = gt_total + pred_total - tp;
                if gt_total == 0 {
                    // class not present in GT: excluded from the mean
                    None
                } else {
                    Some(tp as f64 / union as f64)
                }
            })
            .collect()
    }

    /// Mean IoU over classes present in GT.
    pub fn mean_iou(&self) -> f64 {
        let ious = self.per_class_iou();
        let present: Vec<f64> = ious.into_iter().flatten().collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub split: String,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    /// Per domain-family breakdown (family name, mIoU).
    pub per_family: Vec<(String, f64)>,
}
