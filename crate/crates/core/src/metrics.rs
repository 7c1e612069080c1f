//! Mixed BCE + Dice loss and binary overlap metrics.

use crate::error::{invalid, Result};
use crate::ops::sigmoid_scalar;
use crate::tensor::Tensor;

/// Dice smoothing term.
pub const DICE_SMOOTH: f64 = 1.0;
/// Sigmoid probability threshold for binarizing predictions.
pub const DEFAULT_THRESHOLD: f32 = 0.5;

fn check_same(logits: &Tensor, targets: &Tensor) -> Result<()> {
    if logits.shape() != targets.shape() {
        return Err(invalid(format!(
            "logits {:?} and targets {:?} differ in shape",
            logits.shape(),
            targets.shape()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy on logits, in the stable form
/// `max(z, 0) − z·y + ln(1 + e^{−|z|})`.
pub fn bce_loss(logits: &Tensor, targets: &Tensor) -> Result<f64> {
    check_same(logits, targets)?;
    if logits.is_empty() {
        return Err(invalid("bce_loss on an empty tensor"));
    }
    let sum: f64 = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&z, &y)| {
            let (z, y) = (z as f64, y as f64);
            z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
        })
        .sum();
    Ok(sum / logits.len() as f64)
}

/// `1 − (2·Σpy + s) / (Σp + Σy + s)` with `p = σ(logit)`.
pub fn dice_loss(logits: &Tensor, targets: &Tensor) -> Result<f64> {
    check_same(logits, targets)?;
    let (mut inter, mut sp, mut sy) = (0.0f64, 0.0f64, 0.0f64);
    for (&z, &y) in logits.data().iter().zip(targets.data()) {
        let p = sigmoid_scalar(z) as f64;
        inter += p * y as f64;
        sp += p;
        sy += y as f64;
    }
    Ok(1.0 - (2.0 * inter + DICE_SMOOTH) / (sp + sy + DICE_SMOOTH))
}

/// `0.5·BCE + Dice`.
pub fn mixed_loss(logits: &Tensor, targets: &Tensor) -> Result<f64> {
    Ok(0.5 * bce_loss(logits, targets)? + dice_loss(logits, targets)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(invalid(format!(
                "mask data length {} does not match {height}×{width}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, data }
    }

    /// Binarize channel 0 of the first image: foreground where `σ(logit) ≥ threshold`.
    pub fn from_logits(logits: &Tensor, threshold: f32) -> Self {
        let data = logits.plane(0, 0).iter().map(|&z| sigmoid_scalar(z) >= threshold).collect();
        Self { height: logits.height(), width: logits.width(), data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    fn overlap(&self, other: &BinaryMask) -> Result<(usize, usize)> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(invalid(format!(
                "mask sizes differ: {}×{} vs {}×{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let inter = self.data.iter().zip(&other.data).filter(|(a, b)| **a && **b).count();
        Ok((inter, self.count() + other.count()))
    }
}

/// `|A∩B| / |A∪B|`; two empty masks score 1.
pub fn iou(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    let (inter, total) = pred.overlap(truth)?;
    let union = total - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice_score(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    let (inter, total) = pred.overlap(truth)?;
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// Unweighted mean of per-image `(IoU, Dice)`.
pub fn mean_scores(pairs: &[(BinaryMask, BinaryMask)]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(invalid("no mask pairs to score"));
    }
    let (mut si, mut sd) = (0.0, 0.0);
    for (p, t) in pairs {
        si += iou(p, t)?;
        sd += dice_score(p, t)?;
    }
    Ok((si / pairs.len() as f64, sd / pairs.len() as f64))
}
