//! Segmentation quality metrics.
//!
//! The primary score is mean intersection-over-union across classes, where a
//! class participates if it appears in either the prediction or the truth.
//! Aggregation over many frames averages per-frame scores, so a grouped mean
//! (per offset, per snippet) recombines exactly into the overall mean by
//! sample counts.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-pixel argmax over the channel axis; ties take the lowest class.
pub fn argmax_channels(probs: &Tensor) -> Result<Tensor> {
    let (c, h, w) = probs.dims3("argmax_channels")?;
    Ok(Tensor::from_fn(&[h, w], |i| {
        let mut best = 0usize;
        let mut best_v = probs.data()[i];
        for ci in 1..c {
            let v = probs.data()[ci * h * w + i];
            if v > best_v {
                best_v = v;
                best = ci;
            }
        }
        best as Scalar
    }))
}

/// Integer upsample: each cell becomes a `factor x factor` block.
pub fn upsample_nearest(map: &Tensor, factor: usize) -> Result<Tensor> {
    let (h, w) = map.dims2("upsample_nearest")?;
    if factor == 0 {
        return Err(Error::InvalidConfig("upsample factor must be positive".into()));
    }
    Ok(Tensor::from_fn(&[h * factor, w * factor], |i| {
        let y = i / (w * factor);
        let x = i % (w * factor);
        map.data()[(y / factor) * w + x / factor]
    }))
}

/// Reduce a full-resolution class map to a coarser grid by reading the
/// label at each cell's center pixel, `src = floor((dst + 0.5) * stride)`,
/// the same alignment the bilinear resize uses.
pub fn downsample_labels(labels: &Tensor, stride: usize) -> Result<Tensor> {
    let (h, w) = labels.dims2("downsample_labels")?;
    if stride == 0 {
        return Err(Error::InvalidConfig("downsample stride must be positive".into()));
    }
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    Ok(Tensor::from_fn(&[oh, ow], |i| {
        let y = ((i / ow) * stride + stride / 2).min(h - 1);
        let x = ((i % ow) * stride + stride / 2).min(w - 1);
        labels.data()[y * w + x]
    }))
}

/// Row-major `classes x classes` confusion counts, indexed `[truth][pred]`.
pub fn confusion_matrix(pred: &Tensor, truth: &Tensor, classes: usize) -> Result<Vec<u64>> {
    if pred.shape() != truth.shape() {
        return Err(Error::ShapeMismatch {
            context: "confusion_matrix",
            expected: format!("{:?}", truth.shape()),
            got: format!("{:?}", pred.shape()),
        });
    }
    let mut m = vec![0u64; classes * classes];
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        let (p, t) = (p as usize, t as usize);
        if p >= classes || t >= classes {
            return Err(Error::InvalidConfig(format!(
                "label {} outside {classes} classes",
                p.max(t)
            )));
        }
        m[t * classes + p] += 1;
    }
    Ok(m)
}

pub fn miou_from_confusion(m: &[u64], classes: usize) -> Scalar {
    let mut sum = 0.0;
    let mut counted = 0usize;
    for c in 0..classes {
        let inter = m[c * classes + c];
        let row: u64 = (0..classes).map(|p| m[c * classes + p]).sum();
        let col: u64 = (0..classes).map(|t| m[t * classes + c]).sum();
        let union = row + col - inter;
        if union > 0 {
            sum += inter as Scalar / union as Scalar;
            counted += 1;
        }
    }
    if counted == 0 {
        1.0
    } else {
        sum / counted as Scalar
    }
}

/// Mean IoU of one frame; `classes` counts the background class.
pub fn miou(pred: &Tensor, truth: &Tensor, classes: usize) -> Result<Scalar> {
    Ok(miou_from_confusion(
        &confusion_matrix(pred, truth, classes)?,
        classes,
    ))
}

pub fn pixel_accuracy(pred: &Tensor, truth: &Tensor) -> Result<Scalar> {
    if pred.shape() != truth.shape() {
        return Err(Error::ShapeMismatch {
            context: "pixel_accuracy",
            expected: format!("{:?}", truth.shape()),
            got: format!("{:?}", pred.shape()),
        });
    }
    let hits = pred
        .data()
        .iter()
        .zip(truth.data())
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as Scalar / pred.len() as Scalar)
}

/// Running mean of per-frame scores.
#[derive(Debug, Clone, Default)]
pub struct ScoreMean {
    sum: Scalar,
    count: usize,
}

impl ScoreMean {
    pub fn push(&mut self, score: Scalar) {
        self.sum += score;
        self.count += 1;
    }

    pub fn merge(&mut self, other: &ScoreMean) {
        self.sum += other.sum;
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Scalar {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as Scalar
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[Scalar]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let truth = t(&[2, 2], &[0.0, 1.0, 2.0, 0.0]);
        assert_eq!(miou(&truth, &truth, 3).unwrap(), 1.0);
        assert_eq!(pixel_accuracy(&truth, &truth).unwrap(), 1.0);
    }

    #[test]
    fn hand_computed_miou() {
        // truth: [0 0 / 1 1], pred: [0 1 / 1 1]
        // class 0: inter 1, union 2 -> 0.5; class 1: inter 2, union 3 -> 2/3.
        let truth = t(&[2, 2], &[0.0, 0.0, 1.0, 1.0]);
        let pred = t(&[2, 2], &[0.0, 1.0, 1.0, 1.0]);
        let got = miou(&pred, &truth, 2).unwrap();
        assert!((got - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_prediction_scores_zero() {
        let truth = t(&[2, 2], &[1.0, 1.0, 0.0, 0.0]);
        let pred = t(&[2, 2], &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(miou(&pred, &truth, 2).unwrap(), 0.0);
    }

    #[test]
    fn absent_classes_do_not_dilute() {
        // Only class 0 appears anywhere; classes 1 and 2 must not count.
        let truth = t(&[1, 4], &[0.0, 0.0, 0.0, 0.0]);
        let pred = truth.clone();
        assert_eq!(miou(&pred, &truth, 3).unwrap(), 1.0);
    }

    #[test]
    fn hallucinated_class_counts_against() {
        // truth all 0, pred half 1: class 0 IoU 0.5, class 1 IoU 0.
        let truth = t(&[1, 4], &[0.0, 0.0, 0.0, 0.0]);
        let pred = t(&[1, 4], &[0.0, 0.0, 1.0, 1.0]);
        assert!((miou(&pred, &truth, 3).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn confusion_counts_are_exact() {
        let truth = t(&[2, 2], &[0.0, 1.0, 1.0, 2.0]);
        let pred = t(&[2, 2], &[0.0, 1.0, 2.0, 2.0]);
        let m = confusion_matrix(&pred, &truth, 3).unwrap();
        assert_eq!(m[0], 1); // truth 0 pred 0
        assert_eq!(m[1 * 3 + 1], 1);
        assert_eq!(m[1 * 3 + 2], 1);
        assert_eq!(m[2 * 3 + 2], 1);
        assert_eq!(m.iter().sum::<u64>(), 4);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let probs = t(&[2, 1, 2], &[0.5, 0.2, 0.5, 0.8]);
        let pred = argmax_channels(&probs).unwrap();
        assert_eq!(pred.data(), &[0.0, 1.0]);
    }

    #[test]
    fn upsample_replicates_blocks() {
        let map = t(&[1, 2], &[3.0, 7.0]);
        let up = upsample_nearest(&map, 2).unwrap();
        assert_eq!(up.shape(), &[2, 4]);
        assert_eq!(up.data(), &[3.0, 3.0, 7.0, 7.0, 3.0, 3.0, 7.0, 7.0]);
    }

    #[test]
    fn grouped_means_recombine_exactly() {
        let scores = [0.3, 0.5, 0.9, 0.1, 0.7];
        let mut all = ScoreMean::default();
        let mut a = ScoreMean::default();
        let mut b = ScoreMean::default();
        for (i, &s) in scores.iter().enumerate() {
            all.push(s);
            if i < 2 {
                a.push(s);
            } else {
                b.push(s);
            }
        }
        let mut merged = ScoreMean::default();
        merged.merge(&a);
        merged.merge(&b);
        assert_eq!(merged.count(), all.count());
        assert!((merged.mean() - all.mean()).abs() < 1e-15);
    }

    #[test]
    fn downsample_reads_cell_centers() {
        let m = Tensor::from_fn(&[4, 4], |i| i as Scalar);
        let d = downsample_labels(&m, 2).unwrap();
        assert_eq!(d.shape(), &[2, 2]);
        assert_eq!(d.data(), &[5.0, 7.0, 13.0, 15.0]);
        // Odd extent: the last cell clamps to the border pixel.
        let m5 = Tensor::from_fn(&[1, 5], |i| i as Scalar);
        let d5 = downsample_labels(&m5, 2).unwrap();
        assert_eq!(d5.data(), &[1.0, 3.0, 4.0]);
    }
}
