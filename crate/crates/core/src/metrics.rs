//! Localization metrics: IoU, CIoU and AUC over an IoU-threshold sweep.

use crate::error::{Result, XplError};
use crate::model::PredictionMap;
use crate::pl::normalize_value;
use crate::synth::Mask;

/// IoU threshold for a "correct" localization.
pub const CIOU_THRESHOLD: f64 = 0.5;
/// Spacing of the success-rate curve used for AUC.
pub const AUC_STEP: f64 = 0.05;

/// Positive where the normalized map is at least 0.5 (cosine >= 0).
pub fn binarize(map: &PredictionMap) -> Mask {
    let cells = map.values.iter().map(|&v| normalize_value(v) >= 0.5).collect();
    Mask {
        height: map.height,
        width: map.width,
        cells,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouResult {
    pub value: f64,
    /// Set when prediction and ground truth are both empty (IoU taken as 0).
    pub degenerate: bool,
}

pub fn iou(pred: &Mask, gt: &Mask) -> Result<IouResult> {
    if pred.height != gt.height || pred.width != gt.width || pred.cells.len() != gt.cells.len() {
        return Err(XplError::ShapeMismatch {
            op: "iou",
            left: vec![pred.height, pred.width],
            right: vec![gt.height, gt.width],
        });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.cells.iter().zip(&gt.cells) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    if union == 0 {
        return Ok(IouResult { value: 0.0, degenerate: true });
    }
    Ok(IouResult {
        value: inter as f64 / union as f64,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ciou: f64,
    pub auc: f64,
    pub per_sample_iou: Vec<f64>,
    pub n_samples: usize,
    pub binarization_threshold: f64,
    pub degenerate_samples: usize,
}

/// Fraction of samples with IoU >= `theta`.
pub fn success_rate(ious: &[f64], theta: f64) -> f64 {
    ious.iter().filter(|&&v| v >= theta).count() as f64 / ious.len() as f64
}

/// CIoU and AUC (both in percent) from per-sample IoUs.
pub fn summarize(ious: &[f64]) -> Result<(f64, f64)> {
    if ious.is_empty() {
        return Err(XplError::domain("evaluate", "no samples"));
    }
    let ciou = 100.0 * success_rate(ious, CIOU_THRESHOLD);
    let steps = (1.0 / AUC_STEP).round() as usize;
    let curve: Vec<f64> = (0..=steps)
        .map(|k| success_rate(ious, k as f64 / steps as f64))
        .collect();
    let area: f64 = curve.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() / steps as f64;
    Ok((ciou, (100.0 * area).min(100.0)))
}

pub fn evaluate(maps: &[PredictionMap], gts: &[&Mask]) -> Result<EvalReport> {
    if maps.len() != gts.len() {
        return Err(XplError::ShapeMismatch {
            op: "evaluate",
            left: vec![maps.len()],
            right: vec![gts.len()],
        });
    }
    if maps.is_empty() {
        return Err(XplError::domain("evaluate", "no samples"));
    }
    let mut ious = Vec::with_capacity(maps.len());
    let mut degenerate = 0;
    for (m, gt) in maps.iter().zip(gts) {
        let r = iou(&binarize(m), gt)?;
        degenerate += usize::from(r.degenerate);
        ious.push(r.value);
    }
    let (ciou, auc) = summarize(&ious)?;
    Ok(EvalReport {
        ciou,
        auc,
        n_samples: ious.len(),
        per_sample_iou: ious,
        binarization_threshold: 0.5,
        degenerate_samples: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelTag;

    fn mask(bits: &[u8], w: usize) -> Mask {
        Mask::new(bits.len() / w, w, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    fn map(values: &[f64], w: usize) -> PredictionMap {
        PredictionMap::new(values.len() / w, w, values.to_vec(), ModelTag::A, 0).unwrap()
    }

    #[test]
    fn binarize_examples() {
        assert!(binarize(&map(&[1.0; 4], 2)).cells.iter().all(|&c| c));
        assert!(binarize(&map(&[-1.0; 4], 2)).cells.iter().all(|&c| !c));
        // cosine 0 sits exactly on the boundary and counts as positive
        assert_eq!(binarize(&map(&[0.0, -0.01, 0.3, -0.7], 2)), mask(&[1, 0, 1, 0], 2));
    }

    #[test]
    fn iou_examples() {
        let gt = mask(&[1, 1, 0, 1, 1, 0], 3);
        assert_eq!(iou(&gt, &gt).unwrap().value, 1.0);
        let disjoint = mask(&[0, 0, 1, 0, 0, 1], 3);
        assert_eq!(iou(&disjoint, &gt).unwrap().value, 0.0);
        let half = mask(&[1, 1, 0, 0, 0, 0], 3);
        assert_eq!(iou(&half, &gt).unwrap().value, 0.5);
        let empty = mask(&[0; 6], 3);
        assert_eq!(iou(&empty, &empty).unwrap(), IouResult { value: 0.0, degenerate: true });
        assert!(iou(&mask(&[1, 0], 2), &gt).is_err());
    }

    #[test]
    fn summary_examples() {
        let (c, a) = summarize(&[1.0, 1.0]).unwrap();
        assert_eq!(c, 100.0);
        assert!((97.5..=100.0).contains(&a));
        let (c, a) = summarize(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(c, 0.0);
        assert!(a <= 2.5);
        assert!(summarize(&[]).is_err());
        // grid points are exact decimals, so an IoU of 0.6 passes theta = 0.6
        assert_eq!(success_rate(&[0.6], 12.0 / 20.0), 1.0);
    }
}
