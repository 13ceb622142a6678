//! YOLO-style grid decoding and simple detection scoring.
//!
//! Each cell of a `cells_h x cells_w` grid predicts `boxes_per_cell` boxes;
//! box `b` owns logical channels `b*(5+classes) ..`, in the order
//! `tx, ty, tw, th, objectness, class scores...`. A `channel_map` can
//! reroute logical channels to any physical ordering.

use std::io::Write;

use crate::error::{Result, SdnnError};
use crate::tensor::{Dims3, TensorF32};

#[derive(Clone, Debug, PartialEq)]
pub struct GridLayout {
    pub cells_h: usize,
    pub cells_w: usize,
    pub boxes_per_cell: usize,
    pub classes: usize,
    /// Anchor `(w, h)` per box, in cell units.
    pub anchors: Vec<(f64, f64)>,
    /// `channel_map[logical] = physical`. Identity when absent.
    pub channel_map: Option<Vec<usize>>,
}

impl Default for GridLayout {
    fn default() -> Self {
        Self::new(14, 14, 3, 4)
    }
}

impl GridLayout {
    pub fn new(cells_h: usize, cells_w: usize, boxes_per_cell: usize, classes: usize) -> Self {
        Self {
            cells_h,
            cells_w,
            boxes_per_cell,
            classes,
            anchors: vec![(1.0, 1.0); boxes_per_cell],
            channel_map: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.boxes_per_cell * (5 + self.classes)
    }

    pub fn dims(&self) -> Dims3 {
        Dims3::new(self.channels(), self.cells_h, self.cells_w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells_h == 0 || self.cells_w == 0 || self.boxes_per_cell == 0 || self.classes == 0 {
            return Err(SdnnError::InvalidArgument(
                "grid layout sizes must be positive".into(),
            ));
        }
        if self.anchors.len() != self.boxes_per_cell {
            return Err(SdnnError::InvalidArgument(format!(
                "{} anchors for {} boxes per cell",
                self.anchors.len(),
                self.boxes_per_cell
            )));
        }
        if let Some(map) = &self.channel_map {
            let mut seen = vec![false; self.channels()];
            for &p in map {
                if p >= seen.len() || std::mem::replace(&mut seen[p], true) {
                    return Err(SdnnError::InvalidArgument(
                        "channel map must be a permutation".into(),
                    ));
                }
            }
            if map.len() != self.channels() {
                return Err(SdnnError::InvalidArgument(
                    "channel map length mismatch".into(),
                ));
            }
        }
        Ok(())
    }

    #[inline]
    fn physical(&self, logical: usize) -> usize {
        self.channel_map.as_ref().map_or(logical, |m| m[logical])
    }
}

/// Box in normalized image coordinates (`[0, 1]` spans the image).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub objectness: f64,
    pub class_id: usize,
}

impl BoundingBox {
    fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Decodes every box whose objectness probability is at least `conf_thresh`.
pub fn decode_grid(
    out: &TensorF32,
    layout: &GridLayout,
    conf_thresh: f64,
) -> Result<Vec<BoundingBox>> {
    layout.validate()?;
    let dims = out.dims3()?;
    if dims != layout.dims() {
        return Err(SdnnError::ShapeMismatch {
            expected: layout.dims().to_vec(),
            actual: dims.to_vec(),
        });
    }
    let data = out.data();
    let stride = 5 + layout.classes;
    let mut boxes = Vec::new();
    for row in 0..layout.cells_h {
        for col in 0..layout.cells_w {
            let at = |logical: usize| data[dims.index(layout.physical(logical), row, col)] as f64;
            for b in 0..layout.boxes_per_cell {
                let base = b * stride;
                let objectness = sigmoid(at(base + 4));
                if objectness < conf_thresh {
                    continue;
                }
                // First maximum wins ties.
                let class_id = (0..layout.classes)
                    .fold((0, f64::NEG_INFINITY), |(best, v), c| {
                        let s = at(base + 5 + c);
                        if s > v {
                            (c, s)
                        } else {
                            (best, v)
                        }
                    })
                    .0;
                let (aw, ah) = layout.anchors[b];
                boxes.push(BoundingBox {
                    cx: (col as f64 + sigmoid(at(base))) / layout.cells_w as f64,
                    cy: (row as f64 + sigmoid(at(base + 1))) / layout.cells_h as f64,
                    w: aw * at(base + 2).exp() / layout.cells_w as f64,
                    h: ah * at(base + 3).exp() / layout.cells_h as f64,
                    objectness,
                    class_id,
                });
            }
        }
    }
    Ok(boxes)
}

/// Intersection over union; 0 when either box has no area.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || a.area() <= 0.0 || b.area() <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// 11-point interpolated average precision.
    pub ap: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub ground_truth: usize,
}

/// Greedy matching in descending objectness (ties keep input order): each
/// prediction claims the best-overlapping unclaimed truth box of its class
/// in the same frame when the IoU reaches `iou_thresh`.
///
/// Empty denominators count as vacuously perfect: with no predictions
/// precision is 1, with no ground truth recall is 1.
pub fn score_detections(
    predictions: &[Vec<BoundingBox>],
    truth: &[Vec<BoundingBox>],
    iou_thresh: f64,
) -> Result<DetectionScore> {
    if predictions.len() != truth.len() {
        return Err(SdnnError::InvalidArgument(format!(
            "{} prediction frames vs {} truth frames",
            predictions.len(),
            truth.len()
        )));
    }
    let mut order: Vec<(usize, usize)> = predictions
        .iter()
        .enumerate()
        .flat_map(|(f, p)| (0..p.len()).map(move |i| (f, i)))
        .collect();
    order.sort_by(|a, b| {
        predictions[b.0][b.1]
            .objectness
            .total_cmp(&predictions[a.0][a.1].objectness)
    });
    let mut claimed: Vec<Vec<bool>> = truth.iter().map(|t| vec![false; t.len()]).collect();
    let ground_truth: usize = truth.iter().map(Vec::len).sum();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut curve = Vec::with_capacity(order.len());
    for (f, i) in order {
        let p = &predictions[f][i];
        let best = truth[f]
            .iter()
            .enumerate()
            .filter(|(j, t)| !claimed[f][*j] && t.class_id == p.class_id)
            .map(|(j, t)| (j, iou(p, t)))
            .filter(|(_, v)| *v >= iou_thresh)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((j, _)) => {
                claimed[f][j] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        let recall = if ground_truth == 0 {
            1.0
        } else {
            tp as f64 / ground_truth as f64
        };
        curve.push((recall, tp as f64 / (tp + fp) as f64));
    }
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if ground_truth == 0 {
        1.0
    } else {
        tp as f64 / ground_truth as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let ap = if ground_truth == 0 {
        if fp == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        (0..=10)
            .map(|r| {
                let r = r as f64 / 10.0;
                curve
                    .iter()
                    .filter(|(rec, _)| *rec >= r - 1e-12)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max)
            })
            .sum::<f64>()
            / 11.0
    };
    Ok(DetectionScore {
        precision,
        recall,
        f1,
        ap,
        true_positives: tp,
        false_positives: fp,
        ground_truth,
    })
}

/// CSV `frame,cx,cy,w,h,objectness,class`.
pub fn write_detections_csv<W: Write>(w: W, frames: &[Vec<BoundingBox>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["frame", "cx", "cy", "w", "h", "objectness", "class"])?;
    for (f, boxes) in frames.iter().enumerate() {
        for b in boxes {
            out.write_record([
                f.to_string(),
                b.cx.to_string(),
                b.cy.to_string(),
                b.w.to_string(),
                b.h.to_string(),
                b.objectness.to_string(),
                b.class_id.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(cx: f64, cy: f64) -> BoundingBox {
        BoundingBox {
            cx,
            cy,
            w: 1.0,
            h: 1.0,
            objectness: 0.9,
            class_id: 0,
        }
    }

    fn grid_with(layout: &GridLayout, fill: f32, set: &[(usize, usize, usize, f32)]) -> TensorF32 {
        let dims = layout.dims();
        let mut data = vec![fill; dims.len()];
        for &(c, y, x, v) in set {
            data[dims.index(c, y, x)] = v;
        }
        TensorF32::new(dims.to_vec(), data).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&unit(0.0, 0.0), &unit(0.0, 0.0)), 1.0);
        assert_eq!(iou(&unit(0.0, 0.0), &unit(5.0, 5.0)), 0.0);
        assert!((iou(&unit(0.0, 0.0), &unit(0.5, 0.0)) - 1.0 / 3.0).abs() < 1e-12);
        let mut z = unit(0.0, 0.0);
        z.w = 0.0;
        assert_eq!(iou(&z, &z), 0.0);
    }

    #[test]
    fn very_negative_logits_decode_nothing() {
        let layout = GridLayout::default();
        assert_eq!(layout.channels(), 27);
        let t = grid_with(&layout, -50.0, &[]);
        assert!(decode_grid(&t, &layout, 0.5).unwrap().is_empty());
    }

    #[test]
    fn single_box_centered_in_cell() {
        let layout = GridLayout::default();
        // cell (row 3, col 5), box 1: tx=ty=tw=th=0, objectness high, class 2 dominant
        let b = 9;
        let t = grid_with(
            &layout,
            -50.0,
            &[
                (b, 3, 5, 0.0),
                (b + 1, 3, 5, 0.0),
                (b + 2, 3, 5, 0.0),
                (b + 3, 3, 5, 0.0),
                (b + 4, 3, 5, 10.0),
                (b + 7, 3, 5, 4.0),
            ],
        );
        let boxes = decode_grid(&t, &layout, 0.5).unwrap();
        assert_eq!(boxes.len(), 1);
        let d = boxes[0];
        assert!((d.cx - 5.5 / 14.0).abs() < 1e-12);
        assert!((d.cy - 3.5 / 14.0).abs() < 1e-12);
        assert!((d.w - 1.0 / 14.0).abs() < 1e-12);
        assert_eq!(d.class_id, 2);
    }

    #[test]
    fn channel_map_reroutes_fields() {
        let mut layout = GridLayout::new(1, 1, 1, 1);
        // physical order reversed
        layout.channel_map = Some((0..6).rev().collect());
        let t = grid_with(&layout, 0.0, &[(1, 0, 0, 10.0)]); // logical 4 = objectness
        assert_eq!(decode_grid(&t, &layout, 0.9).unwrap().len(), 1);
        layout.channel_map = Some(vec![0, 0, 1, 2, 3, 4]);
        assert!(layout.validate().is_err());
    }

    #[test]
    fn decode_rejects_wrong_dims() {
        let layout = GridLayout::default();
        let t = TensorF32::zeros(vec![27, 13, 14]);
        assert!(decode_grid(&t, &layout, 0.5).is_err());
    }

    #[test]
    fn scoring_examples() {
        let truth = vec![vec![unit(0.0, 0.0)]];
        let s = score_detections(&truth, &truth, 0.5).unwrap();
        assert_eq!((s.precision, s.recall, s.ap), (1.0, 1.0, 1.0));

        let s = score_detections(&[vec![]], &truth, 0.5).unwrap();
        assert_eq!(s.recall, 0.0);
        assert_eq!(s.ap, 0.0);

        let preds = vec![vec![unit(0.0, 0.0), unit(9.0, 9.0)]];
        let s = score_detections(&preds, &truth, 0.5).unwrap();
        assert_eq!(s.precision, 0.5);
        assert_eq!(s.recall, 1.0);

        assert!(score_detections(&[vec![], vec![]], &truth, 0.5).is_err());
    }

    #[test]
    fn class_mismatch_is_false_positive() {
        let truth = vec![vec![unit(0.0, 0.0)]];
        let mut p = unit(0.0, 0.0);
        p.class_id = 1;
        let s = score_detections(&[vec![p]], &truth, 0.5).unwrap();
        assert_eq!((s.true_positives, s.false_positives), (0, 1));
    }
}
