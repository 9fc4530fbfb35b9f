//! Segmentation scoring.
//!
//! Predicted and ground-truth labels are matched once for a whole set of
//! views: the IoU of every (gt, pred) label pair is averaged over views,
//! the resulting `n_gt × max(n_gt, n_pred)` matrix (zero-padded) is solved
//! as a maximum-weight linear assignment, and the paired values give the
//! mean IoU. A pair counts as correct when its IoU exceeds 0.5; precision
//! divides by `n_pred` and recall by `n_gt`.
//!
//! A view in which both labels of a pair are absent is skipped for that
//! pair rather than counted as IoU 0.

mod assignment;

use serde::{Deserialize, Serialize};

pub use assignment::max_weight_assignment;

use crate::error::{Error, Result};
use crate::scene_io::LabelMap;

/// Threshold above which a paired IoU counts as a correct match.
pub const MATCH_IOU: f64 = 0.5;

/// A binary image mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, data: Vec<bool>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::Dimension(format!(
                "{} mask pixels for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    pub fn from_label(map: &LabelMap, label: u32) -> Self {
        BinaryMask {
            width: map.width,
            height: map.height,
            data: map.mask(label),
        }
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    fn check_same(&self, other: &BinaryMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Dimension(format!(
                "masks are {}x{} and {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

fn ratio(inter: usize, union: usize) -> f64 {
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// `|a ∩ b| / |a ∪ b|`, 0 when both are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same(b)?;
    let mut inter = 0;
    let mut union = 0;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(ratio(inter, union))
}

/// Chebyshev distance from every mask pixel to the nearest pixel outside
/// the mask, counting the area beyond the image border as outside.
fn inner_distance(mask: &BinaryMask) -> Vec<u32> {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut d = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            if mask.data[y * w + x] {
                let border = (x + 1).min(y + 1).min(w - x).min(h - y);
                d[y * w + x] = border as u32;
            }
        }
    }
    // two-pass chamfer with unit 8-neighborhood steps
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if d[i] == 0 {
                continue;
            }
            let mut best = d[i];
            if x > 0 {
                best = best.min(d[i - 1] + 1);
            }
            if y > 0 {
                best = best.min(d[i - w] + 1);
                if x > 0 {
                    best = best.min(d[i - w - 1] + 1);
                }
                if x + 1 < w {
                    best = best.min(d[i - w + 1] + 1);
                }
            }
            d[i] = best;
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let i = y * w + x;
            if d[i] == 0 {
                continue;
            }
            let mut best = d[i];
            if x + 1 < w {
                best = best.min(d[i + 1] + 1);
            }
            if y + 1 < h {
                best = best.min(d[i + w] + 1);
                if x + 1 < w {
                    best = best.min(d[i + w + 1] + 1);
                }
                if x > 0 {
                    best = best.min(d[i + w - 1] + 1);
                }
            }
            d[i] = best;
        }
    }
    d
}

/// Pixels of `mask` within `d` pixels (Chebyshev) of its boundary.
pub fn boundary_band(mask: &BinaryMask, d: u32) -> BinaryMask {
    let dist = inner_distance(mask);
    BinaryMask {
        width: mask.width,
        height: mask.height,
        data: dist.iter().map(|&v| v > 0 && v <= d).collect(),
    }
}

/// Band width in pixels for a fraction of the image diagonal.
pub fn band_width(width: u32, height: u32, band_frac: f64) -> u32 {
    let diag = ((width as f64).powi(2) + (height as f64).powi(2)).sqrt();
    (band_frac * diag).ceil().max(1.0) as u32
}

/// IoU of the boundary bands of two masks; the band is
/// `ceil(band_frac × diagonal)` pixels wide.
pub fn boundary_iou(a: &BinaryMask, b: &BinaryMask, band_frac: f64) -> Result<f64> {
    a.check_same(b)?;
    if !(band_frac > 0.0) {
        return Err(Error::Invalid(format!("band_frac {band_frac} must be positive")));
    }
    let d = band_width(a.width, a.height, band_frac);
    iou(&boundary_band(a, d), &boundary_band(b, d))
}

/// Relative IoU loss `(full - partial) / full`.
pub fn iou_drop(iou_full: f64, iou_partial: f64) -> Result<f64> {
    if !(iou_full > 0.0) {
        return Err(Error::Invalid("iou_drop needs a positive full-data IoU".into()));
    }
    Ok((iou_full - iou_partial) / iou_full)
}

/// One ground-truth row of the assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub gt: u32,
    /// `None` when the row was matched to a zero padding column.
    pub pred: Option<u32>,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_gt: usize,
    pub n_pred: usize,
    pub n_correct: usize,
    pub pairs: Vec<Pair>,
    /// Mean boundary IoU over the same pairing, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_boundary_iou: Option<f64>,
}

impl EvalReport {
    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "mIoU {:.4}  precision {:.4}  recall {:.4}  (gt {}, pred {}, correct {})\n",
            self.mean_iou, self.precision, self.recall, self.n_gt, self.n_pred, self.n_correct
        ));
        if let Some(b) = self.mean_boundary_iou {
            s.push_str(&format!("mBIoU {b:.4}\n"));
        }
        s.push_str("  gt    pred    IoU\n");
        for p in &self.pairs {
            let pred = p.pred.map_or("-".to_string(), |v| v.to_string());
            s.push_str(&format!("{:>4}  {:>6}  {:.4}\n", p.gt, pred, p.iou));
        }
        s
    }
}

fn labels_of(maps: &[LabelMap]) -> Vec<u32> {
    let mut set = std::collections::BTreeSet::new();
    for m in maps {
        set.extend(m.labels.iter().copied().filter(|&l| l != 0));
    }
    set.into_iter().collect()
}

fn check_views(pred: &[LabelMap], gt: &[LabelMap]) -> Result<()> {
    if gt.is_empty() {
        return Err(Error::Invalid("evaluation needs at least one view".into()));
    }
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "{} predicted views but {} ground-truth views",
            pred.len(),
            gt.len()
        )));
    }
    for (k, (p, g)) in pred.iter().zip(gt).enumerate() {
        if !p.same_shape(g) {
            return Err(Error::Dimension(format!(
                "view {k}: prediction {}x{} vs ground truth {}x{}",
                p.width, p.height, g.width, g.height
            )));
        }
    }
    Ok(())
}

/// View-averaged IoU of every (gt, pred) label pair, row-major
/// `n_gt × n_pred`, with the label lists.
pub fn iou_matrix(pred: &[LabelMap], gt: &[LabelMap]) -> Result<(Vec<u32>, Vec<u32>, Vec<f64>)> {
    check_views(pred, gt)?;
    let gt_labels = labels_of(gt);
    let pred_labels = labels_of(pred);
    let (ng, np) = (gt_labels.len(), pred_labels.len());
    let gt_index: std::collections::HashMap<u32, usize> =
        gt_labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let pred_index: std::collections::HashMap<u32, usize> =
        pred_labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();

    let mut sum = vec![0.0f64; ng * np];
    let mut count = vec![0usize; ng * np];
    let mut inter = vec![0usize; ng * np];
    let mut gt_area = vec![0usize; ng];
    let mut pred_area = vec![0usize; np];
    for (p, g) in pred.iter().zip(gt) {
        inter.iter_mut().for_each(|v| *v = 0);
        gt_area.iter_mut().for_each(|v| *v = 0);
        pred_area.iter_mut().for_each(|v| *v = 0);
        for (&pl, &gl) in p.labels.iter().zip(&g.labels) {
            let pi = (pl != 0).then(|| pred_index[&pl]);
            let gi = (gl != 0).then(|| gt_index[&gl]);
            if let Some(pi) = pi {
                pred_area[pi] += 1;
            }
            if let Some(gi) = gi {
                gt_area[gi] += 1;
            }
            if let (Some(pi), Some(gi)) = (pi, gi) {
                inter[gi * np + pi] += 1;
            }
        }
        for i in 0..ng {
            for j in 0..np {
                let (a, b) = (gt_area[i], pred_area[j]);
                if a == 0 && b == 0 {
                    continue;
                }
                let n = inter[i * np + j];
                sum[i * np + j] += ratio(n, a + b - n);
                count[i * np + j] += 1;
            }
        }
    }
    let matrix = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    Ok((gt_labels, pred_labels, matrix))
}

/// Scores predicted label maps against ground truth over a set of views.
pub fn evaluate(pred: &[LabelMap], gt: &[LabelMap]) -> Result<EvalReport> {
    let (gt_labels, pred_labels, matrix) = iou_matrix(pred, gt)?;
    let (ng, np) = (gt_labels.len(), pred_labels.len());
    if ng == 0 {
        return Err(Error::Invalid("ground truth contains no masks".into()));
    }
    let cols = ng.max(np);
    let mut padded = vec![0.0; ng * cols];
    for i in 0..ng {
        padded[i * cols..i * cols + np].copy_from_slice(&matrix[i * np..(i + 1) * np]);
    }
    let col_of = max_weight_assignment(&padded, ng, cols);
    let mut pairs = Vec::with_capacity(ng);
    let mut total = 0.0;
    let mut n_correct = 0;
    for (i, &j) in col_of.iter().enumerate() {
        let value = padded[i * cols + j];
        total += value;
        if value > MATCH_IOU {
            n_correct += 1;
        }
        pairs.push(Pair {
            gt: gt_labels[i],
            pred: (j < np).then(|| pred_labels[j]),
            iou: value,
        });
    }
    Ok(EvalReport {
        mean_iou: total / ng as f64,
        precision: if np == 0 { 0.0 } else { n_correct as f64 / np as f64 },
        recall: n_correct as f64 / ng as f64,
        n_gt: ng,
        n_pred: np,
        n_correct,
        pairs,
        mean_boundary_iou: None,
    })
}

/// Mean boundary IoU over the pairing of `report`. Views where both masks
/// of a pair are empty are skipped, as in [`evaluate`]; padding rows score 0.
pub fn mean_boundary_iou(
    pred: &[LabelMap],
    gt: &[LabelMap],
    report: &EvalReport,
    band_frac: f64,
) -> Result<f64> {
    check_views(pred, gt)?;
    if report.pairs.is_empty() {
        return Err(Error::Invalid("report has no pairs".into()));
    }
    let mut total = 0.0;
    for pair in &report.pairs {
        let Some(pl) = pair.pred else { continue };
        let mut sum = 0.0;
        let mut n = 0usize;
        for (p, g) in pred.iter().zip(gt) {
            let a = BinaryMask::from_label(g, pair.gt);
            let b = BinaryMask::from_label(p, pl);
            if a.area() == 0 && b.area() == 0 {
                continue;
            }
            sum += boundary_iou(&a, &b, band_frac)?;
            n += 1;
        }
        if n > 0 {
            total += sum / n as f64;
        }
    }
    Ok(total / report.pairs.len() as f64)
}
