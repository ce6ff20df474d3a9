//! Region similarity (IoU), contour F-measure, and per-sequence
//! mean / recall / decay aggregation.

use crate::error::{Error, Result};
use crate::media_io::BinaryMask;

pub const DEFAULT_BOUNDARY_TOL: usize = 2;
/// Frames scoring above this count toward recall.
pub const RECALL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScore {
    pub j: f64,
    pub f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceReport {
    pub j_mean: f64,
    pub j_recall: f64,
    pub j_decay: f64,
    pub f_mean: f64,
    pub f_recall: f64,
    pub f_decay: f64,
}

fn check_dims(pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            found: pred.dims(),
            context: " (prediction vs ground truth)".into(),
        });
    }
    Ok(())
}

/// Intersection over union; 1 when both masks are empty.
pub fn region_similarity(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_dims(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        let (p, g) = (p != 0, g != 0);
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Foreground pixels 4-adjacent to background or to the image border.
pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut out = BinaryMask::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1);
            out.set(x, y, edge);
        }
    }
    out
}

/// Square (Chebyshev) dilation by `r`, done separably.
fn dilate(mask: &BinaryMask, r: usize) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut rows = BinaryMask::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows.set(x, y, (lo..=hi).any(|xx| mask.get(xx, y)));
        }
    }
    let mut out = BinaryMask::zeros(w, h);
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            out.set(x, y, (lo..=hi).any(|yy| rows.get(x, yy)));
        }
    }
    out
}

fn matched_fraction(from: &BinaryMask, near_to: &BinaryMask) -> (usize, usize) {
    let total = from.count();
    let hit = from
        .data
        .iter()
        .zip(&near_to.data)
        .filter(|(&a, &b)| a != 0 && b != 0)
        .count();
    (hit, total)
}

/// Boundary F-measure: a boundary pixel matches when the other boundary
/// has a pixel within Chebyshev distance `tol`.
pub fn contour_f_measure(pred: &BinaryMask, gt: &BinaryMask, tol: usize) -> Result<f64> {
    check_dims(pred, gt)?;
    let bp = boundary(pred);
    let bg = boundary(gt);
    let (np, ng) = (bp.count(), bg.count());
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    let (hit_p, _) = matched_fraction(&bp, &dilate(&bg, tol));
    let (hit_g, _) = matched_fraction(&bg, &dilate(&bp, tol));
    let precision = if np == 0 { 0.0 } else { hit_p as f64 / np as f64 };
    let recall = if ng == 0 { 0.0 } else { hit_g as f64 / ng as f64 };
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

pub fn score_frame(pred: &BinaryMask, gt: &BinaryMask, tol: usize) -> Result<FrameScore> {
    Ok(FrameScore {
        j: region_similarity(pred, gt)?,
        f: contour_f_measure(pred, gt, tol)?,
    })
}

pub fn score_sequence(preds: &[BinaryMask], gts: &[BinaryMask], tol: usize) -> Result<Vec<FrameScore>> {
    if preds.len() != gts.len() {
        return Err(Error::CountMismatch {
            left: preds.len(),
            right: gts.len(),
            context: " (predictions vs ground truth)".into(),
        });
    }
    preds
        .iter()
        .zip(gts)
        .map(|(p, g)| score_frame(p, g, tol))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean, recall and decay of one measure.
///
/// Decay is the mean over the first quarter of the frames minus the mean
/// over the last quarter (`n / 4` frames each); zero below four frames.
pub fn summarize(values: &[f64]) -> Result<(f64, f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = values.len();
    let recall = values.iter().filter(|&&v| v > RECALL_THRESHOLD).count() as f64 / n as f64;
    let q = n / 4;
    let decay = if q == 0 {
        0.0
    } else {
        mean(&values[..q]) - mean(&values[n - q..])
    };
    Ok((mean(values), recall, decay))
}

pub fn aggregate(scores: &[FrameScore]) -> Result<SequenceReport> {
    let j: Vec<f64> = scores.iter().map(|s| s.j).collect();
    let f: Vec<f64> = scores.iter().map(|s| s.f).collect();
    let (j_mean, j_recall, j_decay) = summarize(&j)?;
    let (f_mean, f_recall, f_decay) = summarize(&f)?;
    Ok(SequenceReport {
        j_mean,
        j_recall,
        j_decay,
        f_mean,
        f_recall,
        f_decay,
    })
}

/// Per-frame table followed by one `key = value` line per aggregate.
pub fn format_report(scores: &[FrameScore], report: &SequenceReport) -> String {
    let mut out = String::from("frame\tj\tf\n");
    for (i, s) in scores.iter().enumerate() {
        out.push_str(&format!("{i}\t{:.4}\t{:.4}\n", s.j, s.f));
    }
    for (k, v) in [
        ("j_mean", report.j_mean),
        ("j_recall", report.j_recall),
        ("j_decay", report.j_decay),
        ("f_mean", report.f_mean),
        ("f_recall", report.f_recall),
        ("f_decay", report.f_decay),
    ] {
        out.push_str(&format!("{k} = {v:.6}\n"));
    }
    out
}
