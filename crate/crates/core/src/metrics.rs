//! Keypoint detection metrics: average precision at pixel thresholds and
//! average keypoint distance (AKD).
//!
//! AP follows the detection convention. Predictions of one category are
//! ranked by confidence and each greedily claims the nearest unclaimed
//! ground-truth point of its frame within the threshold. The score is the
//! all-points interpolated area under the precision/recall curve. AKD pairs
//! predictions and ground truth per frame and category by a minimum-cost
//! assignment on pixel distance, with no distance cap, so it measures
//! localization separately from detection.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::annotation::{round_pixel, AnnotatedFrame};

/// Pixel thresholds reported by default.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [2.0, 4.0, 8.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub frame_id: String,
    pub category: String,
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frame_id: String,
    pub category: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("prediction {index}: confidence {confidence} is outside [0, 1]")]
    Confidence { index: usize, confidence: f64 },
    #[error("{what} {index}: coordinates are not finite")]
    NonFinite { what: &'static str, index: usize },
    #[error("thresholds must be positive and finite")]
    Threshold,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Ground truth from annotated frames: visible keypoints only, at the
/// integer pixels the answer serializer writes.
pub fn ground_truth_from_frames(frames: &[AnnotatedFrame]) -> Vec<GroundTruth> {
    frames
        .iter()
        .flat_map(|f| {
            f.keypoints.iter().filter(|k| k.visible).map(move |k| {
                let [x, y] = round_pixel(k.pixel);
                GroundTruth { frame_id: f.frame_id.clone(), category: k.label.clone(), x: x as f64, y: y as f64 }
            })
        })
        .collect()
}

fn dist(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    (ax - bx).hypot(ay - by)
}

/// Ranking order: confidence descending, then frame id, then pixel.
fn rank(a: &Prediction, b: &Prediction) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.frame_id.cmp(&b.frame_id))
        .then_with(|| a.x.total_cmp(&b.x))
        .then_with(|| a.y.total_cmp(&b.y))
}

/// True-positive flags of `preds` (one category) in ranked order, and the
/// ground-truth count.
pub fn greedy_matches(preds: &[Prediction], gts: &[GroundTruth], threshold: f64) -> (Vec<bool>, usize) {
    let mut by_frame: BTreeMap<&str, Vec<(f64, f64, bool)>> = BTreeMap::new();
    for g in gts {
        by_frame.entry(&g.frame_id).or_default().push((g.x, g.y, false));
    }
    for pts in by_frame.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    }
    let mut ranked: Vec<&Prediction> = preds.iter().collect();
    ranked.sort_by(|a, b| rank(a, b));
    let tp = ranked
        .iter()
        .map(|p| {
            let Some(pts) = by_frame.get_mut(p.frame_id.as_str()) else { return false };
            let best = pts
                .iter()
                .enumerate()
                .filter(|(_, g)| !g.2)
                .map(|(i, g)| (i, dist(p.x, p.y, g.0, g.1)))
                .filter(|&(_, d)| d <= threshold)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match best {
                Some((i, _)) => {
                    pts[i].2 = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    (tp, gts.len())
}

/// All-points interpolated AP from ranked true-positive flags. `None`
/// when there is no ground truth.
pub fn ap_from_ranked(tp: &[bool], gt_count: usize) -> Option<f64> {
    if gt_count == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    for (i, &t) in tp.iter().enumerate() {
        hits += usize::from(t);
        recall.push(hits as f64 / gt_count as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    // precision envelope, non-increasing from the right
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    Some(ap)
}

/// AP of one category at `threshold` pixels.
pub fn average_precision(preds: &[Prediction], gts: &[GroundTruth], threshold: f64) -> Option<f64> {
    let (tp, n) = greedy_matches(preds, gts, threshold);
    ap_from_ranked(&tp, n)
}

/// Minimum-cost assignment for a `rows x cols` cost matrix with
/// `rows <= cols`; returns the column assigned to each row.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    debug_assert!(n <= m);
    // potentials and matching over 1-based indices, column 0 is a sentinel
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; m + 1]);
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Distances of the minimum-cost pairing between ground truth and
/// predictions of one frame and category. Unpaired points on either side
/// are left out.
pub fn assignment_distances(gts: &[(f64, f64)], preds: &[(f64, f64)]) -> Vec<f64> {
    if gts.is_empty() || preds.is_empty() {
        return Vec::new();
    }
    // distances are symmetric, so the shorter side can always be the rows
    let (rows, cols) = if gts.len() <= preds.len() { (gts, preds) } else { (preds, gts) };
    let cost: Vec<Vec<f64>> = rows.iter().map(|a| cols.iter().map(|b| dist(a.0, a.1, b.0, b.1)).collect()).collect();
    hungarian(&cost).iter().enumerate().map(|(i, &j)| cost[i][j]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: String,
    pub gt_count: usize,
    pub prediction_count: usize,
    /// AP in [0, 1] per threshold, `None` without ground truth.
    pub ap: Vec<Option<f64>>,
    /// Mean pixel distance over assigned ground truth, `None` if none.
    pub akd: Option<f64>,
    pub matched_gt: usize,
    pub unmatched_gt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub categories: Vec<CategoryReport>,
    /// Mean AP over categories per threshold, in percent.
    pub ap_percent: Vec<Option<f64>>,
    /// Mean over categories, then thresholds, in percent.
    pub map_percent: Option<f64>,
    /// Mean distance over every assigned ground-truth point (pixels).
    pub akd: Option<f64>,
    pub matched_gt: usize,
    pub unmatched_gt: usize,
    /// Fraction of ground truth with an assigned prediction.
    pub detection_rate: Option<f64>,
}

fn validate(preds: &[Prediction], gts: &[GroundTruth], thresholds: &[f64]) -> Result<(), MetricsError> {
    if thresholds.is_empty() || thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(MetricsError::Threshold);
    }
    for (index, p) in preds.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(MetricsError::NonFinite { what: "prediction", index });
        }
        if !(0.0..=1.0).contains(&p.confidence) {
            return Err(MetricsError::Confidence { index, confidence: p.confidence });
        }
    }
    for (index, g) in gts.iter().enumerate() {
        if !(g.x.is_finite() && g.y.is_finite()) {
            return Err(MetricsError::NonFinite { what: "ground truth", index });
        }
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores `preds` against `gts` at each threshold, per category.
pub fn evaluate(preds: &[Prediction], gts: &[GroundTruth], thresholds: &[f64]) -> Result<EvalReport, MetricsError> {
    validate(preds, gts, thresholds)?;
    let categories: BTreeSet<&str> = gts.iter().map(|g| g.category.as_str()).chain(preds.iter().map(|p| p.category.as_str())).collect();
    let mut reports = Vec::new();
    let mut all_distances = Vec::new();
    for cat in categories {
        let cp: Vec<Prediction> = preds.iter().filter(|p| p.category == cat).cloned().collect();
        let cg: Vec<GroundTruth> = gts.iter().filter(|g| g.category == cat).cloned().collect();
        let ap = thresholds.iter().map(|&t| average_precision(&cp, &cg, t)).collect();

        let mut frames: BTreeMap<&str, (Vec<(f64, f64)>, Vec<(f64, f64)>)> = BTreeMap::new();
        for g in &cg {
            frames.entry(&g.frame_id).or_default().0.push((g.x, g.y));
        }
        for p in &cp {
            frames.entry(&p.frame_id).or_default().1.push((p.x, p.y));
        }
        let mut distances = Vec::new();
        for (g, p) in frames.values_mut() {
            let order = |a: &(f64, f64), b: &(f64, f64)| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1));
            g.sort_by(order);
            p.sort_by(order);
            distances.extend(assignment_distances(g, p));
        }
        let matched = distances.len();
        reports.push(CategoryReport {
            category: cat.to_string(),
            gt_count: cg.len(),
            prediction_count: cp.len(),
            ap,
            akd: mean(distances.iter().copied()),
            matched_gt: matched,
            unmatched_gt: cg.len() - matched,
        });
        all_distances.extend(distances);
    }
    let ap_percent: Vec<Option<f64>> = (0..thresholds.len())
        .map(|k| mean(reports.iter().filter_map(|r| r.ap[k])).map(|v| 100.0 * v))
        .collect();
    let map_percent = mean(reports.iter().filter_map(|r| mean(r.ap.iter().flatten().copied()))).map(|v| 100.0 * v);
    let matched_gt: usize = reports.iter().map(|r| r.matched_gt).sum();
    let unmatched_gt: usize = reports.iter().map(|r| r.unmatched_gt).sum();
    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        categories: reports,
        ap_percent,
        map_percent,
        akd: mean(all_distances.into_iter()),
        matched_gt,
        unmatched_gt,
        detection_rate: (matched_gt + unmatched_gt > 0).then(|| matched_gt as f64 / (matched_gt + unmatched_gt) as f64),
    })
}

pub fn read_predictions<R: BufRead>(r: R) -> Result<Vec<Prediction>, MetricsError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(io::Error::from)?);
        }
    }
    Ok(out)
}

pub fn write_predictions<W: Write>(mut w: W, preds: &[Prediction]) -> io::Result<()> {
    for p in preds {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
