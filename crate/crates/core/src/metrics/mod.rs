//! Evaluation: classification scores, average precision, MOTA, skeleton
//! coverage and the anticipation metrics M1/M2/M3.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::GtBox;
use crate::tracker::{hungarian_min_cost, iou, TrackedBox};

/// IoU needed for a track box to count as covering a ground-truth box.
pub const MOTA_IOU: f64 = 0.5;

/// Frames before onset examined by the anticipation metrics.
pub const ANTICIPATION_HORIZON: u32 = 16;

/// Frames per sequence in the skeleton-coverage test set.
pub const COVERAGE_SEQUENCE_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{preds} predictions but {gts} labels")]
    LengthMismatch { preds: usize, gts: usize },
    #[error("no positive labels")]
    NoPositives,
    #[error("empty ground truth")]
    EmptyGroundTruth,
    #[error("empty test set")]
    EmptyTestSet,
    #[error("sequence {index} has {got} frames, expected {expected}")]
    SequenceLength { index: usize, expected: usize, got: usize },
    #[error("not enough prediction history before onset {onset} (first predicted frame {first:?})")]
    InsufficientHistory { onset: u32, first: Option<u32> },
}

/// Confusion counts with crossing as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    /// Nothing was predicted positive; precision is reported as 1.
    pub precision_degenerate: bool,
    /// No positive labels; recall is reported as 1.
    pub recall_degenerate: bool,
}

pub fn prf_accuracy(preds: &[bool], gts: &[bool]) -> Result<Prf, MetricsError> {
    if preds.len() != gts.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            gts: gts.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyTestSet);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &g) in preds.iter().zip(gts) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    Ok(Prf {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        accuracy: (tp + tn) as f64 / preds.len() as f64,
        tp,
        fp,
        tn,
        fn_,
        precision_degenerate: tp + fp == 0,
        recall_degenerate: tp + fn_ == 0,
    })
}

/// `(recall, precision)` after each item of the ranking by descending
/// score. Equal scores keep their input order.
pub fn pr_curve(scores: &[f64], gts: &[bool]) -> Result<Vec<(f64, f64)>, MetricsError> {
    if scores.len() != gts.len() {
        return Err(MetricsError::LengthMismatch {
            preds: scores.len(),
            gts: gts.len(),
        });
    }
    let positives = gts.iter().filter(|&&g| g).count();
    if positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0;
    Ok(order
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            tp += gts[i] as usize;
            (tp as f64 / positives as f64, tp as f64 / (k + 1) as f64)
        })
        .collect())
}

/// Area under the all-point interpolated precision/recall curve.
pub fn average_precision(scores: &[f64], gts: &[bool]) -> Result<f64, MetricsError> {
    let curve = pr_curve(scores, gts)?;
    let mut envelope = 0.0f64;
    let mut ap = 0.0;
    let mut prev_recall = 1.0;
    for &(r, p) in curve.iter().rev() {
        // step down to the previous recall level
        if r < prev_recall {
            ap += (prev_recall - r) * envelope;
            prev_recall = r;
        }
        envelope = envelope.max(p);
    }
    ap += prev_recall * envelope;
    Ok(ap.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotaResult {
    pub mota: f64,
    pub gt_count: usize,
    pub matches: usize,
    pub false_negatives: usize,
    pub false_positives: usize,
    pub id_switches: usize,
}

/// CLEAR MOT accuracy with per-frame Hungarian matching at `iou_match`.
///
/// An identity switch is a ground-truth object matched to a different track
/// than at its previous match.
pub fn mota(tracked: &[TrackedBox], gt: &[GtBox], iou_match: f64) -> Result<MotaResult, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let mut frames: BTreeMap<u32, (Vec<&GtBox>, Vec<&TrackedBox>)> = BTreeMap::new();
    for g in gt {
        frames.entry(g.frame).or_default().0.push(g);
    }
    for t in tracked {
        frames.entry(t.frame).or_default().1.push(t);
    }
    let mut last: HashMap<u32, u32> = HashMap::new();
    let (mut matches, mut fp, mut fn_, mut idsw) = (0, 0, 0, 0);
    for (gs, ts) in frames.values() {
        let mut cost = vec![0.0; gs.len() * ts.len()];
        for (i, g) in gs.iter().enumerate() {
            for (j, t) in ts.iter().enumerate() {
                let o = iou(&g.bbox, &t.bbox);
                cost[i * ts.len() + j] = if o >= iou_match { 1.0 - o } else { crate::tracker::FORBIDDEN };
            }
        }
        let mut matched = 0;
        if !gs.is_empty() && !ts.is_empty() {
            for (i, j) in hungarian_min_cost(&cost, gs.len(), ts.len()) {
                if cost[i * ts.len() + j] >= crate::tracker::FORBIDDEN {
                    continue;
                }
                matched += 1;
                let (pid, tid) = (gs[i].pedestrian_id, ts[j].track_id);
                if last.insert(pid, tid).is_some_and(|prev| prev != tid) {
                    idsw += 1;
                }
            }
        }
        matches += matched;
        fn_ += gs.len() - matched;
        fp += ts.len() - matched;
    }
    Ok(MotaResult {
        mota: 1.0 - (fn_ + fp + idsw) as f64 / gt.len() as f64,
        gt_count: gt.len(),
        matches,
        false_negatives: fn_,
        false_positives: fp,
        id_switches: idsw,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Percent of sequences with at least one found skeleton.
    pub r1: f64,
    /// Percent of all frames with a found skeleton.
    pub r2: f64,
    /// Percent of frames of found sequences with a found skeleton.
    pub r3: f64,
    /// No sequence was found; `r3` is reported as 0.
    pub r3_degenerate: bool,
    pub sequences: usize,
    pub found_sequences: usize,
    pub found_frames: usize,
}

/// Skeleton coverage over fixed-length sequences; `found[i][k]` says whether
/// frame `k` of sequence `i` was fitted with a skeleton.
pub fn skeleton_coverage(found: &[Vec<bool>], seq_len: usize) -> Result<Coverage, MetricsError> {
    if found.is_empty() {
        return Err(MetricsError::EmptyTestSet);
    }
    if let Some((index, s)) = found.iter().enumerate().find(|(_, s)| s.len() != seq_len) {
        return Err(MetricsError::SequenceLength {
            index,
            expected: seq_len,
            got: s.len(),
        });
    }
    let found_sequences = found.iter().filter(|s| s.iter().any(|&f| f)).count();
    let found_frames = found.iter().flatten().filter(|&&f| f).count();
    let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    Ok(Coverage {
        r1: pct(found_sequences, found.len()),
        r2: pct(found_frames, found.len() * seq_len),
        r3: pct(found_frames, found_sequences * seq_len),
        r3_degenerate: found_sequences == 0,
        sequences: found.len(),
        found_sequences,
        found_frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MScore {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

/// Anticipation scores of one crossing pedestrian from its per-frame
/// crossing decisions: M1 at `onset - horizon`, M2 at `onset`, M3 the share
/// of crossing decisions over `[onset - horizon, onset - 1]`. Frames without
/// a prediction count as not crossing.
pub fn m_metrics(preds: &[(u32, bool)], onset: u32, horizon: u32) -> Result<MScore, MetricsError> {
    let first = preds.iter().map(|p| p.0).min();
    if onset < horizon || first.is_none_or(|f| f > onset - horizon) {
        return Err(MetricsError::InsufficientHistory { onset, first });
    }
    let by_frame: HashMap<u32, bool> = preds.iter().copied().collect();
    let at = |f: u32| by_frame.get(&f).copied().unwrap_or(false);
    let hits = (onset - horizon..onset).filter(|&f| at(f)).count();
    Ok(MScore {
        m1: at(onset - horizon) as u8 as f64,
        m2: at(onset) as u8 as f64,
        m3: hits as f64 / horizon as f64,
    })
}

/// Scores of a non-crossing pedestrian, as correct-rejection rates relative
/// to its last predicted frame.
pub fn m_metrics_rejection(preds: &[(u32, bool)], horizon: u32) -> Result<MScore, MetricsError> {
    let last = preds.iter().map(|p| p.0).max().ok_or(MetricsError::InsufficientHistory { onset: 0, first: None })?;
    let flipped: Vec<(u32, bool)> = preds.iter().map(|&(f, c)| (f, !c)).collect();
    m_metrics(&flipped, last, horizon)
}

/// Ground truth of one pedestrian for [`aggregate_m_metrics`].
#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianPredictions {
    pub pedestrian_id: u32,
    pub onset: Option<u32>,
    /// `(frame, predicted crossing)`.
    pub preds: Vec<(u32, bool)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MAggregate {
    /// Percentages.
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub pedestrians: usize,
    /// Pedestrians skipped for onset before the horizon or missing history.
    pub excluded: usize,
    pub include_non_crossing: bool,
}

/// Mean M1/M2/M3 over crossing pedestrians (and, if requested,
/// non-crossing ones scored by [`m_metrics_rejection`]).
pub fn aggregate_m_metrics(
    peds: &[PedestrianPredictions],
    horizon: u32,
    include_non_crossing: bool,
) -> Result<MAggregate, MetricsError> {
    let mut sum = [0.0; 3];
    let mut n = 0;
    let mut excluded = 0;
    for p in peds {
        let score = match p.onset {
            Some(onset) => m_metrics(&p.preds, onset, horizon),
            None if include_non_crossing => m_metrics_rejection(&p.preds, horizon),
            None => continue,
        };
        match score {
            Ok(s) => {
                sum[0] += s.m1;
                sum[1] += s.m2;
                sum[2] += s.m3;
                n += 1;
            }
            Err(MetricsError::InsufficientHistory { .. }) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyTestSet);
    }
    let pct = |s: f64| 100.0 * s / n as f64;
    Ok(MAggregate {
        m1: pct(sum[0]),
        m2: pct(sum[1]),
        m3: pct(sum[2]),
        pedestrians: n,
        excluded,
        include_non_crossing,
    })
}

/// Every evaluation figure of one run. Absent figures were not computable
/// from the inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub frames: usize,
    pub positives: usize,
    pub ap: Option<f64>,
    pub prf: Option<Prf>,
    pub mota: Option<MotaResult>,
    pub coverage: Option<Coverage>,
    pub m: Option<MAggregate>,
    pub pr_curve: Vec<(f64, f64)>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| format!("{x:.6}"))
}

impl MetricsReport {
    /// `key=value` lines; missing figures are written as `na`.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("label", self.label.clone());
        kv("frames", self.frames.to_string());
        kv("positives", self.positives.to_string());
        kv("ap", opt(self.ap));
        let p = self.prf.as_ref();
        kv("precision", opt(p.map(|p| p.precision)));
        kv("recall", opt(p.map(|p| p.recall)));
        kv("accuracy", opt(p.map(|p| p.accuracy)));
        if let Some(p) = p {
            kv("tp", p.tp.to_string());
            kv("fp", p.fp.to_string());
            kv("tn", p.tn.to_string());
            kv("fn", p.fn_.to_string());
            kv("precision_degenerate", p.precision_degenerate.to_string());
            kv("recall_degenerate", p.recall_degenerate.to_string());
        }
        let t = self.mota.as_ref();
        kv("mota", opt(t.map(|t| t.mota)));
        if let Some(t) = t {
            kv("gt_boxes", t.gt_count.to_string());
            kv("false_negatives", t.false_negatives.to_string());
            kv("false_positives", t.false_positives.to_string());
            kv("id_switches", t.id_switches.to_string());
        }
        let c = self.coverage.as_ref();
        kv("r1", opt(c.map(|c| c.r1)));
        kv("r2", opt(c.map(|c| c.r2)));
        kv("r3", opt(c.map(|c| c.r3)));
        if let Some(c) = c {
            kv("coverage_sequences", c.sequences.to_string());
            kv("r3_degenerate", c.r3_degenerate.to_string());
        }
        let m = self.m.as_ref();
        kv("m1", opt(m.map(|m| m.m1)));
        kv("m2", opt(m.map(|m| m.m2)));
        kv("m3", opt(m.map(|m| m.m3)));
        if let Some(m) = m {
            kv("m_pedestrians", m.pedestrians.to_string());
            kv("m_excluded", m.excluded.to_string());
            kv("m_include_non_crossing", m.include_non_crossing.to_string());
        }
        s
    }

    /// `recall,precision` rows.
    pub fn pr_curve_csv(&self) -> String {
        let mut s = String::from("recall,precision\n");
        for (r, p) in &self.pr_curve {
            let _ = writeln!(s, "{r},{p}");
        }
        s
    }
}

/// Parses `key=value` lines into a map, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

#[cfg(test)]
mod tests;
