//! CSV readers and writers for the exchange formats.
//!
//! | file            | columns                                   |
//! |-----------------|-------------------------------------------|
//! | detections.csv  | `frame,x,y,w,h,confidence,class`          |
//! | keypoints.csv   | `frame,ped_id,x1,y1,v1,...,x17,y17,v17`   |
//! | labels.csv      | `ped_id,crossing,onset_frame`             |
//! | gt.csv          | `frame,ped_id,x,y,w,h`                    |
//! | tracks.csv      | `frame,track_id,x,y,w,h`                  |
//!
//! Every file may start with one header line. Lines starting with `#` and
//! blank lines are ignored. Floats are written with the shortest
//! representation that parses back to the same bits.

use std::fmt::Write as _;
use std::path::Path;

use crate::ingest::IngestError;
use crate::tracker::TrackedBox;
use crate::types::{BBox, Detection, IntentLabel, Keypoint, Skeleton17, Visibility, COCO_KEYPOINTS};

/// Detections at or below this confidence are dropped at ingest.
pub const DETECTION_CONFIDENCE_THRESHOLD: f64 = 0.5;

/// Class id of pedestrians in detection files.
pub const PEDESTRIAN_CLASS: i32 = 0;

/// One keypoints.csv record.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointRecord {
    pub frame: u32,
    pub pedestrian_id: u32,
    pub skeleton: Skeleton17,
}

/// One gt.csv row: an identity-labelled ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub frame: u32,
    pub pedestrian_id: u32,
    pub bbox: BBox,
}

pub(crate) fn read(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Data lines as `(1-based line number, fields)`, skipping comments, blanks
/// and a leading header (first data line whose first field is not numeric).
pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    let mut first = true;
    text.lines().enumerate().filter_map(move |(i, line)| {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if std::mem::take(&mut first) && fields[0].parse::<f64>().is_err() {
            return None;
        }
        Some((i + 1, fields))
    })
}

pub(crate) fn malformed(line: usize, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedLine {
        line,
        reason: reason.into(),
    }
}

pub(crate) fn expect_columns(line: usize, fields: &[&str], n: usize) -> Result<(), IngestError> {
    if fields.len() != n {
        return Err(malformed(line, format!("expected {n} columns, found {}", fields.len())));
    }
    Ok(())
}

pub(crate) fn num<T: std::str::FromStr>(line: usize, field: &str, what: &str) -> Result<T, IngestError> {
    field
        .parse::<T>()
        .map_err(|_| malformed(line, format!("{what}: cannot parse {field:?}")))
}

fn bbox_at(line: usize, f: &[&str]) -> Result<BBox, IngestError> {
    let x = num::<f64>(line, f[0], "x")?;
    let y = num::<f64>(line, f[1], "y")?;
    let w = num::<f64>(line, f[2], "w")?;
    let h = num::<f64>(line, f[3], "h")?;
    BBox::new(x, y, w, h).map_err(|e| malformed(line, e.to_string()))
}

pub fn parse_detections_str(text: &str) -> Result<Vec<Detection>, IngestError> {
    let mut out = Vec::new();
    for (line, f) in data_lines(text) {
        expect_columns(line, &f, 7)?;
        let frame = num::<u32>(line, f[0], "frame")?;
        let bbox = bbox_at(line, &f[1..5])?;
        let confidence = num::<f64>(line, f[5], "confidence")?;
        let class_id = num::<i32>(line, f[6], "class")?;
        let det = Detection::new(frame, bbox, confidence, class_id).map_err(|e| malformed(line, e.to_string()))?;
        if det.class_id == PEDESTRIAN_CLASS && det.confidence > DETECTION_CONFIDENCE_THRESHOLD {
            out.push(det);
        }
    }
    // stable: ties keep input order
    out.sort_by_key(|d| d.frame);
    Ok(out)
}

/// Reads detections.csv, keeping pedestrian rows with confidence above 0.5.
pub fn parse_detections(path: &Path) -> Result<Vec<Detection>, IngestError> {
    parse_detections_str(&read(path)?)
}

pub fn parse_keypoints_str(text: &str) -> Result<Vec<KeypointRecord>, IngestError> {
    let mut out = Vec::new();
    for (line, f) in data_lines(text) {
        expect_columns(line, &f, 2 + 3 * COCO_KEYPOINTS)?;
        let frame = num::<u32>(line, f[0], "frame")?;
        let pedestrian_id = num::<u32>(line, f[1], "ped_id")?;
        let mut points = [Keypoint::ABSENT; COCO_KEYPOINTS];
        for (k, p) in points.iter_mut().enumerate() {
            let c = 2 + 3 * k;
            let x = num::<f64>(line, f[c], "x")?;
            let y = num::<f64>(line, f[c + 1], "y")?;
            let v = num::<f64>(line, f[c + 2], "visibility")?;
            if v.fract() != 0.0 {
                return Err(IngestError::BadVisibility { line, value: v });
            }
            let visibility =
                Visibility::try_from(v as i64).map_err(|_| IngestError::BadVisibility { line, value: v })?;
            *p = Keypoint { x, y, visibility };
        }
        out.push(KeypointRecord {
            frame,
            pedestrian_id,
            skeleton: Skeleton17::new(points),
        });
    }
    out.sort_by_key(|r| r.frame);
    Ok(out)
}

pub fn parse_keypoints(path: &Path) -> Result<Vec<KeypointRecord>, IngestError> {
    parse_keypoints_str(&read(path)?)
}

pub fn parse_labels_str(text: &str) -> Result<Vec<IntentLabel>, IngestError> {
    let mut out = Vec::new();
    for (line, f) in data_lines(text) {
        expect_columns(line, &f, 3)?;
        let ped = num::<u32>(line, f[0], "ped_id")?;
        let crossing = match f[1] {
            "0" => false,
            "1" => true,
            other => return Err(malformed(line, format!("crossing must be 0 or 1, found {other:?}"))),
        };
        let onset = if f[2].is_empty() {
            None
        } else {
            Some(num::<u32>(line, f[2], "onset_frame")?)
        };
        let label = match (crossing, onset) {
            (false, Some(_)) => return Err(IngestError::InconsistentLabel { line, pedestrian: ped }),
            (true, None) => return Err(malformed(line, "crossing pedestrian without onset frame")),
            (c, o) => IntentLabel::new(ped, c, o).map_err(|e| malformed(line, e.to_string()))?,
        };
        out.push(label);
    }
    Ok(out)
}

pub fn parse_labels(path: &Path) -> Result<Vec<IntentLabel>, IngestError> {
    parse_labels_str(&read(path)?)
}

fn parse_id_boxes(text: &str) -> Result<Vec<(u32, u32, BBox)>, IngestError> {
    let mut out = Vec::new();
    for (line, f) in data_lines(text) {
        expect_columns(line, &f, 6)?;
        let frame = num::<u32>(line, f[0], "frame")?;
        let id = num::<u32>(line, f[1], "id")?;
        out.push((frame, id, bbox_at(line, &f[2..6])?));
    }
    out.sort_by_key(|r| r.0);
    Ok(out)
}

pub fn parse_gt_str(text: &str) -> Result<Vec<GtBox>, IngestError> {
    Ok(parse_id_boxes(text)?
        .into_iter()
        .map(|(frame, pedestrian_id, bbox)| GtBox {
            frame,
            pedestrian_id,
            bbox,
        })
        .collect())
}

pub fn parse_gt(path: &Path) -> Result<Vec<GtBox>, IngestError> {
    parse_gt_str(&read(path)?)
}

pub fn parse_tracks_str(text: &str) -> Result<Vec<TrackedBox>, IngestError> {
    Ok(parse_id_boxes(text)?
        .into_iter()
        .map(|(frame, track_id, bbox)| TrackedBox { frame, track_id, bbox })
        .collect())
}

pub fn parse_tracks(path: &Path) -> Result<Vec<TrackedBox>, IngestError> {
    parse_tracks_str(&read(path)?)
}

fn push_box(s: &mut String, b: &BBox) {
    let _ = write!(s, "{},{},{},{}", b.x(), b.y(), b.w(), b.h());
}

pub fn format_detections(dets: &[Detection]) -> String {
    let mut s = String::from("frame,x,y,w,h,confidence,class\n");
    for d in dets {
        let _ = write!(s, "{},", d.frame);
        push_box(&mut s, &d.bbox);
        let _ = writeln!(s, ",{},{}", d.confidence, d.class_id);
    }
    s
}

pub fn format_keypoints(records: &[KeypointRecord]) -> String {
    let mut s = String::from("frame,ped_id");
    for k in 1..=COCO_KEYPOINTS {
        let _ = write!(s, ",x{k},y{k},v{k}");
    }
    s.push('\n');
    for r in records {
        let _ = write!(s, "{},{}", r.frame, r.pedestrian_id);
        for p in &r.skeleton.points {
            let _ = write!(s, ",{},{},{}", p.x, p.y, p.visibility as u8);
        }
        s.push('\n');
    }
    s
}

pub fn format_labels(labels: &[IntentLabel]) -> String {
    let mut s = String::from("ped_id,crossing,onset_frame\n");
    for l in labels {
        match l.onset_frame() {
            Some(onset) => {
                let _ = writeln!(s, "{},1,{}", l.pedestrian_id, onset);
            }
            None => {
                let _ = writeln!(s, "{},0,", l.pedestrian_id);
            }
        }
    }
    s
}

pub fn format_gt(boxes: &[GtBox]) -> String {
    let mut s = String::from("frame,ped_id,x,y,w,h\n");
    for g in boxes {
        let _ = write!(s, "{},{},", g.frame, g.pedestrian_id);
        push_box(&mut s, &g.bbox);
        s.push('\n');
    }
    s
}

pub fn format_tracks(tracks: &[TrackedBox]) -> String {
    let mut s = String::from("frame,track_id,x,y,w,h\n");
    for t in tracks {
        let _ = write!(s, "{},{},", t.frame, t.track_id);
        push_box(&mut s, &t.bbox);
        s.push('\n');
    }
    s
}
