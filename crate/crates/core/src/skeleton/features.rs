//! The 396-value skeletal feature vector.
//!
//! Layout (frozen): the 36 point pairs `(i, j)`, `i < j`, in lexicographic
//! order, each contributing `dx, dy, dist, orientation` where
//! `(dx, dy) = p_j - p_i` and `orientation = atan2(dy, dx)`; then the 84
//! triples `(i, j, k)`, `i < j < k`, lexicographic, each contributing the
//! interior angles at `i`, `j` and `k`. Indices are joint9 slots.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use super::{FeatureError, NormalizedSkeleton9};
use crate::ingest::formats::{data_lines, expect_columns, malformed, num, read};
use crate::ingest::IngestError;
use crate::types::{joint9, FeatureVector396, FEATURE_LEN, SKELETON9_POINTS};

pub const PAIR_COUNT: usize = 36;
pub const TRIPLE_COUNT: usize = 84;
const PAIR_BLOCK: usize = PAIR_COUNT * 4;

/// Pairs closer than this have no orientation.
const PAIR_EPS: f64 = 1e-9;
/// Triangles whose smallest-angle sine is below this are degenerate.
const TRIANGLE_EPS: f64 = 1e-9;

/// Meaning of one feature slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSlot {
    Dx(usize, usize),
    Dy(usize, usize),
    Distance(usize, usize),
    Orientation(usize, usize),
    /// Interior angle at `vertex` of triangle `(i, j, k)`.
    Angle { triple: (usize, usize, usize), vertex: usize },
}

fn pairs() -> impl Iterator<Item = (usize, usize)> {
    (0..SKELETON9_POINTS).flat_map(|i| (i + 1..SKELETON9_POINTS).map(move |j| (i, j)))
}

fn triples() -> impl Iterator<Item = (usize, usize, usize)> {
    (0..SKELETON9_POINTS)
        .flat_map(|i| (i + 1..SKELETON9_POINTS).flat_map(move |j| (j + 1..SKELETON9_POINTS).map(move |k| (i, j, k))))
}

fn pair_index(i: usize, j: usize) -> usize {
    pairs().position(|p| p == (i, j)).expect("valid pair")
}

fn triple_index(t: (usize, usize, usize)) -> usize {
    triples().position(|p| p == t).expect("valid triple")
}

/// Slot descriptions in feature order.
pub fn feature_layout() -> Vec<FeatureSlot> {
    let mut out = Vec::with_capacity(FEATURE_LEN);
    for (i, j) in pairs() {
        out.extend([
            FeatureSlot::Dx(i, j),
            FeatureSlot::Dy(i, j),
            FeatureSlot::Distance(i, j),
            FeatureSlot::Orientation(i, j),
        ]);
    }
    for t in triples() {
        for vertex in [t.0, t.1, t.2] {
            out.push(FeatureSlot::Angle { triple: t, vertex });
        }
    }
    out
}

fn interior_angle(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1]];
    let v = [c[0] - a[0], c[1] - a[1]];
    let cross = u[0] * v[1] - u[1] * v[0];
    let dot = u[0] * v[0] + u[1] * v[1];
    cross.abs().atan2(dot)
}

pub fn features_396(n: &NormalizedSkeleton9) -> FeatureVector396 {
    let p = &n.points;
    let mut values = Vec::with_capacity(FEATURE_LEN);
    let mut mask = Vec::with_capacity(FEATURE_LEN);
    for (i, j) in pairs() {
        let (dx, dy) = (p[j][0] - p[i][0], p[j][1] - p[i][1]);
        let dist = dx.hypot(dy);
        let oriented = dist >= PAIR_EPS;
        values.extend([dx, dy, dist, if oriented { dy.atan2(dx) } else { 0.0 }]);
        mask.extend([true, true, true, oriented]);
    }
    for (i, j, k) in triples() {
        let (a, b, c) = (p[i], p[j], p[k]);
        let u = [b[0] - a[0], b[1] - a[1]];
        let v = [c[0] - a[0], c[1] - a[1]];
        let cross = (u[0] * v[1] - u[1] * v[0]).abs();
        let scale = u[0].hypot(u[1]) * v[0].hypot(v[1]);
        let ok = cross > TRIANGLE_EPS * scale && scale > 0.0;
        if ok {
            values.extend([interior_angle(a, b, c), interior_angle(b, c, a), interior_angle(c, a, b)]);
        } else {
            values.extend([0.0; 3]);
        }
        mask.extend([ok; 3]);
    }
    FeatureVector396::new(values, mask).expect("layout has 396 slots")
}

/// How a mirrored feature is obtained from its source slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MirrorOp {
    Keep,
    Negate,
    /// `pi - v`, wrapped to `(-pi, pi]`.
    Supplement,
}

fn wrap(a: f64) -> f64 {
    if a > PI {
        a - 2.0 * PI
    } else if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

/// For each slot of the mirrored skeleton's vector, the source slot in the
/// original vector and the transform to apply.
///
/// Mirroring reflects x and swaps left/right joints ([`joint9::MIRROR`]).
/// A pair whose swapped endpoints keep their order gets `dx -> -dx` and
/// `orientation -> pi - orientation`; a pair whose order flips gets
/// `dy -> -dy` and `orientation -> -orientation`. Triangle angles are only
/// permuted.
pub fn mirror_map() -> Vec<(usize, MirrorOp)> {
    let sigma = joint9::MIRROR;
    let mut out = Vec::with_capacity(FEATURE_LEN);
    for (a, b) in pairs() {
        let (sa, sb) = (sigma[a], sigma[b]);
        let base = 4 * pair_index(sa.min(sb), sa.max(sb));
        if sa < sb {
            out.extend([
                (base, MirrorOp::Negate),
                (base + 1, MirrorOp::Keep),
                (base + 2, MirrorOp::Keep),
                (base + 3, MirrorOp::Supplement),
            ]);
        } else {
            out.extend([
                (base, MirrorOp::Keep),
                (base + 1, MirrorOp::Negate),
                (base + 2, MirrorOp::Keep),
                (base + 3, MirrorOp::Negate),
            ]);
        }
    }
    for (i, j, k) in triples() {
        let mut src = [sigma[i], sigma[j], sigma[k]];
        src.sort_unstable();
        let base = PAIR_BLOCK + 3 * triple_index((src[0], src[1], src[2]));
        for v in [i, j, k] {
            let pos = src.iter().position(|&s| s == sigma[v]).expect("vertex in triple");
            out.push((base + pos, MirrorOp::Keep));
        }
    }
    out
}

/// Feature vector of the horizontally mirrored skeleton.
pub fn mirror_features(f: &FeatureVector396) -> FeatureVector396 {
    let (vals, mask) = (f.values(), f.valid_mask());
    let mut values = Vec::with_capacity(FEATURE_LEN);
    let mut valid = Vec::with_capacity(FEATURE_LEN);
    for (src, op) in mirror_map() {
        let v = vals[src];
        values.push(match op {
            MirrorOp::Keep => v,
            MirrorOp::Negate if mask[src] => -v,
            MirrorOp::Negate => v,
            MirrorOp::Supplement if mask[src] => wrap(PI - v),
            MirrorOp::Supplement => v,
        });
        valid.push(mask[src]);
    }
    FeatureVector396::new(values, valid).expect("layout has 396 slots")
}

/// `t` consecutive feature rows ending at a prediction frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    /// Track-relative index each row was taken from.
    pub source_rows: Vec<usize>,
    rows: Vec<FeatureVector396>,
}

impl FeatureWindow {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[FeatureVector396] {
        &self.rows
    }

    /// Row-major `t x 396` values with invalid slots zeroed.
    pub fn flattened(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.masked_values()).collect()
    }
}

/// Window of the last `t` rows of `track` ending at index `end`, padding the
/// front with copies of row 0 when fewer than `t` rows exist.
pub fn window_features_at(track: &[FeatureVector396], end: usize, t: usize) -> Result<FeatureWindow, FeatureError> {
    if track.is_empty() {
        return Err(FeatureError::EmptyTrack);
    }
    if t == 0 {
        return Err(FeatureError::ZeroWindow);
    }
    let end = end.min(track.len() - 1);
    let source_rows: Vec<usize> = (0..t).map(|k| (end + k + 1).saturating_sub(t)).collect();
    let rows = source_rows.iter().map(|&i| track[i].clone()).collect();
    Ok(FeatureWindow { source_rows, rows })
}

/// Window ending at the last row of `track`.
pub fn window_features(track: &[FeatureVector396], t: usize) -> Result<FeatureWindow, FeatureError> {
    window_features_at(track, track.len().saturating_sub(1), t)
}

/// One `features.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub frame: u32,
    pub track_id: u32,
    pub features: FeatureVector396,
}

/// `frame,track_id,f0..f395,m0..m395`, masks as 0/1.
pub fn format_features(rows: &[FeatureRow]) -> String {
    let mut s = String::from("frame,track_id");
    for i in 0..FEATURE_LEN {
        let _ = write!(s, ",f{i}");
    }
    for i in 0..FEATURE_LEN {
        let _ = write!(s, ",m{i}");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{}", r.frame, r.track_id);
        for v in r.features.values() {
            let _ = write!(s, ",{v}");
        }
        for &m in r.features.valid_mask() {
            s.push_str(if m { ",1" } else { ",0" });
        }
        s.push('\n');
    }
    s
}

pub fn parse_features_str(text: &str) -> Result<Vec<FeatureRow>, IngestError> {
    let mut out = Vec::new();
    for (line, f) in data_lines(text) {
        expect_columns(line, &f, 2 + 2 * FEATURE_LEN)?;
        let frame = num::<u32>(line, f[0], "frame")?;
        let track_id = num::<u32>(line, f[1], "track_id")?;
        let values = f[2..2 + FEATURE_LEN]
            .iter()
            .map(|v| num::<f64>(line, v, "feature"))
            .collect::<Result<Vec<_>, _>>()?;
        let mask = f[2 + FEATURE_LEN..]
            .iter()
            .map(|m| match *m {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(malformed(line, format!("mask value {other:?} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let features = FeatureVector396::new(values, mask).map_err(|e| malformed(line, e.to_string()))?;
        out.push(FeatureRow {
            frame,
            track_id,
            features,
        });
    }
    Ok(out)
}

pub fn parse_features(path: &Path) -> Result<Vec<FeatureRow>, IngestError> {
    parse_features_str(&read(path)?)
}
