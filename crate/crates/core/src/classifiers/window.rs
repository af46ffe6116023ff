//! Per-frame sliding windows over track histories, and mini-batch sampling.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClassifierError, IntentModel, Prediction};
use crate::types::{SequenceWindow, WindowFrame, FEATURE_LEN};

/// Observed frames of one track in increasing frame order. Frames may skip;
/// gaps are filled by holding the previous observation.
#[derive(Debug, Clone)]
pub struct TrackHistory {
    pub track_id: u32,
    pub frames: Vec<WindowFrame>,
}

/// One window per observed frame `f`, covering nominal frames
/// `f - len + 1 ..= f`. Slots before the first observation repeat it; slots
/// inside gaps repeat the latest earlier observation.
pub fn track_windows(h: &TrackHistory, len: usize) -> Result<Vec<SequenceWindow>, ClassifierError> {
    if h.frames.is_empty() {
        return Err(ClassifierError::EmptyTrack);
    }
    if len == 0 {
        return Err(ClassifierError::ShapeMismatch("window length must be positive".into()));
    }
    let mut out = Vec::with_capacity(h.frames.len());
    for end in &h.frames {
        let f = end.source_frame as i64;
        let mut slots = Vec::with_capacity(len);
        let mut k = 0usize;
        for n in (f - len as i64 + 1)..=f {
            while k + 1 < h.frames.len() && (h.frames[k + 1].source_frame as i64) <= n {
                k += 1;
            }
            let src = &h.frames[k];
            slots.push(WindowFrame { frame: n, ..src.clone() });
        }
        out.push(SequenceWindow::new(h.track_id, slots, len).map_err(|e| ClassifierError::ShapeMismatch(e.to_string()))?);
    }
    Ok(out)
}

/// One prediction per observed frame of the track.
pub fn sliding_window_predict(model: &IntentModel, h: &TrackHistory) -> Result<Vec<Prediction>, ClassifierError> {
    if let IntentModel::DenseNet(m) = model {
        if !m.is_trained() {
            return Err(ClassifierError::UntrainedModel);
        }
    }
    let windows = track_windows(h, model.window_len())?;
    let probs = model.predict_windows(&windows)?;
    Ok(windows
        .iter()
        .zip(probs)
        .map(|(w, p)| Prediction::new(w.end_frame(), h.track_id, p))
        .collect())
}

/// Row-major `len x 396` features; invalid slots and frames without a
/// skeleton are zero.
pub fn flat_features(w: &SequenceWindow) -> Vec<f64> {
    let mut out = Vec::with_capacity(w.len() * FEATURE_LEN);
    for f in w.frames() {
        match &f.features {
            Some(v) => out.extend(v.masked_values()),
            None => out.extend(std::iter::repeat_n(0.0, FEATURE_LEN)),
        }
    }
    out
}

/// Feature rows with frames lacking a skeleton as padding.
pub fn feature_sequence(w: &SequenceWindow) -> Vec<Option<Vec<f64>>> {
    w.frames()
        .iter()
        .map(|f| f.features.as_ref().map(|v| v.masked_values().collect()))
        .collect()
}

/// Seeded mini-batch index generator.
///
/// With class balancing, each batch holds equal numbers of positives and
/// negatives drawn with replacement. Otherwise batches walk a reshuffled
/// permutation, or are the whole set when it fits in one batch.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    pos: Vec<usize>,
    neg: Vec<usize>,
    n: usize,
    batch: usize,
    balance: bool,
    perm: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(labels: &[bool], batch: usize, balance: bool, seed: u64) -> Self {
        let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
        let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
        BatchSampler {
            balance: balance && !pos.is_empty() && !neg.is_empty(),
            pos,
            neg,
            n: labels.len(),
            batch: batch.max(1),
            perm: (0..labels.len()).collect(),
            cursor: labels.len(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.balance {
            let half = (self.batch / 2).max(1);
            let mut out: Vec<usize> = (0..half).map(|_| self.pos[self.rng.gen_range(0..self.pos.len())]).collect();
            out.extend((0..self.batch.saturating_sub(half).max(1)).map(|_| self.neg[self.rng.gen_range(0..self.neg.len())]));
            return out;
        }
        if self.n <= self.batch {
            return (0..self.n).collect();
        }
        if self.cursor + self.batch > self.n {
            self.perm.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let out = self.perm[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RgbImage;
    use std::sync::Arc;

    fn history(frames: &[u32]) -> TrackHistory {
        TrackHistory {
            track_id: 3,
            frames: frames
                .iter()
                .map(|&f| WindowFrame {
                    frame: f as i64,
                    source_frame: f,
                    crop: Arc::new(RgbImage::filled(2, 2, [f as u8, 0, 0])),
                    skeleton: None,
                    features: None,
                })
                .collect(),
        }
    }

    #[test]
    fn one_window_per_frame() {
        let h = history(&(10..50).collect::<Vec<_>>());
        let w = track_windows(&h, 16).unwrap();
        assert_eq!(w.len(), 40);
        assert!(w[0].frames().iter().all(|s| s.source_frame == 10));
        assert_eq!(w[0].frames()[0].frame, -5);
        let last = &w[39];
        assert_eq!(last.end_frame(), 49);
        assert_eq!(last.frames()[0].source_frame, 34);
    }

    #[test]
    fn gaps_hold_previous_frame() {
        let h = history(&[0, 1, 5]);
        let w = track_windows(&h, 6).unwrap();
        let src: Vec<u32> = w[2].frames().iter().map(|s| s.source_frame).collect();
        assert_eq!(src, vec![0, 1, 1, 1, 1, 5]);
    }

    #[test]
    fn empty_track_rejected() {
        assert!(matches!(track_windows(&history(&[]), 16), Err(ClassifierError::EmptyTrack)));
    }

    #[test]
    fn balanced_batches() {
        let labels: Vec<bool> = (0..20).map(|i| i < 3).collect();
        let mut s = BatchSampler::new(&labels, 8, true, 1);
        for _ in 0..5 {
            let b = s.next_batch();
            assert_eq!(b.len(), 8);
            assert_eq!(b.iter().filter(|&&i| labels[i]).count(), 4);
        }
        let mut s = BatchSampler::new(&labels, 32, false, 1);
        assert_eq!(s.next_batch(), (0..20).collect::<Vec<_>>());
        let mut s = BatchSampler::new(&labels, 6, false, 1);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch()).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 18);
    }
}
