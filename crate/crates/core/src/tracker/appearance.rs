//! Color-histogram appearance descriptors.

use super::TrackerError;
use crate::types::RgbImage;

pub const BINS_PER_CHANNEL: usize = 8;
pub const DESCRIPTOR_LEN: usize = BINS_PER_CHANNEL * BINS_PER_CHANNEL * BINS_PER_CHANNEL;

/// L2-normalized 8x8x8 RGB histogram of a crop.
pub fn appearance_descriptor(crop: &RgbImage) -> Result<Vec<f64>, TrackerError> {
    if crop.is_empty() {
        return Err(TrackerError::EmptyCrop);
    }
    let mut hist = vec![0.0; DESCRIPTOR_LEN];
    for [r, g, b] in crop.pixels() {
        let bin = (r as usize >> 5) * 64 + (g as usize >> 5) * 8 + (b as usize >> 5);
        hist[bin] += 1.0;
    }
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    hist.iter_mut().for_each(|v| *v /= norm);
    Ok(hist)
}

/// `1 - cos(a, b)` for unit vectors.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{synth_scene, SynthConfig};

    #[test]
    fn uniform_crop_has_one_bin() {
        let d = appearance_descriptor(&RgbImage::filled(10, 7, [128, 128, 128])).unwrap();
        assert_eq!(d.iter().filter(|v| **v != 0.0).count(), 1);
        assert!((d.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mirror_invariant() {
        let scene = synth_scene(&SynthConfig::default()).unwrap();
        let o = &scene.ground_truth.frames[3][0];
        let crop = scene.render_crop(3, &o.bbox, 64);
        let a = appearance_descriptor(&crop).unwrap();
        let b = appearance_descriptor(&crop.flipped_horizontal()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_pedestrians_differ() {
        let scene = synth_scene(&SynthConfig::default()).unwrap();
        let objs = &scene.ground_truth.frames[3];
        let d: Vec<Vec<f64>> = objs
            .iter()
            .take(2)
            .map(|o| appearance_descriptor(&scene.render_crop(3, &o.bbox, 64)).unwrap())
            .collect();
        assert!(cosine_distance(&d[0], &d[1]) > 0.1, "{}", cosine_distance(&d[0], &d[1]));
        assert!(cosine_distance(&d[0], &d[0]).abs() < 1e-12);
    }

    #[test]
    fn empty_crop_rejected() {
        assert!(matches!(appearance_descriptor(&RgbImage::new(0, 5)), Err(TrackerError::EmptyCrop)));
    }
}
