//! Shared inputs for the criterion benchmarks.

use fussi_core::ingest::{synth_scene, SynthConfig, SynthScene};

/// A mildly noisy scene of `peds` pedestrians over `frames` frames.
pub fn scene(peds: usize, frames: u32) -> SynthScene {
    synth_scene(&SynthConfig {
        n_pedestrians: peds,
        frame_count: frames,
        noise_px: 2.0,
        detection_dropout: 0.05,
        keypoint_dropout: 0.05,
        seed: 17,
        ..SynthConfig::default()
    })
    .expect("valid bench scene")
}

/// Deterministic pseudo-random cost matrix.
pub fn cost_matrix(rows: usize, cols: usize) -> Vec<f64> {
    (0..rows * cols).map(|i| ((i * 7919 + 13) % 1000) as f64 / 10.0).collect()
}
