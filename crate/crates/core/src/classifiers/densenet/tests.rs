use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::types::{RgbImage, WindowFrame};

fn micro() -> DenseNetConfig {
    DenseNetConfig {
        growth: 2,
        blocks: 2,
        pairs_per_block: 2,
        bottleneck: 2,
        clip_len: 4,
        crop_size: 8,
        stem_kernel: [2, 4, 4],
        late_features: 3,
        ..DenseNetConfig::default()
    }
}

fn random_batch(cfg: &DenseNetConfig, n: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch {
        n,
        clips: (0..n * cfg.input_len()).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        late: (0..n * cfg.late_features).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

fn window(id: u32, cfg: &DenseNetConfig, seed: u64) -> SequenceWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..cfg.clip_len)
        .map(|t| {
            let data = (0..cfg.crop_size * cfg.crop_size * 3).map(|_| rng.gen()).collect();
            WindowFrame {
                frame: t as i64,
                source_frame: t as u32,
                crop: Arc::new(RgbImage::from_raw(cfg.crop_size, cfg.crop_size, data).unwrap()),
                skeleton: None,
                features: None,
            }
        })
        .collect();
    SequenceWindow::new(id, frames, cfg.clip_len).unwrap()
}

#[test]
fn layout_channel_counts() {
    let m = DenseNet3d::new(DenseNetConfig::default(), 0).unwrap();
    let l = &m.layout;
    assert_eq!(l.stem.geom.c_out, 24);
    assert_eq!(l.blocks.len(), 3);
    assert!(l.blocks.iter().all(|b| b.len() == 4));
    // 24 + 4*12 = 72 -> 36 -> 84 -> 42 -> 90
    assert_eq!(l.transitions[0].conv.geom.c_out, 36);
    assert_eq!(l.transitions[1].conv.geom.c_out, 42);
    assert_eq!(l.fc_in, 90);
    assert_eq!(l.blocks[0][0].conv2.geom.k, [3, 3, 3]);
    assert_eq!(l.stem.geom.out_sp(), [4, 8, 8]);
}

#[test]
fn softmax_sums_to_one() {
    let cfg = micro();
    let m = DenseNet3d::new(cfg.clone(), 3).unwrap();
    let b = random_batch(&cfg, 100, 4);
    for mode in [BnMode::Batch, BnMode::Running] {
        for (c, n) in m.probabilities(&b, mode).unwrap() {
            assert!((c + n - 1.0).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&c));
        }
    }
}

#[test]
fn zero_head_is_uniform() {
    let cfg = micro();
    let mut m = DenseNet3d::new(cfg.clone(), 3).unwrap();
    m.zero_head();
    let b = random_batch(&cfg, 5, 9);
    for (c, n) in m.probabilities(&b, BnMode::Running).unwrap() {
        assert_eq!((c, n), (0.5, 0.5));
    }
    let clip = &b.clips[..cfg.input_len()];
    assert_eq!(densenet_forward(&m, clip, Some(&[0.0; 3])).unwrap(), (0.5, 0.5));
}

#[test]
fn micro_gradient_check() {
    let cfg = micro();
    let m = DenseNet3d::new(cfg.clone(), 11).unwrap();
    let b = random_batch(&cfg, 4, 12);
    let err = gradient_check(&m, &b, &[true, false, false, true], 1e-5).unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn shape_errors() {
    let cfg = micro();
    let m = DenseNet3d::new(cfg.clone(), 0).unwrap();
    let mut b = random_batch(&cfg, 2, 0);
    b.clips.pop();
    assert!(matches!(m.probabilities(&b, BnMode::Running), Err(ClassifierError::ShapeMismatch(_))));
    let b = random_batch(&cfg, 1, 0);
    assert!(matches!(densenet_forward(&m, &b.clips, None), Err(ClassifierError::ShapeMismatch(_))));
    let mut short = DenseNetConfig { clip_len: 3, ..cfg.clone() };
    short.late_features = 0;
    let w = window(1, &short, 0);
    assert!(matches!(m.predict_windows(&[w]), Err(ClassifierError::ShapeMismatch(_))));
}

#[test]
fn invalid_config_rejected() {
    let cfg = DenseNetConfig {
        stem_kernel: [32, 8, 8],
        ..DenseNetConfig::default()
    };
    assert!(matches!(DenseNet3d::new(cfg, 0), Err(ClassifierError::InvalidConfig(_))));
}

#[test]
fn seed_determinism() {
    let cfg = DenseNetConfig { late_features: 0, ..micro() };
    let windows: Vec<SequenceWindow> = (0..6).map(|i| window(i, &cfg, i as u64)).collect();
    let labels = [true, false, true, false, true, false];
    let tc = TrainConfig {
        steps: 3,
        densenet: cfg,
        ..TrainConfig::default()
    };
    let (a, ha) = densenet_train(&windows, &labels, &tc).unwrap();
    let (b, hb) = densenet_train(&windows, &labels, &tc).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    assert!(a.is_trained());
    let (c, _) = densenet_train(&windows, &labels, &TrainConfig { seed: 2, ..tc }).unwrap();
    assert_ne!(a.params(), c.params());
}

#[test]
fn overfits_eight_windows() {
    let cfg = DenseNetConfig::default();
    let windows: Vec<SequenceWindow> = (0..8).map(|i| window(i, &cfg, 100 + i as u64)).collect();
    let labels: Vec<bool> = (0..8).map(|i| i % 2 == 0).collect();
    let tc = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 8,
        class_balance: false,
        densenet: cfg.clone(),
        ..TrainConfig::default()
    };
    let model = DenseNet3d::new(cfg, tc.seed).unwrap();
    let mut trainer = DenseNetTrainer::new(model, &windows, &labels, &tc).unwrap();
    let mut last = f64::INFINITY;
    for _ in 0..500 {
        last = trainer.step().unwrap();
        if last < 0.01 {
            break;
        }
    }
    assert!(last < 0.01, "final loss {last}");
}
