//! Small 3D dense network over 16-frame crop clips.
//!
//! Topology: a patchifying stem convolution (kernel = stride), then dense
//! blocks of `[BN-ReLU-conv 1x1x1, BN-ReLU-conv 3x3x3]` pairs whose inputs
//! are the concatenation of every earlier output in the block, transitions
//! of BN-ReLU-conv 1x1x1 with channel compression and 2x average pooling,
//! and a BN-ReLU-global-average-pool head. Optional per-window skeletal
//! features are concatenated to the pooled vector right before the final
//! affine layer, which produces two logits (not crossing, crossing).

pub mod ops;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use self::ops::{
    avgpool_backward, avgpool_forward, bn_relu_backward, bn_relu_forward, channel_stats, concat, conv_backward,
    conv_forward, split_add, Act, BnCache, ConvGeom,
};
use super::adam::Adam;
use super::window::{flat_features, BatchSampler};
use super::{ClassifierError, TrainConfig, PROB_FLOOR};
use crate::types::{SequenceWindow, FEATURE_LEN};

pub const IN_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenseNetConfig {
    pub growth: usize,
    pub blocks: usize,
    pub pairs_per_block: usize,
    /// Width of the 1x1x1 bottleneck as a multiple of `growth`.
    pub bottleneck: usize,
    /// Channel fraction kept by transitions.
    pub compression: f64,
    pub clip_len: usize,
    pub crop_size: usize,
    /// Stem kernel and stride `(d, h, w)`.
    pub stem_kernel: [usize; 3],
    /// Length of the late-fusion feature block (0 disables it).
    pub late_features: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for DenseNetConfig {
    fn default() -> Self {
        DenseNetConfig {
            growth: 12,
            blocks: 3,
            pairs_per_block: 4,
            bottleneck: 4,
            compression: 0.5,
            clip_len: 16,
            crop_size: 64,
            stem_kernel: [4, 8, 8],
            late_features: 0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl DenseNetConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.into()));
        if self.growth == 0 || self.blocks == 0 || self.pairs_per_block == 0 || self.bottleneck == 0 {
            return bad("growth, blocks, pairs_per_block and bottleneck must be positive");
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return bad("compression must lie in (0, 1]");
        }
        let input = [self.clip_len, self.crop_size, self.crop_size];
        if (0..3).any(|a| self.stem_kernel[a] == 0 || input[a] < self.stem_kernel[a]) {
            return bad("stem kernel must be positive and fit the clip");
        }
        Ok(())
    }

    /// Per-sample input length `3 x clip_len x crop x crop`.
    pub fn input_len(&self) -> usize {
        IN_CHANNELS * self.clip_len * self.crop_size * self.crop_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Conv {
    geom: ConvGeom,
    w: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Bn {
    c: usize,
    gamma: usize,
    beta: usize,
    /// Running mean at `run`, running variance at `run + c`.
    run: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Pair {
    bn1: Bn,
    conv1: Conv,
    bn2: Bn,
    conv2: Conv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Transition {
    bn: Bn,
    conv: Conv,
    pool: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layout {
    stem: Conv,
    blocks: Vec<Vec<Pair>>,
    transitions: Vec<Transition>,
    head_bn: Bn,
    fc_in: usize,
    fc_w: usize,
    fc_b: usize,
    n_params: usize,
    n_running: usize,
}

impl Layout {
    fn new(cfg: &DenseNetConfig) -> Self {
        let mut np = 0;
        let mut nr = 0;
        let mut param = |n: usize| {
            let o = np;
            np += n;
            o
        };
        let mut bn = |c: usize, param: &mut dyn FnMut(usize) -> usize| {
            let r = nr;
            nr += 2 * c;
            Bn {
                c,
                gamma: param(c),
                beta: param(c),
                run: r,
            }
        };
        let k = cfg.stem_kernel;
        let stem_geom = ConvGeom {
            c_in: IN_CHANNELS,
            c_out: 2 * cfg.growth,
            in_sp: [cfg.clip_len, cfg.crop_size, cfg.crop_size],
            k,
            stride: k,
            pad: [0; 3],
        };
        let stem = Conv {
            geom: stem_geom,
            w: param(stem_geom.weights()),
        };
        let mut c = stem_geom.c_out;
        let mut sp = stem_geom.out_sp();
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for b in 0..cfg.blocks {
            let mut pairs = Vec::new();
            for _ in 0..cfg.pairs_per_block {
                let mid = cfg.bottleneck * cfg.growth;
                let bn1 = bn(c, &mut param);
                let g1 = ConvGeom {
                    c_in: c,
                    c_out: mid,
                    in_sp: sp,
                    k: [1; 3],
                    stride: [1; 3],
                    pad: [0; 3],
                };
                let conv1 = Conv {
                    geom: g1,
                    w: param(g1.weights()),
                };
                let bn2 = bn(mid, &mut param);
                let g2 = ConvGeom {
                    c_in: mid,
                    c_out: cfg.growth,
                    in_sp: sp,
                    k: [3; 3],
                    stride: [1; 3],
                    pad: [1; 3],
                };
                let conv2 = Conv {
                    geom: g2,
                    w: param(g2.weights()),
                };
                pairs.push(Pair { bn1, conv1, bn2, conv2 });
                c += cfg.growth;
            }
            blocks.push(pairs);
            if b + 1 < cfg.blocks {
                let out = ((c as f64 * cfg.compression).floor() as usize).max(1);
                let tbn = bn(c, &mut param);
                let g = ConvGeom {
                    c_in: c,
                    c_out: out,
                    in_sp: sp,
                    k: [1; 3],
                    stride: [1; 3],
                    pad: [0; 3],
                };
                let conv = Conv {
                    geom: g,
                    w: param(g.weights()),
                };
                let pool = [sp[0].min(2), sp[1].min(2), sp[2].min(2)];
                transitions.push(Transition { bn: tbn, conv, pool });
                c = out;
                sp = [sp[0] / pool[0], sp[1] / pool[1], sp[2] / pool[2]];
            }
        }
        let head_bn = bn(c, &mut param);
        let fc_in = c + cfg.late_features;
        let fc_w = param(2 * fc_in);
        let fc_b = param(2);
        Layout {
            stem,
            blocks,
            transitions,
            head_bn,
            fc_in,
            fc_w,
            fc_b,
            n_params: np,
            n_running: nr,
        }
    }

    fn convs(&self) -> Vec<Conv> {
        let mut v = vec![self.stem];
        for (b, pairs) in self.blocks.iter().enumerate() {
            for p in pairs {
                v.push(p.conv1);
                v.push(p.conv2);
            }
            if let Some(t) = self.transitions.get(b) {
                v.push(t.conv);
            }
        }
        v
    }

    fn bns(&self) -> Vec<Bn> {
        let mut v = Vec::new();
        for (b, pairs) in self.blocks.iter().enumerate() {
            for p in pairs {
                v.push(p.bn1);
                v.push(p.bn2);
            }
            if let Some(t) = self.transitions.get(b) {
                v.push(t.bn);
            }
        }
        v.push(self.head_bn);
        v
    }
}

/// How batch normalization is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Statistics of the current batch (training).
    Batch,
    /// Running statistics (inference).
    Running,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet3d {
    config: DenseNetConfig,
    pub seed: u64,
    layout: Layout,
    params: Vec<f64>,
    running: Vec<f64>,
    steps_trained: u64,
}

struct PairCache {
    bn1: BnCache,
    a1: Act,
    bn2: BnCache,
    a2: Act,
}

struct TransCache {
    bn: BnCache,
    a: Act,
    conv_sp: [usize; 3],
}

struct Cache {
    x: Act,
    blocks: Vec<Vec<PairCache>>,
    block_parts: Vec<Vec<usize>>,
    trans: Vec<TransCache>,
    head: BnCache,
    head_sp: [usize; 3],
    z: Vec<f64>,
    /// Batch statistics `(bn, mean, var)` seen in [`BnMode::Batch`].
    stats: Vec<(Bn, Vec<f64>, Vec<f64>)>,
}

/// Batch of network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    /// `n x 3 x clip_len x crop x crop`.
    pub clips: Vec<f64>,
    /// `n x late_features`, empty when the model has no late port.
    pub late: Vec<f64>,
}

impl DenseNet3d {
    /// Freshly initialized (untrained) network.
    pub fn new(config: DenseNetConfig, seed: u64) -> Result<Self, ClassifierError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.n_params];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for conv in layout.convs() {
            let fan_in = conv.geom.patch() as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            for v in &mut params[conv.w..conv.w + conv.geom.weights()] {
                *v = normal.sample(&mut rng);
            }
        }
        let mut running = vec![0.0; layout.n_running];
        for bn in layout.bns() {
            params[bn.gamma..bn.gamma + bn.c].iter_mut().for_each(|v| *v = 1.0);
            running[bn.run + bn.c..bn.run + 2 * bn.c].iter_mut().for_each(|v| *v = 1.0);
        }
        let bound = 1.0 / (layout.fc_in as f64).sqrt();
        let normal = Normal::new(0.0, bound).expect("positive std");
        for v in &mut params[layout.fc_w..layout.fc_w + 2 * layout.fc_in] {
            *v = normal.sample(&mut rng);
        }
        Ok(DenseNet3d {
            config,
            seed,
            layout,
            params,
            running,
            steps_trained: 0,
        })
    }

    pub fn config(&self) -> &DenseNetConfig {
        &self.config
    }

    pub fn is_trained(&self) -> bool {
        self.steps_trained > 0
    }

    pub fn steps_trained(&self) -> u64 {
        self.steps_trained
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Sets the final affine layer to zero.
    pub fn zero_head(&mut self) {
        let l = &self.layout;
        self.params[l.fc_w..l.fc_w + 2 * l.fc_in].iter_mut().for_each(|v| *v = 0.0);
        self.params[l.fc_b..l.fc_b + 2].iter_mut().for_each(|v| *v = 0.0);
    }

    fn check(&self, b: &Batch) -> Result<(), ClassifierError> {
        let want = b.n * self.config.input_len();
        if b.clips.len() != want {
            return Err(ClassifierError::ShapeMismatch(format!(
                "clip batch has {} values, expected {want}",
                b.clips.len()
            )));
        }
        let late = b.n * self.config.late_features;
        if b.late.len() != late {
            return Err(ClassifierError::ShapeMismatch(format!(
                "late-feature batch has {} values, expected {late}",
                b.late.len()
            )));
        }
        Ok(())
    }

    fn bn_stage(&self, p: &[f64], bn: &Bn, x: &Act, mode: BnMode, stats: &mut Vec<(Bn, Vec<f64>, Vec<f64>)>) -> (Act, BnCache) {
        let gamma = &p[bn.gamma..bn.gamma + bn.c];
        let beta = &p[bn.beta..bn.beta + bn.c];
        match mode {
            BnMode::Batch => {
                let (mean, var) = channel_stats(x);
                let out = bn_relu_forward(x, gamma, beta, &mean, &var, self.config.bn_eps, true);
                stats.push((*bn, mean, var));
                out
            }
            BnMode::Running => {
                let mean = &self.running[bn.run..bn.run + bn.c];
                let var = &self.running[bn.run + bn.c..bn.run + 2 * bn.c];
                bn_relu_forward(x, gamma, beta, mean, var, self.config.bn_eps, false)
            }
        }
    }

    fn forward(&self, p: &[f64], b: &Batch, mode: BnMode) -> (Vec<f64>, Cache) {
        let l = &self.layout;
        let x = Act {
            n: b.n,
            c: IN_CHANNELS,
            sp: l.stem.geom.in_sp,
            data: b.clips.clone(),
        };
        let mut stats = Vec::new();
        let mut cur = conv_forward(&l.stem.geom, &p[l.stem.w..], &x);
        let mut blocks = Vec::new();
        let mut block_parts = Vec::new();
        let mut trans = Vec::new();
        for (bi, pairs) in l.blocks.iter().enumerate() {
            let mut parts = vec![cur];
            let mut caches = Vec::new();
            for pr in pairs {
                let inp = concat(&parts.iter().collect::<Vec<_>>());
                let (a1, bn1) = self.bn_stage(p, &pr.bn1, &inp, mode, &mut stats);
                let h1 = conv_forward(&pr.conv1.geom, &p[pr.conv1.w..], &a1);
                let (a2, bn2) = self.bn_stage(p, &pr.bn2, &h1, mode, &mut stats);
                let h2 = conv_forward(&pr.conv2.geom, &p[pr.conv2.w..], &a2);
                caches.push(PairCache { bn1, a1, bn2, a2 });
                parts.push(h2);
            }
            block_parts.push(parts.iter().map(|a| a.c).collect());
            cur = concat(&parts.iter().collect::<Vec<_>>());
            blocks.push(caches);
            if let Some(t) = l.transitions.get(bi) {
                let (a, bn) = self.bn_stage(p, &t.bn, &cur, mode, &mut stats);
                let h = conv_forward(&t.conv.geom, &p[t.conv.w..], &a);
                let conv_sp = h.sp;
                cur = avgpool_forward(&h, t.pool);
                trans.push(TransCache { bn, a, conv_sp });
            }
        }
        let (a, head) = self.bn_stage(p, &l.head_bn, &cur, mode, &mut stats);
        let head_sp = a.sp;
        let s = a.spatial();
        let feat = l.fc_in - self.config.late_features;
        let mut z = vec![0.0; b.n * l.fc_in];
        for i in 0..b.n {
            for c in 0..feat {
                let base = (i * a.c + c) * s;
                z[i * l.fc_in + c] = a.data[base..base + s].iter().sum::<f64>() / s as f64;
            }
            let lf = self.config.late_features;
            z[i * l.fc_in + feat..(i + 1) * l.fc_in].copy_from_slice(&b.late[i * lf..(i + 1) * lf]);
        }
        let mut logits = vec![0.0; b.n * 2];
        for i in 0..b.n {
            for o in 0..2 {
                let w = &p[l.fc_w + o * l.fc_in..l.fc_w + (o + 1) * l.fc_in];
                logits[i * 2 + o] = p[l.fc_b + o] + w.iter().zip(&z[i * l.fc_in..(i + 1) * l.fc_in]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        (
            logits,
            Cache {
                x,
                blocks,
                block_parts,
                trans,
                head,
                head_sp,
                z,
                stats,
            },
        )
    }

    /// `(p_cross, p_not)` per sample.
    pub fn probabilities(&self, b: &Batch, mode: BnMode) -> Result<Vec<(f64, f64)>, ClassifierError> {
        self.check(b)?;
        let (logits, _) = self.forward(&self.params, b, mode);
        Ok(logits.chunks(2).map(|z| softmax_pair(z[0], z[1])).map(|(n, c)| (c, n)).collect())
    }

    /// Summed loss `-sum ln p(y_i)` and its gradient at parameters `p`.
    /// Labels are true for crossing. Also returns the batch statistics.
    pub fn loss_grad(&self, p: &[f64], b: &Batch, labels: &[bool], mode: BnMode) -> Result<(f64, Vec<f64>), ClassifierError> {
        self.loss_grad_stats(p, b, labels, mode).map(|(l, g, _)| (l, g))
    }

    #[allow(clippy::type_complexity)]
    fn loss_grad_stats(
        &self,
        p: &[f64],
        b: &Batch,
        labels: &[bool],
        mode: BnMode,
    ) -> Result<(f64, Vec<f64>, Vec<(Bn, Vec<f64>, Vec<f64>)>), ClassifierError> {
        self.check(b)?;
        if labels.len() != b.n {
            return Err(ClassifierError::ShapeMismatch(format!("{} labels for {} samples", labels.len(), b.n)));
        }
        let l = &self.layout;
        let (logits, cache) = self.forward(p, b, mode);
        let mut grad = vec![0.0; p.len()];
        let mut loss = 0.0;
        let mut dz = vec![0.0; b.n * l.fc_in];
        for i in 0..b.n {
            let (p0, p1) = softmax_pair(logits[2 * i], logits[2 * i + 1]);
            let y = labels[i] as usize;
            loss -= [p0, p1][y].max(PROB_FLOOR).ln();
            let dlog = [p0 - (y == 0) as u8 as f64, p1 - (y == 1) as u8 as f64];
            for o in 0..2 {
                grad[l.fc_b + o] += dlog[o];
                let zi = &cache.z[i * l.fc_in..(i + 1) * l.fc_in];
                for j in 0..l.fc_in {
                    grad[l.fc_w + o * l.fc_in + j] += dlog[o] * zi[j];
                    dz[i * l.fc_in + j] += dlog[o] * p[l.fc_w + o * l.fc_in + j];
                }
            }
        }
        // global average pool
        let feat = l.fc_in - self.config.late_features;
        let s: usize = cache.head_sp.iter().product();
        let mut da = Act::zeros(b.n, feat, cache.head_sp);
        for i in 0..b.n {
            for c in 0..feat {
                let g = dz[i * l.fc_in + c] / s as f64;
                da.data[(i * feat + c) * s..(i * feat + c + 1) * s].iter_mut().for_each(|v| *v = g);
            }
        }
        let mut dcur = self.bn_back(&l.head_bn, &cache.head, &da, &mut grad);
        for (bi, pairs) in l.blocks.iter().enumerate().rev() {
            if let Some(t) = l.transitions.get(bi) {
                let tc = &cache.trans[bi];
                let dh = avgpool_backward(&dcur, t.pool, tc.conv_sp);
                let dwt = &mut grad[t.conv.w..t.conv.w + t.conv.geom.weights()];
                let dact = conv_backward(&t.conv.geom, &p[t.conv.w..], &tc.a, &dh, dwt, true).expect("requested");
                dcur = self.bn_back(&t.bn, &tc.bn, &dact, &mut grad);
            }
            let sizes = &cache.block_parts[bi];
            let sp = dcur.sp;
            let mut dparts: Vec<Act> = sizes.iter().map(|&c| Act::zeros(b.n, c, sp)).collect();
            split_add(&dcur, &mut dparts.iter_mut().collect::<Vec<_>>());
            for (li, pr) in pairs.iter().enumerate().rev() {
                let pc = &cache.blocks[bi][li];
                let dh2 = std::mem::replace(&mut dparts[li + 1], Act::zeros(0, 0, [0; 3]));
                let dw2 = &mut grad[pr.conv2.w..pr.conv2.w + pr.conv2.geom.weights()];
                let da2 = conv_backward(&pr.conv2.geom, &p[pr.conv2.w..], &pc.a2, &dh2, dw2, true).expect("requested");
                let dh1 = self.bn_back(&pr.bn2, &pc.bn2, &da2, &mut grad);
                let dw1 = &mut grad[pr.conv1.w..pr.conv1.w + pr.conv1.geom.weights()];
                let da1 = conv_backward(&pr.conv1.geom, &p[pr.conv1.w..], &pc.a1, &dh1, dw1, true).expect("requested");
                let dinp = self.bn_back(&pr.bn1, &pc.bn1, &da1, &mut grad);
                split_add(&dinp, &mut dparts[..=li].iter_mut().collect::<Vec<_>>());
            }
            dcur = dparts.swap_remove(0);
        }
        let stem = &l.stem;
        let dws = &mut grad[stem.w..stem.w + stem.geom.weights()];
        conv_backward(&stem.geom, &p[stem.w..], &cache.x, &dcur, dws, false);
        Ok((loss, grad, cache.stats))
    }

    fn bn_back(&self, bn: &Bn, cache: &BnCache, dy: &Act, grad: &mut [f64]) -> Act {
        let mut dgamma = vec![0.0; bn.c];
        let mut dbeta = vec![0.0; bn.c];
        let dx = bn_relu_backward(cache, dy, &mut dgamma, &mut dbeta);
        grad[bn.gamma..bn.gamma + bn.c].iter_mut().zip(dgamma).for_each(|(a, b)| *a += b);
        grad[bn.beta..bn.beta + bn.c].iter_mut().zip(dbeta).for_each(|(a, b)| *a += b);
        dx
    }

    fn update_running(&mut self, stats: &[(Bn, Vec<f64>, Vec<f64>)]) {
        let m = self.config.bn_momentum;
        for (bn, mean, var) in stats {
            for c in 0..bn.c {
                let rm = &mut self.running[bn.run + c];
                *rm = (1.0 - m) * *rm + m * mean[c];
                let rv = &mut self.running[bn.run + bn.c + c];
                *rv = (1.0 - m) * *rv + m * var[c];
            }
        }
    }

    /// Converts windows into a network batch: crops scaled to `[-0.5, 0.5]`
    /// and, with a late port, the masked `t x 396` feature block.
    pub fn batch_from_windows(&self, windows: &[&SequenceWindow]) -> Result<Batch, ClassifierError> {
        let cfg = &self.config;
        let size = cfg.crop_size;
        let plane = size * size;
        let mut clips = vec![0.0; windows.len() * cfg.input_len()];
        let mut late = Vec::with_capacity(windows.len() * cfg.late_features);
        for (i, w) in windows.iter().enumerate() {
            if w.len() != cfg.clip_len {
                return Err(ClassifierError::ShapeMismatch(format!(
                    "window has {} frames, expected {}",
                    w.len(),
                    cfg.clip_len
                )));
            }
            let base = i * cfg.input_len();
            for (t, f) in w.frames().iter().enumerate() {
                if f.crop.width() != size || f.crop.height() != size {
                    return Err(ClassifierError::ShapeMismatch(format!(
                        "crop is {}x{}, expected {size}x{size}",
                        f.crop.width(),
                        f.crop.height()
                    )));
                }
                for (k, px) in f.crop.pixels().enumerate() {
                    for ch in 0..IN_CHANNELS {
                        clips[base + (ch * cfg.clip_len + t) * plane + k] = px[ch] as f64 / 255.0 - 0.5;
                    }
                }
            }
            if cfg.late_features > 0 {
                let feats = flat_features(w);
                if feats.len() != cfg.late_features {
                    return Err(ClassifierError::ShapeMismatch(format!(
                        "late block has {} values, expected {}",
                        feats.len(),
                        cfg.late_features
                    )));
                }
                late.extend(feats);
            }
        }
        Ok(Batch {
            n: windows.len(),
            clips,
            late,
        })
    }

    /// Crossing probability per window (running statistics).
    pub fn predict_windows(&self, windows: &[SequenceWindow]) -> Result<Vec<f64>, ClassifierError> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(16) {
            let refs: Vec<&SequenceWindow> = chunk.iter().collect();
            let b = self.batch_from_windows(&refs)?;
            out.extend(self.probabilities(&b, BnMode::Running)?.into_iter().map(|(c, _)| c));
        }
        Ok(out)
    }
}

fn softmax_pair(a: f64, b: f64) -> (f64, f64) {
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    let s = ea + eb;
    (ea / s, eb / s)
}

/// `(p_cross, p_not)` of one clip with optional late features, using
/// running batch-norm statistics.
pub fn densenet_forward(model: &DenseNet3d, clip: &[f64], late: Option<&[f64]>) -> Result<(f64, f64), ClassifierError> {
    let b = Batch {
        n: 1,
        clips: clip.to_vec(),
        late: late.map(<[f64]>::to_vec).unwrap_or_default(),
    };
    Ok(model.probabilities(&b, BnMode::Running)?[0])
}

/// Stateful optimizer loop over a fixed window set.
pub struct DenseNetTrainer<'a> {
    pub model: DenseNet3d,
    windows: &'a [SequenceWindow],
    labels: &'a [bool],
    adam: Adam,
    sampler: BatchSampler,
}

impl<'a> DenseNetTrainer<'a> {
    pub fn new(
        model: DenseNet3d,
        windows: &'a [SequenceWindow],
        labels: &'a [bool],
        cfg: &TrainConfig,
    ) -> Result<Self, ClassifierError> {
        cfg.validate()?;
        if windows.is_empty() {
            return Err(ClassifierError::EmptyDataset);
        }
        if windows.len() != labels.len() {
            return Err(ClassifierError::ShapeMismatch(format!(
                "{} windows but {} labels",
                windows.len(),
                labels.len()
            )));
        }
        if let Some(w) = windows.iter().find(|w| w.len() != model.config.clip_len) {
            return Err(ClassifierError::ShapeMismatch(format!(
                "window has {} frames, expected {}",
                w.len(),
                model.config.clip_len
            )));
        }
        let adam = Adam::new(model.n_params(), cfg.learning_rate);
        let sampler = BatchSampler::new(labels, cfg.batch_size, cfg.class_balance, cfg.seed ^ 0xd05e);
        Ok(DenseNetTrainer {
            model,
            windows,
            labels,
            adam,
            sampler,
        })
    }

    /// One optimizer step; returns the summed batch loss before the update.
    pub fn step(&mut self) -> Result<f64, ClassifierError> {
        let idx = self.sampler.next_batch();
        let refs: Vec<&SequenceWindow> = idx.iter().map(|&i| &self.windows[i]).collect();
        let labels: Vec<bool> = idx.iter().map(|&i| self.labels[i]).collect();
        let batch = self.model.batch_from_windows(&refs)?;
        let (loss, mut grad, stats) = self.model.loss_grad_stats(&self.model.params, &batch, &labels, BnMode::Batch)?;
        let scale = 1.0 / idx.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        let mut p = std::mem::take(&mut self.model.params);
        self.adam.step(&mut p, &grad);
        self.model.params = p;
        self.model.update_running(&stats);
        self.model.steps_trained += 1;
        Ok(loss)
    }
}

/// Trains a fresh network for `cfg.steps` steps; returns it with the loss
/// history.
pub fn densenet_train(
    windows: &[SequenceWindow],
    labels: &[bool],
    cfg: &TrainConfig,
) -> Result<(DenseNet3d, Vec<f64>), ClassifierError> {
    let model = DenseNet3d::new(cfg.densenet.clone(), cfg.seed)?;
    let mut trainer = DenseNetTrainer::new(model, windows, labels, cfg)?;
    let mut history = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        history.push(trainer.step()?);
    }
    Ok((trainer.model, history))
}

/// Largest relative error between analytic and central-difference gradients
/// of the summed batch loss (batch statistics), over every parameter.
pub fn gradient_check(model: &DenseNet3d, b: &Batch, labels: &[bool], eps: f64) -> Result<f64, ClassifierError> {
    let (_, analytic) = model.loss_grad(&model.params, b, labels, BnMode::Batch)?;
    let mut p = model.params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let (up, _) = model.forward_loss(&p, b, labels);
        p[i] = orig - eps;
        let (down, _) = model.forward_loss(&p, b, labels);
        p[i] = orig;
        worst = worst.max(super::relative_error(analytic[i], (up - down) / (2.0 * eps)));
    }
    Ok(worst)
}

impl DenseNet3d {
    fn forward_loss(&self, p: &[f64], b: &Batch, labels: &[bool]) -> (f64, Vec<f64>) {
        let (logits, _) = self.forward(p, b, BnMode::Batch);
        let loss = logits
            .chunks(2)
            .zip(labels)
            .map(|(z, &y)| {
                let (p0, p1) = softmax_pair(z[0], z[1]);
                -(if y { p1 } else { p0 }).max(PROB_FLOOR).ln()
            })
            .sum();
        (loss, logits)
    }
}

/// Feature-block length for a window of `t` frames.
pub fn late_block_len(t: usize) -> usize {
    t * FEATURE_LEN
}

#[cfg(test)]
mod tests;
