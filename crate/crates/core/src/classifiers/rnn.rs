//! Bidirectional LSTM over per-frame feature sequences.
//!
//! Frames without data are padding: they are excluded from the input
//! normalization statistics and the recurrent state passes through them
//! unchanged in both directions and every layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::window::BatchSampler;
use super::{nll_loss, ClassifierError, TrainConfig};

/// One input sequence; `None` rows are padding.
pub type Sequence = Vec<Option<Vec<f64>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RnnConfig {
    pub hidden: usize,
    pub layers: usize,
    /// Longer sequences are cut into chunks of at most this many frames.
    pub max_seq: usize,
    /// Value written for padded frames in exported sequences.
    pub pad: f64,
    /// A chunk is positive when the onset falls within this many frames after it.
    pub horizon: u32,
}

impl Default for RnnConfig {
    fn default() -> Self {
        RnnConfig {
            hidden: 16,
            layers: 2,
            max_seq: 45,
            pad: -1.0,
            horizon: 14,
        }
    }
}

impl RnnConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.hidden == 0 || self.layers == 0 || self.max_seq == 0 || self.horizon == 0 {
            return Err(ClassifierError::InvalidConfig(
                "hidden, layers, max_seq and horizon must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Dir {
    w: usize,
    u: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layout {
    input: usize,
    hidden: usize,
    layers: Vec<[Dir; 2]>,
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl Layout {
    fn new(input: usize, hidden: usize, layers: usize) -> Self {
        let g = 4 * hidden;
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let mut ls = Vec::with_capacity(layers);
        for l in 0..layers {
            let in_dim = if l == 0 { input } else { 2 * hidden };
            let mut dir = || Dir {
                w: take(g * in_dim),
                u: take(g * hidden),
                b: take(g),
            };
            ls.push([dir(), dir()]);
        }
        let head_w = take(2 * hidden);
        let head_b = take(1);
        Layout {
            input,
            hidden,
            layers: ls,
            head_w,
            head_b,
            total: off,
        }
    }

    fn in_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input
        } else {
            2 * self.hidden
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one direction: gates `[i, f, g, o]`, cell and hidden
/// states, each `T x ...` row-major.
struct DirCache {
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

fn order(t: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..t).rev().collect()
    } else {
        (0..t).collect()
    }
}

fn run_dir(p: &[f64], d: Dir, in_dim: usize, hd: usize, xs: &[f64], mask: &[bool], reverse: bool) -> DirCache {
    let t_len = mask.len();
    let g4 = 4 * hd;
    let mut cache = DirCache {
        gates: vec![0.0; t_len * g4],
        c: vec![0.0; t_len * hd],
        h: vec![0.0; t_len * hd],
    };
    let mut h_prev = vec![0.0; hd];
    let mut c_prev = vec![0.0; hd];
    let mut z = vec![0.0; g4];
    for t in order(t_len, reverse) {
        if mask[t] {
            let x = &xs[t * in_dim..(t + 1) * in_dim];
            for r in 0..g4 {
                let wr = &p[d.w + r * in_dim..d.w + (r + 1) * in_dim];
                let ur = &p[d.u + r * hd..d.u + (r + 1) * hd];
                z[r] = p[d.b + r]
                    + wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                    + ur.iter().zip(&h_prev).map(|(a, b)| a * b).sum::<f64>();
            }
            let gates = &mut cache.gates[t * g4..(t + 1) * g4];
            for k in 0..hd {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[hd + k]);
                let g = z[2 * hd + k].tanh();
                let o = sigmoid(z[3 * hd + k]);
                gates[k] = i;
                gates[hd + k] = f;
                gates[2 * hd + k] = g;
                gates[3 * hd + k] = o;
                c_prev[k] = f * c_prev[k] + i * g;
                h_prev[k] = o * c_prev[k].tanh();
            }
        }
        cache.c[t * hd..(t + 1) * hd].copy_from_slice(&c_prev);
        cache.h[t * hd..(t + 1) * hd].copy_from_slice(&h_prev);
    }
    cache
}

#[allow(clippy::too_many_arguments)]
fn back_dir(
    p: &[f64],
    grad: &mut [f64],
    d: Dir,
    in_dim: usize,
    hd: usize,
    xs: &[f64],
    mask: &[bool],
    reverse: bool,
    cache: &DirCache,
    dy: &[f64],
    dh_final: &[f64],
) -> Vec<f64> {
    let t_len = mask.len();
    let g4 = 4 * hd;
    let mut dx = vec![0.0; t_len * in_dim];
    let mut dh = dh_final.to_vec();
    let mut dc = vec![0.0; hd];
    let mut dz = vec![0.0; g4];
    let steps = order(t_len, reverse);
    for (n, &t) in steps.iter().enumerate().rev() {
        for k in 0..hd {
            dh[k] += dy[t * hd + k];
        }
        if !mask[t] {
            continue;
        }
        let prev = if n == 0 { None } else { Some(steps[n - 1]) };
        let gates = &cache.gates[t * g4..(t + 1) * g4];
        for k in 0..hd {
            let (i, f, g, o) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
            let c = cache.c[t * hd + k];
            let c_prev = prev.map_or(0.0, |q| cache.c[q * hd + k]);
            let tc = c.tanh();
            let d_o = dh[k] * tc;
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dz[k] = dct * g * i * (1.0 - i);
            dz[hd + k] = dct * c_prev * f * (1.0 - f);
            dz[2 * hd + k] = dct * i * (1.0 - g * g);
            dz[3 * hd + k] = d_o * o * (1.0 - o);
            dc[k] = dct * f;
        }
        let x = &xs[t * in_dim..(t + 1) * in_dim];
        let dxt = &mut dx[t * in_dim..(t + 1) * in_dim];
        let mut dh_prev = vec![0.0; hd];
        for r in 0..g4 {
            let g = dz[r];
            if g == 0.0 {
                continue;
            }
            grad[d.b + r] += g;
            let w = d.w + r * in_dim;
            for j in 0..in_dim {
                grad[w + j] += g * x[j];
                dxt[j] += g * p[w + j];
            }
            let u = d.u + r * hd;
            if let Some(q) = prev {
                for j in 0..hd {
                    grad[u + j] += g * cache.h[q * hd + j];
                }
            }
            for j in 0..hd {
                dh_prev[j] += g * p[u + j];
            }
        }
        dh = dh_prev;
    }
    dx
}

/// Trained bidirectional LSTM with a single sigmoid output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstm {
    pub config: RnnConfig,
    pub seed: u64,
    layout: Layout,
    mean: Vec<f64>,
    std: Vec<f64>,
    params: Vec<f64>,
}

struct Forward {
    inputs: Vec<Vec<f64>>,
    caches: Vec<[DirCache; 2]>,
    top: Vec<f64>,
    p: f64,
}

impl BiLstm {
    /// Randomly initialized network with identity normalization.
    pub fn new(input_dim: usize, config: RnnConfig, seed: u64) -> Self {
        let layout = Layout::new(input_dim, config.hidden, config.layers);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (config.hidden as f64).sqrt();
        let mut params: Vec<f64> = (0..layout.total).map(|_| rng.gen_range(-bound..bound)).collect();
        for dirs in &layout.layers {
            for d in dirs {
                params[d.b..d.b + 4 * config.hidden].iter_mut().for_each(|v| *v = 0.0);
                params[d.b + config.hidden..d.b + 2 * config.hidden].iter_mut().for_each(|v| *v = 1.0);
            }
        }
        params[layout.head_b] = 0.0;
        BiLstm {
            config,
            seed,
            mean: vec![0.0; input_dim],
            std: vec![1.0; input_dim],
            layout,
            params,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn prepare(&self, seq: &[Option<Vec<f64>>]) -> Result<(Vec<f64>, Vec<bool>), ClassifierError> {
        let d = self.layout.input;
        let start = seq.len().saturating_sub(self.config.max_seq);
        let seq = &seq[start..];
        let mut xs = vec![0.0; seq.len() * d];
        let mut mask = Vec::with_capacity(seq.len());
        for (t, row) in seq.iter().enumerate() {
            match row {
                Some(r) => {
                    if r.len() != d {
                        return Err(ClassifierError::DimensionMismatch { expected: d, got: r.len() });
                    }
                    for j in 0..d {
                        xs[t * d + j] = (r[j] - self.mean[j]) / self.std[j];
                    }
                    mask.push(true);
                }
                None => mask.push(false),
            }
        }
        Ok((xs, mask))
    }

    fn forward(&self, p: &[f64], xs: Vec<f64>, mask: &[bool]) -> Forward {
        let hd = self.layout.hidden;
        let t_len = mask.len();
        let mut inputs = vec![xs];
        let mut caches = Vec::with_capacity(self.layout.layers.len());
        for (l, dirs) in self.layout.layers.iter().enumerate() {
            let in_dim = self.layout.in_dim(l);
            let x = inputs.last().expect("layer input");
            let fwd = run_dir(p, dirs[0], in_dim, hd, x, mask, false);
            let bwd = run_dir(p, dirs[1], in_dim, hd, x, mask, true);
            let mut out = vec![0.0; t_len * 2 * hd];
            for t in 0..t_len {
                out[t * 2 * hd..t * 2 * hd + hd].copy_from_slice(&fwd.h[t * hd..(t + 1) * hd]);
                out[t * 2 * hd + hd..(t + 1) * 2 * hd].copy_from_slice(&bwd.h[t * hd..(t + 1) * hd]);
            }
            caches.push([fwd, bwd]);
            inputs.push(out);
        }
        let mut top = vec![0.0; 2 * hd];
        if t_len > 0 {
            let [fwd, bwd] = caches.last().expect("at least one layer");
            top[..hd].copy_from_slice(&fwd.h[(t_len - 1) * hd..t_len * hd]);
            top[hd..].copy_from_slice(&bwd.h[..hd]);
        }
        let logit = p[self.layout.head_b]
            + top
                .iter()
                .zip(&p[self.layout.head_w..self.layout.head_w + 2 * hd])
                .map(|(a, b)| a * b)
                .sum::<f64>();
        Forward {
            inputs,
            caches,
            top,
            p: sigmoid(logit),
        }
    }

    /// Crossing probability of a raw (unnormalized) sequence. Only the last
    /// `max_seq` rows are used.
    pub fn predict_proba(&self, seq: &[Option<Vec<f64>>]) -> Result<f64, ClassifierError> {
        let (xs, mask) = self.prepare(seq)?;
        Ok(self.forward(&self.params, xs, &mask).p)
    }

    /// Loss `-ln p(label)` of one sequence and its gradient (accumulated
    /// into `grad`) at parameters `p`.
    fn loss_grad(&self, p: &[f64], seq: &[Option<Vec<f64>>], label: bool, grad: &mut [f64]) -> Result<f64, ClassifierError> {
        let (xs, mask) = self.prepare(seq)?;
        let t_len = mask.len();
        let hd = self.layout.hidden;
        let fw = self.forward(p, xs, &mask);
        let target = if label { 1.0 } else { 0.0 };
        let loss = nll_loss(&[if label { fw.p } else { 1.0 - fw.p }]);
        let dlogit = fw.p - target;
        grad[self.layout.head_b] += dlogit;
        for k in 0..2 * hd {
            grad[self.layout.head_w + k] += dlogit * fw.top[k];
        }
        if t_len == 0 {
            return Ok(loss);
        }
        let mut dh_final = [vec![0.0; hd], vec![0.0; hd]];
        for k in 0..hd {
            dh_final[0][k] = dlogit * p[self.layout.head_w + k];
            dh_final[1][k] = dlogit * p[self.layout.head_w + hd + k];
        }
        let mut dy = vec![0.0; t_len * 2 * hd];
        for l in (0..self.layout.layers.len()).rev() {
            let in_dim = self.layout.in_dim(l);
            let x = &fw.inputs[l];
            let mut dx = vec![0.0; t_len * in_dim];
            for dir in 0..2 {
                let mut dyd = vec![0.0; t_len * hd];
                for t in 0..t_len {
                    dyd[t * hd..(t + 1) * hd].copy_from_slice(&dy[t * 2 * hd + dir * hd..t * 2 * hd + (dir + 1) * hd]);
                }
                let part = back_dir(
                    p,
                    grad,
                    self.layout.layers[l][dir],
                    in_dim,
                    hd,
                    x,
                    &mask,
                    dir == 1,
                    &fw.caches[l][dir],
                    &dyd,
                    &dh_final[dir],
                );
                dx.iter_mut().zip(part).for_each(|(a, b)| *a += b);
            }
            dh_final = [vec![0.0; hd], vec![0.0; hd]];
            dy = dx;
        }
        Ok(loss)
    }

    /// Summed loss over a batch and its gradient.
    pub fn batch_loss_grad(&self, p: &[f64], seqs: &[&Sequence], labels: &[bool]) -> Result<(f64, Vec<f64>), ClassifierError> {
        let parts: Vec<(f64, Vec<f64>)> = seqs
            .par_iter()
            .zip(labels.par_iter())
            .map(|(s, &y)| {
                let mut g = vec![0.0; p.len()];
                self.loss_grad(p, s, y, &mut g).map(|l| (l, g))
            })
            .collect::<Result<_, _>>()?;
        let mut grad = vec![0.0; p.len()];
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        Ok((loss, grad))
    }

    fn fit_normalization(&mut self, seqs: &[Sequence]) {
        let d = self.layout.input;
        let mut n = 0usize;
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for row in seqs.iter().flatten().flatten() {
            n += 1;
            for j in 0..d {
                sum[j] += row[j];
                sq[j] += row[j] * row[j];
            }
        }
        if n == 0 {
            return;
        }
        for j in 0..d {
            let m = sum[j] / n as f64;
            let var = (sq[j] / n as f64 - m * m).max(0.0);
            self.mean[j] = m;
            self.std[j] = if var.sqrt() > 1e-8 { var.sqrt() } else { 1.0 };
        }
    }
}

/// Splits sequences longer than `max_seq` into consecutive chunks of at most
/// `max_seq` rows, each inheriting the sequence label.
pub fn chunk_sequences(seqs: &[Sequence], labels: &[bool], max_seq: usize) -> (Vec<Sequence>, Vec<bool>) {
    let mut out = Vec::new();
    let mut ys = Vec::new();
    for (s, &y) in seqs.iter().zip(labels) {
        if s.is_empty() {
            out.push(Vec::new());
            ys.push(y);
        }
        for c in s.chunks(max_seq) {
            out.push(c.to_vec());
            ys.push(y);
        }
    }
    (out, ys)
}

/// Training chunks of one track: consecutive runs of at most `max_seq`
/// frames, each labelled positive iff `onset` lies within `horizon` frames
/// after the chunk's last frame.
pub fn track_chunks(
    frames: &[(u32, Option<Vec<f64>>)],
    onset: Option<u32>,
    cfg: &RnnConfig,
) -> Vec<(Sequence, bool)> {
    frames
        .chunks(cfg.max_seq)
        .map(|c| {
            let last = c.last().expect("non-empty chunk").0;
            let positive = onset.is_some_and(|o| o > last && o <= last + cfg.horizon);
            (c.iter().map(|(_, r)| r.clone()).collect(), positive)
        })
        .collect()
}

/// Trains with Adam on Eq.-style summed NLL; returns the model and the loss
/// of every step (measured before the step's update).
pub fn train_bilstm_with_history(
    seqs: &[Sequence],
    labels: &[bool],
    cfg: &TrainConfig,
) -> Result<(BiLstm, Vec<f64>), ClassifierError> {
    cfg.validate()?;
    if seqs.is_empty() || seqs.iter().all(|s| s.iter().all(Option::is_none)) {
        return Err(ClassifierError::EmptyDataset);
    }
    if seqs.len() != labels.len() {
        return Err(ClassifierError::ShapeMismatch(format!("{} sequences but {} labels", seqs.len(), labels.len())));
    }
    let dim = seqs
        .iter()
        .flatten()
        .flatten()
        .map(Vec::len)
        .next()
        .expect("a non-pad row exists");
    let (seqs, labels) = chunk_sequences(seqs, labels, cfg.rnn.max_seq);
    let mut model = BiLstm::new(dim, cfg.rnn.clone(), cfg.seed);
    model.fit_normalization(&seqs);
    let mut adam = Adam::new(model.params.len(), cfg.learning_rate);
    let mut sampler = BatchSampler::new(&labels, cfg.batch_size, cfg.class_balance, cfg.seed ^ 0x5eed);
    let mut history = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let batch = sampler.next_batch();
        let bs: Vec<&Sequence> = batch.iter().map(|&i| &seqs[i]).collect();
        let by: Vec<bool> = batch.iter().map(|&i| labels[i]).collect();
        let (loss, mut grad) = model.batch_loss_grad(&model.params, &bs, &by)?;
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        history.push(loss);
        let mut p = std::mem::take(&mut model.params);
        adam.step(&mut p, &grad);
        model.params = p;
    }
    Ok((model, history))
}

pub fn train_bilstm(seqs: &[Sequence], labels: &[bool], cfg: &TrainConfig) -> Result<BiLstm, ClassifierError> {
    train_bilstm_with_history(seqs, labels, cfg).map(|(m, _)| m)
}

/// Largest relative error between the analytic gradient and central finite
/// differences (step `eps`) of the summed batch loss.
pub fn gradient_check(model: &BiLstm, seqs: &[Sequence], labels: &[bool], eps: f64) -> Result<f64, ClassifierError> {
    let refs: Vec<&Sequence> = seqs.iter().collect();
    let (_, analytic) = model.batch_loss_grad(&model.params, &refs, labels)?;
    let mut p = model.params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = model.batch_loss_grad(&p, &refs, labels)?.0;
        p[i] = orig - eps;
        let down = model.batch_loss_grad(&p, &refs, labels)?.0;
        p[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(super::relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> (BiLstm, Vec<Sequence>, Vec<bool>) {
        let cfg = RnnConfig {
            hidden: 2,
            layers: 2,
            ..RnnConfig::default()
        };
        let model = BiLstm::new(3, cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut row = || Some((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
        let seqs = vec![
            vec![row(), None, row(), row(), row()],
            vec![row(), row(), row()],
            vec![None, row(), None],
        ];
        (model, seqs, vec![true, false, true])
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (model, seqs, labels) = micro();
        let err = gradient_check(&model, &seqs, &labels, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn all_pad_sequence_is_defined() {
        let (model, _, _) = micro();
        let p = model.predict_proba(&[None, None, None]).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        assert!(model.predict_proba(&[]).unwrap().is_finite());
    }

    #[test]
    fn padding_passes_state_through() {
        let (model, seqs, _) = micro();
        let mut padded = seqs[1].clone();
        padded.insert(1, None);
        padded.push(None);
        let a = model.predict_proba(&seqs[1]).unwrap();
        let b = model.predict_proba(&padded).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn loss_decreases_on_toy_set() {
        let (_, seqs, _) = micro();
        let mut seqs = seqs;
        seqs.push(vec![Some(vec![0.5, 0.5, 0.5]); 4]);
        let labels = vec![true, false, true, false];
        let cfg = TrainConfig {
            steps: 11,
            learning_rate: 1e-3,
            batch_size: 4,
            class_balance: false,
            ..TrainConfig::default()
        };
        let (_, hist) = train_bilstm_with_history(&seqs, &labels, &cfg).unwrap();
        for w in hist[1..].windows(2) {
            assert!(w[1] < w[0], "{hist:?}");
        }
    }

    #[test]
    fn chunking_and_targets() {
        let frames: Vec<(u32, Option<Vec<f64>>)> = (0..100).map(|f| (f, Some(vec![f as f64]))).collect();
        let chunks = track_chunks(&frames, Some(50), &RnnConfig::default());
        assert_eq!(chunks.iter().map(|c| c.0.len()).collect::<Vec<_>>(), vec![45, 45, 10]);
        // chunk 0 ends at frame 44, onset 50 is within 14 frames
        assert_eq!(chunks.iter().map(|c| c.1).collect::<Vec<_>>(), vec![true, false, false]);
        let (c, y) = chunk_sequences(&[vec![None; 91]], &[true], 45);
        assert_eq!(c.len(), 3);
        assert!(y.iter().all(|&v| v));
    }

    #[test]
    fn empty_dataset_rejected() {
        let cfg = TrainConfig::default();
        assert!(matches!(train_bilstm(&[], &[], &cfg), Err(ClassifierError::EmptyDataset)));
        assert!(matches!(
            train_bilstm(&[vec![None]], &[true], &cfg),
            Err(ClassifierError::EmptyDataset)
        ));
    }
}
