//! Batched 3D tensor operations with hand-written gradients.
//!
//! Activations are `n x c x d x h x w`, row-major.

use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub n: usize,
    pub c: usize,
    pub sp: [usize; 3],
    pub data: Vec<f64>,
}

impl Act {
    pub fn zeros(n: usize, c: usize, sp: [usize; 3]) -> Self {
        Act {
            n,
            c,
            sp,
            data: vec![0.0; n * c * sp[0] * sp[1] * sp[2]],
        }
    }

    pub fn spatial(&self) -> usize {
        self.sp[0] * self.sp[1] * self.sp[2]
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.c * self.spatial();
        &self.data[i * len..(i + 1) * len]
    }
}

/// Channel concatenation.
pub fn concat(parts: &[&Act]) -> Act {
    let (n, sp) = (parts[0].n, parts[0].sp);
    let c: usize = parts.iter().map(|p| p.c).sum();
    let s = parts[0].spatial();
    let mut out = Vec::with_capacity(n * c * s);
    for i in 0..n {
        for p in parts {
            out.extend_from_slice(p.sample(i));
        }
    }
    Act { n, c, sp, data: out }
}

/// Splits a concatenated gradient and adds each piece into `grads`.
pub fn split_add(d: &Act, grads: &mut [&mut Act]) {
    let s = d.spatial();
    for i in 0..d.n {
        let mut off = i * d.c * s;
        for g in grads.iter_mut() {
            let len = g.c * s;
            let dst = &mut g.data[i * len..(i + 1) * len];
            dst.iter_mut().zip(&d.data[off..off + len]).for_each(|(a, b)| *a += b);
            off += len;
        }
    }
}

/// `c = a * b + beta * c` for row-major `a: m x k`, `b: k x n`; `ta`/`tb`
/// read the operand as stored transposed.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe dense row-major storage.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub in_sp: [usize; 3],
    pub k: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    pub fn out_sp(&self) -> [usize; 3] {
        let mut o = [0; 3];
        for a in 0..3 {
            o[a] = (self.in_sp[a] + 2 * self.pad[a] - self.k[a]) / self.stride[a] + 1;
        }
        o
    }

    pub fn patch(&self) -> usize {
        self.c_in * self.k[0] * self.k[1] * self.k[2]
    }

    pub fn weights(&self) -> usize {
        self.c_out * self.patch()
    }

    fn pointwise(&self) -> bool {
        self.k == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    /// Calls `f(col_row, col_index, input_index)` for every in-bounds tap.
    fn taps(&self, mut f: impl FnMut(usize, usize, usize)) {
        let o = self.out_sp();
        let [d, h, w] = self.in_sp;
        let p = o[0] * o[1] * o[2];
        let mut r = 0;
        for ci in 0..self.c_in {
            for kd in 0..self.k[0] {
                for kh in 0..self.k[1] {
                    for kw in 0..self.k[2] {
                        let mut q = 0;
                        for od in 0..o[0] {
                            let id = (od * self.stride[0] + kd) as isize - self.pad[0] as isize;
                            for oh in 0..o[1] {
                                let ih = (oh * self.stride[1] + kh) as isize - self.pad[1] as isize;
                                for ow in 0..o[2] {
                                    let iw = (ow * self.stride[2] + kw) as isize - self.pad[2] as isize;
                                    if id >= 0
                                        && ih >= 0
                                        && iw >= 0
                                        && (id as usize) < d
                                        && (ih as usize) < h
                                        && (iw as usize) < w
                                    {
                                        let src = ci * d * h * w + (id as usize * h + ih as usize) * w + iw as usize;
                                        f(r * p + q, r, src);
                                    }
                                    q += 1;
                                }
                            }
                        }
                        r += 1;
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let o = self.out_sp();
        let mut col = vec![0.0; self.patch() * o[0] * o[1] * o[2]];
        self.taps(|ci, _, src| col[ci] = x[src]);
        col
    }

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        self.taps(|ci, _, src| dx[src] += col[ci]);
    }
}

/// Bias-free convolution.
pub fn conv_forward(g: &ConvGeom, w: &[f64], x: &Act) -> Act {
    let o = g.out_sp();
    let p = o[0] * o[1] * o[2];
    let outs: Vec<Vec<f64>> = (0..x.n)
        .into_par_iter()
        .map(|i| {
            let xs = x.sample(i);
            let mut y = vec![0.0; g.c_out * p];
            if g.pointwise() {
                gemm(g.c_out, g.c_in, p, w, false, xs, false, &mut y, 0.0);
            } else {
                let col = g.im2col(xs);
                gemm(g.c_out, g.patch(), p, w, false, &col, false, &mut y, 0.0);
            }
            y
        })
        .collect();
    Act {
        n: x.n,
        c: g.c_out,
        sp: o,
        data: outs.concat(),
    }
}

/// Returns the input gradient (if requested) and adds the weight gradient
/// into `dw`.
pub fn conv_backward(g: &ConvGeom, w: &[f64], x: &Act, dy: &Act, dw: &mut [f64], need_dx: bool) -> Option<Act> {
    let o = g.out_sp();
    let p = o[0] * o[1] * o[2];
    let k = g.patch();
    let parts: Vec<(Vec<f64>, Option<Vec<f64>>)> = (0..x.n)
        .into_par_iter()
        .map(|i| {
            let xs = x.sample(i);
            let dys = dy.sample(i);
            let mut dwi = vec![0.0; g.c_out * k];
            let dx = if g.pointwise() {
                gemm(g.c_out, p, k, dys, false, xs, true, &mut dwi, 0.0);
                need_dx.then(|| {
                    let mut dx = vec![0.0; k * p];
                    gemm(k, g.c_out, p, w, true, dys, false, &mut dx, 0.0);
                    dx
                })
            } else {
                let col = g.im2col(xs);
                gemm(g.c_out, p, k, dys, false, &col, true, &mut dwi, 0.0);
                need_dx.then(|| {
                    let mut dcol = vec![0.0; k * p];
                    gemm(k, g.c_out, p, w, true, dys, false, &mut dcol, 0.0);
                    let mut dx = vec![0.0; xs.len()];
                    g.col2im(&dcol, &mut dx);
                    dx
                })
            };
            (dwi, dx)
        })
        .collect();
    let mut dxs = Vec::new();
    for (dwi, dx) in parts {
        dw.iter_mut().zip(&dwi).for_each(|(a, b)| *a += b);
        if let Some(d) = dx {
            dxs.extend(d);
        }
    }
    need_dx.then_some(Act {
        n: x.n,
        c: x.c,
        sp: x.sp,
        data: dxs,
    })
}

/// Cached quantities of a batch-norm + ReLU step.
pub struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    gamma: Vec<f64>,
    out_positive: Vec<bool>,
    batch_stats: bool,
}

/// Per-channel batch statistics `(mean, biased variance)`.
pub fn channel_stats(x: &Act) -> (Vec<f64>, Vec<f64>) {
    let s = x.spatial();
    let m = (x.n * s) as f64;
    let mut mean = vec![0.0; x.c];
    let mut var = vec![0.0; x.c];
    for c in 0..x.c {
        let mut sum = 0.0;
        for i in 0..x.n {
            sum += x.data[(i * x.c + c) * s..(i * x.c + c + 1) * s].iter().sum::<f64>();
        }
        let mu = sum / m;
        let mut sq = 0.0;
        for i in 0..x.n {
            sq += x.data[(i * x.c + c) * s..(i * x.c + c + 1) * s]
                .iter()
                .map(|v| (v - mu) * (v - mu))
                .sum::<f64>();
        }
        mean[c] = mu;
        var[c] = sq / m;
    }
    (mean, var)
}

/// `relu(gamma * (x - mean) / sqrt(var + eps) + beta)`.
pub fn bn_relu_forward(x: &Act, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64, batch_stats: bool) -> (Act, BnCache) {
    let s = x.spatial();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.data.len()];
    let mut y = vec![0.0; x.data.len()];
    let mut pos = vec![false; x.data.len()];
    for i in 0..x.n {
        for c in 0..x.c {
            let base = (i * x.c + c) * s;
            for j in base..base + s {
                let h = (x.data[j] - mean[c]) * inv_std[c];
                xhat[j] = h;
                let v = gamma[c] * h + beta[c];
                if v > 0.0 {
                    y[j] = v;
                    pos[j] = true;
                }
            }
        }
    }
    (
        Act {
            n: x.n,
            c: x.c,
            sp: x.sp,
            data: y,
        },
        BnCache {
            xhat,
            inv_std,
            gamma: gamma.to_vec(),
            out_positive: pos,
            batch_stats,
        },
    )
}

/// Input gradient; adds `dgamma`, `dbeta`.
pub fn bn_relu_backward(cache: &BnCache, dy: &Act, dgamma: &mut [f64], dbeta: &mut [f64]) -> Act {
    let s = dy.spatial();
    let m = (dy.n * s) as f64;
    let mut dx = vec![0.0; dy.data.len()];
    for c in 0..dy.c {
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for i in 0..dy.n {
            let base = (i * dy.c + c) * s;
            for j in base..base + s {
                if cache.out_positive[j] {
                    sum_d += dy.data[j];
                    sum_dx += dy.data[j] * cache.xhat[j];
                }
            }
        }
        dbeta[c] += sum_d;
        dgamma[c] += sum_dx;
        let g = cache.gamma[c];
        let k = cache.inv_std[c];
        for i in 0..dy.n {
            let base = (i * dy.c + c) * s;
            for j in base..base + s {
                let dxhat = if cache.out_positive[j] { dy.data[j] * g } else { 0.0 };
                dx[j] = if cache.batch_stats {
                    k * (dxhat - (g * sum_d + cache.xhat[j] * g * sum_dx) / m)
                } else {
                    k * dxhat
                };
            }
        }
    }
    Act {
        n: dy.n,
        c: dy.c,
        sp: dy.sp,
        data: dx,
    }
}

/// Non-overlapping average pooling with window `k`.
pub fn avgpool_forward(x: &Act, k: [usize; 3]) -> Act {
    let o = [x.sp[0] / k[0], x.sp[1] / k[1], x.sp[2] / k[2]];
    let mut y = Act::zeros(x.n, x.c, o);
    let scale = 1.0 / (k[0] * k[1] * k[2]) as f64;
    let [_, h, w] = x.sp;
    let (si, so) = (x.spatial(), y.spatial());
    for nc in 0..x.n * x.c {
        for od in 0..o[0] {
            for oh in 0..o[1] {
                for ow in 0..o[2] {
                    let mut acc = 0.0;
                    for a in 0..k[0] {
                        for b in 0..k[1] {
                            for c in 0..k[2] {
                                acc += x.data[nc * si + ((od * k[0] + a) * h + oh * k[1] + b) * w + ow * k[2] + c];
                            }
                        }
                    }
                    y.data[nc * so + (od * o[1] + oh) * o[2] + ow] = acc * scale;
                }
            }
        }
    }
    y
}

pub fn avgpool_backward(dy: &Act, k: [usize; 3], in_sp: [usize; 3]) -> Act {
    let mut dx = Act::zeros(dy.n, dy.c, in_sp);
    let o = dy.sp;
    let scale = 1.0 / (k[0] * k[1] * k[2]) as f64;
    let [_, h, w] = in_sp;
    let (si, so) = (dx.spatial(), dy.spatial());
    for nc in 0..dy.n * dy.c {
        for od in 0..o[0] {
            for oh in 0..o[1] {
                for ow in 0..o[2] {
                    let g = dy.data[nc * so + (od * o[1] + oh) * o[2] + ow] * scale;
                    for a in 0..k[0] {
                        for b in 0..k[1] {
                            for c in 0..k[2] {
                                dx.data[nc * si + ((od * k[0] + a) * h + oh * k[1] + b) * w + ow * k[2] + c] += g;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeom, w: &[f64], x: &[f64]) -> Vec<f64> {
        let o = g.out_sp();
        let [d, h, wd] = g.in_sp;
        let mut y = vec![0.0; g.c_out * o[0] * o[1] * o[2]];
        for co in 0..g.c_out {
            for od in 0..o[0] {
                for oh in 0..o[1] {
                    for ow in 0..o[2] {
                        let mut acc = 0.0;
                        for ci in 0..g.c_in {
                            for a in 0..g.k[0] {
                                for b in 0..g.k[1] {
                                    for c in 0..g.k[2] {
                                        let id = (od * g.stride[0] + a) as isize - g.pad[0] as isize;
                                        let ih = (oh * g.stride[1] + b) as isize - g.pad[1] as isize;
                                        let iw = (ow * g.stride[2] + c) as isize - g.pad[2] as isize;
                                        if id < 0 || ih < 0 || iw < 0 || id as usize >= d || ih as usize >= h || iw as usize >= wd {
                                            continue;
                                        }
                                        let wi = (((co * g.c_in + ci) * g.k[0] + a) * g.k[1] + b) * g.k[2] + c;
                                        acc += w[wi] * x[ci * d * h * wd + (id as usize * h + ih as usize) * wd + iw as usize];
                                    }
                                }
                            }
                        }
                        y[(co * o[0] + od) * o[1] * o[2] + oh * o[2] + ow] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        let g = ConvGeom {
            c_in: 2,
            c_out: 3,
            in_sp: [3, 4, 5],
            k: [3, 3, 3],
            stride: [1, 1, 1],
            pad: [1, 1, 1],
        };
        let x: Vec<f64> = (0..2 * 60).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let w: Vec<f64> = (0..g.weights()).map(|i| ((i * 5) % 11) as f64 * 0.1 - 0.5).collect();
        let a = Act {
            n: 1,
            c: 2,
            sp: [3, 4, 5],
            data: x.clone(),
        };
        let y = conv_forward(&g, &w, &a);
        let expected = naive_conv(&g, &w, &x);
        for (p, q) in y.data.iter().zip(&expected) {
            assert!((p - q).abs() < 1e-12);
        }
        let strided = ConvGeom {
            k: [1, 2, 2],
            stride: [1, 2, 2],
            pad: [0, 0, 0],
            ..g
        };
        let ws: Vec<f64> = (0..strided.weights()).map(|i| i as f64 * 0.01).collect();
        let y = conv_forward(&strided, &ws, &a);
        assert_eq!(y.sp, [3, 2, 2]);
        for (p, q) in y.data.iter().zip(&naive_conv(&strided, &ws, &x)) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_averages_blocks() {
        let x = Act {
            n: 1,
            c: 1,
            sp: [2, 2, 2],
            data: (1..=8).map(f64::from).collect(),
        };
        let y = avgpool_forward(&x, [2, 2, 2]);
        assert_eq!(y.data, vec![4.5]);
        let d = avgpool_backward(&y, [2, 2, 2], [2, 2, 2]);
        assert!(d.data.iter().all(|v| (*v - 4.5 / 8.0).abs() < 1e-15));
    }

    #[test]
    fn concat_and_split_are_inverse() {
        let a = Act {
            n: 2,
            c: 1,
            sp: [1, 1, 2],
            data: vec![1.0, 2.0, 3.0, 4.0],
        };
        let b = Act {
            n: 2,
            c: 2,
            sp: [1, 1, 2],
            data: (10..18).map(f64::from).collect(),
        };
        let c = concat(&[&a, &b]);
        assert_eq!(c.data, vec![1.0, 2.0, 10.0, 11.0, 12.0, 13.0, 3.0, 4.0, 14.0, 15.0, 16.0, 17.0]);
        let mut ga = Act::zeros(2, 1, [1, 1, 2]);
        let mut gb = Act::zeros(2, 2, [1, 1, 2]);
        split_add(&c, &mut [&mut ga, &mut gb]);
        assert_eq!((ga, gb), (a, b));
    }
}
