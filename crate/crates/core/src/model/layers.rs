//! Per-layer kernels. Sequences are `T × width` matrices; convolutional
//! feature maps lay each frame out channel-major, then frequency.

use crate::tensor::{gemm, Matrix};

pub(crate) const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub f_in: usize,
    pub kt: usize,
    pub kf: usize,
    pub st: usize,
    pub sf: usize,
    pub pt: usize,
    pub pf: usize,
    pub c_out: usize,
    pub f_out: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c_in * self.kt * self.kf
    }

    pub fn t_out(&self, t_in: usize) -> usize {
        (t_in + 2 * self.pt - self.kt) / self.st + 1
    }
}

/// Patch matrix: one row per output position `(t', f')`, one column per
/// `(c, i, j)` kernel tap; out-of-range taps read zero.
fn im2col(x: &Matrix, g: &ConvGeom) -> (Vec<f64>, usize) {
    let t_out = g.t_out(x.rows);
    let k = g.patch();
    let mut col = vec![0.0; t_out * g.f_out * k];
    for to in 0..t_out {
        for fo in 0..g.f_out {
            let row = &mut col[(to * g.f_out + fo) * k..(to * g.f_out + fo + 1) * k];
            for c in 0..g.c_in {
                for i in 0..g.kt {
                    let ti = (to * g.st + i) as isize - g.pt as isize;
                    if ti < 0 || ti >= x.rows as isize {
                        continue;
                    }
                    let src = x.row(ti as usize);
                    for j in 0..g.kf {
                        let fi = (fo * g.sf + j) as isize - g.pf as isize;
                        if fi < 0 || fi >= g.f_in as isize {
                            continue;
                        }
                        row[(c * g.kt + i) * g.kf + j] = src[c * g.f_in + fi as usize];
                    }
                }
            }
        }
    }
    (col, t_out)
}

pub(crate) fn conv_forward(x: &Matrix, w: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Matrix {
    let (col, t_out) = im2col(x, g);
    let p = t_out * g.f_out;
    let mut y = vec![0.0; p * g.c_out];
    gemm(p, g.patch(), g.c_out, 1.0, &col, false, w, true, 0.0, &mut y);
    let mut out = Matrix::zeros(t_out, g.c_out * g.f_out);
    for to in 0..t_out {
        let dst = out.row_mut(to);
        for fo in 0..g.f_out {
            for o in 0..g.c_out {
                let b = bias.map_or(0.0, |b| b[o]);
                dst[o * g.f_out + fo] = y[(to * g.f_out + fo) * g.c_out + o] + b;
            }
        }
    }
    out
}

/// Accumulates into `dw` and `dbias`; returns the input gradient.
pub(crate) fn conv_backward(x: &Matrix, w: &[f64], dout: &Matrix, g: &ConvGeom, dw: &mut [f64], dbias: Option<&mut [f64]>) -> Matrix {
    let (col, t_out) = im2col(x, g);
    let p = t_out * g.f_out;
    let k = g.patch();
    let mut gy = vec![0.0; p * g.c_out];
    for to in 0..t_out {
        let src = dout.row(to);
        for fo in 0..g.f_out {
            for o in 0..g.c_out {
                gy[(to * g.f_out + fo) * g.c_out + o] = src[o * g.f_out + fo];
            }
        }
    }
    if let Some(db) = dbias {
        for chunk in gy.chunks(g.c_out) {
            for (d, v) in db.iter_mut().zip(chunk) {
                *d += v;
            }
        }
    }
    gemm(g.c_out, p, k, 1.0, &gy, true, &col, false, 1.0, dw);
    let mut dcol = vec![0.0; p * k];
    gemm(p, g.c_out, k, 1.0, &gy, false, w, false, 0.0, &mut dcol);

    let mut dx = Matrix::zeros(x.rows, x.cols);
    for to in 0..t_out {
        for fo in 0..g.f_out {
            let row = &dcol[(to * g.f_out + fo) * k..(to * g.f_out + fo + 1) * k];
            for c in 0..g.c_in {
                for i in 0..g.kt {
                    let ti = (to * g.st + i) as isize - g.pt as isize;
                    if ti < 0 || ti >= x.rows as isize {
                        continue;
                    }
                    let dst = dx.row_mut(ti as usize);
                    for j in 0..g.kf {
                        let fi = (fo * g.sf + j) as isize - g.pf as isize;
                        if fi < 0 || fi >= g.f_in as isize {
                            continue;
                        }
                        dst[c * g.f_in + fi as usize] += row[(c * g.kt + i) * g.kf + j];
                    }
                }
            }
        }
    }
    dx
}

/// `Y = X Wᵀ (+ b)` with `W` stored `out × in`.
pub(crate) fn dense_forward(x: &Matrix, w: &[f64], bias: Option<&[f64]>, out_dim: usize) -> Matrix {
    let mut y = Matrix::zeros(x.rows, out_dim);
    gemm(x.rows, x.cols, out_dim, 1.0, &x.data, false, w, true, 0.0, &mut y.data);
    if let Some(b) = bias {
        for r in 0..y.rows {
            for (v, bb) in y.row_mut(r).iter_mut().zip(b) {
                *v += bb;
            }
        }
    }
    y
}

pub(crate) fn dense_backward(x: &Matrix, w: &[f64], dy: &Matrix, dw: &mut [f64], dbias: Option<&mut [f64]>) -> Matrix {
    gemm(dy.cols, x.rows, x.cols, 1.0, &dy.data, true, &x.data, false, 1.0, dw);
    if let Some(db) = dbias {
        for r in 0..dy.rows {
            for (d, v) in db.iter_mut().zip(dy.row(r)) {
                *d += v;
            }
        }
    }
    let mut dx = Matrix::zeros(x.rows, x.cols);
    gemm(x.rows, dy.cols, x.cols, 1.0, &dy.data, false, w, false, 0.0, &mut dx.data);
    dx
}

/// Batch normalization where each frame holds `units` contiguous blocks of
/// `inner` values; statistics are per unit over every frame of the batch.
#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    pub x_hat: Vec<Matrix>,
    pub inv_std: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance estimate, for the running average.
    pub var: Vec<f64>,
}

pub(crate) fn bn_forward_train(xs: &[Matrix], units: usize, inner: usize, gamma: &[f64], beta: &[f64]) -> (Vec<Matrix>, BnCache, BnBatchStats) {
    let mut sum = vec![0.0; units];
    let mut count = 0;
    for x in xs {
        for r in 0..x.rows {
            for (e, v) in x.row(r).iter().enumerate() {
                sum[e / inner] += v;
            }
        }
        count += x.rows * inner;
    }
    let n = count.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut sq = vec![0.0; units];
    for x in xs {
        for r in 0..x.rows {
            for (e, v) in x.row(r).iter().enumerate() {
                let d = v - mean[e / inner];
                sq[e / inner] += d * d;
            }
        }
    }
    let var: Vec<f64> = sq.iter().map(|s| s / n).collect();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut x_hat = Vec::with_capacity(xs.len());
    let mut ys = Vec::with_capacity(xs.len());
    for x in xs {
        let mut xh = x.clone();
        let mut y = x.clone();
        for r in 0..x.rows {
            let (hrow, yrow) = (xh.row_mut(r), y.row_mut(r));
            for e in 0..hrow.len() {
                let u = e / inner;
                let h = (hrow[e] - mean[u]) * inv_std[u];
                hrow[e] = h;
                yrow[e] = gamma[u] * h + beta[u];
            }
        }
        x_hat.push(xh);
        ys.push(y);
    }
    let unbias = if count > 1 { n / (n - 1.0) } else { 1.0 };
    let stats = BnBatchStats {
        mean,
        var: var.iter().map(|v| v * unbias).collect(),
    };
    (ys, BnCache { x_hat, inv_std, count }, stats)
}

pub(crate) fn bn_forward_eval(x: &Matrix, inner: usize, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64]) -> Matrix {
    let mut y = x.clone();
    for r in 0..y.rows {
        for (e, v) in y.row_mut(r).iter_mut().enumerate() {
            let u = e / inner;
            *v = gamma[u] * (*v - mean[u]) / (var[u] + BN_EPS).sqrt() + beta[u];
        }
    }
    y
}

/// Returns input gradients; accumulates `dgamma`, `dbeta`.
pub(crate) fn bn_backward(dys: &[Matrix], cache: &BnCache, units: usize, inner: usize, gamma: &[f64], dgamma: &mut [f64], dbeta: &mut [f64]) -> Vec<Matrix> {
    let mut sum_dy = vec![0.0; units];
    let mut sum_dy_xh = vec![0.0; units];
    for (dy, xh) in dys.iter().zip(&cache.x_hat) {
        for (e, (d, h)) in dy.data.iter().zip(&xh.data).enumerate() {
            let u = (e % dy.cols) / inner;
            sum_dy[u] += d;
            sum_dy_xh[u] += d * h;
        }
    }
    for u in 0..units {
        dgamma[u] += sum_dy_xh[u];
        dbeta[u] += sum_dy[u];
    }
    let n = cache.count as f64;
    dys.iter()
        .zip(&cache.x_hat)
        .map(|(dy, xh)| {
            let mut dx = dy.clone();
            for (e, (v, h)) in dx.data.iter_mut().zip(&xh.data).enumerate() {
                let u = (e % dy.cols) / inner;
                *v = gamma[u] * cache.inv_std[u] * (*v - sum_dy[u] / n - h * sum_dy_xh[u] / n);
            }
            dx
        })
        .collect()
}

fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Wᵀ x` for `W` stored `rows × cols`.
fn matvec_t_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (xi, row) in x.iter().zip(w.chunks(cols)) {
        if *xi != 0.0 {
            for (o, wv) in out.iter_mut().zip(row) {
                *o += xi * wv;
            }
        }
    }
}

fn outer_acc(dw: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (ai, row) in a.iter().zip(dw.chunks_mut(cols)) {
        if *ai != 0.0 {
            for (d, bj) in row.iter_mut().zip(b) {
                *d += ai * bj;
            }
        }
    }
}

fn order(t_len: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..t_len).rev())
    } else {
        Box::new(0..t_len)
    }
}

/// Simple recurrent direction: `h_t = tanh(u_t + W_h h_prev)` where `u`
/// already holds the (normalized) input projection.
pub(crate) fn rnn_forward(u: &Matrix, w_h: &[f64], reverse: bool) -> Matrix {
    let h_dim = u.cols;
    let mut h = Matrix::zeros(u.rows, h_dim);
    let mut prev = vec![0.0; h_dim];
    for t in order(u.rows, reverse) {
        let mut a = u.row(t).to_vec();
        matvec_acc(w_h, &prev, &mut a);
        for v in a.iter_mut() {
            *v = v.tanh();
        }
        h.row_mut(t).copy_from_slice(&a);
        prev = a;
    }
    h
}

/// Returns `dL/du`; accumulates `dW_h`.
pub(crate) fn rnn_backward(h: &Matrix, dh_out: &Matrix, w_h: &[f64], reverse: bool, dw_h: &mut [f64]) -> Matrix {
    let h_dim = h.cols;
    let t_len = h.rows;
    let mut du = Matrix::zeros(t_len, h_dim);
    let mut carry = vec![0.0; h_dim];
    let zeros = vec![0.0; h_dim];
    // walk opposite to the forward recurrence
    for t in order(t_len, !reverse) {
        let prev_t = if reverse { t + 1 } else { t.wrapping_sub(1) };
        let prev: &[f64] = if prev_t < t_len { h.row(prev_t) } else { &zeros };
        let mut da = vec![0.0; h_dim];
        for k in 0..h_dim {
            let dh = dh_out.get(t, k) + carry[k];
            let hv = h.get(t, k);
            da[k] = dh * (1.0 - hv * hv);
        }
        outer_acc(dw_h, &da, prev);
        carry.iter_mut().for_each(|c| *c = 0.0);
        matvec_t_acc(w_h, &da, &mut carry);
        du.row_mut(t).copy_from_slice(&da);
    }
    du
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-step LSTM state kept for backpropagation. Gate blocks are
/// `[input, forget, cell, output]`, each `H` wide.
#[derive(Debug, Clone)]
pub(crate) struct LstmTrace {
    pub gates: Matrix,
    pub cell: Matrix,
    pub hidden: Matrix,
}

pub(crate) fn lstm_forward(u: &Matrix, w_h: &[f64], reverse: bool) -> LstmTrace {
    let h_dim = u.cols / 4;
    let t_len = u.rows;
    let mut gates = Matrix::zeros(t_len, 4 * h_dim);
    let mut cell = Matrix::zeros(t_len, h_dim);
    let mut hidden = Matrix::zeros(t_len, h_dim);
    let mut h_prev = vec![0.0; h_dim];
    let mut c_prev = vec![0.0; h_dim];
    for t in order(t_len, reverse) {
        let mut z = u.row(t).to_vec();
        matvec_acc(w_h, &h_prev, &mut z);
        for k in 0..h_dim {
            z[k] = sigmoid(z[k]);
            z[h_dim + k] = sigmoid(z[h_dim + k]);
            z[2 * h_dim + k] = z[2 * h_dim + k].tanh();
            z[3 * h_dim + k] = sigmoid(z[3 * h_dim + k]);
        }
        for k in 0..h_dim {
            let c = z[h_dim + k] * c_prev[k] + z[k] * z[2 * h_dim + k];
            c_prev[k] = c;
            h_prev[k] = z[3 * h_dim + k] * c.tanh();
        }
        gates.row_mut(t).copy_from_slice(&z);
        cell.row_mut(t).copy_from_slice(&c_prev);
        hidden.row_mut(t).copy_from_slice(&h_prev);
    }
    LstmTrace { gates, cell, hidden }
}

/// Returns `dL/du` (pre-activation gate gradients); accumulates `dW_h`.
pub(crate) fn lstm_backward(tr: &LstmTrace, dh_out: &Matrix, w_h: &[f64], reverse: bool, dw_h: &mut [f64]) -> Matrix {
    let h_dim = tr.hidden.cols;
    let t_len = tr.hidden.rows;
    let mut du = Matrix::zeros(t_len, 4 * h_dim);
    let mut dh_carry = vec![0.0; h_dim];
    let mut dc_carry = vec![0.0; h_dim];
    let zeros = vec![0.0; h_dim];
    for t in order(t_len, !reverse) {
        let prev_t = if reverse { t + 1 } else { t.wrapping_sub(1) };
        let (h_prev, c_prev): (&[f64], &[f64]) = if prev_t < t_len {
            (tr.hidden.row(prev_t), tr.cell.row(prev_t))
        } else {
            (&zeros, &zeros)
        };
        let g = tr.gates.row(t);
        let c = tr.cell.row(t);
        let mut dz = vec![0.0; 4 * h_dim];
        for k in 0..h_dim {
            let (i, f, gg, o) = (g[k], g[h_dim + k], g[2 * h_dim + k], g[3 * h_dim + k]);
            let tc = c[k].tanh();
            let dh = dh_out.get(t, k) + dh_carry[k];
            let d_o = dh * tc;
            let dc = dc_carry[k] + dh * o * (1.0 - tc * tc);
            dz[k] = dc * gg * i * (1.0 - i);
            dz[h_dim + k] = dc * c_prev[k] * f * (1.0 - f);
            dz[2 * h_dim + k] = dc * i * (1.0 - gg * gg);
            dz[3 * h_dim + k] = d_o * o * (1.0 - o);
            dc_carry[k] = dc * f;
        }
        outer_acc(dw_h, &dz, h_prev);
        dh_carry.iter_mut().for_each(|c| *c = 0.0);
        matvec_t_acc(w_h, &dz, &mut dh_carry);
        du.row_mut(t).copy_from_slice(&dz);
    }
    du
}
