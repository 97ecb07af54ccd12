use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `2 × D`, orthonormal rows (a zero row if the data has rank < 2).
    pub components: Matrix,
    /// `N × 2`
    pub coords: Matrix,
    pub explained_variance: [f64; 2],
}

impl Pca {
    pub fn reconstruct(&self) -> Matrix {
        let mut out = Matrix::zeros(self.coords.rows, self.mean.len());
        for i in 0..out.rows {
            let row = out.row_mut(i);
            row.copy_from_slice(&self.mean);
            for c in 0..2 {
                let a = self.coords.get(i, c);
                for (v, w) in row.iter_mut().zip(self.components.row(c)) {
                    *v += a * w;
                }
            }
        }
        out
    }
}

/// Top-2 principal components. Solves the smaller of the `D × D` scatter
/// and `N × N` Gram eigenproblems. Signs are fixed so each component's
/// largest-magnitude coordinate is positive.
pub fn pca_2d(x: &Matrix) -> Result<Pca> {
    let (n, d) = (x.rows, x.cols);
    if n == 0 || d == 0 {
        return Err(Error::EmptyInput("PCA over no points".into()));
    }
    let mut mean = vec![0.0; d];
    for r in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let xc = DMatrix::from_fn(n, d, |i, j| x.get(i, j) - mean[j]);

    let mut components = Matrix::zeros(2, d);
    let mut variance = [0.0; 2];
    if d <= n {
        let scatter = xc.transpose() * &xc;
        let eig = SymmetricEigen::new(scatter);
        let order = top_two(eig.eigenvalues.as_slice());
        for (c, &idx) in order.iter().enumerate() {
            if let Some(i) = idx {
                variance[c] = eig.eigenvalues[i].max(0.0) / n as f64;
                for j in 0..d {
                    components.set(c, j, eig.eigenvectors[(j, i)]);
                }
            }
        }
    } else {
        let gram = &xc * xc.transpose();
        let eig = SymmetricEigen::new(gram);
        let order = top_two(eig.eigenvalues.as_slice());
        for (c, &idx) in order.iter().enumerate() {
            if let Some(i) = idx {
                let lambda = eig.eigenvalues[i];
                if lambda <= 1e-12 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE) {
                    continue;
                }
                variance[c] = lambda / n as f64;
                let u = eig.eigenvectors.column(i);
                let v = xc.transpose() * u / lambda.sqrt();
                for j in 0..d {
                    components.set(c, j, v[j]);
                }
            }
        }
    }
    for c in 0..2 {
        let row = components.row_mut(c);
        let big = row
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if big < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let mut coords = Matrix::zeros(n, 2);
    for i in 0..n {
        for c in 0..2 {
            let s: f64 = (0..d).map(|j| xc[(i, j)] * components.get(c, j)).sum();
            coords.set(i, c, s);
        }
    }
    Ok(Pca {
        mean,
        components,
        coords,
        explained_variance: variance,
    })
}

/// Indices of the two largest eigenvalues, largest first.
fn top_two(vals: &[f64]) -> [Option<usize>; 2] {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    [idx.first().copied(), idx.get(1).copied()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    /// `None` picks `max(n / early_exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iters: 1000,
            learning_rate: None,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tsne {
    pub coords: Matrix,
    /// KL(P‖Q) of the initial layout.
    pub kl_initial: f64,
    pub kl_final: f64,
}

/// Conditional affinities with per-point bandwidths calibrated by
/// bisection to the target perplexity, symmetrized and normalized.
fn input_affinities(x: &Matrix, perplexity: f64) -> Vec<f64> {
    let n = x.rows;
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d2[i * n + j] = v;
            d2[j * n + i] = v;
        }
    }
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &d2[i * n..(i + 1) * n];
        let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
        // shift by the nearest distance for numerical range
        let dmin = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
        let mut probs = vec![0.0; n];
        for _ in 0..100 {
            let mut sum = 0.0;
            for j in 0..n {
                probs[j] = if j == i { 0.0 } else { (-(row[j] - dmin) * beta).exp() };
                sum += probs[j];
            }
            let mut h = 0.0;
            for j in 0..n {
                probs[j] /= sum;
                if probs[j] > 0.0 {
                    h -= probs[j] * probs[j].ln();
                }
            }
            if (h - target).abs() < 1e-5 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        p[i * n..(i + 1) * n].copy_from_slice(&probs);
    }
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
        sym[i * n + i] = 0.0;
    }
    sym
}

/// Student-t output affinities (unnormalized kernel and its sum).
fn output_kernel(y: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut num = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    (num, sum)
}

fn kl(p: &[f64], y: &[f64], n: usize) -> f64 {
    let (num, sum) = output_kernel(y, n);
    let mut out = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let q = (num[i * n + j] / sum).max(1e-12);
                out += p[i * n + j] * (p[i * n + j] / q).ln();
            }
        }
    }
    out
}

/// Exact t-SNE with momentum, per-coordinate gains and early exaggeration.
pub fn tsne_2d(x: &Matrix, cfg: &TsneConfig) -> Result<Tsne> {
    let n = x.rows;
    if n < 3 {
        return Err(invalid("t-SNE needs at least 3 points"));
    }
    if !(cfg.perplexity > 0.0 && cfg.perplexity < n as f64) {
        return Err(invalid(format!("perplexity {} must be in (0, {n})", cfg.perplexity)));
    }
    if x.iter_rows().all(|r| r == x.row(0)) {
        return Err(invalid("t-SNE input points are all identical"));
    }
    let p = input_affinities(x, cfg.perplexity);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid deviation");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let kl_initial = kl(&p, &y, n);
    let lr = cfg
        .learning_rate
        .unwrap_or_else(|| (n as f64 / cfg.early_exaggeration / 4.0).max(50.0));
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut grad = vec![0.0; 2 * n];
    for it in 0..cfg.iters {
        let exag = if it < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let momentum = if it < cfg.exaggeration_iters { 0.5 } else { 0.8 };
        let (num, sum) = output_kernel(&y, n);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let m = 4.0 * (exag * p[i * n + j] - w / sum) * w;
                grad[2 * i] += m * (y[2 * i] - y[2 * j]);
                grad[2 * i + 1] += m * (y[2 * i + 1] - y[2 * j + 1]);
            }
        }
        for c in 0..2 * n {
            gains[c] = if (grad[c] > 0.0) != (velocity[c] > 0.0) {
                gains[c] + 0.2
            } else {
                (gains[c] * 0.8).max(0.01)
            };
            velocity[c] = momentum * velocity[c] - lr * gains[c] * grad[c];
            y[c] += velocity[c];
        }
        // keep the layout centered
        for d in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + d]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + d] -= mean);
        }
    }
    let kl_final = kl(&p, &y, n);
    Ok(Tsne {
        coords: Matrix::from_vec(n, 2, y),
        kl_initial,
        kl_final,
    })
}
