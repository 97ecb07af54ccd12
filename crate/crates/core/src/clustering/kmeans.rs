use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::par;
use crate::tensor::{gemm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the relative inertia improvement falls below this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 500,
            seed: 0,
            max_iter: 100,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Matrix,
    pub assignment: Vec<usize>,
    /// Inertia after every assignment step, starting with the seeding.
    pub inertia_history: Vec<f64>,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().expect("at least one assignment")
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance from the nearest chosen center.
fn seed_centroids(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = x.rows;
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            // guard against landing on an already-covered point through rounding
            if d2[pick] == 0.0 {
                pick = (0..n).rev().find(|&i| d2[i] > 0.0).expect("positive mass");
            }
            pick
        } else {
            // every point coincides with a center: take unchosen indices in order
            (0..n).find(|i| !chosen.contains(i)).expect("k ≤ n")
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(next)));
        }
    }
    let mut c = Matrix::zeros(k, x.cols);
    for (j, &i) in chosen.iter().enumerate() {
        c.row_mut(j).copy_from_slice(x.row(i));
    }
    c
}

const ASSIGN_CHUNK: usize = 256;

/// Nearest centroid per point (ties to the lowest index) and the exact
/// squared distance to it.
fn assign(x: &Matrix, c: &Matrix) -> (Vec<usize>, Vec<f64>) {
    let c_norm: Vec<f64> = c.iter_rows().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let n_chunks = x.rows.div_ceil(ASSIGN_CHUNK);
    let parts = par::map_range(n_chunks, |ci| {
        let lo = ci * ASSIGN_CHUNK;
        let hi = (lo + ASSIGN_CHUNK).min(x.rows);
        let rows = hi - lo;
        let mut dots = vec![0.0; rows * c.rows];
        gemm(rows, x.cols, c.rows, 1.0, &x.data[lo * x.cols..hi * x.cols], false, &c.data, true, 0.0, &mut dots);
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            // ‖x‖² is constant per row, so ‖c‖² − 2 x·c ranks the centroids
            let mut best = 0;
            let mut best_v = f64::INFINITY;
            for (j, cn) in c_norm.iter().enumerate() {
                let v = cn - 2.0 * dots[r * c.rows + j];
                if v < best_v {
                    best_v = v;
                    best = j;
                }
            }
            out.push((best, sq_dist(x.row(lo + r), c.row(best))));
        }
        out
    });
    parts.into_iter().flatten().unzip()
}

fn update(x: &Matrix, assignment: &[usize], dist: &[f64], k: usize) -> Matrix {
    let mut c = Matrix::zeros(k, x.cols);
    let mut counts = vec![0usize; k];
    for (i, &a) in assignment.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in c.row_mut(a).iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    for (j, &n) in counts.iter().enumerate() {
        if n > 0 {
            c.row_mut(j).iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
    if !empty.is_empty() {
        // reseed each empty cluster at the point farthest from its centroid
        let mut by_dist: Vec<usize> = (0..x.rows).collect();
        by_dist.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
        for (j, &p) in empty.iter().zip(&by_dist) {
            c.row_mut(*j).copy_from_slice(x.row(p));
        }
    }
    c
}

/// Lloyd's algorithm from k-means++ seeding.
pub fn kmeans(x: &Matrix, cfg: &KMeansConfig) -> Result<KMeans> {
    if cfg.k == 0 {
        return Err(invalid("k must be ≥ 1"));
    }
    if x.rows == 0 {
        return Err(Error::EmptyInput("k-means over no points".into()));
    }
    if cfg.k > x.rows {
        return Err(invalid(format!("k = {} exceeds {} points", cfg.k, x.rows)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = seed_centroids(x, cfg.k, &mut rng);
    let (mut assignment, mut dist) = assign(x, &centroids);
    let mut history = vec![dist.iter().sum::<f64>()];
    for _ in 0..cfg.max_iter {
        let prev = *history.last().expect("non-empty");
        if prev == 0.0 {
            break;
        }
        centroids = update(x, &assignment, &dist, cfg.k);
        let (a, d) = assign(x, &centroids);
        let inertia: f64 = d.iter().sum();
        let changed = a != assignment;
        assignment = a;
        dist = d;
        history.push(inertia);
        if !changed || (prev - inertia) / prev < cfg.tol {
            break;
        }
    }
    Ok(KMeans {
        centroids,
        assignment,
        inertia_history: history,
    })
}
