//! Connectionist temporal classification: loss, gradient, exhaustive
//! path-sum oracle, the collapse function and greedy per-frame decoding.
//!
//! All matrices are `T × S` with the blank at column 0. The dynamic program
//! runs in log space over the blank-interleaved label sequence
//! `_ l1 _ l2 _ … lL _`; impossible states hold `-inf`.

use serde::{Deserialize, Serialize};

use crate::alphabet::{Alphabet, SymbolCategory, BLANK};
use crate::error::{invalid, Error, Result};
use crate::tensor::{argmax, Matrix};

/// Default cap on `S^T` for [`ctc_brute_force`].
pub const BRUTE_FORCE_CAP: u128 = 1_000_000;

/// `log(exp(a) + exp(b))` with `-inf` as the additive identity.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Merges adjacent repeats, then removes blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != BLANK {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

/// Fewest frames that can emit `labels`: one per label plus a separating
/// blank between equal neighbours.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_labels(labels: &[usize], n_symbols: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(invalid("CTC label sequence must be non-empty"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l == BLANK || l >= n_symbols) {
        return Err(invalid(format!("label {bad} is blank or outside 1..{n_symbols}")));
    }
    Ok(())
}

struct Lattice {
    ext: Vec<usize>,
    alpha: Matrix,
    beta: Matrix,
    log_p: f64,
}

fn lattice(log_probs: &Matrix, labels: &[usize], need_beta: bool) -> Result<Lattice> {
    let (t_len, n_sym) = (log_probs.rows, log_probs.cols);
    check_labels(labels, n_sym)?;
    let required = min_frames(labels);
    if t_len < required {
        return Err(Error::Infeasible {
            labels: labels.len(),
            required,
            frames: t_len,
        });
    }
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(BLANK);
    for &l in labels {
        ext.push(l);
        ext.push(BLANK);
    }
    let n = ext.len();
    let can_skip = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];

    let mut alpha = Matrix::from_vec(t_len, n, vec![f64::NEG_INFINITY; t_len * n]);
    alpha.set(0, 0, log_probs.get(0, ext[0]));
    alpha.set(0, 1, log_probs.get(0, ext[1]));
    for t in 1..t_len {
        for s in 0..n {
            let mut acc = alpha.get(t - 1, s);
            if s >= 1 {
                acc = log_add(acc, alpha.get(t - 1, s - 1));
            }
            if can_skip(s) {
                acc = log_add(acc, alpha.get(t - 1, s - 2));
            }
            if acc != f64::NEG_INFINITY {
                alpha.set(t, s, acc + log_probs.get(t, ext[s]));
            }
        }
    }
    let log_p = log_add(alpha.get(t_len - 1, n - 1), alpha.get(t_len - 1, n - 2));

    let mut beta = Matrix::zeros(0, n);
    if need_beta {
        beta = Matrix::from_vec(t_len, n, vec![f64::NEG_INFINITY; t_len * n]);
        let last = t_len - 1;
        beta.set(last, n - 1, log_probs.get(last, ext[n - 1]));
        beta.set(last, n - 2, log_probs.get(last, ext[n - 2]));
        for t in (0..last).rev() {
            for s in 0..n {
                let mut acc = beta.get(t + 1, s);
                if s + 1 < n {
                    acc = log_add(acc, beta.get(t + 1, s + 1));
                }
                if s + 2 < n && can_skip(s + 2) {
                    acc = log_add(acc, beta.get(t + 1, s + 2));
                }
                if acc != f64::NEG_INFINITY {
                    beta.set(t, s, acc + log_probs.get(t, ext[s]));
                }
            }
        }
    }
    Ok(Lattice { ext, alpha, beta, log_p })
}

/// `−log p(labels | x)` for per-frame log-probabilities.
pub fn ctc_loss(log_probs: &Matrix, labels: &[usize]) -> Result<f64> {
    Ok(-lattice(log_probs, labels, false)?.log_p)
}

/// Loss and its gradient with respect to the pre-softmax logits:
/// `softmax − γ`, where `γ_t(k)` is the posterior mass of label positions
/// carrying symbol `k` at frame `t`.
pub fn ctc_loss_and_grad(log_probs: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let lat = lattice(log_probs, labels, true)?;
    let (t_len, n_sym) = (log_probs.rows, log_probs.cols);
    let mut grad = Matrix::zeros(t_len, n_sym);
    let mut log_gamma = vec![f64::NEG_INFINITY; n_sym];
    for t in 0..t_len {
        log_gamma.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        for (s, &k) in lat.ext.iter().enumerate() {
            let ab = lat.alpha.get(t, s) + lat.beta.get(t, s);
            if ab != f64::NEG_INFINITY {
                log_gamma[k] = log_add(log_gamma[k], ab);
            }
        }
        for (k, g) in grad.row_mut(t).iter_mut().enumerate() {
            let lp = log_probs.get(t, k);
            let gamma = if log_gamma[k] == f64::NEG_INFINITY {
                0.0
            } else {
                // alpha and beta both include the frame-t emission
                (log_gamma[k] - lp - lat.log_p).exp()
            };
            *g = lp.exp() - gamma;
        }
    }
    Ok((-lat.log_p, grad))
}

pub fn ctc_grad(log_probs: &Matrix, labels: &[usize]) -> Result<Matrix> {
    Ok(ctc_loss_and_grad(log_probs, labels)?.1)
}

/// `p(labels | x)` by enumerating all `S^T` paths. Labels longer than any
/// path can emit give 0.
pub fn ctc_brute_force(probs: &Matrix, labels: &[usize], cap: u128) -> Result<f64> {
    let (t_len, n_sym) = (probs.rows, probs.cols);
    let paths = (n_sym as u128).checked_pow(t_len as u32).unwrap_or(u128::MAX);
    if paths > cap {
        return Err(Error::CapExceeded { paths, cap });
    }
    if labels.len() > t_len {
        return Ok(0.0);
    }
    let mut path = vec![0usize; t_len];
    let mut total = 0.0;
    for _ in 0..paths {
        if collapse(&path) == labels {
            total += path.iter().enumerate().map(|(t, &s)| probs.get(t, s)).product::<f64>();
        }
        // odometer increment
        for digit in path.iter_mut().rev() {
            *digit += 1;
            if *digit < n_sym {
                break;
            }
            *digit = 0;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyDecode {
    pub path: Vec<usize>,
    pub collapsed: Vec<usize>,
    pub categories: Vec<SymbolCategory>,
}

impl GreedyDecode {
    pub fn share(&self, cat: SymbolCategory) -> f64 {
        if self.path.is_empty() {
            return 0.0;
        }
        self.categories.iter().filter(|&&c| c == cat).count() as f64 / self.path.len() as f64
    }

    pub fn blank_fraction(&self) -> f64 {
        self.share(SymbolCategory::Blank)
    }
}

/// Per-frame argmax (ties to the lowest index), its collapse, and the
/// blank/space/letter role of every frame's symbol.
pub fn greedy_decode(log_probs: &Matrix, alphabet: &Alphabet) -> GreedyDecode {
    let path: Vec<usize> = log_probs.iter_rows().map(argmax).collect();
    let categories = path.iter().map(|&s| alphabet.category(s)).collect();
    GreedyDecode {
        collapsed: collapse(&path),
        path,
        categories,
    }
}
