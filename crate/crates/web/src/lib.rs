//! WebAssembly bindings for the demo page. Each export takes plain numbers
//! or strings and returns a JSON document; the `*_json` functions hold the
//! logic so they can be tested natively.

use ctcprobe::acoustic::{synthesize_corpus, SynthConfig};
use ctcprobe::alphabet::Alphabet;
use ctcprobe::clustering::{kmeans, pca_2d, KMeansConfig};
use ctcprobe::ctc::{ctc_brute_force, ctc_loss_and_grad, greedy_decode, BRUTE_FORCE_CAP};
use ctcprobe::tensor::{log_softmax_in_place, Matrix};
use serde::Serialize;
use wasm_bindgen::prelude::*;

type DemoResult = Result<String, String>;

fn to_json<T: Serialize>(v: &T) -> DemoResult {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SpectrogramView {
    frames: usize,
    bins: usize,
    /// Row-major magnitudes.
    values: Vec<f32>,
    max_value: f32,
    /// Phone name per frame.
    phones: Vec<String>,
    transcript: String,
}

/// One synthetic utterance.
pub fn spectrogram_json(noise: f64, inventory: usize, seed: u64) -> DemoResult {
    let mut cfg = SynthConfig::with_inventory(inventory, seed);
    cfg.noise_stddev = noise;
    let utt = synthesize_corpus(&cfg, 1).map_err(|e| e.to_string())?.remove(0);
    let inv = cfg.inventory();
    let m = &utt.spectrogram.frames;
    let values: Vec<f32> = m.data.iter().map(|&v| v as f32).collect();
    let phones = (0..m.rows)
        .map(|t| utt.phone_at(t).map(|p| inv.phone(p).to_string()).unwrap_or_default())
        .collect();
    to_json(&SpectrogramView {
        frames: m.rows,
        bins: m.cols,
        max_value: values.iter().copied().fold(0.0, f32::max),
        values,
        phones,
        transcript: utt.transcript,
    })
}

#[derive(Serialize)]
struct CtcView {
    symbols: Vec<String>,
    loss: f64,
    probability: f64,
    /// Present when `S^T` is small enough to enumerate.
    brute_force_probability: Option<f64>,
    /// `posterior[t][k]`: share of aligned paths emitting symbol `k` at `t`.
    posterior: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    greedy: String,
}

/// Random per-frame distributions over blank plus the letters of `text`,
/// with the CTC loss and the per-frame alignment posterior for `text`.
/// `sharpness` scales the random logits.
pub fn ctc_json(text: &str, frames: usize, sharpness: f64, seed: u64) -> DemoResult {
    let mut letters: Vec<char> = text.chars().filter(|c| c.is_ascii_lowercase()).collect();
    if letters.is_empty() {
        return Err("type at least one letter a-z".into());
    }
    let target: Vec<char> = letters.clone();
    letters.sort_unstable();
    letters.dedup();
    let alphabet = Alphabet::new(letters).map_err(|e| e.to_string())?;
    let labels = alphabet.encode(&target.iter().collect::<String>()).map_err(|e| e.to_string())?;
    let s = alphabet.len();
    // xorshift keeps the demo free of extra dependencies
    let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    let mut uniform = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut lp = Matrix::zeros(frames, s);
    for t in 0..frames {
        let row = lp.row_mut(t);
        row.iter_mut().for_each(|v| *v = sharpness * (2.0 * uniform() - 1.0));
        log_softmax_in_place(row);
    }
    let (loss, grad) = ctc_loss_and_grad(&lp, &labels).map_err(|e| e.to_string())?;
    let probs = Matrix::from_vec(frames, s, lp.data.iter().map(|v| v.exp()).collect());
    let brute = ctc_brute_force(&probs, &labels, BRUTE_FORCE_CAP).ok();
    let posterior = (0..frames)
        .map(|t| (0..s).map(|k| probs.get(t, k) - grad.get(t, k)).collect())
        .collect();
    let greedy = greedy_decode(&lp, &alphabet);
    to_json(&CtcView {
        symbols: (0..s)
            .map(|k| alphabet.char_of(k).map_or("_".into(), |c| c.to_string()))
            .collect(),
        loss,
        probability: (-loss).exp(),
        brute_force_probability: brute,
        posterior,
        probs: probs.iter_rows().map(|r| r.to_vec()).collect(),
        greedy: alphabet.decode(&greedy.collapsed),
    })
}

#[derive(Serialize)]
struct ClusterView {
    /// PCA coordinates of every frame, then of every centroid.
    points: Vec<[f64; 2]>,
    centroids: Vec<[f64; 2]>,
    assignment: Vec<usize>,
    phones: Vec<String>,
    inertia_history: Vec<f64>,
    explained_variance: [f64; 2],
}

/// k-means over the frames of a few synthetic utterances, shown in the
/// frames' own top-2 PCA plane.
pub fn cluster_json(utterances: usize, k: usize, noise: f64, seed: u64) -> DemoResult {
    let mut cfg = SynthConfig::with_inventory(12, seed);
    cfg.noise_stddev = noise;
    let utts = synthesize_corpus(&cfg, utterances.max(1)).map_err(|e| e.to_string())?;
    let inv = cfg.inventory();
    let mut data = Vec::new();
    let mut phones = Vec::new();
    for u in &utts {
        data.extend_from_slice(&u.spectrogram.frames.data);
        phones.extend((0..u.num_frames()).map(|t| u.phone_at(t).map(|p| inv.phone(p).to_string()).unwrap_or_default()));
    }
    let x = Matrix::from_vec(phones.len(), cfg.freq_bins, data);
    let km = kmeans(
        &x,
        &KMeansConfig {
            k,
            seed,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let pca = pca_2d(&x).map_err(|e| e.to_string())?;
    let project = |row: &[f64]| -> [f64; 2] {
        let mut out = [0.0; 2];
        for (c, o) in out.iter_mut().enumerate() {
            *o = row
                .iter()
                .zip(&pca.mean)
                .zip(pca.components.row(c))
                .map(|((v, m), w)| (v - m) * w)
                .sum();
        }
        out
    };
    to_json(&ClusterView {
        points: x.iter_rows().map(project).collect(),
        centroids: km.centroids.iter_rows().map(project).collect(),
        assignment: km.assignment,
        phones,
        inertia_history: km.inertia_history,
        explained_variance: pca.explained_variance,
    })
}

fn js(r: DemoResult) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn synth_spectrogram(noise: f64, inventory: usize, seed: u32) -> Result<String, JsError> {
    js(spectrogram_json(noise, inventory, seed.into()))
}

#[wasm_bindgen]
pub fn ctc_alignment(text: &str, frames: usize, sharpness: f64, seed: u32) -> Result<String, JsError> {
    js(ctc_json(text, frames, sharpness, seed.into()))
}

#[wasm_bindgen]
pub fn cluster_frames(utterances: usize, k: usize, noise: f64, seed: u32) -> Result<String, JsError> {
    js(cluster_json(utterances, k, noise, seed.into()))
}
