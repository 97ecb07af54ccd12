use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::Matrix;

/// Magnitude spectrogram, `T × F`, with `F = fft_size / 2 + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    pub frames: Matrix,
    pub frame_shift_ms: f64,
    pub window_ms: f64,
    pub sample_rate_hz: u32,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.rows
    }

    pub fn num_bins(&self) -> usize {
        self.frames.cols
    }

    pub fn hop_samples(&self) -> usize {
        ms_to_samples(self.frame_shift_ms, self.sample_rate_hz)
    }

    pub fn window_samples(&self) -> usize {
        ms_to_samples(self.window_ms, self.sample_rate_hz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    /// `ln(1 + |X|)` instead of `|X|`.
    pub log_compress: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window_ms: 20.0,
            hop_ms: 10.0,
            log_compress: false,
        }
    }
}

pub(crate) fn ms_to_samples(ms: f64, sample_rate_hz: u32) -> usize {
    (ms * sample_rate_hz as f64 / 1000.0).round() as usize
}

/// Symmetric Hamming window `0.54 − 0.46·cos(2πi/(n−1))`; `n = 1` gives `[1]`.
pub fn hamming_window(n: usize) -> Result<Vec<f64>> {
    match n {
        0 => Err(invalid("hamming window of length 0")),
        1 => Ok(vec![1.0]),
        _ => {
            let denom = (n - 1) as f64;
            Ok((0..n)
                .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / denom).cos())
                .collect())
        }
    }
}

/// Number of analysis frames for a signal of `len` samples.
pub fn num_frames(len: usize, win: usize, hop: usize) -> usize {
    if len < win || hop == 0 {
        0
    } else {
        (len - win) / hop + 1
    }
}

pub fn spectrogram(samples: &[f64], sample_rate_hz: u32, window_ms: f64, hop_ms: f64) -> Result<Spectrogram> {
    spectrogram_with(
        samples,
        sample_rate_hz,
        &StftConfig {
            window_ms,
            hop_ms,
            log_compress: false,
        },
    )
}

/// Short-time DFT magnitudes of Hamming-windowed frames. The FFT size equals
/// the window length, so 20 ms at 16 kHz yields 161 bins.
pub fn spectrogram_with(samples: &[f64], sample_rate_hz: u32, cfg: &StftConfig) -> Result<Spectrogram> {
    if sample_rate_hz == 0 {
        return Err(invalid("sample rate must be positive"));
    }
    let win = ms_to_samples(cfg.window_ms, sample_rate_hz);
    let hop = ms_to_samples(cfg.hop_ms, sample_rate_hz);
    if win == 0 || hop == 0 {
        return Err(invalid("window and hop must span at least one sample"));
    }
    let t = num_frames(samples.len(), win, hop);
    if t == 0 {
        return Err(Error::EmptyInput(format!(
            "{} samples is shorter than one {win}-sample window",
            samples.len()
        )));
    }
    let window = hamming_window(win)?;
    let bins = win / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(win);
    let mut buf = vec![Complex::new(0.0, 0.0); win];
    let mut frames = Matrix::zeros(t, bins);
    for f in 0..t {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (dst, c) in frames.row_mut(f).iter_mut().zip(&buf[..bins]) {
            let mag = c.norm();
            *dst = if cfg.log_compress { mag.ln_1p() } else { mag };
        }
    }
    Ok(Spectrogram {
        frames,
        frame_shift_ms: cfg.hop_ms,
        window_ms: cfg.window_ms,
        sample_rate_hz,
    })
}
