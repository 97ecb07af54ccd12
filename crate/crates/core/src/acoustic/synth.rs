//! Deterministic synthetic corpus rendered directly in spectrogram space.
//!
//! Every phone owns a formant template (a sum of Gaussian bumps over the
//! frequency bins). An utterance is a random phone sequence; each phone
//! occupies a random number of frames of its template plus white noise, and
//! its transcript spells the phones with a prefix-free character code.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{PhoneSegment, Spectrogram, Utterance};
use crate::alphabet::Alphabet;
use crate::error::{invalid, Result};
use crate::phoneset::{PhoneEntry, PhoneInventory, SoundClass};
use crate::tensor::Matrix;

/// Noise level at or below which raw frames of the default 20-phone
/// layout stay separable: a probe on the input spectrogram reaches 90%.
pub const SEPARABLE_NOISE_STDDEV: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub center_bin: f64,
    pub bandwidth: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub phone_inventory_size: usize,
    /// Inclusive range.
    pub phones_per_utterance: (usize, usize),
    /// Inclusive range of phones grouped into one space-delimited word.
    pub phones_per_word: (usize, usize),
    /// Inclusive range of frames per phone segment.
    pub segment_frames: (usize, usize),
    pub noise_stddev: f64,
    pub freq_bins: usize,
    pub formant_table: Vec<Vec<Formant>>,
    pub phone_to_chars: Vec<String>,
    pub phone_classes: Vec<SoundClass>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::with_inventory(20, 0)
    }
}

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

impl SynthConfig {
    /// Default layout for `n` phones: phones are split into six contiguous
    /// blocks, one per sound class. Phones of a class share a broad low
    /// formant and differ by a narrow phone-specific one.
    pub fn with_inventory(n: usize, seed: u64) -> Self {
        let n = n.max(1);
        let mut formant_table = Vec::with_capacity(n);
        let mut phone_classes = Vec::with_capacity(n);
        for p in 0..n {
            let class_idx = p * 6 / n;
            phone_classes.push(SoundClass::ALL[class_idx]);
            formant_table.push(vec![
                Formant {
                    center_bin: 10.0 + 20.0 * class_idx as f64,
                    bandwidth: 5.0,
                    amplitude: 1.0,
                },
                Formant {
                    center_bin: 8.0 + 145.0 * p as f64 / n as f64,
                    bandwidth: 2.5,
                    amplitude: 0.8,
                },
            ]);
        }
        SynthConfig {
            phone_inventory_size: n,
            phones_per_utterance: (4, 8),
            phones_per_word: (2, 3),
            segment_frames: (10, 16),
            noise_stddev: 0.2,
            freq_bins: 161,
            formant_table,
            phone_to_chars: default_codes(n),
            phone_classes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.phone_inventory_size;
        if n == 0 {
            return Err(invalid("phone inventory must be non-empty"));
        }
        if self.formant_table.len() != n || self.phone_to_chars.len() != n || self.phone_classes.len() != n {
            return Err(invalid(format!(
                "formant table ({}), codes ({}) and classes ({}) must each cover {n} phones",
                self.formant_table.len(),
                self.phone_to_chars.len(),
                self.phone_classes.len()
            )));
        }
        for (name, (lo, hi)) in [
            ("phones_per_utterance", self.phones_per_utterance),
            ("phones_per_word", self.phones_per_word),
            ("segment_frames", self.segment_frames),
        ] {
            if lo == 0 || lo > hi {
                return Err(invalid(format!("{name}: invalid range {lo}..={hi}")));
            }
        }
        if !(self.noise_stddev >= 0.0 && self.noise_stddev.is_finite()) {
            return Err(invalid("noise_stddev must be finite and ≥ 0"));
        }
        if self.freq_bins == 0 {
            return Err(invalid("freq_bins must be positive"));
        }
        let alphabet = Alphabet::english();
        for (i, code) in self.phone_to_chars.iter().enumerate() {
            let len = code.chars().count();
            if !(1..=2).contains(&len) {
                return Err(invalid(format!("phone {i}: code {code:?} must have 1 or 2 characters")));
            }
            if code.chars().any(|c| c == ' ' || !alphabet.contains(c)) {
                return Err(invalid(format!("phone {i}: code {code:?} uses a non-letter")));
            }
            for (j, other) in self.phone_to_chars.iter().enumerate() {
                if i != j && other.starts_with(code.as_str()) {
                    return Err(invalid(format!("codes {code:?} and {other:?} are not prefix-free")));
                }
            }
        }
        Ok(())
    }

    pub fn phone_name(p: usize) -> String {
        format!("p{p:02}")
    }

    /// Inventory of the synthetic phones: no 48-set folding, classes from
    /// `phone_classes`.
    pub fn inventory(&self) -> PhoneInventory {
        let entries = (0..self.phone_inventory_size)
            .map(|p| PhoneEntry {
                phone: Self::phone_name(p),
                reduced48: Self::phone_name(p),
                class: self.phone_classes[p],
                review: false,
            })
            .collect();
        PhoneInventory::new(entries).expect("synthetic phone names are unique")
    }

    /// Noise-free spectrum of phone `p`.
    pub fn template(&self, p: usize) -> Vec<f64> {
        (0..self.freq_bins)
            .map(|bin| {
                let v: f64 = self.formant_table[p]
                    .iter()
                    .map(|f| {
                        let z = (bin as f64 - f.center_bin) / f.bandwidth;
                        f.amplitude * (-0.5 * z * z).exp()
                    })
                    .sum();
                v as f32 as f64
            })
            .collect()
    }

    /// Parses a transcript back into its phone sequence.
    pub fn decode_transcript(&self, text: &str) -> Result<Vec<usize>> {
        let mut phones = Vec::new();
        for word in text.split(' ') {
            let mut rest = word;
            while !rest.is_empty() {
                let p = self
                    .phone_to_chars
                    .iter()
                    .position(|code| rest.starts_with(code.as_str()))
                    .ok_or_else(|| invalid(format!("no phone code matches {rest:?}")))?;
                phones.push(p);
                rest = &rest[self.phone_to_chars[p].len()..];
            }
        }
        Ok(phones)
    }
}

/// Single letters for the first phones, then two-letter codes whose first
/// letter is never a single-letter code.
fn default_codes(n: usize) -> Vec<String> {
    let singles = n.min(12);
    let mut codes: Vec<String> = LETTERS[..singles].iter().map(|&c| (c as char).to_string()).collect();
    let mut prefix = 12;
    let mut second = 0;
    while codes.len() < n {
        codes.push(format!("{}{}", LETTERS[prefix] as char, LETTERS[second] as char));
        second += 1;
        if second == LETTERS.len() {
            second = 0;
            prefix += 1;
        }
    }
    codes
}

/// Phone identities come from successive shuffles of the whole inventory,
/// so every phone appears equally often up to the last partial shuffle.
/// Consecutive draws never repeat a phone.
struct PhoneBag {
    rng: ChaCha8Rng,
    pending: Vec<usize>,
    last: Option<usize>,
    n: usize,
}

impl PhoneBag {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        PhoneBag {
            rng,
            pending: Vec::new(),
            last: None,
            n,
        }
    }

    fn next(&mut self) -> usize {
        if self.pending.is_empty() {
            self.pending = (0..self.n).collect();
            self.pending.shuffle(&mut self.rng);
            // drawn from the back; keep the boundary free of repeats
            let back = self.pending.len() - 1;
            if self.n > 1 && Some(self.pending[back]) == self.last {
                self.pending.swap(back, 0);
            }
        }
        let p = self.pending.pop().expect("refilled");
        self.last = Some(p);
        p
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

/// Renders `n_utterances` utterances. Utterance `i` depends only on the
/// config and `i`, so shorter corpora are prefixes of longer ones.
pub fn synthesize_corpus(cfg: &SynthConfig, n_utterances: usize) -> Result<Vec<Utterance>> {
    cfg.validate()?;
    let templates: Vec<Vec<f64>> = (0..cfg.phone_inventory_size).map(|p| cfg.template(p)).collect();
    let noise = Normal::new(0.0, cfg.noise_stddev).map_err(|e| invalid(e.to_string()))?;
    let mut bag = PhoneBag::new(cfg.phone_inventory_size, cfg.seed);
    let mut out = Vec::with_capacity(n_utterances);
    for i in 0..n_utterances {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);

        let n_phones = uniform_in(&mut rng, cfg.phones_per_utterance);
        let phones: Vec<usize> = (0..n_phones).map(|_| bag.next()).collect();

        let mut segments = Vec::with_capacity(n_phones);
        let mut start = 0;
        for &p in &phones {
            let len = uniform_in(&mut rng, cfg.segment_frames);
            segments.push(PhoneSegment {
                phone: p,
                start_frame: start,
                end_frame: start + len,
            });
            start += len;
        }

        let mut frames = Matrix::zeros(start, cfg.freq_bins);
        for seg in &segments {
            for t in seg.start_frame..seg.end_frame {
                for (dst, &base) in frames.row_mut(t).iter_mut().zip(&templates[seg.phone]) {
                    let v = if cfg.noise_stddev > 0.0 {
                        base + noise.sample(&mut rng)
                    } else {
                        base
                    };
                    *dst = v.max(0.0) as f32 as f64;
                }
            }
        }

        let mut words: Vec<String> = Vec::new();
        let mut k = 0;
        while k < phones.len() {
            let len = uniform_in(&mut rng, cfg.phones_per_word).min(phones.len() - k);
            words.push(phones[k..k + len].iter().map(|&p| cfg.phone_to_chars[p].as_str()).collect());
            k += len;
        }

        out.push(Utterance {
            id: format!("synth{i:05}"),
            spectrogram: Spectrogram {
                frames,
                frame_shift_ms: 10.0,
                window_ms: 20.0,
                sample_rate_hz: super::SAMPLE_RATE_HZ,
            },
            segments,
            transcript: words.join(" "),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_prefix_free() {
        let cfg = SynthConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.phone_to_chars.len(), 20);
        let big = SynthConfig::with_inventory(60, 1);
        big.validate().unwrap();
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SynthConfig::default();
        let a = synthesize_corpus(&cfg, 5).unwrap();
        let b = synthesize_corpus(&cfg, 5).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.seed = 99;
        assert_ne!(a, synthesize_corpus(&other, 5).unwrap());
        assert_eq!(a[..3], synthesize_corpus(&cfg, 3).unwrap()[..]);
    }

    #[test]
    fn noiseless_frames_equal_templates() {
        let mut cfg = SynthConfig::with_inventory(2, 3);
        cfg.noise_stddev = 0.0;
        for u in synthesize_corpus(&cfg, 4).unwrap() {
            for s in &u.segments {
                let tpl = cfg.template(s.phone);
                for t in s.start_frame..s.end_frame {
                    assert_eq!(u.spectrogram.frames.row(t), &tpl[..]);
                }
            }
        }
    }

    #[test]
    fn phone_frequencies_near_uniform() {
        let cfg = SynthConfig::default();
        let corpus = synthesize_corpus(&cfg, 100).unwrap();
        let mut counts = [0usize; 20];
        let mut total = 0;
        for u in &corpus {
            for t in 0..u.num_frames() {
                counts[u.phone_at(t).unwrap()] += 1;
                total += 1;
            }
        }
        let uniform = total as f64 / 20.0;
        for (p, &c) in counts.iter().enumerate() {
            let rel = (c as f64 - uniform).abs() / uniform;
            assert!(rel <= 0.20, "phone {p}: {c} frames vs uniform {uniform:.1}");
        }
    }

    #[test]
    fn utterances_are_valid_and_transcripts_decode() {
        let cfg = SynthConfig::default();
        let alphabet = Alphabet::english();
        for u in synthesize_corpus(&cfg, 30).unwrap() {
            u.validate(&alphabet).unwrap();
            assert_eq!(cfg.decode_transcript(&u.transcript).unwrap(), u.phone_sequence());
            assert!(!u.transcript.contains("  "));
        }
    }

    #[test]
    fn rejects_non_prefix_free_codes() {
        let mut cfg = SynthConfig::default();
        cfg.phone_to_chars[1] = "ab".into();
        assert!(cfg.validate().is_err());
    }
}
