//! Spectrogram front-end, utterance types, the synthetic corpus and
//! TIMIT-layout import/export.

mod corpus_io;
mod spectrogram;
mod synth;
mod timit;

use serde::{Deserialize, Serialize};

use crate::alphabet::Alphabet;
use crate::error::{invalid, Result};
use crate::phoneset::PhoneInventory;

pub use corpus_io::{read_corpus, write_corpus, CorpusHeader};
pub use spectrogram::{hamming_window, num_frames, spectrogram, spectrogram_with, Spectrogram, StftConfig};
pub use synth::{synthesize_corpus, Formant, SynthConfig, SEPARABLE_NOISE_STDDEV};
pub use timit::{export_timit_dir, import_timit_dir, render_waveform, ImportReport, SAMPLE_RATE_HZ};

/// Frame-aligned phone segment, `[start_frame, end_frame)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneSegment {
    /// Index into the corpus phone inventory.
    pub phone: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub spectrogram: Spectrogram,
    pub segments: Vec<PhoneSegment>,
    pub transcript: String,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.spectrogram.num_frames()
    }

    /// Checks segment ordering and coverage of `[0, T)` and that the
    /// transcript only uses alphabet characters.
    pub fn validate(&self, alphabet: &Alphabet) -> Result<()> {
        let t = self.num_frames();
        let mut cursor = 0;
        for s in &self.segments {
            if s.start_frame >= s.end_frame {
                return Err(invalid(format!("{}: empty segment {s:?}", self.id)));
            }
            if s.start_frame != cursor {
                return Err(invalid(format!(
                    "{}: segment starts at {} but previous ended at {cursor}",
                    self.id, s.start_frame
                )));
            }
            cursor = s.end_frame;
        }
        if cursor != t {
            return Err(invalid(format!("{}: segments end at {cursor}, utterance has {t} frames", self.id)));
        }
        if let Some(c) = self.transcript.chars().find(|&c| !alphabet.contains(c)) {
            return Err(invalid(format!("{}: transcript character {c:?} not in alphabet", self.id)));
        }
        if self.spectrogram.frames.data.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(invalid(format!("{}: spectrogram has negative or non-finite magnitudes", self.id)));
        }
        Ok(())
    }

    /// Phone of the segment containing input frame `t`; frames in a gap take
    /// the nearest segment's phone.
    pub fn phone_at(&self, t: usize) -> Option<usize> {
        let idx = self.segments.partition_point(|s| s.end_frame <= t);
        match self.segments.get(idx) {
            Some(s) if s.start_frame <= t => Some(s.phone),
            next => {
                let prev = idx.checked_sub(1).and_then(|i| self.segments.get(i));
                match (prev, next) {
                    (Some(p), Some(n)) => {
                        if t - (p.end_frame - 1) <= n.start_frame - t {
                            Some(p.phone)
                        } else {
                            Some(n.phone)
                        }
                    }
                    (Some(p), None) => Some(p.phone),
                    (None, Some(n)) => Some(n.phone),
                    (None, None) => None,
                }
            }
        }
    }

    /// Phone indices in segment order.
    pub fn phone_sequence(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.phone).collect()
    }
}

/// Utterances together with the inventory their segment phones index into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub inventory: PhoneInventory,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(Utterance::num_frames).sum()
    }

    /// Deterministic split by [`holdout_mask`]; the held-out side is
    /// returned second.
    pub fn split_holdout(&self, fraction: f64) -> (Corpus, Corpus) {
        let mut train = Vec::new();
        let mut dev = Vec::new();
        for (u, is_dev) in self.utterances.iter().zip(holdout_mask(self.utterances.len(), fraction)) {
            if is_dev {
                dev.push(u.clone());
            } else {
                train.push(u.clone());
            }
        }
        (
            Corpus {
                inventory: self.inventory.clone(),
                utterances: train,
            },
            Corpus {
                inventory: self.inventory.clone(),
                utterances: dev,
            },
        )
    }
}

/// Marks `round(n · fraction)` items as held out, spread evenly by
/// position. At least one item stays on each side when `n > 1` and
/// `fraction > 0`.
pub fn holdout_mask(n: usize, fraction: f64) -> Vec<bool> {
    let mut n_dev = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    if n > 1 && n_dev == 0 && fraction > 0.0 {
        n_dev = 1;
    }
    (0..n)
        .map(|i| n_dev > 0 && (i * n_dev) / n != ((i + 1) * n_dev) / n)
        .collect()
}

/// Label of sub-sampled frame `t`: the phone at input frame
/// `t · subsample_factor + receptive_center_offset`.
pub fn frame_label(utt: &Utterance, t: usize, subsample_factor: usize, receptive_center_offset: usize) -> Result<usize> {
    if subsample_factor == 0 {
        return Err(invalid("subsample factor must be ≥ 1"));
    }
    let idx = t * subsample_factor + receptive_center_offset;
    if idx >= utt.num_frames() {
        return Err(invalid(format!(
            "frame {t} maps to input frame {idx}, utterance {} has {} frames",
            utt.id,
            utt.num_frames()
        )));
    }
    utt.phone_at(idx)
        .ok_or_else(|| invalid(format!("utterance {} has no segments", utt.id)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn utt(segments: &[(usize, usize, usize)]) -> Utterance {
        let t = segments.last().map_or(0, |s| s.2);
        Utterance {
            id: "u".into(),
            spectrogram: Spectrogram {
                frames: Matrix::zeros(t, 3),
                frame_shift_ms: 10.0,
                window_ms: 20.0,
                sample_rate_hz: 16000,
            },
            segments: segments
                .iter()
                .map(|&(phone, start_frame, end_frame)| PhoneSegment {
                    phone,
                    start_frame,
                    end_frame,
                })
                .collect(),
            transcript: String::new(),
        }
    }

    #[test]
    fn identity_mapping_matches_segment_lookup() {
        let u = utt(&[(3, 0, 4), (1, 4, 9), (7, 9, 10)]);
        let want = [3, 3, 3, 3, 1, 1, 1, 1, 1, 7];
        for (t, w) in want.iter().enumerate() {
            assert_eq!(frame_label(&u, t, 1, 0).unwrap(), *w);
        }
        assert!(frame_label(&u, 10, 1, 0).is_err());
    }

    #[test]
    fn single_segment_labels_everything() {
        let u = utt(&[(5, 0, 17)]);
        for factor in 1..5 {
            for t in 0..(17 - 1) / factor + 1 {
                assert_eq!(frame_label(&u, t, factor, 0).unwrap(), 5);
            }
        }
    }

    #[test]
    fn factor_two_matches_brute_force_scan() {
        let u = utt(&[(0, 0, 6), (1, 6, 12)]);
        for t in 0..6 {
            // brute force: walk the segments and find the one holding frame 2t
            let covered = 2 * t;
            let want = u
                .segments
                .iter()
                .find(|s| (s.start_frame..s.end_frame).contains(&covered))
                .unwrap()
                .phone;
            assert_eq!(frame_label(&u, t, 2, 0).unwrap(), want);
        }
    }

    #[test]
    fn gaps_take_nearest_segment() {
        let mut u = utt(&[(1, 0, 3), (2, 7, 10)]);
        u.segments[1].start_frame = 7;
        assert_eq!(u.phone_at(3), Some(1));
        assert_eq!(u.phone_at(4), Some(1));
        assert_eq!(u.phone_at(5), Some(2));
        assert_eq!(u.phone_at(6), Some(2));
    }

    #[test]
    fn validate_rejects_gaps() {
        let a = Alphabet::english();
        assert!(utt(&[(1, 0, 3), (2, 3, 5)]).validate(&a).is_ok());
        let mut u = utt(&[(1, 0, 3), (2, 3, 5)]);
        u.segments[1].start_frame = 4;
        assert!(u.validate(&a).is_err());
    }
}
