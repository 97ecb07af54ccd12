//! Corpus files are JSON lines: one header object, then one object per
//! utterance with its spectrogram flattened row-major as `f32`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, PhoneSegment, Spectrogram, Utterance};
use crate::error::{Error, Result};
use crate::phoneset::PhoneInventory;
use crate::tensor::Matrix;

pub const CORPUS_FORMAT: &str = "ctcprobe-corpus";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    pub sample_rate_hz: u32,
    pub frame_shift_ms: f64,
    pub window_ms: f64,
    pub freq_bins: usize,
    pub n_utterances: usize,
    pub inventory: PhoneInventory,
}

#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    id: String,
    frames: usize,
    transcript: String,
    /// `(phone, start_frame, end_frame)`
    segments: Vec<(usize, usize, usize)>,
    spectrogram: Vec<f32>,
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let first = corpus.utterances.first();
    let header = CorpusHeader {
        format: CORPUS_FORMAT.into(),
        version: CORPUS_VERSION,
        sample_rate_hz: first.map_or(16000, |u| u.spectrogram.sample_rate_hz),
        frame_shift_ms: first.map_or(10.0, |u| u.spectrogram.frame_shift_ms),
        window_ms: first.map_or(20.0, |u| u.spectrogram.window_ms),
        freq_bins: first.map_or(0, |u| u.spectrogram.num_bins()),
        n_utterances: corpus.utterances.len(),
        inventory: corpus.inventory.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for u in &corpus.utterances {
        let rec = UtteranceRecord {
            id: u.id.clone(),
            frames: u.num_frames(),
            transcript: u.transcript.clone(),
            segments: u.segments.iter().map(|s| (s.phone, s.start_frame, s.end_frame)).collect(),
            spectrogram: u.spectrogram.frames.data.iter().map(|&v| v as f32).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let bad = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header: CorpusHeader = serde_json::from_str(&lines.next().ok_or_else(|| bad("empty file".into()))??)?;
    if header.format != CORPUS_FORMAT || header.version != CORPUS_VERSION {
        return Err(bad(format!("unsupported format {} v{}", header.format, header.version)));
    }
    let mut utterances = Vec::with_capacity(header.n_utterances);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UtteranceRecord = serde_json::from_str(&line)?;
        if rec.spectrogram.len() != rec.frames * header.freq_bins {
            return Err(bad(format!("{}: spectrogram length mismatch", rec.id)));
        }
        utterances.push(Utterance {
            id: rec.id,
            spectrogram: Spectrogram {
                frames: Matrix::from_vec(rec.frames, header.freq_bins, rec.spectrogram.into_iter().map(f64::from).collect()),
                frame_shift_ms: header.frame_shift_ms,
                window_ms: header.window_ms,
                sample_rate_hz: header.sample_rate_hz,
            },
            segments: rec
                .segments
                .into_iter()
                .map(|(phone, start_frame, end_frame)| PhoneSegment {
                    phone,
                    start_frame,
                    end_frame,
                })
                .collect(),
            transcript: rec.transcript,
        });
    }
    if utterances.len() != header.n_utterances {
        return Err(bad(format!("header promises {} utterances, found {}", header.n_utterances, utterances.len())));
    }
    Ok(Corpus {
        inventory: header.inventory,
        utterances,
    })
}
