//! TIMIT-layout corpora: `<id>.wav` (16-bit PCM, RIFF or NIST SPHERE),
//! `<id>.phn` with lines `start_sample end_sample phone`, and an optional
//! `<id>.txt` with `start end transcript`.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use super::spectrogram::{ms_to_samples, spectrogram_with, StftConfig};
use super::{PhoneSegment, SynthConfig, Utterance};
use crate::alphabet::Alphabet;
use crate::error::{Error, Result};
use crate::phoneset::PhoneInventory;

pub const SAMPLE_RATE_HZ: u32 = 16000;

/// Begin/end silence marker, dropped on import.
const SILENCE: &str = "h#";

#[derive(Debug, Default)]
pub struct ImportReport {
    pub utterances: Vec<Utterance>,
    pub errors: Vec<(PathBuf, String)>,
}

fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn sibling(path: &Path, ext: &str) -> Option<PathBuf> {
    [ext.to_ascii_lowercase(), ext.to_ascii_uppercase()]
        .into_iter()
        .map(|e| path.with_extension(e))
        .find(|p| p.is_file())
}

/// Imports every audio file under `root` that has a phone file next to it.
/// Failures are collected per file and the walk continues.
pub fn import_timit_dir(root: &Path, inventory: &PhoneInventory, alphabet: &Alphabet, stft: &StftConfig) -> Result<ImportReport> {
    if !root.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is not a directory", root.display()),
        )));
    }
    let mut wavs: Vec<PathBuf> = WalkDir::new(root)
        .into_iter()
        .filter_map(|e| e.ok())
        .map(|e| e.into_path())
        .filter(|p| p.is_file() && has_ext(p, "wav"))
        .collect();
    wavs.sort();

    let mut report = ImportReport::default();
    for wav in wavs {
        match import_one(root, &wav, inventory, alphabet, stft) {
            Ok(u) => report.utterances.push(u),
            Err(e) => report.errors.push((wav, e.to_string())),
        }
    }
    Ok(report)
}

fn import_one(root: &Path, wav: &Path, inventory: &PhoneInventory, alphabet: &Alphabet, stft: &StftConfig) -> Result<Utterance> {
    let phn = sibling(wav, "phn").ok_or_else(|| format_err(wav, "no matching .phn file"))?;
    let (samples, rate) = read_audio(wav)?;
    let spec = spectrogram_with(&samples, rate, stft)?;
    let hop = ms_to_samples(stft.hop_ms, rate);
    let win = ms_to_samples(stft.window_ms, rate);
    let t_total = spec.num_frames();

    let mut raw = Vec::new();
    for (lineno, line) in fs::read_to_string(&phn)?.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| format_err(&phn, &format!("line {}: bad sample index {s:?}", lineno + 1)));
        if cols.len() != 3 {
            return Err(format_err(&phn, &format!("line {}: expected 3 columns", lineno + 1)));
        }
        let (start, end, phone) = (parse(cols[0])?, parse(cols[1])?, cols[2]);
        if phone == SILENCE {
            continue;
        }
        let idx = inventory.index_of(phone).ok_or_else(|| format_err(&phn, &format!("unknown phone {phone:?}")))?;
        let start_frame = first_frame_centered_at_or_after(start, hop, win).min(t_total);
        let end_frame = first_frame_centered_at_or_after(end, hop, win).min(t_total);
        if start_frame < end_frame {
            raw.push(PhoneSegment {
                phone: idx,
                start_frame,
                end_frame,
            });
        }
    }
    if raw.is_empty() {
        return Err(format_err(&phn, "no non-silence segments"));
    }
    raw.sort_by_key(|s| s.start_frame);

    // crop to the labelled span and close gaps with the nearest segment
    let first = raw[0].start_frame;
    let last = raw.iter().map(|s| s.end_frame).max().expect("non-empty");
    let probe = Utterance {
        id: String::new(),
        spectrogram: spec.clone(),
        segments: raw,
        transcript: String::new(),
    };
    let mut segments: Vec<PhoneSegment> = Vec::new();
    for t in first..last {
        let phone = probe.phone_at(t).expect("segments present");
        match segments.last_mut() {
            Some(s) if s.phone == phone => s.end_frame = t - first + 1,
            _ => segments.push(PhoneSegment {
                phone,
                start_frame: t - first,
                end_frame: t - first + 1,
            }),
        }
    }
    let mut spectrogram = spec;
    let cols = spectrogram.frames.cols;
    spectrogram.frames.data = spectrogram.frames.data[first * cols..last * cols].to_vec();
    spectrogram.frames.rows = last - first;

    let transcript = match sibling(wav, "txt") {
        Some(txt) => normalize_transcript(&fs::read_to_string(txt)?, alphabet),
        None => String::new(),
    };
    let id = wav
        .strip_prefix(root)
        .unwrap_or(wav)
        .with_extension("")
        .to_string_lossy()
        .replace(std::path::MAIN_SEPARATOR, "/");
    Ok(Utterance {
        id,
        spectrogram,
        segments,
        transcript,
    })
}

/// Smallest frame whose window center `t·hop + win/2` is at or after `sample`.
fn first_frame_centered_at_or_after(sample: usize, hop: usize, win: usize) -> usize {
    let half = win / 2;
    if sample <= half {
        0
    } else {
        (sample - half).div_ceil(hop)
    }
}

fn format_err(path: &Path, msg: &str) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

/// Drops the leading sample range, lowercases and keeps alphabet characters.
fn normalize_transcript(text: &str, alphabet: &Alphabet) -> String {
    let line = text.lines().next().unwrap_or("");
    let mut tokens = line.split_whitespace().peekable();
    for _ in 0..2 {
        if tokens.peek().is_some_and(|t| t.parse::<u64>().is_ok()) {
            tokens.next();
        }
    }
    let words: Vec<String> = tokens
        .map(|w| w.to_lowercase().chars().filter(|&c| c != ' ' && alphabet.contains(c)).collect::<String>())
        .filter(|w| !w.is_empty())
        .collect();
    words.join(" ")
}

fn read_audio(path: &Path) -> Result<(Vec<f64>, u32)> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"NIST_1A") {
        return read_nist(path, &bytes);
    }
    let reader = hound::WavReader::new(std::io::Cursor::new(bytes)).map_err(|e| format_err(path, &e.to_string()))?;
    let spec = reader.spec();
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int || spec.channels != 1 {
        return Err(format_err(path, "expected mono 16-bit PCM"));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| format_err(path, &e.to_string()))?;
    Ok((samples, spec.sample_rate))
}

/// NIST SPHERE header: `NIST_1A\n   1024\n` then `key -type value` lines.
fn read_nist(path: &Path, bytes: &[u8]) -> Result<(Vec<f64>, u32)> {
    let head = String::from_utf8_lossy(&bytes[..bytes.len().min(4096)]);
    let mut lines = head.lines();
    lines.next();
    let header_len: usize = lines
        .next()
        .and_then(|l| l.trim().parse().ok())
        .ok_or_else(|| format_err(path, "bad NIST header size"))?;
    let mut rate = SAMPLE_RATE_HZ;
    let mut big_endian = false;
    for line in lines {
        let cols: Vec<&str> = line.split_whitespace().collect();
        match cols.as_slice() {
            ["end_head", ..] => break,
            ["sample_rate", _, v] => rate = v.parse().map_err(|_| format_err(path, "bad sample_rate"))?,
            ["sample_byte_format", _, v] => big_endian = *v == "10",
            ["sample_n_bytes", _, v] if *v != "2" => return Err(format_err(path, "expected 2-byte samples")),
            ["channel_count", _, v] if *v != "1" => return Err(format_err(path, "expected mono audio")),
            ["sample_coding", _, v] if !v.starts_with("pcm") => {
                return Err(format_err(path, "compressed NIST audio is not supported"))
            }
            _ => {}
        }
    }
    let body = bytes.get(header_len..).ok_or_else(|| format_err(path, "truncated NIST file"))?;
    let samples = body
        .chunks_exact(2)
        .map(|b| {
            let v = if big_endian {
                i16::from_be_bytes([b[0], b[1]])
            } else {
                i16::from_le_bytes([b[0], b[1]])
            };
            v as f64 / 32768.0
        })
        .collect();
    Ok((samples, rate))
}

/// Sample boundary between frames `f − 1` and `f`: halfway between their
/// window centers, so center-containment on import recovers frame `f`.
fn boundary_sample(f: usize, hop: usize, win: usize) -> usize {
    f * hop + win / 2 - hop / 2
}

/// Time-domain rendering of a synthetic utterance: every phone segment is a
/// sum of sinusoids at its formant bin frequencies.
pub fn render_waveform(utt: &Utterance, cfg: &SynthConfig) -> Vec<i16> {
    let hop = utt.spectrogram.hop_samples();
    let win = utt.spectrogram.window_samples();
    let t = utt.num_frames();
    let len = (t - 1) * hop + win;
    let bin_hz = utt.spectrogram.sample_rate_hz as f64 / win as f64;
    let mut out = vec![0i16; len];
    let n_seg = utt.segments.len();
    for (k, seg) in utt.segments.iter().enumerate() {
        let start = if k == 0 { 0 } else { boundary_sample(seg.start_frame, hop, win) };
        let end = if k + 1 == n_seg { len } else { boundary_sample(seg.end_frame, hop, win) };
        let formants = &cfg.formant_table[seg.phone];
        for (n, dst) in out.iter_mut().enumerate().take(end).skip(start) {
            let v: f64 = formants
                .iter()
                .map(|f| f.amplitude * (2.0 * PI * f.center_bin * bin_hz * n as f64 / utt.spectrogram.sample_rate_hz as f64).sin())
                .sum();
            *dst = (v * 8000.0 / formants.len().max(1) as f64).round() as i16;
        }
    }
    out
}

/// Writes a synthetic corpus in TIMIT layout under `dir`.
pub fn export_timit_dir(utterances: &[Utterance], inventory: &PhoneInventory, cfg: &SynthConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for utt in utterances {
        let samples = render_waveform(utt, cfg);
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: utt.spectrogram.sample_rate_hz,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let wav_path = dir.join(format!("{}.wav", utt.id));
        let mut w = hound::WavWriter::create(&wav_path, spec).map_err(|e| format_err(&wav_path, &e.to_string()))?;
        for s in &samples {
            w.write_sample(*s).map_err(|e| format_err(&wav_path, &e.to_string()))?;
        }
        w.finalize().map_err(|e| format_err(&wav_path, &e.to_string()))?;

        let hop = utt.spectrogram.hop_samples();
        let win = utt.spectrogram.window_samples();
        let mut phn = BufWriter::new(fs::File::create(dir.join(format!("{}.phn", utt.id)))?);
        let n_seg = utt.segments.len();
        for (k, seg) in utt.segments.iter().enumerate() {
            let start = if k == 0 { 0 } else { boundary_sample(seg.start_frame, hop, win) };
            let end = if k + 1 == n_seg { samples.len() } else { boundary_sample(seg.end_frame, hop, win) };
            writeln!(phn, "{start} {end} {}", inventory.phone(seg.phone))?;
        }
        phn.flush()?;
        fs::write(
            dir.join(format!("{}.txt", utt.id)),
            format!("0 {} {}\n", samples.len(), utt.transcript),
        )?;
    }
    Ok(())
}
