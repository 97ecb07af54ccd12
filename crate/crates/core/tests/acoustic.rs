use ctcprobe::acoustic::{export_timit_dir, import_timit_dir, synthesize_corpus, Corpus, StftConfig, SynthConfig};
use ctcprobe::alphabet::Alphabet;
use ctcprobe::model::preset_with;
use ctcprobe::trainer::{train_asr, TrainConfig};

#[test]
fn timit_export_import_round_trips_segments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::with_inventory(10, 4);
    let utts = synthesize_corpus(&cfg, 3).unwrap();
    let inv = cfg.inventory();
    export_timit_dir(&utts, &inv, &cfg, dir.path()).unwrap();
    let report = import_timit_dir(dir.path(), &inv, &Alphabet::english(), &StftConfig::default()).unwrap();
    assert!(report.errors.is_empty(), "{:?}", report.errors);
    assert_eq!(report.utterances.len(), 3);
    let mut by_id = report.utterances;
    by_id.sort_by(|a, b| a.id.cmp(&b.id));
    let mut want = utts;
    want.sort_by(|a, b| a.id.cmp(&b.id));
    for (got, orig) in by_id.iter().zip(&want) {
        assert_eq!(got.id, orig.id);
        assert_eq!(got.phone_sequence(), orig.phone_sequence());
        assert_eq!(got.spectrogram.frames.cols, 161);
        // inner boundaries land on the same frames
        let inner = |u: &ctcprobe::acoustic::Utterance| -> Vec<usize> {
            u.segments.iter().skip(1).map(|s| s.start_frame).collect()
        };
        assert_eq!(inner(got), inner(orig));
    }
}

#[test]
fn timit_import_of_empty_dir_is_empty_and_missing_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    let inv = SynthConfig::default().inventory();
    let alpha = Alphabet::english();
    let r = import_timit_dir(dir.path(), &inv, &alpha, &StftConfig::default()).unwrap();
    assert!(r.utterances.is_empty() && r.errors.is_empty());
    assert!(import_timit_dir(&dir.path().join("nope"), &inv, &alpha, &StftConfig::default()).is_err());
}

#[test]
fn timit_import_reports_bad_files_and_keeps_going() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::with_inventory(10, 1);
    let utts = synthesize_corpus(&cfg, 2).unwrap();
    let inv = cfg.inventory();
    export_timit_dir(&utts, &inv, &cfg, dir.path()).unwrap();
    std::fs::write(dir.path().join(format!("{}.phn", utts[0].id)), "0 100 not_a_phone\n").unwrap();
    std::fs::write(dir.path().join("orphan.wav"), b"RIFF").unwrap();
    let r = import_timit_dir(dir.path(), &inv, &Alphabet::english(), &StftConfig::default()).unwrap();
    assert_eq!(r.utterances.len(), 1);
    assert_eq!(r.errors.len(), 2);
    assert!(r.errors.iter().any(|(_, e)| e.contains("unknown phone")));
}

#[test]
fn asr_training_is_deterministic_given_seed() {
    let cfg = SynthConfig::with_inventory(8, 2);
    let corpus = Corpus {
        inventory: cfg.inventory(),
        utterances: synthesize_corpus(&cfg, 6).unwrap(),
    };
    let mut model = preset_with("ds2-mini", Some(8), Some(2)).unwrap();
    model.input_freq_bins = cfg.freq_bins;
    let tc = TrainConfig {
        epochs: 2,
        ..TrainConfig::asr_default()
    };
    let (m1, log1) = train_asr(&corpus, model.clone(), &tc).unwrap();
    let (m2, log2) = train_asr(&corpus, model, &tc).unwrap();
    assert_eq!(log1.to_csv(), log2.to_csv());
    assert_eq!(m1, m2);
    assert!(log1.epochs[0].dev_loss.is_finite());
}
