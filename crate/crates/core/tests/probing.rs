mod common;

use common::{random_matrix, rng};
use ctcprobe::acoustic::{synthesize_corpus, Corpus, SynthConfig};
use ctcprobe::alphabet::SymbolCategory;
use ctcprobe::model::{preset, TapPoint, TrainedModel};
use ctcprobe::phoneset::Scheme;
use ctcprobe::probing::*;
use ctcprobe::tensor::Matrix;
use ctcprobe::trainer::{train_probe, TrainConfig};
use proptest::prelude::*;
use rand::Rng;

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn small_corpus(n: usize) -> Corpus {
    let cfg = SynthConfig::with_inventory(12, 5);
    Corpus {
        inventory: cfg.inventory(),
        utterances: synthesize_corpus(&cfg, n).unwrap(),
    }
}

fn provenance() -> Provenance {
    Provenance {
        layer: 0,
        layer_name: "input".into(),
        strides_enabled: true,
        window: 0,
        scheme: Scheme::Full,
        tap_point: TapPoint::PostActivation,
    }
}

#[test]
fn hand_built_confusion_matrix() {
    // truth a a b c, predicted a b b a
    let r = ProbeReport::from_predictions(names(&["a", "b", "c"]), &[0, 0, 1, 2], &[0, 1, 1, 0], None).unwrap();
    assert_eq!(r.confusion, vec![vec![1, 1, 0], vec![0, 1, 0], vec![1, 0, 0]]);
    assert_eq!(r.accuracy, 0.5);
    assert_eq!(r.per_label[0].precision, 0.5);
    assert_eq!(r.per_label[0].recall, 0.5);
    assert_eq!(r.per_label[1].precision, 0.5);
    assert_eq!(r.per_label[1].recall, 1.0);
    assert_eq!(r.per_label[1].f1, 2.0 / 3.0);
    assert_eq!(r.per_label[2].f1, 0.0);
    assert_eq!(r.confusion_csv(), "true\\predicted,a,b,c\na,1,1,0\nb,0,1,0\nc,1,0,0\n");
}

#[test]
fn row_sums_are_support_and_accuracy_is_trace_share() {
    let mut g = rng(3);
    let truth: Vec<usize> = (0..500).map(|_| g.random_range(0..5)).collect();
    let pred: Vec<usize> = (0..500).map(|_| g.random_range(0..5)).collect();
    let r = ProbeReport::from_predictions(names(&["a", "b", "c", "d", "e"]), &truth, &pred, None).unwrap();
    for (row, s) in r.confusion.iter().zip(&r.per_label) {
        assert_eq!(row.iter().sum::<usize>(), s.support);
    }
    let trace: usize = (0..5).map(|i| r.confusion[i][i]).sum();
    assert_eq!(r.accuracy, trace as f64 / 500.0);
}

#[test]
fn f1_requires_a_total_class_map() {
    let fine = ProbeReport::from_confusion(names(&["p", "q"]), vec![vec![1, 0], vec![0, 1]], None).unwrap();
    let coarse = ProbeReport::from_confusion(names(&["A"]), vec![vec![2]], None).unwrap();
    assert!(inter_intra_f1(&fine, &coarse, &[0]).is_err());
    assert!(inter_intra_f1(&fine, &coarse, &[0, 1]).is_err());
}

#[test]
fn class_map_follows_inventory() {
    let inv = ctcprobe::phoneset::PhoneInventory::timit();
    let m = class_map(&inv, Scheme::Reduced48);
    let labels = inv.labels(Scheme::Reduced48);
    assert_eq!(m.len(), 48);
    let s = labels.iter().position(|l| l == "s").unwrap();
    assert_eq!(sound_class_names()[m[s]], "fricatives");
    assert!(m.iter().all(|&c| c < 6));
}

#[test]
fn breakdown_of_an_all_blank_model_is_one_category() {
    let cats = vec![SymbolCategory::Blank; 7];
    let correct = vec![true, false, true, true, false, false, true];
    let b = Breakdown::from_frames(&cats, &correct, provenance()).unwrap();
    assert_eq!(b.categories[0].share, 1.0);
    assert_eq!(b.categories[0].accuracy, Some(4.0 / 7.0));
    assert!(b.categories[1..].iter().all(|c| c.frames == 0 && c.accuracy.is_none()));
}

proptest! {
    #[test]
    fn breakdown_shares_sum_to_one(frames in proptest::collection::vec((0usize..3, any::<bool>()), 1..300)) {
        let cats: Vec<SymbolCategory> = frames.iter().map(|f| SymbolCategory::ALL[f.0]).collect();
        let correct: Vec<bool> = frames.iter().map(|f| f.1).collect();
        let b = Breakdown::from_frames(&cats, &correct, provenance()).unwrap();
        let total: f64 = b.categories.iter().map(|c| c.share).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!((b.recombined_accuracy() - b.overall_accuracy).abs() < 1e-9);
    }
}

#[test]
fn window_zero_equals_tap_and_window_center_matches() {
    let corpus = small_corpus(4);
    let model = TrainedModel::init(preset("ds2-mini").unwrap()).unwrap();
    for k in [0usize, 1, 3] {
        let plain = extract_frames(&model, &corpus, k, &ExtractOptions::default()).unwrap();
        let wide = extract_frames(&model, &corpus, k, &ExtractOptions { window: 2, ..Default::default() }).unwrap();
        assert_eq!(wide.dim(), plain.dim() * 5);
        assert_eq!(wide.column_block(2 * plain.dim(), plain.dim()), plain.vectors);
        assert_eq!(wide.labels, plain.labels);
    }
    let input = extract_frames(&model, &corpus, 0, &ExtractOptions::default()).unwrap();
    let raw: Vec<f64> = corpus
        .utterances
        .iter()
        .flat_map(|u| u.spectrogram.frames.data.iter().map(|v| *v as f32 as f64))
        .collect();
    assert_eq!(input.vectors.data, raw);
    assert_eq!(input.dim(), 161);
}

#[test]
fn strided_datasets_halve_per_convolution() {
    let corpus = small_corpus(6);
    let model = TrainedModel::init(preset("ds2-mini").unwrap()).unwrap();
    let ds = extract_layers(&model, &corpus, &[0, 1, 2, 3], &ExtractOptions::default()).unwrap();
    let n = ds[0].len();
    let per_utt = corpus.utterances.len();
    // ceil(T/2) per utterance: at most one extra frame per utterance per layer
    assert!(ds[1].len() >= n / 2 && ds[1].len() <= n / 2 + per_utt);
    assert!(ds[2].len() >= ds[1].len() / 2 && ds[2].len() <= ds[1].len() / 2 + per_utt);
    assert_eq!(ds[3].len(), ds[2].len());
    let flat = extract_layers(&model, &corpus, &[0, 2, 5], &ExtractOptions { strides_enabled: false, ..Default::default() }).unwrap();
    assert!(flat.iter().all(|d| d.len() == n));
    assert!(extract_frames(&model, &corpus, 11, &ExtractOptions::default()).is_err());
}

#[test]
fn dataset_file_round_trip_and_split() {
    let corpus = small_corpus(5);
    let model = TrainedModel::init(preset("ds2-mini").unwrap()).unwrap();
    let d = extract_frames(&model, &corpus, 2, &ExtractOptions { scheme: Scheme::SoundClass, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.frames");
    d.write(&path).unwrap();
    assert_eq!(FrameDataset::read(&path).unwrap(), d);
    let (tr, dev) = d.split_holdout(0.2);
    assert_eq!(tr.len() + dev.len(), d.len());
    assert_eq!(dev.num_utterances(), 1);
    assert!(d.labels.iter().all(|&l| l < 6));
}

fn toy(x: Matrix, labels: Vec<usize>, n_labels: usize) -> FrameDataset {
    let n = labels.len();
    FrameDataset {
        vectors: x,
        labels,
        label_names: (0..n_labels).map(|i| format!("l{i}")).collect(),
        utt_ids: vec!["u".into()],
        utt_offsets: vec![0, n],
        provenance: provenance(),
    }
}

fn quick(epochs: usize) -> ProbeConfig {
    ProbeConfig {
        hidden_size: 32,
        train: TrainConfig { epochs, ..TrainConfig::probe_default() },
        ..Default::default()
    }
}

#[test]
fn separable_toy_set_is_learned_perfectly() {
    let mut g = rng(10);
    let make = |g: &mut rand_chacha::ChaCha8Rng, n: usize| {
        let mut x = random_matrix(g, n, 2);
        let labels: Vec<usize> = x.iter_rows().map(|r| usize::from(r[0] + 0.5 * r[1] > 0.0)).collect();
        // open a margin around the boundary
        for (i, &l) in labels.iter().enumerate() {
            x.row_mut(i)[0] += if l == 1 { 0.25 } else { -0.25 };
        }
        toy(x, labels, 2)
    };
    let (train, dev) = (make(&mut g, 400), make(&mut g, 100));
    let (probe, log) = train_probe(&train, &dev, &quick(30)).unwrap();
    let report = evaluate_probe(&probe, &dev).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(log.selected_epoch, log.argmin_dev());
    assert_eq!(log.epochs.len(), 31);
    // evaluation path has no dropout
    assert_eq!(probe.loss_and_accuracy(&dev.vectors, &dev.labels).unwrap(), probe.loss_and_accuracy(&dev.vectors, &dev.labels).unwrap());
}

#[test]
fn random_labels_stay_at_chance() {
    let mut g = rng(11);
    let x = random_matrix(&mut g, 1200, 8);
    let labels: Vec<usize> = (0..1200).map(|_| g.random_range(0..4)).collect();
    let all = toy(x, labels, 4);
    let train = FrameDataset { utt_offsets: vec![0, 1000], utt_ids: vec!["a".into()], ..all.clone() };
    let train = FrameDataset {
        vectors: Matrix::from_vec(1000, 8, all.vectors.data[..8000].to_vec()),
        labels: all.labels[..1000].to_vec(),
        ..train
    };
    let dev = FrameDataset {
        vectors: Matrix::from_vec(200, 8, all.vectors.data[8000..].to_vec()),
        labels: all.labels[1000..].to_vec(),
        utt_offsets: vec![0, 200],
        ..all
    };
    let (probe, _) = train_probe(&train, &dev, &quick(10)).unwrap();
    let acc = evaluate_probe(&probe, &dev).unwrap().accuracy;
    assert!((acc - 0.25).abs() <= 0.07, "{acc}");
}

#[test]
fn majority_probe_scores_the_majority_baseline() {
    let labels = vec![2, 2, 1, 2, 0, 2];
    let d = toy(Matrix::zeros(6, 3), labels.clone(), 3);
    // a linear probe with zero weights and a bias favouring label 2
    let mut probe = TrainedProbe::init(3, d.label_names.clone(), &ProbeConfig { linear: true, ..Default::default() }, 0).unwrap();
    probe.layers[0].weight.iter_mut().for_each(|w| *w = 0.0);
    probe.layers[0].bias = vec![0.0, 0.0, 1.0];
    let acc = evaluate_probe(&probe, &d).unwrap().accuracy;
    let (_, base) = ctcprobe::phoneset::majority_baseline(&labels, &d.label_names).unwrap();
    assert_eq!(acc, base);
}

#[test]
fn probe_rejects_mismatched_dimensions() {
    let a = toy(Matrix::zeros(4, 3), vec![0, 1, 0, 1], 2);
    let b = toy(Matrix::zeros(4, 2), vec![0, 1, 0, 1], 2);
    assert!(train_probe(&a, &b, &quick(1)).is_err());
    let c = toy(Matrix::zeros(4, 3), vec![0, 1, 0, 1], 3);
    assert!(train_probe(&a, &c, &quick(1)).is_err());
}
