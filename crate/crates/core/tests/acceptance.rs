//! Acceptance criteria 1 to 10. Every test prints one line,
//! `criterion N: PASS|FAIL (details)`, before asserting.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use common::{model_gradcheck, oracle_ctc_prob, random_labels, random_matrix, random_probs, relative_error, rng, to_log};
use ctcprobe::acoustic::SEPARABLE_NOISE_STDDEV;
use ctcprobe::alphabet::SymbolCategory;
use ctcprobe::clustering::{kmeans, pca_2d, prune_clusters, tsne_2d, ClusterSummary, KMeansConfig, TsneConfig};
use ctcprobe::ctc::{ctc_brute_force, ctc_grad, ctc_loss, BRUTE_FORCE_CAP};
use ctcprobe::experiment::{read_asr_summary, read_probe_summary, run, setting_name, CorpusSpec, ExperimentConfig};
use ctcprobe::model::{conv_output_len, preset, ForwardOptions, LayerKind, TrainedModel};
use ctcprobe::phoneset::Scheme;
use ctcprobe::probing::{inter_intra_f1, Breakdown, ProbeReport, Provenance};
use ctcprobe::tensor::{log_softmax_in_place, Matrix};
use rand::Rng;
use rand_distr::{Distribution, Normal};

// Tolerances and budgets.
const CTC_PROB_TOL: f64 = 1e-6;
const CTC_INSTANCES: usize = 1000;
const CTC_BUDGET: Duration = Duration::from_secs(30);
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 20;
const GRAD_STEP: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const PIPELINE_BUDGET: Duration = Duration::from_secs(600);
const LAYER0_MIN_ACCURACY: f64 = 0.90;
const MARGIN_OVER_MAJORITY: f64 = 0.20;
const TREND_TOL: f64 = 0.02;
const RECOMBINE_TOL: f64 = 1e-9;
const INERTIA_REL_SLACK: f64 = 1e-12;
const PCA_TOL: f64 = 1e-8;

/// Pipeline criteria run one at a time so their budgets are not shared.
fn pipeline_lock() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, ok: bool, detail: impl AsRef<str>) {
    println!("criterion {n}: {} ({})", if ok { "PASS" } else { "FAIL" }, detail.as_ref());
    assert!(ok, "criterion {n} failed: {}", detail.as_ref());
}

#[test]
fn criterion_01_ctc_matches_enumeration() {
    let start = Instant::now();
    let mut r = rng(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..CTC_INSTANCES {
        let t = r.random_range(1..=6);
        let s = r.random_range(2..=4);
        let p = random_probs(&mut r, t, s, 3.0);
        let labels = random_labels(&mut r, t, s, 3.min(t));
        let dp = (-ctc_loss(&to_log(&p), &labels).unwrap()).exp();
        let brute = ctc_brute_force(&p, &labels, BRUTE_FORCE_CAP).unwrap();
        worst = worst.max((dp - brute).abs()).max((dp - oracle_ctc_prob(&p, &labels)).abs());
    }
    let took = start.elapsed();
    verdict(
        1,
        worst < CTC_PROB_TOL && took < CTC_BUDGET,
        format!("{CTC_INSTANCES} instances, max |Δp| = {worst:.2e}, {took:.2?}"),
    );
}

fn ctc_gradcheck(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (t, s) = (r.random_range(3..=8), r.random_range(3..=6));
    let z = random_matrix(&mut r, t, s);
    let labels = random_labels(&mut r, t, s, 3);
    let log_probs = |z: &Matrix| {
        let mut lp = z.clone();
        (0..lp.rows).for_each(|i| log_softmax_in_place(lp.row_mut(i)));
        lp
    };
    let g = ctc_grad(&log_probs(&z), &labels).unwrap();
    let mut worst: f64 = 0.0;
    for e in 0..z.data.len() {
        let (mut up, mut down) = (z.clone(), z.clone());
        up.data[e] += GRAD_STEP;
        down.data[e] -= GRAD_STEP;
        let num = (ctc_loss(&log_probs(&up), &labels).unwrap() - ctc_loss(&log_probs(&down), &labels).unwrap())
            / (2.0 * GRAD_STEP);
        worst = worst.max(relative_error(g.data[e], num));
    }
    worst
}

#[test]
fn criterion_02_gradients_match_finite_differences() {
    let start = Instant::now();
    let ctc_worst = (0..GRAD_SEEDS).map(ctc_gradcheck).fold(0.0, f64::max);
    let model_worst = (0..GRAD_SEEDS).map(|s| model_gradcheck(s, GRAD_STEP)).fold(0.0, f64::max);
    let took = start.elapsed();
    verdict(
        2,
        ctc_worst < GRAD_REL_TOL && model_worst < GRAD_REL_TOL && took < GRAD_BUDGET,
        format!("{GRAD_SEEDS} seeds each, ctc rel err {ctc_worst:.2e}, model rel err {model_worst:.2e}, {took:.2?}"),
    );
}

#[test]
fn criterion_03_architecture_arithmetic() {
    let ds2 = preset("ds2").unwrap();
    let mut ok = true;
    let widths: Vec<usize> = ds2.layer_shapes(100, true).unwrap().iter().map(|s| s.width()).collect();
    let want: Vec<usize> = std::iter::once(161)
        .chain([1952, 1312])
        .chain(std::iter::repeat_n(1760, 7))
        .chain([29])
        .collect();
    ok &= widths == want;
    for t in 11..=300 {
        let strided = ds2.layer_shapes(t, true).unwrap();
        let free = ds2.layer_shapes(t, false).unwrap();
        // each stride-2 convolution halves the frame count, rounding up
        let half = t.div_ceil(2);
        let quarter = half.div_ceil(2);
        ok &= strided[1].frames == half && strided[2].frames == quarter;
        ok &= strided[1].frames == conv_output_len(t, 11, 2, 5).unwrap();
        ok &= strided[3..].iter().all(|s| s.frames == quarter);
        ok &= free.iter().all(|s| s.frames == t);
        ok &= free.iter().zip(&strided).skip(1).all(|(a, b)| a.width() == b.width());
    }
    // the same arithmetic holds for real taps of the scaled-down preset
    let model = TrainedModel::init(preset("ds2-mini").unwrap()).unwrap();
    let x = random_matrix(&mut rng(0), 37, 161);
    for strides in [true, false] {
        let pass = model.forward(&[&x], &ForwardOptions::taps(strides, Default::default())).unwrap();
        let shapes = model.config.layer_shapes(37, strides).unwrap();
        for (tap, s) in pass.taps[0].iter().zip(&shapes) {
            ok &= tap.rows == s.frames && tap.cols == s.width();
        }
    }
    let rnn_ok = ds2
        .layers
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::RnnBidir { .. }))
        .count()
        == 7;
    verdict(
        3,
        ok && rnn_ok,
        format!("ds2 widths {widths:?}; strided lengths ⌈T/2⌉, ⌈T/4⌉ for T in 11..=300"),
    )
}

/// Mini preset on 200 synthetic utterances, all taps probed. Shared by the
/// pipeline and breakdown criteria.
struct MiniRun {
    _dir: tempfile::TempDir,
    root: PathBuf,
    cfg: ExperimentConfig,
    took: Duration,
}

fn mini_run() -> &'static MiniRun {
    static RUN: OnceLock<MiniRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let _guard = pipeline_lock();
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            seed: 0,
            output_dir: dir.path().join("mini"),
            corpus: CorpusSpec::Synthetic {
                asr_utterances: 200,
                probe_utterances: 0,
                inventory_size: 20,
                noise_stddev: 0.2,
            },
            ..Default::default()
        };
        let start = Instant::now();
        let root = run(&cfg).unwrap();
        MiniRun {
            root,
            cfg,
            took: start.elapsed(),
            _dir: dir,
        }
    })
}

fn probe_summary_path(root: &Path, setting: &str, k: usize, name: &str) -> PathBuf {
    root.join(format!("probes/{setting}/L{k}_{name}.summary.json"))
}

#[test]
fn criterion_04_pipeline_sanity() {
    let mr = mini_run();
    let noise = match mr.cfg.corpus {
        CorpusSpec::Synthetic { noise_stddev, .. } => noise_stddev,
        _ => unreachable!(),
    };
    let asr = read_asr_summary(&mr.root).unwrap();
    let model = mr.cfg.model_config().unwrap();
    let names = model.tap_names();
    let setting = setting_name(true, 0, Scheme::Full);
    let mut lines = Vec::new();
    let mut ok = asr.selected_dev_loss < asr.untrained_dev_loss && noise < SEPARABLE_NOISE_STDDEV;
    for k in 0..names.len() {
        let s = read_probe_summary(&probe_summary_path(&mr.root, &setting, k, &names[k])).unwrap();
        let layer_ok = s.accuracy >= s.majority_baseline + MARGIN_OVER_MAJORITY
            && (k != 0 || s.accuracy >= LAYER0_MIN_ACCURACY);
        ok &= layer_ok;
        lines.push(format!("{}={:.3}", names[k], s.accuracy));
        if k == 0 {
            lines.push(format!("majority={:.3}", s.majority_baseline));
        }
    }
    ok &= mr.took <= PIPELINE_BUDGET;
    verdict(
        4,
        ok,
        format!(
            "dev loss {:.2} → {:.2}; noise {noise} < {SEPARABLE_NOISE_STDDEV}; {}; {:.0?}",
            asr.untrained_dev_loss,
            asr.selected_dev_loss,
            lines.join(" "),
            mr.took
        ),
    );
}

/// `(layer, name, accuracy)` rows of the shipped reference report.
fn golden_trend() -> Vec<(usize, String, f64)> {
    include_str!("golden/trend_accuracy.csv")
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[0].parse().unwrap(), c[1].to_string(), c[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn criterion_05_recurrent_layers_recover_at_high_noise() {
    let dir = tempfile::tempdir().unwrap();
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/trend.json");
    let mut cfg = ExperimentConfig::load(&shipped).unwrap();
    let _guard = pipeline_lock();
    cfg.output_dir = dir.path().join("trend");
    let start = Instant::now();
    let root = run(&cfg).unwrap();
    let setting = setting_name(true, 0, Scheme::Full);
    let golden = golden_trend();
    let mut matches = !golden.is_empty();
    let mut worst = 0.0f64;
    let mut fresh = Vec::new();
    for (k, name, want) in &golden {
        let got = read_probe_summary(&probe_summary_path(&root, &setting, *k, name)).unwrap().accuracy;
        worst = worst.max((got - want).abs());
        matches &= (got - want).abs() <= TREND_TOL;
        fresh.push((name.clone(), got));
    }
    let cnn2 = fresh.iter().find(|(n, _)| n == "cnn2").map(|x| x.1).unwrap_or(f64::NAN);
    let (best_name, best_rnn) = fresh
        .iter()
        .filter(|(n, _)| n.starts_with("rnn"))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap_or(("none".into(), f64::NAN));
    let recovers = best_rnn > cnn2;
    let shown: Vec<String> = fresh.iter().map(|(n, a)| format!("{n}={a:.3}")).collect();
    verdict(
        5,
        matches && recovers,
        format!(
            "best recurrent {best_name} {best_rnn:.3} vs cnn2 {cnn2:.3}; golden max |Δ| {worst:.3} ≤ {TREND_TOL}; {}; {:.0?}",
            shown.join(" "),
            start.elapsed()
        ),
    );
}

fn dummy_provenance() -> Provenance {
    Provenance {
        layer: 0,
        layer_name: "input".into(),
        strides_enabled: true,
        window: 0,
        scheme: Scheme::Full,
        tap_point: Default::default(),
    }
}

fn check_breakdown(b: &Breakdown) -> (f64, f64) {
    let share_sum: f64 = b.categories.iter().map(|c| c.share).sum();
    ((share_sum - 1.0).abs(), (b.recombined_accuracy() - b.overall_accuracy).abs())
}

#[test]
fn criterion_06_breakdown_consistency() {
    let mut r = rng(6);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = r.random_range(1..400);
        let cats: Vec<SymbolCategory> = (0..n).map(|_| SymbolCategory::ALL[r.random_range(0..3)]).collect();
        let correct: Vec<bool> = (0..n).map(|_| r.random_bool(0.6)).collect();
        let (s, a) = check_breakdown(&Breakdown::from_frames(&cats, &correct, dummy_provenance()).unwrap());
        worst = (worst.0.max(s), worst.1.max(a));
    }
    // and every breakdown the pipeline wrote
    let mr = mini_run();
    let mut files = 0;
    for entry in walkdir::WalkDir::new(mr.root.join("probes")) {
        let entry = entry.unwrap();
        if entry.file_name().to_string_lossy().ends_with(".breakdown.json") {
            let b: Breakdown = serde_json::from_str(&std::fs::read_to_string(entry.path()).unwrap()).unwrap();
            let (s, a) = check_breakdown(&b);
            worst = (worst.0.max(s), worst.1.max(a));
            files += 1;
        }
    }
    verdict(
        6,
        worst.0 < RECOMBINE_TOL && worst.1 < RECOMBINE_TOL && files > 0,
        format!(
            "1000 random + {files} pipeline breakdowns, |Σshare − 1| ≤ {:.1e}, |recombined − overall| ≤ {:.1e}",
            worst.0, worst.1
        ),
    );
}

/// Majority label and coverage per non-empty cluster, counted directly.
fn recount(assignment: &[usize], labels: &[usize], k: usize, n_labels: usize) -> BTreeMap<usize, (usize, f64)> {
    let mut out = BTreeMap::new();
    for c in 0..k {
        let members: Vec<usize> = (0..assignment.len()).filter(|&i| assignment[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let mut best = (0, 0);
        for l in 0..n_labels {
            let n = members.iter().filter(|&&i| labels[i] == l).count();
            if n > best.1 {
                best = (l, n);
            }
        }
        out.insert(c, (best.0, best.1 as f64 / members.len() as f64));
    }
    out
}

#[test]
fn criterion_07_kmeans_and_pruning() {
    let mut r = rng(7);
    let mut monotone = true;
    for trial in 0..20 {
        let n = r.random_range(20..200);
        let d = r.random_range(1..6);
        let x = random_matrix(&mut r, n, d);
        let km = kmeans(&x, &KMeansConfig { k: r.random_range(1..10), seed: trial, max_iter: 100, tol: 0.0 }).unwrap();
        monotone &= km.inertia_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + INERTIA_REL_SLACK));
    }
    let x = random_matrix(&mut r, 40, 3);
    let zero = kmeans(&x, &KMeansConfig { k: 40, seed: 1, max_iter: 100, tol: 0.0 }).unwrap().inertia();

    let mut pruning_ok = true;
    for trial in 0..100 {
        let n = r.random_range(10..120);
        let k = r.random_range(1..=n.min(15));
        let n_labels = r.random_range(1..6);
        let x = random_matrix(&mut r, n, 2);
        let km = kmeans(&x, &KMeansConfig { k, seed: trial, max_iter: 20, tol: 1e-4 }).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..n_labels)).collect();
        let names: Vec<String> = (0..n_labels).map(|l| format!("l{l}")).collect();
        let summary = ClusterSummary::from_kmeans(&km, &labels, names).unwrap();
        let threshold = r.random_range(0.01..=1.0);
        let pruned = prune_clusters(&summary, threshold).unwrap();
        let expected: Vec<(usize, usize, f64)> = recount(&km.assignment, &labels, k, n_labels)
            .into_iter()
            .filter(|(_, (_, cov))| *cov >= threshold)
            .map(|(c, (l, cov))| (c, l, cov))
            .collect();
        let got: Vec<(usize, usize, f64)> = (0..pruned.len())
            .map(|i| (pruned.cluster_ids[i], pruned.majority_label[i], pruned.coverage[i]))
            .collect();
        pruning_ok &= got == expected;
    }
    verdict(
        7,
        monotone && zero == 0.0 && pruning_ok,
        format!("inertia monotone on 20 runs: {monotone}; k = N inertia {zero}; 100 pruning recounts agree: {pruning_ok}"),
    );
}

#[test]
fn criterion_08_projections() {
    let mut r = rng(8);
    let mut worst: f64 = 0.0;
    for &(n, d) in &[(50, 10), (8, 30), (200, 3), (3, 2)] {
        // orthonormal 2-plane via Gram-Schmidt
        let a = random_matrix(&mut r, 2, d);
        let mut u0: Vec<f64> = a.row(0).to_vec();
        let n0 = u0.iter().map(|v| v * v).sum::<f64>().sqrt();
        u0.iter_mut().for_each(|v| *v /= n0);
        let mut u1: Vec<f64> = a.row(1).to_vec();
        let dot: f64 = u0.iter().zip(&u1).map(|(x, y)| x * y).sum();
        u1.iter_mut().zip(&u0).for_each(|(v, w)| *v -= dot * w);
        let n1 = u1.iter().map(|v| v * v).sum::<f64>().sqrt();
        u1.iter_mut().for_each(|v| *v /= n1);
        let offset: Vec<f64> = (0..d).map(|_| r.random_range(-5.0..5.0)).collect();
        let mut x = Matrix::zeros(n, d);
        for i in 0..n {
            let (c0, c1) = (r.random_range(-3.0..3.0), r.random_range(-1.0..1.0));
            for j in 0..d {
                x.set(i, j, offset[j] + c0 * u0[j] + c1 * u1[j]);
            }
        }
        let pca = pca_2d(&x).unwrap();
        let rec = pca.reconstruct();
        worst = worst.max(rec.data.iter().zip(&x.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x = Matrix::from_vec(100, 32, (0..3200).map(|_| normal.sample(&mut r)).collect());
    let t = tsne_2d(&x, &TsneConfig { seed: 8, ..Default::default() }).unwrap();
    verdict(
        8,
        worst < PCA_TOL && t.kl_final < t.kl_initial,
        format!("PCA max reconstruction error {worst:.2e}; t-SNE KL {:.4} → {:.4}", t.kl_initial, t.kl_final),
    );
}

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

#[test]
fn criterion_09_metric_definitions() {
    let phones = names(&["p0", "p1", "p2", "p3"]);
    let classes = names(&["A", "B"]);
    let map = [0, 0, 1, 1];
    let report = |labels: &[String], truth: &[usize], pred: &[usize]| {
        ProbeReport::from_predictions(labels.to_vec(), truth, pred, None).unwrap()
    };

    // perfect classifier
    let truth = [0, 1, 2, 3, 0, 2];
    let fine = report(&phones, &truth, &truth);
    let coarse_truth: Vec<usize> = truth.iter().map(|&p| map[p]).collect();
    let coarse = report(&classes, &coarse_truth, &coarse_truth);
    let perfect = inter_intra_f1(&fine, &coarse, &map).unwrap();
    let case1 = perfect.iter().all(|c| c.inter_f1 == 1.0 && c.intra_f1 == 1.0)
        && fine.confusion == vec![vec![2, 0, 0, 0], vec![0, 1, 0, 0], vec![0, 0, 2, 0], vec![0, 0, 0, 1]];

    // phones of class A swapped, classes still right
    let swapped: Vec<usize> = truth.iter().map(|&p| [1, 0, 2, 3][p]).collect();
    let fine = report(&phones, &truth, &swapped);
    let perm = inter_intra_f1(&fine, &coarse, &map).unwrap();
    let case2 = perm[0].inter_f1 == 1.0 && perm[0].intra_f1 < 1.0 && perm[0].intra_f1 == 0.0 && perm[1].intra_f1 == 1.0;

    // two classes with two phones each, counts by hand
    let fine_m = vec![vec![5, 1, 1, 0], vec![2, 4, 0, 1], vec![0, 1, 6, 1], vec![1, 0, 1, 4]];
    let mut t = Vec::new();
    let mut p = Vec::new();
    for (i, row) in fine_m.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            t.extend(std::iter::repeat_n(i, c));
            p.extend(std::iter::repeat_n(j, c));
        }
    }
    let fine = report(&phones, &t, &p);
    let coarse = ProbeReport::from_confusion(classes.clone(), vec![vec![9, 1], vec![3, 7]], None).unwrap();
    let hand = inter_intra_f1(&fine, &coarse, &map).unwrap();
    // A: intra (5 + 4) / (5 + 1 + 2 + 4), inter 2·9 / (10 + 12)
    // B: intra (6 + 4) / (6 + 1 + 1 + 4), inter 2·7 / (10 + 8)
    let case3 = fine.confusion == fine_m
        && hand[0].intra_f1 == 0.75
        && hand[0].inter_f1 == 9.0 / 11.0
        && hand[1].intra_f1 == 5.0 / 6.0
        && hand[1].inter_f1 == 7.0 / 9.0
        && fine.accuracy == 19.0 / 28.0;
    verdict(
        9,
        case1 && case2 && case3,
        format!("perfect {case1}, within-class permutation {case2} (intra {}), hand matrix {case3}", perm[0].intra_f1),
    );
}

/// Small end-to-end config covering every stage.
fn tiny_config(out: PathBuf) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: 11,
        output_dir: out,
        corpus: CorpusSpec::Synthetic {
            asr_utterances: 30,
            probe_utterances: 30,
            inventory_size: 12,
            noise_stddev: 0.5,
        },
        probe_layers: Some(vec![0, 2, 3, 10]),
        strides: vec![true, false],
        schemes: vec![Scheme::Full, Scheme::SoundClass],
        ..Default::default()
    };
    cfg.asr_training.epochs = 2;
    cfg.probe.train.epochs = 3;
    cfg.probe.hidden_size = 32;
    cfg.clustering.layers = vec![2];
    cfg.clustering.k = 40;
    cfg
}

fn tables(root: &Path) -> BTreeMap<String, Vec<u8>> {
    walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| {
            let n = e.file_name().to_string_lossy();
            e.file_type().is_file() && (n.ends_with(".csv") || n.ends_with(".json"))
        })
        .map(|e| {
            let rel = e.path().strip_prefix(root).unwrap().to_string_lossy().into_owned();
            (rel, std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn criterion_10_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let _guard = pipeline_lock();
    let a = run(&tiny_config(dir.path().join("a"))).unwrap();
    let b = run(&tiny_config(dir.path().join("b"))).unwrap();
    let (ta, tb) = (tables(&a), tables(&b));
    let differing: Vec<&String> = ta.keys().filter(|k| ta.get(*k) != tb.get(*k)).collect();
    let same_manifest = std::fs::read(a.join("manifest.json")).unwrap() == std::fs::read(b.join("manifest.json")).unwrap();
    verdict(
        10,
        ta.len() == tb.len() && ta.len() > 20 && differing.is_empty() && same_manifest,
        format!("{} CSV/JSON files compared, differing: {differing:?}, manifests equal: {same_manifest}", ta.len()),
    );
}
