use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{derive_seed, setting_name, CorpusSpec, ExperimentConfig};
use super::plots::{plot_centroids, plot_confusion, plot_layer_accuracy, AccuracySeries};
use crate::acoustic::{import_timit_dir, read_corpus, synthesize_corpus, write_corpus, Corpus};
use crate::alphabet::Alphabet;
use crate::clustering::{kmeans, project_2d, prune_clusters, ClusterSummary, KMeansConfig, ProjectionMethod};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, TrainedModel};
use crate::phoneset::{majority_baseline, Scheme};
use crate::probing::{
    breakdown_by_ctc_symbol, class_map, csv_field, evaluate_probe, extract_layers, f1_deltas, inter_intra_f1, Breakdown,
    ExtractOptions, FrameDataset, ProbeReport,
};
use crate::trainer::{train_asr, train_probe};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    TrainAsr,
    Extract,
    Probe,
    Cluster,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Synth,
        Stage::TrainAsr,
        Stage::Extract,
        Stage::Probe,
        Stage::Cluster,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::TrainAsr => "train-asr",
            Stage::Extract => "extract",
            Stage::Probe => "probe",
            Stage::Cluster => "cluster",
            Stage::Report => "report",
        }
    }
}

/// File layout of one experiment directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn asr_corpus(&self) -> PathBuf {
        self.root.join("corpus/asr.corpus")
    }
    pub fn probe_corpus(&self) -> PathBuf {
        self.root.join("corpus/probe.corpus")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("asr/model.ckpt")
    }
    pub fn features(&self, setting: &str, k: usize, name: &str) -> PathBuf {
        self.root.join(format!("features/{setting}/L{k}_{name}.frames"))
    }
    pub fn probe(&self, setting: &str, k: usize, name: &str, what: &str) -> PathBuf {
        self.root.join(format!("probes/{setting}/L{k}_{name}.{what}"))
    }
    pub fn cluster(&self, k: usize, name: &str, what: &str) -> PathBuf {
        self.root.join(format!("clusters/L{k}_{name}.{what}"))
    }
    pub fn table(&self, name: &str) -> PathBuf {
        self.root.join("tables").join(name)
    }
    pub fn plot(&self, name: &str) -> PathBuf {
        self.root.join("plots").join(name)
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Result of one trained probe, written next to its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub layer: usize,
    pub layer_name: String,
    pub strides_enabled: bool,
    pub window: usize,
    pub scheme: Scheme,
    pub dim: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub accuracy: f64,
    pub majority_label: String,
    pub majority_baseline: f64,
    pub selected_epoch: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrSummary {
    pub untrained_dev_loss: f64,
    pub selected_epoch: usize,
    pub selected_dev_loss: f64,
    pub dropped_utterances: usize,
    pub num_parameters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub layer: usize,
    pub layer_name: String,
    pub k: usize,
    pub n_points: usize,
    pub iterations: usize,
    pub inertia_history: Vec<f64>,
    pub non_empty: usize,
    pub kept: usize,
    pub min_coverage: f64,
    pub projection: ProjectionMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    pub files: Vec<ManifestFile>,
}

/// Runs every stage in order.
pub fn run(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    for stage in Stage::ALL {
        run_stage(cfg, stage)?;
    }
    Ok(cfg.resolved_output_dir())
}

/// Runs one stage against the artifacts already in the output directory
/// and refreshes the manifest. Failures carry the stage name; whatever the
/// stage wrote before failing stays on disk.
pub fn run_stage(cfg: &ExperimentConfig, stage: Stage) -> Result<()> {
    cfg.validate()?;
    let layout = Layout::new(cfg.resolved_output_dir());
    fs::create_dir_all(&layout.root).map_err(|e| Error::Config(format!("output directory {}: {e}", layout.root.display())))?;
    write_file(&layout.config(), portable(cfg).to_json()).map_err(|e| Error::Config(e.to_string()))?;
    info!("stage {}", stage.name());
    let res = match stage {
        Stage::Synth => synth(cfg, &layout),
        Stage::TrainAsr => train(cfg, &layout),
        Stage::Extract => extract(cfg, &layout),
        Stage::Probe => probe(cfg, &layout),
        Stage::Cluster => cluster(cfg, &layout),
        Stage::Report => report(cfg, &layout),
    };
    let manifest = write_manifest(cfg, &layout);
    res.map_err(|e| Error::Stage {
        stage: stage.name(),
        source: Box::new(e),
    })?;
    manifest.map_err(|e| Error::Stage {
        stage: "manifest",
        source: Box::new(e),
    })
}

/// The config as recorded on disk: the output location is left out so two
/// directories produced from the same settings hold identical files.
fn portable(cfg: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        output_dir: PathBuf::from("."),
        ..cfg.clone()
    }
}

fn synth(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let (asr, probe) = match &cfg.corpus {
        CorpusSpec::Synthetic {
            asr_utterances,
            probe_utterances,
            ..
        } => {
            let make = |tag: &str, n: usize| -> Result<Corpus> {
                let sc = cfg.corpus.synth_config(derive_seed(cfg.seed, tag)).expect("synthetic");
                Ok(Corpus {
                    inventory: sc.inventory(),
                    utterances: synthesize_corpus(&sc, n)?,
                })
            };
            let asr = make("synth/asr", *asr_utterances)?;
            let probe = if *probe_utterances == 0 {
                asr.clone()
            } else {
                make("synth/probe", *probe_utterances)?
            };
            (asr, probe)
        }
        CorpusSpec::Import {
            asr_dir, probe_dir, stft, ..
        } => {
            let inventory = cfg.corpus.inventory()?;
            let load = |dir: &Path| -> Result<Corpus> {
                let rep = import_timit_dir(dir, &inventory, &Alphabet::english(), stft)?;
                for (p, e) in &rep.errors {
                    warn!("skipped {}: {e}", p.display());
                }
                if rep.utterances.is_empty() {
                    return Err(Error::EmptyInput(format!("no usable utterances under {}", dir.display())));
                }
                Ok(Corpus {
                    inventory: inventory.clone(),
                    utterances: rep.utterances,
                })
            };
            let asr = load(asr_dir)?;
            let probe = match probe_dir {
                Some(d) => load(d)?,
                None => asr.clone(),
            };
            (asr, probe)
        }
    };
    info!(
        "asr corpus {} utterances / {} frames, probe corpus {} / {}",
        asr.utterances.len(),
        asr.total_frames(),
        probe.utterances.len(),
        probe.total_frames()
    );
    fs::create_dir_all(layout.root.join("corpus"))?;
    write_corpus(&asr, &layout.asr_corpus())?;
    write_corpus(&probe, &layout.probe_corpus())
}

fn train(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let corpus = read_corpus(&layout.asr_corpus())?;
    let mut tc = cfg.asr_training.clone();
    tc.seed = derive_seed(cfg.seed, "asr/train");
    let (model, log) = train_asr(&corpus, cfg.model_config()?, &tc)?;
    fs::create_dir_all(layout.root.join("asr"))?;
    save_checkpoint(&model, &layout.model())?;
    write_file(&layout.root.join("asr/train_log.csv"), log.to_csv())?;
    let summary = AsrSummary {
        untrained_dev_loss: log.epochs[0].dev_loss,
        selected_epoch: log.selected_epoch,
        selected_dev_loss: log.selected().dev_loss,
        dropped_utterances: log.dropped,
        num_parameters: model.num_parameters(),
    };
    info!(
        "asr dev loss {:.3} → {:.3} (epoch {})",
        summary.untrained_dev_loss, summary.selected_dev_loss, summary.selected_epoch
    );
    write_json(&layout.root.join("asr/summary.json"), &summary)
}

/// Every `(strides, window, scheme)` combination in config order.
fn settings(cfg: &ExperimentConfig) -> Vec<(bool, usize, Scheme)> {
    let mut out = Vec::new();
    for &s in &cfg.strides {
        for &w in &cfg.windows {
            for &scheme in &cfg.schemes {
                out.push((s, w, scheme));
            }
        }
    }
    out
}

fn load_model(cfg: &ExperimentConfig, layout: &Layout) -> Result<TrainedModel> {
    let model = load_checkpoint(&layout.model())?;
    let expected = cfg.model_config()?;
    if model.config.layers != expected.layers {
        return Err(Error::Config(format!(
            "{} was trained with a different architecture than the config describes",
            layout.model().display()
        )));
    }
    Ok(model)
}

fn extract(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let model = load_model(cfg, layout)?;
    let corpus = read_corpus(&layout.probe_corpus())?;
    let layers = cfg.layers(&model.config);
    let names = model.config.tap_names();
    for (strides, window, scheme) in settings(cfg) {
        let opts = ExtractOptions {
            strides_enabled: strides,
            window,
            scheme,
            tap_point: cfg.tap_point,
        };
        let setting = setting_name(strides, window, scheme);
        let sets = extract_layers(&model, &corpus, &layers, &opts)?;
        for (ds, &k) in sets.iter().zip(&layers) {
            info!("{setting} {}: {} frames × {}", names[k], ds.len(), ds.dim());
            let path = layout.features(&setting, k, &names[k]);
            fs::create_dir_all(path.parent().expect("nested path"))?;
            ds.write(&path)?;
        }
    }
    Ok(())
}

fn probe(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let model = load_model(cfg, layout)?;
    let corpus = read_corpus(&layout.probe_corpus())?;
    let (_, test_corpus) = corpus.split_holdout(cfg.probe_test_fraction);
    let names = model.config.tap_names();
    for (strides, window, scheme) in settings(cfg) {
        let setting = setting_name(strides, window, scheme);
        for k in cfg.layers(&model.config) {
            let ds = FrameDataset::read(&layout.features(&setting, k, &names[k]))?;
            let (rest, test) = ds.split_holdout(cfg.probe_test_fraction);
            let (train, dev) = rest.split_holdout(cfg.probe.train.dev_fraction);
            let seed = derive_seed(cfg.seed, &format!("probe/{setting}/L{k}"));
            let mut pc = cfg.probe.clone();
            pc.train.seed = seed;
            let (trained, log) = train_probe(&train, &dev, &pc)?;
            let report = evaluate_probe(&trained, &test)?;
            let (maj, maj_acc) = majority_baseline(&test.labels, &test.label_names)?;
            let summary = ProbeSummary {
                layer: k,
                layer_name: names[k].clone(),
                strides_enabled: strides,
                window,
                scheme,
                dim: ds.dim(),
                n_train: train.len(),
                n_dev: dev.len(),
                n_test: test.len(),
                accuracy: report.accuracy,
                majority_label: test.label_names[maj].clone(),
                majority_baseline: maj_acc,
                selected_epoch: log.selected_epoch,
                seed,
            };
            info!(
                "{setting} {}: accuracy {:.4} (majority {:.4}, epoch {})",
                names[k], report.accuracy, maj_acc, log.selected_epoch
            );
            write_json(&layout.probe(&setting, k, &names[k], "summary.json"), &summary)?;
            write_json(&layout.probe(&setting, k, &names[k], "report.json"), &report)?;
            write_file(&layout.probe(&setting, k, &names[k], "confusion.csv"), report.confusion_csv())?;
            write_file(&layout.probe(&setting, k, &names[k], "train_log.csv"), log.to_csv())?;
            if breakdown_applies(&model, k, strides)? {
                let b = breakdown_by_ctc_symbol(&trained, &test, &model, &test_corpus)?;
                write_json(&layout.probe(&setting, k, &names[k], "breakdown.json"), &b)?;
            }
        }
    }
    Ok(())
}

/// The breakdown needs the layer to run at the output frame rate.
fn breakdown_applies(model: &TrainedModel, k: usize, strides: bool) -> Result<bool> {
    let c = &model.config;
    Ok(c.time_mapping(k, strides)?.0 == c.time_mapping(c.num_layers(), strides)?.0)
}

fn cluster(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let spec = &cfg.clustering;
    if spec.layers.is_empty() {
        info!("no clustering layers configured");
        return Ok(());
    }
    let model_cfg = cfg.model_config()?;
    let names = model_cfg.tap_names();
    let setting = setting_name(cfg.strides[0], cfg.windows[0], cfg.schemes[0]);
    for &k in &spec.layers {
        let ds = FrameDataset::read(&layout.features(&setting, k, &names[k]))?;
        let km = kmeans(
            &ds.vectors,
            &KMeansConfig {
                k: spec.k,
                seed: derive_seed(cfg.seed, &format!("kmeans/L{k}")),
                max_iter: spec.max_iter,
                tol: spec.tol,
            },
        )?;
        let summary = ClusterSummary::from_kmeans(&km, &ds.labels, ds.label_names.clone())?;
        let kept = prune_clusters(&summary, spec.min_coverage)?;
        let projection = match spec.projection {
            ProjectionMethod::Tsne(mut t) => {
                if !(t.perplexity < kept.len() as f64) || kept.len() < 3 {
                    warn!(
                        "{}: {} clusters are too few for t-SNE at perplexity {}, using PCA",
                        names[k],
                        kept.len(),
                        t.perplexity
                    );
                    ProjectionMethod::Pca
                } else {
                    t.seed = derive_seed(cfg.seed, &format!("projection/L{k}"));
                    ProjectionMethod::Tsne(t)
                }
            }
            ProjectionMethod::Pca => ProjectionMethod::Pca,
        };
        let coords = if kept.is_empty() {
            None
        } else {
            Some(project_2d(&kept.centroids, &projection)?)
        };
        info!(
            "{}: {} of {} clusters cover ≥ {}",
            names[k],
            kept.len(),
            summary.len(),
            spec.min_coverage
        );
        write_file(&layout.cluster(k, &names[k], "all.csv"), summary.to_csv(None))?;
        write_file(&layout.cluster(k, &names[k], "kept.csv"), kept.to_csv(coords.as_ref()))?;
        write_json(
            &layout.cluster(k, &names[k], "summary.json"),
            &ClusterReport {
                layer: k,
                layer_name: names[k].clone(),
                k: spec.k,
                n_points: ds.len(),
                iterations: km.inertia_history.len() - 1,
                inertia_history: km.inertia_history.clone(),
                non_empty: summary.len(),
                kept: kept.len(),
                min_coverage: spec.min_coverage,
                projection,
            },
        )?;
        if let Some(c) = &coords {
            let labels: Vec<String> = kept.majority_label.iter().map(|&l| kept.label_names[l].clone()).collect();
            write_file(&layout.plot(&format!("centroids_L{k}_{}.svg", names[k])), plot_centroids(c, &labels)?)?;
        }
    }
    Ok(())
}

fn report(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let model_cfg = cfg.model_config()?;
    let names = model_cfg.tap_names();
    let layers = cfg.layers(&model_cfg);

    let mut acc = String::from(
        "strides,window,scheme,layer,layer_name,dim,n_train,n_test,accuracy,majority_baseline,selected_epoch\n",
    );
    let mut brk = String::from("strides,window,scheme,layer,layer_name,category,frames,share,accuracy\n");
    let mut summaries: BTreeMap<(bool, usize, Scheme, usize), ProbeSummary> = BTreeMap::new();
    for (strides, window, scheme) in settings(cfg) {
        let setting = setting_name(strides, window, scheme);
        for &k in &layers {
            let s: ProbeSummary = read_json(&layout.probe(&setting, k, &names[k], "summary.json"))?;
            let _ = writeln!(
                acc,
                "{strides},{window},{scheme},{k},{},{},{},{},{},{},{}",
                csv_field(&s.layer_name),
                s.dim,
                s.n_train,
                s.n_test,
                s.accuracy,
                s.majority_baseline,
                s.selected_epoch
            );
            let bpath = layout.probe(&setting, k, &names[k], "breakdown.json");
            if bpath.is_file() {
                let b: Breakdown = read_json(&bpath)?;
                for c in &b.categories {
                    let _ = writeln!(
                        brk,
                        "{strides},{window},{scheme},{k},{},{},{},{},{}",
                        csv_field(&names[k]),
                        c.category,
                        c.frames,
                        c.share,
                        c.accuracy.map(|a| a.to_string()).unwrap_or_default()
                    );
                }
            }
            summaries.insert((strides, window, scheme, k), s);
        }
    }
    write_file(&layout.table("accuracy.csv"), acc)?;
    write_file(&layout.table("breakdown.csv"), brk)?;

    // one bar panel per strides setting
    for &window in &cfg.windows {
        for &scheme in &cfg.schemes {
            let series: Vec<AccuracySeries> = cfg
                .strides
                .iter()
                .map(|&strides| {
                    let bars: Vec<(String, f64)> = layers
                        .iter()
                        .map(|&k| (names[k].clone(), summaries[&(strides, window, scheme, k)].accuracy))
                        .collect();
                    AccuracySeries {
                        title: format!("{} ({scheme}, w={window})", if strides { "with strides" } else { "without strides" }),
                        bars,
                        majority_baseline: Some(summaries[&(strides, window, scheme, layers[0])].majority_baseline),
                    }
                })
                .collect();
            write_file(&layout.plot(&format!("layer_accuracy_w{window}_{scheme}.svg")), plot_layer_accuracy(&series)?)?;
        }
    }

    let fine_scheme = [Scheme::Reduced48, Scheme::Full].into_iter().find(|s| cfg.schemes.contains(s));
    if let (Some(fine_scheme), true) = (fine_scheme, cfg.schemes.contains(&Scheme::SoundClass)) {
        let inventory = cfg.corpus.inventory()?;
        let map = class_map(&inventory, fine_scheme);
        let mut f1 = String::from("strides,window,layer,layer_name,class,inter_f1,intra_f1\n");
        let mut delta = String::from("strides,window,from_layer,to_layer,class,d_inter_f1,d_intra_f1\n");
        for &strides in &cfg.strides {
            for &window in &cfg.windows {
                let fine_set = setting_name(strides, window, fine_scheme);
                let coarse_set = setting_name(strides, window, Scheme::SoundClass);
                let mut prev: Option<(usize, Vec<_>)> = None;
                for &k in &layers {
                    let fine: ProbeReport = read_json(&layout.probe(&fine_set, k, &names[k], "report.json"))?;
                    let coarse: ProbeReport = read_json(&layout.probe(&coarse_set, k, &names[k], "report.json"))?;
                    let rows = inter_intra_f1(&fine, &coarse, &map)?;
                    for r in &rows {
                        let _ = writeln!(
                            f1,
                            "{strides},{window},{k},{},{},{},{}",
                            csv_field(&names[k]),
                            csv_field(&r.class),
                            r.inter_f1,
                            r.intra_f1
                        );
                    }
                    if let Some((pk, prows)) = &prev {
                        for d in f1_deltas(prows, &rows)? {
                            let _ = writeln!(
                                delta,
                                "{strides},{window},{pk},{k},{},{},{}",
                                csv_field(&d.class),
                                d.d_inter_f1,
                                d.d_intra_f1
                            );
                        }
                    }
                    write_file(
                        &layout.plot(&format!("confusion_{coarse_set}_L{k}_{}.svg", names[k])),
                        plot_confusion(&coarse.labels, &coarse.confusion)?,
                    )?;
                    prev = Some((k, rows));
                }
            }
        }
        write_file(&layout.table("class_f1.csv"), f1)?;
        write_file(&layout.table("class_f1_delta.csv"), delta)?;
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hashes every file under the output directory except the manifest.
pub fn build_manifest(cfg: &ExperimentConfig, root: &Path) -> Result<Manifest> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).expect("under root");
        let rel = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        if rel == "manifest.json" {
            continue;
        }
        let bytes = fs::read(entry.path())?;
        files.push(ManifestFile {
            path: rel,
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
    }
    Ok(Manifest {
        format: "ctcprobe-manifest".into(),
        version: 1,
        config: portable(cfg),
        seeds: cfg.seeds().into_iter().collect(),
        files,
    })
}

fn write_manifest(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let m = build_manifest(cfg, &layout.root)?;
    write_json(&layout.manifest(), &m)
}

/// Loads the summary the ASR stage wrote.
pub fn read_asr_summary(root: &Path) -> Result<AsrSummary> {
    read_json(&root.join("asr/summary.json"))
}

/// Loads one probe summary.
pub fn read_probe_summary(path: &Path) -> Result<ProbeSummary> {
    read_json(path)
}
