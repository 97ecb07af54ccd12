//! End-to-end experiments: configuration, the staged pipeline that writes
//! an artifact directory, and the SVG figures.

mod config;
mod plots;
mod run;

pub use config::{derive_seed, setting_name, ClusteringSpec, CorpusSpec, ExperimentConfig, ModelSpec, OUTPUT_ROOT_ENV};
pub use plots::{plot_centroids, plot_confusion, plot_layer_accuracy, AccuracySeries};
pub use run::{
    build_manifest, read_asr_summary, read_probe_summary, run, run_stage, sha256_hex, AsrSummary, ClusterReport, Layout,
    Manifest, ManifestFile, ProbeSummary, Stage,
};
