//! Frame datasets from model taps, probe classifiers and the analyses run
//! on their predictions.

mod dataset;
mod probe;
mod report;

pub use dataset::{extract_frames, extract_layers, ExtractOptions, FrameDataset, Provenance, DATASET_MAGIC};
pub use probe::{Dense, ProbeConfig, TrainedProbe};
pub use report::{
    breakdown_by_ctc_symbol, class_map, evaluate_probe, f1, f1_deltas, inter_intra_f1, sound_class_names, Breakdown,
    CategoryStat, ClassF1, ClassF1Delta, LabelStats, ProbeReport,
};
pub(crate) use report::csv_field;
