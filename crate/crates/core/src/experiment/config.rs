use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustic::{StftConfig, SynthConfig};
use crate::clustering::{ProjectionMethod, TsneConfig, DEFAULT_MIN_COVERAGE};
use crate::error::{Error, Result};
use crate::model::{preset_with, ModelConfig, TapPoint};
use crate::phoneset::{PhoneInventory, Scheme};
use crate::probing::ProbeConfig;
use crate::trainer::TrainConfig;

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "CTCPROBE_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSpec {
    /// Two corpora from the same generator: one trains the acoustic model,
    /// the other feeds the probes. `probe_utterances = 0` probes the ASR
    /// corpus itself.
    Synthetic {
        asr_utterances: usize,
        probe_utterances: usize,
        inventory_size: usize,
        noise_stddev: f64,
    },
    /// TIMIT-style directories of audio plus phone files.
    Import {
        asr_dir: PathBuf,
        /// Falls back to `asr_dir` when absent.
        probe_dir: Option<PathBuf>,
        /// Phone table file; the built-in TIMIT table when absent.
        phone_table: Option<PathBuf>,
        #[serde(default)]
        stft: StftConfig,
    },
}

impl CorpusSpec {
    pub fn synth_config(&self, seed: u64) -> Option<SynthConfig> {
        match *self {
            CorpusSpec::Synthetic {
                inventory_size,
                noise_stddev,
                ..
            } => {
                let mut c = SynthConfig::with_inventory(inventory_size, seed);
                c.noise_stddev = noise_stddev;
                Some(c)
            }
            CorpusSpec::Import { .. } => None,
        }
    }

    pub fn inventory(&self) -> Result<PhoneInventory> {
        match self {
            CorpusSpec::Synthetic { .. } => Ok(self.synth_config(0).expect("synthetic").inventory()),
            CorpusSpec::Import { phone_table, .. } => match phone_table {
                Some(p) => PhoneInventory::load(p),
                None => Ok(PhoneInventory::timit()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub preset: String,
    pub hidden_size: Option<usize>,
    pub conv_channels: Option<usize>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<ModelConfig> {
        preset_with(&self.preset, self.hidden_size, self.conv_channels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringSpec {
    /// Layers to cluster; empty skips the stage.
    pub layers: Vec<usize>,
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub min_coverage: f64,
    pub projection: ProjectionMethod,
}

impl Default for ClusteringSpec {
    fn default() -> Self {
        ClusteringSpec {
            layers: Vec::new(),
            k: 500,
            max_iter: 100,
            tol: 1e-4,
            min_coverage: DEFAULT_MIN_COVERAGE,
            projection: ProjectionMethod::Tsne(TsneConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Relative paths resolve against `$CTCPROBE_OUTPUT_ROOT` when set.
    pub output_dir: PathBuf,
    pub corpus: CorpusSpec,
    pub model: ModelSpec,
    pub asr_training: TrainConfig,
    pub probe: ProbeConfig,
    /// Share of probe-corpus utterances held out for the reported accuracy.
    pub probe_test_fraction: f64,
    /// Layers to probe; all taps when absent.
    pub probe_layers: Option<Vec<usize>>,
    pub strides: Vec<bool>,
    pub windows: Vec<usize>,
    pub schemes: Vec<Scheme>,
    pub tap_point: TapPoint,
    pub clustering: ClusteringSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("ctcprobe-out"),
            corpus: CorpusSpec::Synthetic {
                asr_utterances: 200,
                probe_utterances: 200,
                inventory_size: 20,
                noise_stddev: 0.2,
            },
            model: ModelSpec {
                preset: "ds2-mini".into(),
                hidden_size: None,
                conv_channels: None,
            },
            asr_training: TrainConfig::asr_default(),
            probe: ProbeConfig::default(),
            probe_test_fraction: 0.1,
            probe_layers: None,
            strides: vec![true],
            windows: vec![0],
            schemes: vec![Scheme::Full],
            tap_point: TapPoint::PostActivation,
            clustering: ClusteringSpec::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Output directory after applying the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() && !root.is_empty() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut m = self.model.build().map_err(|e| config_err(e.to_string()))?;
        if let Some(sc) = self.corpus.synth_config(0) {
            m.input_freq_bins = sc.freq_bins;
        }
        m.seed = derive_seed(self.seed, "model/init");
        Ok(m)
    }

    /// Layers that the probe, extract and report stages cover.
    pub fn layers(&self, model: &ModelConfig) -> Vec<usize> {
        self.probe_layers.clone().unwrap_or_else(|| (0..=model.num_layers()).collect())
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        let model = self.model_config()?;
        model.validate().map_err(|e| config_err(e.to_string()))?;
        let n_taps = model.num_layers() + 1;
        let check_layers = |what: &str, ls: &[usize]| -> Result<()> {
            if let Some(&bad) = ls.iter().find(|&&k| k >= n_taps) {
                return Err(config_err(format!(
                    "{what} layer {bad} is out of range; preset {} has taps 0..={}",
                    self.model.preset,
                    n_taps - 1
                )));
            }
            Ok(())
        };
        if let Some(ls) = &self.probe_layers {
            if ls.is_empty() {
                return Err(config_err("probe_layers is empty"));
            }
            check_layers("probe", ls)?;
        }
        check_layers("clustering", &self.clustering.layers)?;
        let probed = self.layers(&model);
        if let Some(k) = self.clustering.layers.iter().find(|k| !probed.contains(k)) {
            return Err(config_err(format!("clustering layer {k} is not among the probed layers")));
        }
        if self.strides.is_empty() || self.windows.is_empty() || self.schemes.is_empty() {
            return Err(config_err("strides, windows and schemes each need at least one entry"));
        }
        for (name, dup) in [
            ("strides", has_dup(&self.strides)),
            ("windows", has_dup(&self.windows)),
            ("schemes", has_dup(&self.schemes)),
        ] {
            if dup {
                return Err(config_err(format!("{name} lists a value twice")));
            }
        }
        if !(self.probe_test_fraction > 0.0 && self.probe_test_fraction < 1.0) {
            return Err(config_err("probe_test_fraction must be in (0, 1)"));
        }
        self.asr_training.validate().map_err(|e| config_err(format!("asr_training: {e}")))?;
        self.probe.train.validate().map_err(|e| config_err(format!("probe: {e}")))?;
        if self.probe.hidden_size == 0 || !(0.0..1.0).contains(&self.probe.dropout) {
            return Err(config_err("probe needs hidden_size ≥ 1 and dropout in [0, 1)"));
        }
        match &self.corpus {
            CorpusSpec::Synthetic {
                asr_utterances,
                probe_utterances,
                ..
            } => {
                if *asr_utterances < 2 {
                    return Err(config_err("asr_utterances must be ≥ 2"));
                }
                if *probe_utterances == 1 {
                    return Err(config_err("probe_utterances must be 0 or ≥ 2"));
                }
                self.corpus
                    .synth_config(0)
                    .expect("synthetic")
                    .validate()
                    .map_err(|e| config_err(e.to_string()))?;
            }
            CorpusSpec::Import { .. } => {
                self.corpus.inventory().map_err(|e| config_err(e.to_string()))?;
            }
        }
        let c = &self.clustering;
        if !c.layers.is_empty() {
            if c.k == 0 {
                return Err(config_err("clustering.k must be ≥ 1"));
            }
            if !(c.min_coverage > 0.0 && c.min_coverage <= 1.0) {
                return Err(config_err("clustering.min_coverage must be in (0, 1]"));
            }
        }
        Ok(())
    }

    /// Every seed the run uses, keyed by its derivation tag.
    pub fn seeds(&self) -> Vec<(String, u64)> {
        let mut tags = vec![
            "synth/asr".to_string(),
            "synth/probe".into(),
            "model/init".into(),
            "asr/train".into(),
        ];
        if let Ok(model) = self.model_config() {
            for s in &self.strides {
                for &w in &self.windows {
                    for &scheme in &self.schemes {
                        for k in self.layers(&model) {
                            tags.push(format!("probe/{}/L{k}", setting_name(*s, w, scheme)));
                        }
                    }
                }
            }
            for &k in &self.clustering.layers {
                tags.push(format!("kmeans/L{k}"));
                tags.push(format!("projection/L{k}"));
            }
        }
        tags.into_iter().map(|t| (t.clone(), derive_seed(self.seed, &t))).collect()
    }
}

fn has_dup<T: PartialEq>(xs: &[T]) -> bool {
    xs.iter().enumerate().any(|(i, x)| xs[..i].contains(x))
}

/// Directory-safe name of one extraction setting.
pub fn setting_name(strides: bool, window: usize, scheme: Scheme) -> String {
    format!("{}_w{window}_{scheme}", if strides { "strided" } else { "unstrided" })
}

/// Stage seed: the first 8 bytes of `sha256(seed ‖ tag)`.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
