//! Probe reports, the CTC-symbol breakdown and sound-class F1 analysis.

use serde::{Deserialize, Serialize};

use super::dataset::{FrameDataset, Provenance};
use super::probe::TrainedProbe;
use crate::acoustic::Corpus;
use crate::alphabet::SymbolCategory;
use crate::ctc::greedy_decode;
use crate::error::{invalid, Error, Result};
use crate::model::{ForwardOptions, TrainedModel};
use crate::par;
use crate::phoneset::{PhoneInventory, Scheme, SoundClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub label: String,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub n_frames: usize,
    pub labels: Vec<String>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub per_label: Vec<LabelStats>,
    pub provenance: Option<Provenance>,
}

/// `2pr / (p + r)`, 0 when both are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl ProbeReport {
    pub fn from_confusion(labels: Vec<String>, confusion: Vec<Vec<usize>>, provenance: Option<Provenance>) -> Result<Self> {
        let n = labels.len();
        if confusion.len() != n || confusion.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch(format!("confusion matrix must be {n}×{n}")));
        }
        let total: usize = confusion.iter().flatten().sum();
        let trace: usize = (0..n).map(|i| confusion[i][i]).sum();
        let per_label = (0..n)
            .map(|i| {
                let support: usize = confusion[i].iter().sum();
                let predicted: usize = confusion.iter().map(|r| r[i]).sum();
                let tp = confusion[i][i];
                LabelStats {
                    label: labels[i].clone(),
                    support,
                    precision: ratio(tp, predicted),
                    recall: ratio(tp, support),
                    // 2TP / (2TP + FP + FN), the same value as 2pr / (p + r)
                    f1: ratio(2 * tp, support + predicted),
                }
            })
            .collect();
        Ok(ProbeReport {
            accuracy: ratio(trace, total),
            n_frames: total,
            labels,
            confusion,
            per_label,
            provenance,
        })
    }

    pub fn from_predictions(labels: Vec<String>, truth: &[usize], predicted: &[usize], provenance: Option<Provenance>) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::ShapeMismatch("truth and prediction lengths differ".into()));
        }
        let n = labels.len();
        let mut confusion = vec![vec![0; n]; n];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= n || p >= n {
                return Err(invalid(format!("label index outside 0..{n}")));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(labels, confusion, provenance)
    }

    /// Confusion matrix as CSV with a header row of predicted labels.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for l in &self.labels {
            s.push(',');
            s.push_str(&csv_field(l));
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.confusion) {
            s.push_str(&csv_field(l));
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn evaluate_probe(probe: &TrainedProbe, dataset: &FrameDataset) -> Result<ProbeReport> {
    if probe.labels != dataset.label_names {
        return Err(Error::ShapeMismatch("probe and dataset label sets differ".into()));
    }
    let predicted = probe.predict(&dataset.vectors)?;
    ProbeReport::from_predictions(
        dataset.label_names.clone(),
        &dataset.labels,
        &predicted,
        Some(dataset.provenance.clone()),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStat {
    pub category: String,
    pub frames: usize,
    pub share: f64,
    /// `None` when no frame fell in the category.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub overall_accuracy: f64,
    pub n_frames: usize,
    pub categories: Vec<CategoryStat>,
    pub provenance: Provenance,
}

impl Breakdown {
    /// Builds the table from per-frame categories and correctness flags.
    pub fn from_frames(categories: &[SymbolCategory], correct: &[bool], provenance: Provenance) -> Result<Self> {
        if categories.len() != correct.len() {
            return Err(Error::ShapeMismatch("category and correctness lengths differ".into()));
        }
        if categories.is_empty() {
            return Err(Error::EmptyInput("breakdown over no frames".into()));
        }
        let n = categories.len();
        let cats = SymbolCategory::ALL
            .iter()
            .map(|&c| {
                let (mut frames, mut hits) = (0, 0);
                for (&k, &ok) in categories.iter().zip(correct) {
                    if k == c {
                        frames += 1;
                        hits += usize::from(ok);
                    }
                }
                CategoryStat {
                    category: c.name().to_string(),
                    frames,
                    share: frames as f64 / n as f64,
                    accuracy: (frames > 0).then(|| hits as f64 / frames as f64),
                }
            })
            .collect();
        Ok(Breakdown {
            overall_accuracy: correct.iter().filter(|&&c| c).count() as f64 / n as f64,
            n_frames: n,
            categories: cats,
            provenance,
        })
    }

    /// `Σ share · accuracy` over non-empty categories.
    pub fn recombined_accuracy(&self) -> f64 {
        self.categories
            .iter()
            .filter_map(|c| c.accuracy.map(|a| a * c.share))
            .sum()
    }
}

/// Splits probe accuracy by what the model's greedy CTC output emits at each
/// frame. The dataset's layer must run at the output layer's frame rate.
pub fn breakdown_by_ctc_symbol(probe: &TrainedProbe, dataset: &FrameDataset, model: &TrainedModel, corpus: &Corpus) -> Result<Breakdown> {
    let prov = &dataset.provenance;
    let cfg = &model.config;
    let (f_layer, _) = cfg.time_mapping(prov.layer, prov.strides_enabled)?;
    let (f_out, _) = cfg.time_mapping(cfg.num_layers(), prov.strides_enabled)?;
    if f_layer != f_out {
        return Err(invalid(format!(
            "layer {} runs at 1/{f_layer} of the input frame rate, the output layer at 1/{f_out}",
            prov.layer_name
        )));
    }
    if dataset.utt_ids.len() != corpus.utterances.len()
        || dataset.utt_ids.iter().zip(&corpus.utterances).any(|(a, u)| a != &u.id)
    {
        return Err(invalid("dataset utterances do not match the corpus"));
    }
    let opts = ForwardOptions {
        strides_enabled: prov.strides_enabled,
        ..Default::default()
    };
    let decoded = par::map(&corpus.utterances, |u| {
        model
            .forward(&[&u.spectrogram.frames], &opts)
            .map(|p| greedy_decode(&p.log_probs[0], &cfg.alphabet))
    });
    let predicted = probe.predict(&dataset.vectors)?;
    let mut categories = Vec::with_capacity(dataset.len());
    for (i, d) in decoded.into_iter().enumerate() {
        let d = d?;
        let n = dataset.utt_offsets[i + 1] - dataset.utt_offsets[i];
        if d.categories.len() != n {
            return Err(invalid(format!(
                "utterance {}: {} output frames vs {} dataset frames",
                dataset.utt_ids[i],
                d.categories.len(),
                n
            )));
        }
        categories.extend(d.categories);
    }
    let correct: Vec<bool> = predicted.iter().zip(&dataset.labels).map(|(p, t)| p == t).collect();
    Breakdown::from_frames(&categories, &correct, prov.clone())
}

/// Sound-class index of every label under `scheme`.
pub fn class_map(inventory: &PhoneInventory, scheme: Scheme) -> Vec<usize> {
    let labels = inventory.labels(scheme);
    let fine = inventory.label_map(scheme);
    let mut out = vec![usize::MAX; labels.len()];
    for (p, &l) in fine.iter().enumerate() {
        if out[l] == usize::MAX {
            out[l] = inventory.class_of(p) as usize;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassF1 {
    pub class: String,
    pub inter_f1: f64,
    pub intra_f1: f64,
}

/// Per coarse class: the F1 of the coarse probe (inter), and the fine
/// probe's micro-averaged F1 inside the class counting only in-class
/// predictions (intra). With every prediction and truth restricted to the
/// class, micro precision and recall coincide at
/// `Σ_{p∈c} C[p][p] / Σ_{p,q∈c} C[p][q]`.
pub fn inter_intra_f1(fine: &ProbeReport, coarse: &ProbeReport, class_map: &[usize]) -> Result<Vec<ClassF1>> {
    if class_map.len() != fine.labels.len() {
        return Err(invalid(format!(
            "class map covers {} labels, fine report has {}",
            class_map.len(),
            fine.labels.len()
        )));
    }
    if let Some((i, _)) = class_map.iter().enumerate().find(|(_, &c)| c >= coarse.labels.len()) {
        return Err(invalid(format!("label {} maps to no coarse class", fine.labels[i])));
    }
    Ok((0..coarse.labels.len())
        .map(|c| {
            let members: Vec<usize> = (0..class_map.len()).filter(|&i| class_map[i] == c).collect();
            let mut hits = 0;
            let mut within = 0;
            for &p in &members {
                hits += fine.confusion[p][p];
                for &q in &members {
                    within += fine.confusion[p][q];
                }
            }
            ClassF1 {
                class: coarse.labels[c].clone(),
                inter_f1: coarse.per_label[c].f1,
                intra_f1: ratio(hits, within),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassF1Delta {
    pub class: String,
    pub d_inter_f1: f64,
    pub d_intra_f1: f64,
}

/// `later − earlier` per class.
pub fn f1_deltas(earlier: &[ClassF1], later: &[ClassF1]) -> Result<Vec<ClassF1Delta>> {
    if earlier.len() != later.len() || earlier.iter().zip(later).any(|(a, b)| a.class != b.class) {
        return Err(invalid("F1 tables cover different classes"));
    }
    Ok(earlier
        .iter()
        .zip(later)
        .map(|(a, b)| ClassF1Delta {
            class: a.class.clone(),
            d_inter_f1: b.inter_f1 - a.inter_f1,
            d_intra_f1: b.intra_f1 - a.intra_f1,
        })
        .collect())
}

/// Names of the six sound classes in report order.
pub fn sound_class_names() -> Vec<String> {
    SoundClass::ALL.iter().map(|c| c.name().to_string()).collect()
}
