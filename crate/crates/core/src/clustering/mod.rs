//! k-means over frame vectors, majority labels and coverage pruning of the
//! clusters, and 2-D projections of their centroids.

mod kmeans;
mod projection;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::Matrix;

pub use kmeans::{kmeans, KMeans, KMeansConfig};
pub use projection::{pca_2d, tsne_2d, Pca, Tsne, TsneConfig};

/// Non-empty clusters with their majority label. `cluster_ids` index the
/// original k-means clusters so pruned summaries stay traceable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_ids: Vec<usize>,
    pub centroids: Matrix,
    pub counts: Vec<usize>,
    pub majority_label: Vec<usize>,
    pub majority_count: Vec<usize>,
    /// `majority_count / count`, in `(0, 1]`.
    pub coverage: Vec<f64>,
    pub label_names: Vec<String>,
    pub inertia: f64,
}

impl ClusterSummary {
    pub fn len(&self) -> usize {
        self.cluster_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cluster_ids.is_empty()
    }

    /// Tallies labels per cluster; majority ties go to the lowest label.
    pub fn from_kmeans(km: &KMeans, labels: &[usize], label_names: Vec<String>) -> Result<Self> {
        if labels.len() != km.assignment.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} points",
                labels.len(),
                km.assignment.len()
            )));
        }
        let k = km.centroids.rows;
        let n_labels = label_names.len();
        let mut tally = vec![vec![0usize; n_labels]; k];
        for (&a, &l) in km.assignment.iter().zip(labels) {
            if l >= n_labels {
                return Err(invalid(format!("label {l} outside {n_labels} names")));
            }
            tally[a][l] += 1;
        }
        let mut s = ClusterSummary {
            cluster_ids: Vec::new(),
            centroids: Matrix::zeros(0, km.centroids.cols),
            counts: Vec::new(),
            majority_label: Vec::new(),
            majority_count: Vec::new(),
            coverage: Vec::new(),
            label_names,
            inertia: km.inertia(),
        };
        for (j, t) in tally.iter().enumerate() {
            let count: usize = t.iter().sum();
            if count == 0 {
                continue;
            }
            let mut best = 0;
            for (l, &c) in t.iter().enumerate() {
                if c > t[best] {
                    best = l;
                }
            }
            s.cluster_ids.push(j);
            s.centroids.data.extend_from_slice(km.centroids.row(j));
            s.centroids.rows += 1;
            s.counts.push(count);
            s.majority_label.push(best);
            s.majority_count.push(t[best]);
            s.coverage.push(t[best] as f64 / count as f64);
        }
        Ok(s)
    }

    fn select(&self, keep: &[usize]) -> ClusterSummary {
        let mut centroids = Matrix::zeros(keep.len(), self.centroids.cols);
        for (r, &i) in keep.iter().enumerate() {
            centroids.row_mut(r).copy_from_slice(self.centroids.row(i));
        }
        let pick = |v: &[usize]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        ClusterSummary {
            cluster_ids: pick(&self.cluster_ids),
            centroids,
            counts: pick(&self.counts),
            majority_label: pick(&self.majority_label),
            majority_count: pick(&self.majority_count),
            coverage: keep.iter().map(|&i| self.coverage[i]).collect(),
            label_names: self.label_names.clone(),
            inertia: self.inertia,
        }
    }

    /// `cluster_id,majority_label,coverage,count[,x,y]`
    pub fn to_csv(&self, coords: Option<&Matrix>) -> String {
        let mut s = String::from("cluster_id,majority_label,coverage,count");
        if coords.is_some() {
            s.push_str(",x,y");
        }
        s.push('\n');
        for i in 0..self.len() {
            s.push_str(&format!(
                "{},{},{},{}",
                self.cluster_ids[i],
                crate::probing::csv_field(&self.label_names[self.majority_label[i]]),
                self.coverage[i],
                self.counts[i]
            ));
            if let Some(c) = coords {
                s.push_str(&format!(",{},{}", c.get(i, 0), c.get(i, 1)));
            }
            s.push('\n');
        }
        s
    }
}

/// Default coverage threshold for pruning noisy clusters.
pub const DEFAULT_MIN_COVERAGE: f64 = 0.15;

/// Keeps clusters whose majority label covers at least `min_coverage` of
/// their members.
pub fn prune_clusters(summary: &ClusterSummary, min_coverage: f64) -> Result<ClusterSummary> {
    if !(min_coverage > 0.0 && min_coverage <= 1.0) {
        return Err(invalid(format!("min_coverage {min_coverage} outside (0, 1]")));
    }
    let keep: Vec<usize> = (0..summary.len())
        .filter(|&i| summary.coverage[i] >= min_coverage)
        .collect();
    Ok(summary.select(&keep))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ProjectionMethod {
    Pca,
    Tsne(TsneConfig),
}

/// `k × 2` layout of centroids.
pub fn project_2d(centroids: &Matrix, method: &ProjectionMethod) -> Result<Matrix> {
    match method {
        ProjectionMethod::Pca => Ok(pca_2d(centroids)?.coords),
        ProjectionMethod::Tsne(cfg) => Ok(tsne_2d(centroids, cfg)?.coords),
    }
}
