//! Clustering evaluation: matched accuracy, NMI, silhouette, Davies-Bouldin and
//! Calinski-Harabasz.

mod geometry;
mod hungarian;
mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use geometry::{calinski_harabasz, davies_bouldin, silhouette, CHI_CAP};
pub use hungarian::{max_weight_matching, min_cost_assignment};
pub use report::{evaluate, render_table, ClusterReport, ReportRow};

/// Predicted cluster ids with optional ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub cluster_ids: Vec<usize>,
    pub truth_labels: Option<Vec<usize>>,
}

impl Assignment {
    pub fn new(cluster_ids: Vec<usize>, truth_labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(t) = &truth_labels {
            if t.len() != cluster_ids.len() {
                return Err(Error::Shape(format!(
                    "{} cluster ids but {} truth labels",
                    cluster_ids.len(),
                    t.len()
                )));
            }
        }
        Ok(Self {
            cluster_ids,
            truth_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.cluster_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cluster_ids.is_empty()
    }

    fn truth(&self) -> Result<&[usize]> {
        let t = self
            .truth_labels
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("truth labels absent".into()))?;
        if self.cluster_ids.is_empty() {
            return Err(Error::NoRecords);
        }
        Ok(t)
    }
}

/// Maps arbitrary ids to `0..m` in order of first appearance.
pub(crate) fn compress(ids: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = ids
        .iter()
        .map(|&id| {
            let next = map.len();
            *map.entry(id).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// Counts `[cluster][truth]`.
fn contingency(pred: &[usize], truth: &[usize]) -> Vec<Vec<f64>> {
    let (p, kp) = compress(pred);
    let (t, kt) = compress(truth);
    let mut c = vec![vec![0.0; kt]; kp];
    for (&a, &b) in p.iter().zip(&t) {
        c[a][b] += 1.0;
    }
    c
}

/// Percentage of items correctly labeled under the best one-to-one mapping
/// from clusters to classes.
pub fn hungarian_accuracy(a: &Assignment) -> Result<f64> {
    let truth = a.truth()?;
    let c = contingency(&a.cluster_ids, truth);
    let (matched, _) = max_weight_matching(&c);
    Ok(100.0 * matched / a.len() as f64)
}

fn entropy(counts: impl Iterator<Item = f64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0.0)
        .map(|c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the geometric mean of the two entropies.
pub fn nmi(a: &Assignment) -> Result<f64> {
    let truth = a.truth()?;
    let c = contingency(&a.cluster_ids, truth);
    let n = a.len() as f64;
    let rows: Vec<f64> = c.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..c[0].len()).map(|j| c.iter().map(|r| r[j]).sum()).collect();
    let hc = entropy(rows.iter().copied(), n);
    let ht = entropy(cols.iter().copied(), n);
    if hc == 0.0 || ht == 0.0 {
        // Both single-cluster: the labelings agree.
        return Ok(if hc == 0.0 && ht == 0.0 { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (i, row) in c.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0.0 {
                mi += nij / n * (n * nij / (rows[i] * cols[j])).ln();
            }
        }
    }
    Ok((mi / (hc * ht).sqrt()).clamp(0.0, 1.0))
}
