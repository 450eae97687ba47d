//! Aggregated reports and the plain-text table.

use std::collections::BTreeMap;
use std::fmt::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{calinski_harabasz, davies_bouldin, hungarian_accuracy, nmi, silhouette, Assignment};

/// Metrics for one assignment; a metric that could not be computed is `None`
/// and its reason is kept in `reasons`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    /// Percent.
    pub accuracy: Option<f64>,
    pub nmi: Option<f64>,
    pub silhouette: Option<f64>,
    pub dbi: Option<f64>,
    pub chi: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reasons: BTreeMap<String, String>,
}

fn record(value: crate::Result<f64>, name: &str, reasons: &mut BTreeMap<String, String>) -> Option<f64> {
    match value {
        Ok(v) => Some(v),
        Err(e) => {
            reasons.insert(name.to_string(), e.to_string());
            None
        }
    }
}

/// All applicable metrics; never fails.
pub fn evaluate(points: &Array2<f64>, a: &Assignment) -> ClusterReport {
    let mut reasons = BTreeMap::new();
    let (accuracy, nmi_v) = if a.truth_labels.is_some() {
        (
            record(hungarian_accuracy(a), "accuracy", &mut reasons),
            record(nmi(a), "nmi", &mut reasons),
        )
    } else {
        (None, None)
    };
    ClusterReport {
        accuracy,
        nmi: nmi_v,
        silhouette: record(silhouette(points, &a.cluster_ids), "silhouette", &mut reasons),
        dbi: record(davies_bouldin(points, &a.cluster_ids), "dbi", &mut reasons),
        chi: record(calinski_harabasz(points, &a.cluster_ids), "chi", &mut reasons),
        reasons,
    }
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub clusters: usize,
    pub report: ClusterReport,
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "--".to_string(), |v| format!("{v:.digits$}"))
}

/// Aligned table with columns Method, K, Accuracy, NMI, Silhouette, DBI, CHI (×10³).
pub fn render_table(rows: &[ReportRow]) -> String {
    let header = ["Method", "K", "Accuracy", "NMI", "Silhouette", "DBI", "CHI(x10^3)"];
    let body: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                r.clusters.to_string(),
                cell(r.report.accuracy, 2),
                cell(r.report.nmi, 2),
                cell(r.report.silhouette, 2),
                cell(r.report.dbi, 2),
                cell(r.report.chi.map(|c| c / 1e3), 2),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for row in &body {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: &[&str], out: &mut String| {
        for (i, c) in cells.iter().enumerate() {
            if i == 0 {
                let _ = write!(out, "{c:<w$}", w = width[i]);
            } else {
                let _ = write!(out, "  {c:>w$}", w = width[i]);
            }
        }
        out.push('\n');
    };
    line(&header, &mut out);
    let rule: Vec<String> = width.iter().map(|&w| "-".repeat(w)).collect();
    line(&rule.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
    for row in &body {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn absent_truth_gives_dashes() {
        let p = array![[0.0], [0.1], [5.0], [5.1]];
        let r = evaluate(&p, &Assignment::new(vec![0, 0, 1, 1], None).unwrap());
        assert!(r.accuracy.is_none() && r.nmi.is_none());
        assert!(r.silhouette.is_some() && r.dbi.is_some() && r.chi.is_some());
        let table = render_table(&[ReportRow {
            method: "K-means".into(),
            clusters: 5,
            report: r,
        }]);
        let last = table.lines().nth(2).unwrap();
        assert_eq!(last.split_whitespace().nth(2), Some("--"));
        assert_eq!(last.split_whitespace().nth(3), Some("--"));
    }

    #[test]
    fn perfect_clusters() {
        let p = array![[0.0], [0.01], [100.0], [100.01]];
        let r = evaluate(&p, &Assignment::new(vec![1, 1, 0, 0], Some(vec![0, 0, 1, 1])).unwrap());
        assert_eq!(r.accuracy, Some(100.0));
        assert!((r.nmi.unwrap() - 1.0).abs() < 1e-12);
        assert!(r.silhouette.unwrap() > 0.99);
        assert!(r.reasons.is_empty());
    }

    #[test]
    fn degenerate_metric_is_recorded_not_fatal() {
        let p = array![[0.0], [1.0]];
        let r = evaluate(&p, &Assignment::new(vec![0, 0], Some(vec![0, 1])).unwrap());
        assert_eq!(r.accuracy, Some(50.0));
        assert!(r.silhouette.is_none());
        assert!(r.reasons["silhouette"].contains("undefined"));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"silhouette\":null"));
    }
}
