use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use catvac_core::checkpoint::{Checkpoint, CheckpointKind};
use catvac_core::gumbel::argmax;
use catvac_core::manifest::{Manifest, Split};
use catvac_core::metrics::{self, render_table, Assignment, ReportRow};
use catvac_core::{trainer, KMeansModel};
use ndarray::Array2;

use crate::common::{flatten, load_split, user, write_json, CliError, RunLock};
use crate::Source;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

pub fn run(ckpt: Option<&Path>, manifest_path: &Path, source: Source, out: &Path) -> Result<(), CliError> {
    let manifest = Manifest::load(manifest_path)?;
    let ckpt = match (source, ckpt) {
        (Source::Labels, None) => None,
        (_, Some(p)) => Some(Checkpoint::load(p)?),
        (_, None) => return Err(user("--ckpt is required for this source")),
    };
    let audio = ckpt
        .as_ref()
        .and_then(|c| c.meta.features.as_ref().zip(c.meta.norm.as_ref()));
    let items = load_split(&manifest, Split::Test, audio)?;
    let truth: Option<Vec<usize>> = items.iter().map(|t| t.label).collect();

    let (method, k, ids, points) = match source {
        Source::Model => {
            let ckpt = expect_kind(ckpt, CheckpointKind::CatVae)?;
            let k = ckpt.meta.model.as_ref().map_or(0, |m| m.k);
            let probs = trainer::cluster_probabilities(&items, &ckpt)?;
            let ids = probs.rows().into_iter().map(|r| argmax(r.as_slice().expect("contiguous"))).collect();
            // Geometry is measured where the model clusters: the simplex of class probabilities.
            ("Cat. VAE", k, ids, probs)
        }
        Source::Kmeans => {
            let model = KMeansModel::from_checkpoint(&expect_kind(ckpt, CheckpointKind::KMeans)?)?;
            let points = flatten(&items)?;
            ("K-means", model.k(), model.predict(&points)?, points)
        }
        Source::Labels => {
            let ids = truth
                .clone()
                .ok_or_else(|| user("labels requested but the test split has unlabeled records"))?;
            let k = ids.iter().collect::<BTreeSet<_>>().len();
            ("None (labels)", k, ids, flatten(&items)?)
        }
    };
    let row = score(method, k, ids, truth, &points)?;

    let _lock = RunLock::acquire(out)?;
    let json_path = out.join(REPORT_JSON);
    let mut rows: Vec<ReportRow> = if json_path.exists() {
        serde_json::from_str(&fs::read_to_string(&json_path)?)?
    } else {
        Vec::new()
    };
    rows.retain(|r| !(r.method == row.method && r.clusters == row.clusters));
    rows.push(row);
    write_json(&json_path, &rows)?;
    let table = render_table(&rows);
    fs::write(out.join(REPORT_TXT), &table)?;
    print!("{table}");
    Ok(())
}

fn expect_kind(ckpt: Option<Checkpoint>, kind: CheckpointKind) -> Result<Checkpoint, CliError> {
    let ckpt = ckpt.expect("loaded for every non-label source");
    if ckpt.meta.kind != kind {
        return Err(user(format!("checkpoint is {:?}, expected {kind:?}", ckpt.meta.kind)));
    }
    Ok(ckpt)
}

fn score(
    method: &str,
    clusters: usize,
    ids: Vec<usize>,
    truth: Option<Vec<usize>>,
    points: &Array2<f64>,
) -> Result<ReportRow, CliError> {
    let classes = truth.as_ref().map(|t| t.iter().collect::<BTreeSet<_>>().len());
    // Accuracy and NMI are only reported when clusters and classes correspond one to one.
    let (truth, mismatch) = match classes {
        Some(c) if c != clusters => (None, Some(format!("{clusters} clusters for {c} classes"))),
        _ => (truth, None),
    };
    let assignment = Assignment::new(ids, truth)?;
    let mut report = metrics::evaluate(points, &assignment);
    if let Some(reason) = mismatch {
        report.reasons.insert("accuracy".into(), reason.clone());
        report.reasons.insert("nmi".into(), reason);
    }
    Ok(ReportRow {
        method: method.to_string(),
        clusters,
        report,
    })
}
