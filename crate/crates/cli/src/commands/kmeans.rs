use std::path::Path;

use catvac_core::manifest::{Manifest, Split};
use catvac_core::KMeansModel;
use serde_json::json;

use crate::common::{flatten, load_split, write_json, CliError, RunLock};

pub const CKPT_NAME: &str = "kmeans.ckpt";

pub fn run(manifest_path: &Path, k: usize, restarts: usize, out: &Path, seed: u64) -> Result<(), CliError> {
    let manifest = Manifest::load(manifest_path)?;
    let _lock = RunLock::acquire(out)?;
    let items = load_split(&manifest, Split::Train, None)?;
    let points = flatten(&items)?;
    let model = KMeansModel::fit(&points, k, restarts, seed)?;
    model.to_checkpoint().save(&out.join(CKPT_NAME))?;
    write_json(
        &out.join("kmeans.json"),
        &json!({
            "k": k,
            "restarts": restarts,
            "seed": seed,
            "points": points.nrows(),
            "inertia": model.inertia,
            "iterations": model.iterations_run,
        }),
    )?;
    println!(
        "K-means (K = {k}, {restarts} restarts) on {} items: inertia {:.4}, {} iterations",
        points.nrows(),
        model.inertia,
        model.iterations_run
    );
    Ok(())
}
