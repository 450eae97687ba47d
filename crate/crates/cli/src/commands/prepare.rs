use std::fs;
use std::path::{Path, PathBuf};

use catvac_core::features::{self, write_cache};
use catvac_core::manifest::{Manifest, ManifestRecord, Split};
use catvac_core::RunConfig;
use log::{info, warn};
use rayon::prelude::*;

use crate::common::{spectrogram, user, write_json, CliError, RunLock};

pub const STATS_NAME: &str = "stats.json";
pub const MANIFEST_NAME: &str = "manifest.ndjson";
pub const SKIPPED_NAME: &str = "skipped.txt";

/// Tolerated share of unreadable clips.
const MAX_SKIPPED: f64 = 0.01;

pub fn run(manifest_path: &Path, config_path: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let manifest = Manifest::load(manifest_path)?;
    let _lock = RunLock::acquire(out)?;

    let results: Vec<_> = manifest
        .records
        .par_iter()
        .map(|rec| spectrogram(rec, &cfg.features))
        .collect();

    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for (i, (rec, r)) in manifest.records.iter().zip(results).enumerate() {
        match r {
            Ok(spec) => kept.push((i, rec, spec)),
            Err(e) => {
                warn!("skipping {}: {e}", rec.path.display());
                skipped.push(format!("{}\t{e}", rec.path.display()));
            }
        }
    }

    let train: Vec<_> = kept
        .iter()
        .filter(|(_, r, _)| r.split == Split::Train)
        .map(|(_, _, s)| s.clone())
        .collect();
    if train.is_empty() {
        return Err(user("no readable train records to fit normalization on"));
    }
    let (_, stats) = features::normalize(&train, None)?;

    let specs: Vec<_> = kept.iter().map(|(_, _, s)| s.clone()).collect();
    let (tensors, _) = features::finalize(&specs, Some(&stats), &cfg.features)?;
    let written: Vec<ManifestRecord> = kept
        .par_iter()
        .zip(tensors.par_iter())
        .map(|((i, rec, _), t)| {
            let name = ManifestRecord::cache_name(*i);
            write_cache(&out.join(&name), t)?;
            Ok(ManifestRecord {
                path: PathBuf::from(name),
                label: rec.label,
                split: rec.split,
            })
        })
        .collect::<catvac_core::Result<_>>()?;

    write_json(&out.join(STATS_NAME), &stats)?;
    fs::write(out.join(MANIFEST_NAME), Manifest { records: written }.to_ndjson()?)?;
    fs::write(out.join(SKIPPED_NAME), skipped.join("\n"))?;

    let shape = tensors.first().map(|t| (t.frames(), t.freq_bins()));
    println!(
        "prepared {} of {} clips (train {}, val {}, test {}); feature shape T x F = {:?}",
        kept.len(),
        manifest.records.len(),
        kept.iter().filter(|k| k.1.split == Split::Train).count(),
        kept.iter().filter(|k| k.1.split == Split::Val).count(),
        kept.iter().filter(|k| k.1.split == Split::Test).count(),
        shape.unwrap_or_default()
    );
    info!("caches in {}", out.display());

    if !skipped.is_empty() {
        eprintln!("skipped {} unreadable file(s):", skipped.len());
        for s in &skipped {
            eprintln!("  {s}");
        }
        if skipped.len() as f64 > MAX_SKIPPED * manifest.records.len() as f64 {
            return Err(user(format!(
                "{} of {} files unreadable, more than {}%",
                skipped.len(),
                manifest.records.len(),
                MAX_SKIPPED * 100.0
            )));
        }
    }
    Ok(())
}
