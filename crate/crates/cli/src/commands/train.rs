use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader};
use std::path::Path;

use catvac_core::checkpoint::Checkpoint;
use catvac_core::manifest::{Manifest, Split};
use catvac_core::trainer::Trainer;
use catvac_core::{EpochLog, FeatureTensor, NormStats, RunConfig};
use log::info;

use super::prepare::{MANIFEST_NAME, STATS_NAME};
use crate::common::{append_ndjson, load_split, user, write_json, CliError, RunLock};

pub const LOG_NAME: &str = "epochs.ndjson";
pub const LAST_NAME: &str = "last.ckpt";
pub const FINAL_NAME: &str = "final.ckpt";
pub const BEST_NAME: &str = "best.ckpt";

pub fn run(
    config_path: &Path,
    out: &Path,
    resume: Option<&Path>,
    seed: Option<u64>,
    stop_after: Option<usize>,
) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }

    let manifest_path = cfg.cache_dir.join(MANIFEST_NAME);
    if !manifest_path.exists() {
        return Err(user(format!("missing cache {} (run prepare first)", manifest_path.display())));
    }
    let manifest = Manifest::load(&manifest_path)?;
    if let Some(missing) = manifest.records.iter().map(|r| &r.path).find(|p| !p.exists()) {
        return Err(user(format!("missing cache {}", missing.display())));
    }
    let stats: NormStats = serde_json::from_str(&fs::read_to_string(cfg.cache_dir.join(STATS_NAME))?)?;
    let train = load_split(&manifest, Split::Train, None)?;
    let val = match manifest.count(Split::Val) {
        0 => None,
        _ => Some(load_split(&manifest, Split::Val, None)?),
    };
    check_shapes(&cfg, train.iter().chain(val.iter().flatten()))?;

    let _lock = RunLock::acquire(out)?;
    write_json(&out.join("config.json"), &cfg)?;

    let mut trainer = match resume {
        Some(path) => Trainer::<f32>::resume(&Checkpoint::load(path)?, cfg.train.clone())?,
        None => Trainer::<f32>::new(cfg.model.clone(), cfg.train.clone())?,
    };
    trainer.set_norm_stats(Some(stats));
    let log_path = out.join(LOG_NAME);
    keep_epochs_before(&log_path, trainer.next_epoch())?;
    let mut log_file = OpenOptions::new().create(true).append(true).open(&log_path)?;
    info!(
        "training {} items for epochs {}..{}",
        train.len(),
        trainer.next_epoch(),
        cfg.train.epochs
    );

    let features = cfg.features.clone();
    let with_features = move |mut c: Checkpoint| {
        c.meta.features = Some(features.clone());
        c
    };
    let mut ran = 0;
    while !trainer.is_done() && stop_after.is_none_or(|n| ran < n) {
        let log = trainer.run_epoch(&train, val.as_deref())?;
        info!(
            "epoch {}: loss {:.4} (recon {:.4}, kl_z {:.4}, kl_y {:.4}), tau {:.3}, lr {:.2e}",
            log.epoch, log.loss.total, log.loss.recon, log.loss.kl_gauss, log.loss.kl_cat, log.tau, log.lr
        );
        append_ndjson(&mut log_file, &log)?;
        with_features(trainer.checkpoint()).save(&out.join(LAST_NAME))?;
        ran += 1;
    }
    if !trainer.is_done() {
        println!(
            "stopped after epoch {}; continue with --resume {}",
            trainer.next_epoch() - 1,
            out.join(LAST_NAME).display()
        );
        return Ok(());
    }

    let last = with_features(trainer.checkpoint());
    last.save(&out.join(FINAL_NAME))?;
    // The best snapshot only exists for epochs run by this process; after a resume
    // the earlier best may still be on disk.
    match trainer.best_checkpoint() {
        Some(best) => with_features(best.clone()).save(&out.join(BEST_NAME))?,
        None if !out.join(BEST_NAME).exists() => last.save(&out.join(BEST_NAME))?,
        None => {}
    }
    println!(
        "trained {} epochs; checkpoints in {}",
        cfg.train.epochs,
        out.display()
    );
    Ok(())
}

fn check_shapes<'a>(cfg: &RunConfig, items: impl Iterator<Item = &'a FeatureTensor>) -> Result<(), CliError> {
    let want = (cfg.model.input_frames, cfg.model.input_freq_bins);
    for t in items {
        if (t.frames(), t.freq_bins()) != want {
            return Err(user(format!(
                "cached features are T x F = {:?} but the model expects {want:?}",
                (t.frames(), t.freq_bins())
            )));
        }
    }
    Ok(())
}

/// Drops log lines for epochs that are about to be re-run, so the file always
/// describes one trajectory.
fn keep_epochs_before(path: &Path, next_epoch: usize) -> Result<(), CliError> {
    if !path.exists() {
        return Ok(());
    }
    let mut kept = String::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let log: EpochLog = serde_json::from_str(&line)?;
        if log.epoch < next_epoch {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}
