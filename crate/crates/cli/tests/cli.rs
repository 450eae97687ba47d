use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use catvac_core::metrics::ReportRow;
use catvac_core::{synth, FeatureConfig, ModelConfig, RunConfig, TrainConfig};
use tempfile::TempDir;

fn catvac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catvac"))
        .args(args)
        .env_remove("CATVAC_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn catvac")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_wav(path: &Path, samples: &[f64], rate: u32) {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0) as i16).unwrap();
    }
    w.finalize().unwrap();
}

/// Writes `per_class` clips of each synthetic band plus a manifest. Every fourth clip of a
/// class is assigned to the test split.
fn toy_dataset(dir: &Path, per_class: usize) -> PathBuf {
    let clips = synth::band_noise_dataset(&synth::DEFAULT_BANDS, per_class, 1.0, 16_000, 5);
    let mut lines = Vec::new();
    let mut seen = [0usize; 3];
    for (i, clip) in clips.iter().enumerate() {
        let label = clip.label.unwrap();
        let name = format!("clip{i:03}.wav");
        write_wav(&dir.join(&name), &clip.samples, clip.sample_rate);
        let split = if seen[label] % 4 == 3 { "test" } else { "train" };
        seen[label] += 1;
        lines.push(format!(r#"{{"path": "{name}", "label": {label}, "split": "{split}"}}"#));
    }
    let manifest = dir.join("manifest.ndjson");
    fs::write(&manifest, lines.join("\n")).unwrap();
    manifest
}

fn write_config(dir: &Path, epochs: usize, cache_dir: &Path) -> PathBuf {
    let features = FeatureConfig::spoken_digits();
    let mut train = TrainConfig::new(3, 0.5, epochs);
    train.batch_size = 8;
    let cfg = RunConfig {
        model: ModelConfig::new(3, features.target_frames, features.freq_bins()),
        features,
        train,
        manifest: dir.join("manifest.ndjson"),
        cache_dir: cache_dir.to_path_buf(),
    };
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

struct Prepared {
    dir: TempDir,
    manifest: PathBuf,
    config: PathBuf,
    cache: PathBuf,
}

fn prepared(per_class: usize, epochs: usize) -> Prepared {
    let dir = TempDir::new().unwrap();
    let manifest = toy_dataset(dir.path(), per_class);
    let cache = dir.path().join("cache");
    let config = write_config(dir.path(), epochs, &cache);
    let o = catvac(&["prepare", "--manifest", p(&manifest), "--config", p(&config), "--out", p(&cache)]);
    assert!(o.status.success(), "{}", stderr(&o));
    Prepared {
        dir,
        manifest,
        config,
        cache,
    }
}

fn cache_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "cvac"))
        .collect();
    files.sort();
    files
}

fn epoch_losses(path: &Path) -> Vec<(usize, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (v["epoch"].as_u64().unwrap() as usize, v["loss"]["total"].as_f64().unwrap())
        })
        .collect()
}

#[test]
fn prepare_writes_one_cache_per_clip_and_is_reproducible() {
    let run = prepared(4, 1);
    let files = cache_files(&run.cache);
    assert_eq!(files.len(), 12);
    assert!(run.cache.join("stats.json").exists());
    assert!(run.cache.join("manifest.ndjson").exists());
    assert!(!run.cache.join(".catvac.lock").exists());

    let again = run.dir.path().join("cache2");
    let o = catvac(&["prepare", "--manifest", p(&run.manifest), "--config", p(&run.config), "--out", p(&again)]);
    assert!(o.status.success());
    for f in files {
        let twin = again.join(f.file_name().unwrap());
        assert_eq!(fs::read(&f).unwrap(), fs::read(twin).unwrap(), "{}", f.display());
    }
}

#[test]
fn empty_manifest_is_a_user_error() {
    let dir = TempDir::new().unwrap();
    let manifest = dir.path().join("manifest.ndjson");
    fs::write(&manifest, "# nothing here\n").unwrap();
    let config = write_config(dir.path(), 1, &dir.path().join("cache"));
    let o = catvac(&["prepare", "--manifest", p(&manifest), "--config", p(&config), "--out", p(&dir.path().join("c"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no records"), "{}", stderr(&o));
}

#[test]
fn unreadable_files_are_listed_and_skipped() {
    let dir = TempDir::new().unwrap();
    let manifest = toy_dataset(dir.path(), 4);
    fs::write(dir.path().join("clip001.wav"), b"not a wav").unwrap();
    let config = write_config(dir.path(), 1, &dir.path().join("cache"));
    let out = dir.path().join("cache");
    let o = catvac(&["prepare", "--manifest", p(&manifest), "--config", p(&config), "--out", p(&out)]);
    // One of twelve is well over the 1% budget.
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("clip001.wav"));
    assert_eq!(cache_files(&out).len(), 11);
    assert!(fs::read_to_string(out.join("skipped.txt")).unwrap().contains("clip001.wav"));
}

#[test]
fn locked_run_directory_is_refused() {
    let dir = TempDir::new().unwrap();
    let manifest = toy_dataset(dir.path(), 2);
    let out = dir.path().join("cache");
    let config = write_config(dir.path(), 1, &out);
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".catvac.lock"), "12345\n").unwrap();
    let o = catvac(&["prepare", "--manifest", p(&manifest), "--config", p(&config), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("in use"), "{}", stderr(&o));
}

#[test]
fn train_needs_prepared_caches() {
    let dir = TempDir::new().unwrap();
    let cache = dir.path().join("nowhere");
    let config = write_config(dir.path(), 1, &cache);
    let o = catvac(&["train", "--config", p(&config), "--out", p(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));
}

#[test]
fn train_rejects_mismatched_shapes_before_training() {
    let run = prepared(2, 1);
    let mut cfg: RunConfig = serde_json::from_str(&fs::read_to_string(&run.config).unwrap()).unwrap();
    cfg.model = ModelConfig::new(3, 64, 64);
    fs::write(&run.config, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = run.dir.path().join("run");
    let o = catvac(&["train", "--config", p(&run.config), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(!out.join("epochs.ndjson").exists());
}

#[test]
fn train_resume_and_eval_end_to_end() {
    let run = prepared(4, 3);
    let full = run.dir.path().join("full");
    let o = catvac(&["train", "--config", p(&run.config), "--out", p(&full)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["final.ckpt", "best.ckpt", "last.ckpt", "config.json"] {
        assert!(full.join(name).exists(), "{name}");
    }
    let losses = epoch_losses(&full.join("epochs.ndjson"));
    assert_eq!(losses.iter().map(|l| l.0).collect::<Vec<_>>(), vec![0, 1, 2]);

    let part = run.dir.path().join("part");
    let o = catvac(&["train", "--config", p(&run.config), "--out", p(&part), "--stop-after", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(epoch_losses(&part.join("epochs.ndjson")).len(), 1);
    let last = part.join("last.ckpt");
    let o = catvac(&["train", "--config", p(&run.config), "--out", p(&part), "--resume", p(&last)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resumed = epoch_losses(&part.join("epochs.ndjson"));
    assert_eq!(resumed.len(), 3);
    for (a, b) in losses.iter().zip(&resumed) {
        assert_eq!(a.0, b.0);
        assert!((a.1 - b.1).abs() <= 1e-6, "epoch {}: {} vs {}", a.0, a.1, b.1);
    }

    let cached = run.cache.join("manifest.ndjson");
    let km = run.dir.path().join("km");
    let o = catvac(&["kmeans", "--manifest", p(&cached), "--k", "3", "--restarts", "4", "--out", p(&km)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let km5 = run.dir.path().join("km5");
    let o = catvac(&["kmeans", "--manifest", p(&cached), "--k", "5", "--restarts", "2", "--out", p(&km5)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let report = run.dir.path().join("report");
    let ckpt = full.join("final.ckpt");
    let jobs: [(&Path, &str, &Path); 4] = [
        (&ckpt, "model", &run.manifest),
        (&km.join("kmeans.ckpt"), "kmeans", &cached),
        (&km5.join("kmeans.ckpt"), "kmeans", &cached),
        (&ckpt, "labels", &cached),
    ];
    for (ck, source, manifest) in jobs {
        let o = catvac(&["eval", "--ckpt", p(ck), "--manifest", p(manifest), "--source", source, "--out", p(&report)]);
        assert!(o.status.success(), "{source}: {}", stderr(&o));
    }
    let rows: Vec<ReportRow> = serde_json::from_str(&fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    let labels = rows.iter().find(|r| r.method == "None (labels)").unwrap();
    assert_eq!(labels.report.accuracy, Some(100.0));
    assert!((labels.report.nmi.unwrap() - 1.0).abs() < 1e-12);
    let five = rows.iter().find(|r| r.clusters == 5).unwrap();
    assert_eq!((five.report.accuracy, five.report.nmi), (None, None));
    assert!(rows.iter().any(|r| r.method == "Cat. VAE" && r.report.accuracy.is_some()));
    let table = fs::read_to_string(report.join("report.txt")).unwrap();
    assert!(table.contains("K-means") && table.contains("Cat. VAE") && table.contains("--"));
}

#[test]
fn seed_comes_from_the_environment() {
    let run = prepared(2, 1);
    let out = run.dir.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_catvac"))
        .args(["train", "--config", p(&run.config), "--out", p(&out)])
        .env("CATVAC_SEED", "4242")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let snapshot: RunConfig = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(snapshot.train.seed, 4242);
}

#[test]
fn labels_source_needs_labels() {
    let run = prepared(4, 1);
    let text = fs::read_to_string(run.cache.join("manifest.ndjson")).unwrap();
    let unlabeled: String = text
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("label");
            format!("{v}\n")
        })
        .collect();
    let manifest = run.cache.join("unlabeled.ndjson");
    fs::write(&manifest, unlabeled).unwrap();
    let o = catvac(&["eval", "--manifest", p(&manifest), "--source", "labels", "--out", p(&run.dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("labels"), "{}", stderr(&o));
}

#[test]
fn bad_arguments_exit_with_one() {
    let o = catvac(&["eval", "--source", "nonsense"]);
    assert_eq!(o.status.code(), Some(1));
}
