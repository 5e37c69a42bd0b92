use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use gaitxai_core::gait::{
    dataset_from_recordings, ingest_generic_csv, read_physionet_dir, save_dataset, standardize, synthesize_gait,
    Cohort, Dataset, Manifest,
};

use crate::config::{RunConfig, Task};
use crate::files;

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let ds = synthesize_gait(&cfg.synth)?;
    finish(cfg, ds)
}

pub fn ingest(cfg: &RunConfig) -> Result<()> {
    let dir = cfg
        .data_dir
        .as_deref()
        .ok_or_else(|| anyhow!("config data_dir is required for ingest"))?;
    let ds = match cfg.task {
        Task::Synthetic => bail!("task synthetic has no recordings to ingest; use the synth command"),
        Task::PdSeverity | Task::Binary => ingest_force_plate(cfg, dir)?,
        Task::Identity | Task::CognitiveLoad | Task::Gender => ingest_csv(cfg, dir)?,
    };
    finish(cfg, ds)
}

fn manifest(cfg: &RunConfig) -> Result<Manifest> {
    let path = cfg.manifest.as_deref().ok_or_else(|| {
        anyhow!("manifest required for task {}", task_name(cfg.task))
    })?;
    Ok(Manifest::load(path)?)
}

fn task_name(task: Task) -> &'static str {
    match task {
        Task::Synthetic => "synthetic",
        Task::PdSeverity => "pd-severity",
        Task::Binary => "binary",
        Task::Identity => "identity",
        Task::CognitiveLoad => "cognitive-load",
        Task::Gender => "gender",
    }
}

fn report_failures(failures: &[(String, gaitxai_core::Error)]) -> Result<()> {
    if failures.is_empty() {
        return Ok(());
    }
    for (file, err) in failures {
        eprintln!("parse failure: {file}: {err}");
    }
    bail!("{} file(s) failed to parse", failures.len())
}

fn ingest_force_plate(cfg: &RunConfig, dir: &std::path::Path) -> Result<Dataset> {
    // Read the manifest first so a missing one fails before any parsing.
    let manifest = match cfg.task {
        Task::PdSeverity => Some(manifest(cfg)?),
        _ => None,
    };
    let (mut recordings, failures) = read_physionet_dir(dir)?;
    report_failures(&failures)?;
    if !cfg.groups.is_empty() {
        recordings.retain(|r| cfg.groups.contains(&r.group));
    }
    if recordings.is_empty() {
        bail!("no recordings found in {}", dir.display());
    }
    let (ds, short) = match &manifest {
        Some(m) => dataset_from_recordings(&recordings, cfg.window, cfg.model_shape, m.class_names(), |rec| {
            let (label, entry) = m.lookup(&rec.subject)?;
            Ok((label, entry.severity))
        })?,
        None => dataset_from_recordings(
            &recordings,
            cfg.window,
            cfg.model_shape,
            vec!["control".into(), "patient".into()],
            |rec| Ok((usize::from(rec.cohort == Some(Cohort::Patient)), None)),
        )?,
    };
    for id in short {
        eprintln!("warning: {id} is shorter than one window and was skipped");
    }
    Ok(ds)
}

fn ingest_csv(cfg: &RunConfig, dir: &std::path::Path) -> Result<Dataset> {
    let manifest = manifest(cfg)?;
    let manifest_path = cfg.manifest.as_deref().and_then(|p| fs::canonicalize(p).ok());
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .filter(|p| fs::canonicalize(p).ok() != manifest_path)
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no CSV samples found in {}", dir.display());
    }
    let group = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("csv")
        .to_string();
    let ingest = |f: &[PathBuf]| ingest_generic_csv(f, cfg.window, cfg.sensors, cfg.model_shape, &manifest, &group);
    // Check files one at a time so every failure is listed, not just the first.
    let failures: Vec<(String, gaitxai_core::Error)> = files
        .iter()
        .filter_map(|f| ingest(std::slice::from_ref(f)).err().map(|e| (f.display().to_string(), e)))
        .collect();
    report_failures(&failures)?;
    Ok(ingest(&files)?)
}

/// Splits, standardizes and saves a dataset, then writes its census.
fn finish(cfg: &RunConfig, mut ds: Dataset) -> Result<()> {
    for w in ds.assign_split(cfg.train.split, cfg.split_seed())? {
        eprintln!("warning: {w}");
    }
    let stats = standardize(&mut ds)?;
    for (c, _) in stats.degenerate.iter().enumerate().filter(|(_, d)| **d) {
        eprintln!("warning: channel {c} is constant on the training split and was only centered");
    }
    files::ensure_parent(&cfg.dataset)?;
    save_dataset(&ds, &cfg.dataset)?;
    let census = ds.census();
    files::write(&cfg.out.join("census.txt"), census.to_text())?;
    files::write_json(&cfg.out.join("census.json"), &census)?;
    print!("{}", census.to_text());
    Ok(())
}
