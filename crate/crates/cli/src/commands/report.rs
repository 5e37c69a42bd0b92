use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gaitxai_core::evaluate::standard_error;
use gaitxai_core::perturbation::{select_model, PerturbationCurve, RankEntry, SELECTION_STEPS};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::files;

#[derive(Deserialize)]
struct MetricsFile {
    architecture: String,
    seed: u64,
    accuracy: f64,
    macro_f1: f64,
    weighted_f1: f64,
}

#[derive(Deserialize)]
struct ExplainFile {
    method: String,
    peak_intervals: BTreeMap<char, usize>,
    top_intervals: BTreeMap<char, usize>,
}

#[derive(Default)]
struct Found {
    metrics: Vec<(PathBuf, MetricsFile)>,
    curves: Vec<(PathBuf, PerturbationCurve)>,
    explains: Vec<(PathBuf, ExplainFile)>,
    censuses: Vec<(PathBuf, serde_json::Value)>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn scan(root: &Path, skip: &Path) -> Result<Found> {
    let mut found = Found::default();
    let walk = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.path() != skip);
    for entry in walk {
        let entry = entry.with_context(|| format!("scanning {}", root.display()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let name = entry.file_name().to_str().unwrap_or_default();
        let parent = path.parent().and_then(Path::file_name).and_then(|n| n.to_str());
        let run = path.parent().unwrap_or(root).to_path_buf();
        match (parent, name) {
            (_, "metrics.json") => found.metrics.push((run, read_json(path)?)),
            (_, "census.json") => found.censuses.push((run, read_json(path)?)),
            (Some("perturb"), n) if n.starts_with("curve_") && n.ends_with(".json") => {
                found.curves.push((run, read_json(path)?));
            }
            (Some("explain"), "summary.json") => found.explains.push((run, read_json(path)?)),
            _ => {}
        }
    }
    Ok(found)
}

#[derive(Serialize)]
struct MetricRow {
    architecture: String,
    metric: &'static str,
    runs: usize,
    seeds: Vec<u64>,
    mean: f64,
    stderr: f64,
}

#[derive(Serialize)]
struct CurveRow {
    model: String,
    method: String,
    runs: usize,
    aopc_mean: f64,
    aopc_stderr: f64,
    scores: Vec<f64>,
    stderr: Vec<f64>,
}

#[derive(Serialize)]
struct Report {
    runs: Vec<String>,
    census: Vec<serde_json::Value>,
    metrics: Vec<MetricRow>,
    perturbation: Option<Vec<CurveRow>>,
    model_ranking: BTreeMap<String, Vec<RankEntry>>,
    attributions: Option<BTreeMap<String, BTreeMap<String, BTreeMap<char, usize>>>>,
    notes: Vec<String>,
}

fn rel(root: &Path, p: &Path) -> String {
    let r = p.strip_prefix(root).unwrap_or(p);
    if r.as_os_str().is_empty() {
        ".".into()
    } else {
        r.display().to_string()
    }
}

pub fn cmd_report(root: &Path) -> Result<()> {
    if !root.is_dir() {
        bail!("{} is not a directory", root.display());
    }
    let out = root.join("report");
    let found = scan(root, &out)?;
    if found.metrics.is_empty() && found.curves.is_empty() && found.explains.is_empty() && found.censuses.is_empty() {
        bail!("no run outputs found under {}", root.display());
    }
    let mut notes = Vec::new();
    let mut runs: Vec<String> = found
        .metrics
        .iter()
        .map(|(p, _)| p.as_path())
        .chain(found.censuses.iter().map(|(p, _)| p.as_path()))
        .chain(found.curves.iter().map(|(p, _)| p.parent().unwrap_or(p)))
        .chain(found.explains.iter().map(|(p, _)| p.parent().unwrap_or(p)))
        .map(|p| rel(root, p))
        .collect();
    runs.sort();
    runs.dedup();

    // Metrics: mean ± standard error over runs, per architecture.
    let mut by_arch: BTreeMap<&str, Vec<&MetricsFile>> = BTreeMap::new();
    for (_, m) in &found.metrics {
        by_arch.entry(&m.architecture).or_default().push(m);
    }
    let mut metrics = Vec::new();
    let mut table = String::from("architecture,metric,runs,mean,stderr,mean_percent / stderr_percent\n");
    for (arch, ms) in &by_arch {
        let picks: [(&'static str, fn(&MetricsFile) -> f64); 3] = [
            ("accuracy", |m| m.accuracy),
            ("macro_f1", |m| m.macro_f1),
            ("weighted_f1", |m| m.weighted_f1),
        ];
        for (metric, get) in picks {
            let values: Vec<f64> = ms.iter().map(|m| get(m)).collect();
            let (mean, se) = standard_error(&values)?;
            let _ = writeln!(
                table,
                "{arch},{metric},{},{mean},{se},{:.2} / {:.2}",
                values.len(),
                100.0 * mean,
                100.0 * se
            );
            metrics.push(MetricRow {
                architecture: arch.to_string(),
                metric,
                runs: values.len(),
                seeds: ms.iter().map(|m| m.seed).collect(),
                mean,
                stderr: se,
            });
        }
    }
    if metrics.is_empty() {
        notes.push("no evaluation metrics found; metrics section omitted".into());
    } else {
        files::write(&out.join("metrics_summary.csv"), &table)?;
    }

    // Perturbation curves: per (model, method), step-wise mean over runs.
    let mut groups: BTreeMap<(String, String), Vec<&PerturbationCurve>> = BTreeMap::new();
    for (_, c) in &found.curves {
        groups.entry((c.model.clone(), c.method.clone())).or_default().push(c);
    }
    let mut curve_rows = Vec::new();
    let mut mean_curves: BTreeMap<String, Vec<PerturbationCurve>> = BTreeMap::new();
    for ((model, method), cs) in &groups {
        let steps = cs[0].steps();
        if cs.iter().any(|c| c.steps() != steps) {
            notes.push(format!("{model}/{method}: runs differ in step count; skipped"));
            continue;
        }
        let mut scores = Vec::with_capacity(steps + 1);
        let mut stderr = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let at: Vec<f64> = cs.iter().map(|c| c.scores[k]).collect();
            let (m, e) = standard_error(&at)?;
            scores.push(m);
            stderr.push(e);
        }
        let aopcs: Vec<f64> = cs.iter().map(|c| c.aopc).collect();
        let (aopc_mean, aopc_stderr) = standard_error(&aopcs)?;
        let mut mean = cs[0].clone();
        mean.scores.clone_from(&scores);
        mean.stderr.clone_from(&stderr);
        mean.aopc = mean.aopc_until(steps);
        mean_curves.entry(method.clone()).or_default().push(mean);
        curve_rows.push(CurveRow {
            model: model.clone(),
            method: method.clone(),
            runs: cs.len(),
            aopc_mean,
            aopc_stderr,
            scores,
            stderr,
        });
    }
    let mut model_ranking = BTreeMap::new();
    for (method, cs) in &mean_curves {
        if cs.len() < 2 {
            continue;
        }
        match select_model(cs, SELECTION_STEPS) {
            Ok(r) => {
                model_ranking.insert(method.clone(), r);
            }
            Err(e) => notes.push(format!("models not ranked for {method}: {e}")),
        }
    }
    let perturbation = if curve_rows.is_empty() {
        notes.push("no perturbation curves found; perturbation section omitted".into());
        None
    } else {
        let mut aopc = String::from("model,method,runs,aopc_mean,aopc_stderr\n");
        let mut steps = String::from("model,method,step,mean_score,stderr\n");
        for r in &curve_rows {
            let _ = writeln!(aopc, "{},{},{},{},{}", r.model, r.method, r.runs, r.aopc_mean, r.aopc_stderr);
            for (k, (s, e)) in r.scores.iter().zip(&r.stderr).enumerate() {
                let _ = writeln!(steps, "{},{},{k},{s},{e}", r.model, r.method);
            }
        }
        files::write(&out.join("aopc_summary.csv"), aopc)?;
        files::write(&out.join("curves_summary.csv"), steps)?;
        Some(curve_rows)
    };

    // Event attributions: interval counts summed over runs, per method.
    let attributions = if found.explains.is_empty() {
        notes.push("no explanations found; attribution section omitted".into());
        None
    } else {
        let mut by_method: BTreeMap<String, BTreeMap<String, BTreeMap<char, usize>>> = BTreeMap::new();
        for (_, e) in &found.explains {
            let slot = by_method.entry(e.method.clone()).or_default();
            for (kind, counts) in [("peaks", &e.peak_intervals), ("top_peaks", &e.top_intervals)] {
                let acc = slot.entry(kind.to_string()).or_default();
                for (c, n) in counts {
                    *acc.entry(*c).or_default() += n;
                }
            }
        }
        let mut csv = String::from("method,kind,interval,count\n");
        for (method, kinds) in &by_method {
            for (kind, counts) in kinds {
                for (c, n) in counts {
                    let _ = writeln!(csv, "{method},{kind},{c},{n}");
                }
            }
        }
        files::write(&out.join("intervals_summary.csv"), csv)?;
        Some(by_method)
    };

    let report = Report {
        runs,
        census: found.censuses.into_iter().map(|(_, v)| v).collect(),
        metrics,
        perturbation,
        model_ranking,
        attributions,
        notes,
    };
    files::write_json(&out.join("report.json"), &report)?;
    if !report.metrics.is_empty() {
        print!("{table}");
    }
    for n in &report.notes {
        eprintln!("note: {n}");
    }
    println!("report written to {}", out.display());
    Ok(())
}
