use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, Provenance, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub label: String,
    pub severity: Option<f32>,
    pub sex: Option<String>,
}

/// Subject → label table read from `subject_id,label[,severity[,sex]]` rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    /// Parses manifest text. A first row starting with `subject_id` is a header.
    pub fn parse(text: &str, name: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let at = |message: String| Error::Parse {
                file: name.to_string(),
                line: i + 1,
                message,
            };
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("subject_id")) {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() < 2 || cells.len() > 4 || cells[0].is_empty() || cells[1].is_empty() {
                return Err(at("expected subject_id,label[,severity[,sex]]".into()));
            }
            let severity = match cells.get(2) {
                Some(s) if !s.is_empty() => Some(
                    s.parse::<f32>()
                        .map_err(|_| at(format!("severity {s:?} is not a number")))?,
                ),
                _ => None,
            };
            let entry = ManifestEntry {
                label: cells[1].to_string(),
                severity,
                sex: cells.get(3).filter(|s| !s.is_empty()).map(|s| s.to_string()),
            };
            if entries.insert(cells[0].to_string(), entry).is_some() {
                return Err(at(format!("subject {} listed twice", cells[0])));
            }
        }
        Ok(Manifest { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Class names in index order: numerically when every label is a
    /// non-negative integer (so `0..=20` keep their values), otherwise sorted.
    pub fn class_names(&self) -> Vec<String> {
        let labels: BTreeSet<&str> = self.entries.values().map(|e| e.label.as_str()).collect();
        let numeric: Option<Vec<usize>> = labels.iter().map(|l| l.parse().ok()).collect();
        match numeric {
            Some(nums) => {
                let max = nums.iter().copied().max().unwrap_or(0);
                (0..=max).map(|n| n.to_string()).collect()
            }
            None => labels.into_iter().map(str::to_string).collect(),
        }
    }

    pub fn lookup(&self, subject: &str) -> Result<(usize, &ManifestEntry)> {
        let entry = self
            .entries
            .get(subject)
            .ok_or_else(|| Error::MissingSubject(subject.to_string()))?;
        let names = self.class_names();
        let index = names
            .iter()
            .position(|n| *n == entry.label)
            .expect("class names cover every label");
        Ok((index, entry))
    }
}

/// Subject of a per-sample file: the stem up to its first underscore.
fn subject_of(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    stem.split('_').next().unwrap_or(stem).to_string()
}

fn parse_sample_csv(text: &str, file: &str, frames: usize, sensors: usize) -> Result<Vec<f32>> {
    let mut data = Vec::with_capacity(frames * sensors);
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let at = |message: String| Error::Parse {
            file: file.to_string(),
            line: i + 1,
            message,
        };
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f32>, _> = cells.iter().map(|c| c.parse::<f32>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if rows == 0 && data.is_empty() && i == 0 => continue,
            Err(_) => return Err(at("non-numeric cell".into())),
        };
        if values.len() != sensors {
            return Err(at(format!("expected {sensors} sensors, found {}", values.len())));
        }
        data.extend(values);
        rows += 1;
    }
    if rows != frames {
        return Err(Error::Parse {
            file: file.to_string(),
            line: 0,
            message: format!("expected {frames} frames, found {rows}"),
        });
    }
    Ok(data)
}

/// Builds a dataset from one `frames × sensors` CSV file per sample, labeled
/// through the manifest by the subject encoded in each file name.
pub fn ingest_generic_csv(
    files: &[PathBuf],
    frames: usize,
    sensors: usize,
    model_shape: [usize; 3],
    manifest: &Manifest,
    group: &str,
) -> Result<Dataset> {
    let mut ds = Dataset::new(frames, sensors, model_shape, manifest.class_names())?;
    let mut sorted = files.to_vec();
    sorted.sort();
    for path in &sorted {
        let name = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| Error::io(&name, e))?;
        let data = parse_sample_csv(&text, &name, frames, sensors)?;
        let subject = subject_of(path);
        let (label, entry) = manifest.lookup(&subject)?;
        ds.push(Sample {
            data,
            label,
            provenance: Provenance {
                recording: path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string(),
                group: group.to_string(),
                window: 0,
            },
            severity: entry.severity,
            heel_strikes: Vec::new(),
        })?;
    }
    Ok(ds)
}
