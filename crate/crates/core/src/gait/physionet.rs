use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{FRAME_RATE_HZ, PD_CHANNELS};
use crate::error::{Error, Result};

/// Columns in a force-plate text file: time plus the 18 force channels.
const COLUMNS: usize = PD_CHANNELS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cohort {
    Patient,
    Control,
}

impl Cohort {
    pub fn as_str(&self) -> &'static str {
        match self {
            Cohort::Patient => "patient",
            Cohort::Control => "control",
        }
    }
}

/// Fields encoded in a file name such as `GaPt03_01.txt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordName {
    pub group: String,
    pub cohort: Cohort,
    pub subject: u32,
    pub walk: u32,
}

impl RecordName {
    /// `GaPt03`: group, cohort tag and the subject number as written.
    pub fn subject_id(&self) -> String {
        let tag = match self.cohort {
            Cohort::Patient => "Pt",
            Cohort::Control => "Co",
        };
        format!("{}{}{:02}", self.group, tag, self.subject)
    }
}

fn name_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^([A-Z][a-z])(Pt|Co)(\d+)_(\d+)\.txt$").expect("valid pattern"))
}

pub fn parse_physionet_name(filename: &str) -> Result<RecordName> {
    let base = Path::new(filename)
        .file_name()
        .and_then(|f| f.to_str())
        .unwrap_or(filename);
    let bad = |message: String| Error::Parse {
        file: filename.to_string(),
        line: 0,
        message,
    };
    let caps = name_pattern()
        .captures(base)
        .ok_or_else(|| bad("file name does not match <Group><Pt|Co><subject>_<walk>.txt".into()))?;
    let number = |i: usize| caps[i].parse::<u32>().map_err(|_| bad(format!("number {:?} out of range", &caps[i])));
    Ok(RecordName {
        group: caps[1].to_string(),
        cohort: if &caps[2] == "Pt" { Cohort::Patient } else { Cohort::Control },
        subject: number(3)?,
        walk: number(4)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    /// File stem, e.g. `GaPt03_01`.
    pub id: String,
    pub group: String,
    pub cohort: Option<Cohort>,
    pub subject: String,
    pub walk: u32,
    pub frame_rate: f64,
    pub channels: usize,
    /// `frames × channels`, row-major.
    pub data: Vec<f32>,
}

impl RawRecording {
    pub fn frames(&self) -> usize {
        self.data.len() / self.channels
    }
}

/// Reads whitespace-separated rows of time plus 18 force values. The time
/// column is dropped; blank lines are ignored.
pub fn parse_physionet_record(reader: impl BufRead, filename: &str) -> Result<RawRecording> {
    let name = parse_physionet_name(filename)?;
    let mut data = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(filename, e))?;
        let at = |message: String| Error::Parse {
            file: filename.to_string(),
            line: i + 1,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let mut n = 0;
        for (col, cell) in line.split_whitespace().enumerate() {
            n += 1;
            if n > COLUMNS {
                continue;
            }
            let v: f32 = cell
                .parse()
                .map_err(|_| at(format!("column {}: {cell:?} is not a number", col + 1)))?;
            if !v.is_finite() {
                return Err(at(format!("column {}: non-finite value", col + 1)));
            }
            if col > 0 {
                data.push(v);
            }
        }
        if n != COLUMNS {
            return Err(at(format!("expected {COLUMNS} columns, found {n}")));
        }
    }
    Ok(RawRecording {
        id: Path::new(filename)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(filename)
            .to_string(),
        subject: name.subject_id(),
        group: name.group,
        cohort: Some(name.cohort),
        walk: name.walk,
        frame_rate: FRAME_RATE_HZ,
        channels: PD_CHANNELS,
        data,
    })
}

/// Parses every file in `dir` whose name follows the recording pattern, in
/// file-name order. Other files are ignored; files that fail to parse are
/// returned with their errors instead of aborting the scan.
pub fn read_physionet_dir(dir: &Path) -> Result<(Vec<RawRecording>, Vec<(String, Error)>)> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().map(str::to_string))
        .filter(|n| name_pattern().is_match(n))
        .collect();
    names.sort();
    let mut recordings = Vec::new();
    let mut failures = Vec::new();
    for n in names {
        let path = dir.join(&n);
        let parsed = fs::File::open(&path)
            .map_err(|e| Error::io(path.display().to_string(), e))
            .and_then(|f| parse_physionet_record(BufReader::new(f), &n));
        match parsed {
            Ok(r) => recordings.push(r),
            Err(e) => failures.push((n, e)),
        }
    }
    Ok((recordings, failures))
}
