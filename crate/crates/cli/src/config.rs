//! Run configuration: a flat `key = value` file layered over defaults, with
//! `--set key=value` and dedicated flags applied last.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use gaitxai_core::gait::{ClassProfile, SegmentConfig, SynthConfig};
use gaitxai_core::network::{ArchConfig, Architecture};
use gaitxai_core::perturbation::{CurveConfig, RegionSpec, ScoreKind};
use gaitxai_core::relevance::Method;
use gaitxai_core::rng;
use gaitxai_core::train::{AdamConfig, TrainConfig};

/// Directory that relative `data_dir` and `manifest` paths are resolved against.
pub const DATA_ROOT_ENV: &str = "GAITXAI_DATA_ROOT";

const DEFAULTS: &[(&str, &str, &str)] = &[
    ("task", "synthetic", "synthetic | pd-severity | binary | identity | cognitive-load | gender"),
    ("seed", "42", "run seed; split, init, shuffle and noise streams derive from it"),
    ("out", "run", "output directory"),
    ("dataset", "", "dataset archive (default <out>/dataset.grfd)"),
    ("model", "", "model file (default <out>/model.grfx)"),
    ("data_dir", "", "recordings directory"),
    ("manifest", "", "subject manifest CSV"),
    ("groups", "", "comma-separated recording groups to keep (e.g. Ga)"),
    ("window", "500", "frames per sample"),
    ("sensors", "18", "channels per frame of generic CSV input"),
    ("model_shape", "50x15x12", "model input shape HxWxC"),
    ("split", "0.6,0.2,0.2", "train, validation and test fractions"),
    ("synth.classes", "4", "synthetic severity classes"),
    ("synth.samples_per_class", "150", ""),
    ("synth.noise", "", "sensor noise std in newtons (generator default if empty)"),
    ("synth.body_weight_spread", "", "relative body-weight spread (generator default if empty)"),
    ("synth.phase_spread", "", "start-phase spread in cycles (generator default if empty)"),
    ("arch", "single", "single | parallel | quadruplet"),
    ("arch.hidden", "", "dense units before the output layer"),
    ("arch.dropout", "", "dropout rate before the output layer"),
    ("epochs", "200", ""),
    ("batch_size", "200", ""),
    ("learning_rate", "0.002", ""),
    ("early_stop", "", "epochs without validation improvement before stopping"),
    ("explain.method", "lrp_spf", "explanation method"),
    ("explain.limit", "10", "samples to explain; 0 for all"),
    ("explain.include_misclassified", "false", ""),
    ("segment.threshold", "0.2", "heel-strike threshold as a fraction of the series range"),
    ("segment.refractory", "40", "frames between heel strikes"),
    ("perturb.methods", "lrp_spf,epsilon_only,gradient_x_input", ""),
    ("perturb.steps", "20", ""),
    ("perturb.seeds", "5", "noise seeds"),
    ("perturb.samples", "0", "test samples to perturb; 0 for all"),
    ("perturb.score", "accuracy", "accuracy | probability"),
    ("perturb.region", "7x7x1", "region extents HxWxC"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Synthetic,
    PdSeverity,
    Binary,
    Identity,
    CognitiveLoad,
    Gender,
}

impl FromStr for Task {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "synthetic" => Task::Synthetic,
            "pd-severity" => Task::PdSeverity,
            "binary" => Task::Binary,
            "identity" => Task::Identity,
            "cognitive-load" => Task::CognitiveLoad,
            "gender" => Task::Gender,
            other => bail!("unknown task {other:?}"),
        })
    }
}

/// Raw values by key, defaults first.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigMap(BTreeMap<String, String>);

impl Default for ConfigMap {
    fn default() -> Self {
        ConfigMap(DEFAULTS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect())
    }
}

impl ConfigMap {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match self.0.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => {
                let known: Vec<&str> = DEFAULTS.iter().map(|(k, ..)| *k).collect();
                bail!("unknown config key {key:?}; known keys: {}", known.join(", "))
            }
        }
    }

    /// Applies `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value, got {pair:?}"))?;
        self.set(k, v)
    }

    pub fn apply_text(&mut self, text: &str, name: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line).with_context(|| format!("{name}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn get(&self, key: &str) -> &str {
        self.0.get(key).map(String::as_str).expect("key has a default")
    }

    /// The resolved configuration in the file format, keys sorted.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.0 {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(key);
        raw.parse().map_err(|e| anyhow!("config {key} = {raw:?}: {e}"))
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.get(key).is_empty() {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        Some(self.get(key)).filter(|v| !v.is_empty()).map(PathBuf::from)
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let out = PathBuf::from(self.get("out"));
        let split = parse_list::<f64>(self.get("split"), "split")?;
        let split: [f64; 3] = split
            .try_into()
            .map_err(|_| anyhow!("config split needs three fractions"))?;
        let seed: u64 = self.parse("seed")?;

        let mut synth = SynthConfig {
            samples_per_class: self.parse("synth.samples_per_class")?,
            seed,
            ..SynthConfig::default()
        };
        let classes: usize = self.parse("synth.classes")?;
        // The generator's severity ramp, extended past its four default classes.
        synth.classes = (0..classes)
            .map(|i| ClassProfile {
                name: format!("severity{i}"),
                amplitude: (1.0 - 0.1 * i as f64).max(0.1),
                asymmetry: (0.15 * i as f64).min(0.9),
                jitter: i + 1,
            })
            .collect();
        if let Some(v) = self.optional("synth.noise")? {
            synth.noise = v;
        }
        if let Some(v) = self.optional("synth.body_weight_spread")? {
            synth.body_weight_spread = v;
        }
        if let Some(v) = self.optional("synth.phase_spread")? {
            synth.phase_spread = v;
        }

        let mut arch_cfg = ArchConfig::default();
        if let Some(v) = self.optional("arch.hidden")? {
            arch_cfg.hidden = v;
        }
        if let Some(v) = self.optional("arch.dropout")? {
            arch_cfg.dropout = v;
        }
        let arch: Architecture = self.parse("arch")?;
        if arch == Architecture::Custom {
            bail!("config arch must be single, parallel or quadruplet");
        }

        let train = TrainConfig {
            batch_size: self.parse("batch_size")?,
            epochs: self.parse("epochs")?,
            split,
            seed,
            adam: AdamConfig {
                learning_rate: self.parse("learning_rate")?,
                ..AdamConfig::default()
            },
            early_stop: self.optional("early_stop")?,
        };

        let methods = self
            .get("perturb.methods")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<Method>().map_err(anyhow::Error::from))
            .collect::<Result<Vec<_>>>()?;
        let n_seeds: usize = self.parse("perturb.seeds")?;
        let curve = CurveConfig {
            region: RegionSpec {
                extents: parse_shape(self.get("perturb.region"), "perturb.region")?,
            },
            steps: self.parse("perturb.steps")?,
            kind: self.parse::<ScoreKind>("perturb.score")?,
            seeds: (0..n_seeds)
                .map(|i| rng::sub_seed(seed, &format!("{}/{i}", rng::NOISE)))
                .collect(),
        };

        let groups = self
            .get("groups")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();

        Ok(RunConfig {
            task: self.parse("task")?,
            seed,
            dataset: self.path("dataset").unwrap_or_else(|| out.join("dataset.grfd")),
            model: self.path("model").unwrap_or_else(|| out.join("model.grfx")),
            out,
            data_dir: self.path("data_dir").map(with_data_root),
            manifest: self.path("manifest").map(with_data_root),
            groups,
            window: self.parse("window")?,
            sensors: self.parse("sensors")?,
            model_shape: parse_shape(self.get("model_shape"), "model_shape")?,
            synth,
            arch,
            arch_cfg,
            train,
            explain_method: self.parse("explain.method")?,
            explain_limit: self.parse("explain.limit")?,
            include_misclassified: self.parse("explain.include_misclassified")?,
            segment: SegmentConfig {
                threshold: self.parse("segment.threshold")?,
                refractory: self.parse("segment.refractory")?,
                ..SegmentConfig::default()
            },
            perturb_methods: methods,
            perturb_samples: self.parse("perturb.samples")?,
            curve,
        })
    }
}

fn with_data_root(p: PathBuf) -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p,
    }
}

fn parse_list<T: FromStr>(raw: &str, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(|s| s.trim().parse().map_err(|e| anyhow!("config {key}: {s:?}: {e}")))
        .collect()
}

fn parse_shape(raw: &str, key: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = raw
        .split('x')
        .map(|s| s.trim().parse().map_err(|e| anyhow!("config {key}: {s:?}: {e}")))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| anyhow!("config {key} = {raw:?} must look like HxWxC"))
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: PathBuf,
    pub model: PathBuf,
    pub data_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub groups: Vec<String>,
    pub window: usize,
    pub sensors: usize,
    pub model_shape: [usize; 3],
    pub synth: SynthConfig,
    pub arch: Architecture,
    pub arch_cfg: ArchConfig,
    pub train: TrainConfig,
    pub explain_method: Method,
    pub explain_limit: usize,
    pub include_misclassified: bool,
    pub segment: SegmentConfig,
    pub perturb_methods: Vec<Method>,
    pub perturb_samples: usize,
    pub curve: CurveConfig,
}

impl RunConfig {
    pub fn split_seed(&self) -> u64 {
        rng::sub_seed(self.seed, rng::SPLIT)
    }

    pub fn init_seed(&self) -> u64 {
        rng::sub_seed(self.seed, rng::INIT)
    }
}

/// Key listing for `--help`-style output.
pub fn describe_keys() -> String {
    let mut out = String::new();
    for (k, v, doc) in DEFAULTS {
        let _ = writeln!(out, "{k:<32} {:<14} {doc}", if v.is_empty() { "-" } else { v });
    }
    out
}
