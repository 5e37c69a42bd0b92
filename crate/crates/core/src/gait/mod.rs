//! Gait data: ingestion, windowing, standardization, reshaping, synthetic
//! recordings, and gait-event segmentation of signals and relevance maps.
//!
//! Samples are stored as `frames × channels` windows (time-major, channel
//! minor). A model sees a window through [`reshape_sample`], which reinterprets
//! the same row-major sequence under the model's input shape.

mod archive;
mod events;
mod physionet;
mod prep;
mod synth;
mod tabular;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use archive::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use events::{
    assign_events_to_relevance, interval_at, left_foot_series, segment_gait_cycle, spatial_average, EventPeak,
    GaitEventTimeline, SegmentConfig, INTERVALS,
};
pub use physionet::{parse_physionet_name, parse_physionet_record, read_physionet_dir, Cohort, RawRecording, RecordName};
pub use prep::{dataset_from_recordings, reshape_sample, standardize, unreshape_sample, window_recording, ChannelStats, Window};
pub use synth::{synthesize_gait, ClassProfile, SynthConfig};
pub use tabular::{ingest_generic_csv, Manifest, ManifestEntry};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::{split_dataset, Example, Split, SplitAssignment};

/// Frames per window in the force-plate layout.
pub const PD_FRAMES: usize = 500;
/// 16 sensors plus a per-foot total for each foot.
pub const PD_CHANNELS: usize = 18;
pub const PD_MODEL_SHAPE: [usize; 3] = [50, 15, 12];
const _: () = assert!(PD_FRAMES * PD_CHANNELS == PD_MODEL_SHAPE[0] * PD_MODEL_SHAPE[1] * PD_MODEL_SHAPE[2]);
pub const FRAME_RATE_HZ: f64 = 100.0;

/// Channel indices of the force-plate layout.
pub mod channels {
    use std::ops::Range;

    pub const LEFT_SENSORS: Range<usize> = 0..8;
    pub const RIGHT_SENSORS: Range<usize> = 8..16;
    pub const LEFT_TOTAL: usize = 16;
    pub const RIGHT_TOTAL: usize = 17;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub recording: String,
    pub group: String,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `frames × channels`, row-major.
    pub data: Vec<f32>,
    pub label: usize,
    pub provenance: Provenance,
    pub severity: Option<f32>,
    /// Heel-strike frames known by construction (synthetic data only).
    pub heel_strikes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: usize,
    pub channels: usize,
    pub model_shape: [usize; 3],
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
    pub split: Option<SplitAssignment>,
    pub stats: Option<ChannelStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Census {
    pub total: usize,
    pub frames: usize,
    pub channels: usize,
    pub per_class: BTreeMap<String, usize>,
    pub per_group: BTreeMap<String, usize>,
    pub per_split: BTreeMap<String, usize>,
}

impl Census {
    pub fn to_text(&self) -> String {
        let mut out = format!("samples {} ({}x{})\n", self.total, self.frames, self.channels);
        for (k, v) in &self.per_group {
            let _ = writeln!(out, "group {k}: {v}");
        }
        for (k, v) in &self.per_class {
            let _ = writeln!(out, "class {k}: {v}");
        }
        for (k, v) in &self.per_split {
            let _ = writeln!(out, "split {k}: {v}");
        }
        out
    }
}

impl Dataset {
    pub fn new(frames: usize, channels: usize, model_shape: [usize; 3], class_names: Vec<String>) -> Result<Self> {
        if frames * channels != model_shape.iter().product::<usize>() || frames == 0 || channels == 0 {
            return Err(Error::InvalidShape {
                shape: model_shape.to_vec(),
                reason: format!("does not hold a {frames}x{channels} window"),
            });
        }
        if class_names.is_empty() {
            return Err(Error::invalid("a dataset needs at least one class"));
        }
        Ok(Dataset {
            frames,
            channels,
            model_shape,
            class_names,
            samples: Vec::new(),
            split: None,
            stats: None,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: Sample) -> Result<()> {
        if sample.data.len() != self.frames * self.channels {
            return Err(Error::InvalidShape {
                shape: vec![sample.data.len()],
                reason: format!("expected a {}x{} window", self.frames, self.channels),
            });
        }
        if sample.label >= self.n_classes() {
            return Err(Error::invalid(format!(
                "label {} out of range for {} classes",
                sample.label,
                self.n_classes()
            )));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Stratified split; any previous split and statistics are discarded.
    pub fn assign_split(&mut self, ratios: [f64; 3], seed: u64) -> Result<Vec<String>> {
        let a = split_dataset(&self.labels(), ratios, seed)?;
        let warnings = a.warnings.clone();
        self.split = Some(a);
        self.stats = None;
        Ok(warnings)
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        match &self.split {
            Some(a) => a.indices(which),
            None => Vec::new(),
        }
    }

    pub fn model_input(&self, i: usize) -> Result<Tensor<f32>> {
        reshape_sample(&self.samples[i].data, self.model_shape)
    }

    pub fn examples(&self, which: Split) -> Result<Vec<Example<f32>>> {
        self.indices(which)
            .into_iter()
            .map(|i| {
                Ok(Example {
                    input: self.model_input(i)?,
                    label: self.samples[i].label,
                })
            })
            .collect()
    }

    pub fn census(&self) -> Census {
        let mut per_class: BTreeMap<String, usize> = self.class_names.iter().map(|c| (c.clone(), 0)).collect();
        let mut per_group = BTreeMap::new();
        for s in &self.samples {
            *per_class.entry(self.class_names[s.label].clone()).or_default() += 1;
            *per_group.entry(s.provenance.group.clone()).or_default() += 1;
        }
        let mut per_split = BTreeMap::new();
        if let Some(a) = &self.split {
            for s in &a.splits {
                *per_split.entry(s.as_str().to_string()).or_default() += 1;
            }
        }
        Census {
            total: self.len(),
            frames: self.frames,
            channels: self.channels,
            per_class,
            per_group,
            per_split,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(value: f32, label: usize, n: usize) -> Sample {
        Sample {
            data: vec![value; n],
            label,
            provenance: Provenance {
                recording: format!("r{label}"),
                group: "g".into(),
                window: 0,
            },
            severity: None,
            heel_strikes: vec![],
        }
    }

    #[test]
    fn dataset_checks_shapes_and_labels() {
        assert!(Dataset::new(500, 18, [50, 15, 11], vec!["a".into()]).is_err());
        let mut d = Dataset::new(2, 3, [3, 2, 1], vec!["a".into(), "b".into()]).unwrap();
        d.push(sample(1.0, 0, 6)).unwrap();
        assert!(d.push(sample(1.0, 2, 6)).is_err());
        assert!(d.push(sample(1.0, 1, 5)).is_err());
        assert_eq!(d.model_input(0).unwrap().shape(), &[3, 2, 1]);
    }

    #[test]
    fn census_counts() {
        let mut d = Dataset::new(1, 1, [1, 1, 1], vec!["a".into(), "b".into()]).unwrap();
        for i in 0..10 {
            d.push(sample(i as f32, i % 2, 1)).unwrap();
        }
        d.assign_split([0.6, 0.2, 0.2], 1).unwrap();
        let c = d.census();
        assert_eq!(c.total, 10);
        assert_eq!(c.per_class["a"], 5);
        assert_eq!(c.per_group["g"], 10);
        assert_eq!(c.per_split.values().sum::<usize>(), 10);
        assert!(c.to_text().starts_with("samples 10 (1x1)\n"));
    }
}
