use serde::{Deserialize, Serialize};

use super::{Dataset, Provenance, RawRecording, Sample};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::train::Split;

/// Below this a channel's spread counts as zero.
const DEGENERATE_STD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub recording: String,
    pub index: usize,
    /// `window × channels`, row-major.
    pub data: Vec<f32>,
}

/// Cuts a recording into consecutive non-overlapping windows; trailing frames
/// that do not fill a window are dropped.
pub fn window_recording(rec: &RawRecording, window: usize) -> Result<Vec<Window>> {
    if window == 0 {
        return Err(Error::invalid("window length must be positive"));
    }
    let frames = rec.frames();
    if frames < window {
        return Err(Error::RecordingTooShort { frames, window });
    }
    let stride = window * rec.channels;
    Ok(rec
        .data
        .chunks_exact(stride)
        .enumerate()
        .map(|(index, chunk)| Window {
            recording: rec.id.clone(),
            index,
            data: chunk.to_vec(),
        })
        .collect())
}

/// Windows every recording and labels each window through `label`, in
/// recording order. Recordings shorter than one window contribute nothing and
/// are returned by id.
pub fn dataset_from_recordings(
    recordings: &[RawRecording],
    window: usize,
    model_shape: [usize; 3],
    class_names: Vec<String>,
    mut label: impl FnMut(&RawRecording) -> Result<(usize, Option<f32>)>,
) -> Result<(Dataset, Vec<String>)> {
    let channels = recordings.first().map_or(super::PD_CHANNELS, |r| r.channels);
    let mut ds = Dataset::new(window, channels, model_shape, class_names)?;
    let mut short = Vec::new();
    for rec in recordings {
        let windows = match window_recording(rec, window) {
            Err(Error::RecordingTooShort { .. }) => {
                short.push(rec.id.clone());
                continue;
            }
            other => other?,
        };
        let (class, severity) = label(rec)?;
        for w in windows {
            ds.push(Sample {
                data: w.data,
                label: class,
                provenance: Provenance {
                    recording: w.recording,
                    group: rec.group.clone(),
                    window: w.index,
                },
                severity,
                heel_strikes: Vec::new(),
            })?;
        }
    }
    Ok((ds, short))
}

/// Per-channel mean and population standard deviation of the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose spread was below threshold; they are only centered.
    pub degenerate: Vec<bool>,
}

impl ChannelStats {
    fn fit<'a>(channels: usize, windows: impl Iterator<Item = &'a [f32]>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0f64; channels];
        let mut sq = vec![0.0f64; channels];
        let windows: Vec<&[f32]> = windows.collect();
        for w in &windows {
            for row in w.chunks_exact(channels) {
                n += 1;
                for (s, &v) in sum.iter_mut().zip(row) {
                    *s += f64::from(v);
                }
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for w in &windows {
            for row in w.chunks_exact(channels) {
                for ((q, &v), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *q += (f64::from(v) - m).powi(2);
                }
            }
        }
        let raw: Vec<f64> = sq.iter().map(|q| (q / n as f64).sqrt()).collect();
        let degenerate: Vec<bool> = raw.iter().map(|&s| s < DEGENERATE_STD).collect();
        let std = raw
            .iter()
            .zip(&degenerate)
            .map(|(&s, &d)| if d { 1.0 } else { s })
            .collect();
        ChannelStats { mean, std, degenerate }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, window: &mut [f32]) {
        for row in window.chunks_exact_mut(self.channels()) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = ((f64::from(*v) - m) / s) as f32;
            }
        }
    }

    /// Maps a standardized window back to the original units.
    pub fn invert(&self, window: &[f32]) -> Vec<f64> {
        window
            .chunks_exact(self.channels())
            .flat_map(|row| {
                row.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((&v, m), s)| f64::from(v) * s + m)
            })
            .collect()
    }
}

/// Standardizes every sample with statistics of the training split alone.
/// Validation and test samples never contribute to the statistics.
pub fn standardize(dataset: &mut Dataset) -> Result<&ChannelStats> {
    if dataset.stats.is_some() {
        return Err(Error::invalid("dataset is already standardized"));
    }
    let train = dataset.indices(Split::Train);
    if train.is_empty() {
        return Err(Error::invalid("standardization needs a non-empty training split"));
    }
    let stats = ChannelStats::fit(
        dataset.channels,
        train.iter().map(|&i| dataset.samples[i].data.as_slice()),
    );
    for s in &mut dataset.samples {
        stats.apply(&mut s.data);
    }
    Ok(dataset.stats.insert(stats))
}

/// Reinterprets a row-major `frames × channels` window under the model input
/// shape. Element `(frame 0, channel 0)` stays at the origin.
pub fn reshape_sample<T: Real>(window: &[T], shape: [usize; 3]) -> Result<Tensor<T>> {
    if window.len() != shape.iter().product::<usize>() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: format!("cannot hold a window of {} elements", window.len()),
        });
    }
    Tensor::new(&shape, window.to_vec())
}

/// Inverse of [`reshape_sample`].
pub fn unreshape_sample<T: Real>(tensor: &Tensor<T>, frames: usize, channels: usize) -> Result<Vec<T>> {
    if tensor.len() != frames * channels {
        return Err(Error::InvalidShape {
            shape: tensor.shape().to_vec(),
            reason: format!("does not hold a {frames}x{channels} window"),
        });
    }
    Ok(tensor.data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::super::{Provenance, Sample, PD_MODEL_SHAPE};
    use super::*;
    use proptest::prelude::*;

    fn recording(frames: usize, channels: usize) -> RawRecording {
        RawRecording {
            id: "GaPt03_01".into(),
            group: "Ga".into(),
            cohort: None,
            subject: "GaPt03".into(),
            walk: 1,
            frame_rate: 100.0,
            channels,
            data: (0..frames * channels).map(|i| i as f32).collect(),
        }
    }

    #[test]
    fn windows_drop_the_remainder() {
        let w = window_recording(&recording(12119, 2), 500).unwrap();
        assert_eq!(w.len(), 24);
        let w = window_recording(&recording(1000, 2), 500).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].data.last().copied(), Some(1999.0));
        assert_eq!(w[1].index, 1);
        let err = window_recording(&recording(499, 2), 500).unwrap_err();
        assert_eq!(err.to_string(), "recording shorter than window (499 < 500)");
    }

    #[test]
    fn recordings_become_labeled_windows() {
        let mut short = recording(300, 18);
        short.id = "GaCo01_01".into();
        let recs = vec![recording(1200, 18), short];
        let (ds, skipped) =
            dataset_from_recordings(&recs, 500, PD_MODEL_SHAPE, vec!["a".into(), "b".into()], |_| Ok((1, Some(2.5))))
                .unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(skipped, vec!["GaCo01_01".to_string()]);
        assert_eq!(ds.samples[1].provenance.window, 1);
        assert_eq!(ds.samples[1].data[0], (500 * 18) as f32);
        assert_eq!((ds.samples[0].label, ds.samples[0].severity), (1, Some(2.5)));
    }

    fn dataset(columns: &[[f32; 2]]) -> Dataset {
        let mut d = Dataset::new(1, 2, [1, 1, 2], vec!["a".into()]).unwrap();
        for (i, row) in columns.iter().enumerate() {
            d.push(Sample {
                data: row.to_vec(),
                label: 0,
                provenance: Provenance {
                    recording: "r".into(),
                    group: "g".into(),
                    window: i,
                },
                severity: None,
                heel_strikes: vec![],
            })
            .unwrap();
        }
        d
    }

    #[test]
    fn one_two_three_example_and_constant_channel() {
        let mut d = dataset(&[[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]);
        d.split = Some(crate::train::SplitAssignment {
            splits: vec![Split::Train; 3],
            warnings: vec![],
        });
        let stats = standardize(&mut d).unwrap().clone();
        assert_eq!(stats.degenerate, vec![false, true]);
        let z = 1.5f64.sqrt();
        let got: Vec<f32> = d.samples.iter().map(|s| s.data[0]).collect();
        for (g, e) in got.iter().zip([-z, 0.0, z]) {
            assert!((f64::from(*g) - e).abs() < 1e-6, "{g} vs {e}");
        }
        assert!(d.samples.iter().all(|s| s.data[1] == 0.0));
        assert!(standardize(&mut d).is_err());
        let back = stats.invert(&d.samples[2].data);
        assert!((back[0] - 3.0).abs() < 1e-6 && (back[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn statistics_come_from_training_samples_only() {
        let mut d = dataset(&[[0.0, 0.0], [2.0, 2.0], [1000.0, -1000.0]]);
        d.split = Some(crate::train::SplitAssignment {
            splits: vec![Split::Train, Split::Train, Split::Test],
            warnings: vec![],
        });
        let stats = standardize(&mut d).unwrap();
        assert_eq!(stats.mean, vec![1.0, 1.0]);
        assert_eq!(stats.std, vec![1.0, 1.0]);
        assert_eq!(d.samples[2].data, vec![999.0, -1001.0]);

        let mut none = dataset(&[[0.0, 0.0]]);
        assert!(standardize(&mut none).is_err());
    }

    #[test]
    fn reshape_is_origin_preserving_and_checked() {
        let w: Vec<f32> = (0..9000).map(|i| i as f32).collect();
        let t = reshape_sample(&w, PD_MODEL_SHAPE).unwrap();
        assert_eq!(t.get(&[0, 0, 0]), 0.0);
        assert_eq!(t.get(&[0, 1, 0]), 12.0);
        assert!(reshape_sample(&w[..8999], PD_MODEL_SHAPE).is_err());
        assert!(unreshape_sample(&t, 500, 17).is_err());
    }

    proptest! {
        #[test]
        fn reshape_round_trip_is_exact(w in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 9000)) {
            let t = reshape_sample(&w, PD_MODEL_SHAPE).unwrap();
            let back = unreshape_sample(&t, 500, 18).unwrap();
            prop_assert_eq!(back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), w.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn training_split_is_unit_scaled(rows in prop::collection::vec((-50.0f32..50.0, 0.0f32..900.0), 2..40)) {
            let cols: Vec<[f32; 2]> = rows.iter().map(|&(a, b)| [a, b]).collect();
            let mut d = dataset(&cols);
            let n = cols.len();
            d.split = Some(crate::train::SplitAssignment { splits: vec![Split::Train; n], warnings: vec![] });
            let stats = standardize(&mut d).unwrap().clone();
            for c in 0..2 {
                let v: Vec<f64> = d.samples.iter().map(|s| f64::from(s.data[c])).collect();
                let m = v.iter().sum::<f64>() / n as f64;
                let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
                prop_assert!(m.abs() <= 1e-6);
                if !stats.degenerate[c] {
                    prop_assert!((sd - 1.0).abs() <= 1e-6, "channel {} std {}", c, sd);
                }
            }
        }
    }
}
