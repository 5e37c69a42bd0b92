use serde::{Deserialize, Serialize};

use super::{channels, ChannelStats};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Cycle sub-phases as `(letter, start, end)` fractions of the cycle. The
/// first four cover stance, the last three swing.
pub const INTERVALS: [(char, f64, f64); 7] = [
    ('A', 0.00, 0.10),
    ('B', 0.10, 0.30),
    ('C', 0.30, 0.45),
    ('D', 0.45, 0.60),
    ('E', 0.60, 0.73),
    ('F', 0.73, 0.87),
    ('G', 0.87, 1.00),
];

/// Letter of the interval containing a cycle fraction; fractions are wrapped
/// into `[0, 1)` first.
pub fn interval_at(fraction: f64) -> char {
    let f = fraction.rem_euclid(1.0);
    INTERVALS
        .iter()
        .find(|&&(_, lo, hi)| f >= lo && f < hi)
        .map_or('G', |&(c, _, _)| c)
}

/// Per-frame mean over all channels of a `frames × channels` window.
pub fn spatial_average<T: Real>(window: &[T], channels: usize) -> Vec<f64> {
    window
        .chunks_exact(channels)
        .map(|row| row.iter().map(|v| v.as_f64()).sum::<f64>() / channels as f64)
        .collect()
}

/// Per-frame mean of the left foot's sensors and total, in original units
/// when the window was standardized with `stats`.
pub fn left_foot_series(window: &[f32], n_channels: usize, stats: Option<&ChannelStats>) -> Vec<f64> {
    let raw: Vec<f64> = match stats {
        Some(s) => s.invert(window),
        None => window.iter().map(|&v| f64::from(v)).collect(),
    };
    let picked: Vec<usize> = channels::LEFT_SENSORS.chain([channels::LEFT_TOTAL]).collect();
    raw.chunks_exact(n_channels)
        .map(|row| picked.iter().map(|&c| row[c]).sum::<f64>() / picked.len() as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    /// Heel-strike threshold as a fraction of the series range above its minimum.
    pub threshold: f64,
    /// Minimum frames between heel strikes.
    pub refractory: usize,
    pub stance_fraction: f64,
    /// Cycle length assumed when fewer than two heel strikes are found.
    pub default_cycle: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            threshold: 0.2,
            refractory: 40,
            stance_fraction: 0.6,
            default_cycle: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitEventTimeline {
    pub heel_strikes: Vec<usize>,
    pub frames: usize,
    pub stance_fraction: f64,
    /// Median cycle length, used to extend the phase outside detected cycles.
    pub typical_cycle: f64,
}

impl GaitEventTimeline {
    /// Cycle fraction of a frame in `[0, 1)`.
    pub fn phase(&self, frame: usize) -> f64 {
        let hs = &self.heel_strikes;
        let f = frame as f64;
        match hs.partition_point(|&h| h <= frame) {
            0 => ((f - hs[0] as f64) / self.typical_cycle).rem_euclid(1.0),
            i if i == hs.len() => ((f - hs[i - 1] as f64) / self.typical_cycle).rem_euclid(1.0),
            i => (f - hs[i - 1] as f64) / (hs[i] - hs[i - 1]) as f64,
        }
    }

    pub fn interval(&self, frame: usize) -> char {
        interval_at(self.phase(frame))
    }

    pub fn is_stance(&self, frame: usize) -> bool {
        self.phase(frame) < self.stance_fraction
    }

    /// Complete cycles as `(heel strike, next heel strike)`.
    pub fn cycles(&self) -> Vec<(usize, usize)> {
        self.heel_strikes.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Interval boundaries of one cycle in (fractional) frames.
    pub fn interval_bounds(&self, cycle: (usize, usize)) -> Vec<(char, f64, f64)> {
        let (a, b) = (cycle.0 as f64, cycle.1 as f64);
        INTERVALS
            .iter()
            .map(|&(c, lo, hi)| (c, a + lo * (b - a), a + hi * (b - a)))
            .collect()
    }
}

/// Detects heel strikes as upward threshold crossings of a force series,
/// each moved back to the onset of its rise, and at least `refractory` frames
/// apart.
pub fn segment_gait_cycle(series: &[f64], cfg: &SegmentConfig) -> Result<GaitEventTimeline> {
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if series.len() < 2 || !range.is_finite() || range <= 0.0 {
        return Err(Error::NoCycles);
    }
    let threshold = lo + cfg.threshold * range;
    let floor = lo + 1e-6 * range;
    let mut heel_strikes: Vec<usize> = Vec::new();
    for n in 1..series.len() {
        if !(series[n - 1] < threshold && series[n] >= threshold) {
            continue;
        }
        let mut onset = n;
        while onset > 0 && series[onset - 1] < series[onset] && series[onset - 1] > floor {
            onset -= 1;
        }
        match heel_strikes.last() {
            Some(&last) if onset < last + cfg.refractory.max(1) => {}
            _ => heel_strikes.push(onset),
        }
    }
    if heel_strikes.is_empty() {
        return Err(Error::NoCycles);
    }
    let mut lengths: Vec<usize> = heel_strikes.windows(2).map(|w| w[1] - w[0]).collect();
    lengths.sort_unstable();
    let typical_cycle = match lengths.len() {
        0 => cfg.default_cycle as f64,
        n if n % 2 == 1 => lengths[n / 2] as f64,
        n => (lengths[n / 2 - 1] + lengths[n / 2]) as f64 / 2.0,
    };
    Ok(GaitEventTimeline {
        heel_strikes,
        frames: series.len(),
        stance_fraction: cfg.stance_fraction,
        typical_cycle,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPeak {
    pub frame: usize,
    pub interval: char,
    pub score: f64,
}

/// Local maxima of a relevance series above mean + 2·std, labeled with the
/// gait interval they fall in, strongest first.
pub fn assign_events_to_relevance(relevance: &[f64], timeline: &GaitEventTimeline) -> Vec<EventPeak> {
    let n = relevance.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = relevance.iter().sum::<f64>() / n as f64;
    let std = (relevance.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let cut = mean + 2.0 * std;
    let mut peaks: Vec<EventPeak> = (0..n)
        .filter(|&i| {
            let v = relevance[i];
            let left = if i > 0 { relevance[i - 1] } else { f64::NEG_INFINITY };
            let right = if i + 1 < n { relevance[i + 1] } else { f64::NEG_INFINITY };
            v > cut && v > left && v >= right
        })
        .map(|i| EventPeak {
            frame: i,
            interval: timeline.interval(i),
            score: relevance[i],
        })
        .collect();
    peaks.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.frame.cmp(&b.frame)));
    peaks
}

#[cfg(test)]
mod tests {
    use super::super::synth::{synthesize_gait, ClassProfile, SynthConfig};
    use super::super::PD_CHANNELS;
    use super::*;
    use proptest::prelude::*;

    fn noise_free(n: usize) -> SynthConfig {
        SynthConfig {
            samples_per_class: n,
            noise: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn intervals_partition_the_cycle() {
        assert_eq!(INTERVALS[0].1, 0.0);
        assert_eq!(INTERVALS[6].2, 1.0);
        for w in INTERVALS.windows(2) {
            assert_eq!(w[0].2, w[1].1);
        }
        assert_eq!(interval_at(0.0), 'A');
        assert_eq!(interval_at(0.65), 'E');
        assert_eq!(interval_at(0.5999), 'D');
        assert_eq!(interval_at(1.0), 'A');
        let t = GaitEventTimeline {
            heel_strikes: vec![10, 110],
            frames: 200,
            stance_fraction: 0.6,
            typical_cycle: 100.0,
        };
        let b = t.interval_bounds((10, 110));
        assert_eq!((b[0].1, b[6].2), (10.0, 110.0));
        assert!(t.is_stance(60) && !t.is_stance(75));
        assert_eq!(t.interval(5), 'G');
        assert_eq!(t.interval(150), 'C');
    }

    #[test]
    fn spatial_average_examples() {
        assert_eq!(spatial_average(&[3.0f32; 36], 18), vec![3.0, 3.0]);
        let mut row = [0.0f64; 18];
        row[17] = 18.0 * 2.5;
        assert_eq!(spatial_average(&row, 18), vec![2.5]);
    }

    proptest! {
        #[test]
        fn spatial_average_is_linear(a in prop::collection::vec(-10.0f64..10.0, 36), b in prop::collection::vec(-10.0f64..10.0, 36)) {
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let lhs = spatial_average(&sum, 18);
            let (sa, sb) = (spatial_average(&a, 18), spatial_average(&b, 18));
            for i in 0..2 {
                prop_assert!((lhs[i] - sa[i] - sb[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_cycle_signal() {
        let mut s = vec![0.0; 230];
        for start in [20usize, 130] {
            for k in 0..60 {
                s[start + k] = ((k as f64 + 0.5) / 60.0 * std::f64::consts::PI).sin();
            }
        }
        let t = segment_gait_cycle(&s, &SegmentConfig::default()).unwrap();
        assert_eq!(t.heel_strikes.len(), 2);
        assert!(t.heel_strikes[0].abs_diff(20) <= 2 && t.heel_strikes[1].abs_diff(130) <= 2);
        assert_eq!(t.typical_cycle, 110.0);
    }

    #[test]
    fn flat_series_has_no_cycles() {
        assert!(matches!(segment_gait_cycle(&[0.0; 300], &SegmentConfig::default()), Err(Error::NoCycles)));
        assert!(segment_gait_cycle(&[], &SegmentConfig::default()).is_err());
    }

    #[test]
    fn generator_heel_strikes_are_recovered() {
        let ds = synthesize_gait(&noise_free(10)).unwrap();
        let (mut planted, mut found) = (0, 0);
        for s in &ds.samples {
            let series = left_foot_series(&s.data, PD_CHANNELS, None);
            let t = segment_gait_cycle(&series, &SegmentConfig::default()).unwrap();
            for &h in &s.heel_strikes {
                planted += 1;
                if t.heel_strikes.iter().any(|&d| d.abs_diff(h) <= 3) {
                    found += 1;
                }
            }
            assert!(t.heel_strikes.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(found as f64 >= 0.95 * planted as f64, "{found}/{planted}");
    }

    #[test]
    fn spikes_are_labeled_by_phase() {
        let ds = synthesize_gait(&SynthConfig {
            classes: vec![ClassProfile {
                name: "x".into(),
                amplitude: 1.0,
                asymmetry: 0.0,
                jitter: 0,
            }],
            phase_spread: 0.0,
            ..noise_free(1)
        })
        .unwrap();
        let s = &ds.samples[0];
        let t = segment_gait_cycle(&left_foot_series(&s.data, PD_CHANNELS, None), &SegmentConfig::default()).unwrap();
        let mut rel = vec![0.0; 500];
        rel[s.heel_strikes[2]] = 5.0;
        let peaks = assign_events_to_relevance(&rel, &t);
        assert_eq!(peaks.len(), 1);
        assert_eq!((peaks[0].frame, peaks[0].interval), (s.heel_strikes[2], 'A'));

        let mut rel = vec![0.0; 500];
        rel[s.heel_strikes[1] + 65] = 1.0;
        assert_eq!(assign_events_to_relevance(&rel, &t)[0].interval, 'E');
        assert!(assign_events_to_relevance(&[0.3; 500], &t).is_empty());
    }

    #[test]
    fn standardized_windows_segment_like_raw_ones() {
        let ds = synthesize_gait(&noise_free(1)).unwrap();
        let raw = &ds.samples[0].data;
        let stats = ChannelStats {
            mean: vec![100.0; 18],
            std: vec![50.0; 18],
            degenerate: vec![false; 18],
        };
        let mut z = raw.clone();
        stats.apply(&mut z);
        let a = segment_gait_cycle(&left_foot_series(raw, 18, None), &SegmentConfig::default()).unwrap();
        let b = segment_gait_cycle(&left_foot_series(&z, 18, Some(&stats)), &SegmentConfig::default()).unwrap();
        assert_eq!(a.heel_strikes, b.heel_strikes);
    }
}
