use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{channels, Dataset, Provenance, Sample, PD_CHANNELS, PD_FRAMES, PD_MODEL_SHAPE};
use crate::error::{Error, Result};
use crate::rng;

const SENSORS_PER_FOOT: usize = 8;
/// Width of the pressure patch moving heel to toe, in sensor-row units.
const PATCH_WIDTH: f64 = 0.2;

/// Per-class deterioration of the template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub name: String,
    /// Scale of both feet's force.
    pub amplitude: f64,
    /// Fractional loss of force on the right foot.
    pub asymmetry: f64,
    /// Cycle lengths vary uniformly by up to this many frames.
    pub jitter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: Vec<ClassProfile>,
    pub samples_per_class: usize,
    pub cycle_frames: usize,
    pub stance_fraction: f64,
    pub body_weight: f64,
    /// Per-sample body weight varies uniformly by this relative amount.
    pub body_weight_spread: f64,
    /// Additive Gaussian noise, standard deviation in newtons.
    pub noise: f64,
    /// Random start phase as a fraction of one cycle; 0 starts every sample
    /// with a heel strike at frame 0.
    pub phase_spread: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let profile = |i: usize| ClassProfile {
            name: format!("severity{i}"),
            amplitude: 1.0 - 0.1 * i as f64,
            asymmetry: 0.15 * i as f64,
            jitter: i + 1,
        };
        SynthConfig {
            classes: (0..4).map(profile).collect(),
            samples_per_class: 150,
            cycle_frames: 100,
            stance_fraction: 0.6,
            body_weight: 700.0,
            body_weight_spread: 0.15,
            noise: 40.0,
            phase_spread: 1.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid("synthetic data needs at least one class"));
        }
        if !(0.05..=0.95).contains(&self.stance_fraction) {
            return Err(Error::invalid("stance fraction must lie in [0.05, 0.95]"));
        }
        if self.cycle_frames < 10 || self.classes.iter().any(|c| c.jitter * 2 >= self.cycle_frames) {
            return Err(Error::invalid("cycle must be at least 10 frames and exceed twice the jitter"));
        }
        let finite = [self.body_weight, self.body_weight_spread, self.noise, self.phase_spread];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("synthetic parameters must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Vertical force of one stance at normalized time `t ∈ [0,1)`: a double hump
/// whose dip sits at mid-stance.
fn stance_waveform(t: f64) -> f64 {
    (PI * t).sin() + 0.25 * (3.0 * PI * t).sin()
}

/// Share of the foot's load carried by each sensor row as the centre of
/// pressure rolls from heel (row 0) to toe.
fn sensor_shares(t: f64) -> [f64; SENSORS_PER_FOOT] {
    let mut w = [0.0; SENSORS_PER_FOOT];
    for (i, v) in w.iter_mut().enumerate() {
        let pos = i as f64 / (SENSORS_PER_FOOT - 1) as f64;
        *v = (-(pos - t).powi(2) / (2.0 * PATCH_WIDTH * PATCH_WIDTH)).exp();
    }
    let total: f64 = w.iter().sum();
    w.map(|v| v / total)
}

/// Adds one stance starting at `onset` to a foot's sensors and total.
fn add_stance(data: &mut [f64], frames: usize, onset: i64, length: usize, force: f64, sensors: std::ops::Range<usize>, total: usize) {
    for k in 0..length {
        let frame = onset + k as i64;
        if frame < 0 || frame >= frames as i64 {
            continue;
        }
        // Sampled at the frame centre, so the onset frame carries load and the
        // one before it does not.
        let t = (k as f64 + 0.5) / length as f64;
        let f = force * stance_waveform(t);
        let row = frame as usize * PD_CHANNELS;
        for (ch, share) in sensors.clone().zip(sensor_shares(t)) {
            data[row + ch] += f * share;
        }
        data[row + total] += f;
    }
}

fn synth_sample(cfg: &SynthConfig, class: usize, index: usize) -> Sample {
    let profile = &cfg.classes[class];
    let mut r = rng::rng(rng::sub_seed(rng::sub_seed(cfg.seed, rng::SYNTH), &format!("{class}/{index}")));
    let weight = cfg.body_weight * (1.0 + cfg.body_weight_spread * r.random_range(-1.0..=1.0));
    let left_force = weight * profile.amplitude;
    let right_force = left_force * (1.0 - profile.asymmetry);

    let frames = PD_FRAMES;
    let mut data = vec![0.0f64; frames * PD_CHANNELS];
    let mut heel_strikes = Vec::new();
    let offset = (r.random::<f64>() * cfg.phase_spread * cfg.cycle_frames as f64).floor() as i64;
    // Start one cycle early so stances running into frame 0 are present.
    let mut onset = -offset - (cfg.cycle_frames + profile.jitter) as i64;
    while onset < frames as i64 {
        let j = profile.jitter as i64;
        let cycle = (cfg.cycle_frames as i64 + if j > 0 { r.random_range(-j..=j) } else { 0 }) as usize;
        let stance = (cfg.stance_fraction * cycle as f64).round() as usize;
        add_stance(&mut data, frames, onset, stance, left_force, channels::LEFT_SENSORS, channels::LEFT_TOTAL);
        let right_onset = onset + (cycle / 2) as i64;
        add_stance(&mut data, frames, right_onset, stance, right_force, channels::RIGHT_SENSORS, channels::RIGHT_TOTAL);
        if onset >= 0 {
            heel_strikes.push(onset as usize);
        }
        onset += cycle as i64;
    }
    if cfg.noise > 0.0 {
        let normal = Normal::new(0.0, cfg.noise).expect("finite noise");
        for v in &mut data {
            *v += normal.sample(&mut r);
        }
    }
    Sample {
        data: data.into_iter().map(|v| v as f32).collect(),
        label: class,
        provenance: Provenance {
            recording: format!("Syn{class}_{index:03}"),
            group: "Syn".into(),
            window: 0,
        },
        severity: None,
        heel_strikes,
    }
}

/// Generates force-plate windows in the 18-channel layout: eight sensors and a
/// total per foot, with the right foot half a cycle behind the left. Left-foot
/// stance onsets inside the window are recorded as heel strikes.
pub fn synthesize_gait(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let names = cfg.classes.iter().map(|c| c.name.clone()).collect();
    let mut ds = Dataset::new(PD_FRAMES, PD_CHANNELS, PD_MODEL_SHAPE, names)?;
    let jobs: Vec<(usize, usize)> = (0..cfg.classes.len())
        .flat_map(|c| (0..cfg.samples_per_class).map(move |i| (c, i)))
        .collect();
    let samples: Vec<Sample> = jobs.par_iter().map(|&(c, i)| synth_sample(cfg, c, i)).collect();
    for s in samples {
        ds.push(s)?;
    }
    Ok(ds)
}
