use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{bail, Result};
use gaitxai_core::gait::{
    assign_events_to_relevance, left_foot_series, segment_gait_cycle, spatial_average, unreshape_sample, Dataset,
    GaitEventTimeline, PD_CHANNELS, INTERVALS,
};
use gaitxai_core::network::{load_model_expecting, Mode};
use gaitxai_core::relevance::explain;
use gaitxai_core::train::Split;
use gaitxai_core::Error;
use serde::Serialize;

use super::model::load_split_dataset;
use crate::config::RunConfig;
use crate::files;

/// Which samples to explain.
#[derive(Debug, Clone, Default)]
pub struct Selector {
    /// Recording id, optionally with `:window`.
    pub sample: Option<String>,
    /// Explain this class instead of the true one.
    pub class: Option<usize>,
}

impl Selector {
    fn candidates(&self, ds: &Dataset) -> Result<Vec<usize>> {
        let Some(spec) = &self.sample else {
            return Ok(ds.indices(Split::Test));
        };
        let (recording, window) = match spec.rsplit_once(':') {
            Some((r, w)) => (r, Some(w.parse::<usize>().map_err(|_| anyhow::anyhow!("bad window in {spec:?}"))?)),
            None => (spec.as_str(), None),
        };
        Ok((0..ds.len())
            .filter(|&i| {
                let p = &ds.samples[i].provenance;
                p.recording == recording && window.is_none_or(|w| p.window == w)
            })
            .collect())
    }
}

fn sample_id(ds: &Dataset, i: usize) -> String {
    let p = &ds.samples[i].provenance;
    format!("{}_w{}", p.recording, p.window)
}

/// Series the gait cycle is read from, in original units.
fn gait_signal(ds: &Dataset, i: usize) -> Vec<f64> {
    let data = &ds.samples[i].data;
    if ds.channels == PD_CHANNELS {
        return left_foot_series(data, ds.channels, ds.stats.as_ref());
    }
    match &ds.stats {
        Some(st) => spatial_average(&st.invert(data), ds.channels),
        None => spatial_average(data, ds.channels),
    }
}

#[derive(Serialize)]
struct Explained {
    sample: String,
    label: usize,
    predicted: usize,
    class: usize,
    logit: f64,
    relevance_sum: f64,
    conservation_deficit: f64,
    peaks: usize,
    top_interval: Option<char>,
}

#[derive(Serialize)]
struct Summary {
    method: String,
    class_override: Option<usize>,
    explained: Vec<Explained>,
    skipped_misclassified: Vec<String>,
    unsegmented: Vec<String>,
    /// Peaks per interval letter over all explained samples.
    peak_intervals: BTreeMap<char, usize>,
    /// Highest peak of each sample, per interval letter.
    top_intervals: BTreeMap<char, usize>,
}

pub fn cmd_explain(cfg: &RunConfig, sel: &Selector) -> Result<()> {
    let ds = load_split_dataset(cfg)?;
    let net = load_model_expecting(&cfg.model, ds.n_classes())?;
    if let Some(c) = sel.class {
        if c >= ds.n_classes() {
            bail!("class {c} out of range for {} classes", ds.n_classes());
        }
    }
    let dir = cfg.out.join("explain");
    let candidates = sel.candidates(&ds)?;
    if candidates.is_empty() {
        eprintln!("warning: no samples match the selector");
    }
    let zero = || INTERVALS.iter().map(|(c, ..)| (*c, 0)).collect::<BTreeMap<char, usize>>();
    let mut summary = Summary {
        method: cfg.explain_method.to_string(),
        class_override: sel.class,
        explained: Vec::new(),
        skipped_misclassified: Vec::new(),
        unsegmented: Vec::new(),
        peak_intervals: zero(),
        top_intervals: zero(),
    };
    let mut events = String::from("sample,rank,frame,interval,score\n");
    for i in candidates {
        if cfg.explain_limit > 0 && summary.explained.len() >= cfg.explain_limit {
            break;
        }
        let id = sample_id(&ds, i);
        let label = ds.samples[i].label;
        let trace = net.forward(&ds.model_input(i)?, Mode::Infer)?;
        let predicted = trace.predicted_class();
        if predicted != label && !cfg.include_misclassified {
            eprintln!("skipped {id}: predicted {predicted}, labeled {label}");
            summary.skipped_misclassified.push(id);
            continue;
        }
        let class = sel.class.unwrap_or(label);
        let map = explain(&net, &trace, class, cfg.explain_method)?.with_sample_id(&id);
        files::write(&dir.join(format!("{id}.relevance.csv")), map.to_csv(ds.channels)?)?;
        files::write(&dir.join(format!("{id}.json")), map.sidecar_json() + "\n")?;

        let relevance = spatial_average(&unreshape_sample(&map.relevance, ds.frames, ds.channels)?, ds.channels);
        let signal = gait_signal(&ds, i);
        let timeline = match segment_gait_cycle(&signal, &cfg.segment) {
            Ok(t) => Some(t),
            Err(Error::NoCycles) => {
                eprintln!("warning: {id}: no gait cycles detected; events not attributed");
                summary.unsegmented.push(id.clone());
                None
            }
            Err(e) => return Err(e.into()),
        };
        files::write(&dir.join(format!("{id}.sa.csv")), sa_csv(&signal, &relevance, timeline.as_ref()))?;

        let peaks = timeline
            .as_ref()
            .map(|t| assign_events_to_relevance(&relevance, t))
            .unwrap_or_default();
        for (rank, p) in peaks.iter().enumerate() {
            let _ = writeln!(events, "{id},{},{},{},{:e}", rank + 1, p.frame, p.interval, p.score);
            *summary.peak_intervals.entry(p.interval).or_default() += 1;
        }
        if let Some(top) = peaks.first() {
            *summary.top_intervals.entry(top.interval).or_default() += 1;
        }
        summary.explained.push(Explained {
            sample: id,
            label,
            predicted,
            class,
            logit: map.logit,
            relevance_sum: map.sum(),
            conservation_deficit: map.logit - map.sum(),
            peaks: peaks.len(),
            top_interval: peaks.first().map(|p| p.interval),
        });
    }
    files::write(&dir.join("events.csv"), events)?;
    files::write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "explained {} sample(s) with {}; {} misclassified skipped",
        summary.explained.len(),
        summary.method,
        summary.skipped_misclassified.len()
    );
    for e in &summary.explained {
        println!(
            "{}: class {} logit {:.4} relevance {:.4} deficit {:.2e}",
            e.sample, e.class, e.logit, e.relevance_sum, e.conservation_deficit
        );
    }
    Ok(())
}

fn sa_csv(signal: &[f64], relevance: &[f64], timeline: Option<&GaitEventTimeline>) -> String {
    let mut out = String::from("frame,signal,relevance,phase,interval\n");
    for (f, (s, r)) in signal.iter().zip(relevance).enumerate() {
        match timeline {
            Some(t) => {
                let _ = writeln!(out, "{f},{s},{r:e},{:.4},{}", t.phase(f), t.interval(f));
            }
            None => {
                let _ = writeln!(out, "{f},{s},{r:e},,");
            }
        }
    }
    out
}
