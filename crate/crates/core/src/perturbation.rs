//! Most-relevant-first perturbation: input regions are replaced by Gaussian
//! noise in descending relevance order while the model re-predicts, and the
//! area over the resulting score curve (AOPC) measures how well a ranking
//! finds the regions the decision depends on.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::standard_error;
use crate::network::{Mode, Network};
use crate::rng;
use crate::tensor::{Real, Tensor};
use crate::train::Example;

/// Non-overlapping tiling of an `[H, W, C]` input into boxes of `extents`.
/// Boxes at the far edges are clipped rather than dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub extents: [usize; 3],
}

impl Default for RegionSpec {
    fn default() -> Self {
        RegionSpec { extents: [7, 7, 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    /// Position in origin order; also keys the region's noise.
    pub index: usize,
    pub origin: [usize; 3],
    /// Clipped extents.
    pub size: [usize; 3],
}

impl Region {
    pub fn elements(&self, shape: &[usize]) -> impl Iterator<Item = usize> + '_ {
        let (w, c) = (shape[1], shape[2]);
        let [oy, ox, oc] = self.origin;
        let [sy, sx, sc] = self.size;
        (oy..oy + sy).flat_map(move |y| (ox..ox + sx).flat_map(move |x| (oc..oc + sc).map(move |ch| (y * w + x) * c + ch)))
    }
}

impl RegionSpec {
    fn check(&self, shape: &[usize]) -> Result<[usize; 3]> {
        let &[h, w, c] = shape else {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: "regions tile [H, W, C] inputs".into(),
            });
        };
        let [eh, ew, ec] = self.extents;
        if eh == 0 || ew == 0 || ec == 0 || eh > h || ew > w || ec > c {
            return Err(Error::invalid(format!(
                "region {:?} does not fit input {shape:?}",
                self.extents
            )));
        }
        Ok([h, w, c])
    }

    /// All regions in ascending order of their origin's flat index.
    pub fn regions(&self, shape: &[usize]) -> Result<Vec<Region>> {
        let [h, w, c] = self.check(shape)?;
        let [eh, ew, ec] = self.extents;
        let mut out = Vec::new();
        for oy in (0..h).step_by(eh) {
            for ox in (0..w).step_by(ew) {
                for oc in (0..c).step_by(ec) {
                    out.push(Region {
                        index: out.len(),
                        origin: [oy, ox, oc],
                        size: [eh.min(h - oy), ew.min(w - ox), ec.min(c - oc)],
                    });
                }
            }
        }
        Ok(out)
    }

    /// Share of the input covered by one full region.
    pub fn input_fraction(&self, shape: &[usize]) -> Result<f64> {
        self.check(shape)?;
        Ok(self.extents.iter().product::<usize>() as f64 / shape.iter().product::<usize>() as f64)
    }
}

/// Regions sorted by descending summed relevance; equal sums keep origin order.
pub fn rank_regions<T: Real>(relevance: &Tensor<T>, spec: &RegionSpec) -> Result<Vec<Region>> {
    let shape = relevance.shape();
    let mut scored: Vec<(f64, Region)> = spec
        .regions(shape)?
        .into_iter()
        .map(|r| {
            let s: f64 = r.elements(shape).map(|i| relevance.data()[i].as_f64()).sum();
            (s, r)
        })
        .collect();
    // `sort_by` is stable, so ties stay in origin order.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(scored.into_iter().map(|(_, r)| r).collect())
}

/// Fills one region with standard normal noise. The values depend only on
/// the seed and the region, so a region looks the same at every step.
fn replace_region<T: Real>(values: &mut [T], shape: &[usize], region: &Region, seed: u64) {
    let mut r = rng::rng(rng::sub_seed(seed, &format!("region/{}", region.index)));
    for i in region.elements(shape) {
        let z: f64 = StandardNormal.sample(&mut r);
        values[i] = T::lit(z);
    }
}

/// The sample with its first `k` ranked regions replaced by noise drawn for
/// `seed`. Inputs are assumed standardized, so noise is N(0, 1).
pub fn perturb_step<T: Real>(sample: &Tensor<T>, ranked: &[Region], k: usize, seed: u64) -> Result<Tensor<T>> {
    if k > ranked.len() {
        return Err(Error::invalid(format!("step {k} exceeds {} regions", ranked.len())));
    }
    let mut out = sample.clone();
    let shape = sample.shape().to_vec();
    for region in &ranked[..k] {
        replace_region(out.data_mut(), &shape, region, seed);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Probability the model assigns to the sample's label.
    Probability,
    Accuracy,
}

impl ScoreKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScoreKind::Probability => "probability",
            ScoreKind::Accuracy => "accuracy",
        }
    }
}

impl std::str::FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probability" => Ok(ScoreKind::Probability),
            "accuracy" => Ok(ScoreKind::Accuracy),
            other => Err(Error::invalid(format!(
                "unknown score kind {other:?} (expected probability or accuracy)"
            ))),
        }
    }
}

/// Mean score after each perturbation step, averaged over samples and then
/// over noise seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurve {
    /// Ranking that produced the curve, e.g. `lrp_spf` or `random`.
    pub method: String,
    pub model: String,
    pub kind: ScoreKind,
    /// `scores[k]` after `k` regions; `scores[0]` is the unperturbed score.
    pub scores: Vec<f64>,
    /// Standard error of each step's score across seeds.
    pub stderr: Vec<f64>,
    pub seeds: Vec<u64>,
    pub samples: usize,
    pub region: [usize; 3],
    pub aopc: f64,
}

impl PerturbationCurve {
    pub fn steps(&self) -> usize {
        self.scores.len() - 1
    }

    /// Mean drop from the unperturbed score over steps `0..=k`.
    pub fn aopc_until(&self, k: usize) -> f64 {
        let k = k.min(self.steps());
        let s0 = self.scores[0];
        self.scores[..=k].iter().map(|s| s0 - s).sum::<f64>() / (k + 1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,mean_score,stderr\n");
        for (k, (s, e)) in self.scores.iter().zip(&self.stderr).enumerate() {
            let _ = writeln!(out, "{k},{s},{e}");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("curve serializes")
    }

    /// `self − baseline` at every step; negative where this ranking removes
    /// evidence faster than the baseline.
    pub fn minus(&self, baseline: &PerturbationCurve) -> Result<Vec<f64>> {
        comparable(&[self, baseline])?;
        Ok(self.scores.iter().zip(&baseline.scores).map(|(a, b)| a - b).collect())
    }
}

/// Checks that every curve has the same steps, score kind and sample count.
fn comparable(curves: &[&PerturbationCurve]) -> Result<()> {
    let Some(first) = curves.first() else {
        return Err(Error::IncomparableCurves("no curves".into()));
    };
    for c in curves {
        if c.steps() != first.steps() || c.kind != first.kind || c.samples != first.samples || c.region != first.region {
            return Err(Error::IncomparableCurves(format!(
                "{} ({} steps, {}, {} samples) vs {} ({} steps, {}, {} samples)",
                first.method,
                first.steps(),
                first.kind.as_str(),
                first.samples,
                c.method,
                c.steps(),
                c.kind.as_str(),
                c.samples
            )));
        }
    }
    Ok(())
}

fn score<T: Real>(net: &Network<T>, input: &Tensor<T>, label: usize, kind: ScoreKind) -> Result<f64> {
    let trace = net.forward(input, Mode::Infer)?;
    Ok(match kind {
        ScoreKind::Probability => trace.probabilities[label].as_f64(),
        ScoreKind::Accuracy => f64::from(u8::from(trace.predicted_class() == label)),
    })
}

/// Settings shared by ranked and random curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    pub region: RegionSpec,
    pub steps: usize,
    pub kind: ScoreKind,
    pub seeds: Vec<u64>,
}

impl Default for CurveConfig {
    fn default() -> Self {
        CurveConfig {
            region: RegionSpec::default(),
            steps: 20,
            kind: ScoreKind::Accuracy,
            seeds: (0..5).collect(),
        }
    }
}

fn noise_seed(seed: u64, sample: usize) -> u64 {
    rng::sub_seed(rng::sub_seed(seed, rng::NOISE), &sample.to_string())
}

fn curve_from_orders<T: Real>(
    net: &Network<T>,
    samples: &[Example<T>],
    cfg: &CurveConfig,
    method: &str,
    order: impl Fn(usize, u64) -> Vec<Region> + Sync,
) -> Result<PerturbationCurve> {
    if samples.is_empty() {
        return Err(Error::invalid("perturbation needs at least one sample"));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::invalid("perturbation needs at least one noise seed"));
    }
    let shape = net.input_shape().to_vec();
    let n_regions = cfg.region.regions(&shape)?.len();
    if cfg.steps > n_regions {
        return Err(Error::invalid(format!(
            "{} steps exceed the {n_regions} regions of the input",
            cfg.steps
        )));
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.seeds.len())
        .flat_map(|s| (0..samples.len()).map(move |i| (s, i)))
        .collect();
    let per_job: Vec<Result<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(s, i)| {
            let seed = cfg.seeds[s];
            let ex = &samples[i];
            let ranked = order(i, seed);
            let noise = noise_seed(seed, i);
            let mut x = ex.input.clone();
            let mut scores = Vec::with_capacity(cfg.steps + 1);
            scores.push(score(net, &x, ex.label, cfg.kind)?);
            for region in &ranked[..cfg.steps] {
                replace_region(x.data_mut(), &shape, region, noise);
                scores.push(score(net, &x, ex.label, cfg.kind)?);
            }
            Ok(scores)
        })
        .collect();
    // Ordered reduction: per-seed means, then mean and error across seeds.
    let mut per_seed = vec![vec![0.0; cfg.steps + 1]; cfg.seeds.len()];
    for (&(s, _), scores) in jobs.iter().zip(per_job) {
        for (acc, v) in per_seed[s].iter_mut().zip(scores?) {
            *acc += v;
        }
    }
    for curve in &mut per_seed {
        for v in curve.iter_mut() {
            *v /= samples.len() as f64;
        }
    }
    let mut scores = Vec::with_capacity(cfg.steps + 1);
    let mut stderr = Vec::with_capacity(cfg.steps + 1);
    for k in 0..=cfg.steps {
        let at: Vec<f64> = per_seed.iter().map(|c| c[k]).collect();
        let (m, e) = standard_error(&at)?;
        scores.push(m);
        stderr.push(e);
    }
    let mut curve = PerturbationCurve {
        method: method.to_string(),
        model: net.architecture().to_string(),
        kind: cfg.kind,
        scores,
        stderr,
        seeds: cfg.seeds.clone(),
        samples: samples.len(),
        region: cfg.region.extents,
        aopc: 0.0,
    };
    curve.aopc = curve.aopc_until(cfg.steps);
    Ok(curve)
}

/// Perturbs every sample in the order its relevance map ranks the regions.
pub fn morf_curve<T: Real>(
    net: &Network<T>,
    samples: &[Example<T>],
    maps: &[Tensor<T>],
    cfg: &CurveConfig,
    method: &str,
) -> Result<PerturbationCurve> {
    if maps.len() != samples.len() {
        return Err(Error::invalid(format!(
            "{} relevance maps for {} samples",
            maps.len(),
            samples.len()
        )));
    }
    for (m, s) in maps.iter().zip(samples) {
        for shape in [m.shape(), s.input.shape()] {
            if shape != net.input_shape() {
                return Err(Error::ShapeMismatch {
                    op: "perturbation",
                    left: shape.to_vec(),
                    right: net.input_shape().to_vec(),
                });
            }
        }
    }
    let rankings: Vec<Vec<Region>> = maps
        .par_iter()
        .map(|m| rank_regions(m, &cfg.region))
        .collect::<Result<_>>()?;
    curve_from_orders(net, samples, cfg, method, |i, _| rankings[i].clone())
}

/// Perturbs regions in a uniformly shuffled order per sample and seed.
pub fn random_baseline_curve<T: Real>(
    net: &Network<T>,
    samples: &[Example<T>],
    cfg: &CurveConfig,
) -> Result<PerturbationCurve> {
    let regions = cfg.region.regions(net.input_shape())?;
    curve_from_orders(net, samples, cfg, "random", |i, seed| {
        let mut order = regions.clone();
        let mut r = rng::rng(rng::sub_seed(rng::sub_seed(seed, "order"), &i.to_string()));
        order.shuffle(&mut r);
        order
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub method: String,
    pub model: String,
    pub score: f64,
    /// 1-based; tied entries share a rank.
    pub rank: usize,
    pub tied: bool,
}

fn rank_by(curves: &[PerturbationCurve], score: impl Fn(&PerturbationCurve) -> f64) -> Result<Vec<RankEntry>> {
    comparable(&curves.iter().collect::<Vec<_>>())?;
    let mut scored: Vec<(f64, &PerturbationCurve)> = curves.iter().map(|c| (score(c), c)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    let mut out: Vec<RankEntry> = Vec::with_capacity(scored.len());
    for (i, &(s, c)) in scored.iter().enumerate() {
        let rank = match out.last() {
            Some(prev) if same(prev.score, s) => prev.rank,
            _ => i + 1,
        };
        out.push(RankEntry {
            method: c.method.clone(),
            model: c.model.clone(),
            score: s,
            rank,
            tied: false,
        });
    }
    for i in 0..out.len() {
        let r = out[i].rank;
        out[i].tied = out.iter().filter(|e| e.rank == r).count() > 1;
    }
    Ok(out)
}

/// Early steps over which rankings are compared.
pub const SELECTION_STEPS: usize = 15;

/// Ranks explanation methods by AOPC over the first `k` steps.
pub fn select_rule(curves: &[PerturbationCurve], k: usize) -> Result<Vec<RankEntry>> {
    rank_by(curves, |c| c.aopc_until(k))
}

/// Ranks models by how far their first `k` perturbed scores fall below the
/// curve's own mean, which ignores each model's overall score level.
pub fn select_model(curves: &[PerturbationCurve], k: usize) -> Result<Vec<RankEntry>> {
    rank_by(curves, |c| {
        let mean = c.scores.iter().sum::<f64>() / c.scores.len() as f64;
        let k = k.min(c.steps());
        if k == 0 {
            return 0.0;
        }
        -c.scores[1..=k].iter().map(|s| s - mean).sum::<f64>() / k as f64
    })
}

/// Step-by-step table of each curve minus the baseline, for plotting.
pub fn comparison_csv(curves: &[PerturbationCurve], baseline: &PerturbationCurve) -> Result<String> {
    let diffs: Vec<Vec<f64>> = curves.iter().map(|c| c.minus(baseline)).collect::<Result<_>>()?;
    let mut out = String::from("step,baseline");
    for c in curves {
        let _ = write!(out, ",{}", c.method);
    }
    out.push('\n');
    for k in 0..=baseline.steps() {
        let _ = write!(out, "{k},{}", baseline.scores[k]);
        for d in &diffs {
            let _ = write!(out, ",{}", d[k]);
        }
        out.push('\n');
    }
    Ok(out)
}
