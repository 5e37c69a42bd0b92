use std::fmt::Write as _;

use anyhow::{bail, Result};
use gaitxai_core::network::{load_model_expecting, Mode};
use gaitxai_core::perturbation::{
    comparison_csv, morf_curve, random_baseline_curve, select_rule, PerturbationCurve, RankEntry, SELECTION_STEPS,
};
use gaitxai_core::relevance::explain;
use gaitxai_core::tensor::Tensor;
use gaitxai_core::train::Split;
use rayon::prelude::*;
use serde::Serialize;

use super::model::load_split_dataset;
use crate::config::RunConfig;
use crate::files;

#[derive(Serialize)]
struct Summary {
    model: String,
    samples: usize,
    steps: usize,
    score: &'static str,
    seeds: Vec<u64>,
    region: [usize; 3],
    regions: usize,
    region_fraction_percent: f64,
    selection_steps: usize,
    methods: Vec<MethodRow>,
    rule_ranking: Vec<RankEntry>,
}

#[derive(Serialize)]
struct MethodRow {
    method: String,
    aopc: f64,
    aopc_selection: f64,
    aopc_ratio_to_random: f64,
}

pub fn cmd_perturb(cfg: &RunConfig) -> Result<()> {
    let ds = load_split_dataset(cfg)?;
    let net = load_model_expecting(&cfg.model, ds.n_classes())?;
    let mut samples = ds.examples(Split::Test)?;
    if cfg.perturb_samples > 0 {
        samples.truncate(cfg.perturb_samples);
    }
    if samples.is_empty() {
        bail!("the test split is empty; nothing to perturb");
    }
    if cfg.perturb_methods.is_empty() {
        bail!("config perturb.methods lists no methods");
    }
    let shape = net.input_shape().to_vec();
    let regions = cfg.curve.region.regions(&shape)?.len();
    let fraction = 100.0 * cfg.curve.region.input_fraction(&shape)?;
    let [rh, rw, rc] = cfg.curve.region.extents;
    println!("region {rh}x{rw}x{rc} covers {fraction:.3}% of the input ({regions} regions)");

    let dir = cfg.out.join("perturb");
    let baseline = random_baseline_curve(&net, &samples, &cfg.curve)?;
    write_curve(cfg, &baseline)?;
    let mut curves = Vec::with_capacity(cfg.perturb_methods.len());
    for &method in &cfg.perturb_methods {
        eprintln!("perturbing {} samples ranked by {method}", samples.len());
        let maps: Vec<Tensor<f32>> = samples
            .par_iter()
            .map(|ex| {
                let trace = net.forward(&ex.input, Mode::Infer)?;
                Ok(explain(&net, &trace, ex.label, method)?.relevance)
            })
            .collect::<Result<_, gaitxai_core::Error>>()?;
        let curve = morf_curve(&net, &samples, &maps, &cfg.curve, method.as_str())?;
        write_curve(cfg, &curve)?;
        curves.push(curve);
    }
    files::write(&dir.join("comparison.csv"), comparison_csv(&curves, &baseline)?)?;

    let k = SELECTION_STEPS.min(cfg.curve.steps);
    let rows: Vec<MethodRow> = curves
        .iter()
        .map(|c| MethodRow {
            method: c.method.clone(),
            aopc: c.aopc,
            aopc_selection: c.aopc_until(k),
            aopc_ratio_to_random: c.aopc / baseline.aopc,
        })
        .collect();
    let mut table = String::from("method,aopc,aopc_selection,aopc_ratio_to_random\n");
    let _ = writeln!(table, "random,{},{},1", baseline.aopc, baseline.aopc_until(k));
    for r in &rows {
        let _ = writeln!(table, "{},{},{},{}", r.method, r.aopc, r.aopc_selection, r.aopc_ratio_to_random);
    }
    files::write(&dir.join("aopc.csv"), &table)?;
    let ranking = select_rule(&curves, k)?;
    files::write_json(
        &dir.join("summary.json"),
        &Summary {
            model: net.architecture().to_string(),
            samples: samples.len(),
            steps: cfg.curve.steps,
            score: cfg.curve.kind.as_str(),
            seeds: cfg.curve.seeds.clone(),
            region: cfg.curve.region.extents,
            regions,
            region_fraction_percent: fraction,
            selection_steps: k,
            methods: rows,
            rule_ranking: ranking.clone(),
        },
    )?;
    print!("{table}");
    for r in &ranking {
        println!("rank {}: {} ({:.5}){}", r.rank, r.method, r.score, if r.tied { " tied" } else { "" });
    }
    Ok(())
}

fn write_curve(cfg: &RunConfig, curve: &PerturbationCurve) -> Result<()> {
    let dir = cfg.out.join("perturb");
    files::write(&dir.join(format!("curve_{}.csv", curve.method)), curve.to_csv())?;
    files::write(&dir.join(format!("curve_{}.json", curve.method)), curve.to_json() + "\n")
}
