use anyhow::{bail, Result};
use gaitxai_core::evaluate::{confusion_matrix, metrics, ConfusionMatrix, MetricReport};
use gaitxai_core::gait::{load_dataset, Dataset};
use gaitxai_core::network::{build_architecture, load_model_expecting, save_model, Network};
use gaitxai_core::train::{evaluate_loss, predict_classes, train, Split};
use serde::Serialize;

use crate::config::RunConfig;
use crate::files;

pub fn load_split_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let ds = load_dataset(&cfg.dataset)?;
    if ds.split.is_none() {
        bail!("{} has no split assignment; create it with synth or ingest", cfg.dataset.display());
    }
    Ok(ds)
}

fn test_confusion(net: &Network<f32>, ds: &Dataset) -> Result<ConfusionMatrix> {
    let test = ds.examples(Split::Test)?;
    let predictions = predict_classes(net, &test)?;
    let labels: Vec<usize> = test.iter().map(|e| e.label).collect();
    let mut cm = confusion_matrix(&predictions, &labels, ds.n_classes())?;
    cm.labels.clone_from(&ds.class_names);
    Ok(cm)
}

#[derive(Serialize)]
struct TrainSummary {
    architecture: String,
    parameters: usize,
    seed: u64,
    epochs_run: usize,
    final_val_loss: Option<f64>,
    final_val_accuracy: Option<f64>,
    test_accuracy: f64,
    test_macro_f1: f64,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let ds = load_split_dataset(cfg)?;
    let train_set = ds.examples(Split::Train)?;
    let val_set = ds.examples(Split::Validation)?;
    let mut net = build_architecture::<f32>(cfg.arch, &ds.model_shape, ds.n_classes(), &cfg.arch_cfg)?;
    net.init_parameters(cfg.init_seed());
    eprintln!(
        "training {} ({} parameters) on {} samples, validating on {}",
        cfg.arch,
        net.parameter_count(),
        train_set.len(),
        val_set.len()
    );
    let (net, history) = train(net, &train_set, &val_set, &cfg.train)?;
    files::ensure_parent(&cfg.model)?;
    save_model(&net, &cfg.model)?;
    files::write(&cfg.out.join("history.csv"), history.to_csv())?;

    let last = history.records.last();
    let report = metrics(&test_confusion(&net, &ds)?);
    let summary = TrainSummary {
        architecture: cfg.arch.to_string(),
        parameters: net.parameter_count(),
        seed: cfg.seed,
        epochs_run: history.len(),
        final_val_loss: last.map(|r| r.val_loss),
        final_val_accuracy: last.map(|r| r.val_acc),
        test_accuracy: report.accuracy,
        test_macro_f1: report.macro_f1,
    };
    files::write_json(&cfg.out.join("train.json"), &summary)?;
    if let Some(r) = last {
        println!("validation loss {:.4}, accuracy {:.4}", r.val_loss, r.val_acc);
    } else if !val_set.is_empty() {
        let (loss, acc) = evaluate_loss(&net, &val_set)?;
        println!("validation loss {loss:.4}, accuracy {acc:.4}");
    }
    println!("test accuracy {:.4}, macro-F1 {:.4}", report.accuracy, report.macro_f1);
    Ok(())
}

#[derive(Serialize)]
struct EvaluationRecord<'a> {
    architecture: String,
    seed: u64,
    split: &'static str,
    class_names: &'a [String],
    #[serde(flatten)]
    report: &'a MetricReport,
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let ds = load_split_dataset(cfg)?;
    let net = load_model_expecting(&cfg.model, ds.n_classes())?;
    let cm = test_confusion(&net, &ds)?;
    let report = metrics(&cm);
    if report.undefined {
        eprintln!("warning: the test split is empty; metrics are undefined");
    }
    files::write(&cfg.out.join("confusion.csv"), cm.to_csv())?;
    files::write(&cfg.out.join("metrics.csv"), report.to_csv())?;
    files::write_json(
        &cfg.out.join("metrics.json"),
        &EvaluationRecord {
            architecture: net.architecture().to_string(),
            seed: cfg.seed,
            split: Split::Test.as_str(),
            class_names: &ds.class_names,
            report: &report,
        },
    )?;
    println!(
        "test accuracy {:.4}, macro-F1 {:.4}, weighted-F1 {:.4}",
        report.accuracy, report.macro_f1, report.weighted_f1
    );
    Ok(())
}
