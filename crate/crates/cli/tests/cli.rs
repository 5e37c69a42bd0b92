use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gaitxai_core::network::{build_architecture, load_model, ArchConfig, Architecture};
use gaitxai_core::rng;
use serde_json::Value;

fn gaitxai(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaitxai"))
        .args(args)
        .env_remove("GAITXAI_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gaitxai(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = gaitxai(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const TINY: [&str; 6] = [
    "--set",
    "synth.samples_per_class=8",
    "--set",
    "batch_size=8",
    "--set",
    "epochs=2",
];

fn tiny_run(dir: &Path, extra: &[&str]) {
    let out = dir.to_str().unwrap();
    for cmd in ["synth", "train", "evaluate"] {
        let mut args = vec![cmd, "--out", out, "--threads", "1"];
        args.extend(TINY);
        args.extend(extra);
        ok(&args);
    }
}

#[test]
fn synth_census_matches_the_requested_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let stdout = ok(&["synth", "--out", out, "--set", "synth.samples_per_class=5", "--set", "synth.classes=3"]);
    assert!(stdout.contains("samples 15 (500x18)"), "{stdout}");
    let census = json(&dir.path().join("census.json"));
    assert_eq!(census["total"], 15);
    assert_eq!(census["per_class"]["severity2"], 5);
    assert!(dir.path().join("dataset.grfd").exists());
    assert!(dir.path().join("synth.config.txt").exists());
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["synth", "--out", out, "--seed", "9", "--set", "synth.samples_per_class=4"]);
    ok(&["train", "--out", out, "--seed", "9", "--set", "epochs=0"]);
    let saved = load_model(dir.path().join("model.grfx")).unwrap();
    let mut fresh = build_architecture::<f32>(Architecture::Single, &[50, 15, 12], 4, &ArchConfig::default()).unwrap();
    fresh.init_parameters(rng::sub_seed(9, rng::INIT));
    assert_eq!(saved, fresh);
    assert_eq!(
        fs::read_to_string(dir.path().join("history.csv")).unwrap(),
        "epoch,train_loss,val_loss,train_acc,val_acc\n"
    );
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    tiny_run(a.path(), &[]);
    tiny_run(b.path(), &[]);
    for f in ["dataset.grfd", "model.grfx", "history.csv", "metrics.json", "confusion.csv", "census.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
    let c = tempfile::tempdir().unwrap();
    tiny_run(c.path(), &["--seed", "7"]);
    assert_ne!(fs::read(a.path().join("model.grfx")).unwrap(), fs::read(c.path().join("model.grfx")).unwrap());
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# test\nepochs = 3\nseed = 5\narch = parallel\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let dump = ok(&["config", "--config", cfg, "--set", "epochs=4"]);
    assert!(dump.contains("epochs = 4\n"), "{dump}");
    assert!(dump.contains("seed = 5\n"));
    assert!(dump.contains("arch = parallel\n"));
    let dump = ok(&["config", "--config", cfg, "--seed", "11"]);
    assert!(dump.contains("seed = 11\n") && dump.contains("epochs = 3\n"));
    let err = fails(&["config", "--set", "epoch=3"]);
    assert!(err.contains("unknown config key"), "{err}");
    assert!(ok(&["config", "--keys"]).contains("perturb.region"));
}

fn physionet_fixture(dir: &Path, name: &str, rows: usize, cols: usize) {
    let mut text = String::new();
    for r in 0..rows {
        let _ = write!(text, "{:.2}", r as f64 / 100.0);
        for c in 1..cols {
            let _ = write!(text, "\t{}", ((r * 7 + c * 13) % 50) as f64 + (c % 3) as f64 * 0.5);
        }
        text.push('\n');
    }
    fs::write(dir.join(name), text).unwrap();
}

#[test]
fn force_plate_ingestion_labels_windows_and_lists_failures() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    for (i, name) in ["GaCo01_01.txt", "GaCo02_01.txt", "GaPt03_01.txt", "GaPt04_01.txt", "JuPt05_01.txt"]
        .iter()
        .enumerate()
    {
        physionet_fixture(&data, name, 1000 + 300 * i, 19);
    }
    fs::write(data.join("notes.txt"), "ignored").unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    let data_s = data.to_str().unwrap();

    let err = fails(&["ingest", "--out", out, "--set", "task=pd-severity", "--set", &format!("data_dir={data_s}")]);
    assert!(err.contains("manifest required for task"), "{err}");

    let stdout = ok(&[
        "ingest", "--out", out, "--set", "task=binary", "--set", &format!("data_dir={data_s}"), "--set", "groups=Ga",
    ]);
    // 2 + 2 + 3 + 3 windows from the Ga recordings.
    assert!(stdout.contains("samples 10 (500x18)"), "{stdout}");
    let census = json(&dir.path().join("run/census.json"));
    assert_eq!(census["per_class"]["control"], 4);
    assert_eq!(census["per_class"]["patient"], 6);

    let manifest = dir.path().join("manifest.csv");
    fs::write(&manifest, "subject_id,label,severity\nGaCo01,0,0\nGaCo02,0,0\nGaPt03,2.5,2.5\nGaPt04,3,3\n").unwrap();
    ok(&[
        "ingest", "--out", out, "--set", "task=pd-severity", "--set", &format!("data_dir={data_s}"),
        "--set", "groups=Ga", "--set", &format!("manifest={}", manifest.display()),
    ]);
    let census = json(&dir.path().join("run/census.json"));
    assert_eq!(census["per_class"]["2.5"], 3);

    // Relative paths resolve against the data root.
    let out_root = Command::new(env!("CARGO_BIN_EXE_gaitxai"))
        .args(["ingest", "--out", out, "--set", "task=binary", "--set", "data_dir=data"])
        .env("GAITXAI_DATA_ROOT", dir.path())
        .output()
        .unwrap();
    assert!(out_root.status.success(), "{}", String::from_utf8_lossy(&out_root.stderr));

    physionet_fixture(&data, "GaPt06_01.txt", 600, 18);
    physionet_fixture(&data, "GaPt07_01.txt", 600, 17);
    let err = fails(&["ingest", "--out", out, "--set", "task=binary", "--set", &format!("data_dir={data_s}")]);
    assert!(err.contains("GaPt06_01.txt") && err.contains("GaPt07_01.txt"), "{err}");
    assert!(err.contains("expected 19 columns"), "{err}");
}

#[test]
fn generic_csv_ingestion_uses_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("walks");
    fs::create_dir(&data).unwrap();
    for s in 0..3 {
        for k in 0..4 {
            let mut text = String::from("a,b,c,d\n");
            for r in 0..10 {
                let _ = writeln!(text, "{},{},{},{}", r + s, k, r * k, (r + s + k) % 3);
            }
            fs::write(data.join(format!("S{s}_{k:02}.csv")), text).unwrap();
        }
    }
    let manifest = dir.path().join("m.csv");
    fs::write(&manifest, "S0,0\nS1,1\nS2,2\n").unwrap();
    let out = dir.path().join("run");
    let common = |extra: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = [
            "ingest", "--out", out.to_str().unwrap(), "--set", "task=identity", "--set", "window=10",
            "--set", "sensors=4", "--set", "model_shape=5x2x4",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        v.push("--set".into());
        v.push(format!("data_dir={}", data.display()));
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let args = common(&[]);
    let err = fails(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(err.contains("manifest required for task identity"), "{err}");
    let m = format!("manifest={}", manifest.display());
    let args = common(&["--set", &m]);
    let stdout = ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(stdout.contains("samples 12 (10x4)"), "{stdout}");

    fs::write(&manifest, "S0,0\nS1,1\n").unwrap();
    let err = fails(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(err.contains("S2"), "{err}");
}

#[test]
fn explain_perturb_and_report_on_a_tiny_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("seed1");
    tiny_run(&run, &["--seed", "1"]);
    let out = run.to_str().unwrap();

    let stdout = ok(&["explain", "--out", out, "--set", "explain.limit=0", "--set", "explain.include_misclassified=true"]);
    let summary = json(&run.join("explain/summary.json"));
    let explained = summary["explained"].as_array().unwrap();
    assert_eq!(explained.len(), 7, "{stdout}");
    let id = explained[0]["sample"].as_str().unwrap().to_string();
    for suffix in ["relevance.csv", "json", "sa.csv"] {
        assert!(run.join(format!("explain/{id}.{suffix}")).exists());
    }
    let sa = fs::read_to_string(run.join(format!("explain/{id}.sa.csv"))).unwrap();
    assert_eq!(sa.lines().count(), 501);

    // The default filter keeps only correctly classified samples.
    ok(&["explain", "--out", out, "--set", "explain.limit=0"]);
    let summary = json(&run.join("explain/summary.json"));
    for e in summary["explained"].as_array().unwrap() {
        assert_eq!(e["label"], e["predicted"]);
    }
    let kept = summary["explained"].as_array().unwrap().len();
    assert_eq!(kept + summary["skipped_misclassified"].as_array().unwrap().len(), 7);

    let recording = id.trim_end_matches("_w0");
    ok(&["explain", "--out", out, "--class", "3", "--sample", recording, "--set", "explain.include_misclassified=true"]);
    let summary = json(&run.join("explain/summary.json"));
    assert_eq!(summary["explained"][0]["class"], 3);
    assert_eq!(summary["explained"].as_array().unwrap().len(), 1);
    ok(&["explain", "--out", out, "--sample", "nothing-matches"]);
    assert_eq!(json(&run.join("explain/summary.json"))["explained"].as_array().unwrap().len(), 0);
    assert!(fails(&["explain", "--out", out, "--class", "9"]).contains("out of range"));

    let stdout = ok(&[
        "perturb", "--out", out, "--set", "perturb.steps=3", "--set", "perturb.seeds=2",
        "--set", "perturb.methods=lrp_spf,epsilon_only,gradient_x_input",
    ]);
    assert!(stdout.contains("0.544%"), "{stdout}");
    for m in ["random", "lrp_spf", "epsilon_only", "gradient_x_input"] {
        let csv = fs::read_to_string(run.join(format!("perturb/curve_{m}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 5, "{m}");
    }
    let comparison = fs::read_to_string(run.join("perturb/comparison.csv")).unwrap();
    assert!(comparison.starts_with("step,baseline,lrp_spf,epsilon_only,gradient_x_input\n"));
    let summary = json(&run.join("perturb/summary.json"));
    assert_eq!(summary["regions"], 288);
    assert_eq!(summary["rule_ranking"].as_array().unwrap().len(), 3);

    let err = fails(&["perturb", "--out", out, "--set", "perturb.methods=lrp_spf,bogus"]);
    assert!(err.contains("valid names") && err.contains("gradient_x_input"), "{err}");

    ok(&["perturb", "--out", out, "--set", "perturb.steps=0", "--set", "perturb.methods=lrp_spf"]);
    let curve = json(&run.join("perturb/curve_lrp_spf.json"));
    assert_eq!(curve["scores"].as_array().unwrap().len(), 1);
    assert_eq!(curve["aopc"], 0.0);

    // A second seed without perturbation output.
    tiny_run(&dir.path().join("seed2"), &["--seed", "2"]);
    let stdout = ok(&["report", dir.path().to_str().unwrap()]);
    assert!(stdout.contains("single,macro_f1,2,"), "{stdout}");
    let report = json(&dir.path().join("report/report.json"));
    assert_eq!(report["runs"], serde_json::json!(["seed1", "seed2"]));
    let accuracy = &report["metrics"][0];
    assert_eq!(accuracy["runs"], 2);
    assert!(report["perturbation"].is_array());

    let stdout = ok(&["report", dir.path().join("seed2").to_str().unwrap()]);
    assert!(stdout.contains(",1,") && stdout.contains(" / 0.00"), "{stdout}");
    let report = json(&dir.path().join("seed2/report/report.json"));
    assert!(report["perturbation"].is_null());
    assert!(report["notes"].to_string().contains("no perturbation curves"));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert!(fails(&["report", empty.to_str().unwrap()]).contains("no run outputs"));
}
