use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use wdm::checkpoint::load_checkpoint;
use wdm::experiment::ExperimentConfig;

fn wdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wdm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// A config small enough to train in a few seconds.
fn small_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = ExperimentConfig::default();
    cfg.output_dir = dir.join("run");
    cfg.train.epochs = 60;
    cfg.data.holdout_size = 400;
    cfg.verify.fidelity_samples = 400;
    cfg.verify.repetitions = 40;
    cfg.attack.perturb_stds = vec![0.0, 0.01];
    cfg.prove.sweeps = 50;
    cfg.prove.mc_configs = 3;
    cfg.prove.mc_samples = 20_000;
    let path = dir.join("small.toml");
    fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    path
}

fn hash_of(report: &Path) -> String {
    let v: toml::Value = toml::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    v["config_hash"].as_str().unwrap().to_string()
}

#[test]
fn full_pipeline_detects_watermark_and_passes_null() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let run = tmp.path().join("run");

    for sub in ["train", "embed", "extract"] {
        let out = wdm(&[sub, "--config", cfg]);
        assert_eq!(code(&out), 0, "{sub}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["baseline.wdmk", "control.wdmk", "watermarked.wdmk", "config.toml", "extracted.csv", "train_loss.csv"] {
        assert!(run.join(f).exists(), "{f} missing");
    }

    let out = wdm(&["verify", "--config", cfg]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let report = run.join("verify_report.toml");
    let v: toml::Value = toml::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(v["report"]["verdict"].as_bool().unwrap());
    assert!(v["report"]["p_value"].as_float().unwrap() < 1e-3);

    let archived = ExperimentConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(hash_of(&report), archived.hash().unwrap());

    // Two independently trained clean models: no watermark.
    let baseline = run.join("baseline.wdmk");
    let out = wdm(&["verify", "--config", cfg, "--suspect", baseline.to_str().unwrap()]);
    assert_eq!(code(&out), 10);
    let out = wdm(&[
        "verify",
        "--config",
        cfg,
        "--suspect",
        baseline.to_str().unwrap(),
        "--set",
        "verify.polarity=\"clean-is-success\"",
    ]);
    assert_eq!(code(&out), 0);

    let out = wdm(&["attack", "--config", cfg]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(run.join("attack_perturb.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(headers.iter().next_back(), Some("config_hash"));
    let rows: Vec<_> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert!(run.join("attack_quantize.toml").exists());
    let trend = csv::Reader::from_path(run.join("attack_finetune.csv")).unwrap().records().count();
    assert!(trend >= 2);

    let out = wdm(&["report", "--config", cfg]);
    assert_eq!(code(&out), 0);
    let summary = fs::read_to_string(run.join("summary.csv")).unwrap();
    assert!(summary.starts_with("job,file,key,value,config_hash"));
    assert!(summary.contains("report.verdict"));
}

#[test]
fn training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let set = format!("output_dir=\"{}\"", dir.display());
        let out = wdm(&["train", "--config", cfg, "--set", &set, "--set", "train.epochs=5"]);
        assert_eq!(code(&out), 0);
    }
    for f in ["baseline.wdmk", "control.wdmk"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ckpt = load_checkpoint(&a.join("baseline.wdmk")).unwrap();
    assert_eq!(ckpt.steps, 100);

    let out = wdm(&["train", "--config", cfg, "--set", &format!("output_dir=\"{}\"", b.display()), "--set", "train.epochs=5", "--seed", "7"]);
    assert_eq!(code(&out), 0);
    assert_ne!(fs::read(a.join("baseline.wdmk")).unwrap(), fs::read(b.join("baseline.wdmk")).unwrap());
}

#[test]
fn prove_passes_on_small_suite() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = wdm(&["prove", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = fs::read_to_string(tmp.path().join("run/prove_report.toml")).unwrap();
    assert!(text.contains("all_passed = true"));
}

#[test]
fn report_merges_job_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let root = tmp.path().join("run");
    for job in ["job0", "job1"] {
        let set = format!("output_dir=\"{}\"", root.join(job).display());
        let out = wdm(&["prove", "--config", cfg, "--set", &set]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(code(&wdm(&["report", "--config", cfg])), 0);
    let summary = fs::read_to_string(root.join("summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("job0,prove_report.toml")));
    assert!(summary.lines().any(|l| l.starts_with("job1,prove_report.toml")));
}

#[test]
fn errors_map_to_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();

    assert_eq!(code(&wdm(&["frobnicate"])), 2);
    assert_eq!(code(&wdm(&["train", "--config", cfg, "--set", "train.nonsense=1"])), 3);
    assert_eq!(code(&wdm(&["train", "--config", cfg, "--set", "schedule.steps=0"])), 3);

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "seed = \"not a number\"").unwrap();
    assert_eq!(code(&wdm(&["train", "--config", bad.to_str().unwrap()])), 3);
    let missing = tmp.path().join("missing.toml");
    assert_eq!(code(&wdm(&["train", "--config", missing.to_str().unwrap()])), 4);

    // Verify before anything was trained: checkpoints are missing.
    assert_eq!(code(&wdm(&["verify", "--config", cfg])), 4);

    let run = tmp.path().join("run");
    fs::write(run.join("watermarked.wdmk"), b"WDMK\x01\x00garbage").unwrap();
    fs::write(run.join("control.wdmk"), b"WDMK\x01\x00garbage").unwrap();
    assert_eq!(code(&wdm(&["verify", "--config", cfg])), 7);

    let ds = tmp.path().join("points.csv");
    fs::write(&ds, "0.1,0.2\n0.3,oops\n").unwrap();
    let set = format!("data.task={{kind=\"file\", path=\"{}\", format=\"csv-points\"}}", ds.display());
    assert_eq!(code(&wdm(&["train", "--config", cfg, "--set", &set])), 6);
}

#[test]
fn init_config_writes_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("default.toml");
    assert_eq!(code(&wdm(&["init-config", path.to_str().unwrap()])), 0);
    assert_eq!(ExperimentConfig::load(&path).unwrap(), ExperimentConfig::default());
}
