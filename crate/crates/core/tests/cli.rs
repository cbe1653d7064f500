use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use s2seg::cli::{ProfileReport, RunConfig};
use s2seg::datagen::Dataset;
use s2seg::network::{ModelFile, Network};
use s2seg::training::{predict, EvalReport};
use tempfile::TempDir;

const TINY: &str = "s2seg-model 1
head segmentation
nonlinearity relu
layer S2SO3conv 1 3 8 4 0.5 4 2 1
layer SO3S2conv 3 11 4 8 1.0 3 2 3
";

fn s2seg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s2seg"))
        .args(args)
        .env_remove("S2SEG_SEED")
        .env_remove("S2SEG_OUT")
        .env_remove("S2SEG_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = s2seg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A tiny model and a 12-record dataset at bandlimit 8 inside `dir`.
fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let spec = dir.join("tiny.txt");
    fs::write(&spec, TINY).unwrap();
    ok(&["gen-model", "--spec", p(&spec), "--seed", "3", "--out", p(&dir.join("m"))]);
    ok(&["gen-data", "--count", "12", "--bandlimit", "8", "--synthetic-sources", "30", "--seed", "4", "--out", p(&dir.join("d"))]);
    (dir.join("m/model.sphm"), dir.join("d/dataset.sphd"))
}

#[test]
fn eval_scores_one_when_masks_equal_predictions() {
    let tmp = TempDir::new().unwrap();
    let (model, data) = fixture(tmp.path());
    let m = ModelFile::load(&model).unwrap();
    let net = Network::new(m.spec.clone()).unwrap();
    let mut ds = Dataset::load(&data).unwrap();
    for rec in &mut ds.records {
        rec.mask = predict(&net, &m.params, &rec.signal).unwrap().1;
    }
    assert!(ds.records.iter().any(|r| r.mask.iter().any(|&c| c != 0)), "stub predicts background only");
    let stub = tmp.path().join("stub.sphd");
    ds.save(&stub).unwrap();
    let out = tmp.path().join("e");
    ok(&["eval", "--model", p(&model), "--dataset", p(&stub), "--out", p(&out)]);
    let report: EvalReport = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report.miou, Some(1.0));
    assert_eq!(report.accuracy, 1.0);
    assert!(matches!(RunConfig::load(&out).unwrap(), RunConfig::Eval(_)));
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let tmp = TempDir::new().unwrap();
    let (model, data) = fixture(tmp.path());
    let out = tmp.path().join("t");
    ok(&["train", "--model", p(&model), "--dataset", p(&data), "--epochs", "2", "--batch-size", "4", "--lr", "0", "--out", p(&out)]);
    let before = ModelFile::load(&model).unwrap();
    let after = ModelFile::load(&out.join("model.sphm")).unwrap();
    assert!(before.params.iter().zip(&after.params).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(after.adam.unwrap().t, 6);
    let lines = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);
}

#[test]
fn single_thread_runs_are_bitwise_identical() {
    let tmp = TempDir::new().unwrap();
    let (model, data) = fixture(tmp.path());
    let mut models = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        ok(&["--threads", "1", "train", "--model", p(&model), "--dataset", p(&data), "--epochs", "2", "--batch-size", "4", "--seed", "9", "--out", p(&out)]);
        models.push(fs::read(out.join("model.sphm")).unwrap());
    }
    assert_eq!(models[0], models[1]);
    let again = tmp.path().join("d2");
    ok(&["--threads", "1", "gen-data", "--count", "12", "--bandlimit", "8", "--synthetic-sources", "30", "--seed", "4", "--out", p(&again)]);
    assert_eq!(fs::read(again.join("dataset.sphd")).unwrap(), fs::read(&data).unwrap());
}

#[test]
fn profile_fractions_cover_every_layer() {
    let tmp = TempDir::new().unwrap();
    let (model, _) = fixture(tmp.path());
    let out = tmp.path().join("p");
    ok(&["profile", "--model", p(&model), "--batch", "2", "--iterations", "5", "--warmup", "1", "--out", p(&out)]);
    let report: ProfileReport = serde_json::from_str(&fs::read_to_string(out.join("profile.json")).unwrap()).unwrap();
    assert!((report.layer_fraction_sum() - 100.0).abs() <= 0.5);
    assert_eq!(report.layers.len(), 2);
    assert_eq!(report.layers.last().unwrap().name, "SO3S2conv");
    let ops: f64 = report.op_fractions.values().sum();
    assert!((ops - 100.0).abs() <= 0.5);
    for key in ["transform", "block_multiply", "pointwise"] {
        assert!(report.op_fractions.contains_key(key), "{key}");
    }
    match RunConfig::load(&out).unwrap() {
        RunConfig::Profile { threads, .. } => assert!(threads >= 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(s2seg(&["verify", "--level", "quick"]).status.code(), Some(0));
    assert_eq!(s2seg(&["verify", "--level", "quick", "--tolerance-scale", "1e-30"]).status.code(), Some(2));
    let missing = tmp.path().join("missing.sphm");
    let data = tmp.path().join("missing.sphd");
    assert_eq!(s2seg(&["eval", "--model", p(&missing), "--dataset", p(&data)]).status.code(), Some(3));
    let junk = tmp.path().join("junk.sphm");
    fs::write(&junk, b"not a model").unwrap();
    assert_eq!(s2seg(&["eval", "--model", p(&junk), "--dataset", p(&data)]).status.code(), Some(3));
    let out = tmp.path().join("x");
    assert_eq!(s2seg(&["gen-data", "--count", "1", "--bandlimit", "0", "--out", p(&out)]).status.code(), Some(4));
    assert_eq!(
        s2seg(&["gen-model", "--param-lo", "10", "--param-hi", "5", "--bandlimit", "8", "--out", p(&out)]).status.code(),
        Some(4)
    );
}

#[test]
fn background_only_dataset_has_undefined_miou() {
    let tmp = TempDir::new().unwrap();
    let (model, data) = fixture(tmp.path());
    let mut ds = Dataset::load(&data).unwrap();
    for rec in &mut ds.records {
        rec.mask.iter_mut().for_each(|c| *c = 0);
    }
    let bg = tmp.path().join("bg.sphd");
    ds.save(&bg).unwrap();
    // foreground predictions against empty truth score IoU 0, which is defined
    assert_eq!(s2seg(&["eval", "--model", p(&model), "--dataset", p(&bg)]).status.code(), Some(0));
    // zero parameters give tied logits, resolved to background everywhere
    let mut m = ModelFile::load(&model).unwrap();
    m.params.iter_mut().for_each(|v| *v = 0.0);
    let zero = tmp.path().join("zero.sphm");
    m.save(&zero).unwrap();
    assert_eq!(s2seg(&["eval", "--model", p(&zero), "--dataset", p(&bg)]).status.code(), Some(2));
}

#[test]
fn config_round_trip_and_environment_override() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("g");
    let status = Command::new(env!("CARGO_BIN_EXE_s2seg"))
        .args(["gen-data", "--count", "2", "--synthetic-sources", "5"])
        .env("S2SEG_OUT", &out)
        .env("S2SEG_SEED", "77")
        .env("S2SEG_BANDLIMIT", "6")
        .output()
        .unwrap();
    assert!(status.status.success());
    let cfg = RunConfig::load(&out).unwrap();
    let RunConfig::GenData { args, data } = &cfg else { panic!("{cfg:?}") };
    assert_eq!((args.seed, args.bandlimit, data.seed, data.bandlimit), (77, 6, 77, 6));
    assert_eq!(Dataset::load(&out.join("dataset.sphd")).unwrap().header.bandlimit, 6);
    let again = tmp.path().join("again");
    cfg.save(&again).unwrap();
    assert_eq!(fs::read(out.join("config.json")).unwrap(), fs::read(again.join("config.json")).unwrap());
}

#[test]
fn sources_file_feeds_data_generation() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("s");
    ok(&["gen-sources", "--count", "20", "--seed", "1", "--out", p(&src)]);
    let out = tmp.path().join("d");
    ok(&["gen-data", "--sources", p(&src.join("sources.gray")), "--count", "3", "--bandlimit", "6", "--out", p(&out)]);
    assert_eq!(Dataset::load(&out.join("dataset.sphd")).unwrap().records.len(), 3);
}
