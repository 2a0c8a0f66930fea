use std::fs;
use std::path::Path;

use kinenet::dataset::{build_dataset, AugmentationGrid, BuildOptions, Manifest, Split};
use kinenet::nn::Model;
use kinenet::trainer::{
    checkpoint_name, evaluate, optimizer_path, read_metrics, resume, train, TrainConfig, TrainError, Trainer, METRICS_HEADER,
};
use kinenet::{builtin_catalog, Catalog, RenderStyle};

/// Eight images: two structures, one scale, two rotations, two shifts.
fn tiny(dir: &Path) -> Manifest {
    let full = builtin_catalog();
    let catalog = Catalog {
        training_examples: vec![full.find("triangle").unwrap().clone(), full.find("hinged_square").unwrap().clone()],
        holdout_examples: vec![],
    };
    let grid = AugmentationGrid::full().subset(&[0], &[0, 2], &[4, 5]);
    build_dataset(&catalog, &grid, &RenderStyle::default(), 3, dir, BuildOptions::default()).unwrap()
}

fn config(out: &Path, epochs: u32) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 3,
        seed: 17,
        checkpoint_dir: Some(out.join("ckpt")),
        metrics_path: Some(out.join("metrics.csv")),
        record_timing: false,
        ..Default::default()
    }
}

#[test]
fn three_epochs_three_checkpoints() {
    let data = tempfile::tempdir().unwrap();
    let m = tiny(data.path());
    let out = tempfile::tempdir().unwrap();
    let (_, records) = train(Model::table1(0), &m, config(out.path(), 3)).unwrap();
    assert_eq!(records.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3]);
    let ckpt = out.path().join("ckpt");
    let mut names: Vec<String> = fs::read_dir(&ckpt).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["epoch_1.knck", "epoch_1.opt", "epoch_2.knck", "epoch_2.opt", "epoch_3.knck", "epoch_3.opt"]);
    let text = fs::read_to_string(out.path().join("metrics.csv")).unwrap();
    assert_eq!(text.lines().next(), Some(METRICS_HEADER));
    assert_eq!(text.lines().count(), 4);
    assert_eq!(read_metrics(&out.path().join("metrics.csv")).unwrap(), records);
    for r in &records {
        assert!((0.0..=1.0).contains(&r.train_acc) && (0.0..=1.0).contains(&r.val_acc));
        assert!(r.train_loss >= 0.0 && r.val_loss >= 0.0);
    }
}

#[test]
fn same_config_same_bytes() {
    let data = tempfile::tempdir().unwrap();
    let m = tiny(data.path());
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train(Model::table1(1), &m, config(a.path(), 2)).unwrap();
    train(Model::table1(1), &m, config(b.path(), 2)).unwrap();
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read(a.path(), "metrics.csv"), read(b.path(), "metrics.csv"));
    for f in ["ckpt/epoch_2.knck", "ckpt/epoch_2.opt"] {
        assert_eq!(read(a.path(), f), read(b.path(), f));
    }
}

#[test]
fn exact_resume_matches_uninterrupted_run() {
    let data = tempfile::tempdir().unwrap();
    let m = tiny(data.path());
    let full = tempfile::tempdir().unwrap();
    let (straight, all) = train(Model::table1(2), &m, config(full.path(), 3)).unwrap();

    let split = tempfile::tempdir().unwrap();
    train(Model::table1(2), &m, config(split.path(), 2)).unwrap();
    let ckpt = split.path().join("ckpt").join(checkpoint_name(2));
    let t = Trainer::resume(&ckpt, &m, config(split.path(), 1)).unwrap();
    assert!(t.is_exact_resume());
    assert_eq!(t.epochs_completed(), 2);
    let (resumed, tail) = resume(&ckpt, &m, config(split.path(), 1)).unwrap();
    assert_eq!(tail, all[2..]);
    assert_eq!(resumed.params(), straight.params());
    let metrics = read_metrics(&split.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.last().unwrap().epoch, 3);
    assert_eq!(fs::read(split.path().join("metrics.csv")).unwrap(), fs::read(full.path().join("metrics.csv")).unwrap());
}

#[test]
fn resume_without_optimizer_state_is_flagged() {
    let data = tempfile::tempdir().unwrap();
    let m = tiny(data.path());
    let out = tempfile::tempdir().unwrap();
    train(Model::table1(3), &m, config(out.path(), 1)).unwrap();
    let ckpt = out.path().join("ckpt").join(checkpoint_name(1));
    fs::remove_file(optimizer_path(&ckpt)).unwrap();
    let mut t = Trainer::resume(&ckpt, &m, config(out.path(), 1)).unwrap();
    assert!(!t.is_exact_resume());
    assert_eq!(t.optimizer().t, 0);
    assert_eq!(t.run_epoch().unwrap().epoch, 2);
}

#[test]
fn corrupt_checkpoint_stops_before_training() {
    let data = tempfile::tempdir().unwrap();
    let m = tiny(data.path());
    let out = tempfile::tempdir().unwrap();
    let bad = out.path().join("bad.knck");
    fs::write(&bad, b"KNCK garbage").unwrap();
    let err = resume(&bad, &m, config(out.path(), 1)).unwrap_err();
    assert!(err.to_string().contains("bad.knck"), "{err}");
    assert!(!out.path().join("ckpt").exists());
    assert!(!out.path().join("metrics.csv").exists());
}

#[test]
fn invalid_configs_rejected() {
    let data = tempfile::tempdir().unwrap();
    let m = tiny(data.path());
    let out = tempfile::tempdir().unwrap();
    for cfg in [config(out.path(), 0), TrainConfig { batch_size: 0, ..config(out.path(), 1) }] {
        assert!(matches!(train(Model::table1(0), &m, cfg), Err(TrainError::Config(_))));
    }
}

#[test]
fn evaluation_contract() {
    let data = tempfile::tempdir().unwrap();
    let m = tiny(data.path());
    let model = Model::<f32>::table1(4);
    let a = evaluate(&model, &m, Split::Test, 4).unwrap();
    let b = evaluate(&model, &m, Split::Test, 4).unwrap();
    assert_eq!(a, b);
    let mut idx: Vec<usize> = a.predictions.iter().map(|p| p.index).collect();
    idx.sort_unstable();
    assert_eq!(idx, m.split_indices(Split::Test));
    for p in &a.predictions {
        assert_eq!(p.predicted, u8::from(p.probability >= 0.5));
        assert_eq!(p.path, m.samples[p.index].path);
    }

    let err = evaluate(&model, &m, Split::Holdout, 4).unwrap_err();
    assert!(err.to_string().contains("empty split"), "{err}");

    let mut zero = model.clone();
    let last = zero.layers().len() - 1;
    zero.layer_params_mut(last).0.fill(0.0);
    let e = evaluate(&zero, &m, Split::Train, 3).unwrap();
    assert!(e.predictions.iter().all(|p| p.probability == 0.5 && p.predicted == 1));
    let ones = m.split_indices(Split::Train).iter().filter(|&&i| m.samples[i].label == 1).count();
    assert_eq!(e.accuracy, ones as f64 / m.count(Split::Train) as f64);
}
