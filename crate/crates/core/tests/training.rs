use std::fs;

use msoreid::data::{generate_synthetic, ImageRecord, SyntheticDatasetConfig};
use msoreid::losses::LossFlags;
use msoreid::train::{
    config_diff, matrix_cells, AblationMatrix, ExperimentConfig, RunManifest, Trainer, RUN_MANIFEST_FILE, STEP_LOG_FILE,
};
use msoreid::Error;

fn smoke_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.dataset.synthetic = SyntheticDatasetConfig {
        num_identities: 8,
        num_train_identities: 4,
        images_per_id_per_modality: 4,
        ..Default::default()
    };
    cfg.train.epochs = 2;
    cfg.train.milestones = vec![1];
    cfg.train.batches_per_epoch = 3;
    cfg.eval.num_trials = 1;
    cfg
}

fn smoke_records(cfg: &ExperimentConfig) -> Vec<ImageRecord> {
    generate_synthetic(&cfg.dataset.synthetic).unwrap()
}

#[test]
fn smoke_run_writes_manifest_log_and_checkpoints() {
    let cfg = smoke_config();
    let dir = tempfile::tempdir().unwrap();
    let mut trainer = Trainer::new(cfg.clone(), smoke_records(&cfg)).unwrap();
    let manifest = trainer.fit(Some(dir.path())).unwrap();

    let back = RunManifest::load(&dir.path().join(RUN_MANIFEST_FILE)).unwrap();
    assert_eq!(back, manifest);
    assert_eq!(back.config, cfg);
    assert_eq!(back.epochs.len(), 2);
    assert_eq!(back.num_train_identities, 4);
    let metrics = back.final_metrics.as_ref().unwrap();
    assert!((0.0..=1.0).contains(&metrics.r1));
    let g = back.geometry.unwrap();
    assert!(g.d_intra.is_finite() && g.d_inter.is_finite());

    let log = fs::read_to_string(dir.path().join(STEP_LOG_FILE)).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 6);
    for (i, line) in lines.iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["step"], i + 1);
        assert!(v["total"].as_f64().unwrap().is_finite());
    }
    assert!(back.epochs[1].lr < back.epochs[0].lr);

    assert!(!back.checkpoints.is_empty());
    for c in &back.checkpoints {
        assert!(c.is_dir(), "{}", c.display());
        msoreid::model::load_checkpoint(c).unwrap();
    }
}

#[test]
fn reruns_produce_identical_step_logs() {
    let cfg = smoke_config();
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(cfg.clone(), smoke_records(&cfg)).unwrap();
        let m = t.fit(Some(dir.path())).unwrap();
        (fs::read_to_string(dir.path().join(STEP_LOG_FILE)).unwrap(), m.final_metrics)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
}

#[test]
fn fixed_weights_stay_fixed_while_the_model_trains() {
    let mut cfg = smoke_config();
    cfg.loss.set_flags(LossFlags::FULL);
    let mut trainer = Trainer::new(cfg.clone(), smoke_records(&cfg)).unwrap();
    let perceptual = trainer.perceptual().unwrap().weights_snapshot().unwrap();
    let params = trainer.net().store().snapshot().unwrap();
    assert!(params.keys().all(|k| !k.contains("sobel") && !k.contains("perceptual")));
    trainer.step(0).unwrap();
    assert_eq!(trainer.perceptual().unwrap().weights_snapshot().unwrap(), perceptual);
    let after = trainer.net().store().snapshot().unwrap();
    assert_eq!(after.keys().collect::<Vec<_>>(), params.keys().collect::<Vec<_>>());
    assert!(after.iter().any(|(k, v)| k.starts_with("params.rgb_stem.") && *v != params[k]));
    assert!(after.iter().any(|(k, v)| k.starts_with("params.ir_stem.") && *v != params[k]));
    assert!(after.iter().any(|(k, v)| k.starts_with("params.trunk.") && *v != params[k]));
}

#[test]
fn default_schedule_and_baseline_terms() {
    let cfg = ExperimentConfig::default();
    cfg.validate().unwrap();
    assert!((cfg.train.lr_at(0) - 5e-4).abs() < 1e-18);
    assert!((cfg.train.lr_at(21) - 5e-5).abs() < 1e-18);
    assert!((cfg.train.lr_at(30) - 5e-6).abs() < 1e-18);
    let b = LossFlags::BASELINE;
    assert_eq!((b.pef, b.id, b.wrt, b.cmcc), (false, true, true, false));
}

#[test]
fn non_finite_loss_aborts_and_points_at_last_checkpoint() {
    let mut cfg = smoke_config();
    cfg.train.gamma = 1e33;
    cfg.train.batches_per_epoch = 4;
    let dir = tempfile::tempdir().unwrap();
    let mut trainer = Trainer::new(cfg.clone(), smoke_records(&cfg)).unwrap();
    let err = trainer.fit(Some(dir.path())).unwrap_err();
    match &err {
        Error::Aborted { epoch, last_good, .. } => {
            assert_eq!(*epoch, 1);
            assert_eq!(last_good.as_deref(), Some(dir.path().join("checkpoints/last").as_path()));
        }
        other => panic!("expected an abort, got {other}"),
    }
    assert!(err.to_string().contains("checkpoints/last"), "{err}");
}

#[test]
fn ablation_cells_change_only_loss_or_fusion_keys() {
    let base = smoke_config();
    for matrix in [AblationMatrix::Loss, AblationMatrix::Fusion] {
        let cells = matrix_cells(&base, matrix);
        for a in &cells {
            for b in &cells {
                for (key, _, _) in config_diff(&a.config, &b.config).unwrap() {
                    assert!(key.starts_with("loss."), "{} vs {}: {key}", a.label, b.label);
                }
            }
        }
    }
}

