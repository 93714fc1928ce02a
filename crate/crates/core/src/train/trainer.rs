use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::data::{sample_batch, Augmenter, IdentityIndex, ImageBatch, ImageRecord, Split};
use crate::eval::{evaluate_model, MetricsReport};
use crate::losses::{
    center_distance_summary, cmcc_loss, id_loss, pef_loss, total_loss, wrt_loss, LossReport, LossTerms,
    PerceptualNet,
};
use crate::model::{extract_features, l2_normalize, save_checkpoint, CheckpointManifest, InputBuilder, TwoStreamNet};
use crate::{Error, Result};

/// Mean center distances of held-out identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub d_intra: f64,
    pub d_inter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub mean: LossReport,
    pub rank1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSeeds {
    /// Model initialization.
    pub init: u64,
    /// Batch sampling and augmentation.
    pub sampler: u64,
    pub data: u64,
    pub eval: u64,
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub code_version: String,
    pub seeds: RunSeeds,
    pub num_parameters: usize,
    pub num_train_identities: usize,
    pub epochs: Vec<EpochSummary>,
    pub final_metrics: Option<MetricsReport>,
    pub geometry: Option<Geometry>,
    pub checkpoints: Vec<PathBuf>,
    pub step_log: Option<PathBuf>,
}

pub const RUN_MANIFEST_FILE: &str = "run.json";
pub const STEP_LOG_FILE: &str = "steps.jsonl";

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Serialize)]
struct StepLine<'a> {
    step: usize,
    epoch: usize,
    lr: f64,
    #[serde(flatten)]
    report: &'a LossReport,
}

fn sampler_seed(seed: u64) -> u64 {
    seed ^ 0x5A17_E5EE_D000_0001
}

pub struct Trainer {
    cfg: ExperimentConfig,
    records: Vec<ImageRecord>,
    index: IdentityIndex,
    net: TwoStreamNet,
    perceptual: Option<PerceptualNet>,
    opt: AdamW,
    rng: ChaCha8Rng,
    augmenter: Augmenter,
    resizer: Augmenter,
    builder: InputBuilder,
    steps_done: usize,
}

impl Trainer {
    /// Builds the model and optimizer for `records`, whose training
    /// identities must already be contiguous.
    pub fn new(cfg: ExperimentConfig, records: Vec<ImageRecord>) -> Result<Self> {
        cfg.validate()?;
        let dtype = cfg.train.dtype()?;
        let model_cfg = cfg.resolved_model(&records);
        let index = IdentityIndex::new(&records);
        if index.num_identities() < cfg.train.batch.p {
            return Err(Error::Config(format!(
                "{} usable training identities, batch needs {}",
                index.num_identities(),
                cfg.train.batch.p
            )));
        }
        let net = TwoStreamNet::new(&model_cfg, cfg.loss.fusion, cfg.train.seed, dtype)?;
        let perceptual = if cfg.loss.pef {
            Some(PerceptualNet::new(&cfg.loss.perceptual, dtype)?)
        } else {
            None
        };
        let opt = AdamW::new(
            net.store().trainable_vars(),
            ParamsAdamW {
                lr: cfg.train.lr_at(0),
                weight_decay: 0.0,
                ..Default::default()
            },
        )?;
        let mut builder = InputBuilder::for_model(&net, cfg.dataset.normalization.clone());
        builder.stem_edges |= cfg.loss.pef;
        let augmenter = Augmenter::new(cfg.dataset.augment.clone());
        let resizer = Augmenter::new(crate::data::AugmentConfig {
            enabled: false,
            ..cfg.dataset.augment.clone()
        });
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(sampler_seed(cfg.train.seed)),
            cfg,
            records,
            index,
            net,
            perceptual,
            opt,
            augmenter,
            resizer,
            builder,
            steps_done: 0,
        })
    }

    pub fn net(&self) -> &TwoStreamNet {
        &self.net
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// The frozen feature network, present when the edge loss is enabled.
    pub fn perceptual(&self) -> Option<&PerceptualNet> {
        self.perceptual.as_ref()
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    /// Loss terms of one batch, in train mode.
    pub fn batch_losses(&self, batch: &ImageBatch, images: &[RgbImage]) -> Result<LossTerms> {
        let refs: Vec<&RgbImage> = images.iter().collect();
        let input = self.builder.build(&refs, batch.modalities())?;
        let taps = self.net.forward(&input, true)?;
        let labels = batch.labels();
        let mods = batch.modalities();
        let flags = self.cfg.loss.flags();
        let mut terms = LossTerms::default();
        if flags.id {
            terms.id = Some(id_loss(&taps.logits, &labels)?);
        }
        if flags.wrt {
            terms.wrt = Some(wrt_loss(&l2_normalize(&taps.pre_bn)?, &labels)?);
        }
        if flags.cmcc {
            terms.cmcc = Some(cmcc_loss(&taps.normalized, &labels, &mods)?);
        }
        if let Some(net) = &self.perceptual {
            let edges = input
                .stem_edges
                .as_ref()
                .ok_or_else(|| Error::Config("edge maps were not built".into()))?;
            terms.pef = Some(pef_loss(&taps.stem_features, edges, &mods, net, self.cfg.loss.pef_adapter)?);
        }
        Ok(terms)
    }

    /// One optimizer step at `epoch`'s learning rate.
    pub fn step(&mut self, epoch: usize) -> Result<LossReport> {
        self.opt.set_learning_rate(self.cfg.train.lr_at(epoch));
        let batch = sample_batch(&self.index, self.cfg.train.batch, self.cfg.train.shortfall, &mut self.rng)?;
        let images: Vec<RgbImage> = batch
            .items
            .iter()
            .map(|it| self.augmenter.augment(&self.records[it.record].image, &mut self.rng))
            .collect();
        let terms = self.batch_losses(&batch, &images)?;
        let (total, report) = total_loss(&terms)?;
        self.opt.backward_step(&total)?;
        self.net.clamp_parameters()?;
        self.steps_done += 1;
        Ok(report)
    }

    pub fn evaluate(&self) -> Result<MetricsReport> {
        evaluate_model(
            &self.net,
            &self.records,
            &self.cfg.eval,
            &self.builder,
            &self.resizer,
            self.cfg.train.extract_batch_size,
        )
    }

    /// Center distances of the held-out identities, computed from
    /// unit-length post-BN features of every non-training image.
    pub fn geometry(&self) -> Result<Geometry> {
        let test: Vec<&ImageRecord> = self.records.iter().filter(|r| r.split != Split::Train).collect();
        let feats = extract_features(&self.net, &test, &self.builder, &self.resizer, self.cfg.train.extract_batch_size)?;
        let rows: Vec<Vec<f64>> = (0..feats.rows)
            .map(|i| {
                let r = feats.row(i);
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                r.iter().map(|v| v / n).collect()
            })
            .collect();
        let labels: Vec<usize> = test.iter().map(|r| r.identity).collect();
        let mods: Vec<_> = test.iter().map(|r| r.modality).collect();
        let (d_intra, d_inter) = center_distance_summary(&rows, &labels, &mods)?;
        Ok(Geometry { d_intra, d_inter })
    }

    fn checkpoint_manifest(&self, epoch: usize) -> CheckpointManifest {
        CheckpointManifest {
            format_version: 0,
            model: self.net.config().clone(),
            fusion: self.net.fusion_kind(),
            dtype: String::new(),
            epoch,
            seed: self.cfg.train.seed,
            sampler_word_pos: Some(self.rng.get_word_pos().to_string()),
            experiment: serde_json::to_value(&self.cfg).ok(),
        }
    }

    /// Runs every epoch. With `out`, writes the step log, `last` and
    /// `best` checkpoints and `run.json` there.
    pub fn fit(&mut self, out: Option<&Path>) -> Result<RunManifest> {
        let mut log = match out {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let p = dir.join(STEP_LOG_FILE);
                Some(BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?))
            }
            None => None,
        };
        let last_dir = out.map(|d| d.join("checkpoints").join("last"));
        let best_dir = out.map(|d| d.join("checkpoints").join("best"));
        let mut last_good: Option<PathBuf> = None;
        let mut best_r1 = f64::NEG_INFINITY;
        let mut epochs = Vec::new();
        let mut final_metrics = None;
        let train = self.cfg.train.clone();
        for epoch in 0..train.epochs {
            let lr = train.lr_at(epoch);
            let mut reports = Vec::with_capacity(train.batches_per_epoch);
            for _ in 0..train.batches_per_epoch {
                let report = self.step(epoch).map_err(|e| Error::Aborted {
                    epoch,
                    step: self.steps_done,
                    source: Box::new(e),
                    last_good: last_good.clone(),
                })?;
                if let Some(w) = log.as_mut() {
                    let line = StepLine {
                        step: self.steps_done,
                        epoch,
                        lr,
                        report: &report,
                    };
                    writeln!(w, "{}", serde_json::to_string(&line)?).map_err(|e| Error::io(out.unwrap(), e))?;
                }
                reports.push(report);
            }
            let mean = LossReport::mean(&reports);
            log::info!(
                "epoch {epoch} lr {lr:.2e} pef {:.4} id {:.4} wrt {:.4} cmcc {:.4} total {:.4}",
                mean.pef,
                mean.id,
                mean.wrt,
                mean.cmcc,
                mean.total
            );
            if let Some(dir) = &last_dir {
                save_checkpoint(dir, &self.net, &self.checkpoint_manifest(epoch))?;
                last_good = Some(dir.clone());
            }
            let is_last = epoch + 1 == train.epochs;
            let due = train.eval_every > 0 && (epoch + 1) % train.eval_every == 0;
            let mut rank1 = None;
            if due || is_last {
                let metrics = self.evaluate()?;
                log::info!("epoch {epoch} rank-1 {:.4} mAP {:.4} mINP {:.4}", metrics.r1, metrics.map, metrics.minp);
                rank1 = Some(metrics.r1);
                if metrics.r1 > best_r1 {
                    best_r1 = metrics.r1;
                    if let (true, Some(dir)) = (train.keep_best, &best_dir) {
                        save_checkpoint(dir, &self.net, &self.checkpoint_manifest(epoch))?;
                    }
                }
                if is_last {
                    final_metrics = Some(metrics);
                }
            }
            epochs.push(EpochSummary {
                epoch,
                lr,
                steps: reports.len(),
                mean,
                rank1,
            });
        }
        if let Some(w) = log.as_mut() {
            w.flush().map_err(|e| Error::io(out.unwrap(), e))?;
        }
        let geometry = Some(self.geometry()?);
        let mut checkpoints = Vec::new();
        checkpoints.extend(last_dir.filter(|d| d.exists()));
        checkpoints.extend(best_dir.filter(|d| d.exists()));
        let manifest = RunManifest {
            config: self.cfg.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: RunSeeds {
                init: train.seed,
                sampler: sampler_seed(train.seed),
                data: self.cfg.dataset.synthetic.seed,
                eval: self.cfg.eval.seed,
            },
            num_parameters: self.net.store().num_parameters(),
            num_train_identities: self.index.num_identities(),
            epochs,
            final_metrics,
            geometry,
            checkpoints,
            step_log: out.map(|d| d.join(STEP_LOG_FILE)),
        };
        if let Some(dir) = out {
            manifest.save(&dir.join(RUN_MANIFEST_FILE))?;
        }
        Ok(manifest)
    }
}

/// Loads the dataset named by `cfg` and trains.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunManifest> {
    let records = cfg.dataset.load()?;
    let mut trainer = Trainer::new(cfg.clone(), records)?;
    trainer.fit(out)
}

/// Input builder and resize-only augmenter matching `cfg` for evaluating `net`.
pub fn eval_inputs(cfg: &ExperimentConfig, net: &TwoStreamNet) -> (InputBuilder, Augmenter) {
    let builder = InputBuilder::for_model(net, cfg.dataset.normalization.clone());
    let resizer = Augmenter::new(crate::data::AugmentConfig {
        enabled: false,
        ..cfg.dataset.augment.clone()
    });
    (builder, resizer)
}
