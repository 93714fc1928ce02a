use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, load_manifest, load_regdb_layout, load_sysu_layout, remap_train_identities,
    AugmentConfig, BatchSpec, ImageRecord, Normalization, ShortfallPolicy, Split, SyntheticDatasetConfig,
    SysuSplitConfig,
};
use crate::edge::FusionKind;
use crate::eval::EvalProtocol;
use crate::losses::{LossFlags, PefAdapter, PerceptualSource};
use crate::model::ModelConfig;
use crate::{Error, Result};

/// Defaults file shipped with the repository.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../../../../configs/default.toml");
/// Toy-scale overrides shipped with the repository.
pub const DESK_CONFIG_TOML: &str = include_str!("../../../../configs/desk.toml");

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Synthetic,
    /// A directory written by `write_manifest`.
    Manifest,
    Sysu,
    Regdb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    pub root: Option<PathBuf>,
    /// RegDB trial, 1..=10.
    pub regdb_trial: usize,
    /// Fail on unreadable images instead of skipping them.
    pub strict: bool,
    pub synthetic: SyntheticDatasetConfig,
    pub augment: AugmentConfig,
    pub normalization: Normalization,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            root: None,
            regdb_trial: 1,
            strict: true,
            synthetic: SyntheticDatasetConfig::default(),
            augment: AugmentConfig::default(),
            normalization: Normalization::default(),
        }
    }
}

impl DatasetSection {
    /// Loads the records. Training identities are remapped to `0..N`.
    pub fn load(&self) -> Result<Vec<ImageRecord>> {
        let root = || {
            self.root
                .as_deref()
                .ok_or_else(|| Error::Config(format!("dataset kind {:?} needs `root`", self.kind)))
        };
        let mut records = match self.kind {
            DatasetKind::Synthetic => generate_synthetic(&self.synthetic)?,
            DatasetKind::Manifest => load_manifest(root()?)?,
            DatasetKind::Sysu => load_sysu_layout(
                root()?,
                &SysuSplitConfig {
                    strict: self.strict,
                    ..Default::default()
                },
            )?,
            DatasetKind::Regdb => load_regdb_layout(root()?, self.regdb_trial, self.strict)?,
        };
        remap_train_identities(&mut records);
        Ok(records)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub pef: bool,
    pub id: bool,
    pub wrt: bool,
    pub cmcc: bool,
    pub fusion: FusionKind,
    pub pef_adapter: PefAdapter,
    pub perceptual: PerceptualSource,
}

impl Default for LossSection {
    fn default() -> Self {
        Self::with_flags(LossFlags::FULL, FusionKind::PefLoss)
    }
}

impl LossSection {
    pub fn with_flags(flags: LossFlags, fusion: FusionKind) -> Self {
        Self {
            pef: flags.pef,
            id: flags.id,
            wrt: flags.wrt,
            cmcc: flags.cmcc,
            fusion,
            pef_adapter: PefAdapter::default(),
            perceptual: PerceptualSource::default(),
        }
    }

    pub fn flags(&self) -> LossFlags {
        LossFlags {
            pef: self.pef,
            id: self.id,
            wrt: self.wrt,
            cmcc: self.cmcc,
        }
    }

    pub fn set_flags(&mut self, flags: LossFlags) {
        self.pef = flags.pef;
        self.id = flags.id;
        self.wrt = flags.wrt;
        self.cmcc = flags.cmcc;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Adaptive moments without weight decay.
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Epochs (0-based) at whose start the rate is multiplied by `gamma`.
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub batch: BatchSpec,
    pub shortfall: ShortfallPolicy,
    /// Sampled batches per epoch.
    pub batches_per_epoch: usize,
    pub seed: u64,
    /// `f32` or `f64`.
    pub dtype: String,
    /// Evaluate (and update the best checkpoint) every this many epochs;
    /// 0 evaluates only after the last epoch.
    pub eval_every: usize,
    pub extract_batch_size: usize,
    /// Keep `last` and `best` checkpoints; without it only `last` is kept.
    pub keep_best: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 100,
            optimizer: OptimizerKind::Adam,
            lr: 0.0005,
            milestones: vec![20, 25, 35],
            gamma: 0.1,
            batch: BatchSpec::default(),
            shortfall: ShortfallPolicy::default(),
            batches_per_epoch: 100,
            seed: 0,
            dtype: "f32".into(),
            eval_every: 0,
            extract_batch_size: 64,
            keep_best: true,
        }
    }
}

impl TrainSection {
    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * self.gamma.powi(decays as i32)
    }

    pub fn dtype(&self) -> Result<DType> {
        match self.dtype.as_str() {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(Error::Config(format!("unsupported dtype `{other}`"))),
        }
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    /// `num_classes = 0` means "number of training identities".
    pub model: ModelConfig,
    pub loss: LossSection,
    pub train: TrainSection,
    pub eval: EvalProtocol,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSection::default(),
            model: ModelConfig::full_scale(0),
            loss: LossSection::default(),
            train: TrainSection::default(),
            eval: EvalProtocol::default(),
        }
    }
}

impl ExperimentConfig {
    /// Small settings that train in seconds on one CPU core.
    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.model = ModelConfig::toy(0);
        cfg.dataset.augment.height = cfg.dataset.synthetic.height;
        cfg.dataset.augment.width = cfg.dataset.synthetic.width;
        cfg.dataset.augment.crop_padding = 2;
        cfg.train.epochs = 4;
        cfg.train.milestones = vec![3];
        cfg.train.lr = 0.003;
        cfg.train.batch = BatchSpec { p: 4, k: 2 };
        cfg.train.batches_per_epoch = 20;
        cfg.eval.num_trials = 3;
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.batch.validate()?;
        self.train.dtype()?;
        self.eval.validate()?;
        if self.loss.cmcc && self.train.batch.p < 2 {
            return Err(Error::Config("the center loss needs at least 2 identities per batch (P >= 2)".into()));
        }
        if self.loss.wrt && (self.train.batch.p < 2) {
            return Err(Error::Config("the triplet loss needs P >= 2".into()));
        }
        if !(self.loss.pef || self.loss.id || self.loss.wrt || self.loss.cmcc) {
            return Err(Error::Config("no loss term is enabled".into()));
        }
        if self.train.batches_per_epoch == 0 || self.train.lr <= 0.0 {
            return Err(Error::Config("batches_per_epoch and lr must be positive".into()));
        }
        Ok(())
    }

    /// Model configuration with the class count filled in from the data.
    pub fn resolved_model(&self, records: &[ImageRecord]) -> ModelConfig {
        let mut m = self.model.clone();
        if m.num_classes == 0 {
            m.num_classes = crate::data::count_identities(records.iter().filter(|r| r.split == Split::Train));
        }
        m
    }
}
