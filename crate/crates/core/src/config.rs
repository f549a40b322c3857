//! Run configuration: one JSON document drives every stage. Unknown keys
//! are rejected; the file is frozen-copied into the run directory by the
//! first stage that creates it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ast::AstConfig;
use crate::ddm::DdmConfig;
use crate::error::{Error, Result};
use crate::segmentor::SegmentorConfig;
use crate::synthdata::SynthConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageOptim {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    pub iterations: usize,
    pub batch_size: usize,
}

impl StageOptim {
    pub fn sgd(&self) -> crate::tensor::SgdConfig {
        crate::tensor::SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            poly_power: self.poly_power,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    Mined,
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreadaptConfig {
    #[serde(flatten)]
    pub optim: StageOptim,
    /// Second pathway: keep finetuning the auto-encoders on source and
    /// target features. Off leaves them bit-identical.
    pub update_asts: bool,
    /// Learning rate of the reconstruction pathway. The reconstruction loss
    /// is a mean over all feature elements, so its gradient scale sits far
    /// below the cross-entropy pathway's and needs its own rate.
    pub ast_lr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptConfig {
    #[serde(flatten)]
    pub optim: StageOptim,
    pub epochs: usize,
    pub pairing: PairingMode,
    /// Latent-swap simulation at the early site.
    pub ast_sim: bool,
    /// Prototype normalization at the late site.
    pub ast_norm: bool,
    /// Ground-truth-pathway losses (plain source / plain target terms).
    pub loss_gt_pathways: bool,
    /// Simulated-pathway losses (style-swapped source / target terms).
    pub loss_sim_pathways: bool,
    /// Weight applied to each enabled loss term.
    pub loss_weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: SynthConfig,
    pub segmentor: SegmentorConfig,
    pub ast_cs: AstConfig,
    pub ast_dn: AstConfig,
    pub erm: StageOptim,
    pub ast_train: StageOptim,
    pub preadapt: PreadaptConfig,
    pub adapt: AdaptConfig,
    pub ddm: DdmConfig,
    pub eval_splits: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: SynthConfig::default(),
            segmentor: SegmentorConfig::default(),
            ast_cs: AstConfig::default(),
            ast_dn: AstConfig::default(),
            erm: StageOptim {
                lr: 0.05,
                momentum: 0.9,
                weight_decay: 5e-4,
                poly_power: 0.9,
                iterations: 600,
                batch_size: 4,
            },
            ast_train: StageOptim {
                // The reconstruction objective is a mean over P·H·W feature
                // elements; the rate is scaled up accordingly and the decay
                // term dropped (lr·wd would shrink the spectrum weights
                // faster than they can grow).
                lr: 5.0,
                momentum: 0.9,
                weight_decay: 0.0,
                poly_power: 0.9,
                iterations: 800,
                batch_size: 2,
            },
            preadapt: PreadaptConfig {
                optim: StageOptim {
                    lr: 0.01,
                    momentum: 0.9,
                    weight_decay: 5e-4,
                    poly_power: 0.9,
                    iterations: 200,
                    batch_size: 4,
                },
                update_asts: true,
                ast_lr: 1.0,
            },
            adapt: AdaptConfig {
                optim: StageOptim {
                    lr: 0.01,
                    momentum: 0.9,
                    weight_decay: 5e-4,
                    poly_power: 0.9,
                    iterations: 0, // derived: one pass over the target split per epoch
                    batch_size: 4,
                },
                epochs: 3,
                pairing: PairingMode::Mined,
                ast_sim: true,
                ast_norm: true,
                loss_gt_pathways: true,
                loss_sim_pathways: true,
                loss_weight: 1.0,
            },
            ddm: DdmConfig::default(),
            eval_splits: vec!["compound".into(), "open".into()],
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.segmentor.validate()?;
        self.ast_cs.validate()?;
        self.ast_dn.validate()?;
        for stage in [&self.erm, &self.ast_train, &self.preadapt.optim, &self.adapt.optim] {
            if stage.batch_size == 0 {
                return Err(Error::Config("batch_size must be positive".into()));
            }
            if !(stage.lr.is_finite() && stage.lr >= 0.0) {
                return Err(Error::Config(format!("bad learning rate {}", stage.lr)));
            }
        }
        if self.adapt.epochs == 0 {
            return Err(Error::Config("adapt.epochs must be positive".into()));
        }
        if !self.adapt.loss_gt_pathways && !self.adapt.loss_sim_pathways {
            return Err(Error::Config("at least one adaptation loss group must be enabled".into()));
        }
        for split in &self.eval_splits {
            if split != "compound" && split != "open" {
                return Err(Error::Config(format!("unknown eval split {split}")));
            }
        }
        Ok(())
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
