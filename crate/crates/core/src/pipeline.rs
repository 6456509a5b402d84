//! End-to-end wiring shared by the command-line tool and the acceptance runs.

use crate::agent::Agent;
use crate::config::RunConfig;
use crate::data::{generate_dataset, Scene, SceneKind};
use crate::error::{Error, Result};
use crate::learning::{calibrate_volume_scale, encode_scenes, EncodedScene};
use crate::ndgrad::ParamSet;
use crate::perception::{pretrain_extractor, Extractor, PretrainReport};
use crate::rng::{self, domain};

/// Dataset split identifiers for the key `(seed, split, index)`.
pub mod split {
    pub const TRAIN: u64 = 0;
    pub const TEST: u64 = 1;
    pub const PRETRAIN: u64 = 10;
    pub const PRETRAIN_HELD_OUT: u64 = 11;
}

/// Names saved by `pretrain`: extractor weights and the calibrated volume scale.
pub fn is_perception_param(name: &str) -> bool {
    name.starts_with("extractor.") || name == "agent.volume_scale"
}

pub struct Model {
    pub extractor: Extractor,
    pub agent: Agent,
    pub params: ParamSet,
}

impl Model {
    /// Fresh weights drawn from the run seed.
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let extractor = Extractor::new(cfg.extractor(), &mut params, &mut rng::keyed(&[domain::INIT, cfg.seed, 0]))?;
        let agent = Agent::new(cfg.agent(), &mut params, &mut rng::keyed(&[domain::INIT, cfg.seed, 1]))?;
        Ok(Model {
            extractor,
            agent,
            params,
        })
    }

    /// Fresh model with every parameter named in `saved` overwritten.
    pub fn with_params(cfg: &RunConfig, saved: &ParamSet) -> Result<Self> {
        let mut m = Self::new(cfg)?;
        m.params.load_from(saved)?;
        Ok(m)
    }

    pub fn perception_params(&self) -> ParamSet {
        self.params.filtered(is_perception_param)
    }

    pub fn encode(&self, scenes: &[Scene]) -> Result<Vec<EncodedScene>> {
        encode_scenes(
            &self.extractor,
            &self.params,
            scenes,
            self.agent.volume_scale(&self.params),
        )
    }
}

/// Checks that a checkpoint carries trained perception weights.
pub fn require_perception(saved: &ParamSet) -> Result<()> {
    if !saved.iter().any(|(n, _)| n.starts_with("extractor.")) || saved.find("agent.volume_scale").is_none() {
        return Err(Error::usage("checkpoint holds no pretrained extractor; run `pretrain` first"));
    }
    Ok(())
}

pub fn agent_scenes(cfg: &RunConfig, split: u64, count: usize) -> Result<Vec<Scene>> {
    generate_dataset(&cfg.scenes(), SceneKind::Multi(cfg.mode), split, count)
}

/// Pretrains the extractor on single-object scenes, then calibrates the
/// volume scale on multi-object training scenes.
pub fn pretrain(cfg: &RunConfig, model: &mut Model) -> Result<PretrainReport> {
    let scenes = cfg.scenes();
    let train = generate_dataset(&scenes, SceneKind::Single, split::PRETRAIN, cfg.pretrain_size)?;
    let held = generate_dataset(&scenes, SceneKind::Single, split::PRETRAIN_HELD_OUT, cfg.pretrain_held_out)?;
    let report = pretrain_extractor(&model.extractor, &mut model.params, &train, &held, &cfg.pretrain())?;
    let calib = agent_scenes(cfg, split::TRAIN, cfg.train_size.clamp(1, 500))?;
    let scale = calibrate_volume_scale(&model.extractor, &model.params, &calib)?;
    model.agent.set_volume_scale(&mut model.params, scale);
    Ok(report)
}
