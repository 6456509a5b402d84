//! Run configuration as `key = value` text.
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys are
//! errors. [`RunConfig::to_text`] writes every key, so a logged config is
//! complete and parses back to the same value.

use std::fmt::Write as _;
use std::path::Path;

use crate::agent::AgentConfig;
use crate::data::{SceneConfig, TaskMode};
use crate::error::{Error, Result};
use crate::learning::{Regime, TrainConfig};
use crate::perception::{ExtractorConfig, PretrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: TaskMode,
    pub regime: Regime,
    pub scene: SceneConfig,
    pub train_size: usize,
    pub test_size: usize,
    pub pretrain_size: usize,
    pub pretrain_held_out: usize,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub components: usize,
    pub glimpses: usize,
    pub meta_hidden: usize,
    pub ctrl_hidden: usize,
    pub loc_hidden: usize,
    pub lr: f64,
    pub value_weight: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_steps: usize,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let agent = AgentConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            seed: 0,
            mode: TaskMode::Multiset,
            regime: Regime::Rl,
            scene: SceneConfig::default(),
            train_size: 6000,
            test_size: 1000,
            pretrain_size: 3000,
            pretrain_held_out: 500,
            pretrain_epochs: 5,
            pretrain_batch: 32,
            pretrain_lr: 2e-3,
            components: agent.components,
            glimpses: agent.glimpses,
            meta_hidden: agent.meta_hidden,
            // desk scale; the agent architecture default is 512
            ctrl_hidden: 128,
            loc_hidden: agent.loc_hidden,
            lr: train.lr,
            value_weight: train.value_weight,
            batch_size: train.batch_size,
            epochs: train.epochs,
            max_steps: train.max_steps,
            checkpoint_every: 1,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: `{key}` given twice", n + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.scene;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "mode" => self.mode = value.parse()?,
            "regime" => self.regime = value.parse()?,
            "canvas" => s.canvas = parse(key, value)?,
            "objects_min" => s.objects_min = parse(key, value)?,
            "objects_max" => s.objects_max = parse(key, value)?,
            "glyph_size_min" => s.glyph_size_min = parse(key, value)?,
            "glyph_size_max" => s.glyph_size_max = parse(key, value)?,
            "clutter_min" => s.clutter_min = parse(key, value)?,
            "clutter_max" => s.clutter_max = parse(key, value)?,
            "classes" => s.classes = parse(key, value)?,
            "train_size" => self.train_size = parse(key, value)?,
            "test_size" => self.test_size = parse(key, value)?,
            "pretrain_size" => self.pretrain_size = parse(key, value)?,
            "pretrain_held_out" => self.pretrain_held_out = parse(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "pretrain_batch" => self.pretrain_batch = parse(key, value)?,
            "pretrain_lr" => self.pretrain_lr = parse(key, value)?,
            "components" => self.components = parse(key, value)?,
            "glimpses" => self.glimpses = parse(key, value)?,
            "meta_hidden" => self.meta_hidden = parse(key, value)?,
            "ctrl_hidden" => self.ctrl_hidden = parse(key, value)?,
            "loc_hidden" => self.loc_hidden = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "value_weight" => self.value_weight = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "max_steps" => self.max_steps = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.agent().validate()?;
        if self.batch_size == 0 || self.pretrain_batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.pretrain_lr >= 0.0 && self.value_weight >= 0.0) {
            return Err(Error::Config("lr and value_weight must be non-negative".into()));
        }
        if self.extractor().grid() == 0 {
            return Err(Error::Config("canvas too small for the extractor".into()));
        }
        Ok(())
    }

    /// Every key in a fixed order.
    pub fn to_text(&self) -> String {
        let s = &self.scene;
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            writeln!(out, "{k} = {v}").expect("string write");
        };
        kv("seed", &self.seed);
        kv("mode", &self.mode);
        kv("regime", &self.regime);
        kv("canvas", &s.canvas);
        kv("objects_min", &s.objects_min);
        kv("objects_max", &s.objects_max);
        kv("glyph_size_min", &s.glyph_size_min);
        kv("glyph_size_max", &s.glyph_size_max);
        kv("clutter_min", &s.clutter_min);
        kv("clutter_max", &s.clutter_max);
        kv("classes", &s.classes);
        kv("train_size", &self.train_size);
        kv("test_size", &self.test_size);
        kv("pretrain_size", &self.pretrain_size);
        kv("pretrain_held_out", &self.pretrain_held_out);
        kv("pretrain_epochs", &self.pretrain_epochs);
        kv("pretrain_batch", &self.pretrain_batch);
        kv("pretrain_lr", &self.pretrain_lr);
        kv("components", &self.components);
        kv("glimpses", &self.glimpses);
        kv("meta_hidden", &self.meta_hidden);
        kv("ctrl_hidden", &self.ctrl_hidden);
        kv("loc_hidden", &self.loc_hidden);
        kv("lr", &self.lr);
        kv("value_weight", &self.value_weight);
        kv("batch_size", &self.batch_size);
        kv("epochs", &self.epochs);
        kv("max_steps", &self.max_steps);
        kv("checkpoint_every", &self.checkpoint_every);
        out
    }

    /// Scene generator settings carrying the run seed.
    pub fn scenes(&self) -> SceneConfig {
        SceneConfig {
            seed: self.seed,
            ..self.scene.clone()
        }
    }

    pub fn extractor(&self) -> ExtractorConfig {
        ExtractorConfig {
            input_size: self.scene.canvas,
            ..Default::default()
        }
    }

    pub fn agent(&self) -> AgentConfig {
        let ext = self.extractor();
        let grid = ext.grid();
        AgentConfig {
            classes: self.scene.classes,
            grid: (grid, grid),
            channels: ext.out_channels(),
            components: self.components,
            glimpses: self.glimpses,
            meta_hidden: self.meta_hidden,
            ctrl_hidden: self.ctrl_hidden,
            loc_hidden: self.loc_hidden,
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain_epochs,
            batch_size: self.pretrain_batch,
            lr: self.pretrain_lr,
            classes: self.scene.classes,
            seed: self.seed,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            value_weight: self.value_weight,
            max_steps: self.max_steps,
            seed: self.seed,
            regime: self.regime,
        }
    }
}
