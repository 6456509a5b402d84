//! Command implementations behind the `hsal` binary.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use hsal::agent::Trajectory;
use hsal::checkpoint::{self, Checkpoint};
use hsal::config::RunConfig;
use hsal::data::{generate_scene, Scene};
use hsal::learning::{self, EncodedScene, EpochRow, Evaluation, TrainState};
use hsal::metrics::EvalReport;
use hsal::netpbm::{Gray, Rgb};
use hsal::pipeline::{self, split, Model};
use hsal::perception::PretrainReport;
use hsal::rng::{self, domain};
use hsal::{Error, LabelMultiset, Result};

/// Split used for `visualize` scenes, disjoint from training and test.
pub const VISUAL_SPLIT: u64 = 2;

pub const LOG_FILE: &str = "train.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Resolved configuration: the file if given, else the checkpoint echo, else defaults.
pub fn resolve_config(path: Option<&Path>, echo: Option<&str>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match (path, echo) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(text)) if !text.trim().is_empty() => RunConfig::parse(text)?,
        _ => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn pretrain(cfg: &RunConfig, out: &Path) -> Result<PretrainReport> {
    let mut model = Model::new(cfg)?;
    let report = pipeline::pretrain(cfg, &mut model)?;
    checkpoint::save(
        out,
        &Checkpoint {
            params: model.perception_params(),
            state: None,
            config: cfg.to_text(),
        },
    )?;
    Ok(report)
}

fn encoded_split(cfg: &RunConfig, model: &Model, which: u64, count: usize) -> Result<Vec<EncodedScene>> {
    model.encode(&pipeline::agent_scenes(cfg, which, count)?)
}

/// Trains from a perception checkpoint, or continues from a run checkpoint
/// when `resume` carries optimizer state. Rows are appended to `out/train.csv`.
pub fn train(cfg: &RunConfig, perception: &Path, out: &Path, resume: Option<&Path>) -> Result<Vec<EpochRow>> {
    let base = checkpoint::load(perception)?;
    pipeline::require_perception(&base.params)?;
    let mut model = Model::with_params(cfg, &base.params)?;
    let mut state = TrainState::new(&model.params, cfg.lr);
    if let Some(path) = resume {
        let ck = checkpoint::load(path)?;
        model.params.load_from(&ck.params)?;
        state = ck
            .state
            .ok_or_else(|| Error::Usage(format!("{} holds no optimizer state", path.display())))?;
        if state.optimizer.first.len() != model.params.len() {
            return Err(Error::Format("optimizer state does not match the model".into()));
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    fs::write(out.join("config.txt"), cfg.to_text()).map_err(|e| Error::io(out, e))?;
    let train_set = encoded_split(cfg, &model, split::TRAIN, cfg.train_size)?;
    let test_set = encoded_split(cfg, &model, split::TEST, cfg.test_size)?;

    let log_path = out.join(LOG_FILE);
    let fresh = state.epoch == 0;
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    if fresh {
        writeln!(log, "{}", EpochRow::HEADER).map_err(|e| Error::io(&log_path, e))?;
    }
    let config = cfg.to_text();
    let agent = model.agent.clone();
    let every = cfg.checkpoint_every;
    let rows = learning::train(
        &agent,
        &mut model.params,
        &mut state,
        &train_set,
        &test_set,
        &cfg.train(),
        |row, params, st| {
            writeln!(log, "{}", row.to_csv()).map_err(|e| Error::io(&log_path, e))?;
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            if every > 0 && row.epoch % every == 0 {
                let p = out.join(format!("epoch_{:03}.ckpt", row.epoch));
                save_run(&p, params, st, &config)?;
            }
            Ok(())
        },
    )?;
    save_run(&out.join(FINAL_CHECKPOINT), &model.params, &state, &config)?;
    Ok(rows)
}

fn save_run(path: &Path, params: &hsal::ndgrad::ParamSet, state: &TrainState, config: &str) -> Result<()> {
    checkpoint::save(
        path,
        &Checkpoint {
            params: params.clone(),
            state: Some(state.clone()),
            config: config.to_string(),
        },
    )
}

/// Loads a full model; the checkpoint must hold perception weights.
pub fn load_model(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<Model> {
    pipeline::require_perception(&ckpt.params)?;
    Model::with_params(cfg, &ckpt.params)
}

/// Greedy evaluation on the test split, with the true multisets alongside.
pub fn eval(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<(Evaluation, Vec<LabelMultiset>)> {
    let model = load_model(cfg, ckpt)?;
    let test = encoded_split(cfg, &model, split::TEST, cfg.test_size)?;
    let ev = learning::evaluate(&model.agent, &model.params, &test, cfg.max_steps)?;
    Ok((ev, test.into_iter().map(|e| e.multiset).collect()))
}

/// One line per example: `truth<TAB>prediction`.
pub fn predictions_text(eval: &Evaluation, truths: &[LabelMultiset]) -> String {
    eval.predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| format!("{t}\t{p}\n"))
        .collect()
}

pub fn report_text(report: &EvalReport) -> String {
    format!(
        "examples {}\nmacro_f1 {:.6}\nexact_match {:.6}\nattn_saliency {:.6}\n",
        report.examples, report.macro_f1, report.exact_match, report.attn_saliency
    )
}

/// The scene drawn for `visualize --seed`.
pub fn visual_scene(cfg: &RunConfig, scene_seed: u64) -> Result<Scene> {
    let mut r = rng::keyed(&[domain::SCENES, scene_seed, VISUAL_SPLIT, 0]);
    generate_scene(&cfg.scenes(), cfg.mode, &mut r)
}

/// Writes four images per meta-step and returns their paths in order.
pub fn visualize(cfg: &RunConfig, ckpt: &Checkpoint, scene_seed: u64, out: &Path) -> Result<(Trajectory, Vec<PathBuf>)> {
    let model = load_model(cfg, ckpt)?;
    let scene = visual_scene(cfg, scene_seed)?;
    let encoded = model.encode(std::slice::from_ref(&scene))?;
    let traj = learning::infer(&model.agent, &model.params, &encoded[0], cfg.max_steps)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let paths = write_trajectory_images(&traj, &scene, out)?;
    Ok((traj, paths))
}

fn label_name(label: usize, stop: usize) -> String {
    if label == stop {
        "stop".into()
    } else {
        label.to_string()
    }
}

pub fn write_trajectory_images(traj: &Trajectory, scene: &Scene, out: &Path) -> Result<Vec<PathBuf>> {
    let canvas = scene.image.shape()[1];
    let mut paths = Vec::new();
    for (t, step) in traj.steps.iter().enumerate() {
        let (h, w) = (step.saliency.shape()[0], step.saliency.shape()[1]);
        let factor = canvas / w;
        let maps = [
            ("saliency", &step.saliency, 1.0),
            ("mask", &step.mask, step.mask.max()),
            ("priority", &step.priority, 1.0),
        ];
        for (name, map, scale) in maps {
            let p = out.join(format!("{name}_{t}.pgm"));
            Gray::from_values(map.data(), w, h, scale).upsample(factor).write(&p)?;
            paths.push(p);
        }
        let mut overlay: Rgb = Gray::from_values(scene.image.data(), canvas, canvas, 1.0).to_rgb();
        for g in &step.glimpses {
            let (x0, y0) = (g.x * factor, g.y * factor);
            overlay.outline(x0, y0, x0 + factor - 1, y0 + factor - 1, [255, 40, 40]);
        }
        let p = out.join(format!("overlay_{t}_label_{}.ppm", label_name(step.label, traj.stop)));
        overlay.write(&p)?;
        paths.push(p);
    }
    Ok(paths)
}
