//! Rewards, the REINFORCE surrogate with a value baseline, and both trainers.
//!
//! The RL regime samples every action and pays `+1/−1` per classification
//! (membership in what is still unclaimed) and the priority value per glimpse.
//! The cross-entropy regime feeds a freshly shuffled label order back each
//! epoch and supervises only the classification actions.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::agent::{episode_rollout, Agent, Cell, EpisodeMode, Trajectory};
use crate::data::{batch_iter, Scene};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport};
use crate::multiset::LabelMultiset;
use crate::ndgrad::{Adam, AdamConfig, GradBuffer, Graph, ParamSet, Session, Tensor, Var};
use crate::parallel;
use crate::perception::{activation_forward, saliency_reduce, Extractor};
use crate::rng::{self, domain};

pub const DEFAULT_VALUE_WEIGHT: f64 = 0.5;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_MAX_STEPS: usize = 6;

/// `+1` and one instance removed if `pred` is still available, else `−1`.
pub fn clf_reward(pred: usize, available: &LabelMultiset) -> (f64, LabelMultiset) {
    let mut next = available.clone();
    if next.remove_one(pred) {
        (1.0, next)
    } else {
        (-1.0, next)
    }
}

/// Priority-map value at the glimpsed cell.
pub fn loc_reward(priority: &Tensor, cell: Cell) -> Result<f64> {
    priority.get(&[cell.y, cell.x])
}

/// `log p · (V − R)` with `V` and `R` entering as constants.
pub fn reinforce_term(g: &mut Graph, log_prob: Var, value: f64, reward: f64) -> Var {
    g.scale(log_prob, value - reward)
}

#[derive(Clone, Copy, Debug)]
pub struct SurrogateTerms {
    pub reinforce: Var,
    pub value: Var,
    pub stop: Var,
    /// `reinforce + λ_v · value + stop`.
    pub total: Var,
}

fn sum_terms(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    if terms.is_empty() {
        return Ok(g.scalar(0.0));
    }
    let v = g.concat(terms)?;
    Ok(g.sum(v))
}

/// Builds the surrogate for one train-mode trajectory on its own tape.
pub fn surrogate_terms(g: &mut Graph, traj: &Trajectory, value_weight: f64) -> Result<SurrogateTerms> {
    let mut reinforce = Vec::new();
    let mut value = Vec::new();
    let mut stop = Vec::new();
    for step in &traj.steps {
        let rewards = step
            .rewards
            .as_ref()
            .ok_or_else(|| Error::usage("trajectory step carries no rewards"))?;
        let k = step.glimpses.len();
        if rewards.location.len() != k || step.values.len() != k + 1 {
            return Err(Error::usage("trajectory step is incomplete"));
        }
        let mut paired: Vec<(Var, Var, f64)> = (0..k)
            .map(|i| (step.location_log_probs[i], step.values[i], rewards.location[i]))
            .collect();
        match (rewards.class, step.target) {
            (Some(r), _) => paired.push((step.label_log_prob, step.values[k], r)),
            (None, Some(target)) => {
                let lp = g.pick(step.class_log_probs, target)?;
                stop.push(g.scale(lp, -1.0));
            }
            (None, None) => return Err(Error::usage("classification action has neither reward nor target")),
        }
        for (lp, v, r) in paired {
            let baseline = g.value(v).item();
            reinforce.push(reinforce_term(g, lp, baseline, r));
            let err = g.shift(v, -r);
            value.push(g.square(err));
        }
    }
    let reinforce = sum_terms(g, &reinforce)?;
    let value = sum_terms(g, &value)?;
    let stop = sum_terms(g, &stop)?;
    let weighted = g.scale(value, value_weight);
    let partial = g.add(reinforce, weighted)?;
    let total = g.add(partial, stop)?;
    Ok(SurrogateTerms {
        reinforce,
        value,
        stop,
        total,
    })
}

pub fn surrogate_loss(g: &mut Graph, traj: &Trajectory, value_weight: f64) -> Result<Var> {
    Ok(surrogate_terms(g, traj, value_weight)?.total)
}

/// Sum of `−log p(target)` over every step that has a target.
pub fn sequence_ce(g: &mut Graph, traj: &Trajectory) -> Result<Var> {
    let mut terms = Vec::new();
    for step in &traj.steps {
        if let Some(t) = step.target {
            let lp = g.pick(step.class_log_probs, t)?;
            terms.push(g.scale(lp, -1.0));
        }
    }
    sum_terms(g, &terms)
}

/// Frozen perception output for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedScene {
    pub volume: Tensor,
    pub saliency: Tensor,
    pub labels: Vec<usize>,
    pub multiset: LabelMultiset,
}

/// Runs the frozen extractor, scaling each volume by `volume_scale`.
pub fn encode_scenes(
    extractor: &Extractor,
    params: &ParamSet,
    scenes: &[Scene],
    volume_scale: f64,
) -> Result<Vec<EncodedScene>> {
    parallel::map(scenes, |scene| {
        let volume = activation_forward(extractor, params, &scene.image)?;
        let saliency = saliency_reduce(&volume)?;
        Ok(EncodedScene {
            volume: volume.map(|v| v * volume_scale),
            saliency,
            labels: scene.labels.clone(),
            multiset: scene.multiset(),
        })
    })
    .into_iter()
    .collect()
}

/// Scale that gives the 90th-percentile column over `scenes` a unit
/// root-mean-square entry. Returns 1 when every column is zero.
pub fn calibrate_volume_scale(extractor: &Extractor, params: &ParamSet, scenes: &[Scene]) -> Result<f64> {
    let per_scene: Vec<Result<Vec<f64>>> = parallel::map(scenes, |scene| {
        let v = activation_forward(extractor, params, &scene.image)?;
        let s = v.shape();
        let plane = s[1] * s[2];
        Ok((0..plane)
            .map(|cell| {
                (0..s[0])
                    .map(|c| v.data()[c * plane + cell].powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    });
    let mut norms = Vec::new();
    for r in per_scene {
        norms.extend(r?);
    }
    norms.sort_by(f64::total_cmp);
    let p90 = norms.get(norms.len() * 9 / 10).copied().unwrap_or(0.0);
    let channels = extractor.config.out_channels() as f64;
    Ok(if p90 > 0.0 { channels.sqrt() / p90 } else { 1.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Rl,
    CrossEntropy,
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rl" => Ok(Regime::Rl),
            "ce" => Ok(Regime::CrossEntropy),
            other => Err(Error::Config(format!("unknown training mode `{other}` (rl or ce)"))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Rl => "rl",
            Regime::CrossEntropy => "ce",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub value_weight: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub regime: Regime,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: 1e-3,
            value_weight: DEFAULT_VALUE_WEIGHT,
            max_steps: DEFAULT_MAX_STEPS,
            seed: 0,
            regime: Regime::Rl,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    /// 1-based.
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub batch: usize,
    /// Mean per-episode loss over the epoch.
    pub loss: f64,
    /// Mean reward over every rewarded action of the epoch.
    pub mean_reward: f64,
    pub f1: f64,
    pub exact_match: f64,
    pub attn_saliency: f64,
}

impl EpochRow {
    pub const HEADER: &'static str = "epoch,batch,loss,mean_reward,f1,exact_match,attn_saliency";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.9},{:.9},{:.9},{:.9},{:.9}",
            self.epoch, self.batch, self.loss, self.mean_reward, self.f1, self.exact_match, self.attn_saliency
        )
    }
}

/// Resumable optimizer position.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: usize,
    pub batches: usize,
    pub optimizer: Adam,
}

impl TrainState {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        TrainState {
            epoch: 0,
            batches: 0,
            optimizer: Adam::new(
                params,
                AdamConfig {
                    lr,
                    ..Default::default()
                },
            ),
        }
    }
}

struct EpisodeGrad {
    grads: GradBuffer,
    loss: f64,
    reward_sum: f64,
    reward_count: usize,
}

fn episode_grad(
    agent: &Agent,
    params: &ParamSet,
    scene: &EncodedScene,
    cfg: &TrainConfig,
    epoch: usize,
    index: usize,
) -> Result<EpisodeGrad> {
    let key = [cfg.seed, epoch as u64, index as u64];
    let mut sampler = rng::keyed(&[domain::SAMPLER, key[0], key[1], key[2]]);
    let mut s = Session::train(params);
    let (traj, loss) = match cfg.regime {
        Regime::Rl => {
            let mode = EpisodeMode::Train {
                labels: &scene.multiset,
                rng: &mut sampler,
            };
            let traj = episode_rollout(&mut s, agent, &scene.volume, &scene.saliency, mode)?;
            let loss = surrogate_loss(&mut s.graph, &traj, cfg.value_weight)?;
            (traj, loss)
        }
        Regime::CrossEntropy => {
            let order = shuffled_order(&scene.labels, cfg.seed, epoch, index);
            let mode = EpisodeMode::Teacher {
                order: &order,
                rng: &mut sampler,
            };
            let traj = episode_rollout(&mut s, agent, &scene.volume, &scene.saliency, mode)?;
            let loss = sequence_ce(&mut s.graph, &traj)?;
            (traj, loss)
        }
    };
    let value = s.graph.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Domain {
            op: "train",
            detail: format!("non-finite loss on example {index}"),
        });
    }
    let (mut reward_sum, mut reward_count) = (0.0, 0);
    for r in traj.steps.iter().filter_map(|s| s.rewards.as_ref()) {
        reward_sum += r.location.iter().sum::<f64>() + r.class.unwrap_or(0.0);
        reward_count += r.location.len() + usize::from(r.class.is_some());
    }
    Ok(EpisodeGrad {
        grads: s.backward(loss)?,
        loss: value,
        reward_sum,
        reward_count,
    })
}

/// How per-episode work inside a batch is scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    /// [`parallel::map`], which is sequential without the `parallel` feature.
    Parallel,
    Sequential,
}

/// Batch-mean gradient plus summed episode statistics.
pub struct BatchGrad {
    pub grads: GradBuffer,
    pub loss_sum: f64,
    pub reward_sum: f64,
    pub reward_count: usize,
}

/// Rolls out every scene in `batch` and reduces in batch order, so the
/// result does not depend on `exec`.
pub fn batch_gradient(
    agent: &Agent,
    params: &ParamSet,
    scenes: &[EncodedScene],
    batch: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    exec: Execution,
) -> Result<BatchGrad> {
    if batch.is_empty() {
        return Err(Error::usage("empty batch"));
    }
    let one = |&i: &usize| episode_grad(agent, params, &scenes[i], cfg, epoch, i);
    let results = match exec {
        Execution::Parallel => parallel::map(batch, one),
        Execution::Sequential => parallel::map_sequential(batch, one),
    };
    let mut out = BatchGrad {
        grads: GradBuffer::new(params),
        loss_sum: 0.0,
        reward_sum: 0.0,
        reward_count: 0,
    };
    for r in results {
        let e = r?;
        out.grads.accumulate(&e.grads);
        out.loss_sum += e.loss;
        out.reward_sum += e.reward_sum;
        out.reward_count += e.reward_count;
    }
    out.grads.scale(1.0 / batch.len() as f64);
    Ok(out)
}

/// Label order used by the cross-entropy regime for `(seed, epoch, index)`.
pub fn shuffled_order(labels: &[usize], seed: u64, epoch: usize, index: usize) -> Vec<usize> {
    let mut order = labels.to_vec();
    order.shuffle(&mut rng::keyed(&[domain::LABEL_ORDER, seed, epoch as u64, index as u64]));
    order
}

/// Greedy evaluation results.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub predictions: Vec<LabelMultiset>,
}

pub fn evaluate(agent: &Agent, params: &ParamSet, scenes: &[EncodedScene], max_steps: usize) -> Result<Evaluation> {
    let results: Vec<Result<(LabelMultiset, f64)>> = parallel::map(scenes, |scene| {
        let traj = infer(agent, params, scene, max_steps)?;
        Ok((traj.predicted(), metrics::attn_saliency(&traj)))
    });
    let mut predictions = Vec::with_capacity(scenes.len());
    let mut attn = 0.0;
    for r in results {
        let (p, a) = r?;
        predictions.push(p);
        attn += a;
    }
    let truths: Vec<LabelMultiset> = scenes.iter().map(|s| s.multiset.clone()).collect();
    let mut report = metrics::multiset_prf(&predictions, &truths)?;
    if !scenes.is_empty() {
        report.attn_saliency = attn / scenes.len() as f64;
    }
    Ok(Evaluation { report, predictions })
}

/// Greedy rollout of one encoded scene.
pub fn infer(agent: &Agent, params: &ParamSet, scene: &EncodedScene, max_steps: usize) -> Result<Trajectory> {
    let mut s = Session::inference(params);
    episode_rollout(
        &mut s,
        agent,
        &scene.volume,
        &scene.saliency,
        EpisodeMode::Infer { max_steps },
    )
}

/// Runs epochs `state.epoch + 1 ..= cfg.epochs`, evaluating on `held_out`
/// after each. `on_epoch` sees every row as soon as it exists.
pub fn train(
    agent: &Agent,
    params: &mut ParamSet,
    state: &mut TrainState,
    train_set: &[EncodedScene],
    held_out: &[EncodedScene],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRow, &ParamSet, &TrainState) -> Result<()>,
) -> Result<Vec<EpochRow>> {
    if train_set.is_empty() {
        return Err(Error::usage("training needs at least one scene"));
    }
    state.optimizer.config.lr = cfg.lr;
    let mut rows = Vec::new();
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let mut shuffle = rng::keyed(&[domain::SHUFFLE, cfg.seed, epoch as u64]);
        let (mut loss_sum, mut reward_sum, mut reward_count) = (0.0, 0.0, 0usize);
        for batch in batch_iter(train_set.len(), cfg.batch_size, &mut shuffle)? {
            let b = batch_gradient(agent, params, train_set, &batch, cfg, epoch, Execution::Parallel)?;
            loss_sum += b.loss_sum;
            reward_sum += b.reward_sum;
            reward_count += b.reward_count;
            state.optimizer.step(params, &b.grads)?;
            state.batches += 1;
        }
        let eval = evaluate(agent, params, held_out, cfg.max_steps)?;
        state.epoch = epoch;
        let row = EpochRow {
            epoch,
            batch: state.batches,
            loss: loss_sum / train_set.len() as f64,
            mean_reward: if reward_count == 0 {
                0.0
            } else {
                reward_sum / reward_count as f64
            },
            f1: eval.report.macro_f1,
            exact_match: eval.report.exact_match,
            attn_saliency: eval.report.attn_saliency,
        };
        on_epoch(&row, params, state)?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn train_rl(
    agent: &Agent,
    params: &mut ParamSet,
    state: &mut TrainState,
    train_set: &[EncodedScene],
    held_out: &[EncodedScene],
    cfg: &TrainConfig,
) -> Result<Vec<EpochRow>> {
    let cfg = TrainConfig {
        regime: Regime::Rl,
        ..cfg.clone()
    };
    train(agent, params, state, train_set, held_out, &cfg, |_, _, _| Ok(()))
}

pub fn train_ce_baseline(
    agent: &Agent,
    params: &mut ParamSet,
    state: &mut TrainState,
    train_set: &[EncodedScene],
    held_out: &[EncodedScene],
    cfg: &TrainConfig,
) -> Result<Vec<EpochRow>> {
    let cfg = TrainConfig {
        regime: Regime::CrossEntropy,
        ..cfg.clone()
    };
    train(agent, params, state, train_set, held_out, &cfg, |_, _, _| Ok(()))
}
