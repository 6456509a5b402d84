//! Meta-controller, interface layer, controller and the episode loop.
//!
//! Label indices: `0..classes` are object classes, `classes` is stop and
//! `classes + 1` is the start token fed to the first meta-step.

mod nets;

pub use nets::{Gru, Linear, Mlp};

use rand::Rng;

use crate::attention::{self, GaussianAttnParams};
use crate::error::{Error, Result};
use crate::multiset::LabelMultiset;
use crate::ndgrad::{ParamId, ParamSet, Session, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub classes: usize,
    /// Saliency and activation grid height and width.
    pub grid: (usize, usize),
    /// Channels of the activation volume.
    pub channels: usize,
    pub components: usize,
    /// Location actions per meta-step (`k`).
    pub glimpses: usize,
    pub meta_hidden: usize,
    pub ctrl_hidden: usize,
    pub loc_hidden: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            classes: 10,
            grid: (8, 8),
            channels: 64,
            components: attention::DEFAULT_COMPONENTS,
            glimpses: 2,
            meta_hidden: 128,
            ctrl_hidden: 512,
            loc_hidden: 64,
        }
    }
}

impl AgentConfig {
    pub fn stop(&self) -> usize {
        self.classes
    }

    pub fn start(&self) -> usize {
        self.classes + 1
    }

    /// Width of the previous-label one-hot.
    pub fn label_dim(&self) -> usize {
        self.classes + 2
    }

    pub fn cells(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.classes,
            self.grid.0,
            self.grid.1,
            self.channels,
            self.components,
            self.meta_hidden,
            self.ctrl_hidden,
            self.loc_hidden,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config("agent sizes must be positive".into()));
        }
        Ok(())
    }
}

/// A glimpse cell on the activation grid; `x` is the column, `y` the row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn from_index(index: usize, width: usize) -> Self {
        Cell {
            x: index % width,
            y: index / width,
        }
    }

    pub fn index(self, width: usize) -> usize {
        self.y * width + self.x
    }
}

#[derive(Clone, Debug)]
pub struct MetaController {
    encode: Linear,
    gru: Gru,
    attn: Linear,
}

#[derive(Clone, Debug)]
pub struct Controller {
    encode: Linear,
    gru: Gru,
    location: Mlp,
    class: Linear,
    value: Linear,
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub config: AgentConfig,
    pub meta: MetaController,
    pub controller: Controller,
    /// Fixed multiplier applied to activation volumes before they reach the agent.
    volume_scale: ParamId,
}

/// Recurrent state handles on a session's tape.
#[derive(Clone, Copy, Debug)]
pub struct MetaControllerState {
    pub hidden: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ControllerState {
    pub hidden: Var,
}

impl Agent {
    /// Registers every agent parameter under the `meta.` and `controller.` prefixes.
    pub fn new(config: AgentConfig, params: &mut ParamSet, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let meta_in = c.cells() + c.label_dim();
        let meta = MetaController {
            encode: Linear::new(params, "meta.encode", meta_in, c.meta_hidden, rng),
            gru: Gru::new(params, "meta.gru", c.meta_hidden, c.meta_hidden, rng),
            attn: Linear::new(params, "meta.attn", c.meta_hidden, 4 * c.components, rng),
        };
        let ctrl_in = c.cells() + c.label_dim() + c.cells() + c.channels;
        let controller = Controller {
            encode: Linear::new(params, "controller.encode", ctrl_in, c.ctrl_hidden, rng),
            gru: Gru::new(params, "controller.gru", c.ctrl_hidden, c.ctrl_hidden, rng),
            location: Mlp::new(params, "controller.location", c.ctrl_hidden, c.loc_hidden, c.cells(), rng),
            class: Linear::new(params, "controller.class", c.ctrl_hidden, c.classes + 1, rng),
            value: Linear::new(params, "controller.value", c.ctrl_hidden, 1, rng),
        };
        let volume_scale = params.insert("agent.volume_scale", Tensor::scalar(1.0));
        Ok(Agent {
            config,
            meta,
            controller,
            volume_scale,
        })
    }

    /// Stored alongside the weights; never bound on a tape, so never trained.
    pub fn volume_scale(&self, params: &ParamSet) -> f64 {
        params.get(self.volume_scale).item()
    }

    pub fn set_volume_scale(&self, params: &mut ParamSet, scale: f64) {
        *params.get_mut(self.volume_scale) = Tensor::scalar(scale);
    }

    pub fn initial_meta_state(&self, s: &mut Session) -> MetaControllerState {
        MetaControllerState {
            hidden: s.graph.constant(Tensor::zeros(&[self.config.meta_hidden])),
        }
    }

    pub fn initial_controller_state(&self, s: &mut Session) -> ControllerState {
        ControllerState {
            hidden: s.graph.constant(Tensor::zeros(&[self.config.ctrl_hidden])),
        }
    }

    fn check_grid(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        let (h, w) = self.config.grid;
        if shape != [h, w] {
            return Err(Error::dim(op, shape, &[h, w]));
        }
        Ok(())
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.config.label_dim() {
            return Err(Error::Bounds {
                op: "prev_label",
                index: vec![label],
                bounds: vec![self.config.label_dim()],
            });
        }
        Ok(())
    }
}

/// Output of one meta-controller step.
#[derive(Clone, Copy, Debug)]
pub struct MetaOutput {
    /// `[h×w]` mask.
    pub mask: Var,
    pub attn: attention::AttnVars,
    pub state: MetaControllerState,
}

/// Encodes the saliency map and previous label, advances the GRU and emits the mask.
pub fn meta_step(
    s: &mut Session,
    agent: &Agent,
    saliency: &Tensor,
    prev_label: usize,
    state: MetaControllerState,
) -> Result<MetaOutput> {
    agent.check_grid("meta_step", saliency.shape())?;
    agent.check_label(prev_label)?;
    let c = &agent.config;
    let mut input = saliency.data().to_vec();
    input.extend(Tensor::one_hot(c.label_dim(), prev_label).into_data());
    let x = s.graph.constant(Tensor::vector(input));
    let e = agent.meta.encode.forward(s, x)?;
    let hidden = agent.meta.gru.forward(s, e, state.hidden)?;
    let raw = agent.meta.attn.forward(s, hidden)?;
    let (h, w) = c.grid;
    let attn = attention::transform_raw_params(&mut s.graph, raw, h, w)?;
    let mask = attention::build_mask(&mut s.graph, &attn, h, w)?;
    Ok(MetaOutput {
        mask,
        attn,
        state: MetaControllerState { hidden },
    })
}

/// Priority map `normalize(M ⊙ S)` and the mask-weighted glimpse `g₀ = Σ_ij M_ij V_·ij`.
///
/// `mask` is `[h×w]`, `saliency` is `[h×w]` and `volume` is `[C×h×w]`.
pub fn interface(s: &mut Session, mask: Var, saliency: &Tensor, volume: &Tensor) -> Result<(Var, Var)> {
    let mshape = s.graph.shape(mask).to_vec();
    if mshape.len() != 2 || saliency.shape() != mshape.as_slice() {
        return Err(Error::dim("interface", &mshape, saliency.shape()));
    }
    let vs = volume.shape();
    if vs.len() != 3 || vs[1..] != mshape[..] {
        return Err(Error::dim("interface", vs, &mshape));
    }
    let cells = mshape[0] * mshape[1];
    let flat = s.graph.reshape(mask, &[cells])?;
    let sal = s.graph.constant(Tensor::vector(saliency.data().to_vec()));
    let product = s.graph.mul(flat, sal)?;
    let priority = s.graph.minmax_normalize(product);
    let vflat = s.graph.constant(volume.clone().reshape(&[vs[0], cells])?);
    let column = s.graph.reshape(mask, &[cells, 1])?;
    let g0 = s.graph.matmul(vflat, column)?;
    let g0 = s.graph.reshape(g0, &[vs[0]])?;
    Ok((priority, g0))
}

/// How the controller picks actions.
pub enum Policy<'r> {
    Sample(&'r mut crate::rng::Rng),
    Greedy,
}

impl Policy<'_> {
    fn choose(&mut self, log_probs: &Tensor) -> usize {
        match self {
            Policy::Greedy => log_probs.argmax(),
            Policy::Sample(rng) => sample_categorical(log_probs, rng),
        }
    }
}

/// Draws an index from normalized log-probabilities by inverse CDF.
pub fn sample_categorical(log_probs: &Tensor, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &lp) in log_probs.data().iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

/// Tape handles and choices of one controller rollout (`k` glimpses, then a label).
#[derive(Clone, Debug)]
pub struct ControllerOutput {
    pub glimpses: Vec<Cell>,
    /// Log-probability of each location action.
    pub location_log_probs: Vec<Var>,
    /// `[classes + 1]` log-probabilities at the classification step.
    pub class_log_probs: Var,
    /// Value estimate at each of the `k + 1` steps.
    pub values: Vec<Var>,
    pub state: ControllerState,
}

/// Runs `k` location steps then the classification step. Returns the
/// rollout and the chosen label.
#[allow(clippy::too_many_arguments)]
pub fn controller_rollout(
    s: &mut Session,
    agent: &Agent,
    priority: Var,
    g0: Var,
    prev_label: usize,
    volume: &Tensor,
    state: ControllerState,
    policy: &mut Policy,
) -> Result<(ControllerOutput, usize)> {
    agent.check_label(prev_label)?;
    let c = &agent.config;
    let (h, w) = c.grid;
    let vs = volume.shape();
    if vs != [c.channels, h, w] {
        return Err(Error::dim("controller_rollout", vs, &[c.channels, h, w]));
    }
    let ctrl = &agent.controller;
    let label_hot = s.graph.constant(Tensor::one_hot(c.label_dim(), prev_label));
    let mut prev_loc = s.graph.constant(Tensor::zeros(&[c.cells()]));
    let mut glimpse = g0;
    let mut hidden = state.hidden;
    let mut glimpses = Vec::with_capacity(c.glimpses);
    let mut location_log_probs = Vec::with_capacity(c.glimpses);
    let mut values = Vec::with_capacity(c.glimpses + 1);
    for step in 0..=c.glimpses {
        let x = s.graph.concat(&[priority, label_hot, prev_loc, glimpse])?;
        let e = ctrl.encode.forward(s, x)?;
        hidden = ctrl.gru.forward(s, e, hidden)?;
        let detached = s.graph.detach(hidden);
        let value = ctrl.value.forward(s, detached)?;
        values.push(s.graph.reshape(value, &[])?);
        if step == c.glimpses {
            break;
        }
        let scores = ctrl.location.forward(s, detached)?;
        let logp = s.graph.log_softmax(scores)?;
        let idx = policy.choose(s.graph.value(logp));
        location_log_probs.push(s.graph.pick(logp, idx)?);
        let cell = Cell::from_index(idx, w);
        glimpses.push(cell);
        glimpse = s.graph.constant(column(volume, cell));
        prev_loc = s.graph.constant(Tensor::one_hot(c.cells(), idx));
    }
    let scores = ctrl.class.forward(s, hidden)?;
    let class_log_probs = s.graph.log_softmax(scores)?;
    let label = policy.choose(s.graph.value(class_log_probs));
    Ok((
        ControllerOutput {
            glimpses,
            location_log_probs,
            class_log_probs,
            values,
            state: ControllerState { hidden },
        },
        label,
    ))
}

fn column(volume: &Tensor, cell: Cell) -> Tensor {
    let s = volume.shape();
    let plane = s[1] * s[2];
    let off = cell.y * s[2] + cell.x;
    Tensor::vector((0..s[0]).map(|ch| volume.data()[ch * plane + off]).collect())
}

/// Inhibition of return: glimpsed cells become 0, every other cell becomes
/// `max(S − M, 0)`. The result is not re-normalized.
pub fn update_saliency(saliency: &Tensor, mask: &Tensor, glimpses: &[Cell]) -> Result<Tensor> {
    if saliency.shape() != mask.shape() || saliency.shape().len() != 2 {
        return Err(Error::dim("update_saliency", saliency.shape(), mask.shape()));
    }
    let (h, w) = (saliency.shape()[0], saliency.shape()[1]);
    let mut out: Vec<f64> = saliency
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&s, &m)| (s - m).max(0.0))
        .collect();
    for g in glimpses {
        if g.x >= w || g.y >= h {
            return Err(Error::Bounds {
                op: "update_saliency",
                index: vec![g.x, g.y],
                bounds: vec![w, h],
            });
        }
        out[g.index(w)] = 0.0;
    }
    Tensor::new(vec![h, w], out)
}

/// Per-step rewards recorded during training rollouts.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRewards {
    /// Priority value at each glimpse.
    pub location: Vec<f64>,
    /// `None` on the stop-supervised final step and under teacher forcing.
    pub class: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct MetaStep {
    /// Saliency seen by this step, before suppression.
    pub saliency: Tensor,
    pub mask: Tensor,
    pub priority: Tensor,
    pub attn: GaussianAttnParams,
    pub g0: Tensor,
    pub glimpses: Vec<Cell>,
    pub location_log_probs: Vec<Var>,
    pub class_log_probs: Var,
    /// Label fed back to the next step.
    pub label: usize,
    pub label_log_prob: Var,
    pub values: Vec<Var>,
    pub rewards: Option<StepRewards>,
    /// Target for the cross-entropy terms, when one applies to this step.
    pub target: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub steps: Vec<MetaStep>,
    pub stop: usize,
}

impl Trajectory {
    /// Emitted labels up to the first stop.
    pub fn predicted(&self) -> LabelMultiset {
        self.steps
            .iter()
            .map(|s| s.label)
            .take_while(|&l| l != self.stop)
            .collect()
    }

    pub fn controller_actions(&self) -> usize {
        self.steps.iter().map(|s| s.glimpses.len() + 1).sum()
    }
}

pub enum EpisodeMode<'a> {
    /// Sampled actions, rewards, `|labels| + 1` meta-steps.
    Train {
        labels: &'a LabelMultiset,
        rng: &'a mut crate::rng::Rng,
    },
    /// Greedy actions until stop or `max_steps`.
    Infer { max_steps: usize },
    /// Sampled locations, labels forced to `order` then stop. Location
    /// rewards are recorded for logging; class rewards are not.
    Teacher {
        order: &'a [usize],
        rng: &'a mut crate::rng::Rng,
    },
}

/// Runs the two-level loop on one precomputed `(volume, saliency)` pair.
pub fn episode_rollout(
    s: &mut Session,
    agent: &Agent,
    volume: &Tensor,
    saliency: &Tensor,
    mode: EpisodeMode,
) -> Result<Trajectory> {
    agent.check_grid("episode_rollout", saliency.shape())?;
    let c = agent.config.clone();
    let stop = c.stop();
    let (steps, mut available, forced, mut policy) = match mode {
        EpisodeMode::Train { labels, rng } => {
            if labels.is_empty() {
                return Err(Error::usage("train rollout needs a non-empty label multiset"));
            }
            (labels.len() + 1, Some(labels.clone()), None, Policy::Sample(rng))
        }
        EpisodeMode::Infer { max_steps } => {
            if max_steps == 0 {
                return Err(Error::usage("max_steps must be at least 1"));
            }
            (max_steps, None, None, Policy::Greedy)
        }
        EpisodeMode::Teacher { order, rng } => {
            if let Some(&bad) = order.iter().find(|&&l| l >= c.classes) {
                return Err(Error::Bounds {
                    op: "teacher labels",
                    index: vec![bad],
                    bounds: vec![c.classes],
                });
            }
            (order.len() + 1, None, Some(order), Policy::Sample(rng))
        }
    };
    let training = available.is_some();
    let rewarded = training || forced.is_some();
    let mut meta_state = agent.initial_meta_state(s);
    let mut ctrl_state = agent.initial_controller_state(s);
    let mut sal = saliency.clone();
    let mut prev_label = c.start();
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let meta = meta_step(s, agent, &sal, prev_label, meta_state)?;
        meta_state = meta.state;
        let (priority, g0) = interface(s, meta.mask, &sal, volume)?;
        let (ctrl, sampled) =
            controller_rollout(s, agent, priority, g0, prev_label, volume, ctrl_state, &mut policy)?;
        ctrl_state = ctrl.state;
        let last = t + 1 == steps;
        let target = match forced {
            Some(order) => Some(if last { stop } else { order[t] }),
            None if training && last => Some(stop),
            None => None,
        };
        let label = match forced {
            Some(_) => target.expect("teacher target"),
            None => sampled,
        };
        let label_log_prob = s.graph.pick(ctrl.class_log_probs, label)?;
        let priority_t = s.graph.value(priority).clone().reshape(&[c.grid.0, c.grid.1])?;
        let rewards = rewarded.then(|| StepRewards {
            location: ctrl
                .glimpses
                .iter()
                .map(|&g| priority_t.data()[g.index(c.grid.1)])
                .collect(),
            class: match available.as_mut() {
                Some(avail) if !last => {
                    let (r, rest) = crate::learning::clf_reward(label, avail);
                    *avail = rest;
                    Some(r)
                }
                _ => None,
            },
        });
        let mask_t = s.graph.value(meta.mask).clone();
        let next = update_saliency(&sal, &mask_t, &ctrl.glimpses)?;
        out.push(MetaStep {
            saliency: std::mem::replace(&mut sal, next),
            mask: mask_t,
            priority: priority_t,
            attn: meta.attn.values(&s.graph),
            g0: s.graph.value(g0).clone(),
            glimpses: ctrl.glimpses,
            location_log_probs: ctrl.location_log_probs,
            class_log_probs: ctrl.class_log_probs,
            label,
            label_log_prob,
            values: ctrl.values,
            rewards,
            target,
        });
        prev_label = label;
        if matches!(policy, Policy::Greedy) && label == stop {
            break;
        }
    }
    Ok(Trajectory { steps: out, stop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::keyed;

    fn small() -> (Agent, ParamSet) {
        let cfg = AgentConfig {
            classes: 4,
            grid: (4, 4),
            channels: 3,
            components: 2,
            glimpses: 2,
            meta_hidden: 6,
            ctrl_hidden: 8,
            loc_hidden: 5,
        };
        let mut params = ParamSet::new();
        let agent = Agent::new(cfg, &mut params, &mut keyed(&[9])).unwrap();
        (agent, params)
    }

    fn inputs() -> (Tensor, Tensor) {
        let v = Tensor::from_fn(&[3, 4, 4], |i| ((i * 7) % 5) as f64 / 5.0);
        let s = Tensor::from_fn(&[4, 4], |i| ((i * 3) % 7) as f64 / 6.0);
        (v, s)
    }

    #[test]
    fn interface_selector_and_uniform() {
        let (agent, params) = small();
        let _ = agent;
        let mut s = Session::inference(&params);
        let (v, _) = inputs();
        let mut hot = Tensor::zeros(&[4, 4]);
        hot.set(&[1, 2], 1.0).unwrap();
        let m = s.graph.constant(hot);
        let (p, g0) = interface(&mut s, m, &Tensor::ones(&[4, 4]), &v).unwrap();
        assert_eq!(s.graph.value(p).argmax(), 6);
        assert_eq!(s.graph.value(p).sum(), 1.0);
        assert_eq!(s.graph.value(g0).data(), column(&v, Cell { x: 2, y: 1 }).data());

        let m = s.graph.constant(Tensor::ones(&[4, 4]));
        let (p, g0) = interface(&mut s, m, &Tensor::zeros(&[4, 4]), &v).unwrap();
        assert!(s.graph.value(p).data().iter().all(|&x| x == 0.0));
        for ch in 0..3 {
            let want: f64 = v.data()[ch * 16..(ch + 1) * 16].iter().sum();
            assert!((s.graph.value(g0).data()[ch] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn update_rule_cases() {
        let s = Tensor::ones(&[3, 3]);
        let out = update_saliency(&s, &Tensor::ones(&[3, 3]), &[]).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
        let out = update_saliency(&s, &Tensor::zeros(&[3, 3]), &[Cell { x: 2, y: 1 }]).unwrap();
        assert_eq!(out.get(&[1, 2]).unwrap(), 0.0);
        assert_eq!(out.sum(), 8.0);
        assert!(matches!(
            update_saliency(&s, &s, &[Cell { x: 3, y: 0 }]),
            Err(Error::Bounds { .. })
        ));
    }

    #[test]
    fn train_rollout_step_arithmetic() {
        let (agent, params) = small();
        let (v, sal) = inputs();
        let labels: LabelMultiset = [0, 2, 2].into_iter().collect();
        let mut rng = keyed(&[1]);
        let mut s = Session::train(&params);
        let traj = episode_rollout(
            &mut s,
            &agent,
            &v,
            &sal,
            EpisodeMode::Train {
                labels: &labels,
                rng: &mut rng,
            },
        )
        .unwrap();
        assert_eq!(traj.steps.len(), 4);
        assert_eq!(traj.controller_actions(), 12);
        assert!(traj.steps[3].rewards.as_ref().unwrap().class.is_none());
        assert_eq!(traj.steps[3].target, Some(4));
        for w in traj.steps.windows(2) {
            for (a, b) in w[0].saliency.data().iter().zip(w[1].saliency.data()) {
                assert!(b <= a);
            }
        }
        let empty = LabelMultiset::new();
        let mut s = Session::train(&params);
        assert!(matches!(
            episode_rollout(
                &mut s,
                &agent,
                &v,
                &sal,
                EpisodeMode::Train {
                    labels: &empty,
                    rng: &mut rng
                }
            ),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn greedy_is_deterministic_and_bounded() {
        let (agent, params) = small();
        let (v, sal) = inputs();
        let run = || {
            let mut s = Session::inference(&params);
            let t = episode_rollout(&mut s, &agent, &v, &sal, EpisodeMode::Infer { max_steps: 3 }).unwrap();
            t.steps
                .iter()
                .map(|m| (m.glimpses.clone(), m.label, m.mask.clone()))
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(!a.is_empty() && a.len() <= 3);
    }

    #[test]
    fn wrong_grid_is_rejected() {
        let (agent, params) = small();
        let mut s = Session::inference(&params);
        let st = agent.initial_meta_state(&mut s);
        assert!(matches!(
            meta_step(&mut s, &agent, &Tensor::zeros(&[8, 8]), 5, st),
            Err(Error::Dimension { .. })
        ));
    }
}
