//! Check routines shared by the integration tests and the acceptance run.

use hsal::agent::{controller_rollout, interface, meta_step, Agent, AgentConfig, Policy};
use hsal::attention::{build_mask, transform_raw_params};
use hsal::learning::{clf_reward, reinforce_term};
use hsal::ndgrad::{Graph, ParamId, ParamSet, Session, Tensor, Var};
use hsal::rng::keyed;
use hsal::LabelMultiset;

use super::{bandit_exact_gradient, gradcheck, random_tensor, rel_err, rng, FD_EPS};

fn check(out: &mut Vec<(String, f64)>, name: &str, inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> hsal::Result<Var>) {
    out.push((name.to_string(), gradcheck(inputs, f)));
}

fn t(shape: &[usize], seed: u64) -> Tensor {
    random_tensor(shape, -1.0, 1.0, &mut rng(seed))
}

/// Values bounded away from zero so kinks and the log pole stay out of reach.
fn away(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| {
        let v: f64 = rand::Rng::random_range(&mut r, 0.2..1.5);
        if rand::Rng::random_bool(&mut r, 0.5) { v } else { -v }
    })
}

fn elementwise_binary(out: &mut Vec<(String, f64)>) {
    let (a, b) = (t(&[3, 4], 1), t(&[3, 4], 2));
    check(out, "add", &[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]));
    check(out, "sub", &[a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]));
    check(out, "mul", &[a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]));
    let s = Tensor::scalar(0.7);
    check(out, "mul scalar lhs", &[s.clone(), a.clone()], |g, v| g.mul(v[0], v[1]));
    check(out, "sub scalar rhs", &[a.clone(), s.clone()], |g, v| g.sub(v[0], v[1]));
    check(out, "add scalar", &[s, a], |g, v| g.add(v[1], v[0]));
}

fn elementwise_unary(out: &mut Vec<(String, f64)>) {
    let x = t(&[10], 3);
    check(out, "scale", &[x.clone()], |g, v| Ok(g.scale(v[0], -2.5)));
    check(out, "shift", &[x.clone()], |g, v| Ok(g.shift(v[0], 0.3)));
    check(out, "sigmoid", &[x.clone()], |g, v| Ok(g.sigmoid(v[0])));
    check(out, "tanh", &[x.clone()], |g, v| Ok(g.tanh(v[0])));
    check(out, "exp", &[x.clone()], |g, v| Ok(g.exp(v[0])));
    check(out, "square", &[x], |g, v| Ok(g.square(v[0])));
    check(out, "relu", &[away(&[10], 4)], |g, v| Ok(g.relu(v[0])));
    let pos = away(&[10], 5).map(f64::abs);
    check(out, "log", &[pos], |g, v| g.log(v[0]));
}

fn linear_algebra(out: &mut Vec<(String, f64)>) {
    check(out, "matmul", &[t(&[3, 4], 6), t(&[4, 2], 7)], |g, v| g.matmul(v[0], v[1]));
    check(out, "matvec", &[t(&[3, 4], 8), t(&[4, 1], 9)], |g, v| g.matmul(v[0], v[1]));
    check(out, "linear", &[t(&[3, 5], 10), t(&[5], 11), t(&[3], 12)], |g, v| {
        g.linear(v[0], v[1], v[2])
    });
    for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
        check(out, 
            &format!("conv2d stride {stride} pad {pad}"),
            &[t(&[2, 6, 6], 13), t(&[3, 2, 3, 3], 14)],
            |g, v| g.conv2d(v[0], v[1], stride, pad),
        );
    }
    check(out, "channel_bias", &[t(&[3, 2, 2], 15), t(&[3], 16)], |g, v| g.channel_bias(v[0], v[1]));
}

fn reductions_and_shapes(out: &mut Vec<(String, f64)>) {
    let x = t(&[2, 3], 17);
    check(out, "sum", &[x.clone()], |g, v| Ok(g.sum(v[0])));
    check(out, "mean", &[x.clone()], |g, v| Ok(g.mean(v[0])));
    check(out, "softmax", &[t(&[6], 18)], |g, v| g.softmax(v[0]));
    check(out, "log_softmax", &[t(&[6], 19)], |g, v| g.log_softmax(v[0]));
    check(out, "reshape", &[x.clone()], |g, v| g.reshape(v[0], &[3, 2]));
    check(out, "flatten", &[x.clone()], |g, v| Ok(g.flatten(v[0])));
    check(out, "concat", &[x.clone(), t(&[4], 20)], |g, v| g.concat(&[v[0], v[1], v[0]]));
    check(out, "slice", &[t(&[8], 21)], |g, v| g.slice(v[0], 2, 4));
    check(out, "pick", &[t(&[8], 22)], |g, v| g.pick(v[0], 5));
    check(out, "gather_column", &[t(&[4, 3, 3], 23)], |g, v| g.gather_column(v[0], 1, 2));
    // distinct values so the arg-min and arg-max are stable under perturbation
    let spread = Tensor::vector(vec![0.3, -0.9, 0.1, 1.2, 0.5, -0.2]);
    check(out, "minmax_normalize", &[spread], |g, v| Ok(g.minmax_normalize(v[0])));
}

fn attention_mask(out: &mut Vec<(String, f64)>) {
    check(out, "transform + mask", &[t(&[12], 24)], |g, v| {
        let p = transform_raw_params(g, v[0], 5, 4)?;
        build_mask(g, &p, 5, 4)
    });
}

/// `(case, worst relative error)` for every autodiff op.
pub fn op_cases() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    elementwise_binary(&mut out);
    elementwise_unary(&mut out);
    linear_algebra(&mut out);
    reductions_and_shapes(&mut out);
    attention_mask(&mut out);
    out
}

fn setup() -> (Agent, ParamSet, Tensor, Tensor) {
    let cfg = AgentConfig {
        classes: 3,
        grid: (4, 4),
        channels: 3,
        components: 2,
        glimpses: 2,
        meta_hidden: 5,
        ctrl_hidden: 6,
        loc_hidden: 4,
    };
    let mut params = ParamSet::new();
    let agent = Agent::new(cfg, &mut params, &mut keyed(&[77])).unwrap();
    let volume = Tensor::from_fn(&[3, 4, 4], |i| ((i * 13 % 11) as f64) / 11.0);
    let saliency = Tensor::from_fn(&[4, 4], |i| ((i * 5 % 7) as f64) / 6.0);
    (agent, params, volume, saliency)
}

/// Which outputs enter the scalar loss.
#[derive(Clone, Copy)]
enum Output {
    /// Class scores, mask and `g₀`; every weight upstream of the class head.
    Class,
    /// Value estimates and location log-probs; reaches only the two detached heads.
    Heads,
}

fn loss(s: &mut Session, agent: &Agent, v: &Tensor, sal: &Tensor, which: Output) -> Var {
    let st = agent.initial_meta_state(s);
    let m = meta_step(s, agent, sal, agent.config.start(), st).unwrap();
    let (p, g0) = interface(s, m.mask, sal, v).unwrap();
    let cs = agent.initial_controller_state(s);
    let (out, _) = controller_rollout(s, agent, p, g0, agent.config.start(), v, cs, &mut Policy::Greedy).unwrap();
    let g = &mut s.graph;
    let mut parts = match which {
        Output::Class => {
            let mask = g.flatten(m.mask);
            vec![out.class_log_probs, mask, g0, p]
        }
        Output::Heads => {
            let mut v = out.values.clone();
            v.extend(out.location_log_probs.iter().copied());
            v
        }
    };
    let flat = g.concat(&parts).unwrap();
    let n = g.value(flat).len();
    let w = g.constant(Tensor::from_fn(&[n], |i| ((i * 7 % 5) as f64 - 2.0) / 3.0));
    parts.clear();
    let prod = g.mul(flat, w).unwrap();
    g.sum(prod)
}

fn composite(which: Output, select: impl Fn(&str) -> bool) -> (f64, usize) {
    let (agent, params, v, sal) = setup();
    let mut s = Session::train(&params);
    let l = loss(&mut s, &agent, &v, &sal, which);
    let grads = s.backward(l).unwrap();
    let ids: Vec<ParamId> = params.ids().filter(|&id| select(params.name(id))).collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for id in ids {
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(params.get(id).shape()));
        let n = params.get(id).len();
        // every entry of small tensors, a stride through large ones
        let step = (n / 12).max(1);
        for j in (0..n).step_by(step) {
            let eval = |delta: f64| {
                let mut moved = params.clone();
                moved.get_mut(id).data_mut()[j] += delta;
                let mut s = Session::inference(&moved);
                let l = loss(&mut s, &agent, &v, &sal, which);
                s.graph.value(l).item()
            };
            let numeric = (eval(FD_EPS) - eval(-FD_EPS)) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

fn is_head(name: &str) -> bool {
    name.starts_with("controller.location") || name.starts_with("controller.value")
}

/// Whole-meta-step checks: `(case, worst relative error, entries checked)`.
pub fn composite_cases() -> Vec<(String, f64, usize)> {
    let cases: [(&str, Output, fn(&str) -> bool); 3] = [
        ("meta-step through class head", Output::Class, |n| !is_head(n) && n != "agent.volume_scale"),
        ("meta-step detached heads", Output::Heads, is_head),
        ("meta-step reaches encoder", Output::Class, |n| n.starts_with("meta.encode")),
    ];
    cases
        .into_iter()
        .map(|(name, which, select)| {
            let (err, n) = composite(which, select);
            (name.to_string(), err, n)
        })
        .collect()
}

pub const ARM_REWARDS: [f64; 3] = [1.0, 0.0, -1.0];
pub const BANDIT_SAMPLES: usize = 100_000;

/// Largest `|estimate − exact| / SE` over the three coordinates.
pub fn bandit_z(logits: [f64; 3], baseline: f64, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..BANDIT_SAMPLES {
        let mut g = Graph::new();
        let theta = g.param(Tensor::vector(logits.to_vec()));
        let logp = g.log_softmax(theta).unwrap();
        let arm = hsal::agent::sample_categorical(g.value(logp), &mut r);
        let lp = g.pick(logp, arm).unwrap();
        let loss = reinforce_term(&mut g, lp, baseline, ARM_REWARDS[arm]);
        g.backward(loss).unwrap();
        for (j, &d) in g.grad(theta).unwrap().data().iter().enumerate() {
            // the surrogate is minimized, so its gradient estimates −∇E[R]
            sum[j] += -d;
            sq[j] += d * d;
        }
    }
    let n = BANDIT_SAMPLES as f64;
    let exact = bandit_exact_gradient(&logits, &ARM_REWARDS);
    (0..3)
        .map(|j| {
            let mean = sum[j] / n;
            let var = (sq[j] / n - mean * mean).max(0.0);
            let se = (var / n).sqrt();
            (mean - exact[j]).abs() / se
        })
        .fold(0.0, f64::max)
}

/// Summed classification reward of a prediction sequence and its hit count.
pub fn total_reward(preds: &[usize], truth: &LabelMultiset) -> (f64, usize) {
    let mut avail = truth.clone();
    let mut total = 0.0;
    let mut hits = 0;
    for &p in preds {
        let (r, next) = clf_reward(p, &avail);
        total += r;
        hits += usize::from(r > 0.0);
        avail = next;
    }
    (total, hits)
}
