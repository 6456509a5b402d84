//! Independent oracles shared by the integration tests and the acceptance run.
//!
//! Nothing here calls the code under test to compute an expected value:
//! gradients come from central differences, metrics from direct counting,
//! and the bandit gradient from enumerating the arms.

#![allow(dead_code)]

pub mod checks;

use std::collections::BTreeMap;

use hsal::ndgrad::{Graph, Tensor, Var};
use hsal::LabelMultiset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, r: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(lo..hi))
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Scalar loss `Σ w ⊙ f(inputs)` for fixed random weights `w`.
fn weighted_loss(
    inputs: &[Tensor],
    weights: Option<&Tensor>,
    f: &dyn Fn(&mut Graph, &[Var]) -> hsal::Result<Var>,
    track: bool,
) -> (Graph, Vec<Var>, Var, Tensor) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), track)).collect();
    let out = f(&mut g, &vars).expect("op under test");
    let shape = g.value(out).shape().to_vec();
    let w = match weights {
        Some(w) => w.clone(),
        None => {
            let mut r = rng(0xC0FFEE);
            random_tensor(&shape, -1.0, 1.0, &mut r)
        }
    };
    let flat = g.flatten(out);
    let wv = g.constant(Tensor::vector(w.data().to_vec()));
    let prod = g.mul(flat, wv).expect("same length");
    let loss = g.sum(prod);
    (g, vars, loss, w)
}

/// Largest relative error between reverse-mode and central-difference
/// gradients over every input entry.
pub fn gradcheck(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> hsal::Result<Var>) -> f64 {
    let (mut g, vars, loss, w) = weighted_loss(inputs, None, &f, true);
    g.backward(loss).expect("backward");
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for j in 0..input.len() {
            let eval = |delta: f64| {
                let mut moved = inputs.to_vec();
                moved[k].data_mut()[j] += delta;
                let (g2, _, l2, _) = weighted_loss(&moved, Some(&w), &f, false);
                g2.value(l2).item()
            };
            let numeric = (eval(FD_EPS) - eval(-FD_EPS)) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

/// Per-class `(tp, fp, fn)` by expanding every multiset into a flat list and
/// matching items one at a time.
pub fn naive_counts(preds: &[LabelMultiset], truths: &[LabelMultiset]) -> BTreeMap<usize, (usize, usize, usize)> {
    let mut out: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    for (p, t) in preds.iter().zip(truths) {
        let mut remaining: Vec<usize> = t.to_vec();
        for label in p.to_vec() {
            let e = out.entry(label).or_default();
            if let Some(pos) = remaining.iter().position(|&x| x == label) {
                remaining.remove(pos);
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
        for label in remaining {
            out.entry(label).or_default().2 += 1;
        }
        for label in t.to_vec() {
            out.entry(label).or_default();
        }
    }
    out
}

/// Naive macro-F1 and exact match computed from [`naive_counts`].
pub fn naive_prf(preds: &[LabelMultiset], truths: &[LabelMultiset]) -> (f64, f64) {
    let counts = naive_counts(preds, truths);
    let f1s: Vec<f64> = counts
        .values()
        .map(|&(tp, fp, fn_)| {
            let d = 2 * tp + fp + fn_;
            if d == 0 {
                0.0
            } else {
                2.0 * tp as f64 / d as f64
            }
        })
        .collect();
    let macro_f1 = if f1s.is_empty() {
        if preds.is_empty() {
            0.0
        } else {
            1.0
        }
    } else {
        f1s.iter().sum::<f64>() / f1s.len() as f64
    };
    let exact = preds
        .iter()
        .zip(truths)
        .filter(|(p, t)| {
            let mut a = p.to_vec();
            let mut b = t.to_vec();
            a.sort();
            b.sort();
            a == b
        })
        .count();
    let em = if preds.is_empty() { 0.0 } else { exact as f64 / preds.len() as f64 };
    (macro_f1, em)
}

pub fn random_multiset(r: &mut impl Rng, classes: usize, max_len: usize) -> LabelMultiset {
    let n = r.random_range(0..=max_len);
    (0..n).map(|_| r.random_range(0..classes)).collect()
}

/// Exact `∂E[R]/∂θ` for a softmax policy over arms with fixed rewards:
/// `∂/∂θ_j Σ_a π_a r_a = π_j (r_j − Σ_a π_a r_a)`.
pub fn bandit_exact_gradient(logits: &[f64], rewards: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
    let pi: Vec<f64> = logits.iter().map(|l| (l - mx).exp() / z).collect();
    let mean: f64 = pi.iter().zip(rewards).map(|(p, r)| p * r).sum();
    pi.iter().zip(rewards).map(|(p, r)| p * (r - mean)).collect()
}

/// Every permutation of `items` (Heap's algorithm). Duplicates are kept.
pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        heap(k - 1, a, out);
        for i in 0..k - 1 {
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            heap(k - 1, a, out);
        }
    }
    let mut a = items.to_vec();
    let mut out = Vec::new();
    heap(a.len(), &mut a, &mut out);
    out
}

/// All multisets of size `0..=max_len` over `classes` labels, as sorted lists.
pub fn all_multisets(classes: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for m in &frontier {
            let lo = m.last().copied().unwrap_or(0);
            for c in lo..classes {
                let mut e: Vec<usize> = m.clone();
                e.push(c);
                next.push(e);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// All label sequences of length `len` over `alphabet` labels.
pub fn all_sequences(alphabet: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s: Vec<usize>| {
                (0..alphabet).map(move |c| {
                    let mut e = s.clone();
                    e.push(c);
                    e
                })
            })
            .collect();
    }
    out
}
