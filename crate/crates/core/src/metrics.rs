//! Macro-F1 and exact match over label multisets, and the glimpse saliency score.

use serde::{Deserialize, Serialize};

use crate::agent::Trajectory;
use crate::error::{Error, Result};
use crate::multiset::LabelMultiset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub examples: usize,
    pub macro_f1: f64,
    pub exact_match: f64,
    pub attn_saliency: f64,
    /// Classes that occur in any prediction or truth, ascending.
    pub per_class: Vec<ClassScore>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Count-truncated precision/recall per class. `attn_saliency` is left at 0.
///
/// When no class occurs anywhere the macro-F1 is 1 for a non-empty list
/// (every empty prediction is right) and 0 for an empty one.
pub fn multiset_prf(preds: &[LabelMultiset], truths: &[LabelMultiset]) -> Result<EvalReport> {
    if preds.len() != truths.len() {
        return Err(Error::usage(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            truths.len()
        )));
    }
    let mut counts: std::collections::BTreeMap<usize, [usize; 3]> = Default::default();
    let mut exact = 0;
    for (p, t) in preds.iter().zip(truths) {
        if p == t {
            exact += 1;
        }
        for (class, _) in p.iter().chain(t.iter()) {
            counts.entry(class).or_default();
        }
        for (class, slot) in counts.iter_mut() {
            let (pc, tc) = (p.count(*class), t.count(*class));
            let hit = pc.min(tc);
            slot[0] += hit;
            slot[1] += pc - hit;
            slot[2] += tc - hit;
        }
    }
    let per_class: Vec<ClassScore> = counts
        .into_iter()
        .map(|(class, [tp, fp, fn_])| ClassScore {
            class,
            tp,
            fp,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        })
        .collect();
    let macro_f1 = if per_class.is_empty() {
        if preds.is_empty() {
            0.0
        } else {
            1.0
        }
    } else {
        per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64
    };
    Ok(EvalReport {
        examples: preds.len(),
        macro_f1,
        exact_match: ratio(exact, preds.len()),
        attn_saliency: 0.0,
        per_class,
    })
}

/// Mean pre-update saliency at the glimpsed cells, averaged over meta-steps.
pub fn attn_saliency(traj: &Trajectory) -> f64 {
    let per_step: Vec<f64> = traj
        .steps
        .iter()
        .filter(|s| !s.glimpses.is_empty())
        .map(|s| {
            let w = s.saliency.shape()[1];
            s.glimpses
                .iter()
                .map(|g| s.saliency.data()[g.index(w)])
                .sum::<f64>()
                / s.glimpses.len() as f64
        })
        .collect();
    if per_step.is_empty() {
        0.0
    } else {
        per_step.iter().sum::<f64>() / per_step.len() as f64
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// `class,tp,fp,fn,precision,recall,f1` rows followed by a summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,tp,fp,fn,precision,recall,f1\n");
        for c in &self.per_class {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.6}\n",
                c.class, c.tp, c.fp, c.fn_, c.precision, c.recall, c.f1
            ));
        }
        out.push_str(&format!(
            "# examples={} macro_f1={:.6} exact_match={:.6} attn_saliency={:.6}\n",
            self.examples, self.macro_f1, self.exact_match, self.attn_saliency
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(v: &[usize]) -> LabelMultiset {
        v.iter().copied().collect()
    }

    #[test]
    fn perfect_predictor() {
        let t = vec![ms(&[1, 2]), ms(&[3, 3]), ms(&[0])];
        let r = multiset_prf(&t, &t).unwrap();
        assert_eq!((r.macro_f1, r.exact_match), (1.0, 1.0));
    }

    #[test]
    fn duplicate_overprediction() {
        let r = multiset_prf(&[ms(&[3, 3])], &[ms(&[3])]).unwrap();
        let c = &r.per_class[0];
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 0));
        assert!((c.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.exact_match, 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(multiset_prf(&[ms(&[1])], &[]), Err(Error::Usage(_))));
    }
}
