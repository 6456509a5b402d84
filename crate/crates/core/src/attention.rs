//! Gaussian-mixture covert attention.
//!
//! A network head emits `4K` raw numbers laid out as four blocks
//! `(alpha, beta, kappa1, kappa2)`. They are squashed into their ranges and the
//! mask is the mixture
//!
//! ```text
//! M[i, j] = Σ_k alpha_k · exp(−beta_k · ((kappa1_k − i)² + (kappa2_k − j)²))
//! ```
//!
//! evaluated on the 1-based grid `1 ≤ i ≤ m`, `1 ≤ j ≤ n`. Array entry
//! `[r][c]` holds grid point `(r + 1, c + 1)`.

use crate::error::{Error, Result};
use crate::ndgrad::{Graph, Tensor, Var};

pub const DEFAULT_COMPONENTS: usize = 5;
pub const BETA_MIN: f64 = 1.5;
pub const BETA_MAX: f64 = 2.0;

/// Mixture parameters after range transformation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianAttnParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa1: Vec<f64>,
    pub kappa2: Vec<f64>,
}

impl GaussianAttnParams {
    pub fn components(&self) -> usize {
        self.alpha.len()
    }

    /// Checks the simplex, width and centre-range invariants for an `m×n` grid.
    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        let k = self.alpha.len();
        if k == 0 || [self.beta.len(), self.kappa1.len(), self.kappa2.len()] != [k; 3] {
            return Err(Error::usage("mixture blocks must share a non-zero length"));
        }
        let total: f64 = self.alpha.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.alpha.iter().any(|&a| a <= 0.0) {
            return Err(Error::Domain {
                op: "attention",
                detail: format!("alpha is not a positive simplex (sum {total})"),
            });
        }
        if self.beta.iter().any(|&b| !(BETA_MIN..=BETA_MAX).contains(&b)) {
            return Err(Error::Domain {
                op: "attention",
                detail: format!("beta outside [{BETA_MIN}, {BETA_MAX}]"),
            });
        }
        let in_range = |v: &[f64], hi: usize| v.iter().all(|&x| (0.0..=hi as f64).contains(&x));
        if !in_range(&self.kappa1, m) || !in_range(&self.kappa2, n) {
            return Err(Error::Domain {
                op: "attention",
                detail: "centre outside the grid range".into(),
            });
        }
        Ok(())
    }
}

/// Tape handles for the four parameter blocks, each a `[K]` vector.
#[derive(Clone, Copy, Debug)]
pub struct AttnVars {
    pub alpha: Var,
    pub beta: Var,
    pub kappa1: Var,
    pub kappa2: Var,
}

impl AttnVars {
    pub fn values(&self, g: &Graph) -> GaussianAttnParams {
        let read = |v: Var| g.value(v).data().to_vec();
        GaussianAttnParams {
            alpha: read(self.alpha),
            beta: read(self.beta),
            kappa1: read(self.kappa1),
            kappa2: read(self.kappa2),
        }
    }

    /// Places already-transformed parameters on the tape as constants.
    pub fn constant(g: &mut Graph, p: &GaussianAttnParams) -> Self {
        AttnVars {
            alpha: g.constant(Tensor::vector(p.alpha.clone())),
            beta: g.constant(Tensor::vector(p.beta.clone())),
            kappa1: g.constant(Tensor::vector(p.kappa1.clone())),
            kappa2: g.constant(Tensor::vector(p.kappa2.clone())),
        }
    }
}

/// Squashes the raw head output into valid mixture parameters.
///
/// `alpha = softmax`, `beta = 1.5 + 0.5·sigmoid`, `kappa1 = m·sigmoid`,
/// `kappa2 = n·sigmoid`.
pub fn transform_raw_params(g: &mut Graph, raw: Var, m: usize, n: usize) -> Result<AttnVars> {
    let len = g.value(raw).len();
    if len == 0 || len % 4 != 0 {
        return Err(Error::usage(format!(
            "raw attention vector must have 4K entries, got {len}"
        )));
    }
    let k = len / 4;
    let a = g.slice(raw, 0, k)?;
    let b = g.slice(raw, k, k)?;
    let c1 = g.slice(raw, 2 * k, k)?;
    let c2 = g.slice(raw, 3 * k, k)?;

    let alpha = g.softmax(a)?;
    let sb = g.sigmoid(b);
    let sb = g.scale(sb, BETA_MAX - BETA_MIN);
    let beta = g.shift(sb, BETA_MIN);
    let s1 = g.sigmoid(c1);
    let kappa1 = g.scale(s1, m as f64);
    let s2 = g.sigmoid(c2);
    let kappa2 = g.scale(s2, n as f64);
    Ok(AttnVars {
        alpha,
        beta,
        kappa1,
        kappa2,
    })
}

/// Builds the `[m×n]` mask on the tape.
pub fn build_mask(g: &mut Graph, p: &AttnVars, m: usize, n: usize) -> Result<Var> {
    if m == 0 || n == 0 {
        return Err(Error::usage("attention grid must be non-empty"));
    }
    let k = g.value(p.alpha).len();
    let rows = g.constant(Tensor::from_fn(&[m * n], |idx| (idx / n + 1) as f64));
    let cols = g.constant(Tensor::from_fn(&[m * n], |idx| (idx % n + 1) as f64));
    let mut mask: Option<Var> = None;
    for c in 0..k {
        let alpha = g.pick(p.alpha, c)?;
        let beta = g.pick(p.beta, c)?;
        let k1 = g.pick(p.kappa1, c)?;
        let k2 = g.pick(p.kappa2, c)?;
        let dx = g.sub(rows, k1)?;
        let dx2 = g.square(dx);
        let dy = g.sub(cols, k2)?;
        let dy2 = g.square(dy);
        let d2 = g.add(dx2, dy2)?;
        let neg_beta = g.scale(beta, -1.0);
        let arg = g.mul(d2, neg_beta)?;
        let bump = g.exp(arg);
        let term = g.mul(bump, alpha)?;
        mask = Some(match mask {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    let mask = mask.ok_or_else(|| Error::usage("attention needs at least one component"))?;
    g.reshape(mask, &[m, n])
}
