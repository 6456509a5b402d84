use rand::Rng;

use crate::error::Result;
use crate::ndgrad::{ParamId, ParamSet, Session, Var};

#[derive(Clone, Debug)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self::with_gain(params, name, inputs, outputs, 1.0, rng)
    }

    pub fn with_gain(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Linear {
            weight: params.insert_scaled(format!("{name}.weight"), &[outputs, inputs], inputs, gain, rng),
            bias: params.insert_zeros(format!("{name}.bias"), &[outputs]),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        s.graph.linear(w, x, b)
    }
}

/// Gated recurrent unit with reset gate applied to the recurrent candidate term.
#[derive(Clone, Debug)]
pub struct Gru {
    w_ih: ParamId,
    w_hh: ParamId,
    b_ih: ParamId,
    b_hh: ParamId,
    hidden: usize,
}

impl Gru {
    pub fn new(params: &mut ParamSet, name: &str, inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Gru {
            w_ih: params.insert_scaled(format!("{name}.w_ih"), &[3 * hidden, inputs], inputs, 1.0, rng),
            w_hh: params.insert_scaled(format!("{name}.w_hh"), &[3 * hidden, hidden], hidden, 1.0, rng),
            b_ih: params.insert_zeros(format!("{name}.b_ih"), &[3 * hidden]),
            b_hh: params.insert_zeros(format!("{name}.b_hh"), &[3 * hidden]),
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// `r = σ(..)`, `z = σ(..)`, `n = tanh(W_n x + b_n + r ⊙ (U_n h + c_n))`,
    /// `h' = n + z ⊙ (h − n)`.
    pub fn forward(&self, s: &mut Session, x: Var, h: Var) -> Result<Var> {
        let hs = self.hidden;
        let (w_ih, w_hh) = (s.param(self.w_ih), s.param(self.w_hh));
        let (b_ih, b_hh) = (s.param(self.b_ih), s.param(self.b_hh));
        let gi = s.graph.linear(w_ih, x, b_ih)?;
        let gh = s.graph.linear(w_hh, h, b_hh)?;
        let g = &mut s.graph;
        let (ir, iz, inn) = (g.slice(gi, 0, hs)?, g.slice(gi, hs, hs)?, g.slice(gi, 2 * hs, hs)?);
        let (hr, hz, hn) = (g.slice(gh, 0, hs)?, g.slice(gh, hs, hs)?, g.slice(gh, 2 * hs, hs)?);
        let r = g.add(ir, hr)?;
        let r = g.sigmoid(r);
        let z = g.add(iz, hz)?;
        let z = g.sigmoid(z);
        let rn = g.mul(r, hn)?;
        let n = g.add(inn, rn)?;
        let n = g.tanh(n);
        let diff = g.sub(h, n)?;
        let zd = g.mul(z, diff)?;
        g.add(n, zd)
    }
}

/// One hidden ReLU layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    hidden: Linear,
    out: Linear,
}

impl Mlp {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        hidden: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Mlp {
            hidden: Linear::with_gain(params, &format!("{name}.hidden"), inputs, hidden, 2f64.sqrt(), rng),
            out: Linear::new(params, &format!("{name}.out"), hidden, outputs, rng),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.hidden.forward(s, x)?;
        let h = s.graph.relu(h);
        self.out.forward(s, h)
    }
}
