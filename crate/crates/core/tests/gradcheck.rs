mod common;

use common::checks::op_cases;
use hsal::ndgrad::{Graph, Tensor};

const OP_TOL: f64 = 1e-6;

#[test]
fn every_op_matches_finite_differences() {
    let cases = op_cases();
    assert!(cases.len() > 30);
    for (name, err) in cases {
        assert!(err < OP_TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn detach_blocks_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]));
    let d = g.detach(x);
    let y = g.mul(d, x).unwrap();
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    // only the non-detached factor contributes
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
}
