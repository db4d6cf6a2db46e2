//! Analytic gradients against central finite differences for both architectures.

mod common;

use common::{draws, mlp_worst, total_loss, transformer_worst, TOL};
use mdlab::model::{ModelParams, TransformerParams};
use mdlab::objective::PointLoss;
use mdlab::parity::TaskSpec;
use mdlab::rng::{stream_rng, Stream};

#[test]
fn mlp_gradients_match_finite_differences() {
    let worst = mlp_worst(1);
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn transformer_gradients_match_finite_differences() {
    let worst = transformer_worst(2);
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn attention_gradient_is_exercised() {
    // With A = 0 the attention gradient is still nonzero, so learning can leave uniform attention.
    let spec = TaskSpec::random(5, 2, 3).unwrap();
    let mut rng = stream_rng(3, Stream::Custom(0));
    let d = draws(&spec, 4, &mut rng);
    let p = ModelParams::Transformer(TransformerParams::init(
        12,
        3 * spec.n_prime(),
        None,
        2.0,
        &mut rng,
    ));
    let mut g = p.zeros_like();
    total_loss(&p, &d, PointLoss::Mse, Some(&mut g));
    assert!(g.tensors()[2].iter().any(|v| v.abs() > 1e-8));
}
