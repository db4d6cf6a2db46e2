//! Finite-difference gradient checks shared by the integration tests.

#![allow(dead_code)]

use mdlab::masking::{sample_mask, MaskVector};
use mdlab::model::{MlpParams, ModelParams, TransformerParams};
use mdlab::objective::{md_sample_loss_grad, supervised_sample_loss_grad, PointLoss};
use mdlab::parity::{sample_dataset, FullSequence, TaskSpec};
use mdlab::rng::{stream_rng, Rng, Stream};
use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub const H: f64 = 1e-5;
pub const COORDS: usize = 20;
pub const TOL: f64 = 1e-5;

pub struct Draw {
    x: FullSequence,
    t: f64,
    m: MaskVector,
}

pub fn draws(spec: &TaskSpec, count: usize, rng: &mut Rng) -> Vec<Draw> {
    let data = sample_dataset(spec, count, 11).unwrap();
    data.samples
        .into_iter()
        .map(|x| loop {
            let t = rng.random_range(0.2..0.8);
            let m = sample_mask(t, spec.n_prime(), rng);
            if m.count() > 0 {
                break Draw { x: x.clone(), t, m };
            }
        })
        .collect()
}

pub fn total_loss(
    p: &ModelParams,
    draws: &[Draw],
    point: PointLoss,
    mut grads: Option<&mut ModelParams>,
) -> f64 {
    let mut total = 0.0;
    for d in draws {
        total += md_sample_loss_grad(p, &d.x, d.t, &d.m, point, grads.as_deref_mut()).unwrap();
        total += supervised_sample_loss_grad(p, &d.x, point, grads.as_deref_mut()).unwrap();
    }
    total
}

fn perturbed(p: &ModelParams, tensor: usize, idx: usize, delta: f64) -> ModelParams {
    let mut q = p.clone();
    q.tensors_mut()[tensor][idx] += delta;
    q
}

/// Checks `COORDS` random coordinates with nonzero gradient.
///
/// A coordinate whose finite differences at step H and 2H disagree sits next
/// to a ReLU kink and is replaced by another.
pub fn check(p: &ModelParams, draws: &[Draw], point: PointLoss, rng: &mut Rng) -> f64 {
    let mut g = p.zeros_like();
    total_loss(p, draws, point, Some(&mut g));
    let sizes: Vec<usize> = p.tensors().iter().map(|t| t.len()).collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut attempts = 0;
    while checked < COORDS {
        attempts += 1;
        assert!(attempts < 100 * COORDS, "too few usable coordinates");
        let tensor = rng.random_range(0..sizes.len());
        let idx = rng.random_range(0..sizes[tensor]);
        let an = g.tensors()[tensor][idx];
        if an.abs() < 1e-6 {
            continue;
        }
        let fd = |h: f64| {
            (total_loss(&perturbed(p, tensor, idx, h), draws, point, None)
                - total_loss(&perturbed(p, tensor, idx, -h), draws, point, None))
                / (2.0 * h)
        };
        let (fd1, fd2) = (fd(H), fd(2.0 * H));
        if (fd1 - fd2).abs() > 1e-6 * fd1.abs().max(1.0) {
            continue;
        }
        let rel = (an - fd1).abs() / an.abs().max(fd1.abs());
        worst = worst.max(rel);
        checked += 1;
    }
    worst
}

/// Worst relative error over both point losses for an MLP on (6,3).
pub fn mlp_worst(seed: u64) -> f64 {
    let spec = TaskSpec::random(6, 3, seed).unwrap();
    let mut rng = stream_rng(seed, Stream::Custom(0));
    let d = draws(&spec, 8, &mut rng);
    let p = ModelParams::Mlp(MlpParams::init(24, 3 * spec.n_prime(), 2.0, &mut rng));
    [PointLoss::Mse, PointLoss::Logistic]
        .into_iter()
        .map(|point| check(&p, &d, point, &mut rng))
        .fold(0.0, f64::max)
}

/// Worst relative error over both point losses for a transformer on (5,2) with random attention.
pub fn transformer_worst(seed: u64) -> f64 {
    let spec = TaskSpec::random(5, 2, seed).unwrap();
    let mut rng = stream_rng(seed, Stream::Custom(0));
    let d = draws(&spec, 6, &mut rng);
    let dim = 3 * spec.n_prime();
    let mut tp = TransformerParams::init(12, dim, None, 2.0, &mut rng);
    tp.a = DMatrix::from_fn(dim, dim, |_, _| {
        0.7 * Distribution::<f64>::sample(&StandardNormal, &mut rng)
    });
    let p = ModelParams::Transformer(tp);
    [PointLoss::Mse, PointLoss::Logistic]
        .into_iter()
        .map(|point| check(&p, &d, point, &mut rng))
        .fold(0.0, f64::max)
}
