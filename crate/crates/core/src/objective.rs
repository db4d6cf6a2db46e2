//! Masked-diffusion loss on parity sequences, its exact expectation by mask
//! enumeration, the Signal/Noise decomposition and the supervised baseline.

use serde::{Deserialize, Serialize};

use crate::error::{MdError, Result};
use crate::masking::{
    classify_regime, corrupt, enumerate_masks, sample_mask, signal_position, MaskVector, Regime,
    Schedule,
};
use crate::model::{aggregate, EmbeddingSpec, MlpParams, ModelParams, SparseColumns};
use crate::parity::{Dataset, FullSequence, TaskSpec};
use crate::rng::Rng;

/// Per-position loss applied to each masked bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointLoss {
    /// (f - x)^2
    #[default]
    Mse,
    /// ln(1 + exp(-x f)), the cross-entropy of a logistic readout.
    Logistic,
}

impl PointLoss {
    pub fn value(self, f: f64, x: f64) -> f64 {
        match self {
            PointLoss::Mse => (f - x) * (f - x),
            PointLoss::Logistic => softplus(-x * f),
        }
    }

    pub fn grad(self, f: f64, x: f64) -> f64 {
        match self {
            PointLoss::Mse => 2.0 * (f - x),
            PointLoss::Logistic => -x * sigmoid(-x * f),
        }
    }
}

impl std::str::FromStr for PointLoss {
    type Err = MdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(PointLoss::Mse),
            "logistic" => Ok(PointLoss::Logistic),
            other => Err(MdError::Config(format!("unknown point loss '{other}'"))),
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn mismatched_grads() -> MdError {
    MdError::DimensionMismatch("gradient buffer architecture differs from parameters".into())
}

/// Sum of `point` losses over `positions` with scale, plus the gradient when requested.
fn masked_loss_grad(
    params: &ModelParams,
    x: &FullSequence,
    input: &crate::masking::CorruptedSequence,
    positions: &[usize],
    scale: f64,
    point: PointLoss,
    grads: Option<&mut ModelParams>,
) -> Result<f64> {
    let spec = EmbeddingSpec::new(x.len());
    match params {
        ModelParams::Mlp(p) => {
            let z = aggregate(input, &spec)?;
            let fwd = p.forward(&z)?;
            let f = fwd.output;
            let mut loss = 0.0;
            let mut dfd = 0.0;
            for &j in positions {
                let target = x.get(j) as f64;
                loss += point.value(f, target);
                dfd += point.grad(f, target);
            }
            match grads {
                None => {}
                Some(ModelParams::Mlp(g)) => p.backward(&z, &fwd, scale * dfd, g)?,
                Some(_) => return Err(mismatched_grads()),
            }
            Ok(scale * loss)
        }
        ModelParams::Transformer(p) => {
            let cols = SparseColumns::from_corrupted(input, &spec)?;
            let queries: Vec<usize> = positions.iter().map(|&j| j - 1).collect();
            let fwd = p.forward(&cols, &queries)?;
            let mut loss = 0.0;
            let mut upstream = Vec::with_capacity(queries.len());
            for (&j, f) in positions.iter().zip(fwd.scalar_outputs()) {
                let target = x.get(j) as f64;
                loss += point.value(f, target);
                upstream.push(scale * point.grad(f, target));
            }
            match grads {
                None => {}
                Some(ModelParams::Transformer(g)) => p.backward(&cols, &fwd, &upstream, g)?,
                Some(_) => return Err(mismatched_grads()),
            }
            Ok(scale * loss)
        }
    }
}

/// Numerator of the 1/(2t) weight on each masked position of the parity objective.
pub const MD_WEIGHT: f64 = 0.5;

/// Squared-error MD loss of one draw: (1/2t) sum_{j in M} (f_j - x'_j)^2.
pub fn md_sample_loss(
    params: &ModelParams,
    x: &FullSequence,
    t: f64,
    m: &MaskVector,
) -> Result<f64> {
    md_sample_loss_grad(params, x, t, m, PointLoss::Mse, None)
}

/// MD loss of one draw; when `grads` is given, the gradient is added into it.
pub fn md_sample_loss_grad(
    params: &ModelParams,
    x: &FullSequence,
    t: f64,
    m: &MaskVector,
    point: PointLoss,
    grads: Option<&mut ModelParams>,
) -> Result<f64> {
    if x.len() != m.len() {
        return Err(MdError::LengthMismatch {
            expected: x.len(),
            actual: m.len(),
        });
    }
    let masked = m.masked_set();
    if masked.is_empty() {
        return Ok(0.0);
    }
    if t <= 0.0 {
        return Err(MdError::ZeroRateWithMask);
    }
    masked_loss_grad(
        params,
        x,
        &corrupt(x, m)?,
        &masked,
        MD_WEIGHT / t,
        point,
        grads,
    )
}

/// Monte-Carlo mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte-Carlo estimate of the expected MD loss: each trial draws a sample,
/// a rate and a mask.
pub fn md_expected_loss(
    params: &ModelParams,
    dataset: &Dataset,
    schedule: &Schedule,
    trials: usize,
    rng: &mut Rng,
) -> Result<Estimate> {
    use rand::Rng as _;
    if trials == 0 || dataset.samples.is_empty() {
        return Err(MdError::Config(
            "need at least one trial and one sample".into(),
        ));
    }
    let n_prime = dataset.spec.n_prime();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..trials {
        let x = &dataset.samples[rng.random_range(0..dataset.samples.len())];
        let t = schedule.sample_rate(rng);
        let m = sample_mask(t, n_prime, rng);
        let l = md_sample_loss(params, x, t, &m)?;
        sum += l;
        sum_sq += l * l;
    }
    let n = trials as f64;
    let mean = sum / n;
    let var = if trials > 1 {
        (sum_sq - n * mean * mean).max(0.0) / (n - 1.0)
    } else {
        0.0
    };
    Ok(Estimate {
        mean,
        std_error: (var / n).sqrt(),
    })
}

/// E_t[t^s (1-t)^(n'-s) / (2t)]: the expected loss weight carried by one
/// particular mask with `size` masked positions. The empty mask carries none.
pub fn mask_weight(schedule: &Schedule, size: usize, n_prime: usize) -> f64 {
    if size == 0 || (schedule.is_point() && schedule.t0() == 0.0) {
        return 0.0;
    }
    MD_WEIGHT * schedule.expect_monomial(size as u32 - 1, (n_prime - size) as u32)
}

/// Per-size weights `mask_weight(schedule, s, n')` for s = 0..=n'.
pub fn mask_weights(schedule: &Schedule, n_prime: usize) -> Vec<f64> {
    (0..=n_prime)
        .map(|s| mask_weight(schedule, s, n_prime))
        .collect()
}

/// Exact expected MD loss over the finite dataset, enumerating all 2^n' masks
/// and integrating the rate in closed form.
pub fn enumerated_loss(
    params: &ModelParams,
    dataset: &Dataset,
    schedule: &Schedule,
) -> Result<f64> {
    let n_prime = dataset.spec.n_prime();
    let weights = mask_weights(schedule, n_prime);
    let masks: Vec<MaskVector> = enumerate_masks(n_prime)?.collect();
    let mut total = 0.0;
    for x in &dataset.samples {
        for m in &masks {
            let w = weights[m.count()];
            if w == 0.0 {
                continue;
            }
            let masked = m.masked_set();
            // The weight already contains 1/(2t); the pointwise sum is unscaled.
            total += w * masked_loss_grad(
                params,
                x,
                &corrupt(x, m)?,
                &masked,
                1.0,
                PointLoss::Mse,
                None,
            )?;
        }
    }
    Ok(total / dataset.samples.len() as f64)
}

/// Optimal Signal-regime prediction x'_{j*} / |M|.
pub fn f_star(m: &MaskVector, x: &FullSequence, spec: &TaskSpec) -> Result<f64> {
    if m.len() != x.len() {
        return Err(MdError::LengthMismatch {
            expected: x.len(),
            actual: m.len(),
        });
    }
    let j = signal_position(m, spec).ok_or(MdError::NotSignalRegime)?;
    Ok(x.get(j) as f64 / m.count() as f64)
}

/// Signal fitting term, Noise norm penalty and the remaining constant of the MD loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub signal_term: f64,
    pub noise_term: f64,
    pub constant: f64,
    pub p_signal: f64,
}

/// Decomposes the exact MD loss of the position-independent MLP output into
/// P_S E_S[(|M|/2t)(f - f*)^2] + P_N E_N[(|M|/2t) f^2] + constant.
///
/// The constant does not depend on the parameters when the dataset is the
/// complete input population (`Dataset::complete`): only then are the masked
/// non-secret bits independent of the visible ones.
pub fn effective_loss(
    params: &MlpParams,
    dataset: &Dataset,
    schedule: &Schedule,
) -> Result<LossBreakdown> {
    let spec = &dataset.spec;
    let n_prime = spec.n_prime();
    let emb = EmbeddingSpec::new(n_prime);
    let weights = mask_weights(schedule, n_prime);
    let masks: Vec<MaskVector> = enumerate_masks(n_prime)?.collect();
    let regimes: Vec<Regime> = masks.iter().map(|m| classify_regime(m, spec)).collect();
    let (mut total, mut signal, mut noise) = (0.0, 0.0, 0.0);
    for x in &dataset.samples {
        for (m, regime) in masks.iter().zip(&regimes) {
            let size = m.count();
            let w = weights[size];
            if w == 0.0 {
                continue;
            }
            let f = params.forward(&aggregate(&corrupt(x, m)?, &emb)?)?.output;
            let pointwise: f64 = m
                .masked_set()
                .iter()
                .map(|&j| (f - x.get(j) as f64).powi(2))
                .sum();
            total += w * pointwise;
            let ws = w * size as f64;
            match regime {
                Regime::Signal => {
                    let d = f - f_star(m, x, spec)?;
                    signal += ws * d * d;
                }
                Regime::Noise => noise += ws * f * f,
            }
        }
    }
    let n = dataset.samples.len() as f64;
    let (total, signal_term, noise_term) = (total / n, signal / n, noise / n);
    Ok(LossBreakdown {
        total,
        signal_term,
        noise_term,
        constant: total - signal_term - noise_term,
        p_signal: crate::masking::signal_probability(schedule, spec.k()).signal,
    })
}

/// Breakdowns at several random MLP parameters and the spread of their constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub breakdowns: Vec<LossBreakdown>,
    /// (max - min) / max(|mean|, 1e-300) of the constants.
    pub relative_deviation: f64,
}

/// Evaluates `effective_loss` at `draws` MLPs drawn from the init stream of `seed`.
pub fn decomposition_check(
    dataset: &Dataset,
    schedule: &Schedule,
    draws: usize,
    width: usize,
    seed: u64,
) -> Result<DecompositionReport> {
    if draws == 0 || width == 0 {
        return Err(MdError::Config(
            "need at least one draw and a positive width".into(),
        ));
    }
    let d = EmbeddingSpec::new(dataset.spec.n_prime()).d();
    let mut rng = crate::rng::stream_rng(seed, crate::rng::Stream::Init);
    let breakdowns = (0..draws)
        .map(|_| effective_loss(&MlpParams::init(width, d, 1.0, &mut rng), dataset, schedule))
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = breakdowns
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| {
            (a.min(r.constant), b.max(r.constant))
        });
    let mean = breakdowns.iter().map(|r| r.constant).sum::<f64>() / draws as f64;
    Ok(DecompositionReport {
        breakdowns,
        relative_deviation: (hi - lo) / mean.abs().max(1e-300),
    })
}

/// Mean squared error of the output at the parity position with only that
/// position masked, against the label.
pub fn supervised_loss(params: &ModelParams, dataset: &Dataset) -> Result<f64> {
    let total: f64 = dataset
        .samples
        .iter()
        .map(|x| supervised_sample_loss_grad(params, x, PointLoss::Mse, None))
        .sum::<Result<f64>>()?;
    Ok(total / dataset.samples.len() as f64)
}

/// Pointwise loss at the parity position under the evaluation mask, with optional gradient.
pub fn supervised_sample_loss_grad(
    params: &ModelParams,
    x: &FullSequence,
    point: PointLoss,
    grads: Option<&mut ModelParams>,
) -> Result<f64> {
    let n_prime = x.len();
    let m = MaskVector::eval(n_prime);
    masked_loss_grad(params, x, &corrupt(x, &m)?, &[n_prime], 1.0, point, grads)
}
