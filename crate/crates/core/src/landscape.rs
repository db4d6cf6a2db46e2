//! Energy landscape E(W) = c^T Sigma^+ c of the hidden features with the
//! readout held at its least-squares optimum, and the pure-Signal collapse check.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{MdError, Result};
use crate::masking::{
    classify_regime, corrupt, enumerate_masks, sample_mask, MaskVector, Regime, Schedule,
};
use crate::model::{aggregate, AggregatedInput, EmbeddingSpec, MlpParams};
use crate::objective::{f_star, mask_weights, Estimate};
use crate::parity::Dataset;
use crate::rng::{stream_rng, Rng, Stream};

/// One aggregated input with its total loss weight (|M|/2t times its
/// probability mass) and, in the Signal regime, the target f*.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedConfig {
    pub input: AggregatedInput,
    pub weight: f64,
    pub target: Option<f64>,
}

fn config(
    x: &crate::parity::FullSequence,
    m: &MaskVector,
    dataset: &Dataset,
    weight: f64,
) -> Result<WeightedConfig> {
    let emb = EmbeddingSpec::new(dataset.spec.n_prime());
    let target = match classify_regime(m, &dataset.spec) {
        Regime::Signal => Some(f_star(m, x, &dataset.spec)?),
        Regime::Noise => None,
    };
    Ok(WeightedConfig {
        input: aggregate(&corrupt(x, m)?, &emb)?,
        weight,
        target,
    })
}

/// Every (sample, mask) pair with nonzero weight, rate integrated exactly.
pub fn enumerate_configs(dataset: &Dataset, schedule: &Schedule) -> Result<Vec<WeightedConfig>> {
    let n_prime = dataset.spec.n_prime();
    let weights = mask_weights(schedule, n_prime);
    let masks: Vec<MaskVector> = enumerate_masks(n_prime)?.collect();
    let n = dataset.samples.len() as f64;
    let mut out = Vec::new();
    for x in &dataset.samples {
        for m in &masks {
            let w = m.count() as f64 * weights[m.count()] / n;
            if w > 0.0 {
                out.push(config(x, m, dataset, w)?);
            }
        }
    }
    Ok(out)
}

/// All Signal (sample, mask) pairs at point-mass rate t, equally weighted:
/// the i-th of T configurations carries (|M_i|/2t) / T.
pub fn pure_signal_configs(dataset: &Dataset, t: f64) -> Result<Vec<WeightedConfig>> {
    if t <= 0.0 {
        return Err(MdError::ZeroRateWithMask);
    }
    let n_prime = dataset.spec.n_prime();
    let mut pairs = Vec::new();
    for x in &dataset.samples {
        for m in enumerate_masks(n_prime)? {
            if classify_regime(&m, &dataset.spec) == Regime::Signal {
                pairs.push((x, m));
            }
        }
    }
    let total = pairs.len() as f64;
    pairs
        .into_iter()
        .map(|(x, m)| config(x, &m, dataset, m.count() as f64 / (2.0 * t) / total))
        .collect()
}

/// Monte-Carlo configurations: each draw of (sample, t, m) carries (|M|/2t) / trials.
pub fn sampled_configs(
    dataset: &Dataset,
    schedule: &Schedule,
    trials: usize,
    rng: &mut Rng,
) -> Result<Vec<WeightedConfig>> {
    use rand::Rng as _;
    let n_prime = dataset.spec.n_prime();
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let x = &dataset.samples[rng.random_range(0..dataset.samples.len())];
        let t = schedule.sample_rate(rng);
        let m = sample_mask(t, n_prime, rng);
        if m.count() > 0 {
            out.push(config(
                x,
                &m,
                dataset,
                m.count() as f64 / (2.0 * t) / trials as f64,
            )?);
        }
    }
    Ok(out)
}

/// Moore-Penrose pseudoinverse of a symmetric matrix with its numerical rank.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoInverse {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
}

/// Default relative cut 1e-10 * D for a D x D matrix.
pub fn default_tolerance(dim: usize) -> f64 {
    1e-10 * dim as f64
}

/// Eigendecomposition pseudoinverse; eigenvalues at or below `tol * lambda_max` are dropped.
pub fn pseudo_inverse(s: &DMatrix<f64>, tol: f64) -> Result<PseudoInverse> {
    if !s.is_square() {
        return Err(MdError::DimensionMismatch(format!(
            "pseudoinverse of a {}x{} matrix",
            s.nrows(),
            s.ncols()
        )));
    }
    let scale = s.amax();
    let asym = (s - s.transpose()).amax();
    if asym > 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(MdError::NotSymmetric(asym));
    }
    let n = s.nrows();
    if scale == 0.0 {
        return Ok(PseudoInverse {
            matrix: DMatrix::zeros(n, n),
            rank: 0,
        });
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lambda_max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let cut = tol * lambda_max;
    let mut matrix = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cut {
            rank += 1;
            let u = eig.eigenvectors.column(i);
            matrix += (u * u.transpose()) / l;
        }
    }
    Ok(PseudoInverse { matrix, rank })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeStats {
    pub c: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub energy: f64,
    pub v_star: DVector<f64>,
    pub rank: usize,
}

/// c = sum_S weight f* h and Sigma = sum_all weight h h^T with h = ReLU(W z).
///
/// Configurations sharing an input are merged first. When fewer distinct
/// inputs than hidden units remain, v* = Sigma^+ c is taken through the Gram
/// matrix G^T G of the weighted features G (Sigma = G G^T), which has the same
/// nonzero spectrum and is much smaller.
pub fn stats_from_configs(
    w: &DMatrix<f64>,
    configs: &[WeightedConfig],
    tol: Option<f64>,
) -> Result<LandscapeStats> {
    let width = w.nrows();
    let tol = tol.unwrap_or_else(|| default_tolerance(width));
    let probe = MlpParams::new(w.clone(), DVector::zeros(width))?;

    let mut index: HashMap<&[usize], usize> = HashMap::new();
    let mut merged: Vec<(&AggregatedInput, f64, f64)> = Vec::new();
    for cfg in configs {
        let slot = *index.entry(cfg.input.active()).or_insert_with(|| {
            merged.push((&cfg.input, 0.0, 0.0));
            merged.len() - 1
        });
        merged[slot].1 += cfg.weight;
        merged[slot].2 += cfg.weight * cfg.target.unwrap_or(0.0);
    }

    let t = merged.len();
    let mut g = DMatrix::zeros(width, t);
    let mut y = DVector::zeros(t);
    for (j, (input, weight, weighted_target)) in merged.iter().enumerate() {
        let root = weight.sqrt();
        let h = probe.hidden(input)?;
        g.column_mut(j).copy_from_slice(&h);
        g.column_mut(j).scale_mut(root);
        y[j] = if root > 0.0 {
            weighted_target / root
        } else {
            0.0
        };
    }
    let c = &g * &y;
    let sigma = &g * g.transpose();
    let (v_star, rank) = if t < width {
        let gram = g.transpose() * &g;
        let pinv = pseudo_inverse(&gram, tol)?;
        (&g * (&pinv.matrix * &y), pinv.rank)
    } else {
        let pinv = pseudo_inverse(&sigma, tol)?;
        (&pinv.matrix * &c, pinv.rank)
    };
    let energy = c.dot(&v_star);
    Ok(LandscapeStats {
        c,
        sigma,
        energy,
        v_star,
        rank,
    })
}

pub fn compute_stats(
    w: &DMatrix<f64>,
    dataset: &Dataset,
    schedule: &Schedule,
) -> Result<LandscapeStats> {
    stats_from_configs(w, &enumerate_configs(dataset, schedule)?, None)
}

/// Signal fitting term plus Noise penalty for readout v on fixed features.
pub fn lazy_effective_loss(
    v: &DVector<f64>,
    w: &DMatrix<f64>,
    configs: &[WeightedConfig],
) -> Result<f64> {
    let probe = MlpParams::new(w.clone(), v.clone())?;
    let mut total = 0.0;
    for cfg in configs {
        let f = probe.forward(&cfg.input)?.output;
        let d = f - cfg.target.unwrap_or(0.0);
        total += cfg.weight * if cfg.target.is_some() { d * d } else { f * f };
    }
    Ok(total)
}

/// sum_S weight f*^2: the value of L_eff(v*, W) + E(W), and the collapsed energy (1/T)||y||^2.
pub fn signal_constant(configs: &[WeightedConfig]) -> f64 {
    configs
        .iter()
        .filter_map(|c| c.target.map(|f| c.weight * f * f))
        .sum()
}

/// Batch-means Monte-Carlo estimate of E(W) for instances too large to enumerate.
pub fn monte_carlo_energy(
    w: &DMatrix<f64>,
    dataset: &Dataset,
    schedule: &Schedule,
    trials: usize,
    batches: usize,
    rng: &mut Rng,
) -> Result<Estimate> {
    if batches < 2 || trials < batches {
        return Err(MdError::Config(
            "need at least two batches and one trial per batch".into(),
        ));
    }
    let per = trials / batches;
    let energies: Vec<f64> = (0..batches)
        .map(|_| {
            stats_from_configs(w, &sampled_configs(dataset, schedule, per, rng)?, None)
                .map(|s| s.energy)
        })
        .collect::<Result<_>>()?;
    let b = batches as f64;
    let mean = energies.iter().sum::<f64>() / b;
    let var = energies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (b - 1.0);
    Ok(Estimate {
        mean,
        std_error: (var / b).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyDraw {
    pub draw_index: usize,
    pub energy: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub draws: Vec<EnergyDraw>,
    pub theoretical_constant: f64,
    /// (max - min) / |mean| over the draws.
    pub relative_spread: f64,
    pub max_relative_error: f64,
    pub distinct_inputs: usize,
    /// Every draw reached rank equal to the number of distinct inputs.
    pub spans: bool,
    pub collapsed: bool,
}

/// Relative spread below which the landscape is reported flat.
pub const COLLAPSE_TOLERANCE: f64 = 1e-6;

/// Energy over `trials` random W ~ N(0, 1/d) of width `width`, compared with sum_S weight f*^2.
pub fn collapse_check(
    configs: &[WeightedConfig],
    width: usize,
    trials: usize,
    seed: u64,
) -> Result<CollapseReport> {
    let d = configs
        .first()
        .map(|c| c.input.d())
        .ok_or_else(|| MdError::Config("no configurations".into()))?;
    let distinct_inputs = configs
        .iter()
        .map(|c| c.input.active().to_vec())
        .collect::<HashSet<_>>()
        .len();
    let theoretical_constant = signal_constant(configs);
    let mut rng = stream_rng(seed, Stream::Init);
    let mut draws = Vec::with_capacity(trials);
    for i in 0..trials {
        let w = MlpParams::init(width, d, 1.0, &mut rng).w;
        let s = stats_from_configs(&w, configs, None)?;
        draws.push(EnergyDraw {
            draw_index: i,
            energy: s.energy,
            rank: s.rank,
        });
    }
    let (lo, hi) = draws
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), d| {
            (a.min(d.energy), b.max(d.energy))
        });
    let mean = draws.iter().map(|d| d.energy).sum::<f64>() / trials.max(1) as f64;
    let relative_spread = (hi - lo) / mean.abs().max(f64::MIN_POSITIVE);
    let max_relative_error = draws
        .iter()
        .map(|d| {
            (d.energy - theoretical_constant).abs()
                / theoretical_constant.abs().max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max);
    let spans = draws.iter().all(|d| d.rank >= distinct_inputs);
    Ok(CollapseReport {
        draws,
        theoretical_constant,
        relative_spread,
        max_relative_error,
        distinct_inputs,
        spans,
        collapsed: relative_spread < COLLAPSE_TOLERANCE,
    })
}

/// CSV with header draw_index,energy,rank,theoretical_constant.
pub fn write_energy_scan_csv(report: &CollapseReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["draw_index", "energy", "rank", "theoretical_constant"])?;
    for d in &report.draws {
        w.write_record([
            d.draw_index.to_string(),
            format!("{:e}", d.energy),
            d.rank.to_string(),
            format!("{:e}", report.theoretical_constant),
        ])?;
    }
    w.flush()?;
    Ok(())
}
