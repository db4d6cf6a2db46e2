//! Interval-restricted masked-diffusion training of a one-layer character
//! model, and the interval sweep over masking-rate bins.
//!
//! A block of `L` symbols is embedded as a d x L matrix with d = V + 1 + L:
//! column i has a one in the row of its symbol (the MASK symbol is row V)
//! and a one in row V + 1 + i for its position. The model is the one-layer
//! transformer with a V-way vocabulary head.
//!
//! Weight conventions differ between the two objectives of this crate:
//!
//! ```
//! assert_eq!(mdlab::objective::MD_WEIGHT, 0.5); // parity: 1/(2t)
//! assert_eq!(mdlab::textlab::RESTRICTED_WEIGHT, 1.0); // text: 1/t
//! ```

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MdError, Result};
use crate::model::{gaussian_matrix, Head, ModelParams, SparseColumns, TransformerParams};
use crate::objective::Estimate;
use crate::optim::{Optimizer, OptimizerKind};
use crate::report::csv_float;
use crate::rng::{stream_rng, Rng, Stream};

/// Numerator of the 1/t weight on each masked position.
pub const RESTRICTED_WEIGHT: f64 = 1.0;

/// Text bundled with the crate: the first book of Cicero's *De finibus bonorum et malorum*.
pub const BUNDLED_TEXT: &str = include_str!("../data/de_finibus_liber_primus.txt");

/// A character stream with its vocabulary. Symbol ids are `0..V`; id `V` is MASK.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    symbols: Vec<char>,
    ids: Vec<u32>,
    block_size: usize,
}

impl Corpus {
    pub fn new(text: &str, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(MdError::Config("block_size must be at least 1".into()));
        }
        let mut symbols: Vec<char> = text.chars().collect();
        symbols.sort_unstable();
        symbols.dedup();
        if symbols.is_empty() {
            return Err(MdError::Config("corpus is empty".into()));
        }
        let ids = text
            .chars()
            .map(|c| symbols.binary_search(&c).expect("symbol in vocabulary") as u32)
            .collect();
        Ok(Self {
            symbols,
            ids,
            block_size,
        })
    }

    pub fn from_file(path: &Path, block_size: usize) -> Result<Self> {
        Self::new(&std::fs::read_to_string(path)?, block_size)
    }

    pub fn bundled(block_size: usize) -> Result<Self> {
        Self::new(BUNDLED_TEXT, block_size)
    }

    /// Number of real symbols V.
    pub fn num_symbols(&self) -> usize {
        self.symbols.len()
    }

    pub fn mask_id(&self) -> u32 {
        self.symbols.len() as u32
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Rows of the embedding: symbols, MASK, then one per position.
    pub fn input_dim(&self) -> usize {
        self.num_symbols() + 1 + self.block_size
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.chars()
            .map(|c| {
                self.symbols
                    .binary_search(&c)
                    .map(|i| i as u32)
                    .map_err(|_| MdError::Config(format!("symbol {c:?} not in vocabulary")))
            })
            .collect()
    }

    /// Decodes ids, writing MASK as `_`.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.symbols.get(i as usize).copied().unwrap_or('_'))
            .collect()
    }

    /// Two-hot columns of a (possibly masked) block.
    pub fn columns(&self, block: &[u32]) -> Result<SparseColumns> {
        if block.len() != self.block_size {
            return Err(MdError::LengthMismatch {
                expected: self.block_size,
                actual: block.len(),
            });
        }
        let pos0 = self.num_symbols() + 1;
        SparseColumns::new(
            self.input_dim(),
            block
                .iter()
                .enumerate()
                .map(|(i, &s)| vec![s as usize, pos0 + i])
                .collect(),
        )
    }

    /// Boundary between the training prefix and the held-out suffix.
    fn split(&self, train_fraction: f64) -> Result<usize> {
        let split = (self.len() as f64 * train_fraction).floor() as usize;
        if split < self.block_size || self.len() - split < self.block_size {
            return Err(MdError::Config(format!(
                "corpus of {} symbols cannot hold a block of {} on both sides of a {train_fraction} split",
                self.len(),
                self.block_size
            )));
        }
        Ok(split)
    }

    fn random_block(&self, lo: usize, hi: usize, rng: &mut Rng) -> Vec<u32> {
        let start = rng.random_range(lo..=hi - self.block_size);
        self.ids[start..start + self.block_size].to_vec()
    }
}

/// A clean block, its masked version and the masking rate that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TextItem {
    pub x0: Vec<u32>,
    pub xt: Vec<u32>,
    pub t: f64,
}

impl TextItem {
    /// Replaces each symbol by MASK independently with probability t.
    pub fn mask(x0: Vec<u32>, t: f64, mask_id: u32, rng: &mut Rng) -> Self {
        let xt = x0
            .iter()
            .map(|&s| if rng.random::<f64>() < t { mask_id } else { s })
            .collect();
        Self { x0, xt, t }
    }
}

/// Transformer sized for a corpus: W ~ N(0, s^2/2) (two active rows per
/// column), vocabulary head ~ N(0, s^2/D), A = 0.
pub fn init_text_model(
    corpus: &Corpus,
    width: usize,
    init_scale: f64,
    rng: &mut Rng,
) -> TransformerParams {
    let w = gaussian_matrix(width, corpus.input_dim(), init_scale / 2f64.sqrt(), rng);
    let head = gaussian_matrix(
        corpus.num_symbols(),
        width,
        init_scale / (width as f64).sqrt(),
        rng,
    );
    let d = corpus.input_dim();
    TransformerParams {
        w,
        a: nalgebra::DMatrix::zeros(d, d),
        head: Head::Vocab(head),
    }
}

/// Batch mean of -(1/t) sum over masked positions of log p(x0 | xt).
///
/// Unmasked positions contribute nothing. When `grads` is given the gradient is added into it.
pub fn restricted_ce_loss(
    params: &TransformerParams,
    corpus: &Corpus,
    batch: &[TextItem],
    mut grads: Option<&mut TransformerParams>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(MdError::Config("empty batch".into()));
    }
    let v = corpus.num_symbols();
    if params.head.out_dim() != v {
        return Err(MdError::DimensionMismatch(format!(
            "head has {} outputs, corpus {} symbols",
            params.head.out_dim(),
            v
        )));
    }
    let mask = corpus.mask_id();
    let inv_b = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for item in batch {
        if item.x0.len() != item.xt.len() {
            return Err(MdError::LengthMismatch {
                expected: item.x0.len(),
                actual: item.xt.len(),
            });
        }
        let mut queries = Vec::new();
        for (i, (&a, &b)) in item.x0.iter().zip(&item.xt).enumerate() {
            if a >= mask || (b != a && b != mask) {
                return Err(MdError::Config(format!(
                    "position {i}: masked block is not derived from the clean block"
                )));
            }
            if b == mask {
                queries.push(i);
            }
        }
        if queries.is_empty() {
            continue;
        }
        if item.t <= 0.0 {
            return Err(MdError::ZeroRateWithMask);
        }
        let cols = corpus.columns(&item.xt)?;
        let fwd = params.forward(&cols, &queries)?;
        let weight = RESTRICTED_WEIGHT / item.t;
        let mut upstream = Vec::with_capacity(queries.len() * v);
        for (qi, &q) in queries.iter().enumerate() {
            let logits = fwd.output(qi);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let lse = max + z.ln();
            let truth = item.x0[q] as usize;
            total += weight * (lse - logits[truth]) * inv_b;
            if grads.is_some() {
                for (c, &l) in logits.iter().enumerate() {
                    let p = (l - lse).exp();
                    upstream.push(weight * inv_b * (p - if c == truth { 1.0 } else { 0.0 }));
                }
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            params.backward(&cols, &fwd, &upstream, g)?;
        }
    }
    Ok(total)
}

/// Settings of one interval-restricted training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextConfig {
    pub block_size: usize,
    /// Hidden width D.
    #[serde(alias = "D")]
    pub width: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub init_scale: f64,
    /// Training rates are clamped below at this value so 1/t stays bounded.
    pub t_min: f64,
    /// Leading fraction of the corpus used for training; the rest is held out.
    pub train_fraction: f64,
    /// Held-out blocks in the full-range test estimate.
    pub eval_blocks: usize,
    pub seed: u64,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            block_size: 64,
            width: 256,
            batch_size: 32,
            steps: 2000,
            lr: 3e-3,
            weight_decay: 0.0,
            init_scale: 1.0,
            t_min: 1e-3,
            train_fraction: 0.9,
            eval_blocks: 2000,
            seed: 0,
        }
    }
}

impl TextConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.block_size >= 1
            && self.width >= 1
            && self.batch_size >= 1
            && self.eval_blocks >= 1
            && self.lr > 0.0
            && self.weight_decay >= 0.0
            && self.init_scale > 0.0
            && self.t_min > 0.0
            && self.t_min <= 1.0
            && self.train_fraction > 0.0
            && self.train_fraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(MdError::Config(format!("invalid text config {self:?}")))
        }
    }
}

/// Trained parameters and the per-step training losses.
#[derive(Debug, Clone)]
pub struct TextRun {
    pub params: TransformerParams,
    pub train_losses: Vec<f64>,
}

/// Trains with AdamW on rates t ~ U[t_lo, t_hi] (clamped below at `t_min`).
///
/// Blocks come from the training prefix. Runs with the same config and seed
/// see the same blocks and initialization whatever the interval.
pub fn train_interval(
    corpus: &Corpus,
    config: &TextConfig,
    t_lo: f64,
    t_hi: f64,
) -> Result<TextRun> {
    config.validate()?;
    if corpus.block_size() != config.block_size {
        return Err(MdError::Config(format!(
            "corpus block size {} vs config {}",
            corpus.block_size(),
            config.block_size
        )));
    }
    if !(0.0 <= t_lo && t_lo <= t_hi && t_hi <= 1.0) {
        return Err(MdError::InvalidSchedule { t0: t_lo, t1: t_hi });
    }
    let split = corpus.split(config.train_fraction)?;
    let mut init_rng = stream_rng(config.seed, Stream::Init);
    let mut params = ModelParams::Transformer(init_text_model(
        corpus,
        config.width,
        config.init_scale,
        &mut init_rng,
    ));
    let mut opt = Optimizer::new(
        OptimizerKind::Adamw,
        config.lr,
        config.weight_decay,
        &params,
    );
    let mut block_rng = stream_rng(config.seed, Stream::Corpus);
    let mut mask_rng = stream_rng(config.seed, Stream::Masks);
    let mut train_losses = Vec::with_capacity(config.steps as usize);
    for step in 1..=config.steps {
        let batch: Vec<TextItem> = (0..config.batch_size)
            .map(|_| {
                let x0 = corpus.random_block(0, split, &mut block_rng);
                let t = (t_lo + (t_hi - t_lo) * mask_rng.random::<f64>()).max(config.t_min);
                TextItem::mask(x0, t, corpus.mask_id(), &mut mask_rng)
            })
            .collect();
        let mut grads = params.zeros_like();
        let (ModelParams::Transformer(p), ModelParams::Transformer(g)) = (&params, &mut grads)
        else {
            unreachable!("text model is a transformer")
        };
        let loss = restricted_ce_loss(p, corpus, &batch, Some(g))?;
        if !loss.is_finite() {
            return Err(MdError::Diverged {
                step,
                detail: format!("training loss {loss}"),
            });
        }
        opt.step(&mut params, &grads);
        if !params.is_finite() {
            return Err(MdError::Diverged {
                step,
                detail: "non-finite parameters".into(),
            });
        }
        train_losses.push(loss);
    }
    let ModelParams::Transformer(params) = params else {
        unreachable!()
    };
    Ok(TextRun {
        params,
        train_losses,
    })
}

/// Per-symbol full-range test loss: the restricted loss with t ~ U[0,1) on
/// held-out blocks, divided by the block size.
///
/// Draws whose mask is empty are rejected and redrawn (both t and the mask),
/// which keeps the 1/t-weighted estimator finite.
pub fn full_range_test_loss(
    params: &TransformerParams,
    corpus: &Corpus,
    trials: usize,
    train_fraction: f64,
    rng: &mut Rng,
) -> Result<Estimate> {
    if trials == 0 {
        return Err(MdError::Config("trials must be at least 1".into()));
    }
    let split = corpus.split(train_fraction)?;
    let per_symbol = 1.0 / corpus.block_size() as f64;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..trials {
        let x0 = corpus.random_block(split, corpus.len(), rng);
        let item = loop {
            let t: f64 = rng.random();
            let item = TextItem::mask(x0.clone(), t, corpus.mask_id(), rng);
            if item.xt.contains(&corpus.mask_id()) {
                break item;
            }
        };
        let l = restricted_ce_loss(params, corpus, std::slice::from_ref(&item), None)? * per_symbol;
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

/// Final full-range test loss of the model trained on [t_lo, t_hi].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub t_lo: f64,
    pub t_hi: f64,
    pub final_test_loss: f64,
    pub std_error: f64,
    pub error: Option<String>,
}

/// Ten width-0.1 intervals in order, then the U[0,1] baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSweepReport {
    pub config: TextConfig,
    pub rows: Vec<IntervalRow>,
}

/// The ten bins tiling [0,1].
pub fn sweep_intervals() -> Vec<(f64, f64)> {
    (0..10)
        .map(|i| (i as f64 / 10.0, (i + 1) as f64 / 10.0))
        .collect()
}

/// Comparison of the best mid-range interval with the boundary intervals and the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UShape {
    pub best_mid_t_lo: f64,
    pub best_mid_t_hi: f64,
    pub best_mid_loss: f64,
    pub left_loss: f64,
    pub right_loss: f64,
    pub baseline_loss: f64,
    /// 1 - best_mid / left.
    pub left_margin: f64,
    /// 1 - best_mid / right.
    pub right_margin: f64,
}

impl UShape {
    /// Both boundary bins lose to the best mid bin by `margin` and to the baseline.
    pub fn holds(&self, margin: f64) -> bool {
        self.left_margin >= margin
            && self.right_margin >= margin
            && self.left_loss > self.baseline_loss
            && self.right_loss > self.baseline_loss
    }
}

impl IntervalSweepReport {
    pub fn baseline(&self) -> &IntervalRow {
        self.rows.last().expect("report has a baseline row")
    }

    pub fn intervals(&self) -> &[IntervalRow] {
        &self.rows[..self.rows.len() - 1]
    }

    /// Mid-range bins are those inside [0.3, 0.7].
    pub fn u_shape(&self) -> UShape {
        let iv = self.intervals();
        let best = iv
            .iter()
            .filter(|r| r.t_lo >= 0.3 - 1e-12 && r.t_hi <= 0.7 + 1e-12)
            .min_by(|a, b| a.final_test_loss.total_cmp(&b.final_test_loss))
            .expect("mid-range bins present");
        let left = iv[0].final_test_loss;
        let right = iv[iv.len() - 1].final_test_loss;
        UShape {
            best_mid_t_lo: best.t_lo,
            best_mid_t_hi: best.t_hi,
            best_mid_loss: best.final_test_loss,
            left_loss: left,
            right_loss: right,
            baseline_loss: self.baseline().final_test_loss,
            left_margin: 1.0 - best.final_test_loss / left,
            right_margin: 1.0 - best.final_test_loss / right,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_lo", "t_hi", "final_test_loss"])?;
        for r in &self.rows {
            w.write_record([
                csv_float(r.t_lo),
                csv_float(r.t_hi),
                csv_float(r.final_test_loss),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains one model per width-0.1 bin plus a U[0,1] baseline, all from the
/// same seed, and scores each with the same held-out draws. Runs share
/// nothing and execute on up to `workers` threads.
pub fn interval_sweep(
    corpus: &Corpus,
    config: &TextConfig,
    workers: usize,
) -> Result<IntervalSweepReport> {
    config.validate()?;
    corpus.split(config.train_fraction)?;
    let mut jobs = sweep_intervals();
    jobs.push((0.0, 1.0));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| MdError::Config(format!("worker pool: {e}")))?;
    let rows = pool.install(|| {
        jobs.par_iter()
            .map(|&(t_lo, t_hi)| {
                let scored = train_interval(corpus, config, t_lo, t_hi).and_then(|run| {
                    let mut rng = stream_rng(config.seed, Stream::Eval);
                    full_range_test_loss(
                        &run.params,
                        corpus,
                        config.eval_blocks,
                        config.train_fraction,
                        &mut rng,
                    )
                });
                match scored {
                    Ok(e) => IntervalRow {
                        t_lo,
                        t_hi,
                        final_test_loss: e.mean,
                        std_error: e.std_error,
                        error: None,
                    },
                    Err(e) => IntervalRow {
                        t_lo,
                        t_hi,
                        final_test_loss: f64::NAN,
                        std_error: f64::NAN,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });
    Ok(IntervalSweepReport {
        config: config.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_corpus() -> Corpus {
        Corpus::new(&BUNDLED_TEXT[..4000], 16).unwrap()
    }

    fn uniform_model(corpus: &Corpus) -> TransformerParams {
        let mut rng = stream_rng(0, Stream::Init);
        let mut p = init_text_model(corpus, 8, 1.0, &mut rng);
        if let Head::Vocab(h) = &mut p.head {
            h.fill(0.0);
        }
        p
    }

    #[test]
    fn vocabulary_and_mask() {
        let c = Corpus::new("abca", 2).unwrap();
        assert_eq!(c.symbols(), &['a', 'b', 'c']);
        assert_eq!(c.ids(), &[0, 1, 2, 0]);
        assert_eq!(c.mask_id(), 3);
        assert!(!c.ids().contains(&c.mask_id()));
        assert_eq!(c.decode(&[1, 3]), "b_");
        assert!(c.encode("z").is_err());
        assert!(Corpus::new("", 4).is_err());
        let cols = c.columns(&[3, 0]).unwrap();
        assert_eq!(cols.column(0), &[3, 4]);
        assert_eq!(cols.column(1), &[0, 5]);
    }

    #[test]
    fn masking_uses_mask_id() {
        let c = small_corpus();
        let mut rng = stream_rng(1, Stream::Masks);
        let item = TextItem::mask(c.ids()[..16].to_vec(), 1.0, c.mask_id(), &mut rng);
        assert!(item.xt.iter().all(|&s| s == c.mask_id()));
        let none = TextItem::mask(c.ids()[..16].to_vec(), 0.0, c.mask_id(), &mut rng);
        assert_eq!(none.xt, none.x0);
    }

    #[test]
    fn uniform_logits_closed_form() {
        let c = small_corpus();
        let p = uniform_model(&c);
        let mut rng = stream_rng(2, Stream::Masks);
        let items: Vec<TextItem> = (0..3)
            .map(|i| {
                TextItem::mask(
                    c.ids()[i * 16..(i + 1) * 16].to_vec(),
                    0.4,
                    c.mask_id(),
                    &mut rng,
                )
            })
            .collect();
        let masked: usize = items
            .iter()
            .map(|it| it.xt.iter().filter(|&&s| s == c.mask_id()).count())
            .sum();
        let expect = masked as f64 / 0.4 * (c.num_symbols() as f64).ln() / 3.0;
        let got = restricted_ce_loss(&p, &c, &items, None).unwrap();
        assert!((got - expect).abs() < 1e-10 * expect, "{got} vs {expect}");
    }

    #[test]
    fn confident_truth_gives_zero_loss() {
        // A one-symbol corpus and a head that pushes that symbol's logit far up.
        let c = Corpus::new("aaaaaaaab", 4).unwrap();
        let mut p = uniform_model(&c);
        p.w.fill(1.0);
        if let Head::Vocab(h) = &mut p.head {
            h.row_mut(0).fill(100.0);
        }
        let item = TextItem {
            x0: vec![0; 4],
            xt: vec![c.mask_id(), 0, c.mask_id(), 0],
            t: 0.5,
        };
        assert!(restricted_ce_loss(&p, &c, &[item], None).unwrap() < 1e-12);
    }

    #[test]
    fn unmasked_positions_contribute_nothing() {
        let c = small_corpus();
        let p = {
            let mut rng = stream_rng(3, Stream::Init);
            init_text_model(&c, 8, 1.0, &mut rng)
        };
        let x0 = c.ids()[..16].to_vec();
        let clean = TextItem {
            x0: x0.clone(),
            xt: x0.clone(),
            t: 0.3,
        };
        assert_eq!(restricted_ce_loss(&p, &c, &[clean], None).unwrap(), 0.0);
        let mut g = p.zeros_like();
        let clean = TextItem {
            x0: x0.clone(),
            xt: x0,
            t: 0.0,
        };
        assert_eq!(
            restricted_ce_loss(&p, &c, &[clean], Some(&mut g)).unwrap(),
            0.0
        );
        assert_eq!(g, p.zeros_like());
    }

    #[test]
    fn zero_rate_with_mask_is_an_error() {
        let c = small_corpus();
        let p = uniform_model(&c);
        let x0 = c.ids()[..16].to_vec();
        let mut xt = x0.clone();
        xt[3] = c.mask_id();
        let r = restricted_ce_loss(&p, &c, &[TextItem { x0, xt, t: 0.0 }], None);
        assert!(matches!(r, Err(MdError::ZeroRateWithMask)));
    }

    #[test]
    fn inconsistent_blocks_rejected() {
        let c = small_corpus();
        let p = uniform_model(&c);
        let x0 = c.ids()[..16].to_vec();
        let mut xt = x0.clone();
        xt[0] = (x0[0] + 1) % c.mask_id();
        assert!(restricted_ce_loss(&p, &c, &[TextItem { x0, xt, t: 0.5 }], None).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c = small_corpus();
        let mut rng = stream_rng(4, Stream::Init);
        let mut p = init_text_model(&c, 6, 1.0, &mut rng);
        p.a = gaussian_matrix(c.input_dim(), c.input_dim(), 0.3, &mut rng);
        let items: Vec<TextItem> = (0..2)
            .map(|i| {
                TextItem::mask(
                    c.ids()[i * 16..(i + 1) * 16].to_vec(),
                    0.5,
                    c.mask_id(),
                    &mut rng,
                )
            })
            .collect();
        let mut g = p.zeros_like();
        restricted_ce_loss(&p, &c, &items, Some(&mut g)).unwrap();
        let h = 1e-6;
        let probe = |p: &TransformerParams| restricted_ce_loss(p, &c, &items, None).unwrap();
        for tensor in 0..3 {
            let len = p.tensors()[tensor].len();
            for idx in [0, len / 3, len / 2, len - 1] {
                let mut plus = p.clone();
                plus.tensors_mut()[tensor][idx] += h;
                let mut minus = p.clone();
                minus.tensors_mut()[tensor][idx] -= h;
                let fd = (probe(&plus) - probe(&minus)) / (2.0 * h);
                let an = g.tensors()[tensor][idx];
                assert!(
                    (fd - an).abs() <= 1e-5 * (1.0 + an.abs()),
                    "tensor {tensor} idx {idx}: {an} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn test_loss_is_shared_across_models_and_positive() {
        let c = small_corpus();
        let p = uniform_model(&c);
        let a = full_range_test_loss(&p, &c, 50, 0.9, &mut stream_rng(5, Stream::Eval)).unwrap();
        let b = full_range_test_loss(&p, &c, 50, 0.9, &mut stream_rng(5, Stream::Eval)).unwrap();
        assert_eq!(a, b);
        assert!(a.mean > 0.0 && a.std_error > 0.0);
        assert!(full_range_test_loss(&p, &c, 0, 0.9, &mut stream_rng(5, Stream::Eval)).is_err());
    }

    #[test]
    fn training_lowers_loss_early() {
        let c = small_corpus();
        let config = TextConfig {
            block_size: 16,
            width: 16,
            batch_size: 8,
            steps: 60,
            lr: 1e-2,
            ..TextConfig::default()
        };
        let run = train_interval(&c, &config, 0.3, 0.6).unwrap();
        let head: f64 = run.train_losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = run.train_losses[50..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn intervals_tile_unit_range() {
        let iv = sweep_intervals();
        assert_eq!(iv.len(), 10);
        assert_eq!(iv[0].0, 0.0);
        assert_eq!(iv[9].1, 1.0);
        for w in iv.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
    }

    #[test]
    fn tiny_sweep_has_eleven_rows_and_is_reproducible() {
        let c = small_corpus();
        let config = TextConfig {
            block_size: 16,
            width: 8,
            batch_size: 2,
            steps: 3,
            eval_blocks: 5,
            ..TextConfig::default()
        };
        let a = interval_sweep(&c, &config, 1).unwrap();
        assert_eq!(a.rows.len(), 11);
        assert!(a.rows.iter().all(|r| r.error.is_none()));
        assert_eq!(a.baseline().t_lo, 0.0);
        assert_eq!(a.baseline().t_hi, 1.0);
        let b = interval_sweep(&c, &config, 2).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 12);
    }
}
