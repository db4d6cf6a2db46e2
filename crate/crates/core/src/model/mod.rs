//! Token embeddings, the reduced two-layer MLP, the one-layer transformer and
//! their analytic gradients, plus parameter checkpoints.

mod checkpoint;
mod mlp;
mod transformer;

pub use checkpoint::{
    from_bytes, from_json, load_checkpoint, save_checkpoint, to_bytes, to_json, CheckpointFormat,
    CheckpointHeader,
};
pub use mlp::{MlpForward, MlpParams};
pub use transformer::{Head, SparseColumns, TransformerForward, TransformerParams};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MdError, Result};
use crate::masking::CorruptedSequence;
use crate::rng::Rng;

/// One-hot embedding layout for sequences over {-1, 0, +1}.
///
/// Row `index_of(b, j) = n' (b + 1) + (j - 1)`: the three value blocks are
/// contiguous and each holds one row per position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    n_prime: usize,
}

impl EmbeddingSpec {
    pub fn new(n_prime: usize) -> Self {
        Self { n_prime }
    }

    pub fn n_prime(&self) -> usize {
        self.n_prime
    }

    pub fn d(&self) -> usize {
        3 * self.n_prime
    }

    pub fn index_of(&self, b: i8, j: usize) -> Result<usize> {
        if !(-1..=1).contains(&b) {
            return Err(MdError::InvalidToken {
                position: j,
                value: b,
            });
        }
        if j == 0 || j > self.n_prime {
            return Err(MdError::IndexOutOfRange {
                index: j,
                len: self.n_prime,
            });
        }
        Ok(self.n_prime * (b + 1) as usize + (j - 1))
    }

    /// Active embedding row of every position, in position order.
    pub fn active_rows(&self, x: &CorruptedSequence) -> Result<Vec<usize>> {
        if x.len() != self.n_prime {
            return Err(MdError::LengthMismatch {
                expected: self.n_prime,
                actual: x.len(),
            });
        }
        x.values()
            .iter()
            .enumerate()
            .map(|(i, &b)| self.index_of(b, i + 1))
            .collect()
    }
}

/// d x n' matrix whose column j is the one-hot embedding of token j.
pub fn embed_sequence(x: &CorruptedSequence, spec: &EmbeddingSpec) -> Result<DMatrix<f64>> {
    let rows = spec.active_rows(x)?;
    let mut m = DMatrix::zeros(spec.d(), spec.n_prime());
    for (j, r) in rows.into_iter().enumerate() {
        m[(r, j)] = 1.0;
    }
    Ok(m)
}

/// Sum of the per-position one-hot embeddings, stored by its active rows.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AggregatedInput {
    d: usize,
    active: Vec<usize>,
}

impl AggregatedInput {
    pub fn from_active(d: usize, active: Vec<usize>) -> Result<Self> {
        if let Some(&r) = active.iter().find(|&&r| r >= d) {
            return Err(MdError::IndexOutOfRange { index: r, len: d });
        }
        Ok(Self { d, active })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn to_dense(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.d);
        for &r in &self.active {
            z[r] += 1.0;
        }
        z
    }
}

pub fn aggregate(x: &CorruptedSequence, spec: &EmbeddingSpec) -> Result<AggregatedInput> {
    AggregatedInput::from_active(spec.d(), spec.active_rows(x)?)
}

#[inline]
pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// ReLU derivative with the convention ReLU'(0) = 0.
#[inline]
pub(crate) fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub(crate) fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> DMatrix<f64> {
    // Filled row-major so a given seed produces the same matrix regardless of storage order.
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let g: f64 = StandardNormal.sample(rng);
            m[(r, c)] = std * g;
        }
    }
    m
}

pub(crate) fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(MdError::DimensionMismatch(format!(
            "{name} has non-finite entries"
        )))
    }
}

/// Parameters of either architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Mlp(MlpParams),
    Transformer(TransformerParams),
}

impl ModelParams {
    pub fn arch(&self) -> Arch {
        match self {
            ModelParams::Mlp(_) => Arch::Mlp,
            ModelParams::Transformer(_) => Arch::Transformer,
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            ModelParams::Mlp(p) => ModelParams::Mlp(p.zeros_like()),
            ModelParams::Transformer(p) => ModelParams::Transformer(p.zeros_like()),
        }
    }

    /// Parameter tensors in a fixed order, each as a flat slice.
    pub fn tensors(&self) -> Vec<&[f64]> {
        match self {
            ModelParams::Mlp(p) => p.tensors(),
            ModelParams::Transformer(p) => p.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            ModelParams::Mlp(p) => p.tensors_mut(),
            ModelParams::Transformer(p) => p.tensors_mut(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Model output at 1-based position `j` of a corrupted parity sequence.
    ///
    /// The MLP output does not depend on the position.
    pub fn parity_outputs(
        &self,
        x: &CorruptedSequence,
        spec: &EmbeddingSpec,
        positions: &[usize],
    ) -> Result<Vec<f64>> {
        match self {
            ModelParams::Mlp(p) => {
                let f = p.forward(&aggregate(x, spec)?)?.output;
                Ok(vec![f; positions.len()])
            }
            ModelParams::Transformer(p) => {
                let cols = SparseColumns::from_corrupted(x, spec)?;
                let queries: Vec<usize> = positions.iter().map(|&j| j - 1).collect();
                Ok(p.forward(&cols, &queries)?.scalar_outputs())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Mlp,
    Transformer,
}

impl std::str::FromStr for Arch {
    type Err = MdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Arch::Mlp),
            "transformer" => Ok(Arch::Transformer),
            other => Err(MdError::Config(format!("unknown arch '{other}'"))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Mlp => "mlp",
            Arch::Transformer => "transformer",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng as _;

    fn random_corrupted(n_prime: usize, rng: &mut Rng) -> CorruptedSequence {
        CorruptedSequence::new((0..n_prime).map(|_| rng.random_range(-1i8..=1)).collect()).unwrap()
    }

    #[test]
    fn index_map_is_a_bijection() {
        let spec = EmbeddingSpec::new(5);
        let mut seen = vec![false; spec.d()];
        for b in -1..=1 {
            for j in 1..=5 {
                let r = spec.index_of(b, j).unwrap();
                assert!(!seen[r]);
                seen[r] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert!(spec.index_of(2, 1).is_err());
        assert!(spec.index_of(0, 6).is_err());
    }

    #[test]
    fn all_mask_embedding_uses_zero_block() {
        let spec = EmbeddingSpec::new(2);
        let x = CorruptedSequence::new(vec![0, 0]).unwrap();
        let e = embed_sequence(&x, &spec).unwrap();
        assert_eq!(e[(2, 0)], 1.0);
        assert_eq!(e[(3, 1)], 1.0);
        assert_eq!(e.sum(), 2.0);
    }

    #[test]
    fn embedding_columns_are_one_hot() {
        let mut rng = stream_rng(1, Stream::Custom(0));
        let spec = EmbeddingSpec::new(6);
        for _ in 0..50 {
            let e = embed_sequence(&random_corrupted(6, &mut rng), &spec).unwrap();
            for c in e.column_iter() {
                assert_eq!(c.sum(), 1.0);
            }
        }
    }

    #[test]
    fn aggregate_is_embedding_times_ones() {
        let mut rng = stream_rng(2, Stream::Custom(0));
        let spec = EmbeddingSpec::new(7);
        for _ in 0..100 {
            let x = random_corrupted(7, &mut rng);
            let z = aggregate(&x, &spec).unwrap().to_dense();
            let oracle = embed_sequence(&x, &spec).unwrap() * DVector::from_element(7, 1.0);
            assert_eq!(z, oracle);
            assert_eq!(z.sum(), 7.0);
        }
    }

    #[test]
    fn single_position_change_moves_two_coordinates() {
        let spec = EmbeddingSpec::new(4);
        let a = aggregate(&CorruptedSequence::new(vec![1, -1, 0, 1]).unwrap(), &spec)
            .unwrap()
            .to_dense();
        let b = aggregate(&CorruptedSequence::new(vec![1, 1, 0, 1]).unwrap(), &spec)
            .unwrap()
            .to_dense();
        assert_eq!((a - b).iter().filter(|x| **x != 0.0).count(), 2);
    }
}
