//! (n, k) parity instances, full sequences and datasets.
//!
//! Indices are 1-based throughout the public API, matching how positions are
//! written in the task definition and in serialized datasets. Bits are `i8`
//! values in {-1, +1}.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{MdError, Result};
use crate::rng::{stream_rng, Rng, Stream};

/// An (n, k) parity task with an explicit secret set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    n: usize,
    secret: Vec<usize>,
}

impl TaskSpec {
    pub fn new(n: usize, mut secret: Vec<usize>) -> Result<Self> {
        let k = secret.len();
        if k == 0 || k > n {
            return Err(MdError::InvalidTask(format!(
                "need 1 <= k <= n, got n={n}, k={k}"
            )));
        }
        for &s in &secret {
            if s == 0 || s > n {
                return Err(MdError::IndexOutOfRange { index: s, len: n });
            }
        }
        secret.sort_unstable();
        if secret.windows(2).any(|w| w[0] == w[1]) {
            return Err(MdError::InvalidTask(
                "secret indices must be distinct".into(),
            ));
        }
        Ok(Self { n, secret })
    }

    /// Secret set drawn uniformly from the k-subsets of [1..n].
    pub fn random(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > n {
            return Err(MdError::InvalidTask(format!(
                "need 1 <= k <= n, got n={n}, k={k}"
            )));
        }
        let mut rng = stream_rng(seed, Stream::Secret);
        let secret = sample_indices(&mut rng, n, k)
            .into_iter()
            .map(|i| i + 1)
            .collect();
        Self::new(n, secret)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.secret.len()
    }

    /// Sequence length n' = n + 1.
    pub fn n_prime(&self) -> usize {
        self.n + 1
    }

    pub fn secret(&self) -> &[usize] {
        &self.secret
    }

    /// Secret set plus the parity position n + 1.
    pub fn extended_secret(&self) -> Vec<usize> {
        let mut s = self.secret.clone();
        s.push(self.n + 1);
        s
    }

    pub fn in_extended_secret(&self, j: usize) -> bool {
        j == self.n + 1 || self.secret.binary_search(&j).is_ok()
    }
}

/// Product of `x` over the (1-based) `secret` indices.
pub fn parity_label(x: &[i8], secret: &[usize]) -> Result<i8> {
    for (i, &b) in x.iter().enumerate() {
        if b != 1 && b != -1 {
            return Err(MdError::InvalidToken {
                position: i + 1,
                value: b,
            });
        }
    }
    let mut y = 1i8;
    for &s in secret {
        if s == 0 || s > x.len() {
            return Err(MdError::IndexOutOfRange {
                index: s,
                len: x.len(),
            });
        }
        y *= x[s - 1];
    }
    Ok(y)
}

/// Input bits followed by their parity label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FullSequence {
    bits: Vec<i8>,
}

impl FullSequence {
    pub fn bits(&self) -> &[i8] {
        &self.bits
    }

    pub fn inputs(&self) -> &[i8] {
        &self.bits[..self.bits.len() - 1]
    }

    pub fn label(&self) -> i8 {
        self.bits[self.bits.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Bit at 1-based position `j`.
    pub fn get(&self, j: usize) -> i8 {
        self.bits[j - 1]
    }
}

pub fn make_full_sequence(x: &[i8], spec: &TaskSpec) -> Result<FullSequence> {
    if x.len() != spec.n() {
        return Err(MdError::LengthMismatch {
            expected: spec.n(),
            actual: x.len(),
        });
    }
    let y = parity_label(x, spec.secret())?;
    let mut bits = Vec::with_capacity(x.len() + 1);
    bits.extend_from_slice(x);
    bits.push(y);
    Ok(FullSequence { bits })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub samples: Vec<FullSequence>,
    pub seed: u64,
}

fn random_input(n: usize, rng: &mut Rng) -> Vec<i8> {
    (0..n)
        .map(|_| if rng.random::<bool>() { 1 } else { -1 })
        .collect()
}

/// `count` i.i.d. uniform inputs from the training-data stream of `seed`.
pub fn sample_dataset(spec: &TaskSpec, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(MdError::Config("dataset size must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, Stream::TrainData);
    let samples = (0..count)
        .map(|_| make_full_sequence(&random_input(spec.n(), &mut rng), spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        spec: spec.clone(),
        samples,
        seed,
    })
}

/// `count` i.i.d. samples uniform over the inputs that do not occur in `exclude`.
///
/// Used for validation sets when n is small enough that an i.i.d. draw would
/// mostly repeat training inputs.
pub fn sample_heldout(
    spec: &TaskSpec,
    count: usize,
    seed: u64,
    exclude: &Dataset,
) -> Result<Dataset> {
    if count == 0 {
        return Err(MdError::Config("dataset size must be at least 1".into()));
    }
    let seen: HashSet<&[i8]> = exclude.samples.iter().map(|s| s.inputs()).collect();
    if spec.n() < 63 && seen.len() as u64 >= 1u64 << spec.n() {
        return Err(MdError::Config(
            "training set covers every input; nothing held out".into(),
        ));
    }
    let mut rng = stream_rng(seed, Stream::ValData);
    let mut samples = Vec::with_capacity(count);
    while samples.len() < count {
        let x = random_input(spec.n(), &mut rng);
        if !seen.contains(x.as_slice()) {
            samples.push(make_full_sequence(&x, spec)?);
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        samples,
        seed,
    })
}

impl Dataset {
    /// Every input in {-1, 1}^n exactly once, in binary counting order.
    ///
    /// Its empirical distribution is exactly the uniform input distribution,
    /// which is what makes population identities hold to machine precision.
    pub fn complete(spec: &TaskSpec) -> Result<Self> {
        if spec.n() > 20 {
            return Err(MdError::EnumerationInfeasible {
                n_prime: spec.n_prime(),
                max: 21,
            });
        }
        let samples = (0..1u32 << spec.n())
            .map(|code| {
                let x: Vec<i8> = (0..spec.n())
                    .map(|i| if code >> i & 1 == 1 { -1 } else { 1 })
                    .collect();
                make_full_sequence(&x, spec)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            samples,
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&DatasetFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk layout: `{n, k, secret, seed, samples}` with full sequences as rows.
#[derive(Serialize, Deserialize)]
struct DatasetFile {
    n: usize,
    k: usize,
    secret: Vec<usize>,
    seed: u64,
    samples: Vec<Vec<i8>>,
}

impl From<&Dataset> for DatasetFile {
    fn from(d: &Dataset) -> Self {
        Self {
            n: d.spec.n(),
            k: d.spec.k(),
            secret: d.spec.secret().to_vec(),
            seed: d.seed,
            samples: d.samples.iter().map(|s| s.bits().to_vec()).collect(),
        }
    }
}

impl TryFrom<DatasetFile> for Dataset {
    type Error = MdError;

    fn try_from(f: DatasetFile) -> Result<Self> {
        let spec = TaskSpec::new(f.n, f.secret)?;
        if spec.k() != f.k {
            return Err(MdError::InvalidTask(format!(
                "k = {} but secret has {} entries",
                f.k,
                spec.k()
            )));
        }
        let samples = f
            .samples
            .into_iter()
            .map(|row| {
                if row.len() != spec.n_prime() {
                    return Err(MdError::LengthMismatch {
                        expected: spec.n_prime(),
                        actual: row.len(),
                    });
                }
                let seq = make_full_sequence(&row[..spec.n()], &spec)?;
                if seq.label() != row[spec.n()] {
                    return Err(MdError::InvalidTask(
                        "stored parity bit disagrees with inputs".into(),
                    ));
                }
                Ok(seq)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            samples,
            seed: f.seed,
        })
    }
}
