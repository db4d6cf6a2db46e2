//! Stochastic masking: rate schedules, Bernoulli masks, corruption, and the
//! Signal/Noise classification of mask configurations.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{MdError, Result};
use crate::parity::{FullSequence, TaskSpec};
use crate::rng::Rng;

/// Largest sequence length for which masks are enumerated exhaustively.
pub const MAX_ENUMERABLE: usize = 16;

/// Uniform masking-rate distribution U[t0, t1]. `t0 == t1` is a point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    t0: f64,
    t1: f64,
}

impl Schedule {
    pub fn new(t0: f64, t1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t0) || !(0.0..=1.0).contains(&t1) || t0 > t1 {
            return Err(MdError::InvalidSchedule { t0, t1 });
        }
        Ok(Self { t0, t1 })
    }

    pub fn point(t: f64) -> Result<Self> {
        Self::new(t, t)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn is_point(&self) -> bool {
        self.t0 == self.t1
    }

    pub fn width(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn mean(&self) -> f64 {
        0.5 * (self.t0 + self.t1)
    }

    pub fn sample_rate(&self, rng: &mut Rng) -> f64 {
        if self.is_point() {
            self.t0
        } else {
            self.t0 + (self.t1 - self.t0) * rng.random::<f64>()
        }
    }

    /// Exact E[t^a (1-t)^b] for t ~ U[t0, t1].
    ///
    /// The antiderivative of s^a (1-s)^b is B(a+1, b+1) * P(Bin(a+b+1, s) > a),
    /// a sum of nonnegative terms, so no alternating-sign cancellation occurs.
    pub fn expect_monomial(&self, a: u32, b: u32) -> f64 {
        if self.is_point() {
            let t = self.t0;
            return t.powi(a as i32) * (1.0 - t).powi(b as i32);
        }
        let n = a + b + 1;
        let beta = 1.0 / (n as f64 * binomial(n - 1, a));
        let upper = |t: f64| {
            (a + 1..=n)
                .map(|j| binomial(n, j) * t.powi(j as i32) * (1.0 - t).powi((n - j) as i32))
                .sum::<f64>()
        };
        beta * (upper(self.t1) - upper(self.t0)) / self.width()
    }
}

pub(crate) fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Bernoulli mask over positions 1..=n'. `true` means masked.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskVector {
    m: Vec<bool>,
}

impl MaskVector {
    pub fn from_bools(m: Vec<bool>) -> Self {
        Self { m }
    }

    /// Mask hiding exactly the given 1-based positions.
    pub fn from_masked_set(n_prime: usize, masked: &[usize]) -> Result<Self> {
        let mut m = vec![false; n_prime];
        for &j in masked {
            if j == 0 || j > n_prime {
                return Err(MdError::IndexOutOfRange {
                    index: j,
                    len: n_prime,
                });
            }
            m[j - 1] = true;
        }
        Ok(Self { m })
    }

    /// Mask hiding only the last position (the parity bit).
    pub fn eval(n_prime: usize) -> Self {
        let mut m = vec![false; n_prime];
        m[n_prime - 1] = true;
        Self { m }
    }

    /// Mask number `code` in binary order: bit `j-1` set means position j masked.
    pub fn from_code(n_prime: usize, code: u32) -> Self {
        Self {
            m: (0..n_prime).map(|i| code >> i & 1 == 1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn as_bools(&self) -> &[bool] {
        &self.m
    }

    /// 1-based masked positions, ascending.
    pub fn masked_set(&self) -> Vec<usize> {
        self.m
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn count(&self) -> usize {
        self.m.iter().filter(|&&b| b).count()
    }

    pub fn is_masked(&self, j: usize) -> bool {
        self.m[j - 1]
    }
}

pub fn sample_mask(t: f64, n_prime: usize, rng: &mut Rng) -> MaskVector {
    MaskVector {
        m: (0..n_prime).map(|_| rng.random::<f64>() < t).collect(),
    }
}

/// All 2^n' masks in binary order.
pub fn enumerate_masks(n_prime: usize) -> Result<impl Iterator<Item = MaskVector>> {
    if n_prime > MAX_ENUMERABLE {
        return Err(MdError::EnumerationInfeasible {
            n_prime,
            max: MAX_ENUMERABLE,
        });
    }
    Ok((0..1u32 << n_prime).map(move |code| MaskVector::from_code(n_prime, code)))
}

/// Sequence over {-1, 0, +1} where 0 is the mask token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CorruptedSequence {
    values: Vec<i8>,
}

impl CorruptedSequence {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if let Some((i, &v)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| !(-1..=1).contains(&v))
        {
            return Err(MdError::InvalidToken {
                position: i + 1,
                value: v,
            });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// x' with masked positions zeroed.
pub fn corrupt(x: &FullSequence, m: &MaskVector) -> Result<CorruptedSequence> {
    if x.len() != m.len() {
        return Err(MdError::LengthMismatch {
            expected: x.len(),
            actual: m.len(),
        });
    }
    let values = x
        .bits()
        .iter()
        .zip(m.as_bools())
        .map(|(&b, &hidden)| if hidden { 0 } else { b })
        .collect();
    Ok(CorruptedSequence { values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Signal,
    Noise,
}

/// Signal iff exactly one position of the extended secret set is masked.
pub fn classify_regime(m: &MaskVector, spec: &TaskSpec) -> Regime {
    let hits = spec
        .extended_secret()
        .into_iter()
        .filter(|&j| j <= m.len() && m.is_masked(j))
        .count();
    if hits == 1 {
        Regime::Signal
    } else {
        Regime::Noise
    }
}

/// The unique masked secret position of a Signal mask.
pub fn signal_position(m: &MaskVector, spec: &TaskSpec) -> Option<usize> {
    let mut hits = spec
        .extended_secret()
        .into_iter()
        .filter(|&j| m.is_masked(j));
    match (hits.next(), hits.next()) {
        (Some(j), None) => Some(j),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSplit {
    pub signal: f64,
    pub noise: f64,
}

/// P_S = (k+1) E[t (1-t)^k] under the schedule, with P_N = 1 - P_S.
pub fn signal_probability(schedule: &Schedule, k: usize) -> SignalSplit {
    let kf = k as f64;
    let expectation = if schedule.is_point() {
        let t = schedule.t0();
        t * (1.0 - t).powi(k as i32)
    } else {
        // u = 1 - t; the antiderivative of u^k (1 - u) is u^(k+1)/(k+1) - u^(k+2)/(k+2).
        let g = |u: f64| u.powi(k as i32 + 1) / (kf + 1.0) - u.powi(k as i32 + 2) / (kf + 2.0);
        (g(1.0 - schedule.t0()) - g(1.0 - schedule.t1())) / schedule.width()
    };
    let signal = (kf + 1.0) * expectation;
    SignalSplit {
        signal,
        noise: 1.0 - signal,
    }
}

/// Monte-Carlo fraction of (t, m) draws that land in the Signal regime.
pub fn empirical_signal_probability(
    schedule: &Schedule,
    spec: &TaskSpec,
    trials: usize,
    rng: &mut Rng,
) -> f64 {
    let hits = (0..trials)
        .filter(|_| {
            let t = schedule.sample_rate(rng);
            classify_regime(&sample_mask(t, spec.n_prime(), rng), spec) == Regime::Signal
        })
        .count();
    hits as f64 / trials as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parity::make_full_sequence;
    use crate::rng::{stream_rng, Stream};

    fn rng(seed: u64) -> Rng {
        stream_rng(seed, Stream::Custom(0))
    }

    fn spec42() -> TaskSpec {
        TaskSpec::new(4, vec![1, 3]).unwrap()
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::new(0.5, 0.4).is_err());
        assert!(Schedule::new(-0.1, 0.4).is_err());
        assert!(Schedule::new(0.0, 1.1).is_err());
        assert!(Schedule::point(0.3).unwrap().is_point());
    }

    #[test]
    fn rate_sampling() {
        let mut r = rng(1);
        let p = Schedule::point(0.3).unwrap();
        assert!((0..100).all(|_| p.sample_rate(&mut r) == 0.3));
        let u = Schedule::new(0.0, 1.0).unwrap();
        let mean = (0..100_000).map(|_| u.sample_rate(&mut r)).sum::<f64>() / 1e5;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
        let s = Schedule::new(0.0, 0.2).unwrap();
        assert!((0..10_000)
            .map(|_| s.sample_rate(&mut r))
            .all(|t| (0.0..=0.2).contains(&t)));
    }

    #[test]
    fn mask_sampling() {
        let mut r = rng(2);
        assert_eq!(sample_mask(0.0, 9, &mut r).count(), 0);
        assert_eq!(sample_mask(1.0, 9, &mut r).count(), 9);
        let total: usize = (0..100_000)
            .map(|_| sample_mask(0.5, 21, &mut r).count())
            .sum();
        let mean = total as f64 / 1e5;
        assert!((mean - 10.5).abs() < 0.1, "{mean}");
    }

    #[test]
    fn corruption() {
        let x = make_full_sequence(&[1, -1, 1, 1], &spec42()).unwrap();
        assert_eq!(
            corrupt(&x, &MaskVector::from_code(5, 0)).unwrap().values(),
            x.bits()
        );
        assert_eq!(
            corrupt(&x, &MaskVector::from_code(5, 31)).unwrap().values(),
            &[0; 5]
        );
        let m = MaskVector::from_masked_set(5, &[3]).unwrap();
        assert_eq!(corrupt(&x, &m).unwrap().values(), &[1, -1, 0, 1, 1]);
        assert!(corrupt(&x, &MaskVector::from_code(4, 0)).is_err());
    }

    #[test]
    fn regimes_of_the_three_illustrated_masks() {
        let s = spec42();
        let m = |set: &[usize]| MaskVector::from_masked_set(5, set).unwrap();
        assert_eq!(classify_regime(&m(&[3]), &s), Regime::Signal);
        assert_eq!(classify_regime(&m(&[1, 3]), &s), Regime::Noise);
        assert_eq!(classify_regime(&m(&[2]), &s), Regime::Noise);
        assert_eq!(classify_regime(&m(&[]), &s), Regime::Noise);
        assert_eq!(signal_position(&m(&[2, 5]), &s), Some(5));
    }

    #[test]
    fn regime_matches_brute_force_count() {
        for (n, secret) in [
            (4usize, vec![1usize, 3]),
            (7, vec![2, 5, 6]),
            (11, vec![1, 4, 8, 9]),
        ] {
            let spec = TaskSpec::new(n, secret).unwrap();
            let ext = spec.extended_secret();
            for m in enumerate_masks(spec.n_prime()).unwrap() {
                let bools = m.as_bools();
                let hits = ext.iter().filter(|&&j| bools[j - 1]).count();
                let expected = if hits == 1 {
                    Regime::Signal
                } else {
                    Regime::Noise
                };
                assert_eq!(classify_regime(&m, &spec), expected);
            }
        }
    }

    #[test]
    fn signal_probability_examples() {
        let p = signal_probability(&Schedule::point(0.5).unwrap(), 1);
        assert_eq!(p.signal, 0.5);
        let u = signal_probability(&Schedule::new(0.0, 1.0).unwrap(), 1);
        assert!((u.signal - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(u.signal + u.noise, 1.0);
        let zero = signal_probability(&Schedule::point(0.0).unwrap(), 4);
        assert_eq!(zero.signal, 0.0);
    }

    #[test]
    fn point_mass_at_optimum_tends_to_inverse_e() {
        let k = 1000;
        let p = signal_probability(&Schedule::point(1.0 / (k as f64 + 1.0)).unwrap(), k);
        assert!((p.signal - (-1.0f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn point_mass_signal_has_one_interior_maximum() {
        for k in 1..8 {
            let vals: Vec<f64> = (0..=1000)
                .map(|i| signal_probability(&Schedule::point(i as f64 / 1000.0).unwrap(), k).signal)
                .collect();
            let peak = vals
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert!(peak > 0 && peak < 1000);
            assert!(vals[..=peak].windows(2).all(|w| w[1] >= w[0]));
            assert!(vals[peak..].windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn expect_monomial_matches_quadrature() {
        let s = Schedule::new(0.1, 0.7).unwrap();
        for (a, b) in [(0u32, 0u32), (1, 4), (3, 10), (0, 15), (15, 0)] {
            // Composite Simpson, fine enough to be exact to ~1e-12 for these degrees.
            let steps = 20_000;
            let h = s.width() / steps as f64;
            let f = |t: f64| t.powi(a as i32) * (1.0 - t).powi(b as i32);
            let mut acc = f(s.t0()) + f(s.t1());
            for i in 1..steps {
                let t = s.t0() + i as f64 * h;
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
            }
            let quad = acc * h / 3.0 / s.width();
            let exact = s.expect_monomial(a, b);
            assert!(
                (quad - exact).abs() <= 1e-11 * exact.abs().max(1e-300),
                "a={a} b={b}: {quad} vs {exact}"
            );
        }
    }

    #[test]
    fn empirical_signal_agrees_with_closed_form() {
        let spec1 = TaskSpec::new(1, vec![1]).unwrap();
        let mut r = rng(3);
        let e =
            empirical_signal_probability(&Schedule::point(0.5).unwrap(), &spec1, 100_000, &mut r);
        assert!((e - 0.5).abs() < 0.01, "{e}");

        let zero = Schedule::new(0.0, 0.0).unwrap();
        assert_eq!(
            empirical_signal_probability(&zero, &spec42(), 1000, &mut r),
            0.0
        );

        let spec = TaskSpec::new(20, vec![1, 4, 7, 10, 13, 16]).unwrap();
        let sched = Schedule::new(0.0, 0.2).unwrap();
        let trials = 100_000;
        let e = empirical_signal_probability(&sched, &spec, trials, &mut r);
        let p = signal_probability(&sched, 6).signal;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((e - p).abs() < 3.0 * sigma, "{e} vs {p} (sigma {sigma})");
    }
}
