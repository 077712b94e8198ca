//! Finite probability mass functions on the integers.
//!
//! [`IntegerPmf`] is the building block for the free step law and for every
//! membrane jump law. Draws go through [`AliasTable`], which costs one
//! 64-bit word from the generator per variate.

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for normalization and zero-mean checks.
pub const PROB_TOL: f64 = 1e-12;

/// Generator used for every simulation in the crate.
pub type SimRng = ChaCha8Rng;

/// Generator for `(seed, stream)`. Distinct streams under one seed are
/// independent ChaCha keystreams, so paths can be fanned out freely.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("distribution has no atoms")]
    Empty,
    #[error("probability {prob} at value {value} is not in (0, 1]")]
    BadProbability { value: i64, prob: f64 },
    #[error("value {0} appears more than once")]
    DuplicateValue(i64),
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("step law has mean {0}, expected 0")]
    NonZeroMean(f64),
    #[error("step law has zero variance")]
    ZeroVariance,
    #[error("step {value} can jump over the membrane (|step| must be <= {limit})")]
    JumpOverMembrane { value: i64, limit: i64 },
    #[error("truncation level {0} is not in (0, 1)")]
    BadEpsilon(f64),
}

/// Finite distribution on the integers with strictly increasing support.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(i64, f64)>", into = "Vec<(i64, f64)>")]
pub struct IntegerPmf {
    atoms: Vec<(i64, f64)>,
}

impl IntegerPmf {
    /// Builds a pmf from `(value, prob)` pairs in any order.
    pub fn new(mut atoms: Vec<(i64, f64)>) -> Result<Self, DistError> {
        if atoms.is_empty() {
            return Err(DistError::Empty);
        }
        for &(value, prob) in &atoms {
            if !(prob > 0.0 && prob <= 1.0) {
                return Err(DistError::BadProbability { value, prob });
            }
        }
        atoms.sort_by_key(|a| a.0);
        if let Some(w) = atoms.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(DistError::DuplicateValue(w[0].0));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(DistError::NotNormalized(total));
        }
        Ok(Self { atoms })
    }

    pub fn point(value: i64) -> Self {
        Self {
            atoms: vec![(value, 1.0)],
        }
    }

    /// Uniform law on the given distinct values.
    pub fn uniform(values: &[i64]) -> Result<Self, DistError> {
        let p = 1.0 / values.len() as f64;
        Self::new(values.iter().map(|&v| (v, p)).collect())
    }

    pub fn atoms(&self) -> &[(i64, f64)] {
        &self.atoms
    }

    pub fn support(&self) -> impl Iterator<Item = i64> + '_ {
        self.atoms.iter().map(|a| a.0)
    }

    pub fn min_value(&self) -> i64 {
        self.atoms[0].0
    }

    pub fn max_value(&self) -> i64 {
        self.atoms[self.atoms.len() - 1].0
    }

    pub fn max_abs(&self) -> i64 {
        self.min_value().abs().max(self.max_value().abs())
    }

    pub fn prob(&self, value: i64) -> f64 {
        self.atoms
            .binary_search_by_key(&value, |a| a.0)
            .map(|i| self.atoms[i].1)
            .unwrap_or(0.0)
    }

    pub fn expect(&self, f: impl Fn(i64) -> f64) -> f64 {
        self.atoms.iter().map(|&(v, p)| p * f(v)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|v| v as f64)
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.expect(|v| (v as f64 - mu).powi(2))
    }

    pub fn abs_mean(&self) -> f64 {
        self.expect(|v| (v as f64).abs())
    }

    /// Law of `-X`.
    pub fn negated(&self) -> Self {
        Self {
            atoms: self.atoms.iter().rev().map(|&(v, p)| (-v, p)).collect(),
        }
    }

    /// Greatest common divisor of the support, i.e. the lattice span of a
    /// walk driven by this law. Zero for the point mass at 0.
    pub fn span(&self) -> i64 {
        self.support().fold(0, |g, v| gcd(g, v.abs()))
    }
}

impl fmt::Debug for IntegerPmf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(self.atoms.iter().map(|(v, p)| (v, p)))
            .finish()
    }
}

impl TryFrom<Vec<(i64, f64)>> for IntegerPmf {
    type Error = DistError;

    fn try_from(atoms: Vec<(i64, f64)>) -> Result<Self, Self::Error> {
        Self::new(atoms)
    }
}

impl From<IntegerPmf> for Vec<(i64, f64)> {
    fn from(pmf: IntegerPmf) -> Self {
        pmf.atoms
    }
}

fn gcd(mut a: i64, mut b: i64) -> i64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zero-mean, finite-variance law of the free steps, checked against a
/// membrane of half-width `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLaw {
    pmf: IntegerPmf,
    sigma2: f64,
}

impl StepLaw {
    pub fn pmf(&self) -> &IntegerPmf {
        &self.pmf
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

/// Accepts `pmf` as the free step law for membrane half-width `m`: zero mean,
/// positive variance and no jump longer than `2m + 1`.
pub fn validate_step_law(pmf: &IntegerPmf, m: u32) -> Result<StepLaw, DistError> {
    let mean = pmf.mean();
    if mean.abs() > PROB_TOL {
        return Err(DistError::NonZeroMean(mean));
    }
    let sigma2 = pmf.variance();
    if sigma2 <= 0.0 {
        return Err(DistError::ZeroVariance);
    }
    let limit = 2 * i64::from(m) + 1;
    if let Some(value) = pmf.support().find(|v| v.abs() > limit) {
        return Err(DistError::JumpOverMembrane { value, limit });
    }
    Ok(StepLaw {
        pmf: pmf.clone(),
        sigma2,
    })
}

/// Drops the symmetric tail `{|v| > K}` for the smallest `K` whose tail mass
/// is at most `eps`, renormalizes, and returns the removed mass.
pub fn truncate_tail(pmf: &IntegerPmf, eps: f64) -> Result<(IntegerPmf, f64), DistError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(DistError::BadEpsilon(eps));
    }
    let mut by_abs: Vec<(i64, f64)> = pmf.atoms.iter().map(|&(v, p)| (v.abs(), p)).collect();
    by_abs.sort_by_key(|a| std::cmp::Reverse(a.0));

    // Walk radii from the outside in; `tail` is the mass strictly beyond the
    // candidate radius.
    let mut tail = 0.0;
    let mut radius = by_abs[0].0;
    let mut i = 0;
    while i < by_abs.len() {
        let r = by_abs[i].0;
        let mut shell = 0.0;
        while i < by_abs.len() && by_abs[i].0 == r {
            shell += by_abs[i].1;
            i += 1;
        }
        if i == by_abs.len() || tail + shell > eps {
            break;
        }
        tail += shell;
        radius = by_abs[i].0;
    }
    if tail == 0.0 {
        return Ok((pmf.clone(), 0.0));
    }
    let kept = 1.0 - tail;
    let atoms = pmf
        .atoms
        .iter()
        .filter(|a| a.0.abs() <= radius)
        .map(|&(v, p)| (v, p / kept))
        .collect();
    Ok((IntegerPmf { atoms }, tail))
}

/// Walker/Vose alias table over the atoms of an [`IntegerPmf`].
///
/// One `u64` per draw: the high part of `u * len` picks the column and the
/// low part is the acceptance coin.
#[derive(Clone, Debug)]
pub struct AliasTable {
    values: Vec<i64>,
    threshold: Vec<u64>,
    alias: Vec<u32>,
}

impl AliasTable {
    pub fn new(pmf: &IntegerPmf) -> Self {
        let n = pmf.atoms.len();
        let mut scaled: Vec<f64> = pmf.atoms.iter().map(|a| a.1 * n as f64).collect();
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let mut small = Vec::new();
        let mut large = Vec::new();
        for (i, &s) in scaled.iter().enumerate() {
            if s < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            alias[s] = l as u32;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers are full columns up to rounding.
        for i in small.into_iter().chain(large) {
            scaled[i] = 1.0;
        }
        let threshold = scaled
            .iter()
            .map(|&s| {
                if s >= 1.0 {
                    u64::MAX
                } else {
                    (s * 18_446_744_073_709_551_616.0) as u64
                }
            })
            .collect();
        Self {
            values: pmf.atoms.iter().map(|a| a.0).collect(),
            threshold,
            alias,
        }
    }

    #[inline]
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> i64 {
        let wide = u128::from(rng.next_u64()) * self.values.len() as u128;
        let column = (wide >> 64) as usize;
        let coin = wide as u64;
        if coin < self.threshold[column] {
            self.values[column]
        } else {
            self.values[self.alias[column] as usize]
        }
    }
}

/// One draw from `pmf`. Builds a throwaway table; hot loops should hold an
/// [`AliasTable`] instead.
pub fn sample<R: RngCore + ?Sized>(pmf: &IntegerPmf, rng: &mut R) -> i64 {
    AliasTable::new(pmf).sample(rng)
}
