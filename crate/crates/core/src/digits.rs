//! Newcomb-Benford digit laws and leading-digit extraction.
//!
//! Probabilities are evaluated from their closed forms on every call:
//! `P1(k) = log10(1 + 1/k)` for the first digit and
//! `P2(k) = sum_{j=1..9} log10(1 + 1/(10 j + k))` for the second.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DigitPosition {
    First,
    Second,
}

impl DigitPosition {
    pub const ALL: [DigitPosition; 2] = [DigitPosition::First, DigitPosition::Second];

    /// Smallest admissible digit value at this position.
    pub fn min_digit(self) -> u8 {
        match self {
            DigitPosition::First => 1,
            DigitPosition::Second => 0,
        }
    }

    /// Number of admissible digit values (9 or 10).
    pub fn cells(self) -> usize {
        match self {
            DigitPosition::First => 9,
            DigitPosition::Second => 10,
        }
    }

    pub fn digits(self) -> impl Iterator<Item = u8> {
        self.min_digit()..=9
    }

    pub fn index_of(self, digit: u8) -> Option<usize> {
        if digit >= self.min_digit() && digit <= 9 {
            Some((digit - self.min_digit()) as usize)
        } else {
            None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DigitPosition::First => "first",
            DigitPosition::Second => "second",
        }
    }
}

impl fmt::Display for DigitPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DigitPosition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "first" => Ok(DigitPosition::First),
            "2" | "second" => Ok(DigitPosition::Second),
            other => Err(Error::domain(format!("unknown digit position `{other}`"))),
        }
    }
}

/// First-digit Newcomb-Benford probability of `k` in `1..=9`.
pub fn benford_first(k: u8) -> Result<f64> {
    if !(1..=9).contains(&k) {
        return Err(Error::domain(format!("first digit must be in 1..=9, got {k}")));
    }
    Ok((1.0 + 1.0 / f64::from(k)).log10())
}

/// Second-digit marginal Newcomb-Benford probability of `k` in `0..=9`.
pub fn benford_second(k: u8) -> Result<f64> {
    if k > 9 {
        return Err(Error::domain(format!("second digit must be in 0..=9, got {k}")));
    }
    Ok((1..=9u32)
        .map(|j| (1.0 + 1.0 / f64::from(10 * j + u32::from(k))).log10())
        .sum())
}

pub fn benford_probability(position: DigitPosition, k: u8) -> Result<f64> {
    match position {
        DigitPosition::First => benford_first(k),
        DigitPosition::Second => benford_second(k),
    }
}

/// A probability vector over the admissible digits of one position.
///
/// [`DigitDistribution::benford`] yields strictly positive entries (strictly
/// decreasing for the first digit). [`DigitDistribution::new`] also accepts
/// zero entries so that degenerate nulls can be simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitDistribution {
    position: DigitPosition,
    probabilities: Vec<f64>,
}

impl DigitDistribution {
    pub fn new(position: DigitPosition, probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.len() != position.cells() {
            return Err(Error::domain(format!(
                "{position} digit distribution needs {} entries, got {}",
                position.cells(),
                probabilities.len()
            )));
        }
        validate_probabilities(&probabilities)?;
        Ok(Self {
            position,
            probabilities,
        })
    }

    pub fn benford(position: DigitPosition) -> Self {
        let probabilities = position
            .digits()
            .map(|k| benford_probability(position, k).expect("admissible digit"))
            .collect();
        Self {
            position,
            probabilities,
        }
    }

    pub fn position(&self) -> DigitPosition {
        self.position
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn probability(&self, digit: u8) -> Option<f64> {
        self.position
            .index_of(digit)
            .map(|i| self.probabilities[i])
    }
}

/// Checks that `probs` is a probability vector (non-negative, sums to 1 within 1e-9).
pub(crate) fn validate_probabilities(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::domain("empty probability vector"));
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::domain(format!("invalid probability {p}")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!(
            "probabilities sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Integer types whose leading decimal digits can be read off arithmetically.
pub trait CountValue {
    fn sign(&self) -> Ordering;

    /// Whether the value is `>= min`.
    fn at_least(&self, min: u64) -> bool;

    /// Leading digit and the digit right after it, for a positive value.
    fn leading_pair(&self) -> (u8, Option<u8>);
}

fn leading_pair_u128(mut v: u128) -> (u8, Option<u8>) {
    let mut second = None;
    while v >= 10 {
        second = Some((v % 10) as u8);
        v /= 10;
    }
    (v as u8, second)
}

impl CountValue for i64 {
    fn sign(&self) -> Ordering {
        self.cmp(&0)
    }

    fn at_least(&self, min: u64) -> bool {
        *self >= 0 && (*self as u64) >= min
    }

    fn leading_pair(&self) -> (u8, Option<u8>) {
        leading_pair_u128(self.unsigned_abs() as u128)
    }
}

impl CountValue for u64 {
    fn sign(&self) -> Ordering {
        self.cmp(&0)
    }

    fn at_least(&self, min: u64) -> bool {
        *self >= min
    }

    fn leading_pair(&self) -> (u8, Option<u8>) {
        leading_pair_u128(u128::from(*self))
    }
}

impl CountValue for BigUint {
    fn sign(&self) -> Ordering {
        if self.is_zero() {
            Ordering::Equal
        } else {
            Ordering::Greater
        }
    }

    fn at_least(&self, min: u64) -> bool {
        *self >= BigUint::from(min)
    }

    fn leading_pair(&self) -> (u8, Option<u8>) {
        // Strip 18 digits at a time while at least two digits would remain.
        let chunk = BigUint::from(10u64.pow(18));
        let bound = BigUint::from(10u128.pow(20));
        let mut v = self.clone();
        while v >= bound {
            v /= &chunk;
        }
        leading_pair_u128(v.to_u128().expect("below 10^20"))
    }
}

/// Digit of `value` at `position`; `None` for the second digit of a one-digit value.
pub fn extract_digit<V: CountValue + fmt::Debug>(
    value: &V,
    position: DigitPosition,
) -> Result<Option<u8>> {
    if value.sign() != Ordering::Greater {
        return Err(Error::domain(format!(
            "{value:?} has no leading digit (values must be positive)"
        )));
    }
    let (first, second) = value.leading_pair();
    Ok(match position {
        DigitPosition::First => Some(first),
        DigitPosition::Second => second,
    })
}

/// Occurrence counts of each admissible digit at one position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigitCounts {
    pub position: DigitPosition,
    pub counts: Vec<u64>,
    pub n: u64,
    /// Values that had no digit at this position.
    pub skipped: u64,
}

impl DigitCounts {
    pub fn empty(position: DigitPosition) -> Self {
        Self {
            position,
            counts: vec![0; position.cells()],
            n: 0,
            skipped: 0,
        }
    }

    pub fn new(position: DigitPosition, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != position.cells() {
            return Err(Error::domain(format!(
                "{position} digit counts need {} cells, got {}",
                position.cells(),
                counts.len()
            )));
        }
        let n = counts.iter().sum();
        Ok(Self {
            position,
            counts,
            n,
            skipped: 0,
        })
    }

    pub fn count(&self, digit: u8) -> u64 {
        self.position
            .index_of(digit)
            .map_or(0, |i| self.counts[i])
    }

    /// Observed relative frequencies; all zero when `n == 0`.
    pub fn proportions(&self) -> Vec<f64> {
        if self.n == 0 {
            return vec![0.0; self.counts.len()];
        }
        let n = self.n as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }
}

pub fn tally_digits<V: CountValue + fmt::Debug>(
    values: &[V],
    position: DigitPosition,
) -> Result<DigitCounts> {
    let mut tally = DigitCounts::empty(position);
    for value in values {
        match extract_digit(value, position)? {
            Some(d) => {
                let idx = position.index_of(d).expect("extracted digit is admissible");
                tally.counts[idx] += 1;
                tally.n += 1;
            }
            None => tally.skipped += 1,
        }
    }
    Ok(tally)
}

/// Total-variation distance between observed proportions and `expected`.
pub fn total_variation(counts: &DigitCounts, expected: &DigitDistribution) -> Result<f64> {
    if counts.position != expected.position() {
        return Err(Error::domain("digit position mismatch"));
    }
    if counts.n == 0 {
        return Err(Error::domain("total variation of an empty tally"));
    }
    Ok(0.5
        * counts
            .proportions()
            .iter()
            .zip(expected.probabilities())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_digit_examples() {
        assert!((benford_first(1).unwrap() - 0.301).abs() < 5e-4);
        assert!((benford_first(9).unwrap() - 0.046).abs() < 5e-4);
        assert!(benford_first(0).is_err());
        assert!(benford_first(10).is_err());
    }

    #[test]
    fn second_digit_examples() {
        assert!((benford_second(0).unwrap() - 0.120).abs() < 5e-4);
        assert!((benford_second(9).unwrap() - 0.085).abs() < 5e-4);
        assert!(benford_second(10).is_err());
    }

    #[test]
    fn laws_sum_to_one_and_decrease() {
        for position in DigitPosition::ALL {
            let dist = DigitDistribution::benford(position);
            let total: f64 = dist.probabilities().iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "{position}: {total}");
            assert!(dist.probabilities().iter().all(|&p| p > 0.0));
            assert!(dist.probabilities().windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn extraction_examples() {
        assert_eq!(extract_digit(&1234i64, DigitPosition::First).unwrap(), Some(1));
        assert_eq!(extract_digit(&432i64, DigitPosition::First).unwrap(), Some(4));
        assert_eq!(extract_digit(&1234i64, DigitPosition::Second).unwrap(), Some(2));
        assert_eq!(extract_digit(&7i64, DigitPosition::Second).unwrap(), None);
        assert_eq!(extract_digit(&10i64, DigitPosition::Second).unwrap(), Some(0));
        assert!(extract_digit(&0i64, DigitPosition::First).is_err());
        assert!(extract_digit(&-5i64, DigitPosition::First).is_err());
    }

    #[test]
    fn bigint_extraction_matches_decimal_expansion() {
        let v = BigUint::from(2u32).pow(999);
        let text = v.to_string();
        let expected_first = text.as_bytes()[0] - b'0';
        let expected_second = text.as_bytes()[1] - b'0';
        assert_eq!(
            extract_digit(&v, DigitPosition::First).unwrap(),
            Some(expected_first)
        );
        assert_eq!(
            extract_digit(&v, DigitPosition::Second).unwrap(),
            Some(expected_second)
        );
        assert!(extract_digit(&BigUint::zero(), DigitPosition::First).is_err());
    }

    #[test]
    fn tally_examples() {
        let t = tally_digits(&[1234i64, 432, 100], DigitPosition::First).unwrap();
        assert_eq!(t.count(1), 2);
        assert_eq!(t.count(4), 1);
        assert_eq!(t.n, 3);

        let t = tally_digits::<i64>(&[], DigitPosition::First).unwrap();
        assert_eq!(t.n, 0);
        assert!(t.counts.iter().all(|&c| c == 0));

        let t = tally_digits(&[5i64, 50, 500], DigitPosition::Second).unwrap();
        assert_eq!(t.count(0), 2);
        assert_eq!(t.n, 2);
        assert_eq!(t.skipped, 1);

        assert!(tally_digits(&[3i64, 0], DigitPosition::First).is_err());
    }

    proptest! {
        #[test]
        fn extraction_is_scale_invariant(v in 1i64..1_000_000, j in 0u32..12) {
            let scaled = v * 10i64.pow(j);
            for position in DigitPosition::ALL {
                let a = extract_digit(&v, position).unwrap();
                let b = extract_digit(&scaled, position).unwrap();
                if a.is_some() {
                    prop_assert_eq!(a, b);
                }
            }
        }

        #[test]
        fn tally_is_permutation_invariant(
            mut values in proptest::collection::vec(1i64..100_000, 0..60),
            seed in any::<u64>(),
        ) {
            for position in DigitPosition::ALL {
                let a = tally_digits(&values, position).unwrap();
                prop_assert_eq!(a.n + a.skipped, values.len() as u64);
                prop_assert_eq!(a.counts.iter().sum::<u64>(), a.n);
                let k = values.len().max(1);
                values.rotate_left((seed as usize) % k);
                values.reverse();
                let b = tally_digits(&values, position).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
