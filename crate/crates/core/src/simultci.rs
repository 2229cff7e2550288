//! Simultaneous confidence intervals for multinomial proportions.
//!
//! For an integer half-width `c`, the coverage `nu(c) = P(|N_d - x_d| <= c for all d)`
//! under a multinomial with probabilities `x / n` is approximated by modelling
//! each cell as Poisson(`x_d`) truncated to `[x_d - c, x_d + c]`, and
//! conditioning the independent cells on their sum being `n`:
//!
//! ```text
//! nu(c) ~= prod_d P(x_d - c <= X_d <= x_d + c) * P(S = n) / P(Poisson(n) = n)
//! ```
//!
//! where `P(S = n)` for the sum `S` of the truncated variables is an
//! Edgeworth-corrected normal density built from the summed cumulants. With
//! `nu(c) < confidence <= nu(c + 1)` and `gamma = (confidence - nu(c)) / (nu(c + 1) - nu(c))`
//! the intervals are `[x_d/n - c/n, x_d/n + (c + 2 gamma)/n]`, clipped to `[0, 1]`.
//!
//! [`exact_intervals_small`] evaluates `nu(c)` by enumerating every outcome
//! and serves as the reference for the approximation.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::digits::{DigitCounts, DigitPosition};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    SisonGlaz,
    ExactEnumeration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    /// `None` for count vectors that are not digit tallies.
    pub position: Option<DigitPosition>,
    pub method: IntervalMethod,
    pub n: u64,
    pub proportions: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub confidence: f64,
    pub c_value: u64,
    pub gamma: f64,
}

impl IntervalSet {
    /// Whether every `p[d]` lies inside its closed interval. Endpoints are
    /// compared with a `1e-9` slack since `x/n - c/n` and `(x - c)/n` can
    /// differ in the last bit.
    pub fn covers(&self, p: &[f64]) -> bool {
        const SLACK: f64 = 1e-9;
        p.len() == self.lower.len()
            && p
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&lo, &hi))| lo - SLACK <= v && v <= hi + SLACK)
    }
}

fn validate(counts: &[u64], confidence: f64) -> Result<u64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::domain(format!(
            "confidence {confidence} outside (0, 1)"
        )));
    }
    if counts.len() < 2 {
        return Err(Error::domain("simultaneous intervals need at least two cells"));
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::domain("simultaneous intervals need n >= 1"));
    }
    Ok(n)
}

fn ln_poisson_pmf(k: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * lambda.ln() - lambda - ln_gamma(k as f64 + 1.0)
}

/// Mass and first four cumulants of Poisson(`lambda`) truncated to `[lo, hi]`.
#[derive(Debug, Clone, Copy)]
struct TruncatedPoisson {
    mass: f64,
    mean: f64,
    variance: f64,
    third: f64,
    fourth_cumulant: f64,
}

impl TruncatedPoisson {
    fn new(lambda: u64, lo: u64, hi: u64) -> Self {
        let l = lambda as f64;
        if lo == hi {
            return Self {
                mass: ln_poisson_pmf(lo, l).exp(),
                mean: lo as f64,
                variance: 0.0,
                third: 0.0,
                fourth_cumulant: 0.0,
            };
        }
        // pmf(j) = pmf(j - 1) * lambda / j, anchored at the mode where the
        // weights are largest
        let anchor = lambda.clamp(lo, hi);
        let mut weights = vec![(0.0, 0.0); (hi - lo + 1) as usize];
        let at = |j: u64| (j - lo) as usize;
        let top = ln_poisson_pmf(anchor, l).exp();
        weights[at(anchor)] = (anchor as f64, top);
        let mut w = top;
        for j in (anchor + 1)..=hi {
            w *= l / j as f64;
            weights[at(j)] = (j as f64, w);
        }
        w = top;
        for j in (lo..anchor).rev() {
            w *= (j + 1) as f64 / l;
            weights[at(j)] = (j as f64, w);
        }
        let mass: f64 = weights.iter().map(|w| w.1).sum();
        let mean = weights.iter().map(|(j, w)| j * w).sum::<f64>() / mass;
        let central = |power: i32| {
            weights
                .iter()
                .map(|(j, w)| (j - mean).powi(power) * w)
                .sum::<f64>()
                / mass
        };
        let variance = central(2);
        Self {
            mass,
            mean,
            variance,
            third: central(3),
            fourth_cumulant: central(4) - 3.0 * variance * variance,
        }
    }
}

/// Approximate simultaneous coverage `nu(c)` for observed `counts`.
pub fn sison_glaz_coverage(counts: &[u64], c: u64) -> f64 {
    let n: u64 = counts.iter().sum();
    let cells: Vec<TruncatedPoisson> = counts
        .iter()
        .map(|&x| TruncatedPoisson::new(x, x.saturating_sub(c), x + c))
        .collect();

    let mass_product: f64 = cells.iter().map(|t| t.mass).product();
    let s1: f64 = cells.iter().map(|t| t.mean).sum();
    let s2: f64 = cells.iter().map(|t| t.variance).sum();
    let s3: f64 = cells.iter().map(|t| t.third).sum();
    let s4: f64 = cells.iter().map(|t| t.fourth_cumulant).sum();

    let sum_density = if s2 <= 0.0 {
        // Every cell is a point mass; the sum is exactly n.
        if (s1 - n as f64).abs() < 0.5 {
            1.0
        } else {
            0.0
        }
    } else {
        let sd = s2.sqrt();
        let z = (n as f64 - s1) / sd;
        let g1 = s3 / (s2 * sd);
        let g2 = s4 / (s2 * s2);
        let z2 = z * z;
        let poly = 1.0
            + g1 * (z2 * z - 3.0 * z) / 6.0
            + g2 * (z2 * z2 - 6.0 * z2 + 3.0) / 24.0
            + g1 * g1 * (z2 * z2 * z2 - 15.0 * z2 * z2 + 45.0 * z2 - 15.0) / 72.0;
        let phi = (-z2 / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        poly * phi / sd
    };

    let poisson_at_n = ln_poisson_pmf(n, n as f64).exp();
    mass_product * sum_density / poisson_at_n
}

/// Picks `(c, gamma)` from a coverage function evaluated for `c = 0, 1, ..., n`.
fn select_c(n: u64, confidence: f64, mut nu: impl FnMut(u64) -> f64) -> (u64, f64) {
    let mut previous = nu(0);
    if previous >= confidence {
        return (0, 0.0);
    }
    for c in 1..=n {
        let current = nu(c);
        if current >= confidence {
            if current == confidence {
                return (c, 0.0);
            }
            let gamma = (confidence - previous) / (current - previous);
            return (c - 1, gamma);
        }
        previous = current;
    }
    // Coverage never reached confidence; widest possible intervals.
    (n, 0.0)
}

fn assemble(
    counts: &[u64],
    n: u64,
    confidence: f64,
    c: u64,
    gamma: f64,
    method: IntervalMethod,
) -> IntervalSet {
    let nf = n as f64;
    let proportions: Vec<f64> = counts.iter().map(|&x| x as f64 / nf).collect();
    let lower = proportions
        .iter()
        .map(|p| (p - c as f64 / nf).max(0.0))
        .collect();
    let upper = proportions
        .iter()
        .map(|p| (p + (c as f64 + 2.0 * gamma) / nf).min(1.0))
        .collect();
    IntervalSet {
        position: None,
        method,
        n,
        proportions,
        lower,
        upper,
        confidence,
        c_value: c,
        gamma,
    }
}

/// Sison-Glaz intervals for an arbitrary count vector with at least two cells.
pub fn sison_glaz(counts: &[u64], confidence: f64) -> Result<IntervalSet> {
    let n = validate(counts, confidence)?;
    let (c, gamma) = select_c(n, confidence, |c| sison_glaz_coverage(counts, c));
    Ok(assemble(counts, n, confidence, c, gamma, IntervalMethod::SisonGlaz))
}

pub fn sison_glaz_intervals(counts: &DigitCounts, confidence: f64) -> Result<IntervalSet> {
    let mut set = sison_glaz(&counts.counts, confidence)?;
    set.position = Some(counts.position);
    Ok(set)
}

/// Number of multinomial outcomes of `n` trials over `k` cells, `C(n + k - 1, k - 1)`,
/// saturating at `u128::MAX`.
pub fn state_count(n: u64, k: usize) -> u128 {
    let r = (k as u128).saturating_sub(1);
    let mut acc: u128 = 1;
    for i in 1..=r {
        acc = match acc.checked_mul(u128::from(n) + i) {
            Some(v) => v / i,
            None => return u128::MAX,
        };
    }
    acc
}

/// Exact `nu(c)` for `c = 0..=n` by enumerating all outcomes under `p = counts / n`.
pub fn exact_coverage(counts: &[u64], max_states: u64) -> Result<Vec<f64>> {
    let n: u64 = counts.iter().sum();
    let states = state_count(n, counts.len());
    if states > u128::from(max_states) {
        return Err(Error::Capacity(format!(
            "{states} multinomial outcomes exceed the budget of {max_states}"
        )));
    }
    let nf = n as f64;
    let ln_p: Vec<f64> = counts.iter().map(|&x| (x as f64 / nf).ln()).collect();
    let ln_n_fact = ln_gamma(nf + 1.0);
    let mut hist = vec![0.0f64; n as usize + 1];
    let mut outcome = vec![0u64; counts.len()];

    fn visit(
        cell: usize,
        remaining: u64,
        outcome: &mut [u64],
        counts: &[u64],
        ln_p: &[f64],
        ln_n_fact: f64,
        hist: &mut [f64],
    ) {
        if cell == outcome.len() - 1 {
            outcome[cell] = remaining;
            let mut ln_prob = ln_n_fact;
            let mut max_dev = 0u64;
            for (d, &k) in outcome.iter().enumerate() {
                if k > 0 {
                    ln_prob += k as f64 * ln_p[d] - ln_gamma(k as f64 + 1.0);
                }
                max_dev = max_dev.max(k.abs_diff(counts[d]));
            }
            if ln_prob.is_finite() {
                hist[max_dev as usize] += ln_prob.exp();
            }
            return;
        }
        for k in 0..=remaining {
            outcome[cell] = k;
            visit(cell + 1, remaining - k, outcome, counts, ln_p, ln_n_fact, hist);
        }
    }

    visit(0, n, &mut outcome, counts, &ln_p, ln_n_fact, &mut hist);
    let mut running = 0.0;
    Ok(hist
        .into_iter()
        .map(|h| {
            running += h;
            running
        })
        .collect())
}

/// Exact-enumeration counterpart of [`sison_glaz`].
pub fn exact_intervals(counts: &[u64], confidence: f64, max_states: u64) -> Result<IntervalSet> {
    let n = validate(counts, confidence)?;
    let nu = exact_coverage(counts, max_states)?;
    let (c, gamma) = select_c(n, confidence, |c| nu[c as usize]);
    Ok(assemble(
        counts,
        n,
        confidence,
        c,
        gamma,
        IntervalMethod::ExactEnumeration,
    ))
}

pub fn exact_intervals_small(
    counts: &DigitCounts,
    confidence: f64,
    max_states: u64,
) -> Result<IntervalSet> {
    let mut set = exact_intervals(&counts.counts, confidence, max_states)?;
    set.position = Some(counts.position);
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cell_lower_bound_clips() {
        let set = sison_glaz(&[0, 12], 0.95).unwrap();
        assert_eq!(set.lower[0], 0.0);
        assert!(set.covers(&set.proportions));
    }

    #[test]
    fn degenerate_counts_collapse_to_points() {
        let set = exact_intervals(&[7, 0, 0], 0.95, 1_000).unwrap();
        assert_eq!(set.c_value, 0);
        assert_eq!(set.gamma, 0.0);
        assert_eq!(set.lower, set.upper);
        let approx = sison_glaz(&[7, 0, 0], 0.95).unwrap();
        assert_eq!(approx.c_value, 0);
        assert_eq!(approx.lower, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn exact_coverage_is_monotone_and_reaches_one() {
        let nu = exact_coverage(&[7, 7, 6], 10_000).unwrap();
        assert_eq!(nu.len(), 21);
        assert!(nu.windows(2).all(|w| w[0] <= w[1] + 1e-15));
        assert!((nu[20] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_coverage_two_cells_by_binomial_sum() {
        // k = 2: |N1 - 10| <= c implies the same for N2, so nu(c) is a
        // central binomial(20, 1/2) mass.
        let nu = exact_coverage(&[10, 10], 1_000).unwrap();
        let pmf = |k: u64| {
            (ln_gamma(21.0) - ln_gamma(k as f64 + 1.0) - ln_gamma(21.0 - k as f64)
                + 20.0 * 0.5f64.ln())
            .exp()
        };
        for c in 0..=10u64 {
            let oracle: f64 = (10 - c..=10 + c).map(pmf).sum();
            assert!((nu[c as usize] - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn approximation_tracks_exact_on_examples() {
        for counts in [[10u64, 10].as_slice(), [7, 7, 6].as_slice()] {
            let approx = sison_glaz(counts, 0.95).unwrap();
            let exact = exact_intervals(counts, 0.95, 100_000).unwrap();
            assert!(approx.c_value.abs_diff(exact.c_value) <= 1, "{counts:?}");
            let n = approx.n as f64;
            let w_approx = (approx.c_value as f64 + 2.0 * approx.gamma) / n;
            let w_exact = (exact.c_value as f64 + 2.0 * exact.gamma) / n;
            assert!((w_approx - w_exact).abs() <= 1.0 / n, "{counts:?}");
        }
    }

    #[test]
    fn capacity_error() {
        assert!(matches!(
            exact_coverage(&[100, 100, 100, 100], 1_000),
            Err(Error::Capacity(_))
        ));
        assert_eq!(state_count(20, 3), 231);
        assert_eq!(state_count(20, 2), 21);
    }

    #[test]
    fn invalid_inputs() {
        assert!(sison_glaz(&[0, 0], 0.95).is_err());
        assert!(sison_glaz(&[5, 5], 1.0).is_err());
        assert!(sison_glaz(&[5, 5], 0.0).is_err());
        assert!(sison_glaz(&[5], 0.5).is_err());
    }

    #[test]
    fn reproduces_published_seven_cell_example() {
        // Reference output of the MultinomialCI package for this vector at 95%.
        let counts = [56u64, 72, 73, 59, 62, 87, 58];
        let lower = [0.07922912, 0.11349036, 0.11563169, 0.08565310, 0.09207709, 0.14561028, 0.08351178];
        let upper = [0.1643891, 0.1986504, 0.2007918, 0.1708131, 0.1772370, 0.2307702, 0.1686716];
        let set = sison_glaz(&counts, 0.95).unwrap();
        assert_eq!(set.c_value, 19);
        for d in 0..7 {
            assert!((set.lower[d] - lower[d]).abs() < 1e-8);
            assert!((set.upper[d] - upper[d]).abs() < 1e-4);
        }
    }

    #[test]
    fn intervals_contain_observed_proportions() {
        let counts = [120u64, 70, 51, 40, 31, 27, 22, 20, 19];
        let set = sison_glaz(&counts, 1.0 - 0.05 / 32.0).unwrap();
        assert!(set.covers(&set.proportions));
        let widths: Vec<f64> = set
            .lower
            .iter()
            .zip(&set.upper)
            .filter(|(&l, &u)| l > 0.0 && u < 1.0)
            .map(|(l, u)| u - l)
            .collect();
        assert!(widths.len() >= 2);
        assert!(widths.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
    }
}
