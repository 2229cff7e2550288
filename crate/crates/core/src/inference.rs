//! Pearson chi-square statistics with Monte-Carlo null calibration.
//!
//! Every Monte-Carlo p-value uses the add-one estimator
//! `(1 + #{T_b >= T_obs}) / (B + 1)`, so it is never zero. Replicate `b`
//! draws from its own ChaCha stream keyed by `(seed, b)`; results are
//! identical regardless of how many worker threads run the loop.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::digits::{validate_probabilities, DigitCounts, DigitDistribution};
use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, stream};

/// Replicate statistics within this relative distance below `T_obs` still
/// count as ties, so rounding noise never shrinks the tail.
const TIE_TOLERANCE: f64 = 64.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    GoodnessOfFit,
    Independence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub label: String,
    pub test_kind: TestKind,
    pub statistic: f64,
    /// Monte-Carlo p-value, in `[1/(B+1), 1]`.
    pub p_raw: f64,
    /// Asymptotic chi-square p-value; diagnostic only.
    pub p_asymptotic: f64,
    pub degrees_of_freedom: u32,
    /// Sample size (grand total for independence tests).
    pub n: u64,
    pub replications: u32,
    pub seed: u64,
}

impl TestResult {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

fn mc_p_value(exceed: usize, replications: u32) -> f64 {
    (1 + exceed) as f64 / (f64::from(replications) + 1.0)
}

fn is_in_tail(t_b: f64, t_obs: f64) -> bool {
    t_b >= t_obs * (1.0 - TIE_TOLERANCE)
}

fn chi2_survival(statistic: f64, df: u32) -> f64 {
    if df == 0 {
        return if statistic > 0.0 { 0.0 } else { 1.0 };
    }
    let dist = ChiSquared::new(f64::from(df)).expect("positive degrees of freedom");
    dist.sf(statistic)
}

fn pearson_gof(counts: &[u64], n: u64, probs: &[f64]) -> Result<f64> {
    let n = n as f64;
    let mut statistic = 0.0;
    for (&observed, &p) in counts.iter().zip(probs) {
        if p == 0.0 {
            if observed > 0 {
                return Err(Error::domain(
                    "observed count in a cell with zero expected probability",
                ));
            }
            continue;
        }
        let expected = n * p;
        let diff = observed as f64 - expected;
        statistic += diff * diff / expected;
    }
    Ok(statistic)
}

/// Pearson goodness-of-fit statistic `sum_d (O_d - n p_d)^2 / (n p_d)`.
///
/// Cells with zero expected probability are skipped when empty and rejected
/// otherwise.
pub fn chi2_gof_statistic(observed: &DigitCounts, expected: &DigitDistribution) -> Result<f64> {
    if observed.position != expected.position() {
        return Err(Error::domain(format!(
            "observed {} digits against a {} digit distribution",
            observed.position,
            expected.position()
        )));
    }
    if observed.n == 0 {
        return Err(Error::domain("goodness-of-fit statistic needs n >= 1"));
    }
    pearson_gof(&observed.counts, observed.n, expected.probabilities())
}

/// Draws one multinomial count vector by sequential conditional binomials.
pub fn sample_multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    validate_probabilities(probs)?;
    if n == 0 {
        return Err(Error::domain("multinomial sample size must be >= 1"));
    }
    Ok(draw_multinomial(n, probs, rng))
}

pub(crate) fn draw_multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let mut remaining = n;
    let mut mass = 1.0f64;
    let last = probs.len() - 1;
    for (i, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i == last {
            out[i] = remaining;
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 1.0 };
        let drawn = if q >= 1.0 {
            remaining
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(remaining, q)
                .expect("q in (0, 1)")
                .sample(rng)
        };
        out[i] = drawn;
        remaining -= drawn;
        mass -= p;
    }
    out
}

/// Monte-Carlo chi-square goodness-of-fit test of `observed` against `expected`.
pub fn mc_gof_test(
    observed: &DigitCounts,
    expected: &DigitDistribution,
    replications: u32,
    seed: u64,
) -> Result<TestResult> {
    if replications == 0 {
        return Err(Error::domain("replication count must be >= 1"));
    }
    let t_obs = chi2_gof_statistic(observed, expected)?;
    let probs = expected.probabilities();
    let n = observed.n;

    let exceed = (0..replications)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, u64::from(b));
            let counts = draw_multinomial(n, probs, &mut rng);
            pearson_gof(&counts, n, probs).expect("replicates respect zero cells")
        })
        .filter(|&t_b| is_in_tail(t_b, t_obs))
        .count();

    let df = probs.iter().filter(|&&p| p > 0.0).count().saturating_sub(1) as u32;
    Ok(TestResult {
        label: String::new(),
        test_kind: TestKind::GoodnessOfFit,
        statistic: t_obs,
        p_raw: mc_p_value(exceed, replications),
        p_asymptotic: chi2_survival(t_obs, df),
        degrees_of_freedom: df,
        n,
        replications,
        seed,
    })
}

/// Groups (rows) by digits (columns) count table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub cells: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(rows: Vec<String>, cols: Vec<String>, cells: Vec<Vec<u64>>) -> Result<Self> {
        if cells.len() != rows.len() || cells.iter().any(|r| r.len() != cols.len()) {
            return Err(Error::domain(format!(
                "contingency table cells do not match {} rows x {} columns",
                rows.len(),
                cols.len()
            )));
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.cells.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.cols.len())
            .map(|j| self.cells.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    /// Copy without all-zero rows and columns.
    pub fn drop_empty_margins(&self) -> Self {
        let row_sums = self.row_sums();
        let col_sums = self.col_sums();
        let keep_cols: Vec<usize> = (0..self.cols.len()).filter(|&j| col_sums[j] > 0).collect();
        let mut rows = Vec::new();
        let mut cells = Vec::new();
        for (i, label) in self.rows.iter().enumerate() {
            if row_sums[i] == 0 {
                continue;
            }
            rows.push(label.clone());
            cells.push(keep_cols.iter().map(|&j| self.cells[i][j]).collect());
        }
        Self {
            rows,
            cols: keep_cols.iter().map(|&j| self.cols[j].clone()).collect(),
            cells,
        }
    }
}

/// Precomputed margins of a table reduced to non-empty rows and columns.
struct Margins {
    n_rows: usize,
    n_cols: usize,
    expected: Vec<f64>,
}

impl Margins {
    fn of(table: &ContingencyTable) -> Result<Self> {
        if table.rows.len() < 2 {
            return Err(Error::domain(
                "independence test needs at least two non-empty rows",
            ));
        }
        if table.cols.len() < 2 {
            return Err(Error::domain(
                "independence test needs at least two non-empty columns",
            ));
        }
        let total = table.total() as f64;
        let row_sums = table.row_sums();
        let col_sums = table.col_sums();
        let expected = row_sums
            .iter()
            .flat_map(|&r| col_sums.iter().map(move |&c| r as f64 * c as f64 / total))
            .collect();
        Ok(Self {
            n_rows: table.rows.len(),
            n_cols: table.cols.len(),
            expected,
        })
    }

    fn statistic(&self, flat_cells: &[u64]) -> f64 {
        flat_cells
            .iter()
            .zip(&self.expected)
            .map(|(&o, &e)| {
                let d = o as f64 - e;
                d * d / e
            })
            .sum()
    }
}

/// Pearson independence statistic with `E_ij = row_i * col_j / total`.
///
/// All-zero rows and columns are dropped first; fewer than two rows or
/// columns remaining is a domain error.
pub fn chi2_independence_statistic(table: &ContingencyTable) -> Result<f64> {
    let reduced = table.drop_empty_margins();
    let margins = Margins::of(&reduced)?;
    let flat: Vec<u64> = reduced.cells.iter().flatten().copied().collect();
    Ok(margins.statistic(&flat))
}

/// Monte-Carlo chi-square independence test.
///
/// Replicate tables are uniform over tables sharing both margins, obtained by
/// shuffling unit-level column labels against fixed row labels.
pub fn mc_independence_test(
    table: &ContingencyTable,
    replications: u32,
    seed: u64,
) -> Result<TestResult> {
    if replications == 0 {
        return Err(Error::domain("replication count must be >= 1"));
    }
    let reduced = table.drop_empty_margins();
    let margins = Margins::of(&reduced)?;
    let observed: Vec<u64> = reduced.cells.iter().flatten().copied().collect();
    let t_obs = margins.statistic(&observed);

    let mut unit_rows = Vec::new();
    let mut unit_cols = Vec::new();
    for (i, row) in reduced.cells.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            for _ in 0..count {
                unit_rows.push(i);
                unit_cols.push(j);
            }
        }
    }

    let exceed = (0..replications)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, u64::from(b));
            let table = permuted_table(&unit_rows, &unit_cols, margins.n_cols, margins.n_rows, &mut rng);
            margins.statistic(&table)
        })
        .filter(|&t_b| is_in_tail(t_b, t_obs))
        .count();

    let df = ((margins.n_rows - 1) * (margins.n_cols - 1)) as u32;
    Ok(TestResult {
        label: String::new(),
        test_kind: TestKind::Independence,
        statistic: t_obs,
        p_raw: mc_p_value(exceed, replications),
        p_asymptotic: chi2_survival(t_obs, df),
        degrees_of_freedom: df,
        n: reduced.total(),
        replications,
        seed,
    })
}

fn permuted_table<R: Rng + ?Sized>(
    unit_rows: &[usize],
    unit_cols: &[usize],
    n_cols: usize,
    n_rows: usize,
    rng: &mut R,
) -> Vec<u64> {
    let mut cols = unit_cols.to_vec();
    cols.shuffle(rng);
    let mut flat = vec![0u64; n_rows * n_cols];
    for (&i, &j) in unit_rows.iter().zip(&cols) {
        flat[i * n_cols + j] += 1;
    }
    flat
}

/// One random table with the margins of `table` (after dropping empty margins).
pub fn sample_fixed_margins_table<R: Rng + ?Sized>(
    table: &ContingencyTable,
    rng: &mut R,
) -> ContingencyTable {
    let reduced = table.drop_empty_margins();
    let n_cols = reduced.cols.len();
    let mut unit_rows = Vec::new();
    let mut unit_cols = Vec::new();
    for (i, row) in reduced.cells.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            for _ in 0..count {
                unit_rows.push(i);
                unit_cols.push(j);
            }
        }
    }
    let flat = permuted_table(&unit_rows, &unit_cols, n_cols, reduced.rows.len(), rng);
    ContingencyTable {
        cells: flat.chunks(n_cols.max(1)).map(<[u64]>::to_vec).collect(),
        ..reduced
    }
}

/// Summary of simulated proportions for one digit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitQuantiles {
    pub digit: u8,
    pub min: f64,
    pub q025: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q975: f64,
    pub max: f64,
}

impl DigitQuantiles {
    pub fn as_array(&self) -> [f64; 7] {
        [
            self.min, self.q025, self.q25, self.median, self.q75, self.q975, self.max,
        ]
    }
}

/// Per-digit quantiles of the proportions `counts_d / n` over `replications`
/// multinomial samples of size `n` from `expected`.
pub fn violin_quantiles(
    expected: &DigitDistribution,
    n: u64,
    replications: u32,
    seed: u64,
) -> Result<Vec<DigitQuantiles>> {
    if n == 0 {
        return Err(Error::domain("violin summary needs n >= 1"));
    }
    if replications == 0 {
        return Err(Error::domain("replication count must be >= 1"));
    }
    let probs = expected.probabilities();
    let samples: Vec<Vec<u64>> = (0..replications)
        .into_par_iter()
        .map(|b| draw_multinomial(n, probs, &mut stream(seed, u64::from(b))))
        .collect();

    let position = expected.position();
    let nf = n as f64;
    Ok(position
        .digits()
        .enumerate()
        .map(|(idx, digit)| {
            let mut props: Vec<f64> = samples.iter().map(|s| s[idx] as f64 / nf).collect();
            props.sort_by(f64::total_cmp);
            DigitQuantiles {
                digit,
                min: props[0],
                q025: quantile_sorted(&props, 0.025),
                q25: quantile_sorted(&props, 0.25),
                median: quantile_sorted(&props, 0.5),
                q75: quantile_sorted(&props, 0.75),
                q975: quantile_sorted(&props, 0.975),
                max: props[props.len() - 1],
            }
        })
        .collect())
}
