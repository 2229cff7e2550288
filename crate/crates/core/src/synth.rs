//! Synthetic growth curves for empirical digit-law conformance checks.
//!
//! Long geometric runs overflow 64-bit integers, so generated series carry
//! arbitrary-precision values. Values below 2^53 are rounded exactly from
//! `f64`; larger values keep 16 significant digits taken from the base-10
//! logarithm, which is all an `f64` computation can resolve anyway.

use chrono::NaiveDate;
use num_bigint::BigUint;
use num_traits::Pow;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::digits::{tally_digits, total_variation, DigitDistribution, DigitPosition};
use crate::error::{Error, Result};
use crate::inference::mc_gof_test;
use crate::pipeline::{eligible_values, Kind, Measure, Observation, ObservationSeries, StudyConfig};
use crate::stats::derive_seed;

const EXACT_LIMIT: f64 = 9_007_199_254_740_992.0; // 2^53

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthModel {
    Geometric,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthSpec {
    pub model: GrowthModel,
    pub initial: f64,
    pub rate: f64,
    /// Carrying capacity, logistic model only.
    #[serde(default)]
    pub capacity: Option<f64>,
    /// Number of generated days.
    pub horizon: u32,
    /// Standard deviation of the multiplicative log-normal noise.
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

impl GrowthSpec {
    pub fn geometric(initial: f64, rate: f64, horizon: u32) -> Self {
        Self {
            model: GrowthModel::Geometric,
            initial,
            rate,
            capacity: None,
            horizon,
            noise_sd: 0.0,
            seed: 0,
        }
    }

    pub fn logistic(initial: f64, rate: f64, capacity: f64, horizon: u32) -> Self {
        Self {
            model: GrowthModel::Logistic,
            capacity: Some(capacity),
            ..Self::geometric(initial, rate, horizon)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.initial) {
            return Err(Error::domain(format!("initial value {} must be positive", self.initial)));
        }
        if !positive(self.rate) {
            return Err(Error::domain(format!("rate {} must be positive", self.rate)));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::domain(format!("noise_sd {} must be >= 0", self.noise_sd)));
        }
        if self.horizon == 0 {
            return Err(Error::domain("horizon must be at least one day"));
        }
        match (self.model, self.capacity) {
            (GrowthModel::Logistic, Some(k)) if k.is_finite() && k > self.initial => Ok(()),
            (GrowthModel::Logistic, _) => Err(Error::domain(
                "logistic growth needs a finite capacity above the initial value",
            )),
            (GrowthModel::Geometric, _) => Ok(()),
        }
    }
}

/// Rounds a positive quantity given both directly (when representable) and
/// by its base-10 logarithm.
fn round_to_integer(direct: f64, log10_value: f64) -> BigUint {
    if direct.is_finite() && direct < EXACT_LIMIT {
        return BigUint::from(direct.round().max(0.0) as u64);
    }
    let exponent = log10_value.floor();
    let mantissa = 10f64.powf(log10_value - exponent);
    let digits = BigUint::from((mantissa * 1e15).round() as u64);
    let shift = (exponent as i64 - 15).max(0) as u32;
    digits * BigUint::from(10u32).pow(shift)
}

pub fn series_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date")
}

/// Cumulative series `value_t` for `t = 0..horizon`, rounded after noise.
pub fn generate_series(spec: &GrowthSpec) -> Result<ObservationSeries<BigUint>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::domain(e.to_string()))?;
    let start = series_start();

    let mut points = Vec::with_capacity(spec.horizon as usize);
    for t in 0..spec.horizon {
        let eps = if spec.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        let tf = f64::from(t);
        let (direct, log10_value) = match spec.model {
            GrowthModel::Geometric => (
                spec.initial * spec.rate.powi(t as i32) * eps.exp(),
                spec.initial.log10() + tf * spec.rate.log10() + eps / std::f64::consts::LN_10,
            ),
            GrowthModel::Logistic => {
                let k = spec.capacity.expect("validated");
                let v = k / (1.0 + (k - spec.initial) / spec.initial * (-spec.rate * tf).exp());
                let noisy = v * eps.exp();
                (noisy, noisy.log10())
            }
        };
        points.push(Observation {
            date: start + chrono::Days::new(u64::from(t)),
            value: round_to_integer(direct, log10_value),
        });
    }
    Ok(ObservationSeries {
        unit_id: "synthetic".into(),
        group_id: "synthetic".into(),
        measure: Measure::Cases,
        kind: Kind::Cumulative,
        points,
        revisions: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub spec: GrowthSpec,
    pub position: DigitPosition,
    pub n: u64,
    /// Generated values without a digit at this position.
    pub ineligible: u64,
    pub statistic: Option<f64>,
    pub p_raw: Option<f64>,
    pub tv_distance: Option<f64>,
    pub rejected: Option<bool>,
    /// Why the row was not tested.
    pub note: Option<String>,
}

/// Runs the eligibility filters and a Monte-Carlo goodness-of-fit test against
/// the Newcomb-Benford law for every spec.
pub fn conformance_sweep(
    specs: &[GrowthSpec],
    position: DigitPosition,
    replications: u32,
    alpha: f64,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if specs.is_empty() {
        return Err(Error::domain("conformance sweep needs at least one spec"));
    }
    let benford = DigitDistribution::benford(position);
    let config = StudyConfig::new(Vec::new());
    specs
        .iter()
        .enumerate()
        .map(|(index, spec)| {
            let series = generate_series(spec)?;
            let values = eligible_values(&series, position, &config);
            let tally = tally_digits(&values, position)?;
            let ineligible = series.len() as u64 - tally.n;
            let mut row = SweepRow {
                index,
                spec: spec.clone(),
                position,
                n: tally.n,
                ineligible,
                statistic: None,
                p_raw: None,
                tv_distance: None,
                rejected: None,
                note: None,
            };
            if tally.n == 0 {
                row.note = Some("no eligible values".into());
                return Ok(row);
            }
            let result = mc_gof_test(&tally, &benford, replications, derive_seed(seed, index as u64))?;
            row.statistic = Some(result.statistic);
            row.p_raw = Some(result.p_raw);
            row.tv_distance = Some(total_variation(&tally, &benford)?);
            row.rejected = Some(result.p_raw < alpha);
            Ok(row)
        })
        .collect()
}

/// Sweep description read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    #[serde(default = "default_position")]
    pub position: DigitPosition,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub replications: Option<u32>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub specs: Vec<GrowthSpec>,
}

fn default_position() -> DigitPosition {
    DigitPosition::First
}

fn default_alpha() -> f64 {
    0.05
}

impl SweepFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SweepFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if !(file.alpha > 0.0 && file.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1), got {}", file.alpha)));
        }
        for spec in &file.specs {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(file)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}
