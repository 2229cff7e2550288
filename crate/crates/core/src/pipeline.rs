//! Ingestion and preprocessing of reported count time series.
//!
//! Input is one long-format CSV with the header
//! `unit_id,group_id,date,measure,kind,value`. A unit whose `unit_id` equals
//! its `group_id` holds the group's national-level series.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::digits::{CountValue, DigitPosition};
use crate::error::{Error, Result};
use crate::stats::quantile;

pub const CSV_COLUMNS: [&str; 6] = ["unit_id", "group_id", "date", "measure", "kind", "value"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Cases,
    Deaths,
}

impl Measure {
    pub const ALL: [Measure; 2] = [Measure::Cases, Measure::Deaths];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Cases => "cases",
            Measure::Deaths => "deaths",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cases" => Ok(Measure::Cases),
            "deaths" => Ok(Measure::Deaths),
            other => Err(Error::domain(format!("unknown measure `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Daily,
    Cumulative,
}

impl Kind {
    pub const ALL: [Kind; 2] = [Kind::Daily, Kind::Cumulative];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Daily => "daily",
            Kind::Cumulative => "cumulative",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "daily" => Ok(Kind::Daily),
            "cumulative" => Ok(Kind::Cumulative),
            other => Err(Error::domain(format!("unknown kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation<V = i64> {
    pub date: NaiveDate,
    pub value: V,
}

/// Dated counts of one measure and kind for one reporting unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSeries<V = i64> {
    pub unit_id: String,
    pub group_id: String,
    pub measure: Measure,
    pub kind: Kind,
    /// Strictly increasing dates.
    pub points: Vec<Observation<V>>,
    /// Dates of downward revisions: a cumulative value below its predecessor,
    /// or a negative daily value.
    #[serde(default)]
    pub revisions: Vec<NaiveDate>,
}

impl<V> ObservationSeries<V> {
    pub fn is_national(&self) -> bool {
        self.unit_id == self.group_id
    }

    pub fn values(&self) -> impl Iterator<Item = &V> {
        self.points.iter().map(|p| &p.value)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl ObservationSeries<i64> {
    pub fn new(
        unit_id: impl Into<String>,
        group_id: impl Into<String>,
        measure: Measure,
        kind: Kind,
        points: Vec<(NaiveDate, i64)>,
    ) -> Self {
        let mut series = Self {
            unit_id: unit_id.into(),
            group_id: group_id.into(),
            measure,
            kind,
            points: points
                .into_iter()
                .map(|(date, value)| Observation { date, value })
                .collect(),
            revisions: Vec::new(),
        };
        series.flag_revisions();
        series
    }

    fn flag_revisions(&mut self) {
        self.revisions = match self.kind {
            Kind::Daily => self
                .points
                .iter()
                .filter(|p| p.value < 0)
                .map(|p| p.date)
                .collect(),
            Kind::Cumulative => self
                .points
                .windows(2)
                .filter(|w| w[1].value < w[0].value)
                .map(|w| w[1].date)
                .collect(),
        };
    }

    /// Last value on or before `date`, if any.
    pub fn value_as_of(&self, date: NaiveDate) -> Option<i64> {
        let idx = self.points.partition_point(|p| p.date <= date);
        idx.checked_sub(1).map(|i| self.points[i].value)
    }
}

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn load_series(path: impl AsRef<Path>) -> Result<Vec<ObservationSeries>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_series_from_reader(file).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

type SeriesKey = (String, Measure, Kind);

pub fn load_series_from_reader<R: Read>(reader: R) -> Result<Vec<ObservationSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers().map_err(|e| parse_error(1, e.to_string()))?.clone();
    let mut index = [usize::MAX; 6];
    for (pos, name) in headers.iter().enumerate() {
        let Some(col) = CSV_COLUMNS.iter().position(|c| *c == name) else {
            return Err(Error::Validation(format!("unknown column `{name}`")));
        };
        if index[col] != usize::MAX {
            return Err(Error::Validation(format!("duplicate column `{name}`")));
        }
        index[col] = pos;
    }
    if let Some(missing) = (0..6).find(|&c| index[c] == usize::MAX) {
        return Err(Error::Validation(format!(
            "missing column `{}`",
            CSV_COLUMNS[missing]
        )));
    }

    let mut grouped: BTreeMap<SeriesKey, BTreeMap<NaiveDate, i64>> = BTreeMap::new();
    let mut unit_groups: BTreeMap<String, String> = BTreeMap::new();

    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |col: usize| record.get(index[col]).unwrap_or("");

        let unit_id = field(0);
        let group_id = field(1);
        if unit_id.is_empty() || group_id.is_empty() {
            return Err(parse_error(line, "empty unit_id or group_id"));
        }
        let date = NaiveDate::parse_from_str(field(2), "%Y-%m-%d")
            .map_err(|e| parse_error(line, format!("bad date `{}`: {e}", field(2))))?;
        let measure: Measure = field(3)
            .parse()
            .map_err(|e: Error| parse_error(line, e.to_string()))?;
        let kind: Kind = field(4)
            .parse()
            .map_err(|e: Error| parse_error(line, e.to_string()))?;
        let value: i64 = field(5)
            .parse()
            .map_err(|_| parse_error(line, format!("value `{}` is not an integer", field(5))))?;

        match unit_groups.get(unit_id) {
            Some(g) if g != group_id => {
                return Err(Error::Validation(format!(
                    "line {line}: unit `{unit_id}` listed under groups `{g}` and `{group_id}`"
                )))
            }
            Some(_) => {}
            None => {
                unit_groups.insert(unit_id.to_owned(), group_id.to_owned());
            }
        }

        let points = grouped
            .entry((unit_id.to_owned(), measure, kind))
            .or_default();
        if points.insert(date, value).is_some() {
            return Err(Error::Validation(format!(
                "line {line}: duplicate row for ({unit_id}, {date}, {measure}, {kind})"
            )));
        }
    }

    let mut out: Vec<ObservationSeries> = grouped
        .into_iter()
        .map(|((unit_id, measure, kind), points)| {
            let group_id = unit_groups[&unit_id].clone();
            ObservationSeries::new(unit_id, group_id, measure, kind, points.into_iter().collect())
        })
        .collect();
    sort_series(&mut out);
    Ok(out)
}

fn sort_series(series: &mut [ObservationSeries]) {
    series.sort_by(|a, b| {
        (&a.group_id, &a.unit_id, a.measure, a.kind).cmp(&(&b.group_id, &b.unit_id, b.measure, b.kind))
    });
}

/// First differences; the first daily value equals the first cumulative value.
pub fn cumulative_to_daily(series: &ObservationSeries) -> Result<ObservationSeries> {
    if series.kind != Kind::Cumulative {
        return Err(Error::domain(format!(
            "{} {} series is not cumulative",
            series.unit_id, series.measure
        )));
    }
    let mut previous = 0i64;
    let points = series
        .points
        .iter()
        .map(|p| {
            let daily = p.value - previous;
            previous = p.value;
            (p.date, daily)
        })
        .collect();
    Ok(ObservationSeries::new(
        series.unit_id.clone(),
        series.group_id.clone(),
        series.measure,
        Kind::Daily,
        points,
    ))
}

/// Running sum of a daily series.
pub fn daily_to_cumulative(series: &ObservationSeries) -> Result<ObservationSeries> {
    if series.kind != Kind::Daily {
        return Err(Error::domain(format!(
            "{} {} series is not daily",
            series.unit_id, series.measure
        )));
    }
    let mut total = 0i64;
    let points = series
        .points
        .iter()
        .map(|p| {
            total += p.value;
            (p.date, total)
        })
        .collect();
    Ok(ObservationSeries::new(
        series.unit_id.clone(),
        series.group_id.clone(),
        series.measure,
        Kind::Cumulative,
        points,
    ))
}

/// Adds the missing kind for every (unit, measure) that has only one of
/// daily or cumulative.
pub fn complete_kinds(series: &[ObservationSeries]) -> Result<Vec<ObservationSeries>> {
    let present: BTreeSet<(&str, Measure, Kind)> = series
        .iter()
        .map(|s| (s.unit_id.as_str(), s.measure, s.kind))
        .collect();
    let mut out = series.to_vec();
    for s in series {
        let other = match s.kind {
            Kind::Daily => Kind::Cumulative,
            Kind::Cumulative => Kind::Daily,
        };
        if !present.contains(&(s.unit_id.as_str(), s.measure, other)) {
            out.push(match s.kind {
                Kind::Daily => daily_to_cumulative(s)?,
                Kind::Cumulative => cumulative_to_daily(s)?,
            });
        }
    }
    sort_series(&mut out);
    Ok(out)
}

/// Cumulative deaths of a unit as of `date` (0 when the unit reports none).
fn cumulative_deaths(series: &[ObservationSeries], unit_id: &str, date: NaiveDate) -> i64 {
    let find = |kind| {
        series
            .iter()
            .find(|s| s.unit_id == unit_id && s.measure == Measure::Deaths && s.kind == kind)
    };
    if let Some(cum) = find(Kind::Cumulative) {
        return cum.value_as_of(date).unwrap_or(0);
    }
    find(Kind::Daily).map_or(0, |daily| {
        daily
            .points
            .iter()
            .take_while(|p| p.date <= date)
            .map(|p| p.value)
            .sum()
    })
}

/// Identifier of the synthetic unit that absorbs a group's small units.
pub fn aggregate_unit_id(group_id: &str) -> String {
    format!("{group_id}-aggregate")
}

/// Merges units whose cumulative deaths at `reference_date` fall strictly below
/// the `quantile` of the group's per-unit values into one aggregate unit.
///
/// The national series (unit id equal to the group id) is excluded from the
/// quantile and passed through untouched. Merged cumulative series carry each
/// unit's last known value over missing dates; merged daily series treat
/// missing dates as zero.
pub fn aggregate_small_units(
    series: &[ObservationSeries],
    quantile_level: f64,
    reference_date: NaiveDate,
) -> Result<Vec<ObservationSeries>> {
    let Some(first) = series.first() else {
        return Err(Error::domain("no series to aggregate"));
    };
    if !(quantile_level > 0.0 && quantile_level < 1.0) {
        return Err(Error::domain(format!(
            "aggregation quantile {quantile_level} outside (0, 1)"
        )));
    }
    let group_id = first.group_id.clone();
    if let Some(other) = series.iter().find(|s| s.group_id != group_id) {
        return Err(Error::domain(format!(
            "aggregation mixes groups `{group_id}` and `{}`",
            other.group_id
        )));
    }

    let units: BTreeSet<&str> = series
        .iter()
        .filter(|s| !s.is_national())
        .map(|s| s.unit_id.as_str())
        .collect();
    if units.is_empty() {
        return Ok(series.to_vec());
    }
    let deaths: Vec<(&str, i64)> = units
        .iter()
        .map(|&u| (u, cumulative_deaths(series, u, reference_date)))
        .collect();
    let values: Vec<f64> = deaths.iter().map(|&(_, d)| d as f64).collect();
    let threshold = quantile(&values, quantile_level);
    let small: BTreeSet<&str> = deaths
        .iter()
        .filter(|&&(_, d)| (d as f64) < threshold)
        .map(|&(u, _)| u)
        .collect();
    if small.is_empty() {
        return Ok(series.to_vec());
    }

    let mut out: Vec<ObservationSeries> = series
        .iter()
        .filter(|s| !small.contains(s.unit_id.as_str()))
        .cloned()
        .collect();

    let aggregate_id = aggregate_unit_id(&group_id);
    for measure in Measure::ALL {
        for kind in Kind::ALL {
            let parts: Vec<&ObservationSeries> = series
                .iter()
                .filter(|s| small.contains(s.unit_id.as_str()) && s.measure == measure && s.kind == kind)
                .collect();
            if parts.is_empty() {
                continue;
            }
            let dates: BTreeSet<NaiveDate> = parts
                .iter()
                .flat_map(|s| s.points.iter().map(|p| p.date))
                .collect();
            let points = dates
                .into_iter()
                .map(|date| {
                    let total: i64 = parts
                        .iter()
                        .map(|s| match kind {
                            Kind::Cumulative => s.value_as_of(date).unwrap_or(0),
                            Kind::Daily => s
                                .points
                                .binary_search_by_key(&date, |p| p.date)
                                .map_or(0, |i| s.points[i].value),
                        })
                        .sum();
                    (date, total)
                })
                .collect();
            out.push(ObservationSeries::new(
                aggregate_id.clone(),
                group_id.clone(),
                measure,
                kind,
                points,
            ));
        }
    }
    sort_series(&mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjustmentScope {
    /// Goodness-of-fit and independence p-values form separate families.
    #[default]
    Separate,
    /// All p-values of the study are adjusted as one family.
    Pooled,
}

fn default_positions() -> Vec<DigitPosition> {
    DigitPosition::ALL.to_vec()
}
fn default_measures() -> Vec<Measure> {
    Measure::ALL.to_vec()
}
fn default_kinds() -> Vec<Kind> {
    Kind::ALL.to_vec()
}
fn default_second_digit_min() -> u64 {
    10
}
fn default_quantile() -> f64 {
    0.10
}
fn default_replications() -> u32 {
    5000
}
fn default_alpha() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}
fn default_window() -> DateWindow {
    DateWindow {
        start: NaiveDate::from_ymd_opt(2019, 12, 1).expect("valid date"),
        end: NaiveDate::from_ymd_opt(2020, 5, 11).expect("valid date"),
    }
}

fn dates_to_strings(value: &mut toml::Value) {
    match value {
        toml::Value::Datetime(d) => *value = toml::Value::String(d.to_string()),
        toml::Value::Array(items) => items.iter_mut().for_each(dates_to_strings),
        toml::Value::Table(table) => table.iter_mut().for_each(|(_, v)| dates_to_strings(v)),
        _ => {}
    }
}

/// Full description of one study run. Serialized as TOML for config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_positions")]
    pub digit_positions: Vec<DigitPosition>,
    #[serde(default = "default_measures")]
    pub measures: Vec<Measure>,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<Kind>,
    pub groups: Vec<String>,
    #[serde(default)]
    pub cumulative_cutoff_per_group: BTreeMap<String, NaiveDate>,
    #[serde(default = "default_window")]
    pub daily_window: DateWindow,
    #[serde(default = "default_second_digit_min")]
    pub second_digit_min: u64,
    #[serde(default = "default_quantile")]
    pub aggregation_quantile: f64,
    /// Date at which the decile rule is evaluated; defaults to the last date
    /// present in the group's data.
    #[serde(default)]
    pub aggregation_reference_date: Option<NaiveDate>,
    #[serde(default = "default_true")]
    pub aggregate_small_units: bool,
    #[serde(default = "default_replications", alias = "B")]
    pub replications: u32,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    /// Number of interval families sharing the Bonferroni budget; defaults to
    /// the number of datasets.
    #[serde(default)]
    pub ci_families: Option<u32>,
    /// Group compared against the pooled rest; defaults to the first group.
    #[serde(default)]
    pub focal_group: Option<String>,
    #[serde(default)]
    pub adjustment_scope: AdjustmentScope,
}

impl StudyConfig {
    pub fn new(groups: Vec<String>) -> Self {
        Self {
            digit_positions: default_positions(),
            measures: default_measures(),
            kinds: default_kinds(),
            groups,
            cumulative_cutoff_per_group: BTreeMap::new(),
            daily_window: default_window(),
            second_digit_min: default_second_digit_min(),
            aggregation_quantile: default_quantile(),
            aggregation_reference_date: None,
            aggregate_small_units: true,
            replications: default_replications(),
            alpha: default_alpha(),
            seed: 0,
            ci_families: None,
            focal_group: None,
            adjustment_scope: AdjustmentScope::Separate,
        }
    }

    /// Dates may be written as TOML dates or as quoted ISO strings.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (_, value) in table.iter_mut() {
            dates_to_strings(value);
        }
        let config: StudyConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.second_digit_min < 10 {
            return fail(format!(
                "second_digit_min must be >= 10, got {}",
                self.second_digit_min
            ));
        }
        if !(self.aggregation_quantile > 0.0 && self.aggregation_quantile < 1.0) {
            return fail(format!(
                "aggregation_quantile must be in (0, 1), got {}",
                self.aggregation_quantile
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if self.replications == 0 {
            return fail("replications must be >= 1".into());
        }
        if self.ci_families == Some(0) {
            return fail("ci_families must be >= 1".into());
        }
        if self.daily_window.start > self.daily_window.end {
            return fail("daily_window starts after it ends".into());
        }
        if self.digit_positions.is_empty() || self.measures.is_empty() || self.kinds.is_empty() {
            return fail("digit_positions, measures and kinds must be non-empty".into());
        }
        let unique: BTreeSet<&String> = self.groups.iter().collect();
        if unique.len() != self.groups.len() {
            return fail("groups contains duplicates".into());
        }
        if let Some(focal) = &self.focal_group {
            if !self.groups.contains(focal) {
                return fail(format!("focal_group `{focal}` is not among the groups"));
            }
        }
        Ok(())
    }

    /// Focal group for the focal-versus-rest grouping.
    pub fn focal(&self) -> Option<&str> {
        self.focal_group
            .as_deref()
            .or_else(|| self.groups.first().map(String::as_str))
    }
}

/// Clips a daily series to the daily window and a cumulative series at its
/// group's cutoff date. Surviving points are untouched.
pub fn apply_study_window(
    series: &ObservationSeries,
    config: &StudyConfig,
) -> Result<ObservationSeries> {
    let keep: Box<dyn Fn(NaiveDate) -> bool> = match series.kind {
        Kind::Daily => {
            let window = config.daily_window;
            Box::new(move |d| window.contains(d))
        }
        Kind::Cumulative => {
            let cutoff = *config
                .cumulative_cutoff_per_group
                .get(&series.group_id)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "no cumulative cutoff configured for group `{}`",
                        series.group_id
                    ))
                })?;
            Box::new(move |d| d <= cutoff)
        }
    };
    let points: Vec<Observation> = series
        .points
        .iter()
        .filter(|p| keep(p.date))
        .cloned()
        .collect();
    let revisions = series
        .revisions
        .iter()
        .copied()
        .filter(|d| keep(*d))
        .collect();
    Ok(ObservationSeries {
        points,
        revisions,
        ..series.clone()
    })
}

/// Values usable at `position`, in chronological order: positive values for
/// the first digit, values `>= second_digit_min` for the second.
pub fn eligible_values<V: CountValue + Clone>(
    series: &ObservationSeries<V>,
    position: DigitPosition,
    config: &StudyConfig,
) -> Vec<V> {
    let min = match position {
        DigitPosition::First => 1,
        DigitPosition::Second => config.second_digit_min.max(10),
    };
    series
        .values()
        .filter(|v| v.at_least(min))
        .cloned()
        .collect()
}

/// Per-dataset accounting of values that did not reach the digit tally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DataQuality {
    pub points: u64,
    pub negative: u64,
    pub zero: u64,
    /// Positive values below the position's eligibility threshold.
    pub below_threshold: u64,
    pub eligible: u64,
    pub revisions: u64,
}

impl DataQuality {
    pub fn of(series: &ObservationSeries, position: DigitPosition, config: &StudyConfig) -> Self {
        let eligible = eligible_values(series, position, config).len() as u64;
        let negative = series.values().filter(|v| **v < 0).count() as u64;
        let zero = series.values().filter(|v| **v == 0).count() as u64;
        let points = series.len() as u64;
        Self {
            points,
            negative,
            zero,
            below_threshold: points - negative - zero - eligible,
            eligible,
            revisions: series.revisions.len() as u64,
        }
    }

    pub fn merge(&mut self, other: &DataQuality) {
        self.points += other.points;
        self.negative += other.negative;
        self.zero += other.zero;
        self.below_threshold += other.below_threshold;
        self.eligible += other.eligible;
        self.revisions += other.revisions;
    }
}

/// Kind completion, small-unit aggregation and study windows for one group.
pub fn prepare_group(
    series: &[ObservationSeries],
    config: &StudyConfig,
) -> Result<Vec<ObservationSeries>> {
    if series.is_empty() {
        return Ok(Vec::new());
    }
    let completed = complete_kinds(series)?;
    let aggregated = if config.aggregate_small_units {
        let reference = match config.aggregation_reference_date {
            Some(d) => d,
            None => completed
                .iter()
                .filter_map(|s| s.points.last().map(|p| p.date))
                .max()
                .expect("non-empty group"),
        };
        aggregate_small_units(&completed, config.aggregation_quantile, reference)?
    } else {
        completed
    };
    aggregated
        .iter()
        .map(|s| apply_study_window(s, config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, 1).unwrap() + chrono::Days::new(u64::from(day))
    }

    fn series(kind: Kind, values: &[i64]) -> ObservationSeries {
        ObservationSeries::new(
            "u",
            "g",
            Measure::Cases,
            kind,
            values.iter().enumerate().map(|(i, &v)| (d(i as u32), v)).collect(),
        )
    }

    fn values(s: &ObservationSeries) -> Vec<i64> {
        s.values().copied().collect()
    }

    const HEADER: &str = "unit_id,group_id,date,measure,kind,value\n";

    #[test]
    fn loads_six_series_from_three_units() {
        let mut text = HEADER.to_owned();
        for unit in ["a", "b", "c"] {
            for measure in ["cases", "deaths"] {
                text.push_str(&format!("{unit},G,2020-03-02,{measure},daily,4\n"));
                text.push_str(&format!("{unit},G,2020-03-01,{measure},daily,3\n"));
            }
        }
        let loaded = load_series_from_reader(text.as_bytes()).unwrap();
        assert_eq!(loaded.len(), 6);
        for s in &loaded {
            assert_eq!(values(s), vec![3, 4], "dates must be sorted");
        }
    }

    #[test]
    fn rejects_bad_rows() {
        let text = format!("{HEADER}a,G,2020-03-01,cases,daily,12.5\n");
        match load_series_from_reader(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = format!("{HEADER}a,G,2020-03-01,cases,daily,1\na,G,2020-03-01,cases,daily,2\n");
        assert!(matches!(
            load_series_from_reader(text.as_bytes()),
            Err(Error::Validation(_))
        ));
        let text = "unit_id,group_id,date,measure,kind,value,extra\n";
        assert!(matches!(
            load_series_from_reader(text.as_bytes()),
            Err(Error::Validation(_))
        ));
        let text = format!("{HEADER}a,G,03/01/2020,cases,daily,1\n");
        assert!(matches!(
            load_series_from_reader(text.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        let text = format!("{HEADER}a,G,2020-03-01,recovered,daily,1\n");
        assert!(matches!(
            load_series_from_reader(text.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        let text = format!("{HEADER}a,G,2020-03-01,cases,daily,1\na,H,2020-03-02,cases,daily,1\n");
        assert!(matches!(
            load_series_from_reader(text.as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn kind_conversions() {
        let daily = cumulative_to_daily(&series(Kind::Cumulative, &[1, 3, 6])).unwrap();
        assert_eq!(values(&daily), vec![1, 2, 3]);
        assert_eq!(daily.kind, Kind::Daily);

        let plateau = cumulative_to_daily(&series(Kind::Cumulative, &[5, 5, 5])).unwrap();
        assert_eq!(values(&plateau), vec![5, 0, 0]);

        let revised = cumulative_to_daily(&series(Kind::Cumulative, &[10, 8])).unwrap();
        assert_eq!(values(&revised), vec![10, -2]);
        assert_eq!(revised.revisions, vec![d(1)]);

        let cum = daily_to_cumulative(&series(Kind::Daily, &[1, 2, 3])).unwrap();
        assert_eq!(values(&cum), vec![1, 3, 6]);
        assert!(daily_to_cumulative(&series(Kind::Daily, &[])).unwrap().is_empty());

        assert!(daily_to_cumulative(&series(Kind::Cumulative, &[1])).is_err());
        assert!(cumulative_to_daily(&series(Kind::Daily, &[1])).is_err());
    }

    fn unit_deaths(unit: &str, total: i64) -> ObservationSeries {
        ObservationSeries::new(
            unit,
            "G",
            Measure::Deaths,
            Kind::Cumulative,
            vec![(d(0), total / 2), (d(1), total)],
        )
    }

    #[test]
    fn decile_rule_merges_smallest_unit() {
        let input: Vec<ObservationSeries> = (1..=10)
            .map(|k| unit_deaths(&format!("u{k:02}"), k))
            .collect();
        let out = aggregate_small_units(&input, 0.10, d(1)).unwrap();
        assert_eq!(out.len(), 10);
        let agg: Vec<_> = out.iter().filter(|s| s.unit_id == "G-aggregate").collect();
        assert_eq!(agg.len(), 1);
        assert_eq!(values(agg[0]), vec![0, 1]);
        assert!(!out.iter().any(|s| s.unit_id == "u01"));
    }

    #[test]
    fn decile_rule_leaves_equal_units_alone() {
        let input: Vec<ObservationSeries> = (1..=5).map(|k| unit_deaths(&format!("u{k}"), 7)).collect();
        assert_eq!(aggregate_small_units(&input, 0.10, d(1)).unwrap(), input);
        let two = vec![unit_deaths("a", 3), unit_deaths("b", 9)];
        // the 0.10 quantile of (3, 9) is 3.6, so `a` merges alone
        let out = aggregate_small_units(&two, 0.10, d(1)).unwrap();
        assert!(out.iter().any(|s| s.unit_id == "G-aggregate"));
        assert!(aggregate_small_units(&[], 0.1, d(1)).is_err());
    }

    #[test]
    fn national_series_passes_through() {
        let mut input: Vec<ObservationSeries> = (1..=10)
            .map(|k| unit_deaths(&format!("u{k:02}"), k * 10))
            .collect();
        let mut national = unit_deaths("G", 1);
        national.unit_id = "G".into();
        input.push(national.clone());
        let out = aggregate_small_units(&input, 0.10, d(1)).unwrap();
        assert!(out.contains(&national));
        assert!(out.iter().any(|s| s.unit_id == "G-aggregate"));
    }

    fn config() -> StudyConfig {
        let mut c = StudyConfig::new(vec!["g".into()]);
        c.cumulative_cutoff_per_group.insert("g".into(), d(2));
        c.daily_window = DateWindow { start: d(0), end: d(10) };
        c
    }

    #[test]
    fn study_window() {
        let cfg = config();
        let cum = series(Kind::Cumulative, &[1, 2, 3, 3, 3, 3]);
        assert_eq!(values(&apply_study_window(&cum, &cfg).unwrap()), vec![1, 2, 3]);

        let daily = series(Kind::Daily, &[4, 5, 6]);
        assert_eq!(apply_study_window(&daily, &cfg).unwrap(), daily);

        let mut early = cfg.clone();
        early.cumulative_cutoff_per_group.insert("g".into(), d(0) - chrono::Days::new(5));
        assert!(apply_study_window(&cum, &early).unwrap().is_empty());

        let mut missing = cfg.clone();
        missing.cumulative_cutoff_per_group.clear();
        assert!(matches!(apply_study_window(&cum, &missing), Err(Error::Config(_))));
    }

    #[test]
    fn eligibility_filters() {
        let cfg = config();
        let s = series(Kind::Daily, &[0, 5, 12, -2, 130]);
        assert_eq!(eligible_values(&s, DigitPosition::First, &cfg), vec![5, 12, 130]);
        assert_eq!(eligible_values(&s, DigitPosition::Second, &cfg), vec![12, 130]);
        let mut strict = cfg.clone();
        strict.second_digit_min = 11;
        let s10 = series(Kind::Daily, &[10, 11]);
        assert_eq!(eligible_values(&s10, DigitPosition::Second, &cfg), vec![10, 11]);
        assert_eq!(eligible_values(&s10, DigitPosition::Second, &strict), vec![11]);
        assert!(eligible_values(&series(Kind::Daily, &[]), DigitPosition::First, &cfg).is_empty());

        let q = DataQuality::of(&s, DigitPosition::Second, &cfg);
        assert_eq!((q.negative, q.zero, q.below_threshold, q.eligible), (1, 1, 1, 2));
    }

    #[test]
    fn config_round_trip_and_validation() {
        let text = r#"
            groups = ["China", "Canada"]
            B = 200
            seed = 7
            [cumulative_cutoff_per_group]
            China = "2020-02-15"
            Canada = 2020-04-15
        "#;
        let cfg = StudyConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.replications, 200);
        assert_eq!(cfg.second_digit_min, 10);
        assert_eq!(cfg.focal(), Some("China"));
        assert_eq!(cfg.cumulative_cutoff_per_group["Canada"], NaiveDate::from_ymd_opt(2020, 4, 15).unwrap());
        let again = StudyConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);

        assert!(StudyConfig::from_toml_str("groups = []\nsecond_digit_min = 9").is_err());
        assert!(StudyConfig::from_toml_str("groups = []\nbogus = 1").is_err());
        assert!(StudyConfig::from_toml_str("groups = [\"a\"]\nfocal_group = \"b\"").is_err());
    }

    proptest! {
        #[test]
        fn conversions_round_trip(daily in proptest::collection::vec(-50i64..500, 0..40)) {
            let s = series(Kind::Daily, &daily);
            let back = cumulative_to_daily(&daily_to_cumulative(&s).unwrap()).unwrap();
            prop_assert_eq!(values(&back), daily);
        }

        #[test]
        fn aggregation_conserves_totals(
            totals in proptest::collection::vec(proptest::collection::vec(0i64..1000, 5), 2..12),
            q in 0.05f64..0.95,
        ) {
            // complete date grids, so every date is reported by every unit
            let input: Vec<ObservationSeries> = totals
                .iter()
                .enumerate()
                .flat_map(|(u, daily)| {
                    let s = ObservationSeries::new(
                        format!("u{u:02}"), "G", Measure::Deaths, Kind::Daily,
                        daily.iter().enumerate().map(|(i, &v)| (d(i as u32), v)).collect(),
                    );
                    let c = daily_to_cumulative(&s).unwrap();
                    [s, c]
                })
                .collect();
            let out = aggregate_small_units(&input, q, d(4)).unwrap();
            for kind in Kind::ALL {
                for day in 0..5u32 {
                    let sum = |v: &[ObservationSeries]| -> i64 {
                        v.iter().filter(|s| s.kind == kind).map(|s| s.points[day as usize].value).sum()
                    };
                    prop_assert_eq!(sum(&input), sum(&out));
                }
            }
        }

        #[test]
        fn window_preserves_surviving_values(values in proptest::collection::vec(0i64..1000, 0..20), cut in 0u32..25) {
            let mut cfg = config();
            cfg.cumulative_cutoff_per_group.insert("g".into(), d(cut));
            let s = series(Kind::Cumulative, &values);
            let w = apply_study_window(&s, &cfg).unwrap();
            prop_assert_eq!(&s.points[..w.len()], &w.points[..]);
        }
    }
}
