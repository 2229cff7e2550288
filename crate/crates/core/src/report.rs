//! Study orchestration and machine-readable result tables.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adjust::{bh_adjust, bonferroni_level, by_adjust, PValueEntry, PValueFamily};
use crate::digits::{tally_digits, DigitCounts, DigitDistribution, DigitPosition};
use crate::error::{Error, Result};
use crate::inference::{
    mc_gof_test, mc_independence_test, violin_quantiles, ContingencyTable, DigitQuantiles,
    TestResult,
};
use crate::pipeline::{
    eligible_values, load_series, prepare_group, AdjustmentScope, DataQuality, Kind, Measure,
    ObservationSeries, StudyConfig,
};
use crate::simultci::{sison_glaz_intervals, IntervalSet};
use crate::stats::derive_seed;
use crate::synth::SweepRow;

pub const SCHEMA_VERSION: u32 = 1;

const STAGE_GOF: u64 = 1;
const STAGE_VIOLIN: u64 = 2;
const STAGE_INDEPENDENCE: u64 = 3;

/// One digit-count distribution: a digit position, measure and kind for one group.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DatasetKey {
    pub position: DigitPosition,
    pub measure: Measure,
    pub kind: Kind,
    pub group: String,
}

impl fmt::Display for DatasetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}/{}", self.position, self.kind, self.measure, self.group)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub dataset: DatasetKey,
    pub n: u64,
    pub counts: Vec<u64>,
    /// Observed proportions; all zero when `n == 0`.
    pub proportions: Vec<f64>,
    pub benford: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolinTable {
    pub dataset: DatasetKey,
    pub n: u64,
    pub replications: u32,
    pub seed: u64,
    pub quantiles: Vec<DigitQuantiles>,
}

/// A family of Monte-Carlo tests with its jointly adjusted p-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFamily {
    pub tests: Vec<TestResult>,
    /// Adjusted over `family.name`; when the study pools all tests the
    /// adjustment spans both goodness-of-fit and independence results.
    pub family: PValueFamily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIntervals {
    pub dataset: DatasetKey,
    pub intervals: IntervalSet,
    pub benford: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSize {
    pub dataset: DatasetKey,
    pub n: u64,
    /// Eligible values without a digit at this position.
    pub skipped: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetQuality {
    pub dataset: DatasetKey,
    #[serde(flatten)]
    pub quality: DataQuality,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub item: String,
    pub stage: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema_version: u32,
    pub config_echo: StudyConfig,
    pub frequency_tables: Vec<FrequencyTable>,
    pub violin_tables: Vec<ViolinTable>,
    pub gof_results: TestFamily,
    pub independence_results: TestFamily,
    pub interval_sets: Vec<DatasetIntervals>,
    pub sample_size_table: Vec<SampleSize>,
    pub data_quality: Vec<DatasetQuality>,
    pub skipped: Vec<SkippedItem>,
}

impl StudyReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Loads every input file and runs the study.
pub fn run_study(config: &StudyConfig, input_paths: &[PathBuf]) -> Result<StudyReport> {
    let mut series = Vec::new();
    for path in input_paths {
        series.extend(load_series(path)?);
    }
    run_study_on_series(config, series)
}

/// Runs the study on already loaded series.
pub fn run_study_on_series(
    config: &StudyConfig,
    series: Vec<ObservationSeries>,
) -> Result<StudyReport> {
    config.validate()?;

    let mut by_group: BTreeMap<String, Vec<ObservationSeries>> = BTreeMap::new();
    for s in series {
        by_group.entry(s.group_id.clone()).or_default().push(s);
    }
    for members in by_group.values() {
        let mut keys: Vec<_> = members.iter().map(|s| (&s.unit_id, s.measure, s.kind)).collect();
        let total = keys.len();
        keys.sort();
        keys.dedup();
        if keys.len() != total {
            return Err(Error::Validation(format!(
                "group `{}` has the same series in more than one input",
                members[0].group_id
            )));
        }
    }

    let mut prepared: BTreeMap<&str, Vec<ObservationSeries>> = BTreeMap::new();
    for group in &config.groups {
        let raw = by_group.get(group).ok_or_else(|| {
            Error::Validation(format!("no input series for configured group `{group}`"))
        })?;
        let ready = prepare_group(raw, config).map_err(|e| e.at_stage(group.clone(), "preprocessing"))?;
        prepared.insert(group.as_str(), ready);
    }

    let mut tallies: Vec<(DatasetKey, DigitCounts, DataQuality)> = Vec::new();
    for &position in &config.digit_positions {
        for &kind in &config.kinds {
            for &measure in &config.measures {
                for group in &config.groups {
                    let key = DatasetKey {
                        position,
                        measure,
                        kind,
                        group: group.clone(),
                    };
                    let mut values = Vec::new();
                    let mut quality = DataQuality::default();
                    for s in prepared[group.as_str()]
                        .iter()
                        .filter(|s| s.measure == measure && s.kind == kind)
                    {
                        values.extend(eligible_values(s, position, config));
                        quality.merge(&DataQuality::of(s, position, config));
                    }
                    let tally = tally_digits(&values, position)
                        .map_err(|e| e.at_stage(key.to_string(), "tally"))?;
                    tallies.push((key, tally, quality));
                }
            }
        }
    }

    let mut report = StudyReport {
        schema_version: SCHEMA_VERSION,
        config_echo: config.clone(),
        frequency_tables: Vec::new(),
        violin_tables: Vec::new(),
        gof_results: TestFamily {
            tests: Vec::new(),
            family: PValueFamily::new("goodness_of_fit", Vec::new()),
        },
        independence_results: TestFamily {
            tests: Vec::new(),
            family: PValueFamily::new("independence", Vec::new()),
        },
        interval_sets: Vec::new(),
        sample_size_table: Vec::new(),
        data_quality: Vec::new(),
        skipped: Vec::new(),
    };

    let families = config.ci_families.unwrap_or(tallies.len().max(1) as u32);
    let confidence = 1.0 - bonferroni_level(config.alpha, families)?;
    let gof_seed = derive_seed(config.seed, STAGE_GOF);
    let violin_seed = derive_seed(config.seed, STAGE_VIOLIN);

    for (idx, (key, tally, quality)) in tallies.iter().enumerate() {
        let benford = DigitDistribution::benford(key.position);
        let label = key.to_string();
        report.sample_size_table.push(SampleSize {
            dataset: key.clone(),
            n: tally.n,
            skipped: tally.skipped,
        });
        report.data_quality.push(DatasetQuality {
            dataset: key.clone(),
            quality: *quality,
        });
        report.frequency_tables.push(FrequencyTable {
            dataset: key.clone(),
            n: tally.n,
            counts: tally.counts.clone(),
            proportions: tally.proportions(),
            benford: benford.probabilities().to_vec(),
        });
        if tally.n == 0 {
            report.skipped.push(SkippedItem {
                item: label,
                stage: "dataset".into(),
                reason: "no eligible values after preprocessing".into(),
            });
            continue;
        }

        let seed = derive_seed(gof_seed, idx as u64);
        let gof = mc_gof_test(tally, &benford, config.replications, seed)
            .map_err(|e| e.at_stage(label.clone(), "goodness-of-fit test"))?;
        report.gof_results.tests.push(gof.with_label(label.clone()));

        let seed = derive_seed(violin_seed, idx as u64);
        let quantiles = violin_quantiles(&benford, tally.n, config.replications, seed)
            .map_err(|e| e.at_stage(label.clone(), "null quantiles"))?;
        report.violin_tables.push(ViolinTable {
            dataset: key.clone(),
            n: tally.n,
            replications: config.replications,
            seed,
            quantiles,
        });

        let intervals = sison_glaz_intervals(tally, confidence)
            .map_err(|e| e.at_stage(label.clone(), "simultaneous intervals"))?;
        report.interval_sets.push(DatasetIntervals {
            dataset: key.clone(),
            intervals,
            benford: benford.probabilities().to_vec(),
        });
    }

    run_independence(config, &tallies, &mut report)?;
    adjust_families(config.adjustment_scope, &mut report)?;
    Ok(report)
}

fn run_independence(
    config: &StudyConfig,
    tallies: &[(DatasetKey, DigitCounts, DataQuality)],
    report: &mut StudyReport,
) -> Result<()> {
    let seed_base = derive_seed(config.seed, STAGE_INDEPENDENCE);
    let focal = config.focal();
    let mut test_index = 0u64;

    for &position in &config.digit_positions {
        for &kind in &config.kinds {
            for &measure in &config.measures {
                let distribution = format!("{position}/{kind}/{measure}");
                let rows: Vec<(&str, &DigitCounts)> = tallies
                    .iter()
                    .filter(|(k, _, _)| k.position == position && k.kind == kind && k.measure == measure)
                    .map(|(k, t, _)| (k.group.as_str(), t))
                    .collect();
                if rows.len() < 2 {
                    for grouping in ["all groups", "focal vs rest"] {
                        report.skipped.push(SkippedItem {
                            item: format!("{distribution}: {grouping}"),
                            stage: "independence test".into(),
                            reason: "fewer than two groups".into(),
                        });
                    }
                    continue;
                }
                let cols: Vec<String> = position.digits().map(|d| d.to_string()).collect();

                let all = ContingencyTable::new(
                    rows.iter().map(|(g, _)| g.to_string()).collect(),
                    cols.clone(),
                    rows.iter().map(|(_, t)| t.counts.clone()).collect(),
                )?;

                let focal = focal.expect("at least two groups");
                let mut focal_counts = vec![0u64; cols.len()];
                let mut rest_counts = vec![0u64; cols.len()];
                for (g, t) in &rows {
                    let target = if *g == focal { &mut focal_counts } else { &mut rest_counts };
                    for (acc, c) in target.iter_mut().zip(&t.counts) {
                        *acc += c;
                    }
                }
                let versus = ContingencyTable::new(
                    vec![focal.to_string(), "rest".to_string()],
                    cols,
                    vec![focal_counts, rest_counts],
                )?;

                for (table, grouping) in [(all, "all groups".to_string()), (versus, format!("{focal} vs rest"))] {
                    let label = format!("{distribution}: {grouping}");
                    let seed = derive_seed(seed_base, test_index);
                    test_index += 1;
                    let result = mc_independence_test(&table, config.replications, seed)
                        .map_err(|e| e.at_stage(label.clone(), "independence test"))?;
                    report.independence_results.tests.push(result.with_label(label));
                }
            }
        }
    }
    Ok(())
}

fn entries(tests: &[TestResult]) -> Vec<PValueEntry> {
    tests
        .iter()
        .map(|t| PValueEntry {
            label: t.label.clone(),
            p_raw: t.p_raw,
        })
        .collect()
}

fn adjust_families(scope: AdjustmentScope, report: &mut StudyReport) -> Result<()> {
    let gof = entries(&report.gof_results.tests);
    let ind = entries(&report.independence_results.tests);
    match scope {
        AdjustmentScope::Separate => {
            report.gof_results.family = PValueFamily::new("goodness_of_fit", gof);
            report.gof_results.family.adjust()?;
            report.independence_results.family = PValueFamily::new("independence", ind);
            report.independence_results.family.adjust()?;
        }
        AdjustmentScope::Pooled => {
            let split = gof.len();
            let raw: Vec<f64> = gof.iter().chain(&ind).map(|e| e.p_raw).collect();
            let (bh, by) = if raw.is_empty() {
                (Vec::new(), Vec::new())
            } else {
                (bh_adjust(&raw)?, by_adjust(&raw)?)
            };
            report.gof_results.family = PValueFamily {
                name: "pooled".into(),
                entries: gof,
                adjusted_bh: Some(bh[..split].to_vec()),
                adjusted_by: Some(by[..split].to_vec()),
            };
            report.independence_results.family = PValueFamily {
                name: "pooled".into(),
                entries: ind,
                adjusted_bh: Some(bh[split..].to_vec()),
                adjusted_by: Some(by[split..].to_vec()),
            };
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    CsvBundle,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv-bundle" => Ok(ReportFormat::CsvBundle),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

/// File names of the csv bundle, one per report table.
pub const CSV_BUNDLE_FILES: [&str; 7] = [
    "frequency_tables.csv",
    "violin_tables.csv",
    "gof_results.csv",
    "independence_results.csv",
    "interval_sets.csv",
    "sample_size_table.csv",
    "data_quality.csv",
];

struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl CsvOut {
    fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self> {
        let path = dir.join(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = Self {
            path,
            writer: csv::Writer::from_writer(file),
        };
        let mut full = vec!["schema_version"];
        full.extend_from_slice(header);
        out.row(full.iter().map(|s| s.to_string()).collect())?;
        Ok(out)
    }

    fn row(&mut self, fields: Vec<String>) -> Result<()> {
        self.writer
            .write_record(&fields)
            .map_err(|e| Error::Serialization(format!("{}: {e}", self.path.display())))
    }

    fn data(&mut self, mut fields: Vec<String>) -> Result<()> {
        fields.insert(0, SCHEMA_VERSION.to_string());
        self.row(fields)
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.path)
    }
}

fn key_fields(key: &DatasetKey) -> Vec<String> {
    vec![
        key.to_string(),
        key.position.to_string(),
        key.kind.to_string(),
        key.measure.to_string(),
        key.group.clone(),
    ]
}

const KEY_HEADER: [&str; 5] = ["dataset", "position", "kind", "measure", "group"];

fn header(extra: &[&'static str]) -> Vec<&'static str> {
    KEY_HEADER.iter().chain(extra).copied().collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_family(dir: &Path, name: &str, results: &TestFamily) -> Result<PathBuf> {
    let mut out = CsvOut::create(
        dir,
        name,
        &[
            "label", "family", "test_kind", "n", "statistic", "degrees_of_freedom", "replications",
            "seed", "p_raw", "p_bh", "p_by", "p_asymptotic",
        ],
    )?;
    let fam = &results.family;
    for (i, t) in results.tests.iter().enumerate() {
        let kind = serde_json::to_value(t.test_kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        out.data(vec![
            t.label.clone(),
            fam.name.clone(),
            kind,
            t.n.to_string(),
            t.statistic.to_string(),
            t.degrees_of_freedom.to_string(),
            t.replications.to_string(),
            t.seed.to_string(),
            t.p_raw.to_string(),
            opt(fam.adjusted_bh.as_ref().map(|v| v[i])),
            opt(fam.adjusted_by.as_ref().map(|v| v[i])),
            t.p_asymptotic.to_string(),
        ])?;
    }
    out.finish()
}

fn write_csv_bundle(report: &StudyReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();

    let mut out = CsvOut::create(dir, CSV_BUNDLE_FILES[0], &header(&["n", "digit", "count", "proportion", "benford"]))?;
    for t in &report.frequency_tables {
        for (i, digit) in t.dataset.position.digits().enumerate() {
            let mut row = key_fields(&t.dataset);
            row.extend([
                t.n.to_string(),
                digit.to_string(),
                t.counts[i].to_string(),
                t.proportions[i].to_string(),
                t.benford[i].to_string(),
            ]);
            out.data(row)?;
        }
    }
    written.push(out.finish()?);

    let mut out = CsvOut::create(
        dir,
        CSV_BUNDLE_FILES[1],
        &header(&["n", "replications", "seed", "digit", "min", "q025", "q25", "median", "q75", "q975", "max"]),
    )?;
    for t in &report.violin_tables {
        for q in &t.quantiles {
            let mut row = key_fields(&t.dataset);
            row.extend([t.n.to_string(), t.replications.to_string(), t.seed.to_string(), q.digit.to_string()]);
            row.extend(q.as_array().iter().map(|v| v.to_string()));
            out.data(row)?;
        }
    }
    written.push(out.finish()?);

    written.push(write_family(dir, CSV_BUNDLE_FILES[2], &report.gof_results)?);
    written.push(write_family(dir, CSV_BUNDLE_FILES[3], &report.independence_results)?);

    let mut out = CsvOut::create(
        dir,
        CSV_BUNDLE_FILES[4],
        &header(&["n", "confidence", "c_value", "gamma", "digit", "proportion", "lower", "upper", "benford"]),
    )?;
    for set in &report.interval_sets {
        let iv = &set.intervals;
        for (i, digit) in set.dataset.position.digits().enumerate() {
            let mut row = key_fields(&set.dataset);
            row.extend([
                iv.n.to_string(),
                iv.confidence.to_string(),
                iv.c_value.to_string(),
                iv.gamma.to_string(),
                digit.to_string(),
                iv.proportions[i].to_string(),
                iv.lower[i].to_string(),
                iv.upper[i].to_string(),
                set.benford[i].to_string(),
            ]);
            out.data(row)?;
        }
    }
    written.push(out.finish()?);

    let mut out = CsvOut::create(dir, CSV_BUNDLE_FILES[5], &header(&["n", "skipped"]))?;
    for s in &report.sample_size_table {
        let mut row = key_fields(&s.dataset);
        row.extend([s.n.to_string(), s.skipped.to_string()]);
        out.data(row)?;
    }
    written.push(out.finish()?);

    let mut out = CsvOut::create(
        dir,
        CSV_BUNDLE_FILES[6],
        &header(&["points", "negative", "zero", "below_threshold", "eligible", "revisions"]),
    )?;
    for q in &report.data_quality {
        let d = &q.quality;
        let mut row = key_fields(&q.dataset);
        row.extend(
            [d.points, d.negative, d.zero, d.below_threshold, d.eligible, d.revisions]
                .iter()
                .map(u64::to_string),
        );
        out.data(row)?;
    }
    written.push(out.finish()?);

    Ok(written)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the report into `dir`; returns the paths written.
pub fn write_report(report: &StudyReport, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    match format {
        ReportFormat::Json => {
            let path = dir.join("report.json");
            fs::write(&path, report.to_json()?).map_err(|e| Error::io(&path, e))?;
            Ok(vec![path])
        }
        ReportFormat::CsvBundle => write_csv_bundle(report, dir),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub replications: u32,
    pub seed: u64,
    pub alpha: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Writes `sweep.json` and `sweep.csv` into `dir`.
pub fn write_sweep(sweep: &SweepReport, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let json_path = dir.join("sweep.json");
    fs::write(&json_path, sweep.to_json()?).map_err(|e| Error::io(&json_path, e))?;

    let mut out = CsvOut::create(
        dir,
        "sweep.csv",
        &[
            "index", "model", "initial", "rate", "capacity", "horizon", "noise_sd", "spec_seed",
            "position", "n", "ineligible", "statistic", "p_raw", "tv_distance", "rejected", "note",
        ],
    )?;
    for r in &sweep.rows {
        let model = serde_json::to_value(r.spec.model)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        out.data(vec![
            r.index.to_string(),
            model,
            r.spec.initial.to_string(),
            r.spec.rate.to_string(),
            opt(r.spec.capacity),
            r.spec.horizon.to_string(),
            r.spec.noise_sd.to_string(),
            r.spec.seed.to_string(),
            r.position.to_string(),
            r.n.to_string(),
            r.ineligible.to_string(),
            opt(r.statistic),
            opt(r.p_raw),
            opt(r.tv_distance),
            r.rejected.map(|b| b.to_string()).unwrap_or_default(),
            r.note.clone().unwrap_or_default(),
        ])?;
    }
    Ok(vec![json_path, out.finish()?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn d(day: u64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 2, 1).unwrap() + chrono::Days::new(day)
    }

    /// Two groups, each with three units of noisy exponential growth.
    fn toy_series() -> Vec<ObservationSeries> {
        let mut out = Vec::new();
        for (g, group) in ["A", "B"].iter().enumerate() {
            for u in 0..3 {
                for (m, measure) in Measure::ALL.iter().enumerate() {
                    let mut value = 1.0 + (u + m) as f64;
                    let points = (0..60)
                        .map(|t| {
                            value *= 1.07 + 0.01 * ((t * (u + 2) + g) % 5) as f64;
                            (d(t as u64), value.round() as i64)
                        })
                        .collect();
                    out.push(ObservationSeries::new(
                        format!("{group}{u}"),
                        *group,
                        *measure,
                        Kind::Cumulative,
                        points,
                    ));
                }
            }
        }
        out
    }

    fn toy_config() -> StudyConfig {
        let mut cfg = StudyConfig::new(vec!["A".into(), "B".into()]);
        cfg.replications = 199;
        cfg.seed = 17;
        cfg.daily_window.start = d(0);
        cfg.daily_window.end = d(100);
        for g in ["A", "B"] {
            cfg.cumulative_cutoff_per_group.insert(g.into(), d(50));
        }
        cfg
    }

    #[test]
    fn toy_study_shapes() {
        let report = run_study_on_series(&toy_config(), toy_series()).unwrap();
        assert_eq!(report.frequency_tables.len(), 16);
        assert_eq!(report.gof_results.tests.len(), 16);
        assert_eq!(report.interval_sets.len(), 16);
        // 8 count distributions x 2 groupings
        assert_eq!(report.independence_results.tests.len(), 16);
        let conf = report.interval_sets[0].intervals.confidence;
        assert!((conf - (1.0 - 0.05 / 16.0)).abs() < 1e-15);
        for (t, s) in report.frequency_tables.iter().zip(&report.sample_size_table) {
            assert_eq!(t.n, s.n);
            assert!((t.proportions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let fam = &report.gof_results.family;
        let (bh, by) = (fam.adjusted_bh.as_ref().unwrap(), fam.adjusted_by.as_ref().unwrap());
        for (i, e) in fam.entries.iter().enumerate() {
            assert!(by[i] >= bh[i] && bh[i] >= e.p_raw);
        }
    }

    #[test]
    fn pooled_scope_adjusts_jointly() {
        let mut cfg = toy_config();
        cfg.adjustment_scope = AdjustmentScope::Pooled;
        let report = run_study_on_series(&cfg, toy_series()).unwrap();
        let raw: Vec<f64> = report
            .gof_results
            .family
            .raw()
            .into_iter()
            .chain(report.independence_results.family.raw())
            .collect();
        let bh = bh_adjust(&raw).unwrap();
        assert_eq!(report.gof_results.family.adjusted_bh.as_deref(), Some(&bh[..16]));
        assert_eq!(report.independence_results.family.adjusted_bh.as_deref(), Some(&bh[16..]));
    }

    #[test]
    fn single_group_skips_independence() {
        let mut cfg = toy_config();
        cfg.groups = vec!["A".into()];
        let series: Vec<_> = toy_series().into_iter().filter(|s| s.group_id == "A").collect();
        let report = run_study_on_series(&cfg, series).unwrap();
        assert!(report.independence_results.tests.is_empty());
        assert_eq!(
            report.skipped.iter().filter(|s| s.stage == "independence test").count(),
            16
        );
    }

    #[test]
    fn missing_group_is_an_input_error() {
        let mut cfg = toy_config();
        cfg.groups.push("C".into());
        cfg.cumulative_cutoff_per_group.insert("C".into(), d(5));
        let err = run_study_on_series(&cfg, toy_series()).unwrap_err();
        assert!(err.is_input_error());
    }

    #[test]
    fn empty_study_writes_empty_tables() {
        let mut cfg = toy_config();
        cfg.groups.clear();
        let report = run_study_on_series(&cfg, Vec::new()).unwrap();
        assert!(report.gof_results.tests.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let files = write_report(&report, dir.path(), ReportFormat::CsvBundle).unwrap();
        assert_eq!(files.len(), 7);
        let json = write_report(&report, dir.path(), ReportFormat::Json).unwrap();
        let back = StudyReport::from_json(&fs::read_to_string(&json[0]).unwrap()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn json_round_trip_and_bundle() {
        let report = run_study_on_series(&toy_config(), toy_series()).unwrap();
        let back = StudyReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);

        let dir = tempfile::tempdir().unwrap();
        let files = write_report(&report, dir.path(), ReportFormat::CsvBundle).unwrap();
        let names: Vec<_> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_owned())
            .collect();
        assert_eq!(names, CSV_BUNDLE_FILES);
        let gof = fs::read_to_string(dir.path().join("gof_results.csv")).unwrap();
        assert!(gof.starts_with("schema_version,label,family,"));
        assert_eq!(gof.lines().count(), 17);
    }
}
