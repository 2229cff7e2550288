//! Multiplicity adjustment: Benjamini-Hochberg and Benjamini-Yekutieli
//! step-up p-values, and Bonferroni splitting of a confidence budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn validate(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::domain("cannot adjust an empty p-value family"));
    }
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::domain(format!("p-value {bad} outside [0, 1]")));
    }
    Ok(())
}

/// Step-up adjustment `q_(i) = min(1, min_{j >= i} factor * m / j * p_(j))`,
/// returned in input order.
fn step_up(p: &[f64], factor: f64) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    // stable: tied raw values keep input order, and the suffix minimum
    // gives them identical adjusted values anyway
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));

    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank0, &idx) in order.iter().enumerate().rev() {
        let rank = (rank0 + 1) as f64;
        let candidate = factor * m as f64 / rank * p[idx];
        running = running.min(candidate);
        adjusted[idx] = running;
    }
    adjusted
}

pub fn bh_adjust(p: &[f64]) -> Result<Vec<f64>> {
    validate(p)?;
    Ok(step_up(p, 1.0))
}

/// Benjamini-Yekutieli: BH scaled by the harmonic number `c(m) = sum_{i<=m} 1/i`.
pub fn by_adjust(p: &[f64]) -> Result<Vec<f64>> {
    validate(p)?;
    let c_m: f64 = (1..=p.len()).map(|i| 1.0 / i as f64).sum();
    Ok(step_up(p, c_m))
}

/// Per-family error budget `alpha / families`.
pub fn bonferroni_level(alpha: f64, families: u32) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha {alpha} outside (0, 1)")));
    }
    if families == 0 {
        return Err(Error::domain("Bonferroni split needs at least one family"));
    }
    Ok(alpha / f64::from(families))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueEntry {
    pub label: String,
    pub p_raw: f64,
}

/// A family of p-values adjusted jointly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueFamily {
    pub name: String,
    pub entries: Vec<PValueEntry>,
    pub adjusted_bh: Option<Vec<f64>>,
    pub adjusted_by: Option<Vec<f64>>,
}

impl PValueFamily {
    pub fn new(name: impl Into<String>, entries: Vec<PValueEntry>) -> Self {
        Self {
            name: name.into(),
            entries,
            adjusted_bh: None,
            adjusted_by: None,
        }
    }

    pub fn raw(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.p_raw).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fills both adjusted columns. An empty family stays unadjusted.
    pub fn adjust(&mut self) -> Result<()> {
        if self.entries.is_empty() {
            self.adjusted_bh = Some(Vec::new());
            self.adjusted_by = Some(Vec::new());
            return Ok(());
        }
        let raw = self.raw();
        self.adjusted_bh = Some(bh_adjust(&raw)?);
        self.adjusted_by = Some(by_adjust(&raw)?);
        Ok(())
    }
}
