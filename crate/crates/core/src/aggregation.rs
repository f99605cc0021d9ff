//! Server-side aggregation of flattened client parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One client's parameters after local training.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelUpdate {
    pub client_id: usize,
    pub params: Vec<f32>,
    pub num_samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    #[default]
    Fedavg,
    TrimmedMean,
}

impl AggregationRule {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationRule::Fedavg => "fedavg",
            AggregationRule::TrimmedMean => "trimmed_mean",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationConfig {
    pub rule: AggregationRule,
    pub trim_ratio: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            rule: AggregationRule::Fedavg,
            trim_ratio: 0.2,
        }
    }
}

impl AggregationConfig {
    pub fn fedavg() -> Self {
        Self::default()
    }

    pub fn trimmed_mean(trim_ratio: f64) -> Self {
        AggregationConfig {
            rule: AggregationRule::TrimmedMean,
            trim_ratio,
        }
    }

    pub fn validate(&self, num_clients: usize) -> Result<()> {
        if self.rule == AggregationRule::TrimmedMean {
            trim_count(num_clients, self.trim_ratio)?;
        }
        Ok(())
    }

    pub fn aggregate(&self, updates: &[ModelUpdate]) -> Result<Vec<f32>> {
        match self.rule {
            AggregationRule::Fedavg => fedavg(updates),
            AggregationRule::TrimmedMean => trimmed_mean(updates, self.trim_ratio),
        }
    }
}

/// Updates sorted by client id, after the shared shape checks.
fn ordered(updates: &[ModelUpdate]) -> Result<Vec<&ModelUpdate>> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Empty("no client updates to aggregate".into()))?;
    let len = first.params.len();
    if let Some(u) = updates.iter().find(|u| u.params.len() != len) {
        return Err(Error::dim(format!(
            "client {} sent {} parameters, expected {len}",
            u.client_id,
            u.params.len()
        )));
    }
    let mut sorted: Vec<&ModelUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    Ok(sorted)
}

/// Sample-weighted coordinate mean, accumulated in client-id order.
pub fn fedavg(updates: &[ModelUpdate]) -> Result<Vec<f32>> {
    let sorted = ordered(updates)?;
    if let Some(u) = sorted.iter().find(|u| u.num_samples == 0) {
        return Err(Error::config(format!("client {} reported zero samples", u.client_id)));
    }
    // integer weights keep sum(n_i * p_i) exact in f64; one division per coordinate at the end
    let total: f64 = sorted.iter().map(|u| u.num_samples as f64).sum();
    let len = sorted[0].params.len();
    let mut acc = vec![0.0f64; len];
    for u in &sorted {
        let w = u.num_samples as f64;
        for (a, &p) in acc.iter_mut().zip(&u.params) {
            *a += w * p as f64;
        }
    }
    Ok(acc.into_iter().map(|v| (v / total) as f32).collect())
}

/// Values trimmed from each end for `n` clients.
pub fn trim_count(n: usize, trim_ratio: f64) -> Result<usize> {
    if !(0.0..0.5).contains(&trim_ratio) {
        return Err(Error::config(format!("trim ratio {trim_ratio} outside [0, 0.5)")));
    }
    if n == 0 {
        return Err(Error::Empty("no client updates to aggregate".into()));
    }
    let k = (trim_ratio * n as f64).floor() as usize;
    if n <= 2 * k {
        return Err(Error::config(format!(
            "trimming {k} per end leaves nothing of {n} updates"
        )));
    }
    Ok(k)
}

/// Per coordinate: drop the `k` smallest and `k` largest values, average the rest unweighted.
///
/// Ties sort by client id and survivors are summed in ascending order, so the
/// result does not depend on the order of `updates`.
pub fn trimmed_mean(updates: &[ModelUpdate], trim_ratio: f64) -> Result<Vec<f32>> {
    let k = trim_count(updates.len(), trim_ratio)?;
    let sorted = ordered(updates)?;
    let n = sorted.len();
    let len = sorted[0].params.len();
    let keep = n - 2 * k;
    let mut column: Vec<(f32, usize)> = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(len);
    for j in 0..len {
        column.clear();
        column.extend(sorted.iter().map(|u| (u.params[j], u.client_id)));
        column.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let sum: f64 = column[k..n - k].iter().map(|&(v, _)| v as f64).sum();
        out.push((sum / keep as f64) as f32);
    }
    Ok(out)
}
