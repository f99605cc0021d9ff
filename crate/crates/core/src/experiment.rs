//! Experiment configuration, the attack grid and the CSV artifacts shared by
//! the command-line tool and the acceptance suite.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationConfig, AggregationRule};
use crate::attacks::{ThreatConfig, ThreatKind};
use crate::data::{
    generate_series, partition_grid, read_field_file, ClientDataset, DataProfile, FieldSeries, NormalizationSpec,
};
use crate::error::{Error, Result};
use crate::federation::{Evaluation, Federation, FederationConfig, RoundRecord};
use crate::metrics::Metrics;
use crate::unet::UNetConfig;

/// Everything needed to reproduce one federated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Seed of the synthetic series when `data` is not given.
    pub seed: u64,
    pub profile: DataProfile,
    /// Series length; `None` uses the profile default.
    pub steps: Option<usize>,
    pub train_fraction: f64,
    /// Existing FTSR series to use instead of generating one.
    pub data: Option<PathBuf>,
    pub normalization: NormalizationSpec,
    pub federation: FederationConfig,
    pub threat: ThreatConfig,
    pub model: UNetConfig,
    pub output_dir: PathBuf,
    /// Write a UNP1 checkpoint after every round.
    pub save_rounds: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            profile: DataProfile::Paper,
            steps: None,
            train_fraction: 0.85,
            data: None,
            normalization: NormalizationSpec::default(),
            federation: FederationConfig::default(),
            threat: ThreatConfig::clean(),
            model: UNetConfig::default(),
            output_dir: PathBuf::from("out"),
            save_rounds: false,
        }
    }
}

impl ExperimentConfig {
    /// Nine 16x16 tiles, 600 steps, 6 rounds of 3 local epochs.
    pub fn desk() -> Self {
        let mut c = ExperimentConfig {
            profile: DataProfile::Desk,
            ..Self::default()
        };
        c.federation.total_rounds = 6;
        c.federation.local_epochs = 3;
        c
    }

    pub fn for_profile(profile: DataProfile) -> Self {
        match profile {
            DataProfile::Desk => Self::desk(),
            DataProfile::Paper => Self::default(),
        }
    }

    /// Sets the data, model and client seeds together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.model.seed = seed;
        self.federation.seed = seed;
        self
    }

    pub fn steps(&self) -> usize {
        self.steps.unwrap_or_else(|| self.profile.default_steps())
    }

    pub fn validate(&self) -> Result<()> {
        self.normalization.validate()?;
        self.federation.validate()?;
        self.model.validate()?;
        self.threat
            .validate(self.federation.num_clients, self.federation.total_rounds)?;
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::config(format!(
                "train_fraction {} outside [0, 1]",
                self.train_fraction
            )));
        }
        if self.data.is_none() && self.steps() < 3 {
            return Err(Error::config(format!(
                "{} steps cannot form a sample; need at least 3",
                self.steps()
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// The configured series: read from `data` or generated from `seed`.
    pub fn series(&self) -> Result<FieldSeries> {
        match &self.data {
            Some(path) => read_field_file(path),
            None => {
                let g = self.profile.grid_size();
                generate_series(self.seed, self.steps(), g, g)
            }
        }
    }

    pub fn datasets(&self, series: &FieldSeries) -> Result<Vec<ClientDataset>> {
        let ds = partition_grid(series, &self.normalization, self.train_fraction)?;
        let m = self.model.spatial_multiple();
        if let Some(d) = ds.iter().find(|d| d.height % m != 0 || d.width % m != 0) {
            return Err(Error::dim(format!(
                "{}x{} tiles are not divisible by {m}",
                d.height, d.width
            )));
        }
        Ok(ds)
    }
}

/// Fixed malicious client sets: the center tile first, then spread over the grid.
pub fn malicious_set(count: usize) -> Result<Vec<usize>> {
    match count {
        1 => Ok(vec![4]),
        3 => Ok(vec![1, 4, 7]),
        5 => Ok(vec![0, 2, 4, 6, 8]),
        n => Err(Error::config(format!(
            "no fixed malicious set for {n} clients; pass an explicit list"
        ))),
    }
}

/// One row of the attack grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub threat: ThreatConfig,
    pub aggregation: AggregationConfig,
}

impl GridCell {
    pub fn label(&self) -> String {
        model_label(self.aggregation.rule, self.threat.kind)
    }

    /// Short identifier, unique within a grid.
    pub fn slug(&self) -> String {
        format!(
            "{}_{}_k{}_r{}",
            self.aggregation.rule.as_str(),
            self.threat.kind.as_str(),
            self.threat.malicious_clients.len(),
            self.threat.start_round
        )
    }
}

pub fn model_label(rule: AggregationRule, kind: ThreatKind) -> String {
    format!("{}:{}", rule.as_str(), kind.as_str())
}

/// Clean run plus {gtba, patch} x {1, 3, 5} clients x {round 0, round T/2} under
/// FedAvg; with `defense`, also the clean run and the six round-0 attacks under
/// a 0.2 trimmed mean.
pub fn grid_cells(total_rounds: usize, defense: bool) -> Vec<GridCell> {
    let fedavg = AggregationConfig::fedavg();
    let clean = |aggregation| GridCell {
        threat: ThreatConfig::clean(),
        aggregation,
    };
    let attack = |kind, k, start, aggregation| GridCell {
        threat: ThreatConfig::new(kind, &malicious_set(k).expect("fixed sets"), start),
        aggregation,
    };
    let mut cells = vec![clean(fedavg)];
    for kind in [ThreatKind::Gtba, ThreatKind::Patch] {
        for k in [1, 3, 5] {
            for start in [0, total_rounds / 2] {
                cells.push(attack(kind, k, start, fedavg));
            }
        }
    }
    if defense {
        let tm = AggregationConfig::trimmed_mean(0.2);
        cells.push(clean(tm));
        for kind in [ThreatKind::Gtba, ThreatKind::Patch] {
            for k in [1, 3, 5] {
                cells.push(attack(kind, k, 0, tm));
            }
        }
    }
    cells
}

/// Final state of one finished run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub initial: Evaluation,
    pub final_eval: Evaluation,
    pub history: Vec<RoundRecord>,
}

impl From<&Federation<'_>> for RunOutcome {
    fn from(f: &Federation<'_>) -> Self {
        RunOutcome {
            initial: f.initial().clone(),
            final_eval: f.latest().clone(),
            history: f.history().to_vec(),
        }
    }
}

/// Runs the grid; a failed cell yields its error without stopping the others.
///
/// Delayed attacks share their clean prefix: rounds before the start round do
/// not depend on the threat, so those cells continue from a copy of the clean
/// run taken at that round. Cells run on `parallel` threads.
pub fn run_grid(
    base: &ExperimentConfig,
    datasets: &[ClientDataset],
    cells: &[GridCell],
    parallel: usize,
    progress: &(dyn Fn(&GridCell, &Result<RunOutcome>) + Sync),
) -> Vec<Result<RunOutcome>> {
    let config_for = |cell: &GridCell| {
        let mut fed = base.federation.clone();
        fed.aggregation = cell.aggregation;
        fed
    };
    let new_run = |cell: &GridCell| Federation::new(&config_for(cell), &base.model, datasets, &base.normalization);

    // clean prefixes per aggregation rule, keyed by the round at which a fork is taken
    let mut snapshots: Vec<(AggregationConfig, usize, Federation<'_>)> = Vec::new();
    let mut results: Vec<Option<Result<RunOutcome>>> = (0..cells.len()).map(|_| None).collect();
    for (i, cell) in cells.iter().enumerate() {
        if cell.threat.kind != ThreatKind::None || !cell.threat.malicious_clients.is_empty() {
            continue;
        }
        let mut forks: Vec<usize> = cells
            .iter()
            .filter(|c| c.aggregation == cell.aggregation && c.threat.start_round > 0)
            .map(|c| c.threat.start_round)
            .collect();
        forks.sort_unstable();
        forks.dedup();
        let r = new_run(cell).and_then(|mut f| {
            for &at in &forks {
                while f.rounds_done() < at && !f.is_finished() {
                    f.run_round(&cell.threat)?;
                }
                snapshots.push((cell.aggregation, at, f.clone()));
            }
            f.run_to_end(&cell.threat)?;
            Ok(RunOutcome::from(&f))
        });
        progress(cell, &r);
        results[i] = Some(r);
    }

    let pending: Vec<usize> = (0..cells.len()).filter(|&i| results[i].is_none()).collect();
    let run_cell = |i: usize| {
        let cell = &cells[i];
        let fork = snapshots
            .iter()
            .find(|(agg, at, _)| *agg == cell.aggregation && *at == cell.threat.start_round && *at > 0);
        let r = match fork {
            Some((_, _, f)) => Ok(f.clone()),
            None => new_run(cell),
        }
        .and_then(|mut f| {
            f.run_to_end(&cell.threat)?;
            Ok(RunOutcome::from(&f))
        });
        progress(cell, &r);
        (i, r)
    };
    let done: Vec<(usize, Result<RunOutcome>)> =
        match rayon::ThreadPoolBuilder::new().num_threads(parallel.max(1)).build() {
            Ok(pool) => pool.install(|| pending.par_iter().map(|&i| run_cell(i)).collect()),
            Err(e) => pending
                .iter()
                .map(|&i| (i, Err(Error::config(format!("cannot build thread pool: {e}")))))
                .collect(),
        };
    for (i, r) in done {
        results[i] = Some(r);
    }
    results.into_iter().map(|r| r.expect("every cell ran")).collect()
}

pub const METRICS_HEADER: &str = "model,clients,round,mse,rmse_k,mae_k,ssim,mean_bias_k,min_bias_k,max_bias_k";

/// One line of the metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub model: String,
    pub clients: usize,
    /// Start round of the attack; 0 for clean runs.
    pub round: usize,
    pub metrics: Metrics,
}

impl MetricsRow {
    pub fn new(rule: AggregationRule, threat: &ThreatConfig, metrics: Metrics) -> Self {
        let attacked = threat.kind != ThreatKind::None;
        MetricsRow {
            model: model_label(rule, threat.kind),
            clients: if attacked { threat.malicious_clients.len() } else { 0 },
            round: if attacked { threat.start_round } else { 0 },
            metrics,
        }
    }

    pub fn to_csv(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.model,
            self.clients,
            self.round,
            m.mse,
            m.rmse,
            m.mae,
            m.ssim,
            m.mean_bias,
            m.most_negative_bias,
            m.most_positive_bias
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Per-round history: row 0 is the untrained model, row r the global model after r rounds.
pub fn history_csv(outcome: &RunOutcome) -> String {
    let clients = outcome.initial.report.per_client.len();
    let mut out = String::from("round");
    for c in 0..clients {
        let _ = write!(out, ",client_{c}_loss");
    }
    out.push_str(",mse,rmse_k,mae_k,ssim,mean_bias_k\n");
    let mut row = |round: usize, losses: Option<&RoundRecord>, m: &Metrics| {
        let _ = write!(out, "{round}");
        for c in 0..clients {
            match losses {
                Some(r) => {
                    let _ = write!(out, ",{:.8}", r.mean_loss(c));
                }
                None => out.push(','),
            }
        }
        let _ = writeln!(
            out,
            ",{:.6},{:.6},{:.6},{:.6},{:.6}",
            m.mse, m.rmse, m.mae, m.ssim, m.mean_bias
        );
    };
    row(0, None, &outcome.initial.report.pooled);
    for r in &outcome.history {
        row(r.round + 1, Some(r), &r.metrics.pooled);
    }
    out
}

/// Metrics, history, error map and the resolved config of a finished run.
pub fn write_run_outputs(dir: &Path, config: &ExperimentConfig, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    let row = MetricsRow::new(
        config.federation.aggregation.rule,
        &config.threat,
        outcome.final_eval.report.pooled,
    );
    fs::write(dir.join("metrics.csv"), metrics_csv(&[row]))?;
    fs::write(dir.join("history.csv"), history_csv(outcome))?;
    fs::write(dir.join("config.json"), config.to_json()?)?;
    outcome.final_eval.error_map.write(dir, "error_map")
}
