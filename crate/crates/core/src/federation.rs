//! Federated rounds: broadcast, local training under each client's threat
//! view, aggregation and evaluation on the clean pooled test set.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationConfig, ModelUpdate};
use crate::attacks::{poison_client_data, PoisonView, ThreatConfig};
use crate::data::{ClientDataset, NormalizationSpec, Split, NUM_CLIENTS};
use crate::error::{Error, Result};
use crate::metrics::{ErrorMap, Metrics, MetricsAccumulator, MetricsReport};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::{AdamW, AdamWState, Tape, Tensor};
use crate::unet::{UNetConfig, UNetParams};

/// Caps the number of clients trained concurrently inside one run.
pub const THREADS_ENV: &str = "FEDSTORM_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub num_clients: usize,
    pub total_rounds: usize,
    pub local_epochs: usize,
    /// Only 1 is supported.
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub aggregation: AggregationConfig,
    /// Visit training samples in a per-client, per-round random order instead of index order.
    pub shuffle: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            num_clients: NUM_CLIENTS,
            total_rounds: 10,
            local_epochs: 10,
            batch_size: 1,
            lr: 1e-4,
            weight_decay: 1e-5,
            seed: 0,
            aggregation: AggregationConfig::default(),
            shuffle: false,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_rounds == 0 {
            return Err(Error::config("total_rounds must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::config("local_epochs must be at least 1"));
        }
        if self.batch_size != 1 {
            return Err(Error::config(format!(
                "batch_size {} is not supported; use 1",
                self.batch_size
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("lr and weight_decay must be finite and non-negative"));
        }
        if self.num_clients == 0 {
            return Err(Error::config("num_clients must be at least 1"));
        }
        self.aggregation.validate(self.num_clients)
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW::new(self.lr, self.weight_decay)
    }
}

/// Seed of one client's local run in one round.
pub fn client_seed(seed: u64, client_id: usize, round: usize) -> u64 {
    derive_seed(seed, &[client_id as u64, round as u64])
}

/// Result of one client's local training.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalResult {
    pub update: ModelUpdate,
    /// Mean training loss (normalized units, on the training targets) of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains a copy of `global` on the client's training windows, seen through `view`.
///
/// AdamW starts from zero moments; one optimizer step per sample.
pub fn local_train(
    global: &UNetParams,
    dataset: &ClientDataset,
    view: &PoisonView,
    epochs: usize,
    optimizer: &AdamW,
    shuffle: bool,
    seed: u64,
) -> Result<LocalResult> {
    let n = dataset.len(Split::Train);
    if n == 0 {
        return Err(Error::Empty(format!(
            "client {} has no training windows",
            dataset.client_id
        )));
    }
    let mut params = global.clone();
    let mut state = AdamWState::new();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from_seed(seed);
    let mut epoch_losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        if shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0f64;
        for &i in &order {
            let (x, y) = dataset.sample(Split::Train, i);
            let target = view.training_target(&y)?;
            let (loss, grads) = loss_and_grads(&params, &x, &target)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss of client {}",
                    dataset.client_id
                )));
            }
            total += loss;
            let gs: Vec<&[f32]> = grads.iter().map(Tensor::data).collect();
            let mut ps: Vec<&mut Tensor> = params.tensors_mut().iter_mut().collect();
            optimizer.step(&mut state, &mut ps, &gs)?;
        }
        epoch_losses.push(total / n as f64);
    }
    Ok(LocalResult {
        update: ModelUpdate {
            client_id: dataset.client_id,
            params: params.flatten(),
            num_samples: n,
        },
        epoch_losses,
    })
}

fn loss_and_grads(params: &UNetParams, x: &Tensor, y: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, true);
    let xv = tape.constant(x);
    let yv = tape.constant(y);
    let out = params.forward(&mut tape, &vars, xv)?;
    let loss = tape.mse_loss(out, yv)?;
    tape.backward(loss)?;
    let l = tape.value(loss)?.item().unwrap_or(f32::NAN) as f64;
    let grads = vars
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| tape.take_grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((l, grads))
}

/// Metrics of a model on the clean test windows, plus the composited MAE map.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub error_map: ErrorMap,
}

/// Evaluates `params` on every client's test split.
pub fn evaluate_global(
    params: &UNetParams,
    datasets: &[ClientDataset],
    norm: &NormalizationSpec,
) -> Result<Evaluation> {
    let accs: Vec<MetricsAccumulator> = datasets
        .iter()
        .map(|d| {
            if d.is_empty(Split::Test) {
                return Err(Error::Empty(format!("client {} has no test windows", d.client_id)));
            }
            let mut acc = MetricsAccumulator::new(d.height, d.width, norm);
            for i in 0..d.len(Split::Test) {
                let (x, y) = d.sample(Split::Test, i);
                let pred = params.predict(&x)?;
                acc.push(pred.data(), y.data())?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let per_client = accs
        .iter()
        .map(MetricsAccumulator::finish)
        .collect::<Result<Vec<Metrics>>>()?;
    let pooled = MetricsAccumulator::pool(&accs)?;
    let (gh, gw) = datasets.iter().fold((0, 0), |(h, w), d| {
        (h.max(d.tile_origin.0 + d.height), w.max(d.tile_origin.1 + d.width))
    });
    let tiles: Vec<_> = datasets
        .iter()
        .zip(&accs)
        .map(|(d, a)| (d.tile_origin, d.height, d.width, a.pixel_mae()))
        .collect();
    Ok(Evaluation {
        report: MetricsReport { pooled, per_client },
        error_map: ErrorMap::composite(gh, gw, &tiles)?,
    })
}

/// One completed round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    /// Zero-based training round.
    pub round: usize,
    /// Per client, the mean loss of each local epoch.
    pub client_losses: Vec<Vec<f64>>,
    /// Whether each client trained through a poisoned view.
    pub poisoned: Vec<bool>,
    /// Global model after aggregation, on clean test data.
    pub metrics: MetricsReport,
}

impl RoundRecord {
    /// Mean over the epochs of one client's losses.
    pub fn mean_loss(&self, client: usize) -> f64 {
        let l = &self.client_losses[client];
        l.iter().sum::<f64>() / l.len() as f64
    }
}

fn thread_pool() -> Result<Arc<rayon::ThreadPool>> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
        b = b.num_threads(n.max(1));
    }
    b.build()
        .map(Arc::new)
        .map_err(|e| Error::config(format!("cannot build thread pool: {e}")))
}

/// A federation in progress. Cloning it forks the run at its current round.
#[derive(Clone)]
pub struct Federation<'d> {
    config: FederationConfig,
    datasets: &'d [ClientDataset],
    norm: NormalizationSpec,
    global: UNetParams,
    initial: Evaluation,
    last: Evaluation,
    history: Vec<RoundRecord>,
    pool: Arc<rayon::ThreadPool>,
}

impl<'d> Federation<'d> {
    /// Initializes the global model and evaluates it untrained.
    pub fn new(
        config: &FederationConfig,
        model: &UNetConfig,
        datasets: &'d [ClientDataset],
        norm: &NormalizationSpec,
    ) -> Result<Self> {
        config.validate()?;
        if datasets.len() != config.num_clients {
            return Err(Error::config(format!(
                "{} datasets for {} clients",
                datasets.len(),
                config.num_clients
            )));
        }
        if let Some((i, d)) = datasets.iter().enumerate().find(|(i, d)| d.client_id != *i) {
            return Err(Error::config(format!("dataset {i} belongs to client {}", d.client_id)));
        }
        let global = UNetParams::init(model)?;
        let initial = evaluate_global(&global, datasets, norm)?;
        Ok(Federation {
            config: config.clone(),
            datasets,
            norm: *norm,
            global,
            last: initial.clone(),
            initial,
            history: Vec::new(),
            pool: thread_pool()?,
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn rounds_done(&self) -> usize {
        self.history.len()
    }

    pub fn is_finished(&self) -> bool {
        self.rounds_done() >= self.config.total_rounds
    }

    pub fn global(&self) -> &UNetParams {
        &self.global
    }

    /// Evaluation of the untrained model.
    pub fn initial(&self) -> &Evaluation {
        &self.initial
    }

    /// Evaluation after the latest round, or of the untrained model before any round.
    pub fn latest(&self) -> &Evaluation {
        &self.last
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.history
    }

    /// Runs the next round with `threat` deciding which clients are poisoned.
    pub fn run_round(&mut self, threat: &ThreatConfig) -> Result<&RoundRecord> {
        if self.is_finished() {
            return Err(Error::config("federation already ran all rounds"));
        }
        threat.validate(self.config.num_clients, self.config.total_rounds)?;
        let round = self.rounds_done();
        let opt = self.config.optimizer();
        let global = &self.global;
        let cfg = &self.config;
        let norm = &self.norm;
        let datasets = self.datasets;
        // collect preserves client order, so aggregation input is independent of scheduling
        let results: Vec<(LocalResult, bool)> = self.pool.install(|| {
            datasets
                .par_iter()
                .map(|d| {
                    let view = poison_client_data(d.client_id, d.height, d.width, threat, round, norm)?;
                    let seed = client_seed(cfg.seed, d.client_id, round);
                    let r = local_train(global, d, &view, cfg.local_epochs, &opt, cfg.shuffle, seed)?;
                    Ok((r, !view.is_identity()))
                })
                .collect::<Result<_>>()
        })?;
        let updates: Vec<ModelUpdate> = results.iter().map(|(r, _)| r.update.clone()).collect();
        let flat = self.config.aggregation.aggregate(&updates)?;
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("aggregated parameters in round {round}")));
        }
        self.global.load_flat(&flat)?;
        self.last = evaluate_global(&self.global, self.datasets, &self.norm)?;
        self.history.push(RoundRecord {
            round,
            client_losses: results.iter().map(|(r, _)| r.epoch_losses.clone()).collect(),
            poisoned: results.iter().map(|&(_, p)| p).collect(),
            metrics: self.last.report.clone(),
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// Runs the remaining rounds.
    pub fn run_to_end(&mut self, threat: &ThreatConfig) -> Result<()> {
        while !self.is_finished() {
            self.run_round(threat)?;
        }
        Ok(())
    }
}

/// Final global parameters and the round history of a complete run.
#[derive(Clone, Debug)]
pub struct FederationOutcome {
    pub params: UNetParams,
    pub initial: Evaluation,
    pub final_eval: Evaluation,
    pub history: Vec<RoundRecord>,
}

impl From<Federation<'_>> for FederationOutcome {
    fn from(f: Federation<'_>) -> Self {
        FederationOutcome {
            params: f.global,
            initial: f.initial,
            final_eval: f.last,
            history: f.history,
        }
    }
}

pub fn run_federation(
    config: &FederationConfig,
    model: &UNetConfig,
    threat: &ThreatConfig,
    datasets: &[ClientDataset],
    norm: &NormalizationSpec,
) -> Result<FederationOutcome> {
    threat.validate(config.num_clients, config.total_rounds)?;
    let mut f = Federation::new(config, model, datasets, norm)?;
    f.run_to_end(threat)?;
    Ok(f.into())
}
