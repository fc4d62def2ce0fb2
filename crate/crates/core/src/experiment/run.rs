//! The partition, balance and train pipeline for one configuration.

use super::config::{ConfigError, DatasetSource, ExperimentConfig};
use crate::balance::{balance_all, BalanceConfig, BalanceError, BalanceOutcome, SupplyPolicy};
use crate::dataset_io::{
    load_cifar10_dir, load_mnist_dir, make_toy_dataset, partition, ClientDataset, DatasetError,
    PartitionSpec,
};
use crate::fed::{
    run_round, write_metrics, FedClient, FedConfig, FedError, ModelParams, RoundReport, Schema,
    TrainSet,
};
use crate::image::{Dims, LabeledImage};
use crate::natural_noise::{init_generator, GeneratorConfig, GeneratorState, NoiseError};
use crate::rng::{derive_seed, stream, tag};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl ExperimentError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// True for errors caused by the configuration rather than the
    /// environment.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            ExperimentError::Config(_)
                | ExperimentError::Dataset(DatasetError::InfeasibleSpec(_))
                | ExperimentError::Balance(
                    BalanceError::DeadlineZero | BalanceError::MixFraction(_)
                )
                | ExperimentError::Noise(NoiseError::Config(_) | NoiseError::NotSquare(..))
                | ExperimentError::Fed(FedError::Model(_))
        )
    }
}

/// Training and test images with their shape and class count.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
    pub dims: Dims,
    pub num_classes: usize,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData, ExperimentError> {
    let keep = |mut v: Vec<LabeledImage>, subset: usize| {
        if subset > 0 {
            v.truncate(subset);
        }
        v
    };
    let (train, test, num_classes) = match &cfg.dataset {
        DatasetSource::Toy(t) => (
            make_toy_dataset(
                t.train_per_class,
                t.num_classes,
                t.dims,
                derive_seed(cfg.seed, &[tag::TOY_TRAIN]),
            ),
            make_toy_dataset(
                t.test_per_class,
                t.num_classes,
                t.dims,
                derive_seed(cfg.seed, &[tag::TOY_TEST]),
            ),
            t.num_classes,
        ),
        DatasetSource::Mnist { dir, subset } => (
            keep(load_mnist_dir(dir, true)?, *subset),
            load_mnist_dir(dir, false)?,
            10,
        ),
        DatasetSource::Cifar10 { dir, subset } => (
            keep(load_cifar10_dir(dir, true)?, *subset),
            load_cifar10_dir(dir, false)?,
            10,
        ),
    };
    let dims = train
        .first()
        .map(|i| i.dims)
        .ok_or_else(|| ConfigError::Invalid("training set is empty".into()))?;
    Ok(LoadedData {
        train,
        test,
        dims,
        num_classes,
    })
}

pub fn partition_clients(
    cfg: &ExperimentConfig,
    data: &LoadedData,
) -> Result<Vec<ClientDataset>, ExperimentError> {
    let spec = PartitionSpec {
        scheme: cfg.partition,
        num_clients: cfg.num_clients,
        seed: cfg.seed,
    };
    Ok(partition(&data.train, data.num_classes, &spec)?)
}

pub fn noise_generator(
    cfg: &ExperimentConfig,
    dims: Dims,
) -> Result<GeneratorState, ExperimentError> {
    let gen_cfg = GeneratorConfig {
        wavelet_bank: cfg.noise_bank,
        ..GeneratorConfig::new(dims, derive_seed(cfg.seed, &[tag::NOISE_INIT]))
    };
    Ok(init_generator(&gen_cfg)?)
}

pub fn balance_config(cfg: &ExperimentConfig) -> BalanceConfig {
    BalanceConfig {
        mix_fraction: cfg.mix_fraction,
        deadline: cfg.deadline,
        mix: cfg.mix,
        policy: SupplyPolicy {
            capacity_fraction: cfg.capacity_fraction,
        },
        parallelism: cfg.parallelism,
    }
}

/// Per-label target `P` for every client: `supplement_pct`% of the client's
/// largest class count, rounded to nearest.
pub fn supplement_targets(clients: &[ClientDataset], supplement_pct: u32) -> Vec<Vec<usize>> {
    clients
        .iter()
        .map(|c| {
            let p =
                (f64::from(supplement_pct) / 100.0 * c.max_class_count() as f64).round() as usize;
            vec![p; c.num_classes()]
        })
        .collect()
}

/// Runs the bounty protocol for every client. `pass` separates repeated
/// balancing passes so each draws fresh pseudo-images.
pub fn balance_clients(
    cfg: &ExperimentConfig,
    clients: &[ClientDataset],
    noise: &GeneratorState,
    pass: u64,
) -> Result<Vec<BalanceOutcome>, ExperimentError> {
    let targets = supplement_targets(clients, cfg.supplement_pct);
    let seed = derive_seed(cfg.seed, &[tag::BALANCE, pass]);
    Ok(balance_all(
        clients,
        &targets,
        &balance_config(cfg),
        &cfg.topology,
        noise,
        seed,
    )?)
}

pub fn fed_config(cfg: &ExperimentConfig) -> FedConfig {
    FedConfig {
        local_epochs: cfg.local_epochs,
        batch_size: cfg.batch_size,
        adam: cfg.adam,
        participation_fraction: cfg.participation,
        seed: cfg.seed,
        parallelism: cfg.parallelism,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub tag: String,
    pub reports: Vec<RoundReport>,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub model: ModelParams,
}

pub const SUMMARY_HEADER: &str = "tag,supplement_pct,mix_fraction,seed,rounds,final_acc,best_acc";

impl ExperimentResult {
    pub fn summary_row(&self, cfg: &ExperimentConfig) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6}",
            self.tag,
            cfg.supplement_pct,
            cfg.mix_fraction,
            cfg.seed,
            self.reports.len(),
            self.final_accuracy,
            self.best_accuracy
        )
    }
}

/// Full pipeline, in memory.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let real = partition_clients(cfg, &data)?;
    let noise = if cfg.supplement_pct > 0 {
        Some(noise_generator(cfg, data.dims)?)
    } else {
        None
    };
    let augment = |pass: u64| -> Result<Vec<ClientDataset>, ExperimentError> {
        match &noise {
            Some(g) => Ok(balance_clients(cfg, &real, g, pass)?
                .into_iter()
                .map(|o| o.dataset)
                .collect()),
            None => Ok(real.clone()),
        }
    };

    let schema =
        Schema::for_kind(cfg.model, data.dims, data.num_classes).map_err(FedError::from)?;
    let local = augment(0)?;
    let mut clients: Vec<FedClient> = local
        .iter()
        .map(|c| FedClient::new(c.client_id, c.examples(), &schema, cfg.adam))
        .collect();
    let test = TrainSet::from_images(&data.test);
    let fed = fed_config(cfg);
    let mut global = ModelParams::init(schema, &mut stream(cfg.seed, &[tag::MODEL_INIT]));
    let mut reports = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        if cfg.rebalance_every > 0
            && round > 0
            && round % cfg.rebalance_every == 0
            && noise.is_some()
        {
            let fresh = augment((round / cfg.rebalance_every) as u64)?;
            for (client, ds) in clients.iter_mut().zip(&fresh) {
                client.data = TrainSet::from_images(ds.examples());
            }
        }
        let (next, report) = run_round(&global, &mut clients, &fed, round, &test)?;
        global = next;
        reports.push(report);
    }
    let final_accuracy = reports.last().map_or(0.0, |r| r.test_accuracy);
    let best_accuracy = reports.iter().map(|r| r.test_accuracy).fold(0.0, f64::max);
    Ok(ExperimentResult {
        tag: cfg.tag(),
        reports,
        final_accuracy,
        best_accuracy,
        model: global,
    })
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Runs the pipeline and writes `metrics.csv` and `summary.csv` into `out`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<ExperimentResult, ExperimentError> {
    let result = run_pipeline(cfg)?;
    fs::create_dir_all(out).map_err(|e| ExperimentError::io(out, e))?;
    let metrics = out.join(METRICS_FILE);
    write_file(&metrics, |w| {
        write_metrics(w, &result.reports, cfg.wallclock)
    })?;
    let summary = out.join(SUMMARY_FILE);
    write_file(&summary, |w| {
        writeln!(w, "{SUMMARY_HEADER}\n{}", result.summary_row(cfg))
    })?;
    Ok(result)
}

/// Writes through a temporary file so that a half-written output never
/// looks complete.
pub(crate) fn write_file<F>(path: &Path, body: F) -> Result<(), ExperimentError>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>,
{
    let tmp = path.with_extension("tmp");
    let io_err = |e| ExperimentError::io(path, e);
    let file = fs::File::create(&tmp).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err)?;
    drop(w);
    fs::rename(&tmp, path).map_err(io_err)
}
