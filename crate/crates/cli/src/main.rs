//! `skewmix` command line: partitioning, pseudo-image generation, balancing,
//! training and ablation grids, all driven by one config file.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 1 anything else.

use clap::{Args, Parser, Subcommand};
use skewmix::balance::{write_trace, BalanceOutcome};
use skewmix::dataset_io::{write_manifest, ClientDataset};
use skewmix::experiment::{
    balance_clients, load_data, noise_generator, parse_ini, partition_clients, run_experiment,
    run_grid, AblationGrid, ConfigError, ExperimentConfig, ExperimentError, LoadedData,
};
use skewmix::fed::write_checkpoint;
use skewmix::image::{read_tensor, write_ppm, write_tensor, LabeledImage};
use skewmix::mixup_dp::generate_mixups;
use skewmix::natural_noise::{generate_batch, power_spectrum_slope};
use skewmix::rng::{derive_seed, tag};
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "skewmix",
    version,
    about = "Label-skew federated learning with mixup and natural-noise supplements"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (defaults apply when omitted).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `[run] seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Split the training set across clients and write the label manifest.
    Partition,
    /// Generate DP mixups of one label from one client's data.
    Mix {
        #[arg(long, default_value_t = 0)]
        client: usize,
        #[arg(long)]
        label: Option<usize>,
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
    /// Sample natural-noise images at the dataset resolution.
    GenNoise {
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Label attached to the written images.
        #[arg(long, default_value_t = 0)]
        label: usize,
    },
    /// Print the power-spectrum slope of tensor files.
    Spectrum {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Run the bounty protocol for every client and write the message trace.
    Balance,
    /// Partition, balance and train; writes metrics, summary and checkpoint.
    Train,
    /// Run an ablation grid defined by the config's `[grid]` section.
    Grid,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Io(String),
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Other(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match &e {
            _ if e.is_config() => CliError::Config(e.to_string()),
            ExperimentError::Io { .. } | ExperimentError::Dataset(_) => CliError::Io(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn config_text(common: &Common) -> Result<String, CliError> {
    match &common.config {
        Some(p) => fs::read_to_string(p).map_err(io_err(p)),
        None => Ok(String::new()),
    }
}

/// Config text with `--seed` applied, re-rendered as INI.
fn effective_text(common: &Common) -> Result<String, CliError> {
    let mut ini = parse_ini(&config_text(common)?)?;
    if let Some(seed) = common.seed {
        ini.with_section(Some("run")).set("seed", seed.to_string());
    }
    let mut buf = Vec::new();
    ini.write_to(&mut buf)
        .map_err(|e| CliError::Other(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| CliError::Other(e.to_string()))
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let text = effective_text(common)?;
    if parse_ini(&text)?.section(Some("grid")).is_some() {
        return Err(CliError::Config(
            "[grid] section is only valid for the grid subcommand".into(),
        ));
    }
    Ok(text.parse()?)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_with<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
{
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// `<stem>.tensor` plus a `<stem>.ppm` preview.
fn write_images(dir: &Path, stem: &str, images: &[LabeledImage]) -> Result<(), CliError> {
    create_dir(dir)?;
    for (i, img) in images.iter().enumerate() {
        write_with(&dir.join(format!("{stem}_{i:04}.tensor")), |w| {
            write_tensor(w, img)
        })?;
        write_with(&dir.join(format!("{stem}_{i:04}.ppm")), |w| {
            write_ppm(w, img)
        })?;
    }
    Ok(())
}

fn prepare(cfg: &ExperimentConfig) -> Result<(LoadedData, Vec<ClientDataset>), CliError> {
    let data = load_data(cfg)?;
    let clients = partition_clients(cfg, &data)?;
    Ok((data, clients))
}

fn cmd_partition(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let (_, clients) = prepare(&cfg)?;
    create_dir(&common.out)?;
    let path = common.out.join("partition.csv");
    write_with(&path, |w| write_manifest(w, &clients))?;
    println!("{} clients, manifest at {}", clients.len(), path.display());
    Ok(())
}

fn cmd_mix(
    common: &Common,
    client: usize,
    label: Option<usize>,
    count: usize,
) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let (_, clients) = prepare(&cfg)?;
    let source = clients.get(client).ok_or_else(|| {
        CliError::Config(format!(
            "client {client} out of range (0..{})",
            clients.len()
        ))
    })?;
    let label = match label {
        Some(l) => l,
        None => (0..source.num_classes())
            .find(|&y| source.count(y) > 0)
            .unwrap_or(0),
    };
    let seed = derive_seed(cfg.seed, &[tag::MIX, client as u64, label as u64]);
    let images = generate_mixups(source, label, &cfg.mix, count, seed, cfg.parallelism)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let dir = common.out.join("mix");
    write_images(&dir, &format!("client{client}_label{label}"), &images)?;
    println!(
        "{} mixups of label {label} from client {client} in {}",
        images.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_gen_noise(common: &Common, count: usize, label: usize) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let dims = load_data(&cfg)?.dims;
    let state = noise_generator(&cfg, dims)?;
    let seed = derive_seed(cfg.seed, &[tag::NOISE_SAMPLE]);
    let images: Vec<LabeledImage> = generate_batch(&state, count, seed, cfg.parallelism)
        .map_err(|e| CliError::Other(e.to_string()))?
        .into_iter()
        .map(|u| u.with_label(label))
        .collect();
    let dir = common.out.join("noise");
    write_images(&dir, "noise", &images)?;
    println!("{} natural-noise images in {}", images.len(), dir.display());
    Ok(())
}

fn cmd_spectrum(files: &[PathBuf]) -> Result<(), CliError> {
    println!("file,slope");
    for path in files {
        let file = File::open(path).map_err(io_err(path))?;
        let img = read_tensor(BufReader::new(file))
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let slope = power_spectrum_slope(&img)
            .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
        println!("{},{slope:.4}", path.display());
    }
    Ok(())
}

fn cmd_balance(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    if cfg.supplement_pct == 0 {
        return Err(CliError::Config(
            "supplement_pct is 0: nothing to balance".into(),
        ));
    }
    let (data, clients) = prepare(&cfg)?;
    let noise = noise_generator(&cfg, data.dims)?;
    let outcomes: Vec<BalanceOutcome> = balance_clients(&cfg, &clients, &noise, 0)?;
    create_dir(&common.out)?;
    let trace: Vec<_> = outcomes
        .iter()
        .flat_map(|o| o.trace.iter().cloned())
        .collect();
    write_with(&common.out.join("trace.csv"), |w| write_trace(w, &trace))?;
    write_with(&common.out.join("fills.csv"), |w| {
        writeln!(w, "client_id,label,deficit,requested,received,mixups,noise")?;
        for o in &outcomes {
            for f in &o.fills {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    o.dataset.client_id,
                    f.label,
                    f.deficit,
                    f.requested,
                    f.received,
                    f.mixups,
                    f.noise
                )?;
            }
        }
        Ok(())
    })?;
    let balanced: Vec<ClientDataset> = outcomes.into_iter().map(|o| o.dataset).collect();
    write_with(&common.out.join("partition_balanced.csv"), |w| {
        write_manifest(w, &balanced)
    })?;
    println!(
        "balanced {} clients, {} trace rows, outputs in {}",
        balanced.len(),
        trace.len(),
        common.out.display()
    );
    Ok(())
}

fn cmd_train(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let result = run_experiment(&cfg, &common.out)?;
    write_with(&common.out.join("model.bin"), |w| {
        write_checkpoint(w, &result.model)
    })?;
    println!(
        "{}: final {:.4}, best {:.4}",
        result.tag, result.final_accuracy, result.best_accuracy
    );
    Ok(())
}

fn cmd_grid(common: &Common) -> Result<(), CliError> {
    let grid: AblationGrid = effective_text(common)?.parse()?;
    let rows = run_grid(&grid, &common.out)?;
    let fresh = rows.iter().filter(|r| r.computed).count();
    println!(
        "{} cells ({fresh} computed, {} reused), summary in {}",
        rows.len(),
        rows.len() - fresh,
        common.out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = &cli.common;
    match cli.command {
        Command::Partition => cmd_partition(common),
        Command::Mix {
            client,
            label,
            count,
        } => cmd_mix(common, client, label, count),
        Command::GenNoise { count, label } => cmd_gen_noise(common, count, label),
        Command::Spectrum { files } => cmd_spectrum(&files),
        Command::Balance => cmd_balance(common),
        Command::Train => cmd_train(common),
        Command::Grid => cmd_grid(common),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
