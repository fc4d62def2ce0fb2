//! Experiment configuration: an INI-style file of `key = value` lines under
//! `[section]` headers. Every key has a default; unknown keys are rejected so
//! that a typo cannot silently fall back to a default.
//!
//! ```text
//! [data]
//! dataset = toy            # toy | mnist | cifar10
//! path = data/mnist        # directory with the raw files (mnist, cifar10)
//! subset = 10000           # keep the first N training examples (0 = all)
//! num_classes = 10         # toy only
//! height = 16              # toy only
//! width = 16               # toy only
//! channels = 1             # toy only
//! train_per_class = 200    # toy only
//! test_per_class = 50      # toy only
//!
//! [partition]
//! num_clients = 10
//! scheme = class_skew      # class_skew | dirichlet
//! classes_per_client = 1   # class_skew
//! concentration = 0.5      # dirichlet
//!
//! [balance]
//! supplement_pct = 10      # 0 skips balancing
//! mix_fraction = 1.0
//! k = 4
//! sigma = 50
//! weight_mode = dominant_uniform   # dominant_uniform | simplex_sorted
//! clamp_output = false
//! deadline = 2
//! capacity_fraction = 1.0
//! topology = star          # star | none | 0-1,1-2,...
//! noise_bank = gabor       # gabor | haar
//!
//! [train]
//! rounds = 50
//! model = cnn              # logistic | mlp | cnn
//! local_epochs = 1
//! batch_size = 128
//! lr = 0.001
//! beta1 = 0.9
//! beta2 = 0.999
//! eps = 1e-8
//! participation = 1.0
//! rebalance_every = 0      # 0 = balance once before training
//! timing = deterministic   # deterministic | wallclock
//!
//! [run]
//! seed = 0
//! parallel = true
//! ```

use crate::balance::Topology;
use crate::dataset_io::PartitionScheme;
use crate::fed::{AdamConfig, ModelKind};
use crate::image::Dims;
use crate::mixup_dp::{DpMixConfig, WeightMode};
use crate::natural_noise::WaveletBank;
use crate::par::Parallelism;
use ini::{Ini, ParseOption};
use std::path::PathBuf;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("unknown key [{section}] {key}")]
    UnknownKey { section: String, key: String },
    #[error("[{section}] {key} = {value:?}: {reason}")]
    BadValue {
        section: String,
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Mnist { dir: PathBuf, subset: usize },
    Cifar10 { dir: PathBuf, subset: usize },
    Toy(ToySpec),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySpec {
    pub dims: Dims,
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub num_clients: usize,
    pub partition: PartitionScheme,
    pub supplement_pct: u32,
    pub mix_fraction: f64,
    pub mix: DpMixConfig,
    pub deadline: u64,
    pub capacity_fraction: f64,
    pub topology: Topology,
    pub noise_bank: WaveletBank,
    pub rounds: usize,
    pub model: ModelKind,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub participation: f64,
    pub rebalance_every: usize,
    pub wallclock: bool,
    pub seed: u64,
    pub parallelism: Parallelism,
}

const KEYS: &[(&str, &[&str])] = &[
    (
        "data",
        &[
            "dataset",
            "path",
            "subset",
            "num_classes",
            "height",
            "width",
            "channels",
            "train_per_class",
            "test_per_class",
        ],
    ),
    (
        "partition",
        &[
            "num_clients",
            "scheme",
            "classes_per_client",
            "concentration",
        ],
    ),
    (
        "balance",
        &[
            "supplement_pct",
            "mix_fraction",
            "k",
            "sigma",
            "weight_mode",
            "clamp_output",
            "deadline",
            "capacity_fraction",
            "topology",
            "noise_bank",
        ],
    ),
    (
        "train",
        &[
            "rounds",
            "model",
            "local_epochs",
            "batch_size",
            "lr",
            "beta1",
            "beta2",
            "eps",
            "participation",
            "rebalance_every",
            "timing",
        ],
    ),
    ("run", &["seed", "parallel"]),
];

/// Is `section.key` a recognised setting?
pub fn is_known_key(section: &str, key: &str) -> bool {
    KEYS.iter()
        .any(|(s, keys)| *s == section && keys.contains(&key))
}

struct Reader<'a> {
    ini: &'a Ini,
}

impl Reader<'_> {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.ini
            .section(Some(section))
            .and_then(|s| s.get(key))
            .map(str::trim)
    }

    fn parse<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e: T::Err| bad(section, key, v, e.to_string())),
        }
    }

    fn text<'s>(&'s self, section: &str, key: &str, default: &'s str) -> &'s str {
        self.raw(section, key).unwrap_or(default)
    }
}

fn bad(section: &str, key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        section: section.into(),
        key: key.into(),
        value: value.into(),
        reason: reason.into(),
    }
}

impl FromStr for ExperimentConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_ini(&parse_ini(text)?)
    }
}

pub fn parse_ini(text: &str) -> Result<Ini, ConfigError> {
    let opt = ParseOption {
        enabled_escape: false,
        ..ParseOption::default()
    };
    Ini::load_from_str_opt(text, opt).map_err(|e| ConfigError::Syntax(e.to_string()))
}

impl ExperimentConfig {
    pub fn from_ini(ini: &Ini) -> Result<Self, ConfigError> {
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (key, _) in props.iter() {
                if !is_known_key(section, key) {
                    return Err(ConfigError::UnknownKey {
                        section: section.into(),
                        key: key.into(),
                    });
                }
            }
        }
        let r = Reader { ini };

        let subset = r.parse("data", "subset", 0usize)?;
        let path = || PathBuf::from(r.text("data", "path", "data"));
        let dataset = match r.text("data", "dataset", "toy") {
            "mnist" => DatasetSource::Mnist {
                dir: path(),
                subset,
            },
            "cifar10" => DatasetSource::Cifar10 {
                dir: path(),
                subset,
            },
            "toy" => DatasetSource::Toy(ToySpec {
                dims: Dims::new(
                    r.parse("data", "height", 16)?,
                    r.parse("data", "width", 16)?,
                    r.parse("data", "channels", 1)?,
                ),
                num_classes: r.parse("data", "num_classes", 10)?,
                train_per_class: r.parse("data", "train_per_class", 200)?,
                test_per_class: r.parse("data", "test_per_class", 50)?,
            }),
            other => {
                return Err(bad(
                    "data",
                    "dataset",
                    other,
                    "expected toy, mnist or cifar10",
                ))
            }
        };

        let partition = match r.text("partition", "scheme", "class_skew") {
            "class_skew" => {
                PartitionScheme::ClassSkew(r.parse("partition", "classes_per_client", 1)?)
            }
            "dirichlet" => {
                PartitionScheme::Dirichlet(r.parse("partition", "concentration", 0.5)?)
            }
            other => {
                return Err(bad(
                    "partition",
                    "scheme",
                    other,
                    "expected class_skew or dirichlet",
                ))
            }
        };

        let weight_mode = match r.text("balance", "weight_mode", "dominant_uniform") {
            "dominant_uniform" => WeightMode::DominantUniform,
            "simplex_sorted" => WeightMode::SimplexSorted,
            other => {
                return Err(bad(
                    "balance",
                    "weight_mode",
                    other,
                    "expected dominant_uniform or simplex_sorted",
                ))
            }
        };
        let mix = DpMixConfig {
            k: r.parse("balance", "k", 4)?,
            sigma: r.parse("balance", "sigma", 50.0)?,
            weight_mode,
            clamp_output: r.parse("balance", "clamp_output", false)?,
        };
        let topo = r.text("balance", "topology", "star");
        let topology = Topology::parse(topo).map_err(|e| bad("balance", "topology", topo, e))?;
        let noise_bank = match r.text("balance", "noise_bank", "gabor") {
            "gabor" => WaveletBank::OrientedGabor,
            "haar" => WaveletBank::Haar,
            other => {
                return Err(bad(
                    "balance",
                    "noise_bank",
                    other,
                    "expected gabor or haar",
                ))
            }
        };

        let model_text = r.text("train", "model", "cnn");
        let model = model_text
            .parse()
            .map_err(|e: String| bad("train", "model", model_text, e))?;
        let adam = AdamConfig {
            lr: r.parse("train", "lr", 1e-3)?,
            beta1: r.parse("train", "beta1", 0.9)?,
            beta2: r.parse("train", "beta2", 0.999)?,
            eps: r.parse("train", "eps", 1e-8)?,
        };
        let wallclock = match r.text("train", "timing", "deterministic") {
            "deterministic" => false,
            "wallclock" => true,
            other => {
                return Err(bad(
                    "train",
                    "timing",
                    other,
                    "expected deterministic or wallclock",
                ))
            }
        };

        let cfg = ExperimentConfig {
            dataset,
            num_clients: r.parse("partition", "num_clients", 10)?,
            partition,
            supplement_pct: r.parse("balance", "supplement_pct", 0)?,
            mix_fraction: r.parse("balance", "mix_fraction", 1.0)?,
            mix,
            deadline: r.parse("balance", "deadline", 2)?,
            capacity_fraction: r.parse("balance", "capacity_fraction", 1.0)?,
            topology,
            noise_bank,
            rounds: r.parse("train", "rounds", 50)?,
            model,
            local_epochs: r.parse("train", "local_epochs", 1)?,
            batch_size: r.parse("train", "batch_size", 128)?,
            adam,
            participation: r.parse("train", "participation", 1.0)?,
            rebalance_every: r.parse("train", "rebalance_every", 0)?,
            wallclock,
            seed: r.parse("run", "seed", 0)?,
            parallelism: if r.parse("run", "parallel", true)? {
                Parallelism::Rayon
            } else {
                Parallelism::Sequential
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if let DatasetSource::Toy(t) = &self.dataset {
            if t.dims.is_empty()
                || t.num_classes < 2
                || t.train_per_class == 0
                || t.test_per_class == 0
            {
                return fail(
                    "toy dataset needs non-empty dims, at least 2 classes and examples per class"
                        .into(),
                );
            }
        }
        if self.num_clients == 0 {
            return fail("num_clients must be positive".into());
        }
        match self.partition {
            PartitionScheme::ClassSkew(0) => {
                return fail("classes_per_client must be positive".into())
            }
            PartitionScheme::Dirichlet(a) if !(a > 0.0 && a.is_finite()) => {
                return fail(format!("dirichlet concentration {a} must be positive"))
            }
            _ => {}
        }
        if self.supplement_pct > 100 {
            return fail(format!(
                "supplement_pct {} outside 0..=100",
                self.supplement_pct
            ));
        }
        if !(0.0..=1.0).contains(&self.mix_fraction) {
            return fail(format!("mix_fraction {} outside [0, 1]", self.mix_fraction));
        }
        if self.mix.k == 0 {
            return fail("k must be positive".into());
        }
        if !(self.mix.sigma >= 0.0 && self.mix.sigma.is_finite()) {
            return fail(format!(
                "sigma {} must be finite and non-negative",
                self.mix.sigma
            ));
        }
        if self.deadline == 0 {
            return fail("deadline must be at least one round".into());
        }
        if !(0.0..=1.0).contains(&self.capacity_fraction) {
            return fail(format!(
                "capacity_fraction {} outside [0, 1]",
                self.capacity_fraction
            ));
        }
        if let Topology::PeerEdges(edges) = &self.topology {
            if let Some((a, b)) = edges
                .iter()
                .find(|(a, b)| *a >= self.num_clients || *b >= self.num_clients)
            {
                return fail(format!(
                    "topology edge {a}-{b} names a client beyond num_clients"
                ));
            }
        }
        if self.rounds == 0 || self.local_epochs == 0 || self.batch_size == 0 {
            return fail("rounds, local_epochs and batch_size must be positive".into());
        }
        let a = &self.adam;
        if !(a.lr > 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.eps > 0.0)
        {
            return fail("adam needs lr > 0, betas in [0, 1) and eps > 0".into());
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return fail(format!(
                "participation {} outside (0, 1]",
                self.participation
            ));
        }
        Ok(())
    }

    /// Label used in summary rows, e.g. `No Supplement` or
    /// `10% Supplement 75% Mixup/ 25% Natural`.
    pub fn tag(&self) -> String {
        if self.supplement_pct == 0 {
            return "No Supplement".into();
        }
        let mix = (self.mix_fraction * 100.0).round() as u32;
        format!(
            "{}% Supplement {}% Mixup/ {}% Natural",
            self.supplement_pct,
            mix,
            100 - mix
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_cfg(text: &str) -> Result<ExperimentConfig, ConfigError> {
        text.parse()
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_cfg("").unwrap();
        assert_eq!(cfg.num_clients, 10);
        assert_eq!(cfg.partition, PartitionScheme::ClassSkew(1));
        assert_eq!(cfg.supplement_pct, 0);
        assert_eq!(cfg.mix.k, 4);
        assert_eq!(cfg.mix.sigma, 50.0);
        assert_eq!(cfg.adam, AdamConfig::default());
        assert_eq!(cfg.tag(), "No Supplement");
        assert!(matches!(cfg.dataset, DatasetSource::Toy(_)));
    }

    #[test]
    fn documented_example_parses() {
        let doc: String = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! [data]"))
            .take_while(|l| l.starts_with("//!") && !l.starts_with("//! ```"))
            .map(|l| format!("{}\n", l.trim_start_matches("//!").trim_start()))
            .collect();
        let cfg = parse_cfg(&doc).unwrap();
        assert_eq!(cfg.supplement_pct, 10);
        assert!(matches!(cfg.dataset, DatasetSource::Toy(t) if t.dims == Dims::new(16, 16, 1)));
    }

    #[test]
    fn full_file() {
        let text = "[data]\ndataset = mnist\npath = /tmp/m\nsubset = 10000\n\
                    [partition]\nscheme = dirichlet\nconcentration = 0.3\n\
                    [balance]\nsupplement_pct = 10\nmix_fraction = 0.75\ntopology = 0-1,1-2\n\
                    [train]\nmodel = mlp\nrounds = 3\n[run]\nseed = 7\nparallel = false\n";
        let cfg = parse_cfg(text).unwrap();
        assert_eq!(
            cfg.dataset,
            DatasetSource::Mnist {
                dir: "/tmp/m".into(),
                subset: 10000
            }
        );
        assert_eq!(cfg.partition, PartitionScheme::Dirichlet(0.3));
        assert_eq!(cfg.tag(), "10% Supplement 75% Mixup/ 25% Natural");
        assert_eq!(cfg.model, ModelKind::Mlp);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.parallelism, Parallelism::Sequential);
        assert_eq!(cfg.topology, Topology::peer_edges([(0, 1), (1, 2)]));
    }

    #[test]
    fn rejects_typos_and_bad_values() {
        assert!(matches!(
            parse_cfg("[train]\nround = 3\n"),
            Err(ConfigError::UnknownKey { .. })
        ));
        assert!(matches!(
            parse_cfg("[balance]\nk = four\n"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            parse_cfg("[balance]\nmix_fraction = 1.5\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            parse_cfg("[data]\ndataset = imagenet\n"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            parse_cfg("[partition]\nnum_clients = 2\n[balance]\ntopology = 0-5\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            parse_cfg("[balance]\ndeadline = 0\n"),
            Err(ConfigError::Invalid(_))
        ));
    }
}
