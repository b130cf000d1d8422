//! Experiment configuration, stored as TOML.
//!
//! The file carries exactly one seed, at the top level. Every stochastic
//! stage draws its own seed from it with [`stage_seed`], so the per-stage
//! `seed` fields of the sub-configurations never appear in the file.
//!
//! ```toml
//! preset = "desk"
//! seed = 1
//! out = "runs/desk"
//!
//! [split]
//! test_fraction = 0.0223
//!
//! [generator]
//! n_diseases = 40
//! # ...
//! ```

use std::path::{Path, PathBuf};

use herbnmt_core::analysis::AnalysisConfig;
use herbnmt_core::arnn::{ArnnConfig, ArnnTrainConfig};
use herbnmt_core::balance::BalanceConfig;
use herbnmt_core::corpus::{GeneratorConfig, Preset};
use herbnmt_core::rcnn::{desk_heads, RcnnConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// Held-out fraction: 958 thousand of 42.958 million records.
pub const TEST_FRACTION: f64 = 1.0 - 42.0 / 42.958;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Generator,
    Balance,
    Split,
    RcnnInit,
    RcnnTrain,
    ArnnInit,
    ArnnTrain,
    Tsne,
}

/// Largest run seed; TOML integers are signed 64-bit.
pub const MAX_SEED: u64 = i64::MAX as u64;

/// SplitMix64 of the run seed and the stage index, truncated to 63 bits.
pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    let mut z = seed.wrapping_add((stage as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) >> 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RcnnSection {
    pub model: RcnnConfig,
    pub train: TrainConfig,
    /// Neighbours for the kNN baseline.
    pub knn_k: usize,
    pub batch: usize,
    /// Disease categories whose records are trained and evaluated on; empty keeps all.
    #[serde(default)]
    pub categories: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArnnSection {
    pub model: ArnnConfig,
    pub train: ArnnTrainConfig,
    pub batch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    /// Cluster counts at which the probe and embedding partitions are compared.
    pub agreement_k: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundTripSection {
    /// Acceptance floor for the primary-disease match rate.
    pub min_primary_rate: f64,
    /// Acceptance floor as a multiple of chance.
    pub min_chance_multiple: f64,
    /// Phenotypes checked: the held-out split, capped at this many.
    pub max_phenotypes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub seed: u64,
    pub out: PathBuf,
    pub split: SplitConfig,
    pub generator: GeneratorConfig,
    pub balance: BalanceConfig,
    pub rcnn: RcnnSection,
    pub arnn: ArnnSection,
    pub analysis: AnalysisConfig,
    pub probe: ProbeSection,
    pub roundtrip: RoundTripSection,
}

/// Where the sub-configuration seeds live in the serialized form.
const SEED_PATHS: [(&[&str], Stage); 7] = [
    (&["generator"], Stage::Generator),
    (&["balance"], Stage::Balance),
    (&["rcnn", "model"], Stage::RcnnInit),
    (&["rcnn", "train"], Stage::RcnnTrain),
    (&["arnn", "model"], Stage::ArnnInit),
    (&["arnn", "train"], Stage::ArnnTrain),
    (&["analysis", "tsne"], Stage::Tsne),
];

fn table_at<'a>(root: &'a mut toml::Table, path: &[&str]) -> Result<&'a mut toml::Table> {
    let mut t = root;
    for key in path {
        t = t
            .get_mut(*key)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| Error::Config(format!("missing section [{}]", path.join("."))))?;
    }
    Ok(t)
}

impl ExperimentConfig {
    pub fn for_preset(preset: Preset, seed: u64) -> Self {
        let generator = GeneratorConfig::for_preset(preset, 0);
        let heads = desk_heads(generator.n_diseases).to_vec();
        let (rcnn, arnn) = match preset {
            Preset::Desk => (RcnnConfig::desk(generator.n_diseases, 0), ArnnConfig::desk(0)),
            Preset::Paper => (RcnnConfig { head_sizes: heads, ..RcnnConfig::paper(0) }, ArnnConfig::paper(0)),
        };
        let mut cfg = ExperimentConfig {
            preset,
            seed,
            out: PathBuf::from("runs").join(match preset {
                Preset::Desk => "desk",
                Preset::Paper => "paper",
            }),
            split: SplitConfig { test_fraction: TEST_FRACTION },
            generator,
            balance: BalanceConfig::default(),
            rcnn: RcnnSection {
                model: rcnn,
                train: TrainConfig { epochs: 3, ..TrainConfig::default() },
                knn_k: 1,
                batch: 64,
                categories: Vec::new(),
            },
            arnn: ArnnSection {
                model: arnn,
                train: ArnnTrainConfig { epochs: 4, ..ArnnTrainConfig::default() },
                batch: 64,
            },
            analysis: AnalysisConfig::default(),
            probe: ProbeSection { agreement_k: vec![8] },
            roundtrip: RoundTripSection {
                min_primary_rate: 0.7,
                min_chance_multiple: 10.0,
                max_phenotypes: 1000,
            },
        };
        cfg.reseed(seed);
        cfg
    }

    /// Sets the run seed and every stage seed derived from it.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.generator.seed = stage_seed(seed, Stage::Generator);
        self.balance.seed = stage_seed(seed, Stage::Balance);
        self.rcnn.model.seed = stage_seed(seed, Stage::RcnnInit);
        self.rcnn.train.seed = stage_seed(seed, Stage::RcnnTrain);
        self.arnn.model.seed = stage_seed(seed, Stage::ArnnInit);
        self.arnn.train.seed = stage_seed(seed, Stage::ArnnTrain);
        self.analysis.tsne.seed = stage_seed(seed, Stage::Tsne);
    }

    pub fn split_seed(&self) -> u64 {
        stage_seed(self.seed, Stage::Split)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.seed > MAX_SEED {
            return bad("seed must not exceed 2^63 - 1");
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return bad("split.test_fraction must lie in (0, 1)");
        }
        if self.generator.preset != self.preset {
            return bad("generator.preset differs from the run preset");
        }
        let heads = desk_heads(self.generator.n_diseases);
        if self.rcnn.model.head_sizes != heads {
            return Err(Error::Config(format!("rcnn.model.head_sizes must be {heads:?} for {} diseases", self.generator.n_diseases)));
        }
        if self.rcnn.knn_k == 0 || self.rcnn.batch == 0 || self.arnn.batch == 0 {
            return bad("knn_k and batch sizes must be positive");
        }
        if self.probe.agreement_k.contains(&0) {
            return bad("probe.agreement_k entries must be positive");
        }
        self.generator.validate()?;
        self.rcnn.model.validate()?;
        self.arnn.model.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        let mut root = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for (path, _) in SEED_PATHS {
            table_at(&mut root, path)?.remove("seed");
        }
        toml::to_string(&root).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let seed = root
            .get("seed")
            .and_then(toml::Value::as_integer)
            .ok_or_else(|| Error::Config("missing integer `seed`".to_string()))?;
        let seed = u64::try_from(seed).map_err(|_| Error::Config("`seed` must be non-negative".to_string()))?;
        for (path, stage) in SEED_PATHS {
            let t = table_at(&mut root, path)?;
            if t.contains_key("seed") {
                return Err(Error::Config(format!("[{}] must not set a seed; the top-level seed governs every stage", path.join("."))));
            }
            t.insert("seed".to_string(), toml::Value::Integer(stage_seed(seed, stage) as i64));
        }
        root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(io_err(path))
    }

    /// Applies a `section.key=value` override; the value is parsed as TOML
    /// and falls back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| Error::Usage(format!("expected key=value, got {assignment:?}")))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.last() == Some(&"seed") && path.len() > 1 {
            return Err(Error::Usage("per-stage seeds derive from the top-level seed".to_string()));
        }
        let value = value.trim();
        let parsed: toml::Value = format!("v = {value}").parse::<toml::Table>().ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut root = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let (last, parents) = path.split_last().ok_or_else(|| Error::Usage("empty key".to_string()))?;
        let t = table_at(&mut root, parents)?;
        if !t.contains_key(*last) {
            return Err(Error::Usage(format!("unknown key {key}")));
        }
        t.insert(last.to_string(), parsed);
        let mut next: ExperimentConfig = root.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
        let seed = next.seed;
        next.reseed(seed);
        *self = next;
        Ok(())
    }
}
