//! Command-line interface. Errors go to stderr as one JSON object per line.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use herbnmt_core::corpus::types::FIRST_YEAR;
use herbnmt_core::corpus::{IcdCode, Phenotype, Preset, Sex};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::stages::{inspect_checkpoint, Run, StageArgs};

/// Environment variable naming the worker thread count.
pub const THREADS_ENV: &str = "HERBNMT_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Desk,
    Paper,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Preset {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "herbnmt", version, about = "Translate between herbal prescriptions and patient phenotypes")]
pub struct Cli {
    /// Experiment configuration (TOML); defaults to the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; every stage seed derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<PresetArg>,
    /// Multiplies the records generated per disease.
    #[arg(long, global = true)]
    pub scale: Option<f64>,
    /// Config override `section.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus.
    GenCorpus,
    /// Flatten the class distribution and split off the held-out set.
    Balance,
    TrainRcnn,
    TrainArnn,
    /// Classify records with the trained rCNN.
    Classify {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Translate phenotypes with the trained aRNN.
    Translate {
        #[arg(long)]
        input: Option<PathBuf>,
        /// `CODES:SEX:AGE:MONTH[:YEAR]`, e.g. `43401,0,0:male:65:3`.
        #[arg(long = "case")]
        cases: Vec<String>,
    },
    /// Bucketed perplexity of the trained aRNN on both splits.
    Perplexity,
    /// Spectral analysis of the classifier's confusion matrices.
    Analyze {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Single-component probe and its agreement with the decoder embeddings.
    Probe,
    /// t-SNE of the decoder embeddings.
    Tsne,
    /// Translate, classify the translation and compare.
    Roundtrip {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Describe a checkpoint (path without extension or to its .json).
    CheckpointInspect { path: PathBuf },
    /// Write the resolved configuration to a file.
    InitConfig { path: PathBuf },
    /// Every stage from gen-corpus to roundtrip.
    Pipeline,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenCorpus => "gen-corpus",
            Command::Balance => "balance",
            Command::TrainRcnn => "train-rcnn",
            Command::TrainArnn => "train-arnn",
            Command::Classify { .. } => "classify",
            Command::Translate { .. } => "translate",
            Command::Perplexity => "perplexity",
            Command::Analyze { .. } => "analyze",
            Command::Probe => "probe",
            Command::Tsne => "tsne",
            Command::Roundtrip { .. } => "roundtrip",
            Command::CheckpointInspect { .. } => "checkpoint-inspect",
            Command::InitConfig { .. } => "init-config",
            Command::Pipeline => "pipeline",
        }
    }
}

/// Configuration from the file or preset, then `--seed`, `--out`, `--scale`, `--set`.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let cfg = ExperimentConfig::load(p)?;
            if let Some(preset) = cli.preset {
                if Preset::from(preset) != cfg.preset {
                    return Err(Error::Usage("--preset differs from the config file's preset".to_string()));
                }
            }
            cfg
        }
        None => ExperimentConfig::for_preset(cli.preset.map_or(Preset::Desk, Preset::from), 1),
    };
    if let Some(seed) = cli.seed {
        cfg.reseed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(scale) = cli.scale {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Usage("--scale must be positive".to_string()));
        }
        cfg.generator.records_per_profile = ((cfg.generator.records_per_profile as f64 * scale).round() as usize).max(1);
    }
    for o in &cli.overrides {
        cfg.set(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Worker threads requested through [`THREADS_ENV`]; compute runs on one.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| Error::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
    }
}

/// Parses `CODES:SEX:AGE:MONTH[:YEAR]`. Codes are comma-separated, `0` or
/// `NA` for absent; the year is a calendar year or `NA`.
pub fn parse_case(spec: &str) -> Result<Phenotype> {
    let bad = |m: &str| Error::Usage(format!("case {spec:?}: {m}"));
    let parts: Vec<&str> = spec.split(':').collect();
    if !(4..=5).contains(&parts.len()) {
        return Err(bad("expected CODES:SEX:AGE:MONTH[:YEAR]"));
    }
    let mut codes = Vec::new();
    for c in parts[0].split(',') {
        let c = c.trim();
        codes.push(if c == "0" || c.eq_ignore_ascii_case("na") { None } else { Some(c.parse::<IcdCode>()?) });
    }
    if codes.len() > 3 {
        return Err(bad("at most three diagnoses"));
    }
    codes.resize(3, None);
    let primary = codes[0].ok_or_else(|| bad("primary diagnosis is absent"))?;
    let sex = match parts[1].to_ascii_lowercase().as_str() {
        "male" | "m" => Sex::Male,
        "female" | "f" => Sex::Female,
        _ => return Err(bad("sex is male or female")),
    };
    let age = parts[2].parse().map_err(|_| bad("bad age"))?;
    let month = parts[3].parse().map_err(|_| bad("bad month"))?;
    let year = match parts.get(4) {
        None => None,
        Some(y) if y.eq_ignore_ascii_case("na") => None,
        Some(y) => {
            let y: u16 = y.parse().map_err(|_| bad("bad year"))?;
            Some(u8::try_from(y.checked_sub(FIRST_YEAR).ok_or_else(|| bad("year before 2004"))?).map_err(|_| bad("bad year"))?)
        }
    };
    Ok(Phenotype::new(primary, codes[1], codes[2], sex, age, month, year)?)
}

fn execute(cli: Cli) -> Result<()> {
    let threads = threads_from_env()?;
    if threads > 1 {
        println!("note: {THREADS_ENV}={threads}; compute runs on a single thread");
    }
    let args = |input: &Option<PathBuf>| StageArgs { input: input.clone(), cases: Vec::new() };
    match &cli.command {
        Command::CheckpointInspect { path } => {
            print!("{}", inspect_checkpoint(&path.with_extension(""))?);
            Ok(())
        }
        Command::InitConfig { path } => resolve_config(&cli)?.save(path),
        Command::Pipeline => Run::new(resolve_config(&cli)?).pipeline(),
        cmd => {
            let stage_args = match cmd {
                Command::Classify { input } | Command::Analyze { input } | Command::Roundtrip { input } => args(input),
                Command::Translate { input, cases } => StageArgs {
                    input: input.clone(),
                    cases: cases.iter().map(|c| parse_case(c)).collect::<Result<_>>()?,
                },
                _ => StageArgs::default(),
            };
            let mut run = Run::new(resolve_config(&cli)?);
            run.stage(cmd.name(), &stage_args)?;
            print!("{}", std::fs::read_to_string(run.path(&format!("{}.txt", cmd.name()))).unwrap_or_default());
            Ok(())
        }
    }
}

pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", Error::Usage(first.to_string()).to_json_line("cli"));
            return ExitCode::from(2);
        }
    };
    let stage = cli.command.name();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line(stage));
            ExitCode::from(if matches!(e, Error::Usage(_)) { 2 } else { 1 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_specs() {
        let p = parse_case("43401,0,0:male:65:3").unwrap();
        assert_eq!(p.primary().as_str(), "43401");
        assert_eq!((p.secondary(), p.sex(), p.age(), p.month(), p.year()), (None, Sex::Male, 65, 3, None));
        let p = parse_case("43401,440:F:65:3:2009").unwrap();
        assert_eq!(p.secondary().unwrap().as_str(), "440");
        assert_eq!(p.year(), Some(5));
        for bad in ["0:male:65:3", "431:x:65:3", "431:male:65", "431:male:65:13", "431,0,440:male:65:3", "431:male:65:3:1999"] {
            assert!(parse_case(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn config_resolution() {
        let cli = Cli::try_parse_from(["herbnmt", "--seed", "7", "--out", "x", "--scale", "0.5", "--set", "generator.noise_rate=0.3", "gen-corpus"]).unwrap();
        let cfg = resolve_config(&cli).unwrap();
        let mut want = ExperimentConfig::for_preset(Preset::Desk, 7);
        want.out = PathBuf::from("x");
        want.generator.records_per_profile = 325;
        want.generator.noise_rate = 0.3;
        assert_eq!(cfg, want);
        let cli = Cli::try_parse_from(["herbnmt", "--scale=-1", "balance"]).unwrap();
        assert!(matches!(resolve_config(&cli), Err(Error::Usage(_))));
    }
}
