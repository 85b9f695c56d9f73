//! Command-line front end: `extract`, `synth`, `run`, `compare`, `report`.
//!
//! Exit codes are 0 on success, 1 for usage or configuration errors, 2 for
//! data errors and 3 for internal failures.

mod compare;
mod config;
mod extract;
mod report;
mod run;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use compare::{cmd_compare, CompareSummary};
pub use config::{DataConfig, ExperimentConfig};
pub use extract::{cmd_extract, ExtractSummary};
pub use report::{cmd_report, ReportSummary};
pub use run::{cmd_run, cmd_synth, load_experiment_cohort, manifest_file_name, CellFailure, CohortSummary, IndexEntry, RunIndex, RunManifest, SCHEMA_VERSION};

use crate::cohort::{ClassificationTask, SynthConfig};
use crate::evaluation::EyeMode;
use crate::models::ModelKind;
use crate::radiomics::Modality;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Lib(#[from] crate::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
            CliError::Lib(crate::Error::Config(_)) => 1,
            CliError::Lib(_) => 2,
        }
    }
}

impl From<crate::evaluation::EvalError> for CliError {
    fn from(e: crate::evaluation::EvalError) -> Self {
        CliError::Lib(e.into())
    }
}

impl From<crate::cohort::CohortError> for CliError {
    fn from(e: crate::cohort::CohortError) -> Self {
        CliError::Lib(e.into())
    }
}

pub(crate) fn io_err(context: impl Into<String>, e: std::io::Error) -> CliError {
    CliError::Lib(crate::Error::io(context, e))
}

/// Write through a sibling temporary file and rename it into place, so
/// readers never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| io_err(format!("cannot create {}", dir.display()), e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(io_err(format!("cannot write {}", path.display()), e));
    }
    Ok(())
}

pub(crate) fn to_json<T: serde::Serialize>(value: &T, context: &str) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Lib(crate::Error::json(context, e)))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read(path).map_err(|e| io_err(format!("cannot read {}", path.display()), e))?;
    serde_json::from_slice(&text).map_err(|e| CliError::Lib(crate::Error::json(path.display().to_string(), e)))
}

#[derive(Debug, Parser)]
#[command(name = "retinomics", version, about = "Retinal radiomics cardiovascular-risk classification pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract first-order radiomic features from an image manifest CSV.
    Extract {
        /// CSV with columns patient_id,eye,modality,path,spacing_x,spacing_y.
        manifest: PathBuf,
        /// Output features CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic cohort as features.csv and clinical.csv.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Generator parameters (TOML); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run nested cross-validation for every configured cell.
    Run(RunArgs),
    /// Pairwise DeLong comparisons between run manifests.
    Compare {
        /// Run manifests or index.json files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tables, ROC curves and importance rankings from a run index.
    Report {
        index: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Experiment config (TOML); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Eye modes, comma separated (both, single).
    #[arg(long, value_delimiter = ',')]
    pub eyes: Vec<EyeMode>,
    /// Radiomic modality filter such as `OCT,FR` or `all`; repeat for several.
    #[arg(long)]
    pub modalities: Vec<String>,
    #[arg(long)]
    pub task: Option<ClassificationTask>,
    /// Folder holding features.csv and clinical.csv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Models, comma separated or repeated.
    #[arg(long, value_delimiter = ',')]
    pub model: Vec<ModelKind>,
}

fn parse_modalities(spec: &str) -> Result<Vec<Modality>, CliError> {
    let spec = spec.trim();
    if spec.eq_ignore_ascii_case("all") || spec.is_empty() {
        return Ok(Vec::new());
    }
    spec.split([',', '+'])
        .map(|m| m.trim().parse::<Modality>().map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

impl RunArgs {
    /// Config file (or defaults) with command-line overrides applied.
    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if !self.eyes.is_empty() {
            cfg.eye_modes = self.eyes.clone();
        }
        if !self.modalities.is_empty() {
            cfg.modality_filters = self.modalities.iter().map(|m| parse_modalities(m)).collect::<Result<_, _>>()?;
        }
        if let Some(task) = self.task {
            cfg.task = task;
        }
        if let Some(dir) = &self.data {
            cfg.data.features = Some(dir.join("features.csv"));
            cfg.data.clinical = Some(dir.join("clinical.csv"));
        }
        if !self.model.is_empty() {
            cfg.models = self.model.clone();
        }
        cfg.validate()?;
        if self.jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        Ok(cfg)
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Extract { manifest, out } => {
            let s = cmd_extract(&manifest, &out)?;
            println!("wrote {} rows x {} columns to {}", s.rows, s.columns, out.display());
        }
        Command::Synth { out, seed, config } => {
            let cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| io_err(format!("cannot read {}", path.display()), e))?;
                    SynthConfig::from_toml_str(&text).map_err(|e| CliError::Lib(crate::Error::Config(e.to_string())))?
                }
                None => SynthConfig::default(),
            };
            let summary = cmd_synth(&cfg, seed, &out)?;
            println!("wrote {} eyes of {} patients to {}", summary.eyes, summary.patients, out.display());
        }
        Command::Run(args) => {
            let cfg = args.experiment()?;
            let index = cmd_run(&cfg, &args.out, args.jobs)?;
            for c in &index.cells {
                println!("{:<48} {:.3} ± {:.3}", c.file, c.mean_auc, c.sd_auc);
            }
            println!("wrote {} manifests and index.json to {}", index.cells.len(), args.out.display());
            if !index.failures.is_empty() {
                let msg: Vec<String> = index.failures.iter().map(|f| format!("{}: {}", f.cell, f.error)).collect();
                return Err(CliError::Data(format!("{} cell(s) failed:\n{}", index.failures.len(), msg.join("\n"))));
            }
        }
        Command::Compare { inputs, out } => {
            let s = cmd_compare(&inputs, &out)?;
            println!("wrote {} pairwise comparisons to {}", s.pairs, out.display());
        }
        Command::Report { index, out } => {
            let s = cmd_report(&index, &out)?;
            println!("wrote report for {} cells to {}", s.cells, out.display());
            if !s.missing.is_empty() {
                return Err(CliError::Data(format!(
                    "partial report, missing manifests:\n{}",
                    s.missing.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n")
                )));
            }
        }
    }
    Ok(())
}

/// Parse `args` (including the program name), run the command and return
/// the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion
                | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
        }
    };
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| dispatch(cli))) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            eprintln!("error: {}", CliError::Internal(msg));
            3
        }
    }
}
