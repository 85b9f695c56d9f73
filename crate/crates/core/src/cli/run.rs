use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{to_json, write_atomic, CliError, ExperimentConfig};
use crate::cohort::{
    cohort_feature_rows, generate_synthetic, load_cohort, write_clinical_csv, write_features_csv, ClassificationTask, Cohort, DataCombination,
    RiskLabel, SynthConfig,
};
use crate::evaluation::{run_nested_cv_many, EyeMode, RunResult};
use crate::models::ModelKind;

/// Version of the manifest and index JSON layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub patients: usize,
    pub eyes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub provenance: String,
    pub patients: usize,
    pub eyes: usize,
    pub classes: BTreeMap<RiskLabel, ClassCount>,
}

impl CohortSummary {
    pub fn of(cohort: &Cohort) -> Self {
        let counts = cohort.class_counts();
        CohortSummary {
            provenance: cohort.provenance.clone(),
            patients: cohort.patient_ids().len(),
            eyes: cohort.len(),
            classes: RiskLabel::ALL
                .iter()
                .map(|&l| {
                    let (patients, eyes) = counts[l.index()];
                    (l, ClassCount { patients, eyes })
                })
                .collect(),
        }
    }
}

/// Everything recorded for one (task, combination, model, eye mode) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub cohort: CohortSummary,
    pub experiment: ExperimentConfig,
    pub result: RunResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub task: ClassificationTask,
    pub combination: DataCombination,
    pub model: ModelKind,
    pub eye_mode: EyeMode,
    pub mean_auc: f64,
    pub sd_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunIndex {
    pub schema_version: u32,
    pub tool_version: String,
    pub cohort: CohortSummary,
    pub experiment: ExperimentConfig,
    pub cells: Vec<IndexEntry>,
    #[serde(default)]
    pub failures: Vec<CellFailure>,
}

pub fn manifest_file_name(task: ClassificationTask, combination: &DataCombination, model: ModelKind, eye_mode: EyeMode) -> String {
    format!(
        "task{}__{}__{}__{}__{}.json",
        task.number(),
        combination.combination,
        combination.modality_label(),
        model,
        eye_mode.as_str()
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSummary {
    pub patients: usize,
    pub eyes: usize,
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), crate::cohort::CohortError>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Write a synthetic cohort as `features.csv` and `clinical.csv` in `out`.
pub fn cmd_synth(config: &SynthConfig, seed: u64, out: &Path) -> Result<SynthSummary, CliError> {
    config.validate().map_err(|e| CliError::Lib(crate::Error::Config(e.to_string())))?;
    let cohort = generate_synthetic(config, seed)?;
    let (rows, columns) = cohort_feature_rows(&cohort);
    write_atomic(&out.join("features.csv"), &csv_bytes(|b| write_features_csv(b, &rows, &columns))?)?;
    write_atomic(&out.join("clinical.csv"), &csv_bytes(|b| write_clinical_csv(b, &cohort))?)?;
    Ok(SynthSummary {
        patients: cohort.patient_ids().len(),
        eyes: cohort.len(),
    })
}

/// The configured CSV pair, or the synthetic generator when none is given.
pub fn load_experiment_cohort(cfg: &ExperimentConfig) -> Result<Cohort, CliError> {
    match (&cfg.data.features, &cfg.data.clinical) {
        (Some(f), Some(c)) => Ok(load_cohort(f, c)?),
        (None, None) => Ok(generate_synthetic(&cfg.data.synthetic, cfg.data.synthetic_seed)?),
        _ => Err(CliError::Lib(crate::Error::Config("data.features and data.clinical must be given together".into()))),
    }
}

/// Run every (combination, modality filter, eye mode) cell for all
/// configured models, writing one manifest per model plus `index.json`.
/// Cells run concurrently on `jobs` threads; output does not depend on it.
/// Failed cells are recorded in the index and do not stop the others.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<RunIndex, CliError> {
    cfg.validate()?;
    let cohort = load_experiment_cohort(cfg)?;
    run_on_cohort(cfg, &cohort, out, jobs)
}

pub(crate) fn run_on_cohort(cfg: &ExperimentConfig, cohort: &Cohort, out: &Path, jobs: usize) -> Result<RunIndex, CliError> {
    let models = cfg.models();
    let cells: Vec<(DataCombination, EyeMode)> = cfg
        .data_combinations()
        .into_iter()
        .flat_map(|dc| cfg.eye_modes().into_iter().map(move |e| (dc.clone(), e)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let outcomes: Vec<_> = pool.install(|| {
        cells
            .par_iter()
            .map(|(dc, eye)| run_nested_cv_many(cohort, cfg.task, dc, &models, *eye, &cfg.nested, cfg.seed))
            .collect()
    });
    let summary = CohortSummary::of(cohort);
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for ((dc, eye), outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok(results) => {
                for result in results {
                    let file = manifest_file_name(cfg.task, dc, result.model, *eye);
                    entries.push(IndexEntry {
                        file: file.clone(),
                        task: cfg.task,
                        combination: dc.clone(),
                        model: result.model,
                        eye_mode: *eye,
                        mean_auc: result.mean_auc,
                        sd_auc: result.sd_auc,
                    });
                    let manifest = RunManifest {
                        schema_version: SCHEMA_VERSION,
                        tool_version: env!("CARGO_PKG_VERSION").to_string(),
                        cohort: summary.clone(),
                        experiment: cfg.clone(),
                        result,
                    };
                    write_atomic(&out.join(&file), &to_json(&manifest, &file)?)?;
                }
            }
            Err(e) => {
                log::error!("cell task {} {dc} {eye} failed: {e}", cfg.task);
                failures.push(CellFailure {
                    cell: format!("task{} {dc} {eye}", cfg.task.number()),
                    error: e.to_string(),
                });
            }
        }
    }
    let index = RunIndex {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        cohort: summary,
        experiment: cfg.clone(),
        cells: entries,
        failures,
    };
    write_atomic(&out.join("index.json"), &to_json(&index, "index.json")?)?;
    Ok(index)
}
