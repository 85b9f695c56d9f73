use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::design::{Cell, ColumnInfo, ColumnKind, DesignMatrix};
use super::{CohortError, Group};
use crate::radiomics::percentile;

/// Reserved one-hot level for categories never seen at fit time.
pub const UNSEEN_LEVEL: &str = "<unseen>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ColumnTransform {
    Continuous { median: f64, mean: f64, sd: f64 },
    Categorical { levels: Vec<String>, mode: String },
}

/// One column of the encoded numeric matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedColumn {
    pub name: String,
    pub group: Group,
    /// Name of the raw column it derives from.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub columns: Vec<ColumnInfo>,
    pub transforms: Vec<ColumnTransform>,
    pub fitted_rows: usize,
    pub encoded: Vec<EncodedColumn>,
}

impl Preprocessor {
    pub fn encoded_names(&self) -> Vec<String> {
        self.encoded.iter().map(|c| c.name.clone()).collect()
    }
}

/// Fit imputation, scaling and encoding parameters on `training_rows` only.
pub fn fit_preprocessor(matrix: &DesignMatrix, training_rows: &[usize]) -> Result<Preprocessor, CohortError> {
    if training_rows.is_empty() {
        return Err(CohortError::NoTrainingRows);
    }
    let mut transforms = Vec::with_capacity(matrix.n_columns());
    let mut encoded = Vec::new();
    let mut imputed_clinical = 0usize;
    for (j, col) in matrix.columns.iter().enumerate() {
        let cells = training_rows.iter().map(|&i| &matrix.rows[i][j]);
        match col.kind {
            ColumnKind::Continuous => {
                let observed: Vec<f64> = cells
                    .clone()
                    .filter_map(|c| match c {
                        Cell::Num(v) => Some(*v),
                        _ => None,
                    })
                    .collect();
                if observed.is_empty() {
                    return Err(CohortError::AllMissingColumn(col.name.clone()));
                }
                let median = percentile(&observed, 50.0).map_err(|e| CohortError::Malformed {
                    context: col.name.clone(),
                    message: e.to_string(),
                })?;
                let missing = training_rows.len() - observed.len();
                if col.group != Group::R {
                    imputed_clinical += missing;
                }
                let n = training_rows.len() as f64;
                let sum: f64 = observed.iter().sum::<f64>() + median * missing as f64;
                let mean = sum / n;
                let ss: f64 = observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                    + missing as f64 * (median - mean).powi(2);
                let sd = (ss / n).sqrt();
                let sd = if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 };
                transforms.push(ColumnTransform::Continuous { median, mean, sd });
                encoded.push(EncodedColumn {
                    name: col.name.clone(),
                    group: col.group,
                    source: col.name.clone(),
                });
            }
            ColumnKind::Categorical => {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for c in cells {
                    match c {
                        Cell::Cat(s) => *counts.entry(s.as_str()).or_default() += 1,
                        Cell::Num(_) => return Err(CohortError::MixedColumn(col.name.clone())),
                        Cell::Missing => imputed_clinical += 1,
                    }
                }
                if counts.is_empty() {
                    return Err(CohortError::AllMissingColumn(col.name.clone()));
                }
                // BTreeMap iteration is sorted, so ties go to the first level
                let mode = counts
                    .iter()
                    .fold((None, 0), |(best, n), (&k, &c)| if c > n { (Some(k), c) } else { (best, n) })
                    .0
                    .unwrap_or_default()
                    .to_string();
                let levels: Vec<String> = counts.keys().map(|s| s.to_string()).collect();
                for level in levels.iter().map(String::as_str).chain([UNSEEN_LEVEL]) {
                    encoded.push(EncodedColumn {
                        name: format!("{}={}", col.name, level),
                        group: col.group,
                        source: col.name.clone(),
                    });
                }
                transforms.push(ColumnTransform::Categorical { levels, mode });
            }
        }
    }
    if imputed_clinical > 0 {
        log::warn!("{imputed_clinical} missing clinical training values imputed with median/mode");
    }
    Ok(Preprocessor {
        columns: matrix.columns.clone(),
        transforms,
        fitted_rows: training_rows.len(),
        encoded,
    })
}

/// Impute, scale and one-hot encode `rows` of `matrix`.
pub fn apply_preprocessor(pre: &Preprocessor, matrix: &DesignMatrix, rows: &[usize]) -> Result<Array2<f64>, CohortError> {
    if matrix.columns.len() != pre.columns.len() {
        let known: BTreeSet<&str> = pre.columns.iter().map(|c| c.name.as_str()).collect();
        let unknown = matrix
            .columns
            .iter()
            .find(|c| !known.contains(c.name.as_str()))
            .map(|c| c.name.clone())
            .unwrap_or_else(|| format!("{} columns expected", pre.columns.len()));
        return Err(CohortError::UnknownColumn(unknown));
    }
    for (a, b) in matrix.columns.iter().zip(&pre.columns) {
        if a.name != b.name {
            return Err(CohortError::UnknownColumn(a.name.clone()));
        }
    }
    let mut out = Array2::zeros((rows.len(), pre.encoded.len()));
    for (r, &i) in rows.iter().enumerate() {
        let mut k = 0;
        for (j, t) in pre.transforms.iter().enumerate() {
            let cell = &matrix.rows[i][j];
            match t {
                ColumnTransform::Continuous { median, mean, sd } => {
                    let v = match cell {
                        Cell::Num(v) => *v,
                        Cell::Missing => *median,
                        Cell::Cat(_) => return Err(CohortError::MixedColumn(pre.columns[j].name.clone())),
                    };
                    out[[r, k]] = (v - mean) / sd;
                    k += 1;
                }
                ColumnTransform::Categorical { levels, mode } => {
                    let level = match cell {
                        Cell::Cat(s) => s.as_str(),
                        Cell::Missing => mode.as_str(),
                        Cell::Num(_) => return Err(CohortError::MixedColumn(pre.columns[j].name.clone())),
                    };
                    let pos = levels.binary_search_by(|l| l.as_str().cmp(level)).unwrap_or(levels.len());
                    out[[r, k + pos]] = 1.0;
                    k += levels.len() + 1;
                }
            }
        }
    }
    Ok(out)
}
