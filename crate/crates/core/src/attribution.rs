//! Shapley attribution under marginal replacement from a background set.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::Scorer;
use crate::seed::derive_seed;

/// Largest feature count accepted by exact enumeration.
pub const MAX_EXACT_FEATURES: usize = 15;

/// Rows scored per batch when evaluating coalitions.
const BATCH_ROWS: usize = 1 << 14;

#[derive(Debug, Error, PartialEq)]
pub enum AttributionError {
    #[error("exact Shapley values need at most {max} features, got {features}")]
    TooManyFeatures { features: usize, max: usize },
    #[error("background set is empty")]
    EmptyBackground,
    #[error("no rows to explain")]
    NoRows,
    #[error("model expects {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sampled mode needs at least one permutation")]
    NoPermutations,
    #[error("{names} feature names for {features} features")]
    NameMismatch { names: usize, features: usize },
    #[error("csv export failed: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ShapMode {
    Exact,
    Sampled { permutations: usize },
}

impl ShapMode {
    /// Exact enumeration when `p` allows it, otherwise permutation sampling.
    pub fn auto(p: usize, permutations: usize) -> ShapMode {
        if p <= MAX_EXACT_FEATURES {
            ShapMode::Exact
        } else {
            ShapMode::Sampled { permutations }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub phi: Vec<f64>,
    /// Mean model score over the background rows.
    pub base_value: f64,
    pub row_key: Option<String>,
    pub mode: ShapMode,
}

impl Attribution {
    pub fn total(&self) -> f64 {
        self.base_value + self.phi.iter().sum::<f64>()
    }
}

fn check(model: &dyn Scorer, row: &[f64], background: ArrayView2<f64>) -> Result<usize, AttributionError> {
    let p = model.n_features();
    if row.len() != p || background.ncols() != p {
        return Err(AttributionError::DimensionMismatch {
            expected: p,
            found: if row.len() != p { row.len() } else { background.ncols() },
        });
    }
    if background.nrows() == 0 {
        return Err(AttributionError::EmptyBackground);
    }
    Ok(p)
}

/// Coalition values `v(S)` for each mask in `masks`, where bit `j` set means
/// feature `j` comes from `row`.
fn coalition_values(model: &dyn Scorer, row: &[f64], background: ArrayView2<f64>, masks: &[u64]) -> Vec<f64> {
    let (nb, p) = background.dim();
    let per_batch = (BATCH_ROWS / nb).max(1);
    let mut out = Vec::with_capacity(masks.len());
    for chunk in masks.chunks(per_batch) {
        let mut x = Array2::zeros((chunk.len() * nb, p));
        for (c, &mask) in chunk.iter().enumerate() {
            for b in 0..nb {
                let mut r = x.row_mut(c * nb + b);
                for j in 0..p {
                    r[j] = if mask >> j & 1 == 1 { row[j] } else { background[[b, j]] };
                }
            }
        }
        let scores = model.score_rows(x.view());
        out.extend(scores.chunks(nb).map(|s| s.iter().sum::<f64>() / nb as f64));
    }
    out
}

fn exact(model: &dyn Scorer, row: &[f64], background: ArrayView2<f64>, p: usize) -> (Vec<f64>, f64) {
    let masks: Vec<u64> = (0..1u64 << p).collect();
    let v = coalition_values(model, row, background, &masks);
    // weight |S|! (p - |S| - 1)! / p! for a coalition of size |S|
    let fact: Vec<f64> = (0..=p).scan(1.0, |acc, k| {
        if k > 0 {
            *acc *= k as f64;
        }
        Some(*acc)
    })
    .collect();
    let weight: Vec<f64> = (0..p).map(|s| fact[s] * fact[p - s - 1] / fact[p]).collect();
    let mut phi = vec![0.0; p];
    for (i, slot) in phi.iter_mut().enumerate() {
        let bit = 1u64 << i;
        let mut acc = 0.0;
        for s in 0..1u64 << p {
            if s & bit == 0 {
                acc += weight[s.count_ones() as usize] * (v[(s | bit) as usize] - v[s as usize]);
            }
        }
        *slot = acc;
    }
    (phi, v[0])
}

fn sampled(model: &dyn Scorer, row: &[f64], background: ArrayView2<f64>, p: usize, permutations: usize, seed: u64) -> (Vec<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..p).collect();
    let mut phi = vec![0.0; p];
    let mut base = 0.0;
    for _ in 0..permutations {
        order.shuffle(&mut rng);
        let mut masks = Vec::with_capacity(p + 1);
        let mut mask = 0u64;
        masks.push(mask);
        for &j in &order {
            mask |= 1 << j;
            masks.push(mask);
        }
        let v = coalition_values(model, row, background, &masks);
        base = v[0];
        for (k, &j) in order.iter().enumerate() {
            phi[j] += v[k + 1] - v[k];
        }
    }
    phi.iter_mut().for_each(|v| *v /= permutations as f64);
    (phi, base)
}

/// Shapley values of `model` at `row`, with absent features drawn from each
/// background row in turn and averaged.
pub fn shap_explain(
    model: &dyn Scorer,
    row: &[f64],
    background: ArrayView2<f64>,
    mode: ShapMode,
    seed: u64,
) -> Result<Attribution, AttributionError> {
    let p = check(model, row, background)?;
    let (phi, base_value) = match mode {
        ShapMode::Exact => {
            if p > MAX_EXACT_FEATURES {
                return Err(AttributionError::TooManyFeatures {
                    features: p,
                    max: MAX_EXACT_FEATURES,
                });
            }
            exact(model, row, background, p)
        }
        ShapMode::Sampled { permutations } => {
            if permutations == 0 {
                return Err(AttributionError::NoPermutations);
            }
            if p >= 64 {
                return Err(AttributionError::TooManyFeatures { features: p, max: 63 });
            }
            sampled(model, row, background, p, permutations, seed)
        }
    };
    Ok(Attribution {
        phi,
        base_value,
        row_key: None,
        mode,
    })
}

/// Explain every row; row `i` uses the derived seed `(seed, i)`.
pub fn shap_explain_rows(
    model: &dyn Scorer,
    rows: ArrayView2<f64>,
    background: ArrayView2<f64>,
    mode: ShapMode,
    seed: u64,
) -> Result<Vec<Attribution>, AttributionError> {
    if rows.nrows() == 0 {
        return Err(AttributionError::NoRows);
    }
    (0..rows.nrows())
        .into_par_iter()
        .map(|i| shap_explain(model, &rows.row(i).to_vec(), background, mode, derive_seed(seed, &[i as u64])))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_shap: f64,
}

/// Sort by decreasing mean |φ|, ties by name.
pub fn rank_importances(mut items: Vec<FeatureImportance>) -> Vec<FeatureImportance> {
    items.sort_by(|a, b| b.mean_abs_shap.total_cmp(&a.mean_abs_shap).then_with(|| a.feature.cmp(&b.feature)));
    items
}

/// Per-feature mean |φ| over `rows`, ranked.
pub fn mean_abs_shap(
    model: &dyn Scorer,
    names: &[String],
    rows: ArrayView2<f64>,
    background: ArrayView2<f64>,
    mode: ShapMode,
    seed: u64,
) -> Result<Vec<FeatureImportance>, AttributionError> {
    if names.len() != model.n_features() {
        return Err(AttributionError::NameMismatch {
            names: names.len(),
            features: model.n_features(),
        });
    }
    let all = shap_explain_rows(model, rows, background, mode, seed)?;
    let n = all.len() as f64;
    let items = names
        .iter()
        .enumerate()
        .map(|(j, name)| FeatureImportance {
            feature: name.clone(),
            mean_abs_shap: all.iter().map(|a| a.phi[j].abs()).sum::<f64>() / n,
        })
        .collect();
    Ok(rank_importances(items))
}

pub fn write_importance_csv<W: Write>(out: W, items: &[FeatureImportance]) -> Result<(), AttributionError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| AttributionError::Csv(e.to_string());
    w.write_record(["feature", "mean_abs_shap"]).map_err(err)?;
    for it in items {
        w.write_record([it.feature.clone(), it.mean_abs_shap.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| AttributionError::Csv(e.to_string()))
}
