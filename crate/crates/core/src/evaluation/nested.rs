use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{grouped_kfold, grouped_kfold_stratified, FoldPlan};
use super::roc::auc;
use super::EvalError;
use crate::attribution::{mean_abs_shap, rank_importances, FeatureImportance, ShapMode, MAX_EXACT_FEATURES};
use crate::cohort::{apply_preprocessor, assemble, fit_preprocessor, select_single_eye, ClassificationTask, Cohort, DataCombination, EyeKey, Group};
use crate::models::{score, train, ModelKind};
use crate::radiomics::percentile;
use crate::selection::{grid_search, rf_feature_union, two_stage_select, Grid, GridScore, InnerProblem, Setting, TwoStageTrace, DEFAULT_EPSILON};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EyeMode {
    #[default]
    Both,
    Single,
}

impl EyeMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EyeMode::Both => "both",
            EyeMode::Single => "single",
        }
    }
}

impl std::fmt::Display for EyeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EyeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "both" | "2" => Ok(EyeMode::Both),
            "single" | "1" => Ok(EyeMode::Single),
            _ => Err(format!("unknown eye mode {s:?} (expected both or single)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapConfig {
    pub enabled: bool,
    /// Feature counts above this use permutation sampling.
    pub max_exact_features: usize,
    pub permutations: usize,
}

impl Default for ShapConfig {
    fn default() -> Self {
        ShapConfig {
            enabled: true,
            max_exact_features: MAX_EXACT_FEATURES,
            permutations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NestedConfig {
    pub k: usize,
    pub m: usize,
    /// Deal patients into folds separately per class.
    pub stratified: bool,
    /// Run two-stage backward elimination inside each outer fold.
    pub selection: bool,
    pub epsilon: f64,
    /// Grid overrides; kinds without an entry use [`Grid::default_for`].
    pub grids: Vec<Grid>,
    /// Models whose selections the random forest pools.
    pub rf_siblings: Vec<ModelKind>,
    pub shap: ShapConfig,
}

impl Default for NestedConfig {
    fn default() -> Self {
        NestedConfig {
            k: 5,
            m: 4,
            stratified: false,
            selection: true,
            epsilon: DEFAULT_EPSILON,
            grids: Vec::new(),
            rf_siblings: vec![ModelKind::Lr, ModelKind::Lda, ModelKind::SvcLinear, ModelKind::SvcRbf],
            shap: ShapConfig::default(),
        }
    }
}

impl NestedConfig {
    pub fn grid(&self, kind: ModelKind) -> Grid {
        self.grids
            .iter()
            .find(|g| g.kind == kind)
            .cloned()
            .unwrap_or_else(|| Grid::default_for(kind))
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.k < 2 || self.m < 2 {
            return Err(EvalError::InvalidFolds(format!("k = {} and m = {} must both be at least 2", self.k, self.m)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(EvalError::InvalidFolds(format!("epsilon {} must be a finite non-negative number", self.epsilon)));
        }
        for g in &self.grids {
            g.validate()?;
        }
        if self.rf_siblings.contains(&ModelKind::Rf) {
            return Err(EvalError::InvalidFolds("the random forest cannot be its own sibling".into()));
        }
        if self.shap.enabled && self.shap.permutations == 0 {
            return Err(EvalError::InvalidFolds("shap.permutations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledScore {
    pub key: EyeKey,
    pub label: bool,
    pub score: f64,
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDetail {
    pub fold: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub auc: f64,
    /// Grid scores before selection (absent for the forest, whose features
    /// come from its siblings).
    pub initial_grid: Option<Vec<GridScore>>,
    pub initial_setting: Option<Setting>,
    pub selection: Option<TwoStageTrace>,
    pub selected_features: Vec<String>,
    pub final_grid: Vec<GridScore>,
    pub final_setting: Setting,
    pub encoded_features: Vec<String>,
    /// Mean |φ| over this fold's test rows.
    pub importance: Vec<FeatureImportance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub task: ClassificationTask,
    pub combination: DataCombination,
    pub model: ModelKind,
    pub eye_mode: EyeMode,
    pub seed: u64,
    pub config: NestedConfig,
    pub fold_aucs: Vec<f64>,
    pub mean_auc: f64,
    /// Sample standard deviation of the fold AUCs.
    pub sd_auc: f64,
    /// Out-of-fold scores sorted by eye key.
    pub pooled: Vec<PooledScore>,
    pub folds: Vec<FoldDetail>,
    /// Mean |φ| over all pooled test rows; a feature absent from a fold's
    /// model contributes zero for that fold's rows.
    pub importance: Vec<FeatureImportance>,
}

pub(crate) fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

fn kind_index(kind: ModelKind) -> u64 {
    ModelKind::ALL.iter().position(|k| *k == kind).expect("known kind") as u64
}

/// Per-fold data shared by every model of one cell.
struct FoldData {
    problem: InnerProblem,
    x_test: Array2<f64>,
    y_test: Vec<bool>,
    test_rows: Vec<usize>,
    encoded_names: Vec<String>,
    radiomic: Vec<String>,
    other: Vec<String>,
}

struct Selected {
    initial: Option<(Vec<GridScore>, Setting)>,
    trace: Option<TwoStageTrace>,
    features: Vec<String>,
}

fn fold_data(design: &crate::cohort::DesignMatrix, plan: &FoldPlan, fold: usize) -> Result<FoldData, EvalError> {
    let groups = &design.groups;
    let train_rows = plan.outer_train_rows(groups, fold);
    let test_rows = plan.outer_test_rows(groups, fold);
    let y_test: Vec<bool> = test_rows.iter().map(|&i| design.target[i]).collect();
    let positives = y_test.iter().filter(|&&v| v).count();
    if positives == 0 || positives == y_test.len() {
        return Err(EvalError::DegenerateFold {
            fold,
            positives,
            negatives: y_test.len() - positives,
        });
    }
    let pre = fit_preprocessor(design, &train_rows)?;
    let x_train = apply_preprocessor(&pre, design, &train_rows)?;
    let x_test = apply_preprocessor(&pre, design, &test_rows)?;
    let y_train: Vec<bool> = train_rows.iter().map(|&i| design.target[i]).collect();
    let local = |rows: Vec<usize>| -> Vec<usize> {
        rows.into_iter()
            .map(|g| train_rows.binary_search(&g).expect("inner rows are outer-train rows"))
            .collect()
    };
    let splits = plan
        .inner_splits(groups, fold)
        .into_iter()
        .map(|(t, v)| (local(t), local(v)))
        .collect();
    let sources: Vec<String> = pre.encoded.iter().map(|c| c.source.clone()).collect();
    let problem = InnerProblem::new(x_train, y_train, sources, splits)?;
    let (radiomic, other): (Vec<_>, Vec<_>) = design.columns.iter().partition(|c| c.group == Group::R);
    Ok(FoldData {
        problem,
        x_test,
        y_test,
        test_rows,
        encoded_names: pre.encoded_names(),
        radiomic: radiomic.into_iter().map(|c| c.name.clone()).collect(),
        other: other.into_iter().map(|c| c.name.clone()).collect(),
    })
}

/// Grid search on every feature, then two-stage elimination with the
/// winning setting.
fn select_for(data: &FoldData, kind: ModelKind, cfg: &NestedConfig, seed: u64, fold: usize) -> Result<Selected, EvalError> {
    let all: Vec<String> = data.radiomic.iter().chain(&data.other).cloned().collect();
    if !cfg.selection {
        return Ok(Selected {
            initial: None,
            trace: None,
            features: all,
        });
    }
    let k = kind_index(kind);
    let grid = grid_search(
        &data.problem,
        &all.iter().cloned().collect(),
        &cfg.grid(kind),
        derive_seed(seed, &[1, fold as u64, k]),
    )?;
    let (first, second): (&[String], &[String]) = if data.radiomic.is_empty() {
        (&data.other, &[])
    } else {
        (&data.radiomic, &data.other)
    };
    let trace = two_stage_select(&data.problem, &grid.best, first, second, cfg.epsilon, derive_seed(seed, &[2, fold as u64, k]))?;
    Ok(Selected {
        features: trace.final_features.clone(),
        initial: Some((grid.scores, grid.best)),
        trace: Some(trace),
    })
}

fn run_fold(
    data: &FoldData,
    kinds: &[ModelKind],
    cfg: &NestedConfig,
    seed: u64,
    fold: usize,
) -> Result<BTreeMap<ModelKind, (FoldDetail, Vec<f64>)>, EvalError> {
    let mut needed: Vec<ModelKind> = kinds.iter().copied().filter(|k| *k != ModelKind::Rf).collect();
    if kinds.contains(&ModelKind::Rf) && cfg.selection {
        needed.extend(cfg.rf_siblings.iter().copied());
    }
    let needed: BTreeSet<ModelKind> = needed.into_iter().collect();
    let selected: BTreeMap<ModelKind, Selected> = needed
        .into_par_iter()
        .map(|k| select_for(data, k, cfg, seed, fold).map(|s| (k, s)))
        .collect::<Result<_, _>>()?;
    kinds
        .par_iter()
        .map(|&kind| {
            let (initial, trace, features) = if kind == ModelKind::Rf {
                let features = if cfg.selection {
                    let lists: Vec<Vec<String>> = cfg.rf_siblings.iter().map(|k| selected[k].features.clone()).collect();
                    rf_feature_union(&lists)?
                } else {
                    data.radiomic.iter().chain(&data.other).cloned().collect()
                };
                (None, None, features)
            } else {
                let s = &selected[&kind];
                (s.initial.clone(), s.trace.clone(), s.features.clone())
            };
            let feature_set: BTreeSet<String> = features.iter().cloned().collect();
            if !(5..=20).contains(&feature_set.len()) && cfg.selection {
                log::warn!(
                    "{kind} fold {fold}: {} attributes selected, outside the usual 5 to 20",
                    feature_set.len()
                );
            }
            let k = kind_index(kind);
            let grid = grid_search(&data.problem, &feature_set, &cfg.grid(kind), derive_seed(seed, &[3, fold as u64, k]))?;
            let cols = data.problem.columns_of(&feature_set);
            let x_train = data.problem.x.select(Axis(1), &cols);
            let x_test = data.x_test.select(Axis(1), &cols);
            let spec = grid.best.spec(cols.len(), derive_seed(seed, &[4, fold as u64, k]));
            let model = train(x_train.view(), &data.problem.y, &spec)?;
            let scores = score(&model, x_test.view())?;
            let fold_auc = auc(&scores, &data.y_test)?;
            let encoded: Vec<String> = cols.iter().map(|&j| data.encoded_names[j].clone()).collect();
            let importance = if cfg.shap.enabled {
                let background = Array2::from_shape_fn((1, cols.len()), |(_, j)| {
                    let col: Vec<f64> = x_train.column(j).to_vec();
                    percentile(&col, 50.0).expect("non-empty training column")
                });
                let mode = if cols.len() <= cfg.shap.max_exact_features.min(MAX_EXACT_FEATURES) {
                    ShapMode::Exact
                } else {
                    log::info!("{kind} fold {fold}: {} features, using sampled Shapley values", cols.len());
                    ShapMode::Sampled {
                        permutations: cfg.shap.permutations,
                    }
                };
                mean_abs_shap(&model, &encoded, x_test.view(), background.view(), mode, derive_seed(seed, &[5, fold as u64, k]))?
            } else {
                Vec::new()
            };
            let detail = FoldDetail {
                fold,
                train_rows: data.problem.y.len(),
                test_rows: data.y_test.len(),
                auc: fold_auc,
                initial_grid: initial.as_ref().map(|(g, _)| g.clone()),
                initial_setting: initial.map(|(_, s)| s),
                selection: trace,
                selected_features: feature_set.into_iter().collect(),
                final_grid: grid.scores,
                final_setting: grid.best,
                encoded_features: encoded,
                importance,
            };
            Ok((kind, (detail, scores)))
        })
        .collect()
}

/// Nested cross-validation of several models on one cell. All models share
/// the fold plan, so their pooled scores pair eye by eye.
pub fn run_nested_cv_many(
    cohort: &Cohort,
    task: ClassificationTask,
    combination: &DataCombination,
    kinds: &[ModelKind],
    eye_mode: EyeMode,
    cfg: &NestedConfig,
    seed: u64,
) -> Result<Vec<RunResult>, EvalError> {
    cfg.validate()?;
    if kinds.is_empty() {
        return Err(EvalError::EmptyInput("no model kinds requested"));
    }
    let single;
    let cohort = match eye_mode {
        EyeMode::Both => cohort,
        EyeMode::Single => {
            single = select_single_eye(cohort, derive_seed(seed, &[6]));
            &single
        }
    };
    let design = assemble(cohort, combination, task)?;
    let mut patient_label: BTreeMap<String, bool> = BTreeMap::new();
    for (g, &t) in design.groups.iter().zip(&design.target) {
        patient_label.insert(g.clone(), t);
    }
    for class in [false, true] {
        let n = patient_label.values().filter(|&&l| l == class).count();
        if n < cfg.k {
            return Err(EvalError::TooFewPatients { patients: n, folds: cfg.k });
        }
    }
    let plan_seed = derive_seed(seed, &[0]);
    let plan = if cfg.stratified {
        let labelled: Vec<(String, bool)> = patient_label.into_iter().collect();
        grouped_kfold_stratified(&labelled, cfg.k, cfg.m, plan_seed)?
    } else {
        let ids: Vec<String> = patient_label.into_keys().collect();
        grouped_kfold(&ids, cfg.k, cfg.m, plan_seed)?
    };
    let per_fold: Vec<(FoldData, BTreeMap<ModelKind, (FoldDetail, Vec<f64>)>)> = (0..cfg.k)
        .into_par_iter()
        .map(|f| {
            let data = fold_data(&design, &plan, f)?;
            let out = run_fold(&data, kinds, cfg, seed, f)?;
            Ok((data, out))
        })
        .collect::<Result<_, EvalError>>()?;
    let total_rows: usize = per_fold.iter().map(|(d, _)| d.y_test.len()).sum();
    let results = kinds
        .iter()
        .map(|&kind| {
            let mut pooled = Vec::with_capacity(design.n_rows());
            let mut folds = Vec::with_capacity(cfg.k);
            let mut shap_sum: BTreeMap<String, f64> = BTreeMap::new();
            for (data, out) in &per_fold {
                let (detail, scores) = &out[&kind];
                for ((&row, &s), &y) in data.test_rows.iter().zip(scores).zip(&data.y_test) {
                    pooled.push(PooledScore {
                        key: design.keys[row].clone(),
                        label: y,
                        score: s,
                        fold: detail.fold,
                    });
                }
                for it in &detail.importance {
                    *shap_sum.entry(it.feature.clone()).or_default() += it.mean_abs_shap * detail.test_rows as f64;
                }
                folds.push(detail.clone());
            }
            pooled.sort_by(|a, b| a.key.cmp(&b.key));
            let fold_aucs: Vec<f64> = folds.iter().map(|d| d.auc).collect();
            let (mean_auc, sd_auc) = mean_sd(&fold_aucs);
            let importance = rank_importances(
                shap_sum
                    .into_iter()
                    .map(|(feature, s)| FeatureImportance {
                        feature,
                        mean_abs_shap: s / total_rows as f64,
                    })
                    .collect(),
            );
            RunResult {
                task,
                combination: combination.clone(),
                model: kind,
                eye_mode,
                seed,
                config: cfg.clone(),
                fold_aucs,
                mean_auc,
                sd_auc,
                pooled,
                folds,
                importance,
            }
        })
        .collect();
    Ok(results)
}

/// Nested cross-validation of a single model on one cell.
pub fn run_nested_cv(
    cohort: &Cohort,
    task: ClassificationTask,
    combination: &DataCombination,
    kind: ModelKind,
    eye_mode: EyeMode,
    cfg: &NestedConfig,
    seed: u64,
) -> Result<RunResult, EvalError> {
    Ok(run_nested_cv_many(cohort, task, combination, &[kind], eye_mode, cfg, seed)?.remove(0))
}
