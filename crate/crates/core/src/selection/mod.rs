//! Inner-loop grid search, two-stage backward elimination and the random
//! forest feature-union rule.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::auc;
use crate::models::{train, Kernel, LdaParams, LrParams, ModelError, ModelKind, ModelSpec, RfParams, Scorer, SvcParams};
use crate::seed::derive_seed;

/// Mean AUCs closer than this are treated as tied.
pub const AUC_TIE: f64 = 1e-12;
pub const DEFAULT_EPSILON: f64 = 0.001;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("empty grid for {0}")]
    EmptyGrid(ModelKind),
    #[error("grid for {expected} contains a {found} setting")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error("no start features")]
    NoFeatures,
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("no inner folds")]
    NoInnerFolds,
    #[error("inner fold {fold} validation split lacks a class")]
    DegenerateInnerFold { fold: usize },
    #[error("every grid setting failed to train: {}", .0.join("; "))]
    AllSettingsFailed(Vec<String>),
    #[error("training failed on the start feature set: {0}")]
    StartFailed(ModelError),
    #[error("feature union of empty selections")]
    EmptyUnion,
    #[error("csv export failed: {0}")]
    Csv(String),
}

/// One hyperparameter setting. The rbf width is stored as a multiplier of
/// `1/p` and resolved once the feature count is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Setting {
    #[serde(rename = "LR")]
    Lr { lambda: f64 },
    #[serde(rename = "LDA")]
    Lda { shrinkage: f64 },
    #[serde(rename = "SVC-linear")]
    SvcLinear { c: f64 },
    #[serde(rename = "SVC-rbf")]
    SvcRbf { c: f64, gamma_scale: f64 },
    #[serde(rename = "RF")]
    Rf {
        n_trees: usize,
        max_depth: Option<usize>,
        min_leaf: usize,
    },
}

impl Setting {
    pub fn kind(&self) -> ModelKind {
        match self {
            Setting::Lr { .. } => ModelKind::Lr,
            Setting::Lda { .. } => ModelKind::Lda,
            Setting::SvcLinear { .. } => ModelKind::SvcLinear,
            Setting::SvcRbf { .. } => ModelKind::SvcRbf,
            Setting::Rf { .. } => ModelKind::Rf,
        }
    }

    /// Concrete model specification for `p` encoded features; `seed` only
    /// matters for the forest.
    pub fn spec(&self, p: usize, seed: u64) -> ModelSpec {
        match *self {
            Setting::Lr { lambda } => ModelSpec::Lr(LrParams {
                lambda,
                ..LrParams::default()
            }),
            Setting::Lda { shrinkage } => ModelSpec::Lda(LdaParams { shrinkage }),
            Setting::SvcLinear { c } => ModelSpec::Svc(SvcParams {
                c,
                ..SvcParams::default()
            }),
            Setting::SvcRbf { c, gamma_scale } => ModelSpec::Svc(SvcParams {
                c,
                kernel: Kernel::Rbf {
                    gamma: gamma_scale / p.max(1) as f64,
                },
                ..SvcParams::default()
            }),
            Setting::Rf {
                n_trees,
                max_depth,
                min_leaf,
            } => ModelSpec::Rf(RfParams {
                n_trees,
                max_depth,
                min_leaf,
                seed,
                ..RfParams::default()
            }),
        }
    }

    /// `Less` when `self` regularizes more strongly than `other`.
    pub fn strength_cmp(&self, other: &Setting) -> Ordering {
        match (self, other) {
            (Setting::Lr { lambda: a }, Setting::Lr { lambda: b }) => b.total_cmp(a),
            (Setting::Lda { shrinkage: a }, Setting::Lda { shrinkage: b }) => b.total_cmp(a),
            (Setting::SvcLinear { c: a }, Setting::SvcLinear { c: b }) => a.total_cmp(b),
            (Setting::SvcRbf { c: a, .. }, Setting::SvcRbf { c: b, .. }) => a.total_cmp(b),
            (Setting::Rf { n_trees: a, .. }, Setting::Rf { n_trees: b, .. }) => a.cmp(b),
            _ => Ordering::Equal,
        }
    }
}

/// Hyperparameter settings of one model kind, in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub kind: ModelKind,
    pub settings: Vec<Setting>,
}

impl Grid {
    pub fn new(kind: ModelKind, settings: Vec<Setting>) -> Result<Self, SelectionError> {
        let grid = Grid { kind, settings };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.settings.is_empty() {
            return Err(SelectionError::EmptyGrid(self.kind));
        }
        for s in &self.settings {
            if s.kind() != self.kind {
                return Err(SelectionError::WrongKind {
                    expected: self.kind,
                    found: s.kind(),
                });
            }
            s.spec(1, 0).validate().map_err(|e| SelectionError::AllSettingsFailed(vec![e.to_string()]))?;
        }
        Ok(())
    }

    pub fn default_for(kind: ModelKind) -> Grid {
        let settings = match kind {
            ModelKind::Lr => [0.01, 0.1, 1.0, 10.0, 100.0].iter().map(|&lambda| Setting::Lr { lambda }).collect(),
            ModelKind::Lda => [0.01, 0.1, 0.5].iter().map(|&shrinkage| Setting::Lda { shrinkage }).collect(),
            ModelKind::SvcLinear => [0.1, 1.0, 10.0, 100.0].iter().map(|&c| Setting::SvcLinear { c }).collect(),
            ModelKind::SvcRbf => [0.1, 1.0, 10.0, 100.0]
                .iter()
                .flat_map(|&c| [0.1, 1.0, 10.0].map(|gamma_scale| Setting::SvcRbf { c, gamma_scale }))
                .collect(),
            ModelKind::Rf => [100, 300]
                .iter()
                .flat_map(|&n_trees| {
                    [None, Some(8)].into_iter().flat_map(move |max_depth| {
                        [1, 5].map(|min_leaf| Setting::Rf {
                            n_trees,
                            max_depth,
                            min_leaf,
                        })
                    })
                })
                .collect(),
        };
        Grid { kind, settings }
    }
}

/// Outer-training data seen by the inner loop: the encoded matrix, the raw
/// feature each encoded column derives from, and the inner splits as local
/// row indices.
#[derive(Debug, Clone)]
pub struct InnerProblem {
    pub x: Array2<f64>,
    pub y: Vec<bool>,
    pub sources: Vec<String>,
    pub splits: Vec<(Vec<usize>, Vec<usize>)>,
}

impl InnerProblem {
    pub fn new(x: Array2<f64>, y: Vec<bool>, sources: Vec<String>, splits: Vec<(Vec<usize>, Vec<usize>)>) -> Result<Self, SelectionError> {
        if splits.is_empty() {
            return Err(SelectionError::NoInnerFolds);
        }
        for (f, (_, val)) in splits.iter().enumerate() {
            let pos = val.iter().filter(|&&i| y[i]).count();
            if pos == 0 || pos == val.len() {
                return Err(SelectionError::DegenerateInnerFold { fold: f });
            }
        }
        Ok(InnerProblem { x, y, sources, splits })
    }

    /// Raw feature names, each once, in encoded-column order.
    pub fn features(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.sources.iter().filter(|s| seen.insert(s.as_str())).cloned().collect()
    }

    /// Encoded column indices belonging to `features`.
    pub fn columns_of(&self, features: &BTreeSet<String>) -> Vec<usize> {
        (0..self.sources.len()).filter(|&j| features.contains(&self.sources[j])).collect()
    }

    fn check_features(&self, features: &BTreeSet<String>) -> Result<(), SelectionError> {
        if features.is_empty() {
            return Err(SelectionError::NoFeatures);
        }
        for f in features {
            if !self.sources.contains(f) {
                return Err(SelectionError::UnknownFeature(f.clone()));
            }
        }
        Ok(())
    }

    /// Mean validation AUC across the inner folds.
    pub fn mean_inner_auc(&self, features: &BTreeSet<String>, setting: &Setting, seed: u64) -> Result<f64, ModelError> {
        let cols = self.columns_of(features);
        let spec_for = |fold: usize| setting.spec(cols.len(), derive_seed(seed, &[fold as u64]));
        let xs = self.x.select(Axis(1), &cols);
        let mut total = 0.0;
        for (f, (tr, va)) in self.splits.iter().enumerate() {
            let xt = xs.select(Axis(0), tr);
            let yt: Vec<bool> = tr.iter().map(|&i| self.y[i]).collect();
            let model = train(xt.view(), &yt, &spec_for(f))?;
            if !model.is_finite() {
                return Err(ModelError::NonFinite("trained parameters"));
            }
            let xv = xs.select(Axis(0), va);
            let yv: Vec<bool> = va.iter().map(|&i| self.y[i]).collect();
            let s = model.score_rows(xv.view());
            total += auc(&s, &yv).map_err(|_| ModelError::NonFinite("validation scores"))?;
        }
        Ok(total / self.splits.len() as f64)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub setting: Setting,
    pub mean_auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: Setting,
    pub best_auc: f64,
    pub scores: Vec<GridScore>,
}

/// Pick the setting with the highest mean inner AUC; near-ties go to the
/// more regularized setting, then to the earlier one.
pub fn grid_search(problem: &InnerProblem, features: &BTreeSet<String>, grid: &Grid, seed: u64) -> Result<GridResult, SelectionError> {
    grid.validate()?;
    problem.check_features(features)?;
    let scores: Vec<GridScore> = grid
        .settings
        .par_iter()
        .enumerate()
        .map(|(i, s)| match problem.mean_inner_auc(features, s, derive_seed(seed, &[i as u64])) {
            Ok(a) => GridScore {
                setting: s.clone(),
                mean_auc: Some(a),
                error: None,
            },
            Err(e) => GridScore {
                setting: s.clone(),
                mean_auc: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let top = scores.iter().filter_map(|s| s.mean_auc).fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(SelectionError::AllSettingsFailed(
            scores.iter().filter_map(|s| s.error.clone()).collect(),
        ));
    }
    let best = scores
        .iter()
        .filter(|s| s.mean_auc.is_some_and(|a| a >= top - AUC_TIE))
        .reduce(|a, b| if b.setting.strength_cmp(&a.setting) == Ordering::Less { b } else { a })
        .expect("at least one setting reaches the top");
    Ok(GridResult {
        best: best.setting.clone(),
        best_auc: best.mean_auc.expect("scored"),
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliminationStep {
    pub step: usize,
    pub removed_feature: String,
    pub auc_before: f64,
    pub auc_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Only one feature left.
    SingleFeature,
    /// The best removal would lose more than epsilon.
    NoQualifyingRemoval,
    /// Every candidate removal failed to train.
    AllCandidatesFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub start_features: Vec<String>,
    pub start_auc: f64,
    pub epsilon: f64,
    pub steps: Vec<EliminationStep>,
    pub final_features: Vec<String>,
    pub stop: StopReason,
}

impl SelectionTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SelectionError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| SelectionError::Csv(e.to_string());
        w.write_record(["step", "removed_feature", "auc_before", "auc_after"]).map_err(err)?;
        for s in &self.steps {
            w.write_record([s.step.to_string(), s.removed_feature.clone(), s.auc_before.to_string(), s.auc_after.to_string()])
                .map_err(err)?;
        }
        w.flush().map_err(|e| SelectionError::Csv(e.to_string()))
    }

    /// Every accepted step kept the AUC within epsilon of the previous one.
    pub fn obeys_epsilon(&self) -> bool {
        self.steps.iter().all(|s| s.auc_after >= s.auc_before - self.epsilon)
    }
}

/// Greedy backward elimination: drop the feature whose removal leaves the
/// highest mean inner AUC, as long as that AUC stays within `epsilon` of the
/// current one.
pub fn backward_eliminate(
    problem: &InnerProblem,
    setting: &Setting,
    start: &[String],
    epsilon: f64,
    seed: u64,
) -> Result<SelectionTrace, SelectionError> {
    let mut current: BTreeSet<String> = start.iter().cloned().collect();
    problem.check_features(&current)?;
    let mut auc_now = problem.mean_inner_auc(&current, setting, seed).map_err(SelectionError::StartFailed)?;
    let start_auc = auc_now;
    let mut steps = Vec::new();
    let stop = loop {
        if current.len() <= 1 {
            break StopReason::SingleFeature;
        }
        let candidates: Vec<&String> = current.iter().collect();
        let results: Vec<Option<f64>> = candidates
            .par_iter()
            .map(|f| {
                let mut reduced = current.clone();
                reduced.remove(*f);
                problem.mean_inner_auc(&reduced, setting, seed).ok()
            })
            .collect();
        let best = results
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.map(|a| (i, a)))
            .reduce(|a, b| if b.1 > a.1 { b } else { a });
        let Some((i, after)) = best else {
            break StopReason::AllCandidatesFailed;
        };
        if after < auc_now - epsilon {
            break StopReason::NoQualifyingRemoval;
        }
        let removed = candidates[i].clone();
        steps.push(EliminationStep {
            step: steps.len() + 1,
            removed_feature: removed.clone(),
            auc_before: auc_now,
            auc_after: after,
        });
        current.remove(&removed);
        auc_now = after;
    };
    Ok(SelectionTrace {
        start_features: start.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
        start_auc,
        epsilon,
        steps,
        final_features: current.into_iter().collect(),
        stop,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageTrace {
    pub stage1: SelectionTrace,
    /// Absent when the combination has no non-radiomic columns.
    pub stage2: Option<SelectionTrace>,
    pub final_features: Vec<String>,
}

/// Stage 1 eliminates among radiomic features only; stage 2 restarts from
/// the stage-1 survivors plus every non-radiomic feature.
pub fn two_stage_select(
    problem: &InnerProblem,
    setting: &Setting,
    radiomic: &[String],
    other: &[String],
    epsilon: f64,
    seed: u64,
) -> Result<TwoStageTrace, SelectionError> {
    let stage1 = backward_eliminate(problem, setting, radiomic, epsilon, derive_seed(seed, &[1]))?;
    if other.is_empty() {
        return Ok(TwoStageTrace {
            final_features: stage1.final_features.clone(),
            stage1,
            stage2: None,
        });
    }
    let start: Vec<String> = stage1.final_features.iter().chain(other).cloned().collect();
    let stage2 = backward_eliminate(problem, setting, &start, epsilon, derive_seed(seed, &[2]))?;
    Ok(TwoStageTrace {
        final_features: stage2.final_features.clone(),
        stage1,
        stage2: Some(stage2),
    })
}

/// Sorted union of the feature lists selected by the other models.
pub fn rf_feature_union(selected: &[Vec<String>]) -> Result<Vec<String>, SelectionError> {
    let union: BTreeSet<String> = selected.iter().flatten().cloned().collect();
    if union.is_empty() {
        return Err(SelectionError::EmptyUnion);
    }
    Ok(union.into_iter().collect())
}
