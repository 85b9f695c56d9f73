//! From-scratch binary classifiers returning real-valued decision scores.

mod forest;
mod lda;
pub mod linalg;
mod logistic;
mod svc;

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{train_rf, Node, Tree};
pub use lda::train_lda;
pub use logistic::{logistic_objective, train_logistic};
pub use svc::{kkt_violations, solve_svc, train_svc, SvcSolution};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("no training rows")]
    Empty,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid hyperparameter: {0}")]
    InvalidParameter(String),
    #[error("within-class covariance is singular at shrinkage {shrinkage}; use a shrinkage > 0")]
    Singular { shrinkage: f64 },
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{rows} rows but {labels} labels")]
    LabelMismatch { rows: usize, labels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "LDA")]
    Lda,
    #[serde(rename = "SVC-linear")]
    SvcLinear,
    #[serde(rename = "SVC-rbf")]
    SvcRbf,
    #[serde(rename = "RF")]
    Rf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Lr, ModelKind::Lda, ModelKind::SvcLinear, ModelKind::SvcRbf, ModelKind::Rf];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Lr => "LR",
            ModelKind::Lda => "LDA",
            ModelKind::SvcLinear => "SVC-linear",
            ModelKind::SvcRbf => "SVC-rbf",
            ModelKind::Rf => "RF",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        match norm.as_str() {
            "lr" | "logistic" => Ok(ModelKind::Lr),
            "lda" => Ok(ModelKind::Lda),
            "svc-linear" | "svm-linear" => Ok(ModelKind::SvcLinear),
            "svc-rbf" | "svm-rbf" => Ok(ModelKind::SvcRbf),
            "rf" | "random-forest" => Ok(ModelKind::Rf),
            _ => Err(ModelError::InvalidParameter(format!("unknown model {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrParams {
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub class_weight: bool,
}

impl Default for LrParams {
    fn default() -> Self {
        LrParams {
            lambda: 1.0,
            tol: 1e-6,
            max_iter: 100,
            class_weight: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaParams {
    pub shrinkage: f64,
}

impl Default for LdaParams {
    fn default() -> Self {
        LdaParams { shrinkage: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::Linear => linalg::dot(a, b),
            Kernel::Rbf { gamma } => {
                let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvcParams {
    pub c: f64,
    pub kernel: Kernel,
    pub tol: f64,
    /// Iteration budget in multiples of the training-set size.
    pub max_passes: usize,
    #[serde(default)]
    pub class_weight: bool,
}

impl Default for SvcParams {
    fn default() -> Self {
        SvcParams {
            c: 1.0,
            kernel: Kernel::Linear,
            tol: 1e-3,
            max_passes: 1000,
            class_weight: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Defaults to the ceiling of the square root of the feature count.
    pub features_per_split: Option<usize>,
    pub seed: u64,
    #[serde(default = "yes")]
    pub bootstrap: bool,
}

fn yes() -> bool {
    true
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams {
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            features_per_split: None,
            seed: 0,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ModelSpec {
    #[serde(rename = "LR")]
    Lr(LrParams),
    #[serde(rename = "LDA")]
    Lda(LdaParams),
    #[serde(rename = "SVC")]
    Svc(SvcParams),
    #[serde(rename = "RF")]
    Rf(RfParams),
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Lr(_) => ModelKind::Lr,
            ModelSpec::Lda(_) => ModelKind::Lda,
            ModelSpec::Svc(p) => match p.kernel {
                Kernel::Linear => ModelKind::SvcLinear,
                Kernel::Rbf { .. } => ModelKind::SvcRbf,
            },
            ModelSpec::Rf(_) => ModelKind::Rf,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidParameter(m.to_string()));
        match self {
            ModelSpec::Lr(p) => {
                if !(p.lambda > 0.0 && p.lambda.is_finite()) {
                    return bad("LR lambda must be positive");
                }
                if !(p.tol > 0.0) || p.max_iter == 0 {
                    return bad("LR tol and max_iter must be positive");
                }
            }
            ModelSpec::Lda(p) => {
                if !(0.0..=1.0).contains(&p.shrinkage) {
                    return bad("LDA shrinkage must lie in [0, 1]");
                }
            }
            ModelSpec::Svc(p) => {
                if !(p.c > 0.0 && p.c.is_finite()) {
                    return bad("SVC C must be positive");
                }
                if let Kernel::Rbf { gamma } = p.kernel {
                    if !(gamma > 0.0 && gamma.is_finite()) {
                        return bad("SVC gamma must be positive");
                    }
                }
                if !(p.tol > 0.0) || p.max_passes == 0 {
                    return bad("SVC tol and max_passes must be positive");
                }
            }
            ModelSpec::Rf(p) => {
                if p.n_trees == 0 {
                    return bad("RF needs at least one tree");
                }
                if p.min_leaf == 0 {
                    return bad("RF min_leaf must be at least 1");
                }
                if p.features_per_split == Some(0) {
                    return bad("RF features_per_split must be at least 1");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum Parameters {
    /// Score `w·x + b`.
    Linear { weights: Vec<f64>, intercept: f64 },
    /// Score `Σ coef_i k(sv_i, x) + b`, with `coef_i = α_i y_i`.
    Kernel {
        kernel: Kernel,
        support_vectors: Vec<Vec<f64>>,
        dual_coef: Vec<f64>,
        intercept: f64,
    },
    /// Score is the mean leaf positive fraction.
    Forest { trees: Vec<Tree> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub spec: ModelSpec,
    pub n_features: usize,
    pub parameters: Parameters,
}

impl TrainedModel {
    pub fn is_finite(&self) -> bool {
        match &self.parameters {
            Parameters::Linear { weights, intercept } => intercept.is_finite() && weights.iter().all(|w| w.is_finite()),
            Parameters::Kernel {
                support_vectors,
                dual_coef,
                intercept,
                ..
            } => {
                intercept.is_finite()
                    && dual_coef.iter().all(|c| c.is_finite())
                    && support_vectors.iter().flatten().all(|v| v.is_finite())
            }
            Parameters::Forest { trees } => trees.iter().all(Tree::is_finite),
        }
    }

    pub fn score_row(&self, x: &[f64]) -> f64 {
        match &self.parameters {
            Parameters::Linear { weights, intercept } => linalg::dot(weights, x) + intercept,
            Parameters::Kernel {
                kernel,
                support_vectors,
                dual_coef,
                intercept,
            } => {
                support_vectors
                    .iter()
                    .zip(dual_coef)
                    .map(|(sv, c)| c * kernel.eval(sv, x))
                    .sum::<f64>()
                    + intercept
            }
            Parameters::Forest { trees } => trees.iter().map(|t| t.predict(x)).sum::<f64>() / trees.len() as f64,
        }
    }
}

/// Anything that maps feature rows to decision scores.
pub trait Scorer: Sync {
    fn n_features(&self) -> usize;
    fn score_rows(&self, x: ArrayView2<f64>) -> Vec<f64>;
}

impl Scorer for TrainedModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn score_rows(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| match r.as_slice() {
                Some(s) => self.score_row(s),
                None => self.score_row(&r.to_vec()),
            })
            .collect()
    }
}

/// Closure-backed scorer, mainly for tests and ad hoc models.
pub struct FnScorer<F> {
    pub n_features: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Scorer for FnScorer<F> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn score_rows(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.rows().into_iter().map(|r| (self.f)(&r.to_vec())).collect()
    }
}

pub(crate) fn check_training(x: ArrayView2<f64>, y: &[bool]) -> Result<(), ModelError> {
    if x.nrows() != y.len() {
        return Err(ModelError::LabelMismatch {
            rows: x.nrows(),
            labels: y.len(),
        });
    }
    if y.is_empty() {
        return Err(ModelError::Empty);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("training features"));
    }
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        return Err(ModelError::SingleClass);
    }
    Ok(())
}

/// Inverse-frequency sample weights normalized to mean one.
pub(crate) fn class_weights(y: &[bool], enabled: bool) -> Vec<f64> {
    if !enabled {
        return vec![1.0; y.len()];
    }
    let n = y.len() as f64;
    let pos = y.iter().filter(|&&v| v).count() as f64;
    let (wp, wn) = (n / (2.0 * pos), n / (2.0 * (n - pos)));
    y.iter().map(|&v| if v { wp } else { wn }).collect()
}

pub fn train(x: ArrayView2<f64>, y: &[bool], spec: &ModelSpec) -> Result<TrainedModel, ModelError> {
    spec.validate()?;
    match spec {
        ModelSpec::Lr(p) => train_logistic(x, y, p),
        ModelSpec::Lda(p) => train_lda(x, y, p),
        ModelSpec::Svc(p) => train_svc(x, y, p),
        ModelSpec::Rf(p) => train_rf(x, y, p),
    }
}

pub fn score(model: &TrainedModel, x: ArrayView2<f64>) -> Result<Vec<f64>, ModelError> {
    if x.ncols() != model.n_features {
        return Err(ModelError::DimensionMismatch {
            expected: model.n_features,
            found: x.ncols(),
        });
    }
    Ok(model.score_rows(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dimension_mismatch() {
        let x = array![[-1.0], [1.0]];
        let m = train(x.view(), &[false, true], &ModelSpec::Lr(LrParams::default())).unwrap();
        assert_eq!(
            score(&m, array![[1.0, 2.0]].view()),
            Err(ModelError::DimensionMismatch { expected: 1, found: 2 })
        );
    }

    #[test]
    fn spec_validation() {
        let lr = LrParams {
            lambda: 0.0,
            ..LrParams::default()
        };
        assert!(ModelSpec::Lr(lr).validate().is_err());
        let svc = SvcParams {
            kernel: Kernel::Rbf { gamma: -1.0 },
            ..SvcParams::default()
        };
        assert!(ModelSpec::Svc(svc).validate().is_err());
        assert!(ModelSpec::Lda(LdaParams { shrinkage: 1.5 }).validate().is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.as_str()));
        }
    }

    #[test]
    fn trained_model_json_round_trip() {
        let x = array![[-1.0, 0.5], [1.0, 0.2], [0.3, -0.4], [2.0, 1.0]];
        let y = [false, true, false, true];
        for spec in [
            ModelSpec::Lr(LrParams::default()),
            ModelSpec::Lda(LdaParams::default()),
            ModelSpec::Svc(SvcParams {
                kernel: Kernel::Rbf { gamma: 0.5 },
                ..SvcParams::default()
            }),
            ModelSpec::Rf(RfParams {
                n_trees: 3,
                ..RfParams::default()
            }),
        ] {
            let m = train(x.view(), &y, &spec).unwrap();
            let back: TrainedModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
            assert_eq!(back, m);
        }
    }
}
