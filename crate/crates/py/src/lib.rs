//! Python bindings: feature extraction, metrics, synthetic cohorts, model
//! training, nested cross-validation and Shapley attribution.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use retinomics::attribution::{shap_explain, ShapMode};
use retinomics::cohort::{self as rc, ClassificationTask, Combination, DataCombination, SynthConfig};
use retinomics::evaluation::{self as ev, EyeMode, NestedConfig};
use retinomics::imaging::{full_mask, sample_intensities, GrayImage, RoiMask, Spacing};
use retinomics::models::{self as rm, ModelKind, ModelSpec};
use retinomics::radiomics::{extract_first_order, FeatureConfig, Modality};

create_exception!(retinomics_py, RetinomicsError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    RetinomicsError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(err("rows have different lengths"));
    }
    Array2::from_shape_vec((rows.len(), p), rows.concat()).map_err(err)
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| err(format!("bad {what} {s:?}: {e}")))
}

/// First-order features of a row-major grayscale image, optionally inside a
/// boolean mask of the same size.
#[pyfunction]
#[pyo3(signature = (pixels, width, height, max_value=255, spacing=(1.0, 1.0), mask=None, histogram=false, bin_width=25.0))]
#[allow(clippy::too_many_arguments)]
fn extract_features<'py>(
    py: Python<'py>,
    pixels: Vec<u16>,
    width: usize,
    height: usize,
    max_value: u16,
    spacing: (f64, f64),
    mask: Option<Vec<bool>>,
    histogram: bool,
    bin_width: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let spacing = Spacing::new(spacing.0, spacing.1).map_err(err)?;
    let image = GrayImage::new(width, height, max_value, pixels, spacing).map_err(err)?;
    let mask = match mask {
        Some(m) => RoiMask::new(width, height, m).map_err(err)?,
        None => full_mask(&image),
    };
    let sample = sample_intensities(&image, &mask).map_err(err)?;
    let config = FeatureConfig {
        histogram_features: histogram,
        bin_width,
    };
    let features = extract_first_order(&sample, spacing, &config).map_err(err)?;
    let out = PyDict::new(py);
    for (name, value) in features.named() {
        out.set_item(name, value)?;
    }
    Ok(out)
}

#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    ev::auc(&scores, &labels).map_err(err)
}

/// `(fpr, tpr)` of the empirical ROC curve.
#[pyfunction]
fn roc_curve(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let c = ev::roc_curve(&scores, &labels).map_err(err)?;
    Ok((c.fpr, c.tpr))
}

/// Paired DeLong test; returns `auc_a, auc_b, var_diff, z, p`.
#[pyfunction]
fn delong<'py>(py: Python<'py>, scores_a: Vec<f64>, scores_b: Vec<f64>, labels: Vec<bool>) -> PyResult<Bound<'py, PyDict>> {
    let d = ev::delong_paired(&scores_a, &scores_b, &labels).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("auc_a", d.auc_a)?;
    out.set_item("auc_b", d.auc_b)?;
    out.set_item("var_diff", d.var_diff)?;
    out.set_item("z", d.z)?;
    out.set_item("p", d.p)?;
    Ok(out)
}

#[pyclass(frozen)]
struct Cohort {
    inner: rc::Cohort,
}

#[pymethods]
impl Cohort {
    /// Synthetic cohort; `config_toml` overrides the default generator.
    #[staticmethod]
    #[pyo3(signature = (seed, config_toml=None))]
    fn synthetic(seed: u64, config_toml: Option<&str>) -> PyResult<Self> {
        let cfg = match config_toml {
            Some(t) => SynthConfig::from_toml_str(t).map_err(err)?,
            None => SynthConfig::default(),
        };
        Ok(Cohort {
            inner: rc::generate_synthetic(&cfg, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(features_csv: PathBuf, clinical_csv: PathBuf) -> PyResult<Self> {
        Ok(Cohort {
            inner: rc::load_cohort(&features_csv, &clinical_csv).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn patient_ids(&self) -> Vec<String> {
        self.inner.patient_ids()
    }

    /// `{label: (patients, eyes)}`.
    fn class_counts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let counts = self.inner.class_counts();
        let out = PyDict::new(py);
        for l in rc::RiskLabel::ALL {
            out.set_item(l.as_str(), counts[l.index()])?;
        }
        Ok(out)
    }

    fn permute_labels(&self, seed: u64) -> Self {
        Cohort {
            inner: self.inner.permute_patient_labels(seed),
        }
    }

    /// Write `features.csv` and `clinical.csv` into `directory`.
    fn write_csv(&self, directory: PathBuf) -> PyResult<()> {
        std::fs::create_dir_all(&directory).map_err(err)?;
        let (rows, columns) = rc::cohort_feature_rows(&self.inner);
        let f = std::fs::File::create(directory.join("features.csv")).map_err(err)?;
        rc::write_features_csv(f, &rows, &columns).map_err(err)?;
        let c = std::fs::File::create(directory.join("clinical.csv")).map_err(err)?;
        rc::write_clinical_csv(c, &self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Cohort({} patients, {} eyes)", self.inner.patient_ids().len(), self.inner.len())
    }
}

#[pyclass(frozen)]
struct Model {
    inner: rm::TrainedModel,
}

#[pymethods]
impl Model {
    /// Train `kind` (LR, LDA, SVC-linear, SVC-rbf, RF) with default
    /// parameters, or from a JSON model specification.
    #[staticmethod]
    #[pyo3(signature = (kind, x, y, spec_json=None, seed=0))]
    fn train(kind: &str, x: Vec<Vec<f64>>, y: Vec<bool>, spec_json: Option<&str>, seed: u64) -> PyResult<Self> {
        let x = matrix(&x)?;
        let spec: ModelSpec = match spec_json {
            Some(j) => serde_json::from_str(j).map_err(err)?,
            None => {
                let kind: ModelKind = parse(kind, "model kind")?;
                retinomics::selection::Grid::default_for(kind).settings[0].spec(x.ncols(), seed)
            }
        };
        Ok(Model {
            inner: rm::train(x.view(), &y, &spec).map_err(err)?,
        })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    fn score(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        rm::score(&self.inner, matrix(&x)?.view()).map_err(err)
    }

    /// Shapley values at `row` against `background`; exact when
    /// `permutations` is None.
    #[pyo3(signature = (row, background, permutations=None, seed=0))]
    fn shap(&self, row: Vec<f64>, background: Vec<Vec<f64>>, permutations: Option<usize>, seed: u64) -> PyResult<(Vec<f64>, f64)> {
        let mode = match permutations {
            Some(permutations) => ShapMode::Sampled { permutations },
            None => ShapMode::Exact,
        };
        let bg = matrix(&background)?;
        let a = shap_explain(&self.inner, &row, bg.view(), mode, seed).map_err(err)?;
        Ok((a.phi, a.base_value))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }
}

#[pyclass(frozen)]
struct RunResult {
    inner: ev::RunResult,
}

#[pymethods]
impl RunResult {
    #[getter]
    fn mean_auc(&self) -> f64 {
        self.inner.mean_auc
    }

    #[getter]
    fn sd_auc(&self) -> f64 {
        self.inner.sd_auc
    }

    #[getter]
    fn fold_aucs(&self) -> Vec<f64> {
        self.inner.fold_aucs.clone()
    }

    /// Pooled out-of-fold `(eye key, score, label)` triples.
    #[getter]
    fn pooled(&self) -> Vec<(String, f64, bool)> {
        self.inner.pooled.iter().map(|s| (s.key.to_string(), s.score, s.label)).collect()
    }

    /// `(feature, mean |SHAP|)` ranked by importance.
    #[getter]
    fn importance(&self) -> Vec<(String, f64)> {
        self.inner.importance.iter().map(|f| (f.feature.clone(), f.mean_abs_shap)).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult({} {} {} {}: AUC {:.3} ± {:.3})",
            self.inner.task, self.inner.combination, self.inner.model, self.inner.eye_mode, self.inner.mean_auc, self.inner.sd_auc
        )
    }
}

/// Nested cross-validation of one model. `modalities` restricts the
/// radiomic columns; `config_json` overrides the nested-CV settings.
#[pyfunction]
#[pyo3(signature = (cohort, task, combination, model, eye_mode="both", modalities=None, config_json=None, seed=0))]
#[allow(clippy::too_many_arguments)]
fn run_nested_cv(
    py: Python<'_>,
    cohort: &Cohort,
    task: &str,
    combination: &str,
    model: &str,
    eye_mode: &str,
    modalities: Option<Vec<String>>,
    config_json: Option<&str>,
    seed: u64,
) -> PyResult<RunResult> {
    let task: ClassificationTask = parse(task, "task")?;
    let combo: Combination = parse(combination, "combination")?;
    let kind: ModelKind = parse(model, "model")?;
    let eye: EyeMode = parse(eye_mode, "eye mode")?;
    let dc = match modalities {
        Some(ms) => {
            let ms = ms.iter().map(|m| parse::<Modality>(m, "modality")).collect::<PyResult<Vec<_>>>()?;
            DataCombination::with_modalities(combo, ms)
        }
        None => DataCombination::new(combo),
    };
    let cfg: NestedConfig = match config_json {
        Some(j) => serde_json::from_str(j).map_err(err)?,
        None => NestedConfig::default(),
    };
    let inner = &cohort.inner;
    let result = py.detach(|| ev::run_nested_cv(inner, task, &dc, kind, eye, &cfg, seed)).map_err(err)?;
    Ok(RunResult { inner: result })
}

/// Run the command-line interface with `args` (without the program name)
/// and return its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("retinomics".to_string()).chain(args).collect();
    py.detach(|| retinomics::cli::run_cli(argv))
}

#[pymodule]
fn retinomics_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RetinomicsError", m.py().get_type::<RetinomicsError>())?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(roc_curve, m)?)?;
    m.add_function(wrap_pyfunction!(delong, m)?)?;
    m.add_function(wrap_pyfunction!(run_nested_cv, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_class::<Cohort>()?;
    m.add_class::<Model>()?;
    m.add_class::<RunResult>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ragged_rows_are_rejected() {
        assert_eq!(matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap().dim(), (2, 2));
        assert!(matrix(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }
}
