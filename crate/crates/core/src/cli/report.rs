use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::path::{Path, PathBuf};

use super::{read_json, write_atomic, CliError, RunIndex, RunManifest};
use crate::cohort::{ClassificationTask, Combination, DataCombination};
use crate::evaluation::{mean_roc, roc_csv, roc_curve, roc_svg, EyeMode, RocCurve, RunResult};
use crate::models::ModelKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportSummary {
    pub cells: usize,
    pub missing: Vec<PathBuf>,
    pub files: Vec<PathBuf>,
}

fn eye_column(eye: EyeMode) -> &'static str {
    match eye {
        EyeMode::Single => "1 Eye",
        EyeMode::Both => "2 Eyes",
    }
}

fn mean_sd(r: &RunResult) -> String {
    format!("{:.3} ± {:.3}", r.mean_auc, r.sd_auc)
}

fn stem(file: &str) -> &str {
    file.strip_suffix(".json").unwrap_or(file)
}

/// Vertical average of the per-fold ROC curves of a run.
pub fn fold_mean_roc(r: &RunResult) -> Result<RocCurve, crate::evaluation::EvalError> {
    let mut by_fold: BTreeMap<usize, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for s in &r.pooled {
        let e = by_fold.entry(s.fold).or_default();
        e.0.push(s.score);
        e.1.push(s.label);
    }
    let curves = by_fold.values().map(|(s, l)| roc_curve(s, l)).collect::<Result<Vec<_>, _>>()?;
    mean_roc(&curves)
}

/// Build every report artifact from the manifests listed in an index. No
/// model is refitted. Unreadable manifests are skipped and listed both in
/// the summary's warnings and in the returned `missing`.
pub fn cmd_report(index_path: &Path, out: &Path) -> Result<ReportSummary, CliError> {
    let index: RunIndex = read_json(index_path)?;
    let base = index_path.parent().unwrap_or(Path::new(""));
    let mut warnings = Vec::new();
    let mut missing = Vec::new();
    let mut runs: Vec<(String, RunResult)> = Vec::new();
    for cell in &index.cells {
        let path = base.join(&cell.file);
        match read_json::<RunManifest>(&path) {
            Ok(m) => runs.push((cell.file.clone(), m.result)),
            Err(e) => {
                warnings.push(format!("manifest {} unavailable: {e}", cell.file));
                missing.push(path);
            }
        }
    }
    for f in &index.failures {
        warnings.push(format!("cell {} failed during the run: {}", f.cell, f.error));
    }
    let mut files: Vec<(PathBuf, String)> = Vec::new();

    // mean ± SD matrix: one row per (task, combination), one column per model and eye mode
    let unfiltered: Vec<&(String, RunResult)> = runs.iter().filter(|(_, r)| r.combination.modalities.is_none()).collect();
    if !unfiltered.is_empty() {
        let models: BTreeSet<ModelKind> = unfiltered.iter().map(|(_, r)| r.model).collect();
        let eyes: BTreeSet<EyeMode> = unfiltered.iter().map(|(_, r)| r.eye_mode).collect();
        let mut columns = Vec::new();
        for &m in &models {
            for &e in eyes.iter().rev() {
                columns.push((m, e));
            }
        }
        let mut rows: BTreeMap<(ClassificationTask, Combination), BTreeMap<(ModelKind, EyeMode), String>> = BTreeMap::new();
        for (_, r) in &unfiltered {
            rows.entry((r.task, r.combination.combination)).or_default().insert((r.model, r.eye_mode), mean_sd(r));
        }
        let header: Vec<String> = columns.iter().map(|(m, e)| format!("{m} {}", eye_column(*e))).collect();
        let mut csv = format!("task,combination,{}\n", header.join(","));
        for ((task, combo), values) in &rows {
            let cells: Vec<&str> = columns.iter().map(|k| values.get(k).map(String::as_str).unwrap_or("")).collect();
            let _ = writeln!(csv, "{},{combo},{}", task.number(), cells.join(","));
        }
        files.push((out.join("table2.csv"), csv));
    }

    // ROC points per cell and one plot per (task, model, eyes, modalities)
    let mut plots: BTreeMap<(ClassificationTask, ModelKind, EyeMode, String), Vec<(String, RocCurve)>> = BTreeMap::new();
    for (file, r) in &runs {
        match fold_mean_roc(r) {
            Ok(curve) => {
                files.push((out.join("roc").join(format!("{}.csv", stem(file))), roc_csv(&curve)));
                plots
                    .entry((r.task, r.model, r.eye_mode, r.combination.modality_label()))
                    .or_default()
                    .push((format!("{} (AUC {})", r.combination.combination, mean_sd(r)), curve));
            }
            Err(e) => warnings.push(format!("no ROC curve for {file}: {e}")),
        }
    }
    for ((task, model, eye, mods), curves) in &plots {
        let title = format!("Task {} · {model} · {} · radiomics {mods}", task.number(), eye_column(*eye));
        let name = format!("task{}_{model}_{}_{mods}.svg", task.number(), eye.as_str());
        files.push((out.join("roc").join(name), roc_svg(&title, curves)));
    }

    // image-type ablation, only when modality-filtered runs exist
    if runs.iter().any(|(_, r)| r.combination.modalities.is_some()) {
        let models: BTreeSet<ModelKind> = runs.iter().map(|(_, r)| r.model).collect();
        let filtered_bases: BTreeSet<(ClassificationTask, EyeMode, Combination)> = runs
            .iter()
            .filter(|(_, r)| r.combination.modalities.is_some())
            .map(|(_, r)| (r.task, r.eye_mode, r.combination.combination))
            .collect();
        let mut rows: BTreeMap<(ClassificationTask, EyeMode, Combination, DataCombination), BTreeMap<ModelKind, String>> = BTreeMap::new();
        for (_, r) in &runs {
            if filtered_bases.contains(&(r.task, r.eye_mode, r.combination.combination)) {
                rows.entry((r.task, r.eye_mode, r.combination.combination, r.combination.clone()))
                    .or_default()
                    .insert(r.model, mean_sd(r));
            }
        }
        let header: Vec<String> = models.iter().map(|m| m.to_string()).collect();
        let mut csv = format!("task,eyes,combination,modalities,{}\n", header.join(","));
        for ((task, eye, combo, dc), values) in &rows {
            let cells: Vec<&str> = models.iter().map(|m| values.get(m).map(String::as_str).unwrap_or("")).collect();
            let _ = writeln!(csv, "{},{},{combo},{},{}", task.number(), eye.as_str(), dc.modality_label(), cells.join(","));
        }
        files.push((out.join("ablation.csv"), csv));
    }

    // mean |SHAP| rankings
    for (file, r) in &runs {
        let mut csv = String::from("rank,feature,mean_abs_shap\n");
        for (i, f) in r.importance.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{}", i + 1, f.feature, f.mean_abs_shap);
        }
        files.push((out.join("shap").join(format!("{}.csv", stem(file))), csv));
    }

    let mut md = String::from("# Experiment report\n\n");
    let c = &index.cohort;
    let _ = writeln!(md, "Cohort: {} patients, {} eyes ({}).\n", c.patients, c.eyes, c.provenance);
    let _ = writeln!(md, "Master seed {}; {} of {} indexed cells reported.\n", index.experiment.seed, runs.len(), index.cells.len());
    md.push_str("| task | combination | model | eyes | AUC |\n|---|---|---|---|---|\n");
    for (_, r) in &runs {
        let _ = writeln!(md, "| {} | {} | {} | {} | {} |", r.task.number(), r.combination, r.model, eye_column(r.eye_mode), mean_sd(r));
    }
    md.push_str("\n## Warnings\n\n");
    if warnings.is_empty() {
        md.push_str("None.\n");
    }
    for w in &warnings {
        let _ = writeln!(md, "- {}", w.replace('\n', " "));
    }
    files.push((out.join("summary.md"), md));

    for (path, text) in &files {
        write_atomic(path, text.as_bytes())?;
    }
    Ok(ReportSummary {
        cells: runs.len(),
        missing,
        files: files.into_iter().map(|(p, _)| p).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::run::run_on_cohort;
    use crate::cli::run::tests::quick_experiment;
    use crate::cohort::synth::tests::tiny_cohort;
    use crate::radiomics::Modality;

    #[test]
    fn report_shapes_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = quick_experiment();
        cfg.eye_modes = vec![EyeMode::Both, EyeMode::Single];
        cfg.modality_filters = vec![vec![], vec![Modality::Oct]];
        cfg.combinations = vec![Combination::R];
        run_on_cohort(&cfg, &tiny_cohort(1), dir.path(), 1).unwrap();
        let index = dir.path().join("index.json");
        let a = cmd_report(&index, &dir.path().join("ra")).unwrap();
        assert_eq!(a.cells, 8);
        assert!(a.missing.is_empty());
        let t2 = std::fs::read_to_string(dir.path().join("ra/table2.csv")).unwrap();
        let lines: Vec<&str> = t2.lines().collect();
        assert_eq!(lines[0], "task,combination,LR 1 Eye,LR 2 Eyes,LDA 1 Eye,LDA 2 Eyes");
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].matches('±').count(), 4);
        let ab = std::fs::read_to_string(dir.path().join("ra/ablation.csv")).unwrap();
        assert_eq!(ab.lines().count(), 1 + 4);
        assert!(ab.contains(",OCT,"));
        assert!(dir.path().join("ra/roc/task1__R__all__LR__both.csv").exists());
        assert!(dir.path().join("ra/roc/task1_LR_both_all.svg").exists());
        assert!(dir.path().join("ra/shap/task1__R__OCT__LDA__single.csv").exists());

        let b = cmd_report(&index, &dir.path().join("rb")).unwrap();
        for (fa, fb) in a.files.iter().zip(&b.files) {
            assert_eq!(std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap(), "{}", fa.display());
        }
    }

    #[test]
    fn missing_manifest_gives_partial_report() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick_experiment();
        let index = run_on_cohort(&cfg, &tiny_cohort(1), dir.path(), 1).unwrap();
        std::fs::remove_file(dir.path().join(&index.cells[0].file)).unwrap();
        let s = cmd_report(&dir.path().join("index.json"), &dir.path().join("r")).unwrap();
        assert_eq!(s.cells, 3);
        assert_eq!(s.missing.len(), 1);
        let md = std::fs::read_to_string(dir.path().join("r/summary.md")).unwrap();
        assert!(md.contains("## Warnings") && md.contains(&index.cells[0].file));
    }
}
