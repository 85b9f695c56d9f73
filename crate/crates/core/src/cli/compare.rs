use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::path::{Path, PathBuf};

use super::{read_json, write_atomic, CliError, RunIndex, RunManifest};
use crate::cohort::{ClassificationTask, DataCombination};
use crate::evaluation::{delong_runs, DeLongResult, EyeMode, RunResult};
use crate::models::ModelKind;

pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompareSummary {
    pub pairs: usize,
    pub files: Vec<PathBuf>,
}

/// Manifests named directly or through an `index.json`, in argument order.
pub(crate) fn collect_manifests(inputs: &[PathBuf]) -> Result<Vec<(PathBuf, RunManifest)>, CliError> {
    let mut out = Vec::new();
    for input in inputs {
        let value: serde_json::Value = read_json(input)?;
        if value.get("cells").is_some() {
            let index: RunIndex =
                serde_json::from_value(value).map_err(|e| CliError::Lib(crate::Error::json(input.display().to_string(), e)))?;
            let base = input.parent().unwrap_or(Path::new(""));
            for cell in &index.cells {
                let path = base.join(&cell.file);
                let m = read_json(&path)?;
                out.push((path, m));
            }
        } else {
            let m = serde_json::from_value(value).map_err(|e| CliError::Lib(crate::Error::json(input.display().to_string(), e)))?;
            out.push((input.clone(), m));
        }
    }
    Ok(out)
}

fn fmt_p(p: f64) -> String {
    if p < SIGNIFICANCE {
        format!("{p:.3}*")
    } else {
        format!("{p:.3}")
    }
}

struct Labelled<'a> {
    path: &'a Path,
    combination: &'a DataCombination,
    model: ModelKind,
    label: String,
    run: &'a RunResult,
}

fn compare_runs(a: &Labelled, b: &Labelled) -> Result<DeLongResult, CliError> {
    delong_runs(a.run, b.run).map_err(|e| CliError::Data(format!("cannot compare {} with {}: {e}", a.path.display(), b.path.display())))
}

/// DeLong tests between every pair of models on each combination (the
/// model table) and every pair of combinations for each model (one
/// combination table per model), grouped by task and eye mode. Runs must
/// pool the same eyes; any mismatch aborts before anything is written.
pub fn cmd_compare(inputs: &[PathBuf], out: &Path) -> Result<CompareSummary, CliError> {
    let manifests = collect_manifests(inputs)?;
    if manifests.is_empty() {
        return Err(CliError::Data("no manifests to compare".into()));
    }
    let mut groups: BTreeMap<(ClassificationTask, EyeMode), Vec<&(PathBuf, RunManifest)>> = BTreeMap::new();
    for m in &manifests {
        groups.entry((m.1.result.task, m.1.result.eye_mode)).or_default().push(m);
    }
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    let mut long = String::from("task,eyes,scope,fixed,a,b,auc_a,auc_b,var_diff,z,p,significant\n");
    let mut pairs = 0;
    for ((task, eye), members) in &groups {
        let seeds: BTreeSet<u64> = members.iter().map(|m| m.1.result.seed).collect();
        let mut runs: Vec<Labelled> = Vec::new();
        let mut seen = BTreeSet::new();
        for (path, m) in members.iter().map(|m| (&m.0, &m.1)) {
            let r = &m.result;
            if !seen.insert((r.combination.clone(), r.model, r.seed)) {
                continue;
            }
            let label = if seeds.len() > 1 { format!("{}@{}", r.model, r.seed) } else { r.model.to_string() };
            runs.push(Labelled {
                path,
                combination: &r.combination,
                model: r.model,
                label,
                run: r,
            });
        }
        runs.sort_by(|a, b| (a.combination, a.model, a.run.seed).cmp(&(b.combination, b.model, b.run.seed)));
        let eyes = eye.as_str();
        let t = task.number();

        // models compared within a combination
        let combos: Vec<&DataCombination> = runs.iter().map(|r| r.combination).collect::<BTreeSet<_>>().into_iter().collect();
        let mut pair_columns: Vec<String> = Vec::new();
        let mut table3: BTreeMap<&DataCombination, BTreeMap<String, String>> = BTreeMap::new();
        for &c in &combos {
            let within: Vec<&Labelled> = runs.iter().filter(|r| r.combination == c).collect();
            for i in 0..within.len() {
                for j in i + 1..within.len() {
                    let (a, b) = (within[i], within[j]);
                    let d = compare_runs(a, b)?;
                    let col = format!("{}-{}", a.label, b.label);
                    if !pair_columns.contains(&col) {
                        pair_columns.push(col.clone());
                    }
                    table3.entry(c).or_default().insert(col, fmt_p(d.p));
                    write_long(&mut long, t, eyes, "models", &c.to_string(), &a.label, &b.label, &d);
                    pairs += 1;
                }
            }
        }
        if !pair_columns.is_empty() {
            let mut csv = format!("combination,{}\n", pair_columns.join(","));
            for &c in &combos {
                let row = table3.get(c);
                let cells: Vec<String> = pair_columns.iter().map(|col| row.and_then(|r| r.get(col)).cloned().unwrap_or_default()).collect();
                let _ = writeln!(csv, "{c},{}", cells.join(","));
            }
            files.push((out.join(format!("table3_task{t}_{eyes}.csv")), csv));
        }

        // combinations compared for a fixed model
        let labels: Vec<String> = runs.iter().map(|r| r.label.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        for label in &labels {
            let same: Vec<&Labelled> = runs.iter().filter(|r| &r.label == label).collect();
            if same.len() < 2 {
                continue;
            }
            let n = same.len();
            let mut matrix = vec![vec![String::new(); n]; n];
            for i in 0..n {
                matrix[i][i] = format!("{:.3}", 1.0);
                for j in i + 1..n {
                    let d = compare_runs(same[i], same[j])?;
                    matrix[i][j] = fmt_p(d.p);
                    matrix[j][i] = fmt_p(d.p);
                    write_long(&mut long, t, eyes, "combinations", label, &same[i].combination.to_string(), &same[j].combination.to_string(), &d);
                    pairs += 1;
                }
            }
            let names: Vec<String> = same.iter().map(|r| r.combination.to_string()).collect();
            let mut csv = format!("combination,{}\n", names.join(","));
            for (name, row) in names.iter().zip(&matrix) {
                let _ = writeln!(csv, "{name},{}", row.join(","));
            }
            files.push((out.join(format!("table4_task{t}_{eyes}_{label}.csv")), csv));
        }
    }
    files.push((out.join("delong_pairs.csv"), long));
    for (path, text) in &files {
        write_atomic(path, text.as_bytes())?;
    }
    Ok(CompareSummary {
        pairs,
        files: files.into_iter().map(|(p, _)| p).collect(),
    })
}

#[allow(clippy::too_many_arguments)]
fn write_long(out: &mut String, task: u8, eyes: &str, scope: &str, fixed: &str, a: &str, b: &str, d: &DeLongResult) {
    let _ = writeln!(
        out,
        "{task},{eyes},{scope},{fixed},{a},{b},{},{},{},{},{},{}",
        d.auc_a,
        d.auc_b,
        d.var_diff,
        d.z,
        d.p,
        d.p < SIGNIFICANCE
    );
}
