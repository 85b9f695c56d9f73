use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ClassificationTask, Cohort, CohortError, DataCombination, EyeKey, Group, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub group: Group,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Cat(String),
    Missing,
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }
}

/// Raw (unencoded) rows of one task/combination.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub columns: Vec<ColumnInfo>,
    /// Row-major cells, `rows[i][j]` for column `columns[j]`.
    pub rows: Vec<Vec<Cell>>,
    pub keys: Vec<EyeKey>,
    pub target: Vec<bool>,
    /// Patient identifier of each row; the grouping variable for CV.
    pub groups: Vec<String>,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Keep only the named columns (order preserved from this matrix).
    pub fn select_columns(&self, names: &BTreeSet<String>) -> DesignMatrix {
        let idx: Vec<usize> = (0..self.columns.len())
            .filter(|&j| names.contains(&self.columns[j].name))
            .collect();
        DesignMatrix {
            columns: idx.iter().map(|&j| self.columns[j].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| idx.iter().map(|&j| r[j].clone()).collect())
                .collect(),
            keys: self.keys.clone(),
            target: self.target.clone(),
            groups: self.groups.clone(),
        }
    }

    pub fn positives(&self) -> usize {
        self.target.iter().filter(|&&t| t).count()
    }
}

/// Build the design matrix of `combination` for `task`.
pub fn assemble(
    cohort: &Cohort,
    combination: &DataCombination,
    task: ClassificationTask,
) -> Result<DesignMatrix, CohortError> {
    if cohort.is_empty() {
        return Err(CohortError::EmptyResult("an empty cohort".into()));
    }
    let groups = combination.combination.groups();
    let retained: Vec<(&super::EyeRecord, bool)> = cohort
        .records()
        .iter()
        .filter_map(|r| task.label(r.risk_label).map(|y| (r, y)))
        .collect();
    if retained.is_empty() {
        return Err(CohortError::EmptyResult(format!("task {task}")));
    }

    let mut columns = Vec::new();
    for group in Group::ALL {
        if !groups.contains(&group) {
            continue;
        }
        if group == Group::R {
            let names: BTreeSet<&String> = retained
                .iter()
                .flat_map(|(r, _)| r.radiomics.keys())
                .filter(|k| combination.includes_radiomic(k))
                .collect();
            columns.extend(names.into_iter().map(|n| ColumnInfo {
                name: n.clone(),
                group,
                kind: ColumnKind::Continuous,
            }));
            continue;
        }
        let mut kinds: BTreeMap<&String, (bool, bool)> = BTreeMap::new();
        for (r, _) in &retained {
            for (k, v) in r.clinical(group).into_iter().flatten() {
                let e = kinds.entry(k).or_default();
                match v {
                    Value::Number(_) => e.0 = true,
                    Value::Category(_) => e.1 = true,
                }
            }
        }
        for (name, (num, cat)) in kinds {
            if num && cat {
                return Err(CohortError::MixedColumn(name.clone()));
            }
            columns.push(ColumnInfo {
                name: name.clone(),
                group,
                kind: if cat { ColumnKind::Categorical } else { ColumnKind::Continuous },
            });
        }
    }
    let mut seen = BTreeSet::new();
    for c in &columns {
        if !seen.insert(&c.name) {
            return Err(CohortError::Malformed {
                context: "design matrix".into(),
                message: format!("column name {} occurs in two groups", c.name),
            });
        }
    }

    let rows = retained
        .iter()
        .map(|(r, _)| {
            columns
                .iter()
                .map(|c| {
                    if c.group == Group::R {
                        return r.radiomics.get(&c.name).map_or(Cell::Missing, |&v| Cell::Num(v));
                    }
                    match r.clinical(c.group).and_then(|m| m.get(&c.name)) {
                        None => Cell::Missing,
                        Some(Value::Number(v)) if v.is_finite() => Cell::Num(*v),
                        Some(Value::Number(_)) => Cell::Missing,
                        Some(Value::Category(s)) => Cell::Cat(s.clone()),
                    }
                })
                .collect()
        })
        .collect();

    Ok(DesignMatrix {
        columns,
        rows,
        keys: retained.iter().map(|(r, _)| r.key()).collect(),
        target: retained.iter().map(|(_, y)| *y).collect(),
        groups: retained.iter().map(|(r, _)| r.patient_id.clone()).collect(),
    })
}
