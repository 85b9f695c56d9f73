use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use super::{Cohort, CohortError, EyeKey, EyeRecord, Group, RiskLabel, Value};
use crate::radiomics::{Eye, EyeFeatureRow};

const CLINICAL_GROUPS: [Group; 4] = [Group::S, Group::O, Group::D, Group::B];

fn malformed(context: impl Into<String>, message: impl ToString) -> CohortError {
    CohortError::Malformed {
        context: context.into(),
        message: message.to_string(),
    }
}

fn is_missing(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Radiomic features CSV: `patient_id,eye,<columns...>`, blanks for missing.
pub fn write_features_csv<W: Write>(out: W, rows: &[EyeFeatureRow], columns: &[String]) -> Result<(), CohortError> {
    let mut w = csv::Writer::from_writer(out);
    let ctx = "features csv";
    let mut header = vec!["patient_id".to_string(), "eye".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header).map_err(|e| malformed(ctx, e))?;
    for row in rows {
        let mut rec = vec![row.patient_id.clone(), row.eye.to_string()];
        rec.extend(columns.iter().map(|c| row.values.get(c).map(|&v| fmt_num(v)).unwrap_or_default()));
        w.write_record(&rec).map_err(|e| malformed(ctx, e))?;
    }
    w.flush().map_err(|e| malformed(ctx, e))
}

/// Radiomic rows of a cohort, all columns in sorted order.
pub fn cohort_feature_rows(cohort: &Cohort) -> (Vec<EyeFeatureRow>, Vec<String>) {
    let columns: BTreeSet<&String> = cohort.records().iter().flat_map(|r| r.radiomics.keys()).collect();
    let rows = cohort
        .records()
        .iter()
        .map(|r| EyeFeatureRow {
            patient_id: r.patient_id.clone(),
            eye: r.eye,
            values: r.radiomics.clone(),
            missing: BTreeSet::new(),
        })
        .collect();
    (rows, columns.into_iter().cloned().collect())
}

/// Clinical CSV: `patient_id,eye,risk_label` then `S_`, `O_`, `D_`, `B_`
/// prefixed columns.
pub fn write_clinical_csv<W: Write>(out: W, cohort: &Cohort) -> Result<(), CohortError> {
    let ctx = "clinical csv";
    let mut columns: Vec<(Group, String)> = Vec::new();
    for g in CLINICAL_GROUPS {
        let names: BTreeSet<&String> = cohort
            .records()
            .iter()
            .flat_map(|r| r.clinical(g).into_iter().flat_map(|m| m.keys()))
            .collect();
        columns.extend(names.into_iter().map(|n| (g, n.clone())));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["patient_id".to_string(), "eye".into(), "risk_label".into()];
    header.extend(columns.iter().map(|(g, n)| format!("{}_{}", g.as_str(), n)));
    w.write_record(&header).map_err(|e| malformed(ctx, e))?;
    for r in cohort.records() {
        let mut rec = vec![r.patient_id.clone(), r.eye.to_string(), r.risk_label.to_string()];
        rec.extend(columns.iter().map(|(g, n)| match r.clinical(*g).and_then(|m| m.get(n)) {
            None => String::new(),
            Some(Value::Number(v)) => fmt_num(*v),
            Some(Value::Category(s)) => s.clone(),
        }));
        w.write_record(&rec).map_err(|e| malformed(ctx, e))?;
    }
    w.flush().map_err(|e| malformed(ctx, e))
}

fn eye_key(ctx: &str, line: usize, pid: &str, eye: &str) -> Result<EyeKey, CohortError> {
    if pid.trim().is_empty() {
        return Err(malformed(ctx, format!("line {line}: empty patient_id")));
    }
    let eye: Eye = eye.parse().map_err(|e: String| malformed(ctx, format!("line {line}: {e}")))?;
    Ok(EyeKey {
        patient_id: pid.trim().to_string(),
        eye,
    })
}

fn expect_leading(ctx: &str, header: &csv::StringRecord, names: &[&str]) -> Result<(), CohortError> {
    for (i, n) in names.iter().enumerate() {
        if header.get(i).map(str::trim) != Some(*n) {
            return Err(malformed(ctx, format!("column {} must be {n}", i + 1)));
        }
    }
    Ok(())
}

/// Parse a radiomic features CSV.
pub fn read_features_csv<R: Read>(input: R) -> Result<Vec<(EyeKey, BTreeMap<String, f64>)>, CohortError> {
    let ctx = "features csv";
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(|e| malformed(ctx, e))?.clone();
    expect_leading(ctx, &header, &["patient_id", "eye"])?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| malformed(ctx, e))?;
        let key = eye_key(ctx, line, &rec[0], &rec[1])?;
        let mut values = BTreeMap::new();
        for (name, cell) in header.iter().zip(rec.iter()).skip(2) {
            if is_missing(cell) {
                continue;
            }
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| malformed(ctx, format!("line {line}: {name} is not numeric ({cell:?})")))?;
            values.insert(name.trim().to_string(), v);
        }
        out.push((key, values));
    }
    Ok(out)
}

/// One parsed clinical row.
pub type ClinicalRow = (EyeKey, RiskLabel, BTreeMap<Group, BTreeMap<String, Value>>);

/// Parse a clinical CSV. A column is categorical when any non-missing cell
/// fails to parse as a number.
pub fn read_clinical_csv<R: Read>(input: R) -> Result<Vec<ClinicalRow>, CohortError> {
    let ctx = "clinical csv";
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(|e| malformed(ctx, e))?.clone();
    expect_leading(ctx, &header, &["patient_id", "eye", "risk_label"])?;
    let mut columns = Vec::new();
    let mut seen = BTreeSet::new();
    for h in header.iter().skip(3) {
        let h = h.trim();
        let (prefix, name) = h
            .split_once('_')
            .ok_or_else(|| malformed(ctx, format!("column {h} lacks a group prefix")))?;
        let group: Group = prefix
            .parse()
            .ok()
            .filter(|g| *g != Group::R)
            .ok_or_else(|| malformed(ctx, format!("column {h}: prefix must be S_, O_, D_ or B_")))?;
        if !seen.insert(name.to_string()) {
            return Err(malformed(ctx, format!("attribute {name} appears twice")));
        }
        columns.push((group, name.to_string()));
    }
    let records: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>().map_err(|e| malformed(ctx, e))?;
    let numeric: Vec<bool> = (0..columns.len())
        .map(|j| {
            records
                .iter()
                .map(|r| &r[j + 3])
                .filter(|c| !is_missing(c))
                .all(|c| c.trim().parse::<f64>().is_ok())
        })
        .collect();
    let mut out = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let line = i + 2;
        let key = eye_key(ctx, line, &rec[0], &rec[1])?;
        let label: RiskLabel = rec[2].parse()?;
        let mut groups: BTreeMap<Group, BTreeMap<String, Value>> = BTreeMap::new();
        for (j, (g, name)) in columns.iter().enumerate() {
            let entry = groups.entry(*g).or_default();
            let cell = &rec[j + 3];
            if is_missing(cell) {
                continue;
            }
            let v = if numeric[j] {
                Value::Number(cell.trim().parse().expect("checked numeric"))
            } else {
                Value::Category(cell.trim().to_string())
            };
            entry.insert(name.clone(), v);
        }
        out.push((key, label, groups));
    }
    Ok(out)
}

/// Join a features CSV and a clinical CSV on `(patient_id, eye)`.
pub fn load_cohort(features_csv: &Path, clinical_csv: &Path) -> Result<Cohort, CohortError> {
    let open = |p: &Path| std::fs::File::open(p).map_err(|e| malformed(p.display().to_string(), e));
    let features = read_features_csv(open(features_csv)?)?;
    let clinical = read_clinical_csv(open(clinical_csv)?)?;
    join(features, clinical, format!("{} + {}", features_csv.display(), clinical_csv.display()))
}

pub(crate) fn join(
    features: Vec<(EyeKey, BTreeMap<String, f64>)>,
    clinical: Vec<ClinicalRow>,
    provenance: String,
) -> Result<Cohort, CohortError> {
    let mut by_key: BTreeMap<EyeKey, (RiskLabel, BTreeMap<Group, BTreeMap<String, Value>>)> = BTreeMap::new();
    for (key, label, groups) in clinical {
        if by_key.contains_key(&key) {
            return Err(CohortError::DuplicateEye {
                patient_id: key.patient_id,
                eye: key.eye,
            });
        }
        by_key.insert(key, (label, groups));
    }
    let mut records = Vec::with_capacity(features.len());
    let mut unjoined = BTreeSet::new();
    let mut used = BTreeSet::new();
    for (key, radiomics) in features {
        if !used.insert(key.clone()) {
            return Err(CohortError::DuplicateEye {
                patient_id: key.patient_id,
                eye: key.eye,
            });
        }
        let Some((label, mut groups)) = by_key.remove(&key) else {
            unjoined.insert(key.patient_id.clone());
            continue;
        };
        let mut rec = EyeRecord::new(key.patient_id, key.eye, label);
        rec.radiomics = radiomics;
        for g in CLINICAL_GROUPS {
            if let Some(m) = groups.remove(&g) {
                *rec.clinical_mut(g).expect("clinical group") = m;
            }
        }
        records.push(rec);
    }
    unjoined.extend(by_key.into_keys().map(|k| k.patient_id));
    if !unjoined.is_empty() {
        return Err(CohortError::MissingJoin(unjoined.into_iter().collect::<Vec<_>>().join(", ")));
    }
    Cohort::new(records, provenance)
}
