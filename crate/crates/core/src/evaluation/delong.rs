use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::nested::RunResult;
use super::roc::check_scores;
use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeLongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    pub var_diff: f64,
    pub z: f64,
    pub p: f64,
}

fn psi(pos: f64, neg: f64) -> f64 {
    if pos > neg {
        1.0
    } else if pos == neg {
        0.5
    } else {
        0.0
    }
}

/// Structural components `(V10, V01)` of one score vector.
fn components(pos: &[f64], neg: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut v10 = vec![0.0; pos.len()];
    let mut v01 = vec![0.0; neg.len()];
    for (i, &sp) in pos.iter().enumerate() {
        for (j, &sn) in neg.iter().enumerate() {
            let v = psi(sp, sn);
            v10[i] += v;
            v01[j] += v;
        }
    }
    v10.iter_mut().for_each(|v| *v /= neg.len() as f64);
    v01.iter_mut().for_each(|v| *v /= pos.len() as f64);
    (v10, v01)
}

/// Sample variance of `a - b`, i.e. `S11 + S22 - 2 S12`; zero for one item.
fn var_of_difference(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}

/// DeLong test for two correlated AUCs computed on the same eyes.
pub fn delong_paired(scores_a: &[f64], scores_b: &[f64], labels: &[bool]) -> Result<DeLongResult, EvalError> {
    check_scores(scores_a, labels)?;
    check_scores(scores_b, labels)?;
    let split = |s: &[f64]| {
        let pos: Vec<f64> = s.iter().zip(labels).filter(|(_, &l)| l).map(|(v, _)| *v).collect();
        let neg: Vec<f64> = s.iter().zip(labels).filter(|(_, &l)| !l).map(|(v, _)| *v).collect();
        (pos, neg)
    };
    let (pa, na) = split(scores_a);
    let (pb, nb) = split(scores_b);
    let (v10a, v01a) = components(&pa, &na);
    let (v10b, v01b) = components(&pb, &nb);
    let auc_a = v10a.iter().sum::<f64>() / v10a.len() as f64;
    let auc_b = v10b.iter().sum::<f64>() / v10b.len() as f64;
    let var_diff =
        (var_of_difference(&v10a, &v10b) / pa.len() as f64 + var_of_difference(&v01a, &v01b) / na.len() as f64).max(0.0);
    let (z, p) = if var_diff > 0.0 {
        let z = (auc_a - auc_b) / var_diff.sqrt();
        (z, erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0))
    } else {
        (0.0, 1.0)
    };
    Ok(DeLongResult {
        auc_a,
        auc_b,
        var_diff,
        z,
        p,
    })
}

/// DeLong test on the pooled out-of-fold scores of two runs. The runs must
/// cover exactly the same eyes with the same labels.
pub fn delong_runs(a: &RunResult, b: &RunResult) -> Result<DeLongResult, EvalError> {
    let index = |r: &RunResult| -> BTreeMap<String, (f64, bool)> {
        r.pooled.iter().map(|s| (s.key.to_string(), (s.score, s.label))).collect()
    };
    let (ia, ib) = (index(a), index(b));
    let only_a: Vec<String> = ia.keys().filter(|k| !ib.contains_key(*k)).cloned().collect();
    let only_b: Vec<String> = ib.keys().filter(|k| !ia.contains_key(*k)).cloned().collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(EvalError::KeyMismatch { only_a, only_b });
    }
    let mut sa = Vec::with_capacity(ia.len());
    let mut sb = Vec::with_capacity(ia.len());
    let mut labels = Vec::with_capacity(ia.len());
    for (k, (s, l)) in &ia {
        let (t, m) = ib[k];
        if *l != m {
            return Err(EvalError::LabelMismatch(k.clone()));
        }
        sa.push(*s);
        sb.push(t);
        labels.push(*l);
    }
    delong_paired(&sa, &sb, &labels)
}
