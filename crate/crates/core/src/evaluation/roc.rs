use serde::{Deserialize, Serialize};

use super::EvalError;

pub(crate) fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok((pos, neg))
}

/// Twice the Mann-Whitney U statistic, counted exactly in integers.
fn twice_u(scores: &[f64], labels: &[bool]) -> u64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut u2 = 0u64;
    let mut neg_below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_tied, mut neg_tied) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos_tied += 1;
            } else {
                neg_tied += 1;
            }
            j += 1;
        }
        u2 += pos_tied * (2 * neg_below + neg_tied);
        neg_below += neg_tied;
        i = j;
    }
    u2
}

/// Mann-Whitney AUC with ties counted as one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let (pos, neg) = check_scores(scores, labels)?;
    Ok(twice_u(scores, labels) as f64 / (2 * pos as u64 * neg as u64) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    /// Score threshold generating each point (`None` for the start point
    /// and for averaged curves).
    pub thresholds: Vec<Option<f64>>,
}

impl RocCurve {
    pub fn len(&self) -> usize {
        self.fpr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fpr.is_empty()
    }

    /// Trapezoidal area under the polyline.
    pub fn area(&self) -> f64 {
        self.fpr
            .windows(2)
            .zip(self.tpr.windows(2))
            .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
            .sum()
    }

    /// TPR at `x`: the highest TPR among points exactly at `x`, otherwise
    /// linear interpolation between the neighbouring points.
    pub fn tpr_at(&self, x: f64) -> f64 {
        let mut exact: Option<f64> = None;
        for (f, t) in self.fpr.iter().zip(&self.tpr) {
            if *f == x {
                exact = Some(exact.map_or(*t, |e: f64| e.max(*t)));
            }
        }
        if let Some(t) = exact {
            return t;
        }
        for k in 1..self.len() {
            let (x0, x1) = (self.fpr[k - 1], self.fpr[k]);
            if x0 < x && x < x1 {
                let (y0, y1) = (self.tpr[k - 1], self.tpr[k]);
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            }
        }
        if x <= self.fpr[0] {
            self.tpr[0]
        } else {
            *self.tpr.last().expect("non-empty curve")
        }
    }
}

/// ROC points from sweeping the distinct scores in descending order.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve, EvalError> {
    let (pos, neg) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut curve = RocCurve {
        fpr: vec![0.0],
        tpr: vec![0.0],
        thresholds: vec![None],
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.fpr.push(fp as f64 / neg as f64);
        curve.tpr.push(tp as f64 / pos as f64);
        curve.thresholds.push(Some(s));
    }
    Ok(curve)
}

pub const MEAN_ROC_GRID: usize = 101;

/// Vertical averaging of TPR on the FPR grid {0, 0.01, ..., 1}, with the
/// origin prepended.
pub fn mean_roc(curves: &[RocCurve]) -> Result<RocCurve, EvalError> {
    if curves.is_empty() || curves.iter().any(RocCurve::is_empty) {
        return Err(EvalError::EmptyInput("mean_roc needs at least one non-empty curve"));
    }
    let mut out = RocCurve {
        fpr: vec![0.0],
        tpr: vec![0.0],
        thresholds: vec![None],
    };
    for k in 0..MEAN_ROC_GRID {
        let x = k as f64 / (MEAN_ROC_GRID - 1) as f64;
        let mean = curves.iter().map(|c| c.tpr_at(x)).sum::<f64>() / curves.len() as f64;
        out.fpr.push(x);
        out.tpr.push(mean);
        out.thresholds.push(None);
    }
    Ok(out)
}
