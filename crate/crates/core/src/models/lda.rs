use ndarray::ArrayView2;

use super::linalg::{cholesky, cholesky_solve, dot};
use super::{check_training, LdaParams, ModelError, ModelKind, ModelSpec, Parameters, TrainedModel};

/// Shrinkage LDA: `w = Σ̂⁻¹(μ₁ − μ₀)` with
/// `Σ̂ = (1 − γ)·S + γ·(tr S / p)·I`.
pub fn train_lda(x: ArrayView2<f64>, y: &[bool], params: &LdaParams) -> Result<TrainedModel, ModelError> {
    check_training(x, y)?;
    ModelSpec::Lda(params.clone()).validate()?;
    let (n, p) = x.dim();
    let gamma = params.shrinkage;
    let mut mu = [vec![0.0; p], vec![0.0; p]];
    let mut count = [0usize; 2];
    for (row, &yi) in x.rows().into_iter().zip(y) {
        let c = yi as usize;
        count[c] += 1;
        for (m, v) in mu[c].iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    for c in 0..2 {
        for m in mu[c].iter_mut() {
            *m /= count[c] as f64;
        }
    }
    let mut s = vec![0.0; p * p];
    let mut d = vec![0.0; p];
    for (row, &yi) in x.rows().into_iter().zip(y) {
        let m = &mu[yi as usize];
        for j in 0..p {
            d[j] = row[j] - m[j];
        }
        for a in 0..p {
            for b in a..p {
                s[a * p + b] += d[a] * d[b];
            }
        }
    }
    let denom = if n > 2 { (n - 2) as f64 } else { n as f64 };
    for a in 0..p {
        for b in a..p {
            let v = s[a * p + b] / denom;
            s[a * p + b] = v;
            s[b * p + a] = v;
        }
    }
    let trace: f64 = (0..p).map(|j| s[j * p + j]).sum();
    let target = trace / p as f64;
    for a in 0..p {
        for b in 0..p {
            s[a * p + b] *= 1.0 - gamma;
        }
        s[a * p + a] += gamma * target;
    }
    cholesky(&mut s, p).map_err(|_| ModelError::Singular { shrinkage: gamma })?;
    let mut w: Vec<f64> = mu[1].iter().zip(&mu[0]).map(|(a, b)| a - b).collect();
    cholesky_solve(&s, p, &mut w);
    let mid: Vec<f64> = mu[1].iter().zip(&mu[0]).map(|(a, b)| 0.5 * (a + b)).collect();
    let intercept = -dot(&mid, &w) + (count[1] as f64 / count[0] as f64).ln();
    if !intercept.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Singular { shrinkage: gamma });
    }
    Ok(TrainedModel {
        kind: ModelKind::Lda,
        spec: ModelSpec::Lda(params.clone()),
        n_features: p,
        parameters: Parameters::Linear { weights: w, intercept },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn weights(m: &TrainedModel) -> Vec<f64> {
        match &m.parameters {
            Parameters::Linear { weights, .. } => weights.clone(),
            _ => unreachable!(),
        }
    }

    fn clouds(n: usize, seed: u64) -> (Array2<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, 2));
        let y: Vec<bool> = (0..n).map(|i| i % 2 == 1).collect();
        for i in 0..n {
            let z0: f64 = StandardNormal.sample(&mut rng);
            let z1: f64 = StandardNormal.sample(&mut rng);
            let centre = if y[i] { 1.0 } else { -1.0 };
            x[[i, 0]] = centre + z0;
            x[[i, 1]] = z1;
        }
        (x, y)
    }

    #[test]
    fn spherical_clouds_point_along_mean_difference() {
        // 1000 samples per cloud; the angle's sampling SD is about 1.8 degrees
        let within = (0..20)
            .filter(|&seed| {
                let (x, y) = clouds(2000, seed);
                let w = weights(&train_lda(x.view(), &y, &LdaParams { shrinkage: 0.0 }).unwrap());
                w[0] > 0.0 && (w[1].abs() / w[0]).atan().to_degrees() < 5.0
            })
            .count();
        assert!(within >= 19, "{within}/20 within 5 degrees");
    }

    #[test]
    fn matches_closed_form_two_by_two() {
        let (x, y) = clouds(40, 9);
        let w = weights(&train_lda(x.view(), &y, &LdaParams { shrinkage: 0.0 }).unwrap());
        let mean = |c: bool, j: usize| {
            let v: Vec<f64> = (0..40).filter(|&i| y[i] == c).map(|i| x[[i, j]]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let mut s = [[0.0; 2]; 2];
        for i in 0..40 {
            let d = [x[[i, 0]] - mean(y[i], 0), x[[i, 1]] - mean(y[i], 1)];
            for a in 0..2 {
                for b in 0..2 {
                    s[a][b] += d[a] * d[b] / 38.0;
                }
            }
        }
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let diff = [mean(true, 0) - mean(false, 0), mean(true, 1) - mean(false, 1)];
        let expect = [
            (s[1][1] * diff[0] - s[0][1] * diff[1]) / det,
            (s[0][0] * diff[1] - s[1][0] * diff[0]) / det,
        ];
        for k in 0..2 {
            assert!((w[k] - expect[k]).abs() < 1e-10 * expect[k].abs().max(1.0));
        }
    }

    #[test]
    fn full_shrinkage_is_mean_difference() {
        let x = array![[0.0, 1.0], [2.0, 5.0], [1.0, 0.0], [4.0, 3.0], [3.0, 9.0]];
        let y = [false, true, false, true, true];
        let w = weights(&train_lda(x.view(), &y, &LdaParams { shrinkage: 1.0 }).unwrap());
        let diff = [3.0 - 0.5, 17.0 / 3.0 - 0.5];
        let ratio = w[0] / diff[0];
        assert!(ratio > 0.0);
        assert!((w[1] / diff[1] - ratio).abs() < 1e-12 * ratio);
    }

    #[test]
    fn duplicate_columns_are_singular_without_shrinkage() {
        let (x, y) = clouds(50, 1);
        let dup = Array2::from_shape_fn((50, 2), |(i, _)| x[[i, 0]]);
        assert_eq!(
            train_lda(dup.view(), &y, &LdaParams { shrinkage: 0.0 }),
            Err(ModelError::Singular { shrinkage: 0.0 })
        );
        assert!(train_lda(dup.view(), &y, &LdaParams { shrinkage: 0.1 }).is_ok());
    }
}
