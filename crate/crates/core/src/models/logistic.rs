use ndarray::{Array2, ArrayView2};

use super::linalg::{cholesky, cholesky_solve};
use super::{check_training, class_weights, LrParams, ModelError, ModelKind, ModelSpec, Parameters, TrainedModel};

fn log1pexp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Penalized objective `mean_i s_i·logloss_i + (λ/2)‖w‖²` and its gradient
/// with respect to `(w, b)`; the gradient's last entry is the intercept.
pub fn logistic_objective(
    x: ArrayView2<f64>,
    y: &[bool],
    sample_weight: &[f64],
    w: &[f64],
    b: f64,
    lambda: f64,
) -> (f64, Vec<f64>) {
    let xs = x.as_standard_layout();
    let data = xs.as_slice().expect("standard layout");
    let mut theta = w.to_vec();
    theta.push(b);
    objective(data, x.ncols(), y, sample_weight, &theta, lambda)
}

fn objective(data: &[f64], p: usize, y: &[bool], sw: &[f64], theta: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let n = y.len();
    let (w, b) = (&theta[..p], theta[p]);
    let mut loss = 0.0;
    let mut grad = vec![0.0; p + 1];
    for i in 0..n {
        let row = &data[i * p..(i + 1) * p];
        let z: f64 = row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
        let s = sw[i];
        // logloss = log(1 + e^z) - y z
        loss += s * (log1pexp(z) - if y[i] { z } else { 0.0 });
        let r = s * (sigmoid(z) - if y[i] { 1.0 } else { 0.0 });
        for (g, a) in grad.iter_mut().zip(row) {
            *g += r * a;
        }
        grad[p] += r;
    }
    let nf = n as f64;
    loss /= nf;
    for g in grad.iter_mut() {
        *g /= nf;
    }
    for j in 0..p {
        loss += 0.5 * lambda * w[j] * w[j];
        grad[j] += lambda * w[j];
    }
    (loss, grad)
}

/// L2-regularized logistic regression by damped Newton iterations.
pub fn train_logistic(x: ArrayView2<f64>, y: &[bool], params: &LrParams) -> Result<TrainedModel, ModelError> {
    check_training(x, y)?;
    ModelSpec::Lr(params.clone()).validate()?;
    let (n, p) = x.dim();
    let q = p + 1;
    let sw = class_weights(y, params.class_weight);
    let xs = x.as_standard_layout();
    let data = xs.as_slice().expect("standard layout");
    let mut theta = vec![0.0; q];
    let eval = |theta: &[f64]| objective(data, p, y, &sw, theta, params.lambda);
    let (mut f, mut grad) = eval(&theta);
    let mut hess = vec![0.0; q * q];
    let nf = n as f64;
    for _ in 0..params.max_iter {
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm <= params.tol {
            return Ok(model(params, p, theta));
        }
        // X_aᵀ D X_a with X_a the design augmented by a ones column
        let mut scaled = Array2::<f64>::zeros((n, q));
        for (i, mut out) in scaled.rows_mut().into_iter().enumerate() {
            let row = &data[i * p..(i + 1) * p];
            let z = row.iter().zip(&theta).map(|(a, c)| a * c).sum::<f64>() + theta[p];
            let s = sigmoid(z);
            let r = (sw[i] * s * (1.0 - s) / nf).sqrt();
            for (o, a) in out.iter_mut().zip(row) {
                *o = r * a;
            }
            out[p] = r;
        }
        let h = scaled.t().dot(&scaled);
        hess.copy_from_slice(h.as_slice().expect("standard layout"));
        for a in 0..p {
            hess[a * q + a] += params.lambda;
        }
        // keeps the intercept pivot positive when all probabilities saturate
        hess[p * q + p] += 1e-12;
        cholesky(&mut hess, q).map_err(|_| ModelError::NotConverged {
            iterations: 0,
            residual: gnorm,
        })?;
        let mut step = grad.clone();
        cholesky_solve(&hess, q, &mut step);
        let slope: f64 = -grad.iter().zip(&step).map(|(g, s)| g * s).sum::<f64>();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            let (fc, gc) = eval(&cand);
            if fc <= f + 1e-4 * t * slope || (fc <= f && t < 1e-6) {
                theta = cand;
                f = fc;
                grad = gc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let residual = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if residual <= params.tol {
        return Ok(model(params, p, theta));
    }
    Err(ModelError::NotConverged {
        iterations: params.max_iter,
        residual,
    })
}

fn model(params: &LrParams, p: usize, theta: Vec<f64>) -> TrainedModel {
    TrainedModel {
        kind: ModelKind::Lr,
        spec: ModelSpec::Lr(params.clone()),
        n_features: p,
        parameters: Parameters::Linear {
            intercept: theta[p],
            weights: theta[..p].to_vec(),
        },
    }
}
