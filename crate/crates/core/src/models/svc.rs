use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{check_training, class_weights, Kernel, ModelError, ModelSpec, Parameters, SvcParams, TrainedModel};

const TAU: f64 = 1e-12;

/// Dual solution of the soft-margin SVM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvcSolution {
    pub alpha: Vec<f64>,
    /// Per-sample box bound (C, times the class weight when enabled).
    pub upper: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    /// Final maximal KKT violating-pair gap.
    pub gap: f64,
}

fn sign(v: bool) -> f64 {
    if v {
        1.0
    } else {
        -1.0
    }
}

fn rows(x: ArrayView2<f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Sequential minimal optimization with second-order working-set
/// selection, run until the maximal violating pair gap drops below `tol`.
pub fn solve_svc(x: ArrayView2<f64>, y: &[bool], params: &SvcParams) -> Result<SvcSolution, ModelError> {
    check_training(x, y)?;
    ModelSpec::Svc(params.clone()).validate()?;
    let n = y.len();
    let ys: Vec<f64> = y.iter().map(|&v| sign(v)).collect();
    let upper: Vec<f64> = class_weights(y, params.class_weight).iter().map(|w| w * params.c).collect();
    // Q_ij = y_i y_j K_ij
    let mut q = gram(x, params.kernel);
    for i in 0..n {
        for j in 0..n {
            q[i * n + j] *= ys[i] * ys[j];
        }
    }
    let qd: Vec<f64> = (0..n).map(|i| q[i * n + i]).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = params.max_passes.saturating_mul(n).max(1);
    let eps = params.tol;
    let mut iter = 0;
    let mut gap;
    // Shrinking: bounded variables that cannot join a violating pair leave
    // the active set. Stopping is always confirmed on the full problem.
    let all: Vec<usize> = (0..n).collect();
    let mut active = all.clone();
    let shrink_every = n.min(1000);
    let mut unshrunk = false;
    loop {
        if iter > 0 && iter % shrink_every == 0 {
            shrink(&mut active, &alpha, &grad, &ys, &upper);
        }
        let (i, j, g) = select_pair(&active, &alpha, &grad, &ys, &upper, &qd, &q, n);
        gap = g;
        if !unshrunk && gap < 10.0 * eps && active.len() < n {
            unshrunk = true;
            grad = gradient(&q, &alpha, n);
            active.clone_from(&all);
            continue;
        }
        if gap < eps || j.is_none() {
            // confirm on every point against a freshly accumulated gradient
            let fresh = gradient(&q, &alpha, n);
            let (_, j2, g2) = select_pair(&all, &alpha, &fresh, &ys, &upper, &qd, &q, n);
            grad = fresh;
            gap = g2;
            if gap < eps || j2.is_none() {
                break;
            }
            active.clone_from(&all);
            continue;
        }
        if iter >= max_iter {
            return Err(ModelError::NotConverged {
                iterations: iter,
                residual: gap,
            });
        }
        iter += 1;
        let (i, j) = (i.expect("violating pair"), j.expect("violating pair"));
        let (ci, cj) = (upper[i], upper[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qi = &q[i * n..(i + 1) * n];
        if ys[i] != ys[j] {
            let quad = (qd[i] + qd[j] + 2.0 * qi[j]).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * qi[j]).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        let qj = &q[j * n..(j + 1) * n];
        if active.len() == n {
            for t in 0..n {
                grad[t] += qi[t] * di + qj[t] * dj;
            }
        } else {
            for &t in &active {
                grad[t] += qi[t] * di + qj[t] * dj;
            }
        }
    }
    let intercept = -rho(&alpha, &grad, &ys, &upper);
    Ok(SvcSolution {
        alpha,
        upper,
        intercept,
        iterations: iter,
        gap,
    })
}

/// Row-major symmetric kernel matrix. Squared distances for the rbf kernel
/// come from the inner products, clamped at zero against rounding.
fn gram(x: ArrayView2<f64>, kernel: Kernel) -> Vec<f64> {
    let g = x.dot(&x.t());
    let n = g.nrows();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = match kernel {
                Kernel::Linear => g[[i, j]],
                Kernel::Rbf { .. } if i == j => 1.0,
                Kernel::Rbf { gamma } => (-gamma * (g[[i, i]] + g[[j, j]] - 2.0 * g[[i, j]]).max(0.0)).exp(),
            };
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

fn gradient(q: &[f64], alpha: &[f64], n: usize) -> Vec<f64> {
    let mut g = vec![-1.0; n];
    for (j, &a) in alpha.iter().enumerate() {
        if a != 0.0 {
            for (gt, qv) in g.iter_mut().zip(&q[j * n..(j + 1) * n]) {
                *gt += qv * a;
            }
        }
    }
    g
}

fn in_up(t: usize, alpha: &[f64], ys: &[f64], upper: &[f64]) -> bool {
    if ys[t] > 0.0 {
        alpha[t] < upper[t]
    } else {
        alpha[t] > 0.0
    }
}

fn in_low(t: usize, alpha: &[f64], ys: &[f64], upper: &[f64]) -> bool {
    if ys[t] > 0.0 {
        alpha[t] > 0.0
    } else {
        alpha[t] < upper[t]
    }
}

/// Drop variables stuck at a bound whose gradient keeps them out of any
/// violating pair.
fn shrink(active: &mut Vec<usize>, alpha: &[f64], grad: &[f64], ys: &[f64], upper: &[f64]) {
    let (mut gmax1, mut gmax2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &t in active.iter() {
        if in_up(t, alpha, ys, upper) {
            gmax1 = gmax1.max(-ys[t] * grad[t]);
        }
        if in_low(t, alpha, ys, upper) {
            gmax2 = gmax2.max(ys[t] * grad[t]);
        }
    }
    active.retain(|&t| {
        let g = grad[t];
        let out = if alpha[t] >= upper[t] {
            if ys[t] > 0.0 {
                -g > gmax1
            } else {
                -g > gmax2
            }
        } else if alpha[t] <= 0.0 {
            if ys[t] > 0.0 {
                g > gmax2
            } else {
                g > gmax1
            }
        } else {
            false
        };
        !out
    });
}

/// Returns `(i, j, gap)` over the indices in `set`, where
/// `gap = m(α) − M(α)`.
#[allow(clippy::too_many_arguments)]
fn select_pair(
    set: &[usize],
    alpha: &[f64],
    grad: &[f64],
    ys: &[f64],
    upper: &[f64],
    qd: &[f64],
    q: &[f64],
    n: usize,
) -> (Option<usize>, Option<usize>, f64) {
    let mut gmax = f64::NEG_INFINITY;
    let mut i = None;
    for &t in set {
        if in_up(t, alpha, ys, upper) {
            let v = -ys[t] * grad[t];
            if v >= gmax {
                gmax = v;
                i = Some(t);
            }
        }
    }
    let Some(ii) = i else {
        return (None, None, 0.0);
    };
    let qi = &q[ii * n..(ii + 1) * n];
    let mut gmax2 = f64::NEG_INFINITY;
    let mut best = f64::INFINITY;
    let mut j = None;
    for &t in set {
        if !in_low(t, alpha, ys, upper) {
            continue;
        }
        let v = ys[t] * grad[t];
        gmax2 = gmax2.max(v);
        let grad_diff = gmax + v;
        if grad_diff > 0.0 {
            // K_ii + K_tt - 2 K_it
            let quad = qd[ii] + qd[t] - 2.0 * ys[ii] * ys[t] * qi[t];
            let quad = if quad > 0.0 { quad } else { TAU };
            let obj = -(grad_diff * grad_diff) / quad;
            if obj <= best {
                best = obj;
                j = Some(t);
            }
        }
    }
    let gap = if gmax2 == f64::NEG_INFINITY { 0.0 } else { gmax + gmax2 };
    (i, j, gap)
}

fn rho(alpha: &[f64], grad: &[f64], ys: &[f64], upper: &[f64]) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..alpha.len() {
        let yg = ys[t] * grad[t];
        if alpha[t] >= upper[t] {
            if ys[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if ys[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// Count training points whose margin `y·f(x)` breaks the KKT conditions
/// by more than `tol`.
pub fn kkt_violations(x: ArrayView2<f64>, y: &[bool], kernel: Kernel, solution: &SvcSolution, tol: f64) -> usize {
    let xs = rows(x);
    let n = xs.len();
    let mut count = 0;
    for i in 0..n {
        let f: f64 = (0..n)
            .filter(|&j| solution.alpha[j] != 0.0)
            .map(|j| solution.alpha[j] * sign(y[j]) * kernel.eval(&xs[j], &xs[i]))
            .sum::<f64>()
            + solution.intercept;
        let m = sign(y[i]) * f;
        let a = solution.alpha[i];
        let ok = if a <= 0.0 {
            m >= 1.0 - tol
        } else if a >= solution.upper[i] {
            m <= 1.0 + tol
        } else {
            (m - 1.0).abs() <= tol
        };
        if !ok {
            count += 1;
        }
    }
    count
}

pub fn train_svc(x: ArrayView2<f64>, y: &[bool], params: &SvcParams) -> Result<TrainedModel, ModelError> {
    let sol = solve_svc(x, y, params)?;
    let spec = ModelSpec::Svc(params.clone());
    let p = x.ncols();
    let parameters = match params.kernel {
        Kernel::Linear => {
            let mut w = vec![0.0; p];
            for ((row, &a), &yi) in x.rows().into_iter().zip(&sol.alpha).zip(y) {
                if a != 0.0 {
                    let c = a * sign(yi);
                    for (wj, v) in w.iter_mut().zip(row.iter()) {
                        *wj += c * v;
                    }
                }
            }
            Parameters::Linear {
                weights: w,
                intercept: sol.intercept,
            }
        }
        kernel @ Kernel::Rbf { .. } => {
            let mut support_vectors = Vec::new();
            let mut dual_coef = Vec::new();
            for ((row, &a), &yi) in x.rows().into_iter().zip(&sol.alpha).zip(y) {
                if a != 0.0 {
                    support_vectors.push(row.to_vec());
                    dual_coef.push(a * sign(yi));
                }
            }
            Parameters::Kernel {
                kernel,
                support_vectors,
                dual_coef,
                intercept: sol.intercept,
            }
        }
    };
    Ok(TrainedModel {
        kind: spec.kind(),
        spec,
        n_features: p,
        parameters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Scorer;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rbf(gamma: f64, c: f64) -> SvcParams {
        SvcParams {
            c,
            kernel: Kernel::Rbf { gamma },
            ..SvcParams::default()
        }
    }

    #[test]
    fn xor_is_separated_by_rbf() {
        let x = array![[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]];
        let y = [true, true, false, false];
        let m = train_svc(x.view(), &y, &rbf(1.0, 10.0)).unwrap();
        let s = m.score_rows(x.view());
        for (v, t) in s.iter().zip(y) {
            assert_eq!(*v > 0.0, t);
        }
    }

    #[test]
    fn symmetric_pair_has_zero_midpoint() {
        let x = array![[-1.0], [1.0]];
        let m = train_svc(x.view(), &[false, true], &SvcParams::default()).unwrap();
        assert!(m.score_row(&[0.0]).abs() < 1e-12);
    }

    #[test]
    fn random_problems_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..20 {
            let n = rng.random_range(10..60);
            let p = rng.random_range(1..6);
            let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-2.0..2.0));
            let mut y: Vec<bool> = (0..n).map(|i| x[[i, 0]] + rng.random_range(-1.0..1.0) > 0.0).collect();
            y[0] = true;
            y[1] = false;
            let kernel = if trial % 2 == 0 { Kernel::Linear } else { Kernel::Rbf { gamma: 0.5 } };
            let params = SvcParams {
                c: [0.1, 1.0, 10.0][trial % 3],
                kernel,
                ..SvcParams::default()
            };
            let sol = solve_svc(x.view(), &y, &params).unwrap();
            let balance: f64 = sol.alpha.iter().zip(&y).map(|(a, &t)| a * sign(t)).sum();
            assert!(balance.abs() <= 1e-8);
            assert!(sol.alpha.iter().zip(&sol.upper).all(|(a, c)| *a >= 0.0 && a <= c));
            assert_eq!(kkt_violations(x.view(), &y, kernel, &sol, params.tol), 0);
        }
    }

    #[test]
    fn free_support_vector_sits_on_margin() {
        let x = array![[0.0, 0.0], [0.5, 1.0], [2.0, 2.0], [3.0, 1.5], [-1.0, 0.5]];
        let y = [false, false, true, true, false];
        let params = SvcParams {
            c: 100.0,
            ..SvcParams::default()
        };
        let sol = solve_svc(x.view(), &y, &params).unwrap();
        let m = train_svc(x.view(), &y, &params).unwrap();
        let mut checked = 0;
        for i in 0..5 {
            if y[i] && sol.alpha[i] > 0.0 && sol.alpha[i] < 100.0 {
                let f = m.score_row(&x.row(i).to_vec());
                assert!((f - 1.0).abs() <= params.tol);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }
}
