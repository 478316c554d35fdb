//! Derivative-free minimization: deterministic Nelder–Mead simplex with box
//! clamping and fixed restarts.
//!
//! Used for hyperparameter estimation on log-parameters, where gradients of
//! the Vecchia likelihood would be tedious and the dimension is small. The
//! whole procedure is deterministic: fixed initial simplex, stable ordering,
//! and restarts at a fixed step shrink, so a fit rerun bit-reproduces.

/// Options for [`minimize_simplex`].
#[derive(Debug, Clone)]
pub struct SimplexOptions {
    /// Maximum objective evaluations across all restarts.
    pub budget: usize,
    /// Additional deterministic restarts after the first descent converges.
    pub restarts: usize,
    /// Initial simplex edge length per coordinate.
    pub initial_step: f64,
    /// Convergence: stop a descent when the simplex value spread falls below
    /// `tol * (1 + |best|)`.
    pub tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            budget: 500,
            restarts: 2,
            initial_step: 0.5,
            tol: 1e-8,
        }
    }
}

/// Outcome of a simplex minimization.
#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// True when the evaluation budget ran out before the final descent
    /// converged — the result is best-so-far, not a stationary point.
    pub budget_exhausted: bool,
}

fn clamp(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for k in 0..x.len() {
        x[k] = x[k].clamp(lower[k], upper[k]);
    }
}

/// Minimizes `f` over the box [lower, upper], starting from `init`
/// (clamped). The initial point is always evaluated first, so the result is
/// never worse than `f(clamp(init))`.
pub fn minimize_simplex(
    mut f: impl FnMut(&[f64]) -> f64,
    init: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &SimplexOptions,
) -> SimplexResult {
    let dim = init.len();
    assert!(dim > 0 && lower.len() == dim && upper.len() == dim);
    let mut evals = 0usize;
    let mut eval = |x: &mut Vec<f64>, evals: &mut usize| -> f64 {
        clamp(x, lower, upper);
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut best_x: Vec<f64> = init.to_vec();
    clamp(&mut best_x, lower, upper);
    let mut best_v = eval(&mut best_x.clone(), &mut evals);
    // Keep the clamped init as the incumbent.
    let mut budget_exhausted = false;

    let mut step = opts.initial_step;
    for _restart in 0..=opts.restarts {
        // Simplex around the incumbent: vertex 0 = incumbent, vertex k+1 =
        // incumbent shifted along coordinate k.
        let mut xs: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
        let mut vs: Vec<f64> = Vec::with_capacity(dim + 1);
        xs.push(best_x.clone());
        vs.push(best_v);
        for k in 0..dim {
            let mut v = best_x.clone();
            // Step inward when already at the upper bound.
            if v[k] + step <= upper[k] {
                v[k] += step;
            } else {
                v[k] -= step;
            }
            if evals >= opts.budget {
                budget_exhausted = true;
                break;
            }
            let fv = eval(&mut v, &mut evals);
            xs.push(v);
            vs.push(fv);
        }
        if xs.len() < dim + 1 {
            break;
        }

        let converged = loop {
            if evals >= opts.budget {
                break false;
            }
            // Stable ordering keeps the procedure deterministic under ties.
            let mut order: Vec<usize> = (0..=dim).collect();
            order.sort_by(|&a, &b| vs[a].partial_cmp(&vs[b]).unwrap());
            let xs2: Vec<Vec<f64>> = order.iter().map(|&i| xs[i].clone()).collect();
            let vs2: Vec<f64> = order.iter().map(|&i| vs[i]).collect();
            xs = xs2;
            vs = vs2;

            if vs[dim] - vs[0] <= opts.tol * (1.0 + vs[0].abs()) {
                break true;
            }

            // Centroid of all but the worst vertex.
            let mut centroid = vec![0.0; dim];
            for v in xs.iter().take(dim) {
                for k in 0..dim {
                    centroid[k] += v[k];
                }
            }
            for c in &mut centroid {
                *c /= dim as f64;
            }

            let mut reflect = vec![0.0; dim];
            for k in 0..dim {
                reflect[k] = centroid[k] + (centroid[k] - xs[dim][k]);
            }
            let fr = eval(&mut reflect, &mut evals);

            if fr < vs[0] {
                // Try expanding past the reflection.
                let mut expand = vec![0.0; dim];
                for k in 0..dim {
                    expand[k] = centroid[k] + 2.0 * (centroid[k] - xs[dim][k]);
                }
                let fe = eval(&mut expand, &mut evals);
                if fe < fr {
                    xs[dim] = expand;
                    vs[dim] = fe;
                } else {
                    xs[dim] = reflect;
                    vs[dim] = fr;
                }
            } else if fr < vs[dim - 1] {
                xs[dim] = reflect;
                vs[dim] = fr;
            } else {
                // Contract toward the better of (worst, reflection).
                let (toward, f_toward) = if fr < vs[dim] {
                    (reflect.clone(), fr)
                } else {
                    (xs[dim].clone(), vs[dim])
                };
                let mut contract = vec![0.0; dim];
                for k in 0..dim {
                    contract[k] = centroid[k] + 0.5 * (toward[k] - centroid[k]);
                }
                let fc = eval(&mut contract, &mut evals);
                if fc < f_toward {
                    xs[dim] = contract;
                    vs[dim] = fc;
                } else {
                    // Shrink everything toward the best vertex.
                    for i in 1..=dim {
                        let mut v = vec![0.0; dim];
                        for k in 0..dim {
                            v[k] = xs[0][k] + 0.5 * (xs[i][k] - xs[0][k]);
                        }
                        if evals >= opts.budget {
                            break;
                        }
                        let fv = eval(&mut v, &mut evals);
                        xs[i] = v;
                        vs[i] = fv;
                    }
                }
            }
        };

        // Adopt the descent's best if it improved on the incumbent.
        for i in 0..xs.len() {
            if vs[i] < best_v {
                best_v = vs[i];
                best_x = xs[i].clone();
            }
        }
        if !converged {
            budget_exhausted = true;
            break;
        }
        // Restart with a tighter simplex around the incumbent.
        step *= 0.25;
    }

    SimplexResult {
        x: best_x,
        value: best_v,
        evaluations: evals,
        budget_exhausted,
    }
}
