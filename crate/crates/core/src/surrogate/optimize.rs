use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{KernelKind, KernelSpec};
use super::loo::{loo_cv_objective, SINGULAR_PENALTY};
use super::TrainingData;
use crate::error::{invalid, Error, Result};
use crate::inputs::lhs_unit;

/// Default number of local searches.
pub const DEFAULT_RESTARTS: usize = 5;

const MAX_ITERATIONS_PER_DIM: usize = 200;
const F_TOL: f64 = 1e-6;
const X_TOL: f64 = 1e-4;

/// Outcome of a length-scale search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaOptimum {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub evaluations: usize,
    /// Set when no local search met its convergence tolerance.
    pub warning: Option<String>,
}

/// Per-coordinate bounds `[1e-2·range, 10·range]` from the training-data span.
pub fn default_bounds(data: &TrainingData) -> Vec<(f64, f64)> {
    (0..data.dim())
        .map(|j| {
            let (lo, hi) = (0..data.len())
                .map(|l| data.point(l)[j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            let range = hi - lo;
            let range = if range > 0.0 && range.is_finite() { range } else { 1.0 };
            (1e-2 * range, 10.0 * range)
        })
        .collect()
}

struct LocalResult {
    x: Vec<f64>,
    f: f64,
    evaluations: usize,
    converged: bool,
}

/// Nelder–Mead on a box, with every trial point projected onto the box.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64], lo: &[f64], hi: &[f64]) -> LocalResult {
    let n = start.len();
    let clamp = |x: &mut [f64]| {
        for j in 0..n {
            x[j] = x[j].clamp(lo[j], hi[j]);
        }
    };
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for j in 0..n {
        let mut v = start.to_vec();
        let step = 0.1 * (hi[j] - lo[j]);
        v[j] = if v[j] + step <= hi[j] { v[j] + step } else { v[j] - step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    let mut evaluations = n + 1;
    let max_iter = MAX_ITERATIONS_PER_DIM * n;
    let mut converged = false;

    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread_f = (values[n] - values[0]).abs();
        let spread_x =
            simplex[1..].iter().flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max);
        if spread_f <= F_TOL * (1.0 + values[0].abs()) && spread_x <= X_TOL {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| {
            let mut x: Vec<f64> = (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect();
            clamp(&mut x);
            x
        };

        let xr = along(-1.0);
        let fr = f(&xr);
        evaluations += 1;
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            evaluations += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(-0.5);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = f(&xc);
            (xc, fc)
        };
        evaluations += 1;
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        for i in 1..=n {
            for j in 0..n {
                simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
            }
            values[i] = f(&simplex[i]);
        }
        evaluations += n;
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b))).unwrap();
    LocalResult { x: simplex[best].clone(), f: values[best], evaluations, converged }
}

/// Minimizes the leave-one-out objective over length scales within `bounds`.
///
/// A Latin-hypercube pool in log space seeds `restarts` bounded local
/// searches started from the best pool points; the best result wins. The
/// outcome depends only on the inputs and `seed`.
pub fn optimize_theta(
    data: &TrainingData,
    kind: KernelKind,
    bounds: &[(f64, f64)],
    restarts: usize,
    seed: u64,
) -> Result<ThetaOptimum> {
    let n = data.dim();
    if bounds.len() != n {
        return Err(invalid(format!("expected {n} bounds, got {}", bounds.len())));
    }
    if bounds.iter().any(|&(a, b)| !(a > 0.0 && b >= a && b.is_finite())) {
        return Err(invalid(format!("bounds must be finite, positive and ordered: {bounds:?}")));
    }
    if restarts == 0 {
        return Err(invalid("restarts must be at least 1"));
    }
    let lo: Vec<f64> = bounds.iter().map(|b| b.0.ln()).collect();
    let hi: Vec<f64> = bounds.iter().map(|b| b.1.ln()).collect();
    let objective = |u: &[f64]| {
        let theta: Vec<f64> = u.iter().map(|v| v.exp()).collect();
        loo_cv_objective(&KernelSpec { kind, theta }, data)
    };

    let pool_size = (10 * n).max(20);
    let unit = lhs_unit(pool_size, n, seed);
    let mut pool: Vec<Vec<f64>> = vec![(0..n).map(|j| 0.5 * (lo[j] + hi[j])).collect()];
    pool.extend(unit.chunks(n).map(|u| (0..n).map(|j| lo[j] + u[j] * (hi[j] - lo[j])).collect()));
    let pool_values: Vec<f64> = pool.par_iter().map(|u| objective(u)).collect();
    let mut evaluations = pool.len();

    let mut ranked: Vec<usize> = (0..pool.len()).filter(|&i| pool_values[i] < SINGULAR_PENALTY).collect();
    ranked.sort_by(|&a, &b| pool_values[a].total_cmp(&pool_values[b]).then(a.cmp(&b)));
    if ranked.is_empty() {
        let trace: Vec<String> =
            pool.iter().take(5).map(|u| format!("{:?}", u.iter().map(|v| v.exp()).collect::<Vec<_>>())).collect();
        return Err(Error::Optimization(format!(
            "correlation matrix singular at all {} starting length scales, e.g. {}",
            pool.len(),
            trace.join(", ")
        )));
    }
    ranked.truncate(restarts);

    let locals: Vec<LocalResult> = ranked.par_iter().map(|&i| nelder_mead(&objective, &pool[i], &lo, &hi)).collect();
    evaluations += locals.iter().map(|r| r.evaluations).sum::<usize>();
    let converged = locals.iter().any(|r| r.converged);
    let best =
        locals.iter().enumerate().min_by(|a, b| a.1.f.total_cmp(&b.1.f).then(a.0.cmp(&b.0))).map(|(_, r)| r).unwrap();
    // a pool point may still beat a local search that wandered off
    let (x, f) = if pool_values[ranked[0]] < best.f {
        (pool[ranked[0]].clone(), pool_values[ranked[0]])
    } else {
        (best.x.clone(), best.f)
    };
    Ok(ThetaOptimum {
        theta: x.iter().zip(bounds).map(|(v, b)| v.exp().clamp(b.0, b.1)).collect(),
        objective: f,
        evaluations,
        warning: (!converged).then(|| "length-scale search stopped at iteration limit".to_string()),
    })
}
