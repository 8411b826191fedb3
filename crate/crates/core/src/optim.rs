//! Nonlinear least-squares and simplex minimizers used by the GMM engine.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Stop when the objective improves by less than this...
    pub f_tol: f64,
    /// ...and the largest parameter move is below this.
    pub x_tol: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iter: 2000,
            f_tol: 1e-10,
            x_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Central-difference Jacobian of `f` at `x` with per-coordinate step
/// `max(rel_step * |x_i|, 1e-8)`. Returns `None` if any evaluation fails.
pub fn numerical_jacobian<F>(f: F, x: &[f64], rel_step: f64) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<DVector<f64>>,
{
    let mut xp = x.to_vec();
    let mut cols = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = (rel_step * x[i].abs()).max(1e-8);
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        xp[i] = x[i] - h;
        let fm = f(&xp)?;
        xp[i] = x[i];
        let d = (fp - fm) / (2.0 * h);
        if d.iter().any(|v| !v.is_finite()) {
            return None;
        }
        cols.push(d);
    }
    let rows = cols.first().map_or(0, |c| c.len());
    Some(DMatrix::from_fn(rows, x.len(), |r, c| cols[c][r]))
}

/// Levenberg–Marquardt on `0.5 |r(x)|^2` with Marquardt diagonal scaling.
/// The objective reported is `|r|^2`.
pub fn levenberg_marquardt<R, J>(resid: R, jac: J, x0: &[f64], opts: &OptimOptions) -> OptimResult
where
    R: Fn(&[f64]) -> Option<DVector<f64>>,
    J: Fn(&[f64]) -> Option<DMatrix<f64>>,
{
    let mut x = x0.to_vec();
    let Some(mut r) = resid(&x) else {
        return OptimResult {
            x,
            f: f64::INFINITY,
            iterations: 0,
            converged: false,
        };
    };
    let mut f = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut it = 0;
    while it < opts.max_iter {
        it += 1;
        if f < 1e-28 {
            converged = true;
            break;
        }
        let Some(jm) = jac(&x) else { break };
        let jtj = jm.transpose() * &jm;
        let grad = jm.transpose() * &r;
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let step = match a.clone().cholesky() {
                Some(c) => c.solve(&(-&grad)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            match resid(&xn) {
                Some(rn) if rn.norm_squared().is_finite() && rn.norm_squared() < f => {
                    let fn_ = rn.norm_squared();
                    let improvement = f - fn_;
                    let max_step = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    x = xn;
                    r = rn;
                    f = fn_;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if improvement < opts.f_tol && max_step < opts.x_tol {
                        converged = true;
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if converged {
            break;
        }
        if !accepted {
            // No descent direction left at working precision.
            converged = true;
            break;
        }
    }
    OptimResult {
        x,
        f,
        iterations: it,
        converged,
    }
}

/// Nelder–Mead simplex minimization started from a simplex with edge
/// `step_rel * max(|x_i|, 1)` along each axis.
pub fn nelder_mead<F>(f: F, x0: &[f64], step_rel: f64, opts: &OptimOptions) -> OptimResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step_rel * x0[i].abs().max(1.0);
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();
    let mut converged = false;
    let mut it = 0;
    while it < opts.max_iter {
        it += 1;
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = idx.iter().map(|&i| pts[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        let spread = vals[n] - vals[0];
        let size = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if spread < opts.f_tol && size < opts.x_tol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = along(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    let p: Vec<f64> = pts[i]
                        .iter()
                        .zip(&pts[0])
                        .map(|(a, b)| b + 0.5 * (a - b))
                        .collect();
                    vals[i] = eval(&p);
                    pts[i] = p;
                }
            }
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap_or(0);
    OptimResult {
        x: pts[best].clone(),
        f: vals[best],
        iterations: it,
        converged,
    }
}
