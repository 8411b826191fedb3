//! Moment stacking, two-step GMM, firm-clustered sandwich covariance and
//! delta-method inference.

use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pinv, spd_inverse, symmetrize};
use crate::optim::{levenberg_marquardt, nelder_mead, numerical_jacobian, OptimOptions};
use crate::panel::CenteredPanel;
use crate::params::{ParamId, ParamVector};

/// Which group of conditions a moment belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    A,
    B,
    C,
    Bench,
}

pub type ResidualFn = Arc<dyn Fn(&CenteredPanel, &ParamVector) -> Vec<f64> + Send + Sync>;
pub type InstrumentFn = Arc<dyn Fn(&CenteredPanel) -> Vec<Vec<f64>> + Send + Sync>;

/// One residual paired with its instruments. Each instrument column yields
/// one moment `E[z * u] = 0`; an empty instrument list yields the single
/// unconditional moment `E[u] = 0`. Instruments never include a constant
/// column since the data are centered.
#[derive(Clone)]
pub struct MomentSpec {
    pub block: Block,
    pub label: String,
    pub residual: ResidualFn,
    pub instruments: InstrumentFn,
}

impl MomentSpec {
    pub fn new(
        block: Block,
        label: impl Into<String>,
        residual: impl Fn(&CenteredPanel, &ParamVector) -> Vec<f64> + Send + Sync + 'static,
        instruments: impl Fn(&CenteredPanel) -> Vec<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        MomentSpec {
            block,
            label: label.into(),
            residual: Arc::new(residual),
            instruments: Arc::new(instruments),
        }
    }
}

impl std::fmt::Debug for MomentSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MomentSpec")
            .field("block", &self.block)
            .field("label", &self.label)
            .finish()
    }
}

/// A system of firm-averaged moments over a free parameter vector.
pub trait MomentModel: Sync {
    fn n_moments(&self) -> usize;
    fn n_firms(&self) -> usize;
    /// Block tag of every moment, in order.
    fn blocks(&self) -> Vec<Block>;
    /// Per-firm time-averaged moments, one row per firm.
    fn firm_moments(&self, x: &[f64]) -> Option<DMatrix<f64>>;
    /// Cross-firm mean of the per-firm moments.
    fn mean_moments(&self, x: &[f64]) -> Option<DVector<f64>> {
        let f = self.firm_moments(x)?;
        Some(column_means(&f))
    }
}

pub fn column_means(f: &DMatrix<f64>) -> DVector<f64> {
    let n = f.nrows().max(1) as f64;
    DVector::from_fn(f.ncols(), |j, _| f.column(j).iter().sum::<f64>() / n)
}

/// Firm averages of `instrument * residual` for every spec, stacked.
fn stacked_firm_moments(
    p: &CenteredPanel,
    specs: &[MomentSpec],
    instruments: &[Vec<Vec<f64>>],
    theta: &ParamVector,
) -> Option<DMatrix<f64>> {
    let groups = p.data.firm_groups();
    let q: usize = instruments.iter().map(|z| z.len().max(1)).sum();
    let mut out = DMatrix::<f64>::zeros(groups.len(), q);
    let mut col = 0;
    for (spec, z) in specs.iter().zip(instruments) {
        let u = (spec.residual)(p, theta);
        if u.len() != p.n_obs() || u.iter().any(|v| !v.is_finite()) {
            return None;
        }
        if z.is_empty() {
            for (g, r) in groups.iter().enumerate() {
                out[(g, col)] = u[r.clone()].iter().sum::<f64>() / r.len() as f64;
            }
            col += 1;
        } else {
            for zc in z {
                for (g, r) in groups.iter().enumerate() {
                    let s: f64 = r.clone().map(|i| zc[i] * u[i]).sum();
                    out[(g, col)] = s / r.len() as f64;
                }
                col += 1;
            }
        }
    }
    Some(out)
}

/// Returns `(g_N, per-firm moments)` for the stacked specs at `theta`.
pub fn firm_averaged_moments(
    specs: &[MomentSpec],
    p: &CenteredPanel,
    theta: &ParamVector,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if p.n_firms() == 0 || p.data.firm_groups().iter().any(|g| g.is_empty()) {
        return Err(Error::Empty(
            "moment evaluation needs non-empty firm groups".into(),
        ));
    }
    let instruments: Vec<_> = specs.iter().map(|s| (s.instruments)(p)).collect();
    let f = stacked_firm_moments(p, specs, &instruments, theta)
        .ok_or_else(|| Error::Numerical("non-finite or misshaped residuals".into()))?;
    Ok((column_means(&f), f))
}

/// [`MomentModel`] built from closures over a panel; the free parameters
/// are written into a base [`ParamVector`] before every evaluation.
pub struct SpecModel<'a> {
    panel: &'a CenteredPanel,
    specs: Vec<MomentSpec>,
    instruments: Vec<Vec<Vec<f64>>>,
    base: ParamVector,
    free: Vec<ParamId>,
}

impl<'a> SpecModel<'a> {
    pub fn new(
        panel: &'a CenteredPanel,
        specs: Vec<MomentSpec>,
        base: ParamVector,
        free: Vec<ParamId>,
    ) -> Self {
        let instruments = specs.iter().map(|s| (s.instruments)(panel)).collect();
        SpecModel {
            panel,
            specs,
            instruments,
            base,
            free,
        }
    }

    pub fn theta(&self, x: &[f64]) -> ParamVector {
        self.base.with_values(&self.free, x)
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (s, z) in self.specs.iter().zip(&self.instruments) {
            if z.is_empty() {
                out.push(s.label.clone());
            } else {
                out.extend((0..z.len()).map(|i| format!("{}[{i}]", s.label)));
            }
        }
        out
    }
}

impl MomentModel for SpecModel<'_> {
    fn n_moments(&self) -> usize {
        self.instruments.iter().map(|z| z.len().max(1)).sum()
    }

    fn n_firms(&self) -> usize {
        self.panel.n_firms()
    }

    fn blocks(&self) -> Vec<Block> {
        self.specs
            .iter()
            .zip(&self.instruments)
            .flat_map(|(s, z)| std::iter::repeat_n(s.block, z.len().max(1)))
            .collect()
    }

    fn firm_moments(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        stacked_firm_moments(self.panel, &self.specs, &self.instruments, &self.theta(x))
    }
}

/// `(1/N) sum_j g_j g_j'` over the per-firm moment rows.
pub fn moment_covariance(f: &DMatrix<f64>) -> DMatrix<f64> {
    let n = f.nrows().max(1) as f64;
    symmetrize(&(f.transpose() * f / n))
}

/// Inverts `sigma`, adding a ridge of `1e-10 * trace / dim` when it is
/// numerically singular. The flag reports whether the ridge was needed.
pub fn regularized_inverse(sigma: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let dim = sigma.nrows();
    let (lo, hi) = crate::linalg::eig_range(sigma);
    if lo > hi * 1e-12 && lo > 0.0 {
        if let Some(inv) = spd_inverse(sigma) {
            return (inv, false);
        }
    }
    let ridge = 1e-10 * sigma.trace().abs().max(f64::MIN_POSITIVE) / dim.max(1) as f64;
    let reg = sigma + DMatrix::identity(dim, dim) * ridge;
    let inv = spd_inverse(&reg).unwrap_or_else(|| pinv(&reg));
    (inv, true)
}

/// Block-diagonal first-step weight: identity within each block scaled by
/// the inverse average variance of that block's per-firm moments.
pub fn first_step_weight(f: &DMatrix<f64>, blocks: &[Block]) -> DMatrix<f64> {
    let q = blocks.len();
    let n = f.nrows().max(1) as f64;
    let var: Vec<f64> = (0..q)
        .map(|j| {
            let c = f.column(j);
            let m = c.iter().sum::<f64>() / n;
            c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
        })
        .collect();
    let mut w = DMatrix::<f64>::zeros(q, q);
    for j in 0..q {
        let members: Vec<usize> = (0..q).filter(|&i| blocks[i] == blocks[j]).collect();
        let avg = members.iter().map(|&i| var[i]).sum::<f64>() / members.len() as f64;
        w[(j, j)] = if avg > 0.0 && avg.is_finite() {
            1.0 / avg
        } else {
            1.0
        };
    }
    w
}

/// Clustered sandwich `(G'WG)^-1 G'W Sigma W G (G'WG)^-1 / N`. The flag is
/// set when `G'WG` had to be pseudo-inverted.
pub fn sandwich(
    g: &DMatrix<f64>,
    w: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    n_firms: usize,
) -> (DMatrix<f64>, bool) {
    let gtw = g.transpose() * w;
    let bread = &gtw * g;
    let (binv, deficient) = match spd_inverse(&bread) {
        Some(b) if crate::linalg::rank(&bread) == bread.nrows() => (b, false),
        _ => (pinv(&bread), true),
    };
    let meat = &gtw * sigma * gtw.transpose();
    let v = &binv * meat * binv.transpose() / n_firms as f64;
    (symmetrize(&v), deficient)
}

#[derive(Debug, Clone)]
pub struct GmmOptions {
    pub optim: OptimOptions,
    /// Relative step of the numerical Jacobian.
    pub jacobian_step: f64,
    /// Run a simplex polish after the quasi-Newton stage when the objective
    /// is not already at zero.
    pub polish: bool,
    /// Skip the second step (keep the first-step weight).
    pub one_step: bool,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            optim: OptimOptions::default(),
            jacobian_step: 1e-6,
            polish: true,
            one_step: false,
        }
    }
}

/// Outcome of a two-step fit on a [`MomentModel`].
#[derive(Debug, Clone)]
pub struct TwoStepFit {
    pub x: Vec<f64>,
    pub vcov: DMatrix<f64>,
    pub weight: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub jacobian: DMatrix<f64>,
    pub g: DVector<f64>,
    pub j_stat: f64,
    pub df: usize,
    pub objective_value: f64,
    pub converged: bool,
    pub sigma_ridged: bool,
    pub rank_deficient: bool,
}

/// Minimizes `g(x)' W g(x)` for a fixed weight.
pub fn minimize_weighted(
    model: &dyn MomentModel,
    w: &DMatrix<f64>,
    x0: &[f64],
    opts: &GmmOptions,
) -> (Vec<f64>, f64, bool) {
    let l = match symmetrize(w).cholesky() {
        Some(c) => c.l(),
        None => DMatrix::identity(w.nrows(), w.ncols()),
    };
    let lt = l.transpose();
    let resid = |x: &[f64]| model.mean_moments(x).map(|g| &lt * g);
    let jac = |x: &[f64]| {
        numerical_jacobian(|y| model.mean_moments(y), x, opts.jacobian_step).map(|j| &lt * j)
    };
    let lm = levenberg_marquardt(resid, jac, x0, &opts.optim);
    let (mut x, mut f, mut ok) = (lm.x, lm.f, lm.converged);
    if opts.polish && f > 1e-20 && f.is_finite() {
        let obj = |y: &[f64]| {
            model
                .mean_moments(y)
                .map_or(f64::INFINITY, |g| (&lt * g).norm_squared())
        };
        let nm = nelder_mead(obj, &x, 1e-4, &opts.optim);
        if nm.f < f {
            x = nm.x;
            f = nm.f;
        }
        ok = ok || nm.converged;
    }
    (x, f, ok && f.is_finite())
}

/// Two-step GMM: first-step block-scaled weight, then the inverse of the
/// firm-clustered moment covariance. Never panics on optimizer failure;
/// `converged` is false instead.
pub fn two_step(model: &dyn MomentModel, x0: &[f64], opts: &GmmOptions) -> Result<TwoStepFit> {
    let q = model.n_moments();
    let p = x0.len();
    if q < p {
        return Err(Error::InvalidArgument(format!(
            "{q} moments cannot identify {p} parameters"
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite starting values".into()));
    }
    let f0 = model
        .firm_moments(x0)
        .ok_or_else(|| Error::Numerical("moments not finite at starting values".into()))?;
    let w1 = first_step_weight(&f0, &model.blocks());
    let (x1, _, ok1) = minimize_weighted(model, &w1, x0, opts);

    let (x, w, ok, ridged) = if opts.one_step {
        (x1, w1, ok1, false)
    } else {
        let f1 = model
            .firm_moments(&x1)
            .ok_or_else(|| Error::Numerical("moments not finite after first step".into()))?;
        let (w2, ridged) = regularized_inverse(&moment_covariance(&f1));
        if ridged {
            warn!("moment covariance near singular; ridge added");
        }
        let (x2, _, ok2) = minimize_weighted(model, &w2, &x1, opts);
        (x2, w2, ok1 && ok2, ridged)
    };
    evaluate_fit(model, x, w, ok, ridged, opts.jacobian_step)
}

/// Inference at a given estimate `x` computed with weight `w`: clustered
/// sandwich, J-statistic and Jacobian.
pub fn evaluate_fit(
    model: &dyn MomentModel,
    x: Vec<f64>,
    w: DMatrix<f64>,
    converged: bool,
    sigma_ridged: bool,
    jacobian_step: f64,
) -> Result<TwoStepFit> {
    let q = model.n_moments();
    let n = model.n_firms();
    let fm = model
        .firm_moments(&x)
        .ok_or_else(|| Error::Numerical("moments not finite at estimate".into()))?;
    let g = column_means(&fm);
    let sigma = moment_covariance(&fm);
    let jac = numerical_jacobian(|y| model.mean_moments(y), &x, jacobian_step)
        .ok_or_else(|| Error::Numerical("non-finite Jacobian at estimate".into()))?;
    let (vcov, deficient) = sandwich(&jac, &w, &sigma, n);
    let objective_value = (g.transpose() * &w * &g)[(0, 0)];
    let p = x.len();
    Ok(TwoStepFit {
        x,
        vcov,
        weight: w,
        sigma,
        jacobian: jac,
        j_stat: (n as f64 * objective_value).max(0.0),
        df: q - p,
        objective_value,
        converged,
        sigma_ridged,
        rank_deficient: deficient,
        g,
    })
}

/// Fitted GMM model expressed on the structural parameter vector.
#[derive(Debug, Clone)]
pub struct GmmResult {
    pub theta_hat: ParamVector,
    /// Parameters estimated, in the row/column order of `vcov`.
    pub free: Vec<ParamId>,
    pub vcov: DMatrix<f64>,
    pub j_stat: f64,
    pub df: usize,
    pub converged: bool,
    pub n_firms: usize,
    pub n_obs: usize,
    pub objective_value: f64,
    pub weight: DMatrix<f64>,
    pub sigma_ridged: bool,
    pub rank_deficient: bool,
}

impl GmmResult {
    pub fn from_fit(
        fit: TwoStepFit,
        base: &ParamVector,
        free: Vec<ParamId>,
        n_firms: usize,
        n_obs: usize,
    ) -> Self {
        GmmResult {
            theta_hat: base.with_values(&free, &fit.x),
            n_firms,
            free,
            vcov: fit.vcov,
            j_stat: fit.j_stat,
            df: fit.df,
            converged: fit.converged,
            n_obs,
            objective_value: fit.objective_value,
            weight: fit.weight,
            sigma_ridged: fit.sigma_ridged,
            rank_deficient: fit.rank_deficient,
        }
    }

    /// Standard error of a free parameter, `None` if it was held fixed.
    pub fn se(&self, id: ParamId) -> Option<f64> {
        let i = self.free.iter().position(|&f| f == id)?;
        Some(self.vcov[(i, i)].max(0.0).sqrt())
    }
}

/// Two-step GMM over the `free` subset of `theta0` for closure-based specs.
pub fn two_step_estimate(
    specs: &[MomentSpec],
    p: &CenteredPanel,
    theta0: &ParamVector,
    free: &[ParamId],
) -> Result<GmmResult> {
    two_step_estimate_with(specs, p, theta0, free, &GmmOptions::default())
}

pub fn two_step_estimate_with(
    specs: &[MomentSpec],
    p: &CenteredPanel,
    theta0: &ParamVector,
    free: &[ParamId],
    opts: &GmmOptions,
) -> Result<GmmResult> {
    let model = SpecModel::new(p, specs.to_vec(), theta0.clone(), free.to_vec());
    let x0 = theta0.extract(free);
    let fit = two_step(&model, &x0, opts)?;
    Ok(GmmResult::from_fit(
        fit,
        theta0,
        free.to_vec(),
        p.n_firms(),
        p.n_obs(),
    ))
}

/// Firm-clustered sandwich covariance at `theta_hat` for weight `w`.
pub fn clustered_sandwich(
    specs: &[MomentSpec],
    p: &CenteredPanel,
    theta_hat: &ParamVector,
    free: &[ParamId],
    w: &DMatrix<f64>,
    jacobian_step: f64,
) -> Result<DMatrix<f64>> {
    let model = SpecModel::new(p, specs.to_vec(), theta_hat.clone(), free.to_vec());
    let x = theta_hat.extract(free);
    let fm = model
        .firm_moments(&x)
        .ok_or_else(|| Error::Numerical("non-finite moments".into()))?;
    let jac = numerical_jacobian(|y| model.mean_moments(y), &x, jacobian_step)
        .ok_or_else(|| Error::Numerical("non-finite Jacobian entries".into()))?;
    Ok(sandwich(&jac, w, &moment_covariance(&fm), p.n_firms()).0)
}

/// Values of `f` at the estimate and their delta-method standard errors
/// `sqrt(diag(J V J'))`.
pub fn delta_method<F>(f: F, result: &GmmResult) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&ParamVector) -> Vec<f64>,
{
    let (values, v) = delta_method_cov(f, result)?;
    let ses = (0..values.len())
        .map(|i| v[(i, i)].max(0.0).sqrt())
        .collect();
    Ok((values, ses))
}

/// Values of `f` at the estimate and their delta-method covariance `J V J'`.
pub fn delta_method_cov<F>(f: F, result: &GmmResult) -> Result<(Vec<f64>, DMatrix<f64>)>
where
    F: Fn(&ParamVector) -> Vec<f64>,
{
    let x = result.theta_hat.extract(&result.free);
    let eval = |y: &[f64]| {
        let v = f(&result.theta_hat.with_values(&result.free, y));
        Some(DVector::from_vec(v))
    };
    let values = f(&result.theta_hat);
    let jac = numerical_jacobian(eval, &x, 1e-6)
        .ok_or_else(|| Error::Numerical("non-finite delta-method gradient".into()))?;
    let v = symmetrize(&(&jac * &result.vcov * jac.transpose()));
    Ok((values, v))
}
