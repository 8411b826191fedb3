//! Proxy-variable and share-regression benchmarks: ACF, ACF with the
//! demand shocks observed, and GNR.
//!
//! All three finish with the same Markov second stage: productivity implied
//! by a candidate coefficient vector is regressed on a cubic in its own lag
//! and the innovation is required to be orthogonal to a set of current and
//! lagged inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::polynomial_columns;
use crate::dgp::TruthRecord;
use crate::error::{Error, Result};
use crate::gmm::{two_step, Block, GmmOptions, MomentModel};
use crate::linalg::{design, lstsq, mean};
use crate::panel::Panel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    Acf,
    AcfMod,
    Gnr,
}

impl BenchMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            BenchMethod::Acf => "acf",
            BenchMethod::AcfMod => "acf-mod",
            BenchMethod::Gnr => "gnr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchFit {
    pub method: BenchMethod,
    /// `(beta_k, beta_l, beta_m, beta_e, beta_w)`.
    pub beta_hat: [f64; 5],
    /// Clustered standard errors of the coefficients estimated in the
    /// second stage (NaN for those taken from the first stage).
    pub se: [f64; 5],
    pub first_stage_r2: f64,
    pub j_stat: f64,
    pub converged: bool,
}

/// Degree of the polynomial in lagged productivity.
const MARKOV_DEGREE: usize = 3;

/// Default degree of the ACF first-stage polynomial.
pub const DEFAULT_FIRST_STAGE_DEGREE: usize = 3;

/// Rows that have a previous-year observation, with the lag's row index.
fn lag_pairs(p: &Panel) -> Result<Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = p
        .lag_index()
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|l| (i, l)))
        .collect();
    if pairs.len() < 10 {
        return Err(Error::InvalidArgument(
            "panel needs at least two consecutive periods per firm for lags".into(),
        ));
    }
    Ok(pairs)
}

/// Fitted values and R^2 of `y` on a constant and all monomials of `vars`
/// up to `degree`.
fn polynomial_fit(y: &[f64], vars: &[&[f64]], degree: usize) -> Result<(Vec<f64>, f64)> {
    let n = y.len();
    let mut cols = vec![vec![1.0; n]];
    cols.extend(polynomial_columns(vars, degree));
    let x = design(&cols);
    let yv = DVector::from_column_slice(y);
    let (b, rank) = lstsq(&x, &yv)?;
    if rank < cols.len() {
        log::debug!("first stage rank {rank} of {}", cols.len());
    }
    if rank * 2 < cols.len() {
        return Err(Error::Degenerate(
            "first-stage regressors are collinear".into(),
        ));
    }
    let fit = &x * b;
    let ybar = mean(y);
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let rss: f64 = y.iter().zip(fit.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 0.0 };
    Ok((fit.iter().copied().collect(), r2))
}

/// Markov second stage: `omega(b) = phi - sum_j b_j x_j`, innovation from a
/// cubic regression of `omega_t` on `omega_{t-1}`, moments
/// `E[xi_t z_t] = 0`.
struct MarkovStage {
    phi: Vec<f64>,
    x: Vec<Vec<f64>>,
    /// Instrument values per lag pair row.
    z: Vec<Vec<f64>>,
    pairs: Vec<(usize, usize)>,
    /// Ranges of `pairs` belonging to each firm.
    firms: Vec<std::ops::Range<usize>>,
}

impl MarkovStage {
    fn new(p: &Panel, phi: Vec<f64>, x: Vec<Vec<f64>>, z: Vec<Vec<f64>>) -> Result<Self> {
        let pairs = lag_pairs(p)?;
        let mut firms = Vec::new();
        let mut start = 0;
        for i in 1..=pairs.len() {
            if i == pairs.len() || p.firm[pairs[i].0] != p.firm[pairs[i - 1].0] {
                firms.push(start..i);
                start = i;
            }
        }
        Ok(MarkovStage {
            phi,
            x,
            z,
            pairs,
            firms,
        })
    }

    fn innovations(&self, b: &[f64]) -> Option<Vec<f64>> {
        let omega: Vec<f64> = (0..self.phi.len())
            .map(|i| {
                self.phi[i]
                    - b.iter()
                        .zip(&self.x)
                        .map(|(bj, xj)| bj * xj[i])
                        .sum::<f64>()
            })
            .collect();
        let n = self.pairs.len();
        let lag: Vec<f64> = self.pairs.iter().map(|&(_, l)| omega[l]).collect();
        let cur = DVector::from_iterator(n, self.pairs.iter().map(|&(i, _)| omega[i]));
        let mut cols = vec![vec![1.0; n]];
        for d in 1..=MARKOV_DEGREE {
            cols.push(lag.iter().map(|v| v.powi(d as i32)).collect());
        }
        let xm = design(&cols);
        let (g, _) = lstsq(&xm, &cur).ok()?;
        let xi = cur - xm * g;
        xi.iter()
            .all(|v| v.is_finite())
            .then(|| xi.iter().copied().collect())
    }
}

impl MomentModel for MarkovStage {
    fn n_moments(&self) -> usize {
        self.z.len()
    }

    fn n_firms(&self) -> usize {
        self.firms.len()
    }

    fn blocks(&self) -> Vec<Block> {
        vec![Block::Bench; self.z.len()]
    }

    fn firm_moments(&self, b: &[f64]) -> Option<DMatrix<f64>> {
        let xi = self.innovations(b)?;
        let q = self.z.len();
        let mut out = DMatrix::<f64>::zeros(self.firms.len(), q);
        for (g, r) in self.firms.iter().enumerate() {
            let t = r.len() as f64;
            for (j, zj) in self.z.iter().enumerate() {
                out[(g, j)] = r.clone().map(|s| zj[self.pairs[s].0] * xi[s]).sum::<f64>() / t;
            }
        }
        Some(out)
    }
}

/// Instrument column `c` evaluated at the lagged row of every observation
/// (rows without a lag keep their own value and are never used).
fn lagged(p: &Panel, c: &[f64]) -> Vec<f64> {
    p.lag_index()
        .iter()
        .enumerate()
        .map(|(i, l)| l.map_or(c[i], |l| c[l]))
        .collect()
}

fn centered(c: &[f64]) -> Vec<f64> {
    let m = mean(c);
    c.iter().map(|v| v - m).collect()
}

/// OLS of `y` on a constant and the inputs, used as the starting point.
fn ols_start(y: &[f64], x: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut cols = vec![vec![1.0; y.len()]];
    cols.extend(x.iter().cloned());
    let (b, _) = lstsq(&design(&cols), &DVector::from_column_slice(y))?;
    Ok(b.iter().skip(1).copied().collect())
}

fn acf_impl(p: &Panel, extra: &[&[f64]], degree: usize, method: BenchMethod) -> Result<BenchFit> {
    if degree == 0 {
        return Err(Error::InvalidArgument(
            "first-stage degree must be positive".into(),
        ));
    }
    let mut vars: Vec<&[f64]> = vec![&p.k, &p.l, &p.m, &p.e, &p.w];
    vars.extend(p.z.iter().map(|c| c.as_slice()));
    // Constant shock columns carry nothing and would only add zero
    // monomials to the first stage.
    vars.extend(extra.iter().copied().filter(|c| {
        let m = mean(c);
        c.iter().any(|v| (v - m).abs() > 0.0)
    }));
    let (phi, r2) = polynomial_fit(&p.y, &vars, degree)?;
    let x = vec![
        p.k.clone(),
        p.l.clone(),
        p.m.clone(),
        p.e.clone(),
        p.w.clone(),
    ];
    let z = vec![
        centered(&p.k),
        centered(&p.l),
        centered(&lagged(p, &p.m)),
        centered(&lagged(p, &p.e)),
        centered(&lagged(p, &p.w)),
    ];
    let stage = MarkovStage::new(p, phi, x.clone(), z)?;
    let start = ols_start(&p.y, &x)?;
    let fit = two_step(&stage, &start, &GmmOptions::default())?;
    let mut beta_hat = [0.0; 5];
    let mut se = [0.0; 5];
    for i in 0..5 {
        beta_hat[i] = fit.x[i];
        se[i] = fit.vcov[(i, i)].max(0.0).sqrt();
    }
    Ok(BenchFit {
        method,
        beta_hat,
        se,
        first_stage_r2: r2,
        j_stat: fit.j_stat,
        converged: fit.converged && beta_hat.iter().all(|v| v.is_finite()),
    })
}

/// ACF: polynomial first stage in all inputs and controls, then the Markov
/// second stage with current `(k, l)` and lagged flexible inputs as
/// instruments.
pub fn fit_acf(p: &Panel, first_stage_degree: usize) -> Result<BenchFit> {
    acf_impl(p, &[], first_stage_degree, BenchMethod::Acf)
}

/// ACF with the simulated demand shocks appended to the first-stage
/// polynomial (simulation only).
pub fn fit_acf_mod(
    p: &Panel,
    truth: Option<&TruthRecord>,
    first_stage_degree: usize,
) -> Result<BenchFit> {
    let truth = truth.ok_or_else(|| {
        Error::InvalidArgument("ACF-Mod needs the simulated demand shocks".into())
    })?;
    if truth.tau.len() != p.n_obs() {
        return Err(Error::DimensionMismatch(format!(
            "truth has {} rows, panel has {}",
            truth.tau.len(),
            p.n_obs()
        )));
    }
    acf_impl(
        p,
        &[&truth.tau, &truth.nu, &truth.eta],
        first_stage_degree,
        BenchMethod::AcfMod,
    )
}

/// Degree of the GNR share regression.
const GNR_SHARE_DEGREE: usize = 2;
/// Simpson intervals for the flexible-input integral.
const GNR_NODES: usize = 16;

/// GNR with common unit prices: for each flexible input the log expenditure
/// share `h - y` is regressed on a quadratic in all inputs, giving the
/// elasticity function up to the mean-share constant. The flexible inputs'
/// contribution to output is the line integral of those elasticities from
/// the sample means, and the remaining `(k, l)` part follows from the Markov
/// second stage with current `(k, l)` as instruments.
pub fn fit_gnr(p: &Panel) -> Result<BenchFit> {
    let n = p.n_obs();
    let inputs: [&[f64]; 5] = [&p.k, &p.l, &p.m, &p.e, &p.w];
    let design_at = |pt: &[[f64; 5]]| -> DMatrix<f64> {
        let cols: Vec<Vec<f64>> = (0..5).map(|j| pt.iter().map(|r| r[j]).collect()).collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let mut all = vec![vec![1.0; pt.len()]];
        all.extend(polynomial_columns(&refs, GNR_SHARE_DEGREE));
        design(&all)
    };
    let points: Vec<[f64; 5]> = (0..n).map(|i| inputs.map(|c| c[i])).collect();
    let x = design_at(&points);
    let mut coefs = Vec::with_capacity(3);
    let mut eps_hat = vec![0.0; n];
    let mut r2_sum = 0.0;
    let mut beta = [f64::NAN; 5];
    for (h, col) in [&p.m, &p.e, &p.w].into_iter().enumerate() {
        let ls: Vec<f64> = (0..n).map(|i| col[i] - p.y[i]).collect();
        if ls.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "nonpositive expenditure share".into(),
            ));
        }
        let lsv = DVector::from_column_slice(&ls);
        let (b, _) = lstsq(&x, &lsv)?;
        let fit = &x * &b;
        let resid: Vec<f64> = (0..n).map(|i| ls[i] - fit[i]).collect();
        // log s = log D - eps; E[exp(-eps)] rescales the elasticity.
        let scale = mean(&resid.iter().map(|r| r.exp()).collect::<Vec<_>>());
        let lbar = mean(&ls);
        let tss: f64 = ls.iter().map(|v| (v - lbar).powi(2)).sum();
        let rss: f64 = resid.iter().map(|r| r * r).sum();
        r2_sum += if tss > 0.0 { 1.0 - rss / tss } else { 0.0 };
        if h == 0 {
            eps_hat = resid.iter().map(|r| -(r - scale.ln())).collect();
        }
        let d: Vec<f64> = fit.iter().map(|f| f.exp() * scale).collect();
        beta[2 + h] = mean(&d);
        coefs.push((b, scale));
    }

    // Line integral of the elasticities from the mean flexible inputs.
    let xbar = inputs.map(mean);
    let weights: Vec<f64> = (0..=GNR_NODES)
        .map(|j| match j {
            0 => 1.0,
            j if j == GNR_NODES => 1.0,
            j if j % 2 == 1 => 4.0,
            _ => 2.0,
        } / (3.0 * GNR_NODES as f64))
        .collect();
    let mut contrib = vec![0.0; n];
    for (j, wj) in weights.iter().enumerate() {
        let s = j as f64 / GNR_NODES as f64;
        let path: Vec<[f64; 5]> = points
            .iter()
            .map(|r| {
                let mut q = *r;
                for c in 2..5 {
                    q[c] = xbar[c] + s * (r[c] - xbar[c]);
                }
                q
            })
            .collect();
        let xs = design_at(&path);
        for (h, (b, scale)) in coefs.iter().enumerate() {
            let f = &xs * b;
            for i in 0..n {
                contrib[i] += wj * f[i].exp() * scale * (points[i][2 + h] - xbar[2 + h]);
            }
        }
    }
    let phi: Vec<f64> = (0..n).map(|i| p.y[i] - eps_hat[i] - contrib[i]).collect();
    let x2 = vec![p.k.clone(), p.l.clone()];
    let z = vec![centered(&p.k), centered(&p.l)];
    let stage = MarkovStage::new(p, phi.clone(), x2.clone(), z)?;
    let start = ols_start(&phi, &x2)?;
    let fit = two_step(&stage, &start, &GmmOptions::default())?;
    beta[0] = fit.x[0];
    beta[1] = fit.x[1];
    let mut se = [f64::NAN; 5];
    se[0] = fit.vcov[(0, 0)].max(0.0).sqrt();
    se[1] = fit.vcov[(1, 1)].max(0.0).sqrt();
    Ok(BenchFit {
        method: BenchMethod::Gnr,
        beta_hat: beta,
        se,
        first_stage_r2: r2_sum / 3.0,
        j_stat: fit.j_stat,
        converged: fit.converged && beta.iter().all(|v| v.is_finite()),
    })
}
