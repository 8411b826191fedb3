//! The three-block estimator: flexible-input elasticities and the demand
//! system from proxy-elimination (A) and covariance-ratio (B) moments, then
//! capital and labor elasticities from a homothetic CES index (C).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::polynomial_columns;
use crate::error::{Error, Result};
use crate::gmm::{
    column_means, evaluate_fit, first_step_weight, moment_covariance, regularized_inverse,
    two_step, Block, GmmOptions, GmmResult, MomentModel, MomentSpec,
};
use crate::linalg::{lstsq, plugin_cov, rank, spd_inverse};
use crate::optim::numerical_jacobian;
use crate::panel::{CenteredPanel, ColumnMeans, Panel};
use crate::par::{map_slice, Execution};
use crate::params::{ParamId, ParamVector};
use crate::residuals::Residuals;

// Column layout of the per-observation data vector used by the fast
// moment system: y, m, e, w, k, l, then the nuisance basis.
const Y: usize = 0;
const M: usize = 1;
const E: usize = 2;
const W: usize = 3;
const K: usize = 4;
const L: usize = 5;
const NB: usize = 6;

/// Number of entries of theta_1 before the basis coefficients.
const CORE: usize = 12;

/// Closed-form productivity loadings from residual covariances:
/// `gamma = Cov(m,e)/Cov(y,e)`, `delta = Cov(m,e)/Cov(y,m)`,
/// `zeta = Cov(e,w)/Cov(y,e)`.
pub fn scale_ratios(res: &Residuals) -> Result<(f64, f64, f64)> {
    let me = plugin_cov(&res.m_tilde, &res.e_tilde);
    let ye = plugin_cov(&res.y_tilde, &res.e_tilde);
    let ym = plugin_cov(&res.y_tilde, &res.m_tilde);
    let ew = plugin_cov(&res.e_tilde, &res.w_tilde);
    ratios_from(me, ye, ym, ew)
}

fn ratios_from(me: f64, ye: f64, ym: f64, ew: f64) -> Result<(f64, f64, f64)> {
    if ye.abs() < 1e-12 || ym.abs() < 1e-12 {
        return Err(Error::Degenerate(
            "output residual has (near) zero covariance with the input residuals".into(),
        ));
    }
    Ok((me / ye, me / ym, ew / ye))
}

/// Block A+B moments as a quadratic-form system over per-firm second
/// moments of the data vector `(y, m, e, w, k, l, basis)`.
///
/// The covariance-ratio conditions are formed from residuals projected off
/// `(k, l, basis)`. Where the Block A conditions hold (in particular at the
/// just-identified solution) these coincide with the unprojected
/// conditions; the projection makes them exactly invariant to the
/// location-shift reparameterization everywhere.
pub struct AbSystem {
    n_firms: usize,
    d: usize,
    p: usize,
    n_nl: usize,
    firm_s: Vec<f64>,
    firm_s_perp: Vec<f64>,
    mean_s: Vec<f64>,
    mean_s_perp: Vec<f64>,
    /// Pooled projection coefficients of every data column on
    /// `(k, l, basis)`, rows indexed like the exogenous columns.
    proj: DMatrix<f64>,
    inst: [Vec<usize>; 3],
}

impl AbSystem {
    pub fn new(cp: &CenteredPanel, curvature: CurvatureInstrument) -> Result<Self> {
        let d = cp.basis_dim();
        let nl = match curvature {
            CurvatureInstrument::Off => Vec::new(),
            CurvatureInstrument::Monomials(deg) => nonlinear_kl_columns(cp, deg),
            CurvatureInstrument::Fitted(deg) => vec![fitted_curvature_instrument(cp, deg)?],
        };
        let n_nl = nl.len();
        let p = NB + d + n_nl;
        let x = &cp.data;
        let mut cols: Vec<&[f64]> = vec![&x.y, &x.m, &x.e, &x.w, &x.k, &x.l];
        cols.extend(cp.basis.iter().map(Vec::as_slice));
        cols.extend(nl.iter().map(Vec::as_slice));
        let groups = x.firm_groups();
        if groups.is_empty() {
            return Err(Error::Empty("panel has no firms".into()));
        }
        let n_firms = groups.len();
        let mut firm_s = vec![0.0; n_firms * p * p];
        for (g, r) in groups.iter().enumerate() {
            let s = &mut firm_s[g * p * p..(g + 1) * p * p];
            for i in r.clone() {
                for a in 0..p {
                    let va = cols[a][i];
                    for b in a..p {
                        s[a * p + b] += va * cols[b][i];
                    }
                }
            }
            let t = r.len() as f64;
            for a in 0..p {
                for b in a..p {
                    s[a * p + b] /= t;
                    s[b * p + a] = s[a * p + b];
                }
            }
        }
        let mut mean_s = vec![0.0; p * p];
        for g in 0..n_firms {
            for (acc, v) in mean_s.iter_mut().zip(&firm_s[g * p * p..(g + 1) * p * p]) {
                *acc += v;
            }
        }
        mean_s.iter_mut().for_each(|v| *v /= n_firms as f64);

        // Projection off the exogenous columns (k, l, basis), fitted on the
        // firm-averaged second moments.
        let exo: Vec<usize> = (K..NB + d).collect();
        let s_mat = DMatrix::from_row_slice(p, p, &mean_s);
        let s_cc = DMatrix::from_fn(exo.len(), exo.len(), |i, j| s_mat[(exo[i], exo[j])]);
        let s_cx = DMatrix::from_fn(exo.len(), p, |i, j| s_mat[(exo[i], j)]);
        let s_cc_inv = spd_inverse(&s_cc)
            .ok_or_else(|| Error::Degenerate("capital, labor and controls are collinear".into()))?;
        let pi: DMatrix<f64> = &s_cc_inv * s_cx;
        // x_perp = Mt x with Mt = I - Pi' E'
        let mut mt = DMatrix::<f64>::identity(p, p);
        for (ci, &c) in exo.iter().enumerate() {
            for r in 0..p {
                mt[(r, c)] -= pi[(ci, r)];
            }
        }
        let m = mt.transpose();
        let perp = |s: &[f64]| -> Vec<f64> {
            let sm = DMatrix::from_row_slice(p, p, s);
            let out = &mt * sm * &m;
            let mut v = vec![0.0; p * p];
            for a in 0..p {
                for b in 0..p {
                    v[a * p + b] = out[(a, b)];
                }
            }
            v
        };
        let mut firm_s_perp = vec![0.0; n_firms * p * p];
        for g in 0..n_firms {
            let v = perp(&firm_s[g * p * p..(g + 1) * p * p]);
            firm_s_perp[g * p * p..(g + 1) * p * p].copy_from_slice(&v);
        }
        let mean_s_perp = perp(&mean_s);

        let base: Vec<usize> = [K, L].into_iter().chain(NB..p).collect();
        let with = |extra: &[usize]| -> Vec<usize> {
            base.iter().copied().chain(extra.iter().copied()).collect()
        };
        Ok(AbSystem {
            n_firms,
            d,
            p,
            n_nl,
            firm_s,
            firm_s_perp,
            mean_s,
            mean_s_perp,
            proj: pi,
            inst: [with(&[W]), with(&[E]), with(&[E, W])],
        })
    }

    pub fn basis_dim(&self) -> usize {
        self.d
    }

    pub fn n_params(&self) -> usize {
        CORE + 3 * self.d
    }

    /// The unique theta_1 with `gamma_omega = gamma` solving the
    /// linear-instrument conditions (the plain proxy-elimination moments
    /// and the covariance-ratio moments). Those conditions leave exactly
    /// this one direction free; the nonlinear `(k, l)` instruments are what
    /// pin it down.
    pub fn ridge_point(&self, gamma: f64) -> Option<Vec<f64>> {
        let (p, d) = (self.p, self.d);
        let sp = |a: usize, b: usize| self.mean_s_perp[a * p + b];
        if gamma.abs() < 1e-12 || sp(M, W).abs() < 1e-14 || sp(M, E).abs() < 1e-14 {
            return None;
        }
        let delta = gamma * sp(E, W) / sp(M, W);
        let zeta = gamma * sp(W, E) / sp(M, E);
        if delta.abs() < 1e-12 {
            return None;
        }
        let c = nalgebra::Matrix3::from_fn(|i, j| sp([M, E, W][i], [M, E, W][j]));
        let target = nalgebra::Vector3::new(
            sp(Y, M) - sp(M, E) / delta,
            sp(Y, E) - sp(M, E) / gamma,
            sp(Y, W) - sp(M, W) / gamma,
        );
        let beta = c.lu().solve(&target)?;
        let n_exo = 2 + d;
        let pi_y: Vec<f64> = (0..n_exo)
            .map(|r| {
                self.proj[(r, Y)]
                    - beta[0] * self.proj[(r, M)]
                    - beta[1] * self.proj[(r, E)]
                    - beta[2] * self.proj[(r, W)]
            })
            .collect();
        let slope = |col: usize, load: f64, r: usize| self.proj[(r, col)] - load * pi_y[r];
        let mut th = vec![
            beta[0],
            beta[1],
            beta[2],
            slope(M, gamma, 0),
            slope(M, gamma, 1),
            slope(E, delta, 0),
            slope(E, delta, 1),
            slope(W, zeta, 0),
            slope(W, zeta, 1),
            gamma,
            delta,
            zeta,
        ];
        for (col, load) in [(M, gamma), (E, delta), (W, zeta)] {
            th.extend((2..n_exo).map(|r| slope(col, load, r)));
        }
        th.iter().all(|v| v.is_finite()).then_some(th)
    }

    /// Number of nonlinear `(k, l)` instrument columns.
    pub fn n_nonlinear(&self) -> usize {
        self.n_nl
    }

    /// Residual coefficient vectors `(a_m, a_e, a_w, a_y)` on the data vector.
    fn coefs(&self, th: &[f64]) -> [Vec<f64>; 4] {
        let (p, d) = (self.p, self.d);
        let mut am = vec![0.0; p];
        let mut ae = vec![0.0; p];
        let mut aw = vec![0.0; p];
        let mut ay = vec![0.0; p];
        am[M] = 1.0;
        am[K] = -th[3];
        am[L] = -th[4];
        ae[E] = 1.0;
        ae[K] = -th[5];
        ae[L] = -th[6];
        aw[W] = 1.0;
        aw[K] = -th[7];
        aw[L] = -th[8];
        for i in 0..d {
            am[NB + i] = -th[CORE + i];
            ae[NB + i] = -th[CORE + d + i];
            aw[NB + i] = -th[CORE + 2 * d + i];
        }
        ay[Y] = 1.0;
        ay[M] = -th[0];
        ay[E] = -th[1];
        ay[W] = -th[2];
        [am, ae, aw, ay]
    }

    fn moments_from(&self, s: &[f64], sp: &[f64], th: &[f64], out: &mut [f64]) {
        let p = self.p;
        let [am, ae, aw, ay] = self.coefs(th);
        let (g, dl, z) = (th[9], th[10], th[11]);
        // Proxy-elimination errors divided by gamma_omega. Same zero set as
        // the unscaled errors, but shrinking all loadings toward zero no
        // longer shrinks the moments.
        let u1: Vec<f64> = (0..p).map(|i| dl / g * am[i] - ae[i]).collect();
        let u2: Vec<f64> = (0..p).map(|i| z / g * am[i] - aw[i]).collect();
        let u3: Vec<f64> = (0..p).map(|i| ay[i] - am[i] / g).collect();
        let row_dot = |mat: &[f64], r: usize, a: &[f64]| -> f64 {
            mat[r * p..(r + 1) * p]
                .iter()
                .zip(a)
                .map(|(x, y)| x * y)
                .sum()
        };
        let mut q = 0;
        for (u, inst) in [&u1, &u2, &u3].into_iter().zip(&self.inst) {
            for &c in inst {
                out[q] = row_dot(s, c, u);
                q += 1;
            }
        }
        let quad = |a: &[f64], b: &[f64]| -> f64 { (0..p).map(|r| a[r] * row_dot(sp, r, b)).sum() };
        let r1: Vec<f64> = (0..p).map(|i| ae[i] - dl * ay[i]).collect();
        let r3: Vec<f64> = (0..p).map(|i| aw[i] - z * ay[i]).collect();
        out[q] = quad(&am, &r1);
        out[q + 1] = quad(&am, &r3);
    }

    /// Firm-weighted covariances `(Cov(m,e), Cov(y,e), Cov(y,m), Cov(e,w))`
    /// of the residuals at `th`.
    fn residual_covs(&self, th: &[f64]) -> (f64, f64, f64, f64) {
        let p = self.p;
        let [am, ae, aw, ay] = self.coefs(th);
        let s = &self.mean_s;
        let quad = |a: &[f64], b: &[f64]| -> f64 {
            (0..p)
                .map(|r| a[r] * (0..p).map(|c| s[r * p + c] * b[c]).sum::<f64>())
                .sum()
        };
        (
            quad(&am, &ae),
            quad(&ay, &ae),
            quad(&ay, &am),
            quad(&ae, &aw),
        )
    }
}

impl MomentModel for AbSystem {
    fn n_moments(&self) -> usize {
        self.inst.iter().map(Vec::len).sum::<usize>() + 2
    }

    fn n_firms(&self) -> usize {
        self.n_firms
    }

    fn blocks(&self) -> Vec<Block> {
        let na: usize = self.inst.iter().map(Vec::len).sum();
        let mut b = vec![Block::A; na];
        b.extend([Block::B, Block::B]);
        b
    }

    fn firm_moments(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let q = self.n_moments();
        let pp = self.p * self.p;
        let mut out = DMatrix::<f64>::zeros(self.n_firms, q);
        let mut row = vec![0.0; q];
        for g in 0..self.n_firms {
            self.moments_from(
                &self.firm_s[g * pp..(g + 1) * pp],
                &self.firm_s_perp[g * pp..(g + 1) * pp],
                x,
                &mut row,
            );
            for (j, v) in row.iter().enumerate() {
                out[(g, j)] = *v;
            }
        }
        out.iter().all(|v| v.is_finite()).then_some(out)
    }

    fn mean_moments(&self, x: &[f64]) -> Option<DVector<f64>> {
        let mut row = vec![0.0; self.n_moments()];
        self.moments_from(&self.mean_s, &self.mean_s_perp, x, &mut row);
        row.iter()
            .all(|v| v.is_finite())
            .then(|| DVector::from_vec(row))
    }
}

/// Centered `(k, l)` monomials of total degree 2 through `degree`.
pub fn nonlinear_kl_columns(cp: &CenteredPanel, degree: usize) -> Vec<Vec<f64>> {
    if degree < 2 {
        return Vec::new();
    }
    let mut cols = polynomial_columns(&[&cp.data.k, &cp.data.l], degree);
    cols.drain(..2);
    for c in &mut cols {
        let m = crate::linalg::mean(c);
        c.iter_mut().for_each(|v| *v -= m);
    }
    cols
}

/// Fitted values of materials on the `(k, l)` monomials of degree 1
/// through `degree` and the control basis, centered. Under the model the
/// part of this beyond linear `(k, l)` is proportional to the curvature of
/// expected productivity given `(k, l)`.
pub fn fitted_curvature_instrument(cp: &CenteredPanel, degree: usize) -> Result<Vec<f64>> {
    let mut cols = polynomial_columns(&[&cp.data.k, &cp.data.l], degree);
    cols.extend(cp.basis.iter().cloned());
    let x = crate::linalg::design(&cols);
    let (b, _) = lstsq(&x, &DVector::from_column_slice(&cp.data.m))?;
    let mut fit: Vec<f64> = (&x * b).iter().copied().collect();
    let mu = crate::linalg::mean(&fit);
    fit.iter_mut().for_each(|v| *v -= mu);
    Ok(fit)
}

/// Closure-based Block A specs: the three proxy-elimination errors with
/// their asymmetric instrument sets. Uses the `beta_k = beta_l = 0`
/// normalization.
pub fn block_a_moments(p: &CenteredPanel, _theta: &ParamVector) -> Vec<MomentSpec> {
    let d = p.basis_dim();
    let inst = move |extra: &'static [&'static str]| {
        move |cp: &CenteredPanel| -> Vec<Vec<f64>> {
            let mut z = vec![cp.data.k.clone(), cp.data.l.clone()];
            z.extend(cp.basis.iter().cloned());
            for name in extra {
                z.push(match *name {
                    "e" => cp.data.e.clone(),
                    _ => cp.data.w.clone(),
                });
            }
            debug_assert_eq!(z.len(), 2 + d + extra.len());
            z
        }
    };
    let res = |cp: &CenteredPanel, th: &ParamVector| {
        crate::residuals::residuals(cp, th, true).expect("basis coefficient length")
    };
    vec![
        MomentSpec::new(
            Block::A,
            "u1",
            move |cp, th| {
                let r = res(cp, th);
                r.m_tilde
                    .iter()
                    .zip(&r.e_tilde)
                    .map(|(m, e)| th.delta_omega * m - th.gamma_omega * e)
                    .collect()
            },
            inst(&["w"]),
        ),
        MomentSpec::new(
            Block::A,
            "u2",
            move |cp, th| {
                let r = res(cp, th);
                r.m_tilde
                    .iter()
                    .zip(&r.w_tilde)
                    .map(|(m, w)| th.zeta_omega * m - th.gamma_omega * w)
                    .collect()
            },
            inst(&["e"]),
        ),
        MomentSpec::new(
            Block::A,
            "u3",
            move |cp, th| {
                let r = res(cp, th);
                r.y_tilde
                    .iter()
                    .zip(&r.m_tilde)
                    .map(|(y, m)| th.gamma_omega * y - m)
                    .collect()
            },
            inst(&["e", "w"]),
        ),
    ]
}

/// Least-squares residuals of `v` on `(k, l, basis)` over centered data.
fn project_exogenous(cp: &CenteredPanel, v: &[f64]) -> Vec<f64> {
    let mut cols = vec![cp.data.k.clone(), cp.data.l.clone()];
    cols.extend(cp.basis.iter().cloned());
    let x = crate::linalg::design(&cols);
    let y = DVector::from_column_slice(v);
    match lstsq(&x, &y) {
        Ok((b, _)) => (y - x * b).iter().copied().collect(),
        Err(_) => v.to_vec(),
    }
}

/// Closure-based Block B specs: the two covariance-ratio conditions
/// `E[m (e - delta y)] = 0` and `E[m (w - zeta y)] = 0` on residuals
/// projected off `(k, l, basis)` (unconditional moments, no instruments).
pub fn block_b_moments(_p: &CenteredPanel, _theta: &ParamVector) -> Vec<MomentSpec> {
    let spec = |label: &'static str, use_w: bool| {
        MomentSpec::new(
            Block::B,
            label,
            move |cp: &CenteredPanel, th: &ParamVector| {
                let r =
                    crate::residuals::residuals(cp, th, true).expect("basis coefficient length");
                let (other, load) = if use_w {
                    (&r.w_tilde, th.zeta_omega)
                } else {
                    (&r.e_tilde, th.delta_omega)
                };
                let diff: Vec<f64> = other
                    .iter()
                    .zip(&r.y_tilde)
                    .map(|(o, y)| o - load * y)
                    .collect();
                let mp = project_exogenous(cp, &r.m_tilde);
                let dp = project_exogenous(cp, &diff);
                mp.iter().zip(&dp).map(|(a, b)| a * b).collect()
            },
            |_: &CenteredPanel| Vec::new(),
        )
    };
    vec![spec("b_me", false), spec("b_mw", true)]
}

/// Extra instruments built from nonlinear functions of `(k, l)`.
///
/// The proxy-elimination and covariance-ratio conditions with linear
/// instruments leave one direction of theta_1 free (the materials loading
/// and the flexible elasticities move together along it). Demand and output
/// shocks are independent of `(k, l)`, so any nonlinear function of
/// `(k, l)` is a valid instrument, and it is informative whenever expected
/// productivity is nonlinear in `(k, l)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureInstrument {
    /// Linear instruments only. The system is rank deficient by one and the
    /// materials loading stays at its starting value.
    Off,
    /// All `(k, l)` monomials of degree 2 through the given degree.
    Monomials(usize),
    /// One instrument: fitted materials from a `(k, l)` polynomial of the
    /// given degree.
    Fitted(usize),
}

impl Default for CurvatureInstrument {
    fn default() -> Self {
        CurvatureInstrument::Fitted(4)
    }
}

/// How the materials loading is chosen along the one-dimensional set of
/// parameters solving the linear-instrument conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbMethod {
    /// Continuously updated GMM objective along that set; the estimate is
    /// the minimizing point. Much less pull towards least squares than the
    /// two-step estimator when the curvature instrument is weak.
    #[default]
    ProfileCue,
    /// Profile with the first-step weight for a starting point, then joint
    /// two-step GMM over all parameters.
    TwoStep,
}

#[derive(Debug, Clone)]
pub struct AbOptions {
    pub curvature: CurvatureInstrument,
    pub method: AbMethod,
    /// Search interval for the materials productivity loading.
    pub gamma_bounds: (f64, f64),
    pub max_profile_iter: usize,
    pub profile_tol: f64,
    pub gmm: GmmOptions,
}

impl Default for AbOptions {
    fn default() -> Self {
        AbOptions {
            curvature: CurvatureInstrument::default(),
            method: AbMethod::default(),
            gamma_bounds: (0.05, 50.0),
            max_profile_iter: 200,
            profile_tol: 1e-8,
            gmm: GmmOptions::default(),
        }
    }
}

/// Result of the Block A+B fit.
#[derive(Debug, Clone)]
pub struct BlockAbFit {
    /// Full parameter vector with `beta_k = beta_l = 0`.
    pub theta1: ParamVector,
    pub gmm: GmmResult,
    /// Closed-form loadings evaluated at the final residuals.
    pub scale_ratios: (f64, f64, f64),
    /// Objective evaluations used by the loading search.
    pub profile_iterations: usize,
    pub profile_converged: bool,
    /// Numerical rank of the moment Jacobian at the estimate.
    pub jacobian_rank: usize,
    /// Per-firm moments at the estimate (rows: firms), kept for stacked
    /// inference with later blocks.
    pub firm_moments: DMatrix<f64>,
    pub jacobian: DMatrix<f64>,
}

fn ols_coefs(y: &[f64], cols: &[Vec<f64>]) -> Result<Vec<f64>> {
    let x = crate::linalg::design(cols);
    let (b, _) = lstsq(&x, &DVector::from_column_slice(y))?;
    Ok(b.iter().copied().collect())
}

/// Starting values: demand slopes and basis coefficients by OLS of each
/// input on `(k, l, basis)`, flexible elasticities by OLS of output on all
/// inputs, loadings at 1.5.
pub fn starting_values(cp: &CenteredPanel) -> Result<ParamVector> {
    let d = cp.basis_dim();
    let x = &cp.data;
    let mut exo = vec![x.k.clone(), x.l.clone()];
    exo.extend(cp.basis.iter().cloned());
    let bm = ols_coefs(&x.m, &exo)?;
    let be = ols_coefs(&x.e, &exo)?;
    let bw = ols_coefs(&x.w, &exo)?;
    let by = ols_coefs(
        &x.y,
        &[
            x.m.clone(),
            x.e.clone(),
            x.w.clone(),
            x.k.clone(),
            x.l.clone(),
        ],
    )?;
    Ok(ParamVector {
        beta_m: by[0],
        beta_e: by[1],
        beta_w: by[2],
        gamma_k: bm[0],
        gamma_l: bm[1],
        delta_k: be[0],
        delta_l: be[1],
        zeta_k: bw[0],
        zeta_l: bw[1],
        gamma_omega: 1.5,
        delta_omega: 1.5,
        zeta_omega: 1.5,
        h_coeffs_m: bm[2..2 + d].to_vec(),
        h_coeffs_e: be[2..2 + d].to_vec(),
        h_coeffs_w: bw[2..2 + d].to_vec(),
        ..ParamVector::default()
    })
}

/// Fails when the input residuals carry no independent demand-shock
/// variation (all three proportional), the case the method cannot handle.
fn check_shock_variation(cp: &CenteredPanel) -> Result<()> {
    let r: Vec<Vec<f64>> = [&cp.data.m, &cp.data.e, &cp.data.w]
        .iter()
        .map(|v| project_exogenous(cp, v))
        .collect();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let va = plugin_cov(&r[a], &r[a]);
        let vb = plugin_cov(&r[b], &r[b]);
        if va <= 0.0 || vb <= 0.0 {
            return Err(Error::Degenerate(
                "an input has no residual variation".into(),
            ));
        }
        let c = plugin_cov(&r[a], &r[b]) / (va * vb).sqrt();
        if 1.0 - c.abs() < 1e-10 {
            return Err(Error::Degenerate(
                "input residuals are perfectly correlated: no independent demand shocks".into(),
            ));
        }
    }
    Ok(())
}

/// Fits Blocks A+B: an iterative profile over the loadings (closed-form
/// covariance ratios given the other parameters) followed by a joint
/// two-step GMM over all of theta_1.
pub fn fit_block_ab(cp: &CenteredPanel) -> Result<BlockAbFit> {
    fit_block_ab_with(cp, &AbOptions::default())
}

pub fn fit_block_ab_with(cp: &CenteredPanel, opts: &AbOptions) -> Result<BlockAbFit> {
    check_shock_variation(cp)?;
    let sys = AbSystem::new(cp, opts.curvature)?;
    let d = sys.basis_dim();
    let ids = ParamVector::theta1_ids(d);
    let start = starting_values(cp)?;

    // Profile over gamma_omega: every other parameter follows in closed
    // form, so a one-dimensional search on the first-step objective gives
    // the starting point for the joint fit.
    let x_start = sys
        .ridge_point(start.gamma_omega)
        .ok_or_else(|| Error::Degenerate("no solution at the starting loading".into()))?;
    let f0 = sys
        .firm_moments(&x_start)
        .ok_or_else(|| Error::Numerical("moments not finite at starting values".into()))?;
    let w1 = first_step_weight(&f0, &sys.blocks());
    let objective = |log_g: f64| -> f64 {
        let Some(x) = sys.ridge_point(log_g.exp()) else {
            return f64::INFINITY;
        };
        match opts.method {
            AbMethod::TwoStep => sys
                .mean_moments(&x)
                .map_or(f64::INFINITY, |g| (g.transpose() * &w1 * &g)[(0, 0)]),
            AbMethod::ProfileCue => sys.firm_moments(&x).map_or(f64::INFINITY, |f| {
                let g = column_means(&f);
                let (wi, _) = regularized_inverse(&moment_covariance(&f));
                (g.transpose() * wi * &g)[(0, 0)]
            }),
        }
    };
    let (log_gamma, evals, profile_converged) = if sys.n_nonlinear() == 0 {
        // Nothing pins the free direction; stay at the starting loading.
        (start.gamma_omega.ln(), 0, false)
    } else {
        profile_search(
            &objective,
            opts.gamma_bounds.0.ln(),
            opts.gamma_bounds.1.ln(),
            opts.max_profile_iter,
            opts.profile_tol,
        )
    };
    let th = sys
        .ridge_point(log_gamma.exp())
        .ok_or_else(|| Error::Numerical("profile search left the feasible region".into()))?;

    let fit = match opts.method {
        AbMethod::TwoStep => two_step(&sys, &th, &opts.gmm)?,
        AbMethod::ProfileCue => {
            let f = sys
                .firm_moments(&th)
                .ok_or_else(|| Error::Numerical("moments not finite at estimate".into()))?;
            let (w, ridged) = regularized_inverse(&moment_covariance(&f));
            evaluate_fit(
                &sys,
                th,
                w,
                profile_converged || sys.n_nonlinear() == 0,
                ridged,
                opts.gmm.jacobian_step,
            )?
        }
    };
    let base = start.clone();
    let theta1 = base.with_values(&ids, &fit.x);
    if theta1.loadings_degenerate() {
        log::warn!("estimated productivity loadings are near zero");
    }
    let (me, ye, ym, ew) = sys.residual_covs(&fit.x);
    let ratios = ratios_from(me, ye, ym, ew)?;
    let jacobian_rank = rank(&fit.jacobian);
    let firm_moments = sys
        .firm_moments(&fit.x)
        .ok_or_else(|| Error::Numerical("moments not finite at estimate".into()))?;
    let jacobian = fit.jacobian.clone();
    let gmm = GmmResult::from_fit(fit, &base, ids, cp.n_firms(), cp.n_obs());
    Ok(BlockAbFit {
        theta1,
        gmm,
        scale_ratios: ratios,
        profile_iterations: evals,
        profile_converged,
        jacobian_rank,
        firm_moments,
        jacobian,
    })
}

/// Grid scan followed by golden-section refinement of a scalar function on
/// `[lo, hi]`. Returns the minimizer, the number of evaluations and whether
/// the bracket shrank below `tol`.
fn profile_search(
    f: &dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    max_iter: usize,
    tol: f64,
) -> (f64, usize, bool) {
    const GRID: usize = 81;
    let xs: Vec<f64> = (0..GRID)
        .map(|i| lo + (hi - lo) * i as f64 / (GRID - 1) as f64)
        .collect();
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let best = fs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map_or(GRID / 2, |(i, _)| i);
    let mut a = xs[best.saturating_sub(1)];
    let mut b = xs[(best + 1).min(GRID - 1)];
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut dd = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(dd));
    let mut evals = GRID + 2;
    let mut converged = false;
    for _ in 0..max_iter {
        if (b - a).abs() < tol {
            converged = true;
            break;
        }
        if fc < fd {
            b = dd;
            dd = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = dd;
            fc = fd;
            dd = a + ratio * (b - a);
            fd = f(dd);
        }
        evals += 1;
    }
    let x = if fc < fd { c } else { dd };
    if fs[best] < fc.min(fd) {
        (xs[best], evals, converged)
    } else {
        (x, evals, converged)
    }
}

/// Default `(rho_v, alpha)` lattice: `rho_v` in -1.0..=1.0 by 0.1 (zero
/// through the Cobb–Douglas limit), `alpha` in 0.05..=0.95 by 0.05.
pub fn default_grid() -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for r in -10..=10 {
        for a in 1..=19 {
            out.push((r as f64 / 10.0, a as f64 / 20.0));
        }
    }
    out
}

/// J-statistic of one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub rho_v: f64,
    pub alpha: f64,
    /// `None` when the point produced no fit.
    pub j_stat: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct BlockCFit {
    /// `(beta_k, beta_l, alpha, rho_1, ..., rho_degree)`; the curvature
    /// loadings are on powers of the index centered at its sample mean.
    pub beta_k: f64,
    pub beta_l: f64,
    pub alpha: f64,
    pub rho_v: f64,
    pub rho: Vec<f64>,
    pub profile_grid: Vec<GridPoint>,
    pub chosen: (f64, f64),
    /// t-statistics of `rho_2` and `rho_3`.
    pub rho_t_stats: (f64, f64),
    pub weak_identification: bool,
    /// Full parameter vector (theta_1 from A+B, theta_2 from C); `vcov`
    /// rows follow `free`: beta_k, beta_l, rho_1..rho_degree.
    pub gmm: GmmResult,
}

type IvFit = (DVector<f64>, DMatrix<f64>, f64, DMatrix<f64>);

struct GridData {
    /// Orthogonalized index powers.
    powers: Vec<Vec<f64>>,
    /// Projection coefficients of each power on `(k, l)`.
    proj_k: Vec<f64>,
    proj_l: Vec<f64>,
}

fn index_powers(cp: &CenteredPanel, alpha: f64, rho_v: f64, degree: usize) -> Result<GridData> {
    let k_raw = cp.raw_k();
    let l_raw = cp.raw_l();
    let v = crate::ces::ces_column(&k_raw, &l_raw, alpha, rho_v);
    let vbar = crate::linalg::mean(&v);
    let n = v.len();
    let x = crate::linalg::design(&[vec![1.0; n], cp.data.k.clone(), cp.data.l.clone()]);
    let mut powers = Vec::with_capacity(degree);
    let mut proj_k = Vec::with_capacity(degree);
    let mut proj_l = Vec::with_capacity(degree);
    for i in 1..=degree {
        let col = DVector::from_iterator(n, v.iter().map(|vv| (vv - vbar).powi(i as i32)));
        let (b, _) = lstsq(&x, &col)?;
        let r = &col - &x * &b;
        // Near the Cobb-Douglas limit the index is almost linear in (k, l)
        // and its orthogonalized powers carry no information.
        if r.norm() < 1e-4 * col.norm() {
            return Err(Error::Degenerate(format!(
                "index power {i} is collinear with (k, l)"
            )));
        }
        powers.push(r.iter().copied().collect());
        proj_k.push(b[1]);
        proj_l.push(b[2]);
    }
    Ok(GridData {
        powers,
        proj_k,
        proj_l,
    })
}

/// Linear GMM pieces for Block C: firm-averaged `z x'` and `z y`.
struct LinearIv {
    /// per-firm rows of z (x) x, flattened q x p
    firm_zx: Vec<DMatrix<f64>>,
    firm_zy: Vec<DVector<f64>>,
    zx: DMatrix<f64>,
    zy: DVector<f64>,
}

fn linear_iv(cp: &CenteredPanel, z: &[Vec<f64>], x: &[Vec<f64>], y: &[f64]) -> LinearIv {
    let groups = cp.data.firm_groups();
    let (q, p) = (z.len(), x.len());
    let mut firm_zx = Vec::with_capacity(groups.len());
    let mut firm_zy = Vec::with_capacity(groups.len());
    let mut zx = DMatrix::<f64>::zeros(q, p);
    let mut zy = DVector::<f64>::zeros(q);
    for r in groups {
        let t = r.len() as f64;
        let a = DMatrix::from_fn(q, p, |i, j| {
            r.clone().map(|o| z[i][o] * x[j][o]).sum::<f64>() / t
        });
        let b = DVector::from_fn(q, |i, _| r.clone().map(|o| z[i][o] * y[o]).sum::<f64>() / t);
        zx += &a;
        zy += &b;
        firm_zx.push(a);
        firm_zy.push(b);
    }
    let n = groups.len() as f64;
    LinearIv {
        firm_zx,
        firm_zy,
        zx: zx / n,
        zy: zy / n,
    }
}

impl LinearIv {
    fn solve(&self, w: &DMatrix<f64>) -> Option<DVector<f64>> {
        let a = self.zx.transpose() * w * &self.zx;
        let b = self.zx.transpose() * w * &self.zy;
        spd_inverse(&a).map(|ai| ai * b)
    }

    fn firm_moments(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let q = self.zy.len();
        DMatrix::from_fn(self.firm_zx.len(), q, |g, i| {
            self.firm_zy[g][i] - (self.firm_zx[g].row(i) * theta)[(0, 0)]
        })
    }

    /// Two-step linear GMM: `(theta, weight, j_stat, firm moments)`.
    fn two_step(&self) -> Option<IvFit> {
        let q = self.zy.len();
        let n = self.firm_zx.len();
        let f0 = DMatrix::from_fn(n, q, |g, i| self.firm_zy[g][i]);
        let w1 = first_step_weight(&f0, &vec![Block::C; q]);
        let t1 = self.solve(&w1)?;
        let (w2, _) = regularized_inverse(&moment_covariance(&self.firm_moments(&t1)));
        let t2 = self.solve(&w2)?;
        let f2 = self.firm_moments(&t2);
        let g = column_means(&f2);
        let j = n as f64 * (g.transpose() * &w2 * &g)[(0, 0)];
        Some((t2, w2, j.max(0.0), f2))
    }
}

/// The nine `(k, l)` monomials of degree 1 to 3 used as Block C instruments.
pub fn block_c_instruments(cp: &CenteredPanel) -> Vec<Vec<f64>> {
    let mut z = polynomial_columns(&[&cp.data.k, &cp.data.l], 3);
    for c in &mut z {
        let m = crate::linalg::mean(c);
        c.iter_mut().for_each(|v| *v -= m);
    }
    z
}

/// Output net of the flexible-input contributions at `theta1` (keeps
/// `beta_k k + beta_l l + omega + eps`).
fn y_tilde(cp: &CenteredPanel, th: &ParamVector) -> Vec<f64> {
    let x = &cp.data;
    (0..x.n_obs())
        .map(|i| x.y[i] - th.beta_m * x.m[i] - th.beta_e * x.e[i] - th.beta_w * x.w[i])
        .collect()
}

/// Fits Block C: for each `(rho_v, alpha)` grid point, two-step linear GMM
/// of the output residual on `(k, l)` and the orthogonalized index powers,
/// instrumented by the degree 1–3 monomials of `(k, l)`. The point with the
/// smallest J is kept (ties go to the lexicographically smallest pair).
pub fn fit_block_c(
    cp: &CenteredPanel,
    ab: &BlockAbFit,
    grid: &[(f64, f64)],
    h_degree: usize,
) -> Result<BlockCFit> {
    fit_block_c_with(cp, ab, grid, h_degree, Execution::Serial)
}

pub fn fit_block_c_with(
    cp: &CenteredPanel,
    ab: &BlockAbFit,
    grid: &[(f64, f64)],
    h_degree: usize,
    exec: Execution,
) -> Result<BlockCFit> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty (rho_v, alpha) grid".into()));
    }
    if !(1..=5).contains(&h_degree) {
        return Err(Error::InvalidArgument(
            "h degree must be between 1 and 5".into(),
        ));
    }
    let z = block_c_instruments(cp);
    let yt = y_tilde(cp, &ab.theta1);
    let eval = |&(rho_v, alpha): &(f64, f64)| -> Option<(GridData, LinearIv, f64)> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return None;
        }
        let gd = index_powers(cp, alpha, rho_v, h_degree).ok()?;
        let mut x = vec![cp.data.k.clone(), cp.data.l.clone()];
        x.extend(gd.powers.iter().cloned());
        let iv = linear_iv(cp, &z, &x, &yt);
        let (_, _, j, _) = iv.two_step()?;
        j.is_finite().then_some((gd, iv, j))
    };
    let results: Vec<Option<f64>> = map_slice(grid, exec, |pt| eval(pt).map(|(_, _, j)| j));
    let profile_grid: Vec<GridPoint> = grid
        .iter()
        .zip(&results)
        .map(|(&(rho_v, alpha), j)| GridPoint {
            rho_v,
            alpha,
            j_stat: *j,
            converged: j.is_some(),
        })
        .collect();
    let best = profile_grid
        .iter()
        .filter(|g| g.converged)
        .min_by(|a, b| {
            a.j_stat
                .unwrap_or(f64::INFINITY)
                .total_cmp(&b.j_stat.unwrap_or(f64::INFINITY))
                .then(a.rho_v.total_cmp(&b.rho_v))
                .then(a.alpha.total_cmp(&b.alpha))
        })
        .copied()
        .ok_or_else(|| Error::Numerical("no grid point produced a Block C fit".into()))?;
    let (gd, iv, _) = eval(&(best.rho_v, best.alpha))
        .ok_or_else(|| Error::Numerical("chosen grid point failed to refit".into()))?;
    let (t2, w2, j, f_c) = iv
        .two_step()
        .ok_or_else(|| Error::Numerical("Block C weight singular".into()))?;

    // Sequential GMM covariance over (theta_1, theta_2) with the A+B
    // solution treated as a first-stage estimate.
    let p1 = ab.gmm.free.len();
    let p2 = t2.len();
    let q1 = ab.firm_moments.ncols();
    let q2 = z.len();
    let n = cp.n_firms();
    let mut g_full = DMatrix::<f64>::zeros(q1 + q2, p1 + p2);
    g_full.view_mut((0, 0), (q1, p1)).copy_from(&ab.jacobian);
    // d g_C / d beta_{m,e,w} = -E[z x_h]
    let x = &cp.data;
    for (col, h) in [&x.m, &x.e, &x.w].into_iter().enumerate() {
        let pos = ab
            .gmm
            .free
            .iter()
            .position(|id| *id == [ParamId::BetaM, ParamId::BetaE, ParamId::BetaW][col]);
        if let Some(pos) = pos {
            let dz = linear_iv(cp, &z, std::slice::from_ref(h), &yt).zx;
            for i in 0..q2 {
                g_full[(q1 + i, pos)] = -dz[(i, 0)];
            }
        }
    }
    for i in 0..q2 {
        for j2 in 0..p2 {
            g_full[(q1 + i, p1 + j2)] = -iv.zx[(i, j2)];
        }
    }
    let mut stacked = DMatrix::<f64>::zeros(n, q1 + q2);
    stacked
        .view_mut((0, 0), (n, q1))
        .copy_from(&ab.firm_moments);
    stacked.view_mut((0, q1), (n, q2)).copy_from(&f_c);
    let sigma = moment_covariance(&stacked);
    let mut sel = DMatrix::<f64>::zeros(p1 + p2, q1 + q2);
    let a1 = ab.jacobian.transpose() * &ab.gmm.weight;
    sel.view_mut((0, 0), (p1, q1)).copy_from(&a1);
    let a2 = g_full.view((q1, p1), (q2, p2)).transpose() * &w2;
    sel.view_mut((p1, q1), (p2, q2)).copy_from(&a2);
    let ag = &sel * &g_full;
    let ag_inv = ag
        .clone()
        .try_inverse()
        .unwrap_or_else(|| crate::linalg::pinv(&ag));
    let v_full = &ag_inv * (&sel * &sigma * sel.transpose()) * ag_inv.transpose() / n as f64;
    let v_orth = v_full.view((p1, p1), (p2, p2)).into_owned();

    // Back to (beta_k, beta_l, rho): beta_k = a_k - sum rho_i b_i^k.
    let mut tmap = DMatrix::<f64>::identity(p2, p2);
    for i in 0..h_degree {
        tmap[(0, 2 + i)] = -gd.proj_k[i];
        tmap[(1, 2 + i)] = -gd.proj_l[i];
    }
    let theta_struct = &tmap * &t2;
    let vcov = crate::linalg::symmetrize(&(&tmap * v_orth * tmap.transpose()));
    let rho: Vec<f64> = (0..h_degree).map(|i| theta_struct[2 + i]).collect();
    let t_of = |i: usize| -> f64 {
        if 2 + i < p2 {
            theta_struct[2 + i] / vcov[(2 + i, 2 + i)].max(0.0).sqrt()
        } else {
            0.0
        }
    };
    let rho_t_stats = (t_of(1), t_of(2));
    let weak = rho_t_stats.0.abs() < 1.96 && rho_t_stats.1.abs() < 1.96;

    let mut theta = ab.theta1.clone();
    theta.beta_k = theta_struct[0];
    theta.beta_l = theta_struct[1];
    theta.alpha = best.alpha;
    theta.rho_v = best.rho_v;
    theta.rho = rho.clone();
    let mut free = vec![ParamId::BetaK, ParamId::BetaL];
    free.extend((0..h_degree).map(ParamId::Rho));
    let gmm = GmmResult {
        theta_hat: theta,
        free,
        vcov,
        j_stat: j,
        df: q2 - p2,
        converged: true,
        n_firms: n,
        n_obs: cp.n_obs(),
        objective_value: j / n as f64,
        weight: w2,
        sigma_ridged: false,
        rank_deficient: false,
    };
    Ok(BlockCFit {
        beta_k: theta_struct[0],
        beta_l: theta_struct[1],
        alpha: best.alpha,
        rho_v: best.rho_v,
        rho,
        profile_grid,
        chosen: (best.rho_v, best.alpha),
        rho_t_stats,
        weak_identification: weak,
        gmm,
    })
}

/// `omega_hat = y - beta' x` on the original (uncentered) data.
pub fn recover_productivity(p: &Panel, theta: &ParamVector) -> Vec<f64> {
    (0..p.n_obs())
        .map(|i| {
            p.y[i]
                - theta.beta_k * p.k[i]
                - theta.beta_l * p.l[i]
                - theta.beta_m * p.m[i]
                - theta.beta_e * p.e[i]
                - theta.beta_w * p.w[i]
        })
        .collect()
}

/// Intercept from the stored column means.
pub fn intercept_from_means(means: &ColumnMeans, theta: &ParamVector) -> f64 {
    means.y
        - theta.beta_k * means.k
        - theta.beta_l * means.l
        - theta.beta_m * means.m
        - theta.beta_e * means.e
        - theta.beta_w * means.w
}

/// `beta_0 = ybar - beta' xbar` on the original data.
pub fn intercept_recovery(p: &Panel, theta: &ParamVector) -> f64 {
    let m = crate::linalg::mean;
    m(&p.y)
        - theta.beta_k * m(&p.k)
        - theta.beta_l * m(&p.l)
        - theta.beta_m * m(&p.m)
        - theta.beta_e * m(&p.e)
        - theta.beta_w * m(&p.w)
}

/// Markup as materials elasticity over the materials revenue share.
pub fn markup(beta_m: f64, s_m: f64) -> Result<f64> {
    if s_m <= 0.0 || !s_m.is_finite() {
        return Err(Error::InvalidArgument(
            "materials share must be positive".into(),
        ));
    }
    Ok(beta_m / s_m)
}

/// Everything produced by one run of the estimator.
#[derive(Debug, Clone)]
pub struct ProposedFit {
    pub ab: BlockAbFit,
    pub c: Option<BlockCFit>,
    pub theta: ParamVector,
    pub omega_hat: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ProposedOptions {
    pub block_c: bool,
    pub h_degree: usize,
    pub grid: Vec<(f64, f64)>,
    pub basis_degree: usize,
    pub ab: AbOptions,
    pub exec: Execution,
}

impl Default for ProposedOptions {
    fn default() -> Self {
        ProposedOptions {
            block_c: false,
            h_degree: 3,
            grid: default_grid(),
            basis_degree: crate::panel::DEFAULT_BASIS_DEGREE,
            ab: AbOptions::default(),
            exec: Execution::Serial,
        }
    }
}

/// Runs A+B (and C when requested) and recovers productivity and the
/// intercept.
pub fn estimate_proposed(p: &Panel, opts: &ProposedOptions) -> Result<ProposedFit> {
    let cp = crate::panel::demean(p)?.with_basis_degree(opts.basis_degree)?;
    let ab = fit_block_ab_with(&cp, &opts.ab)?;
    let c = if opts.block_c {
        Some(fit_block_c_with(
            &cp,
            &ab,
            &opts.grid,
            opts.h_degree,
            opts.exec,
        )?)
    } else {
        None
    };
    let mut theta = match &c {
        Some(c) => c.gmm.theta_hat.clone(),
        None => ab.theta1.clone(),
    };
    theta.beta0 = intercept_from_means(&cp.means, &theta);
    let omega_hat = recover_productivity(p, &theta);
    Ok(ProposedFit {
        ab,
        c,
        theta,
        omega_hat,
    })
}

/// Numerical Jacobian of the A+B mean moments at `theta` (all theta_1).
pub fn ab_jacobian(sys: &AbSystem, theta: &ParamVector, step: f64) -> Option<DMatrix<f64>> {
    let ids = ParamVector::theta1_ids(sys.basis_dim());
    numerical_jacobian(|x| sys.mean_moments(x), &theta.extract(&ids), step)
}

/// A+B moment vector at `theta` on the un-normalized path: the
/// proxy-elimination errors are built with `beta_k k + beta_l l` removed
/// from output. Used to check invariance to the location shift.
pub fn ab_moments_unnormalized(
    cp: &CenteredPanel,
    theta: &ParamVector,
    curvature: CurvatureInstrument,
) -> Result<DVector<f64>> {
    let shifted = ParamVector {
        beta_k: 0.0,
        beta_l: 0.0,
        gamma_k: theta.gamma_k - theta.gamma_omega * theta.beta_k,
        gamma_l: theta.gamma_l - theta.gamma_omega * theta.beta_l,
        delta_k: theta.delta_k - theta.delta_omega * theta.beta_k,
        delta_l: theta.delta_l - theta.delta_omega * theta.beta_l,
        zeta_k: theta.zeta_k - theta.zeta_omega * theta.beta_k,
        zeta_l: theta.zeta_l - theta.zeta_omega * theta.beta_l,
        ..theta.clone()
    };
    let sys = AbSystem::new(cp, curvature)?;
    let ids = ParamVector::theta1_ids(sys.basis_dim());
    sys.mean_moments(&shifted.extract(&ids))
        .ok_or_else(|| Error::Numerical("non-finite moments".into()))
}

/// Standard errors of theta_1 from the A+B fit, keyed by name.
pub fn ab_standard_errors(ab: &BlockAbFit) -> Vec<(String, f64)> {
    ab.gmm
        .free
        .iter()
        .map(|id| (id.name(), ab.gmm.se(*id).unwrap_or(f64::NAN)))
        .collect()
}
