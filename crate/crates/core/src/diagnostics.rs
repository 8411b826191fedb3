//! Identification diagnostics and downstream analyses on recovered
//! productivity: exclusion-restriction OLS recovery with the pairwise
//! discrepancy Wald test, Block C strength, and difference-in-differences.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::polynomial_columns;
use crate::error::{Error, Result};
use crate::gmm::delta_method_cov;
use crate::linalg::{design, ols_clustered, spd_inverse};
use crate::panel::{CenteredPanel, Panel};
use crate::params::ParamVector;
use crate::proposed::{BlockAbFit, BlockCFit, GridPoint};

/// Smallest productivity loading accepted for a proxy.
const MIN_LOADING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Input {
    M,
    E,
    W,
}

impl Input {
    pub const ALL: [Input; 3] = [Input::M, Input::E, Input::W];

    pub fn as_str(&self) -> &'static str {
        match self {
            Input::M => "m",
            Input::E => "e",
            Input::W => "w",
        }
    }

    /// `(a_k*, a_l*, a_omega, a_z)` of this input's demand.
    fn coefs<'a>(&self, th: &'a ParamVector) -> (f64, f64, f64, &'a [f64]) {
        match self {
            Input::M => (th.gamma_k, th.gamma_l, th.gamma_omega, &th.h_coeffs_m),
            Input::E => (th.delta_k, th.delta_l, th.delta_omega, &th.h_coeffs_e),
            Input::W => (th.zeta_k, th.zeta_l, th.zeta_omega, &th.h_coeffs_w),
        }
    }

    fn column<'a>(&self, p: &'a Panel) -> &'a [f64] {
        match self {
            Input::M => &p.m,
            Input::E => &p.e,
            Input::W => &p.w,
        }
    }
}

/// Which exclusion restriction the proxies rely on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionCase {
    /// Every input is tried as a proxy excluded from both `k` and `l`.
    Joint,
    /// `k_input` is excluded from `k` only, `l_input` from `l` only.
    Marginal { k_input: Input, l_input: Input },
}

/// Input pairs whose discrepancies enter the two-degree-of-freedom Wald
/// test: the capital ratio difference of `k_pair` and the labor ratio
/// difference of `l_pair`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaldPairs {
    pub k_pair: (Input, Input),
    pub l_pair: (Input, Input),
}

impl Default for WaldPairs {
    fn default() -> Self {
        WaldPairs {
            k_pair: (Input::M, Input::E),
            l_pair: (Input::M, Input::W),
        }
    }
}

/// OLS recovery of `(beta_0, beta_k, beta_l)` from one proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecovery {
    pub input: Input,
    /// Which coefficient the proxy identifies: "kl" (joint), "k" or "l".
    pub identifies: String,
    pub beta0: f64,
    pub beta_k: f64,
    pub beta_l: f64,
    pub se_k: f64,
    pub se_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiscrepancy {
    pub h1: Input,
    pub h2: Input,
    pub d_k: f64,
    pub d_l: f64,
    pub se_k: f64,
    pub se_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionRecovery {
    pub per_input: Vec<InputRecovery>,
    pub pairs: Vec<PairDiscrepancy>,
    pub wald_pairs: WaldPairs,
    pub wald_stat: f64,
    pub wald_df: usize,
    pub wald_p: f64,
}

/// `a_k*/a_omega` of `h2` minus that of `h1`, and the same for `l`.
pub fn pair_discrepancy(th: &ParamVector, h1: Input, h2: Input) -> (f64, f64) {
    let (k1, l1, o1, _) = h1.coefs(th);
    let (k2, l2, o2, _) = h2.coefs(th);
    (k2 / o2 - k1 / o1, l2 / o2 - l1 / o1)
}

/// Productivity proxy from input `h`, net of the controls and of the
/// estimated slopes on the variables listed in `net_kl` (`(k, l)` flags).
fn proxy(cp: &CenteredPanel, th: &ParamVector, h: Input, net_kl: (bool, bool)) -> Result<Vec<f64>> {
    let (ak, al, aw, az) = h.coefs(th);
    if aw.abs() < MIN_LOADING {
        return Err(Error::Degenerate(format!(
            "productivity loading of {} is below {MIN_LOADING}",
            h.as_str()
        )));
    }
    let x = &cp.data;
    let col = h.column(x);
    Ok((0..x.n_obs())
        .map(|i| {
            let mut v = col[i];
            if net_kl.0 {
                v -= ak * x.k[i];
            }
            if net_kl.1 {
                v -= al * x.l[i];
            }
            for (c, b) in az.iter().zip(&cp.basis) {
                v -= c * b[i];
            }
            v / aw
        })
        .collect())
}

fn uncentered(cp: &CenteredPanel) -> Panel {
    let mut p = cp.data.clone();
    let mu = &cp.means;
    for (col, m) in [
        (&mut p.y, mu.y),
        (&mut p.k, mu.k),
        (&mut p.l, mu.l),
        (&mut p.m, mu.m),
        (&mut p.e, mu.e),
        (&mut p.w, mu.w),
    ] {
        col.iter_mut().for_each(|v| *v += m);
    }
    p
}

/// Regression of `y - beta_h' x_h - proxy` on `(1, k, l)` in levels with
/// firm-clustered errors. `proxy` is centered, so the constant estimates
/// the intercept.
fn proxy_regression(
    p: &Panel,
    th: &ParamVector,
    proxy: &[f64],
) -> Result<(DVector<f64>, Vec<f64>)> {
    let n = p.n_obs();
    let lhs: Vec<f64> = (0..n)
        .map(|i| p.y[i] - th.beta_m * p.m[i] - th.beta_e * p.e[i] - th.beta_w * p.w[i] - proxy[i])
        .collect();
    let x = design(&[vec![1.0; n], p.k.clone(), p.l.clone()]);
    let fit = ols_clustered(&x, &DVector::from_vec(lhs), p.firm_groups())?;
    let ses = (0..3).map(|i| fit.se(i)).collect();
    Ok((fit.coef, ses))
}

/// The OLS recovery regressions alone, for a given parameter vector.
pub fn exclusion_regressions(
    cp: &CenteredPanel,
    theta: &ParamVector,
    case: ExclusionCase,
) -> Result<Vec<InputRecovery>> {
    let p = &uncentered(cp);
    let mut out = Vec::new();
    let mut push = |h: Input, net: (bool, bool), tag: &str| -> Result<()> {
        let w = proxy(cp, theta, h, net)?;
        let (b, se) = proxy_regression(p, theta, &w)?;
        out.push(InputRecovery {
            input: h,
            identifies: tag.into(),
            beta0: b[0],
            beta_k: b[1],
            beta_l: b[2],
            se_k: se[1],
            se_l: se[2],
        });
        Ok(())
    };
    match case {
        ExclusionCase::Joint => {
            for h in Input::ALL {
                push(h, (false, false), "kl")?;
            }
        }
        ExclusionCase::Marginal { k_input, l_input } => {
            if k_input == l_input {
                return Err(Error::InvalidArgument(
                    "marginal exclusion needs two different inputs".into(),
                ));
            }
            push(k_input, (false, true), "k")?;
            push(l_input, (true, false), "l")?;
        }
    }
    Ok(out)
}

/// Exclusion-restriction recovery of the primary-input elasticities from
/// an A+B fit, the pairwise discrepancies of the slope-to-loading ratios
/// and the Wald test that the two selected discrepancies are zero.
pub fn exclusion_recovery(
    cp: &CenteredPanel,
    ab: &BlockAbFit,
    case: ExclusionCase,
    wald: WaldPairs,
) -> Result<ExclusionRecovery> {
    let th = &ab.theta1;
    let per_input = exclusion_regressions(cp, th, case)?;
    let pair_list = [
        (Input::M, Input::E),
        (Input::M, Input::W),
        (Input::E, Input::W),
    ];
    let (vals, cov) = delta_method_cov(
        |t| {
            pair_list
                .iter()
                .flat_map(|&(a, b)| {
                    let (dk, dl) = pair_discrepancy(t, a, b);
                    [dk, dl]
                })
                .collect()
        },
        &ab.gmm,
    )?;
    let pairs = pair_list
        .iter()
        .enumerate()
        .map(|(i, &(h1, h2))| PairDiscrepancy {
            h1,
            h2,
            d_k: vals[2 * i],
            d_l: vals[2 * i + 1],
            se_k: cov[(2 * i, 2 * i)].max(0.0).sqrt(),
            se_l: cov[(2 * i + 1, 2 * i + 1)].max(0.0).sqrt(),
        })
        .collect();
    let (d, v) = delta_method_cov(
        |t| {
            vec![
                pair_discrepancy(t, wald.k_pair.0, wald.k_pair.1).0,
                pair_discrepancy(t, wald.l_pair.0, wald.l_pair.1).1,
            ]
        },
        &ab.gmm,
    )?;
    let wald_stat = wald_statistic(&d, &v)?;
    Ok(ExclusionRecovery {
        per_input,
        pairs,
        wald_pairs: wald,
        wald_stat,
        wald_df: 2,
        wald_p: chi2_2_sf(wald_stat),
    })
}

/// `d' V^-1 d`.
pub fn wald_statistic(d: &[f64], v: &DMatrix<f64>) -> Result<f64> {
    let vi = spd_inverse(v).ok_or_else(|| {
        Error::Degenerate("discrepancy covariance is not positive definite".into())
    })?;
    let dv = DVector::from_column_slice(d);
    Ok((dv.transpose() * vi * &dv)[(0, 0)])
}

/// Upper tail of the chi-square distribution with two degrees of freedom.
pub fn chi2_2_sf(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        (-x / 2.0).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCStrength {
    pub rho_hat: Vec<f64>,
    pub t_rho2: f64,
    pub t_rho3: f64,
    pub weak: bool,
    pub chosen: (f64, f64),
    pub j_profile: Vec<GridPoint>,
}

/// Reporting view of the curvature loadings' significance.
pub fn blockc_strength(fit: &BlockCFit) -> BlockCStrength {
    BlockCStrength {
        rho_hat: fit.rho.clone(),
        t_rho2: fit.rho_t_stats.0,
        t_rho3: fit.rho_t_stats.1,
        weak: fit.weak_identification,
        chosen: fit.chosen,
        j_profile: fit.profile_grid.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidResult {
    pub att_hat: f64,
    pub se: f64,
    /// Largest absolute pre-period event-time coefficient (the period
    /// before treatment is the reference).
    pub pre_trend_max: f64,
    pub used_poly_kl: bool,
    pub n_treated: usize,
    pub n_control: usize,
}

/// Residuals of every column after removing firm and year effects by
/// alternating projections.
fn two_way_within(p: &Panel, cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = p.n_obs();
    let years: Vec<i64> = {
        let mut y = p.year.clone();
        y.sort_unstable();
        y.dedup();
        y
    };
    let year_idx: Vec<usize> = p
        .year
        .iter()
        .map(|y| years.binary_search(y).unwrap_or(0))
        .collect();
    let mut count = vec![0.0; years.len()];
    for &t in &year_idx {
        count[t] += 1.0;
    }
    cols.iter()
        .map(|c| {
            let mut r = c.clone();
            for _ in 0..1000 {
                for g in p.firm_groups() {
                    let m = r[g.clone()].iter().sum::<f64>() / g.len() as f64;
                    r[g.clone()].iter_mut().for_each(|v| *v -= m);
                }
                let mut s = vec![0.0; years.len()];
                for i in 0..n {
                    s[year_idx[i]] += r[i];
                }
                let mut change = 0.0f64;
                for t in 0..years.len() {
                    s[t] /= count[t];
                    change = change.max(s[t].abs());
                }
                for i in 0..n {
                    r[i] -= s[year_idx[i]];
                }
                if change < 1e-13 {
                    break;
                }
            }
            r
        })
        .collect()
}

/// Two-way fixed-effects difference-in-differences of recovered
/// productivity on `treated x post`. Firms are treated if their flag is
/// ever one; `post` starts at `treat_start`. With `controls_poly_degree > 0`
/// all `(k, l)` monomials up to that degree are added, which absorbs any
/// linear `(k, l)` component left in productivity by an A+B-only fit.
pub fn did_att(
    omega_hat: &[f64],
    p: &Panel,
    treat_start: i64,
    controls_poly_degree: usize,
) -> Result<DidResult> {
    let n = p.n_obs();
    if omega_hat.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} productivity values for {n} observations",
            omega_hat.len()
        )));
    }
    let d =
        p.d.as_ref()
            .ok_or_else(|| Error::InvalidArgument("panel has no treatment flag".into()))?;
    let mut treated = vec![false; n];
    let (mut n_treated, mut n_control) = (0, 0);
    for g in p.firm_groups() {
        let tr = d[g.clone()].iter().any(|&v| v > 0.5);
        treated[g.clone()].iter_mut().for_each(|v| *v = tr);
        if tr {
            n_treated += 1;
        } else {
            n_control += 1;
        }
    }
    if n_treated == 0 || n_control == 0 {
        return Err(Error::InvalidArgument(
            "need both treated and control firms".into(),
        ));
    }
    let has_pre = p.year.iter().any(|&y| y < treat_start);
    let has_post = p.year.iter().any(|&y| y >= treat_start);
    if !has_pre || !has_post {
        return Err(Error::InvalidArgument(
            "need at least one pre and one post period".into(),
        ));
    }
    let controls = if controls_poly_degree > 0 {
        polynomial_columns(&[&p.k, &p.l], controls_poly_degree)
    } else {
        Vec::new()
    };
    let txp: Vec<f64> = (0..n)
        .map(|i| {
            if treated[i] && p.year[i] >= treat_start {
                1.0
            } else {
                0.0
            }
        })
        .collect();

    let mut cols = vec![omega_hat.to_vec(), txp];
    cols.extend(controls.iter().cloned());
    let within = two_way_within(p, &cols);
    let x = design(&within[1..]);
    let fit = ols_clustered(&x, &DVector::from_column_slice(&within[0]), p.firm_groups())?;
    let att_hat = fit.coef[0];
    let se = fit.se(0);

    // Event study over pre-periods relative to the last pre-period.
    let pre_years: Vec<i64> = {
        let mut y: Vec<i64> = p
            .year
            .iter()
            .copied()
            .filter(|&y| y < treat_start - 1)
            .collect();
        y.sort_unstable();
        y.dedup();
        y
    };
    let mut pre_trend_max = 0.0f64;
    if !pre_years.is_empty() {
        let mut ecols = vec![omega_hat.to_vec()];
        for &s in &pre_years {
            ecols.push(
                (0..n)
                    .map(|i| {
                        if treated[i] && p.year[i] == s {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            );
        }
        ecols.push(cols[1].clone());
        ecols.extend(controls);
        let ew = two_way_within(p, &ecols);
        let ex = design(&ew[1..]);
        let efit = ols_clustered(&ex, &DVector::from_column_slice(&ew[0]), p.firm_groups())?;
        for i in 0..pre_years.len() {
            pre_trend_max = pre_trend_max.max(efit.coef[i].abs());
        }
    }
    Ok(DidResult {
        att_hat,
        se,
        pre_trend_max,
        used_poly_kl: controls_poly_degree > 0,
        n_treated,
        n_control,
    })
}
