//! Demand and output residuals shared by every estimator.

use crate::error::{Error, Result};
use crate::panel::CenteredPanel;
use crate::params::ParamVector;

/// Per-observation residuals: each intermediate input net of its demand
/// slopes on `(k, l)` and the nuisance basis, and output net of the
/// flexible-input contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub m_tilde: Vec<f64>,
    pub e_tilde: Vec<f64>,
    pub w_tilde: Vec<f64>,
    pub y_tilde: Vec<f64>,
}

/// Computes the four residual vectors. With `normalize_kl` the output
/// residual keeps `beta_k k + beta_l l` (the `beta_k = beta_l = 0`
/// normalization); otherwise those terms are subtracted as well.
pub fn residuals(p: &CenteredPanel, theta: &ParamVector, normalize_kl: bool) -> Result<Residuals> {
    let d = p.basis_dim();
    for (name, v) in [
        ("h_coeffs_m", &theta.h_coeffs_m),
        ("h_coeffs_e", &theta.h_coeffs_e),
        ("h_coeffs_w", &theta.h_coeffs_w),
    ] {
        if v.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "{name} has length {}, basis has {d} columns",
                v.len()
            )));
        }
    }
    let x = &p.data;
    let n = x.n_obs();
    let basis_term = |coef: &[f64], i: usize| -> f64 {
        coef.iter()
            .zip(&p.basis)
            .map(|(c, b)| c * b[i])
            .sum::<f64>()
    };
    let mut r = Residuals {
        m_tilde: Vec::with_capacity(n),
        e_tilde: Vec::with_capacity(n),
        w_tilde: Vec::with_capacity(n),
        y_tilde: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (k, l) = (x.k[i], x.l[i]);
        r.m_tilde.push(
            x.m[i] - theta.gamma_k * k - theta.gamma_l * l - basis_term(&theta.h_coeffs_m, i),
        );
        r.e_tilde.push(
            x.e[i] - theta.delta_k * k - theta.delta_l * l - basis_term(&theta.h_coeffs_e, i),
        );
        r.w_tilde
            .push(x.w[i] - theta.zeta_k * k - theta.zeta_l * l - basis_term(&theta.h_coeffs_w, i));
        let mut yt = x.y[i] - theta.beta_m * x.m[i] - theta.beta_e * x.e[i] - theta.beta_w * x.w[i];
        if !normalize_kl {
            yt -= theta.beta_k * k + theta.beta_l * l;
        }
        r.y_tilde.push(yt);
    }
    Ok(r)
}
