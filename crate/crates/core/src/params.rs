//! The structural parameter vector and addressing of individual entries.

use serde::{Deserialize, Serialize};

/// Address of a single scalar inside a [`ParamVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamId {
    BetaK,
    BetaL,
    BetaM,
    BetaE,
    BetaW,
    GammaK,
    GammaL,
    DeltaK,
    DeltaL,
    ZetaK,
    ZetaL,
    GammaOmega,
    DeltaOmega,
    ZetaOmega,
    Alpha,
    RhoV,
    Beta0,
    /// Coefficient on the `i`-th power of the index in `h` (0-based: `Rho(0)` is rho_1).
    Rho(usize),
    HM(usize),
    HE(usize),
    HW(usize),
}

impl ParamId {
    pub fn name(&self) -> String {
        match self {
            ParamId::BetaK => "beta_k".into(),
            ParamId::BetaL => "beta_l".into(),
            ParamId::BetaM => "beta_m".into(),
            ParamId::BetaE => "beta_e".into(),
            ParamId::BetaW => "beta_w".into(),
            ParamId::GammaK => "gamma_k".into(),
            ParamId::GammaL => "gamma_l".into(),
            ParamId::DeltaK => "delta_k".into(),
            ParamId::DeltaL => "delta_l".into(),
            ParamId::ZetaK => "zeta_k".into(),
            ParamId::ZetaL => "zeta_l".into(),
            ParamId::GammaOmega => "gamma_omega".into(),
            ParamId::DeltaOmega => "delta_omega".into(),
            ParamId::ZetaOmega => "zeta_omega".into(),
            ParamId::Alpha => "alpha".into(),
            ParamId::RhoV => "rho_v".into(),
            ParamId::Beta0 => "beta0".into(),
            ParamId::Rho(i) => format!("rho{}", i + 1),
            ParamId::HM(i) => format!("h_m[{i}]"),
            ParamId::HE(i) => format!("h_e[{i}]"),
            ParamId::HW(i) => format!("h_w[{i}]"),
        }
    }
}

/// Full structural parameter set: production elasticities, demand slopes,
/// productivity loadings, nuisance-basis coefficients and the homothetic
/// index / curvature parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub beta_k: f64,
    pub beta_l: f64,
    pub beta_m: f64,
    pub beta_e: f64,
    pub beta_w: f64,
    pub gamma_k: f64,
    pub gamma_l: f64,
    pub delta_k: f64,
    pub delta_l: f64,
    pub zeta_k: f64,
    pub zeta_l: f64,
    pub gamma_omega: f64,
    pub delta_omega: f64,
    pub zeta_omega: f64,
    pub h_coeffs_m: Vec<f64>,
    pub h_coeffs_e: Vec<f64>,
    pub h_coeffs_w: Vec<f64>,
    pub alpha: f64,
    pub rho_v: f64,
    /// Curvature loadings `rho_1, rho_2, ...` of `h(v)`.
    pub rho: Vec<f64>,
    pub beta0: f64,
}

impl Default for ParamVector {
    fn default() -> Self {
        ParamVector {
            beta_k: 0.0,
            beta_l: 0.0,
            beta_m: 0.0,
            beta_e: 0.0,
            beta_w: 0.0,
            gamma_k: 0.0,
            gamma_l: 0.0,
            delta_k: 0.0,
            delta_l: 0.0,
            zeta_k: 0.0,
            zeta_l: 0.0,
            gamma_omega: 1.0,
            delta_omega: 1.0,
            zeta_omega: 1.0,
            h_coeffs_m: Vec::new(),
            h_coeffs_e: Vec::new(),
            h_coeffs_w: Vec::new(),
            alpha: 0.5,
            rho_v: 0.0,
            rho: vec![0.0; 3],
            beta0: 0.0,
        }
    }
}

impl ParamVector {
    pub fn get(&self, id: ParamId) -> f64 {
        match id {
            ParamId::BetaK => self.beta_k,
            ParamId::BetaL => self.beta_l,
            ParamId::BetaM => self.beta_m,
            ParamId::BetaE => self.beta_e,
            ParamId::BetaW => self.beta_w,
            ParamId::GammaK => self.gamma_k,
            ParamId::GammaL => self.gamma_l,
            ParamId::DeltaK => self.delta_k,
            ParamId::DeltaL => self.delta_l,
            ParamId::ZetaK => self.zeta_k,
            ParamId::ZetaL => self.zeta_l,
            ParamId::GammaOmega => self.gamma_omega,
            ParamId::DeltaOmega => self.delta_omega,
            ParamId::ZetaOmega => self.zeta_omega,
            ParamId::Alpha => self.alpha,
            ParamId::RhoV => self.rho_v,
            ParamId::Beta0 => self.beta0,
            ParamId::Rho(i) => self.rho.get(i).copied().unwrap_or(0.0),
            ParamId::HM(i) => self.h_coeffs_m[i],
            ParamId::HE(i) => self.h_coeffs_e[i],
            ParamId::HW(i) => self.h_coeffs_w[i],
        }
    }

    pub fn set(&mut self, id: ParamId, v: f64) {
        match id {
            ParamId::BetaK => self.beta_k = v,
            ParamId::BetaL => self.beta_l = v,
            ParamId::BetaM => self.beta_m = v,
            ParamId::BetaE => self.beta_e = v,
            ParamId::BetaW => self.beta_w = v,
            ParamId::GammaK => self.gamma_k = v,
            ParamId::GammaL => self.gamma_l = v,
            ParamId::DeltaK => self.delta_k = v,
            ParamId::DeltaL => self.delta_l = v,
            ParamId::ZetaK => self.zeta_k = v,
            ParamId::ZetaL => self.zeta_l = v,
            ParamId::GammaOmega => self.gamma_omega = v,
            ParamId::DeltaOmega => self.delta_omega = v,
            ParamId::ZetaOmega => self.zeta_omega = v,
            ParamId::Alpha => self.alpha = v,
            ParamId::RhoV => self.rho_v = v,
            ParamId::Beta0 => self.beta0 = v,
            ParamId::Rho(i) => {
                if self.rho.len() <= i {
                    self.rho.resize(i + 1, 0.0);
                }
                self.rho[i] = v;
            }
            ParamId::HM(i) => self.h_coeffs_m[i] = v,
            ParamId::HE(i) => self.h_coeffs_e[i] = v,
            ParamId::HW(i) => self.h_coeffs_w[i] = v,
        }
    }

    /// Values of `ids` in order.
    pub fn extract(&self, ids: &[ParamId]) -> Vec<f64> {
        ids.iter().map(|&id| self.get(id)).collect()
    }

    /// Copy of `self` with `ids` overwritten by `values`.
    pub fn with_values(&self, ids: &[ParamId], values: &[f64]) -> ParamVector {
        let mut out = self.clone();
        for (&id, &v) in ids.iter().zip(values) {
            out.set(id, v);
        }
        out
    }

    /// Resizes the nuisance-basis coefficient vectors, zero-filling.
    pub fn with_basis_dim(mut self, d_basis: usize) -> Self {
        self.h_coeffs_m.resize(d_basis, 0.0);
        self.h_coeffs_e.resize(d_basis, 0.0);
        self.h_coeffs_w.resize(d_basis, 0.0);
        self
    }

    pub fn basis_dim(&self) -> usize {
        self.h_coeffs_m.len()
    }

    /// Intermediate-input and demand parameters (theta_1) for a basis of
    /// dimension `d_basis`: 12 + 3 * d_basis entries.
    pub fn theta1_ids(d_basis: usize) -> Vec<ParamId> {
        let mut ids = vec![
            ParamId::BetaM,
            ParamId::BetaE,
            ParamId::BetaW,
            ParamId::GammaK,
            ParamId::GammaL,
            ParamId::DeltaK,
            ParamId::DeltaL,
            ParamId::ZetaK,
            ParamId::ZetaL,
            ParamId::GammaOmega,
            ParamId::DeltaOmega,
            ParamId::ZetaOmega,
        ];
        ids.extend((0..d_basis).map(ParamId::HM));
        ids.extend((0..d_basis).map(ParamId::HE));
        ids.extend((0..d_basis).map(ParamId::HW));
        ids
    }

    /// Applies the location-shift reparameterization `omega -> omega + c_k k + c_l l`:
    /// `beta_k += c_k`, `beta_l += c_l` and each demand slope on `(k, l)` moves by
    /// its productivity loading times the shift. All residuals are unchanged.
    pub fn shifted_kl(&self, c_k: f64, c_l: f64) -> ParamVector {
        let mut p = self.clone();
        p.beta_k += c_k;
        p.beta_l += c_l;
        p.gamma_k += self.gamma_omega * c_k;
        p.gamma_l += self.gamma_omega * c_l;
        p.delta_k += self.delta_omega * c_k;
        p.delta_l += self.delta_omega * c_l;
        p.zeta_k += self.zeta_omega * c_k;
        p.zeta_l += self.zeta_omega * c_l;
        p
    }

    /// True when any productivity loading is too close to zero for the
    /// proxy-elimination residuals to carry information.
    pub fn loadings_degenerate(&self) -> bool {
        [self.gamma_omega, self.delta_omega, self.zeta_omega]
            .iter()
            .any(|v| v.abs() < 1e-8)
    }
}
