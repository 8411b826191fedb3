//! Synthetic firm panels under four productivity processes.
//!
//! Every firm is simulated from its own generator (seeded from the config
//! seed and the firm index), so a firm's path does not depend on how many
//! other firms are drawn or on thread scheduling. Within a firm, draws are
//! taken in a fixed order per period.

use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::polynomial_columns;
use crate::ces::{ces_index, ces_labor_for_index};
use crate::error::{Error, Result};
use crate::panel::{format_float, Panel, PanelColumns};
use crate::par::{map_range, Execution};
use crate::params::ParamVector;
use crate::rng::{firm_rng, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DgpId {
    /// AR(1) productivity.
    #[serde(rename = "ar1", alias = "dgp1")]
    Ar1,
    /// AR(2) productivity.
    #[serde(rename = "ar2", alias = "dgp2")]
    Ar2,
    /// Two potential productivity processes with reversible selection.
    #[serde(rename = "po", alias = "dgp3")]
    PotentialOutcome,
    /// AR(1) productivity with correlated electricity and water shocks.
    #[serde(rename = "ci", alias = "dgp4")]
    CiViolation,
}

impl DgpId {
    pub fn as_str(&self) -> &'static str {
        match self {
            DgpId::Ar1 => "ar1",
            DgpId::Ar2 => "ar2",
            DgpId::PotentialOutcome => "po",
            DgpId::CiViolation => "ci",
        }
    }
}

impl FromStr for DgpId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ar1" | "dgp1" => Ok(DgpId::Ar1),
            "ar2" | "dgp2" => Ok(DgpId::Ar2),
            "po" | "dgp3" | "potential" => Ok(DgpId::PotentialOutcome),
            "ci" | "dgp4" => Ok(DgpId::CiViolation),
            other => Err(Error::InvalidArgument(format!("unknown DGP '{other}'"))),
        }
    }
}

/// How the intermediate inputs are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandMode {
    /// Log-linear demands in `(k, l, omega)` plus AR(1) demand shocks.
    #[default]
    Structural,
    /// Cobb–Douglas first-order conditions with common unit prices and no
    /// demand shocks: every flexible input's expenditure share equals its
    /// elasticity up to the output error.
    Foc,
}

/// Treatment assigned to a random subset of firms from a fixed observed
/// period onwards (absorbing). Treated firms follow the treated potential
/// process; without `effect` both potential processes coincide (placebo).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventDesign {
    pub treat_share: f64,
    /// Index of the first treated period among the observed periods.
    pub treat_start: usize,
    pub effect: bool,
}

/// Process coefficients shared by all DGPs plus the DGP-specific laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessParams {
    /// AR coefficient of every demand shock.
    pub shock_rho: f64,
    /// Stationary standard deviation of every demand shock.
    pub shock_sd: f64,
    pub sigma_eps: f64,
    pub ar1_rho: f64,
    pub ar1_sigma: f64,
    pub ar2_rho: (f64, f64),
    pub ar2_sigma: f64,
    pub po_rho0: f64,
    pub po_sigma0: f64,
    pub po_rho1: f64,
    pub po_shift: f64,
    pub po_sigma1: f64,
    /// Persistence firms assume when forecasting productivity.
    pub belief_rho: f64,
    pub depreciation: f64,
    /// Log-investment loadings on the productivity forecast, on log capital
    /// and on the log wage.
    pub invest_omega: f64,
    pub invest_k: f64,
    pub invest_wage: f64,
    /// Standard deviation of the firm-level investment cost shifter.
    pub sigma_b: f64,
    pub wage_rho: f64,
    pub wage_sigma: f64,
    /// CES index parameters of the labor rule.
    pub alpha: f64,
    pub rho_v: f64,
    /// Level around which the index moves.
    pub index_level: f64,
    /// Coefficients of the monotone polynomial `h(v) = sum c_i (v - level)^i`
    /// giving the productivity forecast implied by the index.
    pub h_coeffs: Vec<f64>,
    /// Standard deviation of the optimization error added to the index the
    /// labor rule targets.
    pub labor_noise_sd: f64,
    pub demand_mode: DemandMode,
    /// Scales all demand shocks (0 switches them off).
    pub shock_scale: f64,
    /// Number of exogenous standard-normal controls entering the demands.
    pub n_controls: usize,
    pub event: Option<EventDesign>,
}

impl Default for ProcessParams {
    fn default() -> Self {
        ProcessParams {
            shock_rho: 0.5,
            shock_sd: 0.15,
            sigma_eps: 0.05,
            ar1_rho: 0.8,
            ar1_sigma: 0.2,
            ar2_rho: (0.6, 0.3),
            ar2_sigma: 0.15,
            po_rho0: 0.8,
            po_sigma0: 0.2,
            po_rho1: 0.5,
            po_shift: 0.15,
            po_sigma1: 0.25,
            belief_rho: 0.8,
            depreciation: 0.2,
            invest_omega: 0.5,
            invest_k: 0.1,
            invest_wage: -0.5,
            sigma_b: 0.6,
            wage_rho: 0.3,
            wage_sigma: 0.1,
            alpha: 0.4,
            rho_v: 0.3,
            index_level: 5.0,
            h_coeffs: vec![0.1, 0.3, 0.35],
            labor_noise_sd: 0.0,
            demand_mode: DemandMode::Structural,
            shock_scale: 1.0,
            n_controls: 0,
            event: None,
        }
    }
}

impl ProcessParams {
    /// Linear `h`: no curvature for the homothetic block to exploit.
    pub fn with_linear_h(mut self) -> Self {
        self.h_coeffs = vec![0.5];
        self
    }

    /// `h(v)` of the labor rule.
    pub fn h(&self, v: f64) -> f64 {
        let u = v - self.index_level;
        self.h_coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * u.powi(i as i32 + 1))
            .sum()
    }

    /// Index level at which `h` equals `target`.
    fn h_inverse(&self, target: f64) -> f64 {
        let f = |u: f64| -> f64 {
            self.h_coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| c * u.powi(i as i32 + 1))
                .sum::<f64>()
                - target
        };
        let (mut lo, mut hi) = (-100.0, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < 1e-14 {
                break;
            }
        }
        self.index_level + 0.5 * (lo + hi)
    }
}

/// Production and demand coefficients of the simulations.
pub fn default_truth() -> ParamVector {
    ParamVector {
        beta0: 0.1,
        beta_k: 0.2,
        beta_l: 0.3,
        beta_m: 0.3,
        beta_e: 0.15,
        beta_w: 0.1,
        gamma_k: 0.45,
        gamma_l: 0.65,
        gamma_omega: 2.2,
        delta_k: 0.40,
        delta_l: 0.60,
        delta_omega: 2.0,
        zeta_k: 0.50,
        zeta_l: 0.70,
        zeta_omega: 1.8,
        alpha: 0.4,
        rho_v: 0.3,
        ..ParamVector::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub dgp: DgpId,
    pub n_firms: usize,
    pub t_obs: usize,
    pub burn_in: usize,
    /// Common-factor loading of the electricity and water shocks (DGP4);
    /// their correlation is its square.
    pub rho_ew: f64,
    pub seed: u64,
    pub true_params: ParamVector,
    pub process: ProcessParams,
}

impl DgpConfig {
    pub fn new(dgp: DgpId, n_firms: usize, t_obs: usize, seed: u64) -> Self {
        DgpConfig {
            dgp,
            n_firms,
            t_obs,
            burn_in: 30,
            rho_ew: 0.0,
            seed,
            true_params: default_truth(),
            process: ProcessParams::default(),
        }
    }

    pub fn with_rho_ew(mut self, rho_ew: f64) -> Self {
        self.rho_ew = rho_ew;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_firms < 1 || self.t_obs < 1 {
            return Err(Error::InvalidArgument(
                "need at least one firm and one period".into(),
            ));
        }
        if self.dgp == DgpId::Ar2 && self.burn_in < 2 {
            return Err(Error::InvalidArgument(
                "AR(2) needs a burn-in of at least 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.rho_ew) {
            return Err(Error::InvalidArgument("rho_ew must lie in [0, 1)".into()));
        }
        if !(self.process.alpha > 0.0 && self.process.alpha < 1.0) {
            return Err(Error::InvalidArgument("alpha must lie in (0, 1)".into()));
        }
        if self.process.h_coeffs.first().is_none_or(|c| *c <= 0.0) {
            return Err(Error::InvalidArgument("h must be increasing".into()));
        }
        if let Some(ev) = self.process.event {
            if !(0.0..=1.0).contains(&ev.treat_share) || ev.treat_start >= self.t_obs {
                return Err(Error::InvalidArgument("invalid event design".into()));
            }
        }
        Ok(())
    }
}

/// Latent quantities behind a simulated panel, in panel row order.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub n_firms: usize,
    pub t_obs: usize,
    pub omega: Vec<f64>,
    pub tau: Vec<f64>,
    pub nu: Vec<f64>,
    pub eta: Vec<f64>,
    pub eps: Vec<f64>,
    /// CES index of the realized `(k, l)`.
    pub v: Vec<f64>,
    pub d: Option<Vec<f64>>,
    pub omega0: Option<Vec<f64>>,
    pub omega1: Option<Vec<f64>>,
    /// Periods where the labor rule had no solution and the index was
    /// moved to the nearest attainable level.
    pub n_index_adjusted: usize,
}

impl TruthRecord {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["firm", "year", "omega", "tau", "nu", "eta", "eps", "v"];
        let po = self.omega0.is_some();
        if self.d.is_some() {
            header.push("d");
        }
        if po {
            header.extend(["omega0", "omega1"]);
        }
        wtr.write_record(&header)?;
        for i in 0..self.omega.len() {
            let mut rec = vec![
                (i / self.t_obs).to_string(),
                (i % self.t_obs + 1).to_string(),
            ];
            for col in [
                &self.omega,
                &self.tau,
                &self.nu,
                &self.eta,
                &self.eps,
                &self.v,
            ] {
                rec.push(format_float(col[i]));
            }
            if let Some(d) = &self.d {
                rec.push(format_float(d[i]));
            }
            if let (Some(a), Some(b)) = (&self.omega0, &self.omega1) {
                rec.push(format_float(a[i]));
                rec.push(format_float(b[i]));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a file written by [`TruthRecord::write_csv`]. Rows must be in
    /// firm-major, year-ascending order, as written.
    pub fn read_csv<R: Read>(source: R) -> Result<TruthRecord> {
        let mut rdr = csv::Reader::from_reader(source);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let i_firm = col("firm")?;
        let names = ["omega", "tau", "nu", "eta", "eps", "v"];
        let idx: Vec<usize> = names.iter().map(|n| col(n)).collect::<Result<_>>()?;
        let i_d = col("d").ok();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        let mut d = Vec::new();
        let mut firms: Vec<i64> = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize, name: &str| -> Result<f64> {
                rec[i].trim().parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    column: name.to_string(),
                    value: rec[i].to_string(),
                })
            };
            for (j, &i) in idx.iter().enumerate() {
                cols[j].push(parse(i, names[j])?);
            }
            if let Some(i) = i_d {
                d.push(parse(i, "d")?);
            }
            let f = parse(i_firm, "firm")? as i64;
            if firms.last() != Some(&f) {
                firms.push(f);
            }
        }
        let n = cols[0].len();
        if n == 0 {
            return Err(Error::Empty("truth file has no rows".into()));
        }
        let n_firms = firms.len();
        if !n.is_multiple_of(n_firms) {
            return Err(Error::InvalidArgument(
                "truth file is not a balanced panel".into(),
            ));
        }
        let mut it = cols.into_iter();
        let mut next = || it.next().unwrap_or_default();
        Ok(TruthRecord {
            n_firms,
            t_obs: n / n_firms,
            omega: next(),
            tau: next(),
            nu: next(),
            eta: next(),
            eps: next(),
            v: next(),
            d: i_d.map(|_| d),
            omega0: None,
            omega1: None,
            n_index_adjusted: 0,
        })
    }
}

struct FirmDraws {
    y: Vec<f64>,
    k: Vec<f64>,
    l: Vec<f64>,
    m: Vec<f64>,
    e: Vec<f64>,
    w: Vec<f64>,
    z: Vec<Vec<f64>>,
    omega: Vec<f64>,
    tau: Vec<f64>,
    nu: Vec<f64>,
    eta: Vec<f64>,
    eps: Vec<f64>,
    v: Vec<f64>,
    d: Vec<f64>,
    omega0: Vec<f64>,
    omega1: Vec<f64>,
    adjusted: usize,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Stationary AR(2) draw of `(x_{-1}, x_0)`.
fn ar2_start(rng: &mut ChaCha8Rng, p1: f64, p2: f64, sigma: f64) -> (f64, f64) {
    let g0 = sigma * sigma * (1.0 - p2) / ((1.0 + p2) * ((1.0 - p2).powi(2) - p1 * p1));
    let g1 = p1 * g0 / (1.0 - p2);
    let a = g0.sqrt() * normal(rng);
    let cond_sd = (g0 - g1 * g1 / g0).max(0.0).sqrt();
    let b = g1 / g0 * a + cond_sd * normal(rng);
    (a, b)
}

fn simulate_firm(cfg: &DgpConfig, j: usize, treated: bool) -> FirmDraws {
    let pp = &cfg.process;
    let th = &cfg.true_params;
    let mut rng = firm_rng(cfg.seed, j as u64);
    let total = cfg.burn_in + cfg.t_obs;
    let shock_sd = pp.shock_sd * pp.shock_scale;
    let innov_sd = shock_sd * (1.0 - pp.shock_rho * pp.shock_rho).sqrt();
    let rho_ew = if cfg.dgp == DgpId::CiViolation {
        cfg.rho_ew
    } else {
        0.0
    };
    // Common-factor loading as written for this design: the implied shock
    // correlation is rho_ew squared.
    let (own, common) = ((1.0 - rho_ew * rho_ew).sqrt(), rho_ew);

    // Firm-level constants and stationary starting states.
    let b = pp.sigma_b * normal(&mut rng);
    let mut lw = pp.wage_sigma / (1.0 - pp.wage_rho * pp.wage_rho).sqrt() * normal(&mut rng);
    let c0 = normal(&mut rng);
    let mut tau = shock_sd * normal(&mut rng);
    let mut nu = shock_sd * (own * normal(&mut rng) + common * c0);
    let mut eta = shock_sd * (own * normal(&mut rng) + common * c0);
    let sd1 = pp.ar1_sigma / (1.0 - pp.ar1_rho * pp.ar1_rho).sqrt();
    let sd0 = pp.po_sigma0 / (1.0 - pp.po_rho0 * pp.po_rho0).sqrt();
    let (mut om_prev2, mut om_prev) = match cfg.dgp {
        DgpId::Ar2 => ar2_start(&mut rng, pp.ar2_rho.0, pp.ar2_rho.1, pp.ar2_sigma),
        DgpId::PotentialOutcome => (0.0, sd0 * normal(&mut rng)),
        _ => (0.0, sd1 * normal(&mut rng)),
    };
    // Potential-outcome state: omega0, omega1 and last treatment status.
    let mut om0_prev = om_prev;
    let mut om1_prev = pp.po_rho1 * om0_prev + pp.po_shift + pp.po_sigma1 * normal(&mut rng);
    let mut d_prev = false;

    let mut k = (b - pp.depreciation.ln()) / (1.0 - pp.invest_k);
    let mut l = 0.0;
    let mut have_l = false;

    let t_obs = cfg.t_obs;
    let mut out = FirmDraws {
        y: Vec::with_capacity(t_obs),
        k: Vec::with_capacity(t_obs),
        l: Vec::with_capacity(t_obs),
        m: Vec::with_capacity(t_obs),
        e: Vec::with_capacity(t_obs),
        w: Vec::with_capacity(t_obs),
        z: vec![Vec::with_capacity(t_obs); pp.n_controls],
        omega: Vec::with_capacity(t_obs),
        tau: Vec::with_capacity(t_obs),
        nu: Vec::with_capacity(t_obs),
        eta: Vec::with_capacity(t_obs),
        eps: Vec::with_capacity(t_obs),
        v: Vec::with_capacity(t_obs),
        d: Vec::with_capacity(t_obs),
        omega0: Vec::with_capacity(t_obs),
        omega1: Vec::with_capacity(t_obs),
        adjusted: 0,
    };
    let h_m = &th.h_coeffs_m;
    let h_e = &th.h_coeffs_e;
    let h_w = &th.h_coeffs_w;

    for t in 0..total {
        // Fixed draw order every period.
        let xi0 = normal(&mut rng);
        let xi1 = normal(&mut rng);
        let xw = normal(&mut rng);
        let (et, en, eh, ec) = (
            normal(&mut rng),
            normal(&mut rng),
            normal(&mut rng),
            normal(&mut rng),
        );
        let xe = normal(&mut rng);
        let xl = normal(&mut rng);
        let zs: Vec<f64> = (0..pp.n_controls).map(|_| normal(&mut rng)).collect();

        let obs_t = t as isize - cfg.burn_in as isize;
        let (omega, d_now, om0, om1) = match cfg.dgp {
            DgpId::Ar1 | DgpId::CiViolation => {
                (pp.ar1_rho * om_prev + pp.ar1_sigma * xi0, false, 0.0, 0.0)
            }
            DgpId::Ar2 => (
                pp.ar2_rho.0 * om_prev + pp.ar2_rho.1 * om_prev2 + pp.ar2_sigma * xi0,
                false,
                0.0,
                0.0,
            ),
            DgpId::PotentialOutcome => {
                let om0 = pp.po_rho0 * om0_prev + pp.po_sigma0 * xi0;
                let from = if d_prev { om1_prev } else { om0_prev };
                let om1 = match pp.event {
                    Some(ev) if !ev.effect => om0,
                    _ => pp.po_rho1 * from + pp.po_shift + pp.po_sigma1 * xi1,
                };
                let d = match pp.event {
                    Some(ev) => treated && obs_t >= ev.treat_start as isize,
                    None => om0 > 0.0,
                };
                let om = if d { om1 } else { om0 };
                om0_prev = om0;
                om1_prev = om1;
                d_prev = d;
                (om, d, om0, om1)
            }
        };
        om_prev2 = om_prev;
        om_prev = omega;

        lw = pp.wage_rho * lw + pp.wage_sigma * xw;
        tau = pp.shock_rho * tau + innov_sd * et;
        nu = pp.shock_rho * nu + innov_sd * (own * en + common * ec);
        eta = pp.shock_rho * eta + innov_sd * (own * eh + common * ec);
        let eps = pp.sigma_eps * xe;

        if !have_l {
            let v0 = pp.h_inverse(pp.belief_rho * omega);
            l = ces_labor_for_index(v0, k, pp.alpha, pp.rho_v).unwrap_or(v0);
            have_l = true;
        }

        let zcols: Vec<&[f64]> = zs.iter().map(std::slice::from_ref).collect();
        let zb: Vec<f64> = polynomial_columns(&zcols, 2)
            .into_iter()
            .map(|c| c[0])
            .collect();
        let dot = |c: &[f64]| c.iter().zip(&zb).map(|(a, b)| a * b).sum::<f64>();

        let (y, m, e, w) = match pp.demand_mode {
            DemandMode::Structural => {
                let m = th.gamma_k * k + th.gamma_l * l + th.gamma_omega * omega + tau + dot(h_m);
                let e = th.delta_k * k + th.delta_l * l + th.delta_omega * omega + nu + dot(h_e);
                let w = th.zeta_k * k + th.zeta_l * l + th.zeta_omega * omega + eta + dot(h_w);
                let y = th.beta0
                    + th.beta_k * k
                    + th.beta_l * l
                    + th.beta_m * m
                    + th.beta_e * e
                    + th.beta_w * w
                    + omega
                    + eps;
                (y, m, e, w)
            }
            DemandMode::Foc => {
                let s = th.beta_m + th.beta_e + th.beta_w;
                let logs = th.beta_m * th.beta_m.ln()
                    + th.beta_e * th.beta_e.ln()
                    + th.beta_w * th.beta_w.ln();
                let ystar = (th.beta0 + th.beta_k * k + th.beta_l * l + omega + logs) / (1.0 - s);
                (
                    ystar + eps,
                    th.beta_m.ln() + ystar,
                    th.beta_e.ln() + ystar,
                    th.beta_w.ln() + ystar,
                )
            }
        };

        if obs_t >= 0 {
            out.y.push(y);
            out.k.push(k);
            out.l.push(l);
            out.m.push(m);
            out.e.push(e);
            out.w.push(w);
            for (col, zv) in out.z.iter_mut().zip(&zs) {
                col.push(*zv);
            }
            out.omega.push(omega);
            out.tau.push(tau);
            out.nu.push(nu);
            out.eta.push(eta);
            out.eps.push(eps);
            out.v.push(ces_index(k, l, pp.alpha, pp.rho_v));
            out.d.push(if d_now { 1.0 } else { 0.0 });
            out.omega0.push(om0);
            out.omega1.push(om1);
        }

        // Next period's capital and labor from the AR(1) forecast.
        let forecast = pp.belief_rho * omega;
        let invest = (b + pp.invest_omega * forecast + pp.invest_k * k + pp.invest_wage * lw).exp();
        k = ((1.0 - pp.depreciation) * k.exp() + invest).ln();
        let v_next = pp.h_inverse(forecast) + pp.labor_noise_sd * xl;
        l = match ces_labor_for_index(v_next, k, pp.alpha, pp.rho_v) {
            Some(l) => l,
            None => {
                out.adjusted += 1;
                // smallest attainable index is approached as l -> -inf
                let floor = k + pp.alpha.ln() / pp.rho_v;
                ces_labor_for_index(floor + 1e-3, k, pp.alpha, pp.rho_v).unwrap_or(k)
            }
        };
    }
    out
}

/// Simulates a panel and its latent truth.
pub fn simulate(cfg: &DgpConfig) -> Result<(Panel, TruthRecord)> {
    simulate_with(cfg, Execution::Serial)
}

/// As [`simulate`], spreading firms over the thread pool when requested.
/// Output is identical for either execution mode.
pub fn simulate_with(cfg: &DgpConfig, exec: Execution) -> Result<(Panel, TruthRecord)> {
    cfg.validate()?;
    let treated: Vec<bool> = match cfg.process.event {
        Some(ev) if cfg.dgp == DgpId::PotentialOutcome => {
            let mut rng = stream_rng(cfg.seed, 1);
            (0..cfg.n_firms)
                .map(|_| rng.random::<f64>() < ev.treat_share)
                .collect()
        }
        _ => vec![false; cfg.n_firms],
    };
    let firms = map_range(cfg.n_firms, exec, |j| simulate_firm(cfg, j, treated[j]));

    let n = cfg.n_firms * cfg.t_obs;
    let mut cols = PanelColumns {
        firm: Vec::with_capacity(n),
        year: Vec::with_capacity(n),
        z: vec![Vec::with_capacity(n); cfg.process.n_controls],
        z_names: (1..=cfg.process.n_controls)
            .map(|i| format!("z{i}"))
            .collect(),
        ..Default::default()
    };
    let po = cfg.dgp == DgpId::PotentialOutcome;
    let mut truth = TruthRecord {
        n_firms: cfg.n_firms,
        t_obs: cfg.t_obs,
        omega: Vec::with_capacity(n),
        tau: Vec::with_capacity(n),
        nu: Vec::with_capacity(n),
        eta: Vec::with_capacity(n),
        eps: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
        d: po.then(Vec::new),
        omega0: po.then(Vec::new),
        omega1: po.then(Vec::new),
        n_index_adjusted: 0,
    };
    let mut d_col = Vec::with_capacity(if po { n } else { 0 });
    for (j, f) in firms.into_iter().enumerate() {
        for t in 0..cfg.t_obs {
            cols.firm.push(j as i64);
            cols.year.push(t as i64 + 1);
        }
        cols.y.extend(f.y);
        cols.k.extend(f.k);
        cols.l.extend(f.l);
        cols.m.extend(f.m);
        cols.e.extend(f.e);
        cols.w.extend(f.w);
        for (dst, src) in cols.z.iter_mut().zip(f.z) {
            dst.extend(src);
        }
        truth.omega.extend(f.omega);
        truth.tau.extend(f.tau);
        truth.nu.extend(f.nu);
        truth.eta.extend(f.eta);
        truth.eps.extend(f.eps);
        truth.v.extend(f.v);
        truth.n_index_adjusted += f.adjusted;
        if po {
            d_col.extend(f.d.iter().copied());
            if let Some(v) = truth.omega0.as_mut() {
                v.extend(f.omega0);
            }
            if let Some(v) = truth.omega1.as_mut() {
                v.extend(f.omega1);
            }
        }
    }
    if po {
        truth.d = Some(d_col.clone());
        cols.d = Some(d_col);
    }
    if truth.n_index_adjusted > 0 {
        log::warn!(
            "labor rule adjusted in {} firm-periods",
            truth.n_index_adjusted
        );
    }
    Ok((Panel::from_columns(cols)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{corr, sample_var};

    #[test]
    fn truth_constants() {
        let t = default_truth();
        assert_eq!(t.beta_m, 0.30);
        assert_eq!(t.gamma_omega, 2.2);
        assert_eq!(t.beta0, 0.1);
        let p = ProcessParams::default();
        assert_eq!(p.sigma_eps, 0.05);
        assert_eq!(p.shock_rho, 0.5);
        assert_eq!(p.shock_sd, 0.15);
    }

    #[test]
    fn h_inverse_round_trips() {
        let p = ProcessParams::default();
        for x in [-1.5, -0.2, 0.0, 0.4, 1.3] {
            assert!((p.h(p.h_inverse(x)) - x).abs() < 1e-10);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(simulate(&DgpConfig::new(DgpId::Ar1, 0, 5, 1)).is_err());
        assert!(simulate(&DgpConfig::new(DgpId::Ar1, 5, 0, 1)).is_err());
        let mut c = DgpConfig::new(DgpId::Ar2, 5, 5, 1);
        c.burn_in = 1;
        assert!(simulate(&c).is_err());
        assert!("dgp9".parse::<DgpId>().is_err());
    }

    #[test]
    fn ar1_stationary_variance() {
        let (_, truth) = simulate(&DgpConfig::new(DgpId::Ar1, 400, 50, 3)).unwrap();
        let v = sample_var(&truth.omega);
        assert!((v / (0.04 / 0.36) - 1.0).abs() < 0.05, "var {v}");
        for s in [&truth.tau, &truth.nu, &truth.eta] {
            assert!((sample_var(s) / 0.0225 - 1.0).abs() < 0.05);
        }
        assert_eq!(truth.n_index_adjusted, 0);
    }

    #[test]
    fn ci_violation_correlation() {
        let (_, t0) = simulate(&DgpConfig::new(DgpId::CiViolation, 300, 50, 5)).unwrap();
        assert!(corr(&t0.nu, &t0.eta).abs() < 0.02);
        let cfg = DgpConfig::new(DgpId::CiViolation, 300, 50, 5).with_rho_ew(0.3);
        let (_, t3) = simulate(&cfg).unwrap();
        assert!((corr(&t3.nu, &t3.eta) - 0.09).abs() < 0.03);
        assert!(corr(&t3.tau, &t3.nu).abs() < 0.03);
    }

    #[test]
    fn potential_outcome_selection_rule() {
        let (p, t) = simulate(&DgpConfig::new(DgpId::PotentialOutcome, 50, 20, 9)).unwrap();
        let d = t.d.as_ref().unwrap();
        let (o0, o1) = (t.omega0.as_ref().unwrap(), t.omega1.as_ref().unwrap());
        for i in 0..d.len() {
            assert_eq!(d[i] == 1.0, o0[i] > 0.0);
            let want = (1.0 - d[i]) * o0[i] + d[i] * o1[i];
            assert_eq!(t.omega[i], want);
        }
        assert_eq!(p.d.as_ref().unwrap(), d);
    }

    #[test]
    fn same_seed_same_csv() {
        let cfg = DgpConfig::new(DgpId::Ar2, 20, 10, 77);
        let mut a = Vec::new();
        let mut b = Vec::new();
        simulate(&cfg).unwrap().0.write_csv(&mut a).unwrap();
        simulate(&cfg).unwrap().0.write_csv(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parallel_matches_serial() {
        let cfg = DgpConfig::new(DgpId::PotentialOutcome, 30, 8, 11);
        let a = simulate_with(&cfg, Execution::Serial).unwrap();
        let b = simulate_with(&cfg, Execution::Parallel).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn firm_paths_do_not_depend_on_panel_width() {
        let small = simulate(&DgpConfig::new(DgpId::Ar1, 3, 6, 21)).unwrap().0;
        let large = simulate(&DgpConfig::new(DgpId::Ar1, 10, 6, 21)).unwrap().0;
        assert_eq!(small.y[..18], large.y[..18]);
    }
}
