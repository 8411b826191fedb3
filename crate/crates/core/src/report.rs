//! Serializable estimation and diagnostics reports.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::benchmarks::BenchFit;
use crate::diagnostics::{
    blockc_strength, did_att, exclusion_recovery, BlockCStrength, DidResult, ExclusionCase,
    ExclusionRecovery, WaldPairs,
};
use crate::error::{Error, Result};
use crate::gmm::GmmResult;
use crate::panel::{demean, format_float, Panel};
use crate::params::ParamVector;
use crate::proposed::{
    fit_block_ab_with, recover_productivity, AbOptions, CurvatureInstrument, ProposedFit,
    ProposedOptions,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    /// `None` for quantities chosen by grid search or derived from means.
    pub se: Option<f64>,
}

/// Sandwich covariance of a block of parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariance {
    pub names: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

impl Covariance {
    fn from_gmm(g: &GmmResult) -> Self {
        Covariance {
            names: g.free.iter().map(|id| id.name()).collect(),
            matrix: matrix_rows(&g.vcov),
        }
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Settings needed to reproduce a proposed-estimator fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub blocks: String,
    pub h_degree: usize,
    pub basis_degree: usize,
    pub curvature: CurvatureInstrument,
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub n_moments: usize,
    pub n_params: usize,
    pub jacobian_rank: Option<usize>,
    pub profile_converged: Option<bool>,
    /// `beta_k = beta_l = 0` by normalization: productivity then carries an
    /// unidentified linear `(k, l)` component.
    pub kl_normalized: bool,
    pub block_c: Option<BlockCStrength>,
    pub first_stage_r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: String,
    pub n_firms: usize,
    pub n_obs: usize,
    pub converged: bool,
    pub estimates: Vec<Estimate>,
    pub j_stat: f64,
    pub df: usize,
    pub covariance: Vec<Covariance>,
    pub theta: ParamVector,
    pub settings: Option<FitSettings>,
    pub diagnostics: FitDiagnostics,
    /// Where the recovered productivity series was written.
    pub omega_csv: Option<String>,
}

impl EstimateReport {
    pub fn from_proposed(fit: &ProposedFit, opts: &ProposedOptions, p: &Panel) -> Self {
        let ab = &fit.ab;
        let mut estimates: Vec<Estimate> = ab
            .gmm
            .free
            .iter()
            .map(|id| Estimate {
                name: id.name(),
                value: fit.theta.get(*id),
                se: ab.gmm.se(*id),
            })
            .collect();
        let mut covariance = vec![Covariance::from_gmm(&ab.gmm)];
        let (mut j_stat, mut df, mut converged) = (ab.gmm.j_stat, ab.gmm.df, ab.gmm.converged);
        let mut n_moments = ab.gmm.df + ab.gmm.free.len();
        let mut n_params = ab.gmm.free.len();
        if let Some(c) = &fit.c {
            for id in &c.gmm.free {
                estimates.push(Estimate {
                    name: id.name(),
                    value: fit.theta.get(*id),
                    se: c.gmm.se(*id),
                });
            }
            for (name, value) in [("alpha", c.alpha), ("rho_v", c.rho_v)] {
                estimates.push(Estimate {
                    name: name.into(),
                    value,
                    se: None,
                });
            }
            covariance.push(Covariance::from_gmm(&c.gmm));
            j_stat = c.gmm.j_stat;
            df = c.gmm.df;
            converged = converged && c.gmm.converged;
            n_moments += c.gmm.df + c.gmm.free.len();
            n_params += c.gmm.free.len() + 2;
        }
        estimates.push(Estimate {
            name: "beta0".into(),
            value: fit.theta.beta0,
            se: None,
        });
        EstimateReport {
            method: "proposed".into(),
            n_firms: p.n_firms(),
            n_obs: p.n_obs(),
            converged,
            estimates,
            j_stat,
            df,
            covariance,
            theta: fit.theta.clone(),
            settings: Some(FitSettings {
                blocks: if opts.block_c { "abc" } else { "ab" }.into(),
                h_degree: opts.h_degree,
                basis_degree: opts.basis_degree,
                curvature: opts.ab.curvature,
                grid_points: opts.grid.len(),
            }),
            diagnostics: FitDiagnostics {
                n_moments,
                n_params,
                jacobian_rank: Some(ab.jacobian_rank),
                profile_converged: Some(ab.profile_converged),
                kl_normalized: fit.c.is_none(),
                block_c: fit.c.as_ref().map(blockc_strength),
                first_stage_r2: None,
            },
            omega_csv: None,
        }
    }

    pub fn from_bench(fit: &BenchFit, p: &Panel) -> Self {
        let names = ["beta_k", "beta_l", "beta_m", "beta_e", "beta_w"];
        let estimates = names
            .iter()
            .zip(fit.beta_hat.iter().zip(&fit.se))
            .map(|(n, (v, s))| Estimate {
                name: (*n).into(),
                value: *v,
                se: s.is_finite().then_some(*s),
            })
            .collect();
        let b = fit.beta_hat;
        let theta = ParamVector {
            beta_k: b[0],
            beta_l: b[1],
            beta_m: b[2],
            beta_e: b[3],
            beta_w: b[4],
            ..ParamVector::default()
        };
        // Coefficients taken from a first stage have no standard error and
        // are left out of the covariance block.
        let with_se: Vec<usize> = (0..5).filter(|&i| fit.se[i].is_finite()).collect();
        let diag: Vec<f64> = with_se.iter().map(|&i| fit.se[i] * fit.se[i]).collect();
        EstimateReport {
            method: fit.method.as_str().into(),
            n_firms: p.n_firms(),
            n_obs: p.n_obs(),
            converged: fit.converged,
            estimates,
            j_stat: fit.j_stat,
            df: 0,
            covariance: vec![Covariance {
                names: with_se.iter().map(|&i| names[i].into()).collect(),
                matrix: matrix_rows(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag))),
            }],
            theta,
            settings: None,
            diagnostics: FitDiagnostics {
                n_moments: 5,
                n_params: 5,
                jacobian_rank: None,
                profile_converged: None,
                kl_normalized: false,
                block_c: None,
                first_stage_r2: Some(fit.first_stage_r2),
            },
            omega_csv: None,
        }
    }

    pub fn estimate(&self, name: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.name == name)
    }
}

/// Writes `firm,year,omega_hat`.
pub fn write_omega_csv<W: Write>(p: &Panel, omega: &[f64], out: W) -> Result<()> {
    if omega.len() != p.n_obs() {
        return Err(Error::DimensionMismatch(format!(
            "{} productivity values for {} observations",
            omega.len(),
            p.n_obs()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["firm", "year", "omega_hat"])?;
    for ((f, y), o) in p.firm.iter().zip(&p.year).zip(omega) {
        w.write_record([f.to_string(), y.to_string(), format_float(*o)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `(rho_v, alpha)` grid from a CSV with those two header names.
pub fn load_grid<R: Read>(source: R) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (ir, ia) = (col("rho_v")?, col("alpha")?);
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize, name: &str| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::Parse {
                row,
                column: name.into(),
                value: rec[i].into(),
            })
        };
        let (r, a) = (num(ir, "rho_v")?, num(ia, "alpha")?);
        if !(a > 0.0 && a < 1.0) || !r.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid row {row}: alpha must lie in (0, 1)"
            )));
        }
        out.push((r, a));
    }
    if out.is_empty() {
        return Err(Error::Empty("grid file has no rows".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseOptions {
    pub case: ExclusionCase,
    pub wald: WaldPairs,
    /// First treated year; `None` takes the earliest year with a treated
    /// observation.
    pub treat_start: Option<i64>,
    pub did_poly_degree: usize,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions {
            case: ExclusionCase::Joint,
            wald: WaldPairs::default(),
            treat_start: None,
            did_poly_degree: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub exclusion: ExclusionRecovery,
    pub block_c: Option<BlockCStrength>,
    pub did: Option<DidResult>,
}

/// Tolerance for matching a refitted A+B solution to the report.
const REFIT_TOL: f64 = 1e-6;

/// Identification diagnostics for a proposed-estimator report on the panel
/// it was fitted to. The A+B fit is recomputed (it is deterministic) and
/// must match the report.
pub fn diagnose(
    report: &EstimateReport,
    p: &Panel,
    opts: &DiagnoseOptions,
) -> Result<DiagnosticsReport> {
    if report.method != "proposed" {
        return Err(Error::InvalidArgument(format!(
            "diagnostics need a proposed-estimator report, got '{}'",
            report.method
        )));
    }
    let settings = report
        .settings
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("report has no fit settings".into()))?;
    if p.n_obs() != report.n_obs || p.n_firms() != report.n_firms {
        return Err(Error::DimensionMismatch(format!(
            "panel has {} firms / {} rows, report has {} / {}",
            p.n_firms(),
            p.n_obs(),
            report.n_firms,
            report.n_obs
        )));
    }
    let cp = demean(p)?.with_basis_degree(settings.basis_degree)?;
    let ab = fit_block_ab_with(
        &cp,
        &AbOptions {
            curvature: settings.curvature,
            ..AbOptions::default()
        },
    )?;
    let gap = [
        (ab.theta1.beta_m, report.theta.beta_m),
        (ab.theta1.beta_e, report.theta.beta_e),
        (ab.theta1.beta_w, report.theta.beta_w),
        (ab.theta1.gamma_omega, report.theta.gamma_omega),
    ]
    .iter()
    .map(|(a, b)| (a - b).abs())
    .fold(0.0, f64::max);
    if gap > REFIT_TOL {
        return Err(Error::InvalidArgument(format!(
            "report does not match this panel (refit differs by {gap:.2e})"
        )));
    }
    let exclusion = exclusion_recovery(&cp, &ab, opts.case, opts.wald)?;
    let did = match &p.d {
        Some(d) => {
            let start = match opts.treat_start {
                Some(s) => s,
                None => (0..p.n_obs())
                    .filter(|&i| d[i] > 0.5)
                    .map(|i| p.year[i])
                    .min()
                    .ok_or_else(|| Error::InvalidArgument("no treated observations".into()))?,
            };
            let degree = if settings.blocks == "ab" {
                opts.did_poly_degree.max(1)
            } else {
                opts.did_poly_degree
            };
            let omega = recover_productivity(p, &report.theta);
            Some(did_att(&omega, p, start, degree)?)
        }
        None => None,
    };
    Ok(DiagnosticsReport {
        exclusion,
        block_c: report.diagnostics.block_c.clone(),
        did,
    })
}
