//! Monte Carlo replication runner and bias/SD/RMSE tables.
//!
//! Within one design cell every estimator is fitted to the same simulated
//! panels (common random numbers). Replication `r` uses
//! `replicate_seed(base_seed, r)` regardless of DGP, sample size or worker
//! count, so tables are reproducible byte for byte.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::benchmarks::{fit_acf, fit_acf_mod, fit_gnr, DEFAULT_FIRST_STAGE_DEGREE};
use crate::dgp::{simulate_with, DgpConfig, DgpId};
use crate::error::{Error, Result};
use crate::panel::format_float;
use crate::par::{map_range, pairwise_sum, with_jobs, Execution};
use crate::params::{ParamId, ParamVector};
use crate::proposed::{estimate_proposed, ProposedOptions};
use crate::rng::replicate_seed;

/// Share of failed replications above which a cell is flagged.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Part {
    /// Intermediate-input elasticities from Blocks A+B.
    #[default]
    #[serde(rename = "part1", alias = "Part1")]
    Part1,
    /// All elasticities, adding the homothetic block.
    #[serde(rename = "part2", alias = "Part2")]
    Part2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum McMethod {
    #[serde(rename = "proposed")]
    Proposed,
    #[serde(rename = "acf")]
    Acf,
    #[serde(rename = "acf-mod", alias = "acf_mod")]
    AcfMod,
    #[serde(rename = "gnr")]
    Gnr,
}

impl McMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            McMethod::Proposed => "proposed",
            McMethod::Acf => "acf",
            McMethod::AcfMod => "acf-mod",
            McMethod::Gnr => "gnr",
        }
    }
}

impl FromStr for McMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "proposed" => Ok(McMethod::Proposed),
            "acf" => Ok(McMethod::Acf),
            "acf-mod" | "acf_mod" => Ok(McMethod::AcfMod),
            "gnr" => Ok(McMethod::Gnr),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

fn default_reps() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub dgps: Vec<DgpId>,
    pub methods: Vec<McMethod>,
    /// Firm counts; empty means the part's default (500 for Part 1, 200
    /// for Part 2).
    #[serde(default)]
    pub n_grid: Vec<usize>,
    /// Panel lengths; empty means 50.
    #[serde(default)]
    pub t_grid: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub part: Part,
    /// Shock-correlation loadings visited for the CI-violation DGP; empty
    /// means `[0.0]`. Other DGPs ignore it.
    #[serde(default)]
    pub rho_ew_grid: Vec<f64>,
    /// Worker threads; 0 uses the global pool, 1 runs serially.
    #[serde(default)]
    pub jobs: usize,
    /// Part 2 only: fix `(rho_v, alpha)` at the simulated values instead of
    /// searching the default lattice. Defaults to true.
    #[serde(default)]
    pub fix_index_at_truth: Option<bool>,
    /// Overrides the simulator's labor-rule noise (0 by default).
    #[serde(default)]
    pub labor_noise_sd: Option<f64>,
}

impl McConfig {
    pub fn new(dgps: Vec<DgpId>, methods: Vec<McMethod>, reps: usize) -> Self {
        McConfig {
            dgps,
            methods,
            n_grid: Vec::new(),
            t_grid: Vec::new(),
            reps,
            base_seed: 0,
            part: Part::Part1,
            rho_ew_grid: Vec::new(),
            jobs: 0,
            fix_index_at_truth: None,
            labor_noise_sd: None,
        }
    }

    pub fn n_values(&self) -> Vec<usize> {
        if !self.n_grid.is_empty() {
            return self.n_grid.clone();
        }
        match self.part {
            Part::Part1 => vec![500],
            Part::Part2 => vec![200],
        }
    }

    pub fn t_values(&self) -> Vec<usize> {
        if self.t_grid.is_empty() {
            vec![50]
        } else {
            self.t_grid.clone()
        }
    }

    fn rho_values(&self, dgp: DgpId) -> Vec<f64> {
        if dgp == DgpId::CiViolation && !self.rho_ew_grid.is_empty() {
            self.rho_ew_grid.clone()
        } else {
            vec![0.0]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dgps.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidArgument(
                "need at least one DGP and one method".into(),
            ));
        }
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be positive".into()));
        }
        if self.n_values().contains(&0) || self.t_values().contains(&0) {
            return Err(Error::InvalidArgument(
                "sample sizes must be positive".into(),
            ));
        }
        if self.rho_ew_grid.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::InvalidArgument("rho_ew must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Parameters tabulated for a method in a given part.
pub fn reported_params(method: McMethod, part: Part) -> Vec<ParamId> {
    use ParamId::*;
    match (method, part) {
        (McMethod::Proposed, Part::Part1) => {
            vec![BetaM, BetaE, BetaW, GammaOmega, DeltaOmega, ZetaOmega]
        }
        (McMethod::Proposed, Part::Part2) => {
            vec![
                BetaK, BetaL, BetaM, BetaE, BetaW, GammaOmega, DeltaOmega, ZetaOmega,
            ]
        }
        _ => vec![BetaK, BetaL, BetaM, BetaE, BetaW],
    }
}

/// Per-replication estimates of one (design, method) cell; `None` marks a
/// failed or non-converged replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCell {
    pub dgp: DgpId,
    pub rho_ew: f64,
    pub n: usize,
    pub t: usize,
    pub method: McMethod,
    pub params: Vec<ParamId>,
    pub truth: Vec<f64>,
    pub draws: Vec<Option<Vec<f64>>>,
}

impl McCell {
    /// Label of the design: the DGP name, with the loading for DGP4.
    pub fn dgp_label(&self) -> String {
        if self.dgp == DgpId::CiViolation {
            format!(
                "{}(rho_ew={})",
                self.dgp.as_str(),
                format_float(self.rho_ew)
            )
        } else {
            self.dgp.as_str().to_string()
        }
    }

    pub fn n_converged(&self) -> usize {
        self.draws.iter().filter(|d| d.is_some()).count()
    }

    /// Converged estimates of parameter `j` in replication order.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().flatten().map(|d| d[j]).collect()
    }

    pub fn param_index(&self, id: ParamId) -> Option<usize> {
        self.params.iter().position(|p| *p == id)
    }
}

fn fit_one(
    method: McMethod,
    cfg: &McConfig,
    dgp_cfg: &DgpConfig,
    panel: &crate::panel::Panel,
    truth: &crate::dgp::TruthRecord,
) -> Result<Option<ParamVector>> {
    match method {
        McMethod::Proposed => {
            let mut opts = ProposedOptions {
                block_c: cfg.part == Part::Part2,
                exec: Execution::Serial,
                ..ProposedOptions::default()
            };
            if cfg.part == Part::Part2 && cfg.fix_index_at_truth.unwrap_or(true) {
                opts.grid = vec![(dgp_cfg.process.rho_v, dgp_cfg.process.alpha)];
            }
            let fit = estimate_proposed(panel, &opts)?;
            let ok = fit.ab.gmm.converged && fit.c.as_ref().is_none_or(|c| c.gmm.converged);
            Ok(ok.then_some(fit.theta))
        }
        McMethod::Acf | McMethod::AcfMod | McMethod::Gnr => {
            let fit = match method {
                McMethod::Acf => fit_acf(panel, DEFAULT_FIRST_STAGE_DEGREE)?,
                McMethod::AcfMod => fit_acf_mod(panel, Some(truth), DEFAULT_FIRST_STAGE_DEGREE)?,
                _ => fit_gnr(panel)?,
            };
            if !fit.converged {
                return Ok(None);
            }
            let b = fit.beta_hat;
            Ok(Some(ParamVector {
                beta_k: b[0],
                beta_l: b[1],
                beta_m: b[2],
                beta_e: b[3],
                beta_w: b[4],
                ..ParamVector::default()
            }))
        }
    }
}

/// Simulation config of one design cell and replication.
pub fn design_config(
    cfg: &McConfig,
    dgp: DgpId,
    rho_ew: f64,
    n: usize,
    t: usize,
    rep: usize,
) -> DgpConfig {
    let mut d =
        DgpConfig::new(dgp, n, t, replicate_seed(cfg.base_seed, rep as u64)).with_rho_ew(rho_ew);
    if let Some(sd) = cfg.labor_noise_sd {
        d.process.labor_noise_sd = sd;
    }
    d
}

/// Runs every replication and returns the raw per-replication estimates,
/// ordered by DGP, loading, N, T and method as listed in the config.
pub fn run_mc_draws(cfg: &McConfig) -> Result<Vec<McCell>> {
    cfg.validate()?;
    let exec = Execution::from_jobs(if cfg.jobs == 0 { 2 } else { cfg.jobs });
    let mut cells = Vec::new();
    for &dgp in &cfg.dgps {
        for rho_ew in cfg.rho_values(dgp) {
            for n in cfg.n_values() {
                for t in cfg.t_values() {
                    let reps: Vec<Vec<Option<Vec<f64>>>> = with_jobs(cfg.jobs, || {
                        map_range(cfg.reps, exec, |r| {
                            let dc = design_config(cfg, dgp, rho_ew, n, t, r);
                            let sim = simulate_with(&dc, Execution::Serial);
                            cfg.methods
                                .iter()
                                .map(|&m| {
                                    let (panel, truth) = match &sim {
                                        Ok(s) => (&s.0, &s.1),
                                        Err(e) => {
                                            log::warn!(
                                                "{} rep {r}: simulation failed: {e}",
                                                dgp.as_str()
                                            );
                                            return None;
                                        }
                                    };
                                    match fit_one(m, cfg, &dc, panel, truth) {
                                        Ok(Some(th)) => Some(
                                            reported_params(m, cfg.part)
                                                .iter()
                                                .map(|&id| th.get(id))
                                                .collect(),
                                        ),
                                        Ok(None) => {
                                            log::info!(
                                                "{} {} rep {r}: not converged",
                                                dgp.as_str(),
                                                m.as_str()
                                            );
                                            None
                                        }
                                        Err(e) => {
                                            log::warn!(
                                                "{} {} rep {r}: {e}",
                                                dgp.as_str(),
                                                m.as_str()
                                            );
                                            None
                                        }
                                    }
                                })
                                .collect()
                        })
                    });
                    let truth_cfg = design_config(cfg, dgp, rho_ew, n, t, 0);
                    for (j, &m) in cfg.methods.iter().enumerate() {
                        let params = reported_params(m, cfg.part);
                        let truth = params
                            .iter()
                            .map(|&id| truth_cfg.true_params.get(id))
                            .collect();
                        cells.push(McCell {
                            dgp,
                            rho_ew,
                            n,
                            t,
                            method: m,
                            params,
                            truth,
                            draws: reps.iter().map(|r| r[j].clone()).collect(),
                        });
                    }
                }
            }
        }
    }
    Ok(cells)
}

/// One table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub dgp: String,
    pub method: String,
    pub parameter: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub n_converged: usize,
    /// More than 20% of the replications failed.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McTable {
    pub reps: usize,
    pub rows: Vec<McRow>,
}

/// `(bias, sd, rmse)` of `draws` around `truth`. `sd` uses the `R - 1`
/// divisor and `rmse` the `R` divisor, so
/// `rmse^2 = bias^2 + sd^2 (R - 1) / R`. One draw gives `sd = 0`.
pub fn summarize(draws: &[f64], truth: f64) -> (f64, f64, f64) {
    let r = draws.len();
    if r == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let rf = r as f64;
    let mean = pairwise_sum(draws) / rf;
    let dev: Vec<f64> = draws.iter().map(|d| (d - mean) * (d - mean)).collect();
    let ss = pairwise_sum(&dev);
    let sd = if r > 1 { (ss / (rf - 1.0)).sqrt() } else { 0.0 };
    let bias = mean - truth;
    let rmse = (bias * bias + ss / rf).sqrt();
    (bias, sd, rmse)
}

pub fn tabulate(cells: &[McCell], reps: usize) -> McTable {
    let mut rows = Vec::new();
    for c in cells {
        let nc = c.n_converged();
        let flagged = (reps - nc) as f64 > MAX_FAILURE_SHARE * reps as f64;
        for (j, id) in c.params.iter().enumerate() {
            let (bias, sd, rmse) = summarize(&c.column(j), c.truth[j]);
            rows.push(McRow {
                dgp: c.dgp_label(),
                method: c.method.as_str().into(),
                parameter: id.name(),
                n: c.n,
                t: c.t,
                bias,
                sd,
                rmse,
                n_converged: nc,
                flagged,
            });
        }
    }
    McTable { reps, rows }
}

pub fn run_mc(cfg: &McConfig) -> Result<McTable> {
    Ok(tabulate(&run_mc_draws(cfg)?, cfg.reps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
    Markdown,
}

impl TableFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
            TableFormat::Markdown => "md",
        }
    }
}

impl FromStr for TableFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(Error::InvalidArgument(format!(
                "unknown table format '{other}'"
            ))),
        }
    }
}

pub const TABLE_COLUMNS: [&str; 10] = [
    "dgp",
    "method",
    "parameter",
    "N",
    "T",
    "bias",
    "sd",
    "rmse",
    "n_converged",
    "flagged",
];

fn row_fields(r: &McRow) -> [String; 10] {
    [
        r.dgp.clone(),
        r.method.clone(),
        r.parameter.clone(),
        r.n.to_string(),
        r.t.to_string(),
        format_float(r.bias),
        format_float(r.sd),
        format_float(r.rmse),
        r.n_converged.to_string(),
        r.flagged.to_string(),
    ]
}

pub fn emit_table(t: &McTable, format: TableFormat) -> Result<Vec<u8>> {
    if t.rows.is_empty() {
        return Err(Error::Empty("no rows to emit".into()));
    }
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(TABLE_COLUMNS)?;
            for r in &t.rows {
                w.write_record(row_fields(r))?;
            }
            w.into_inner().map_err(|e| Error::Io(e.into_error()))
        }
        TableFormat::Json => {
            let mut out = serde_json::to_vec_pretty(t)?;
            out.push(b'\n');
            Ok(out)
        }
        TableFormat::Markdown => {
            let mut s = String::new();
            let _ = writeln!(s, "| {} |", TABLE_COLUMNS.join(" | "));
            let _ = writeln!(s, "|{}", "---|".repeat(TABLE_COLUMNS.len()));
            for r in &t.rows {
                let _ = writeln!(s, "| {} |", row_fields(r).join(" | "));
            }
            Ok(s.into_bytes())
        }
    }
}

/// Parses a table written by [`emit_table`] in markdown.
pub fn parse_markdown(s: &str) -> Result<McTable> {
    let mut rows = Vec::new();
    for line in s.lines().skip(2) {
        let f: Vec<&str> = line
            .trim()
            .trim_matches('|')
            .split('|')
            .map(str::trim)
            .collect();
        if f.len() != TABLE_COLUMNS.len() {
            return Err(Error::Parse {
                row: rows.len(),
                column: "markdown".into(),
                value: line.into(),
            });
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse().map_err(|_| Error::Parse {
                row: rows.len(),
                column: TABLE_COLUMNS[i].into(),
                value: f[i].into(),
            })
        };
        let int = |i: usize| -> Result<usize> {
            f[i].parse().map_err(|_| Error::Parse {
                row: rows.len(),
                column: TABLE_COLUMNS[i].into(),
                value: f[i].into(),
            })
        };
        rows.push(McRow {
            dgp: f[0].into(),
            method: f[1].into(),
            parameter: f[2].into(),
            n: int(3)?,
            t: int(4)?,
            bias: num(5)?,
            sd: num(6)?,
            rmse: num(7)?,
            n_converged: int(8)?,
            flagged: f[9] == "true",
        });
    }
    let reps = rows.first().map_or(0, |r| r.n_converged);
    Ok(McTable { reps, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(bias: f64) -> McRow {
        McRow {
            dgp: "ar1".into(),
            method: "proposed".into(),
            parameter: "beta_m".into(),
            n: 10,
            t: 5,
            bias,
            sd: 0.01,
            rmse: 0.02,
            n_converged: 3,
            flagged: false,
        }
    }

    #[test]
    fn one_draw() {
        let (b, sd, rmse) = summarize(&[0.32], 0.3);
        assert!((b - 0.02).abs() < 1e-15);
        assert_eq!(sd, 0.0);
        assert_eq!(rmse, b.abs());
    }

    #[test]
    fn rmse_decomposition() {
        let d = [0.1, 0.35, 0.27, 0.31, 0.5, 0.22];
        let (b, sd, rmse) = summarize(&d, 0.3);
        let r = d.len() as f64;
        assert!((rmse * rmse - (b * b + sd * sd * (r - 1.0) / r)).abs() < 1e-12);
    }

    #[test]
    fn csv_one_row() {
        let t = McTable {
            reps: 3,
            rows: vec![row(0.001)],
        };
        let out = String::from_utf8(emit_table(&t, TableFormat::Csv).unwrap()).unwrap();
        assert_eq!(out.lines().count(), 2);
        assert!(out.starts_with("dgp,method,parameter,N,T,bias,sd,rmse,n_converged"));
    }

    #[test]
    fn markdown_round_trip() {
        let t = McTable {
            reps: 3,
            rows: vec![row(0.1 + 0.2), row(-1e-17)],
        };
        let md = String::from_utf8(emit_table(&t, TableFormat::Markdown).unwrap()).unwrap();
        assert_eq!(parse_markdown(&md).unwrap().rows, t.rows);
    }

    #[test]
    fn empty_and_unknown() {
        let t = McTable {
            reps: 1,
            rows: vec![],
        };
        assert!(emit_table(&t, TableFormat::Csv).is_err());
        assert!("xlsx".parse::<TableFormat>().is_err());
    }

    #[test]
    fn config_defaults() {
        let c: McConfig = serde_json::from_str(
            r#"{"dgps":["dgp1"],"methods":["proposed","acf-mod"],"part":"Part2"}"#,
        )
        .unwrap();
        assert_eq!(c.reps, 100);
        assert_eq!(c.n_values(), vec![200]);
        assert_eq!(c.t_values(), vec![50]);
        assert_eq!(c.methods[1], McMethod::AcfMod);
    }
}
