use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mfprod::benchmarks::{fit_acf, fit_acf_mod, fit_gnr, DEFAULT_FIRST_STAGE_DEGREE};
use mfprod::dgp::{simulate_with, DgpConfig, DgpId, EventDesign, TruthRecord};
use mfprod::diagnostics::{ExclusionCase, Input};
use mfprod::mc::{emit_table, run_mc, McConfig, TableFormat};
use mfprod::par::Execution;
use mfprod::proposed::{default_grid, estimate_proposed, recover_productivity, ProposedOptions};
use mfprod::report::{diagnose, load_grid, write_omega_csv, DiagnoseOptions, EstimateReport};
use mfprod::{load_panel, Panel, Schema};

#[derive(Parser)]
#[command(
    name = "mfprod",
    version,
    about = "Production function estimation without a Markov assumption"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a panel from one of the Monte Carlo designs.
    Simulate(SimulateArgs),
    /// Estimate production function parameters from a panel CSV.
    Estimate(EstimateArgs),
    /// Exclusion-restriction and DiD diagnostics for a proposed-estimator report.
    Diagnose(DiagnoseArgs),
    /// Run a Monte Carlo study and write bias/SD/RMSE tables.
    Mc(McArgs),
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long, value_parser = parse_dgp)]
    dgp: DgpId,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Electricity-water shock loading (ci design only).
    #[arg(long, default_value_t = 0.0)]
    rho_ew: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth_out: Option<PathBuf>,
    /// Share of firms treated from `--treat-start` on (adds a `d` column).
    #[arg(long, requires = "treat_start")]
    treat_share: Option<f64>,
    /// First treated period, counted from 0 among observed periods.
    #[arg(long, requires = "treat_share")]
    treat_start: Option<usize>,
    /// Treatment leaves productivity unchanged.
    #[arg(long)]
    placebo: bool,
    #[arg(long)]
    labor_noise_sd: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Proposed,
    Acf,
    AcfMod,
    Gnr,
}

#[derive(Clone, Copy, ValueEnum)]
enum Blocks {
    Ab,
    Abc,
}

#[derive(clap::Args)]
struct EstimateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "proposed")]
    method: Method,
    #[arg(long, value_enum, default_value = "ab")]
    blocks: Blocks,
    #[arg(long, default_value_t = 3)]
    h_degree: usize,
    /// CSV with `rho_v,alpha` columns; defaults to the built-in lattice.
    #[arg(long)]
    grid_file: Option<PathBuf>,
    #[arg(long, default_value_t = mfprod::panel::DEFAULT_BASIS_DEGREE)]
    basis_degree: usize,
    /// Truth file from `simulate --truth-out` (needed by acf-mod).
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the productivity series; defaults next to the report.
    #[arg(long)]
    omega_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Case {
    Joint,
    Marginal,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputArg {
    M,
    E,
    W,
}

impl From<InputArg> for Input {
    fn from(a: InputArg) -> Self {
        match a {
            InputArg::M => Input::M,
            InputArg::E => Input::E,
            InputArg::W => Input::W,
        }
    }
}

#[derive(clap::Args)]
struct DiagnoseArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "joint")]
    case: Case,
    /// Marginal case: input excluded from capital.
    #[arg(long, value_enum, default_value = "m")]
    k_input: InputArg,
    /// Marginal case: input excluded from labor.
    #[arg(long, value_enum, default_value = "w")]
    l_input: InputArg,
    #[arg(long)]
    treat_start: Option<i64>,
    #[arg(long, default_value_t = 3)]
    did_poly_degree: usize,
}

#[derive(clap::Args)]
struct McArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; overrides the config.
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_dgp(s: &str) -> std::result::Result<DgpId, String> {
    s.parse().map_err(|e: mfprod::Error| e.to_string())
}

fn read_panel(path: &Path) -> Result<Panel> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    load_panel(BufReader::new(f), &Schema::default())
        .with_context(|| format!("reading {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    use std::io::Write;
    writeln!(w)?;
    Ok(())
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let mut cfg = DgpConfig::new(a.dgp, a.n, a.t, a.seed).with_rho_ew(a.rho_ew);
    if let (Some(share), Some(start)) = (a.treat_share, a.treat_start) {
        cfg.process.event = Some(EventDesign {
            treat_share: share,
            treat_start: start,
            effect: !a.placebo,
        });
    }
    if let Some(sd) = a.labor_noise_sd {
        cfg.process.labor_noise_sd = sd;
    }
    let (panel, truth) = simulate_with(&cfg, Execution::Parallel)?;
    let f = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    panel.write_csv(BufWriter::new(f))?;
    if let Some(path) = a.truth_out {
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        truth.write_csv(BufWriter::new(f))?;
    }
    if truth.n_index_adjusted > 0 {
        log::warn!(
            "labor rule clamped in {} firm-periods",
            truth.n_index_adjusted
        );
    }
    Ok(())
}

fn estimate_cmd(a: EstimateArgs) -> Result<()> {
    let panel = read_panel(&a.input)?;
    let (mut report, omega) = match a.method {
        Method::Proposed => {
            let grid = match &a.grid_file {
                Some(path) => load_grid(
                    File::open(path).with_context(|| format!("opening {}", path.display()))?,
                )?,
                None => default_grid(),
            };
            let opts = ProposedOptions {
                block_c: matches!(a.blocks, Blocks::Abc),
                h_degree: a.h_degree,
                grid,
                basis_degree: a.basis_degree,
                ..ProposedOptions::default()
            };
            let fit = estimate_proposed(&panel, &opts)?;
            (
                EstimateReport::from_proposed(&fit, &opts, &panel),
                fit.omega_hat,
            )
        }
        Method::Acf | Method::AcfMod | Method::Gnr => {
            let fit = match a.method {
                Method::Acf => fit_acf(&panel, DEFAULT_FIRST_STAGE_DEGREE)?,
                Method::AcfMod => {
                    let Some(path) = &a.truth else {
                        bail!("--method acf-mod needs --truth with the simulated demand shocks");
                    };
                    let truth = TruthRecord::read_csv(
                        File::open(path).with_context(|| format!("opening {}", path.display()))?,
                    )?;
                    fit_acf_mod(&panel, Some(&truth), DEFAULT_FIRST_STAGE_DEGREE)?
                }
                _ => fit_gnr(&panel)?,
            };
            let report = EstimateReport::from_bench(&fit, &panel);
            let omega = recover_productivity(&panel, &report.theta);
            (report, omega)
        }
    };
    let omega_path = a
        .omega_out
        .unwrap_or_else(|| a.out.with_extension("omega.csv"));
    let f =
        File::create(&omega_path).with_context(|| format!("creating {}", omega_path.display()))?;
    write_omega_csv(&panel, &omega, BufWriter::new(f))?;
    report.omega_csv = Some(omega_path.display().to_string());
    if !report.converged {
        log::warn!("optimizer did not report convergence");
    }
    write_json(&a.out, &report)
}

fn diagnose_cmd(a: DiagnoseArgs) -> Result<()> {
    let f = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let report: EstimateReport =
        serde_json::from_reader(BufReader::new(f)).context("parsing report")?;
    let panel = read_panel(&a.panel)?;
    let case = match a.case {
        Case::Joint => ExclusionCase::Joint,
        Case::Marginal => ExclusionCase::Marginal {
            k_input: a.k_input.into(),
            l_input: a.l_input.into(),
        },
    };
    let opts = DiagnoseOptions {
        case,
        treat_start: a.treat_start,
        did_poly_degree: a.did_poly_degree,
        ..DiagnoseOptions::default()
    };
    let out = diagnose(&report, &panel, &opts)?;
    write_json(&a.out, &out)
}

fn mc_cmd(a: McArgs) -> Result<()> {
    let f = File::open(&a.config).with_context(|| format!("opening {}", a.config.display()))?;
    let mut cfg: McConfig =
        serde_json::from_reader(BufReader::new(f)).context("parsing MC config")?;
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    let table = run_mc(&cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for fmt in [TableFormat::Csv, TableFormat::Json, TableFormat::Markdown] {
        let path = a.out.join(format!("mc.{}", fmt.extension()));
        fs::write(&path, emit_table(&table, fmt)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let flagged = table.rows.iter().filter(|r| r.flagged).count();
    if flagged > 0 {
        log::warn!("{flagged} table rows come from cells with more than 20% failed replications");
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Diagnose(a) => diagnose_cmd(a),
        Command::Mc(a) => mc_cmd(a),
    }
}
