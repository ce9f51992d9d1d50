//! `trusfuse` command-line driver.
//!
//! Exit codes: 0 success, 1 numerical failure (non-convergence, failed
//! contour mapping, failed invariant checks), 2 input error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use trusfuse::pipeline::{
    cmd_evaluate, cmd_fuse, cmd_register, cmd_stats, write_phantom_case, LoadedCase, OutputLayout,
    PatientCase, PipelineConfig,
};
use trusfuse::registration::TransferFunction;

#[derive(Parser, Debug)]
#[command(
    name = "trusfuse",
    version,
    about = "TRUS/MRI fusion and brachytherapy dose evaluation"
)]
struct Cli {
    /// Configuration file (TOML, or JSON when the extension is .json).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for synthetic data; the other commands are deterministic.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory (reports/, dvh/, composite/).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic patient case to <out>/case.
    Phantom,
    /// Register the US prostate surface onto the MRI prostate surface.
    Register {
        /// Case manifest (JSON).
        #[arg(long)]
        case: PathBuf,
    },
    /// Write four-quadrant TRUS/MRI composites.
    Fuse {
        #[arg(long)]
        case: PathBuf,
        /// Transfer function JSON; registration runs first when omitted.
        #[arg(long)]
        transfer: Option<PathBuf>,
        /// Cursor position `u,v`; repeatable.
        #[arg(long, value_parser = parse_cursor)]
        cursor: Vec<[usize; 2]>,
        /// TRUS slice index; repeatable. All slices when omitted.
        #[arg(long)]
        slice: Vec<usize>,
    },
    /// Evaluate the seed plan on the US and MRI+US prostate.
    Evaluate {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        transfer: Option<PathBuf>,
    },
    /// Wilcoxon and Spearman statistics on paired tables.
    Stats {
        /// Paired CSV tables (patient,us,mri_us[,diff][,percent]).
        #[arg(required = true)]
        tables: Vec<PathBuf>,
    },
}

fn parse_cursor(s: &str) -> Result<[usize; 2], String> {
    let (u, v) = s
        .split_once(',')
        .ok_or_else(|| format!("expected u,v, got {s:?}"))?;
    let p = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    Ok([p(u)?, p(v)?])
}

/// Error together with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn input(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: 2,
            error: error.into(),
        }
    }

    fn numerical(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: 1,
            error: error.into(),
        }
    }
}

impl From<trusfuse::Error> for Failure {
    fn from(e: trusfuse::Error) -> Self {
        if e.is_numerical() {
            Failure::numerical(e)
        } else {
            Failure::input(e)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(Failure::input)?;
    let cfg: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
    .map_err(Failure::input)?;
    cfg.validate()?;
    Ok(cfg)
}

fn transfer_for(
    case: &LoadedCase,
    transfer: Option<&Path>,
    cfg: &PipelineConfig,
    out: &OutputLayout,
) -> Result<(TransferFunction, Option<trusfuse::pipeline::RegisterReport>), Failure> {
    match transfer {
        Some(p) => Ok((TransferFunction::read_json(p)?, None)),
        None => {
            let (f, report) = cmd_register(case, cfg, out)?;
            Ok((f, Some(report)))
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(cli.config.as_deref())?;
    let out = OutputLayout::new(&cli.out);
    match cli.command {
        Command::Phantom => {
            let case = write_phantom_case(&cli.out.join("case"), cli.seed, &cfg.phantom)?;
            out.write_report(&format!("{}_phantom", case.patient), &case)?;
            println!("{}", case.manifest.display());
        }
        Command::Register { case } => {
            let case = PatientCase::load(&case)?;
            let (_, report) = cmd_register(&case, &cfg, &out)?;
            println!(
                "{}: residual {:.3} mm (rigid {:.3} mm)",
                report.patient, report.residual.mean, report.residual_rigid.mean
            );
            if let Some(tre) = &report.tre {
                println!("{}: TRE {:.3} mm", report.patient, tre.mean);
            }
            if !report.converged() {
                return Err(Failure::numerical(anyhow::anyhow!(
                    "registration of {} did not converge",
                    report.patient
                )));
            }
        }
        Command::Fuse {
            case,
            transfer,
            cursor,
            slice,
        } => {
            let case = PatientCase::load(&case)?;
            let mut cfg = cfg;
            if !cursor.is_empty() {
                cfg.fusion.cursors = cursor;
            }
            if !slice.is_empty() {
                cfg.fusion.slices = slice;
            }
            let (f, _) = transfer_for(&case, transfer.as_deref(), &cfg, &out)?;
            let report = cmd_fuse(&case, &f, &cfg, &out)?;
            println!(
                "{}: {} composites, {} pixels outside the MRI volume",
                report.patient,
                report.images.len(),
                report.out_of_bounds_total
            );
        }
        Command::Evaluate { case, transfer } => {
            let case = PatientCase::load(&case)?;
            let (f, reg) = transfer_for(&case, transfer.as_deref(), &cfg, &out)?;
            let report = cmd_evaluate(&case, &f, reg, &cfg, &out)?;
            if let Some(c) = &report.comparison {
                for (name, row) in [
                    ("volume cc", &c.volume_cc),
                    ("V160 %", &c.v160_pct),
                    ("D90 Gy", &c.d90_gy),
                ] {
                    println!(
                        "{}: {name}: US {:.2}, MRI+US {:.2}, diff {:+.2} ({:+.2}%)",
                        report.patient, row.us, row.mri_us, row.diff, row.percent
                    );
                }
            }
            for c in report.checks.iter().filter(|c| !c.ok) {
                eprintln!("check failed: {} ({})", c.name, c.detail);
            }
            for f in &report.failures {
                eprintln!("step failed: {f}");
            }
            if !report.ok() {
                return Err(Failure::numerical(anyhow::anyhow!(
                    "evaluation of {} is incomplete; partial report written",
                    report.patient
                )));
            }
        }
        Command::Stats { tables } => {
            let report = cmd_stats(&tables, &cfg, &out)?;
            for t in &report.tables {
                let w = &t.wilcoxon;
                println!(
                    "{}: n={} W={} p={:.4}{}",
                    t.table,
                    w.n_effective,
                    w.w,
                    w.p_value,
                    if w.significant_at_0_05 {
                        " (significant at 0.05)"
                    } else {
                        ""
                    }
                );
            }
            if let Some(s) = &report.spearman {
                println!("spearman rho={:.4}", s.result.rho);
            }
        }
    }
    Ok(())
}

/// Cause chain joined by `: `, skipping causes the previous message already ends with.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if msg.ends_with(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(&f.error));
            ExitCode::from(f.code)
        }
    }
}
