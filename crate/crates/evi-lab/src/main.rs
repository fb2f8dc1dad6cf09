//! Command-line front end. Exit codes: 0 all checks pass, 1 at least one
//! failure, 2 no failures but at least one inconclusive check, 3 the tool
//! itself could not run (bad config, IO, budget).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use evi_lab::config::{load_config, ExperimentConfig, CERTIFY_CHECKS};
use evi_lab::orchestrate::{run_experiment, Instance, ReportDocument, RunOptions};
use evi_lab::presets;

#[derive(Parser)]
#[command(
    name = "evi-lab",
    version,
    about = "Numerical laboratory for gradient flows under general dissipative costs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every check in a config and write its artifacts.
    Run {
        config: PathBuf,
        /// Base artifact directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Judge with engineering slack removed from every tolerance.
        #[arg(long)]
        strict_tolerances: bool,
        /// Skip all file output.
        #[arg(long)]
        no_artifacts: bool,
    },
    /// Run only the scheme ladder and dump its trajectories.
    Ladder {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run only the certificate checks of a config.
    Certify {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        strict_tolerances: bool,
    },
    /// Tabulate the dual transform of the configured energy over its grid.
    Transform {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the shipped example configs, or write them to a directory.
    Presets {
        /// Write every preset as `<dir>/<name>.toml`.
        #[arg(long)]
        write: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn dispatch() -> Result<u8> {
    match Cli::parse().cmd {
        Cmd::Run { config, out, strict_tolerances, no_artifacts } => {
            let cfg = load_config(&config)?;
            let opts = RunOptions {
                strict_tolerances,
                out_dir: out,
                emit_artifacts: !no_artifacts,
                check_filter: None,
            };
            run_and_report("run", &cfg, &opts)
        }
        Cmd::Certify { config, out, strict_tolerances } => {
            let cfg = load_config(&config)?;
            let opts = RunOptions {
                strict_tolerances,
                out_dir: out,
                emit_artifacts: false,
                check_filter: Some(CERTIFY_CHECKS.iter().map(|s| s.to_string()).collect()),
            };
            run_and_report("certify", &cfg, &opts)
        }
        Cmd::Ladder { config, out } => {
            let cfg = load_config(&config)?;
            run_ladder(&cfg, out)
        }
        Cmd::Transform { config, out } => {
            let cfg = load_config(&config)?;
            run_transform(&cfg, out)
        }
        Cmd::Presets { write } => run_presets(write),
    }
}

fn artifact_dir(cfg: &ExperimentConfig, out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir)).join(&cfg.name)
}

fn print_checks(doc: &ReportDocument, strict: bool) {
    for r in &doc.checks {
        let v = if strict { r.strict_verdict() } else { r.verdict };
        println!(
            "check {}: {} (worst {:+.3e} vs tol {:.3e}, {:.1} ms)",
            r.check_name,
            v.as_str(),
            r.worst_residual,
            r.tolerance,
            r.runtime_ms
        );
    }
}

fn run_and_report(verb: &str, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<u8> {
    let doc = run_experiment(cfg, opts)?;
    print_checks(&doc, opts.strict_tolerances);
    let (mut pass, mut fail, mut inc) = (0usize, 0usize, 0usize);
    for r in &doc.checks {
        let v = if opts.strict_tolerances { r.strict_verdict() } else { r.verdict };
        match v {
            evi_core::report::Verdict::Pass => pass += 1,
            evi_core::report::Verdict::Fail => fail += 1,
            evi_core::report::Verdict::Inconclusive => inc += 1,
        }
    }
    println!(
        "{verb} {}: exit {} ({pass} pass, {fail} fail, {inc} inconclusive; {:.1} ms)",
        doc.config_name, doc.exit_code, doc.total_runtime_ms
    );
    if opts.emit_artifacts {
        println!("artifacts: {}", artifact_dir(cfg, &opts.out_dir).display());
    }
    Ok(doc.exit_code as u8)
}

fn run_ladder(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<u8> {
    if cfg.scheme.is_none() {
        bail!("config `{}` has no [scheme] section to run", cfg.name);
    }
    let inst = Instance::build(cfg, None)?;
    let ladder = inst.ladder.as_ref().expect("scheme section implies a ladder");
    println!(
        "ladder {}: base tau {:.3e}, adjusted horizon {:.6}, {} levels",
        cfg.name,
        ladder.base_tau,
        ladder.horizon,
        ladder.runs.len()
    );
    for run in &ladder.runs {
        let phis = run.phi_values();
        let status = match &run.failure {
            Some(f) => format!("failed at step {}: {}", f.step, f.message),
            None => "complete".into(),
        };
        println!(
            "  level {}: tau {:.3e}, {} iterates, phi {:+.6e} -> {:+.6e} ({status})",
            run.level,
            run.tau,
            run.records.len(),
            phis.first().copied().unwrap_or(f64::NAN),
            phis.last().copied().unwrap_or(f64::NAN)
        );
    }
    for n in &ladder.notes {
        println!("  note: {n}");
    }
    let dir = artifact_dir(cfg, &out);
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating artifact directory {}", dir.display()))?;
    evi_lab::artifacts::write_trajectories(&dir, &inst)?;
    if cfg.output.plotdata {
        evi_lab::artifacts::write_plotdata(&dir, &inst)?;
    }
    println!("artifacts: {}", dir.display());
    Ok(if ladder.failed_level.is_some() { 2 } else { 0 })
}

fn run_transform(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<u8> {
    let (grid, entries) = evi_lab::orchestrate::transform_table(cfg)?;
    let dir = artifact_dir(cfg, &out);
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating artifact directory {}", dir.display()))?;
    let path = dir.join("transform.csv");
    let mut w = csv::Writer::from_path(&path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["index", "value", "witness"])?;
    for (i, e) in entries.iter().enumerate() {
        w.write_record([
            i.to_string(),
            format!("{:.16e}", e.value),
            e.witness.map_or(String::new(), |x| x.to_string()),
        ])?;
    }
    w.flush()?;
    println!(
        "transform {}: {} entries over {} grid points -> {}",
        cfg.name,
        entries.len(),
        grid.len(),
        path.display()
    );
    Ok(0)
}

fn run_presets(write: Option<PathBuf>) -> Result<u8> {
    match write {
        None => {
            for p in presets::PRESETS {
                println!("{:<26} exit {}  {}", p.name, p.expected_exit, p.summary);
            }
        }
        Some(dir) => {
            std::fs::create_dir_all(&dir)
                .with_context(|| format!("creating {}", dir.display()))?;
            for p in presets::PRESETS {
                let path: &Path = &dir.join(format!("{}.toml", p.name));
                std::fs::write(path, p.toml)
                    .with_context(|| format!("writing {}", path.display()))?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(0)
}
