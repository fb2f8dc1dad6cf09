//! On-disk outputs of a run: raw trajectories, the report pair, a violation
//! table, and small plot-ready CSV extracts. Everything is plain CSV or
//! pretty JSON; floats print with full precision so downstream tooling can
//! reproduce residuals bit-for-bit.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use evi_core::report::Verdict;
use evi_core::scheme::SchemeRun;

use crate::orchestrate::{Instance, ReportDocument};

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// One CSV per ladder level: `trajectory_L<level>.csv` with step index,
/// time, every state component, and the energy. No-op without a scheme.
pub fn write_trajectories(dir: &Path, inst: &Instance) -> Result<()> {
    let Some(ladder) = &inst.ladder else { return Ok(()) };
    for run in &ladder.runs {
        let path = dir.join(format!("trajectory_L{}.csv", run.level));
        let mut w = csv::Writer::from_path(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        let dim = run.records.first().map_or(0, |r| r.x.dim());
        let mut header: Vec<String> =
            vec!["level".into(), "step_index".into(), "time".into()];
        let comp = if inst.cfg.is_density() { "w" } else { "x" };
        for i in 0..dim {
            header.push(format!("{comp}{i}"));
        }
        header.push("phi_value".into());
        w.write_record(&header)?;
        for (k, rec) in run.records.iter().enumerate() {
            let mut row: Vec<String> = vec![
                run.level.to_string(),
                k.to_string(),
                fmt(run.tau * k as f64),
            ];
            for v in rec.x.components().unwrap_or(&[]) {
                row.push(fmt(*v));
            }
            row.push(fmt(rec.phi));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// `report.json` keeps wall-clock timings; `report.canonical.json` zeroes
/// them so repeated runs of one config compare byte-for-byte.
pub fn write_reports(dir: &Path, doc: &ReportDocument) -> Result<()> {
    fs::write(dir.join("report.json"), doc.json() + "\n")?;
    fs::write(dir.join("report.canonical.json"), doc.canonical_json() + "\n")?;
    Ok(())
}

/// Every non-passing check, one row each, with the worst observation's
/// location and the first explanatory note.
pub fn write_violations(dir: &Path, doc: &ReportDocument) -> Result<()> {
    let path = dir.join("violations.csv");
    let mut w = csv::Writer::from_path(&path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record([
        "check",
        "verdict",
        "worst_residual",
        "tolerance",
        "level",
        "step",
        "test_point",
        "time",
        "note",
    ])?;
    for r in &doc.checks {
        if r.verdict == Verdict::Pass {
            continue;
        }
        let loc = &r.worst_location;
        let opt_u32 = |v: Option<u32>| v.map_or(String::new(), |x| x.to_string());
        let opt_usize = |v: Option<usize>| v.map_or(String::new(), |x| x.to_string());
        w.write_record([
            r.check_name.clone(),
            r.verdict.as_str().to_string(),
            fmt(r.worst_residual),
            fmt(r.tolerance),
            opt_u32(loc.level),
            opt_usize(loc.step),
            opt_usize(loc.test_point),
            loc.time.map_or(String::new(), fmt),
            r.notes.first().cloned().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run_point_at(run: &SchemeRun, t: f64) -> Option<&evi_core::space::Point> {
    let k = (t / run.tau).floor() as usize;
    run.records.get(k.min(run.records.len().saturating_sub(1))).map(|r| &r.x)
}

/// Three plot extracts:
///  - `plot_phi_vs_t.csv` (level, time, phi): energy decay per level;
///  - `plot_gap_vs_t.csv` (time, cost_gap): finest run against the oracle;
///  - `plot_residual_heat.csv` (level, time, cost_gap_to_finest): how each
///    coarser level tracks the finest one at the checkpoints.
pub fn write_plotdata(dir: &Path, inst: &Instance) -> Result<()> {
    let Some(ladder) = &inst.ladder else { return Ok(()) };

    {
        let path = dir.join("plot_phi_vs_t.csv");
        let mut w = csv::Writer::from_path(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        w.write_record(["level", "time", "phi"])?;
        for run in &ladder.runs {
            for (k, rec) in run.records.iter().enumerate() {
                w.write_record([
                    run.level.to_string(),
                    fmt(run.tau * k as f64),
                    fmt(rec.phi),
                ])?;
            }
        }
        w.flush()?;
    }

    if let Some(rf) = &inst.reference {
        let path = dir.join("plot_gap_vs_t.csv");
        let mut w = csv::Writer::from_path(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        w.write_record(["time", "cost_gap"])?;
        let finest = ladder.finest();
        for &t in &inst.checkpoints {
            let (Some(xr), Ok(xc)) = (run_point_at(finest, t), rf.curve.at(t)) else { continue };
            w.write_record([fmt(t), fmt(inst.cost.eval(xr, &xc)?)])?;
        }
        w.flush()?;
    }

    if ladder.runs.len() >= 2 {
        let path = dir.join("plot_residual_heat.csv");
        let mut w = csv::Writer::from_path(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        w.write_record(["level", "time", "cost_gap_to_finest"])?;
        let finest = ladder.finest();
        for run in &ladder.runs[..ladder.runs.len() - 1] {
            for &t in &inst.checkpoints {
                let (Some(a), Some(b)) = (run_point_at(run, t), run_point_at(finest, t)) else {
                    continue;
                };
                w.write_record([run.level.to_string(), fmt(t), fmt(inst.cost.eval(a, b)?)])?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::orchestrate::{run_experiment, RunOptions};

    fn demo_toml(name: &str, extra: &str) -> String {
        format!(
            r#"
name = "{name}"
checks = ["discrete_evi", "error_vs_reference", "cauchy"]

[space]
kind = "euclidean_grid"
min = [-2.0]
max = [2.0]
count = 21

[cost]
label = "sq_euclid"

[energy.g]
label = "quadratic"

[scheme]
kind = "implicit"
tau = 0.1
horizon = 1.0
ladder_depth = 2
lambda_g = 1.0
x0 = [1.0]
{extra}
"#
        )
    }

    fn read(path: &Path) -> String {
        fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
    }

    fn column_counts(text: &str) -> Vec<usize> {
        text.lines().map(|l| l.split(',').count()).collect()
    }

    #[test]
    fn a_run_writes_the_full_artifact_set() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = parse_config(&demo_toml("artifact-demo", "")).unwrap();
        let opts = RunOptions {
            emit_artifacts: true,
            out_dir: Some(tmp.path().to_path_buf()),
            ..Default::default()
        };
        let doc = run_experiment(&cfg, &opts).unwrap();
        assert_eq!(doc.exit_code, 0);

        let dir = tmp.path().join("artifact-demo");
        for f in [
            "trajectory_L0.csv",
            "trajectory_L1.csv",
            "trajectory_L2.csv",
            "report.json",
            "report.canonical.json",
            "violations.csv",
            "plot_phi_vs_t.csv",
            "plot_gap_vs_t.csv",
            "plot_residual_heat.csv",
        ] {
            assert!(dir.join(f).is_file(), "missing artifact {f}");
        }

        // Level 0: tau = 0.1 over horizon 1 -> 11 records plus a header.
        let traj = read(&dir.join("trajectory_L0.csv"));
        assert_eq!(traj.lines().count(), 12);
        assert!(traj.lines().next().unwrap().starts_with("level,step_index,time,x0,phi_value"));

        // Plot extracts pin their column counts.
        for (file, cols) in [
            ("plot_phi_vs_t.csv", 3),
            ("plot_gap_vs_t.csv", 2),
            ("plot_residual_heat.csv", 3),
        ] {
            let text = read(&dir.join(file));
            let counts = column_counts(&text);
            assert!(!counts.is_empty(), "{file} is empty");
            assert!(
                counts.iter().all(|&c| c == cols),
                "{file}: expected {cols} columns, got {counts:?}"
            );
        }

        // The canonical report parses and carries no timing jitter.
        let canon: serde_json::Value =
            serde_json::from_str(&read(&dir.join("report.canonical.json"))).unwrap();
        assert_eq!(canon["total_runtime_ms"], 0.0);
        for c in canon["checks"].as_array().unwrap() {
            assert_eq!(c["runtime_ms"], 0.0);
        }
        // A passing run leaves only the header behind.
        assert_eq!(read(&dir.join("violations.csv")).lines().count(), 1);
    }

    #[test]
    fn violations_carry_the_failing_check() {
        let tmp = tempfile::tempdir().unwrap();
        let text = demo_toml("violation-demo", "").replace("lambda_g = 1.0", "lambda_g = 5.0");
        let cfg = parse_config(&text).unwrap();
        let opts = RunOptions {
            emit_artifacts: true,
            out_dir: Some(tmp.path().to_path_buf()),
            ..Default::default()
        };
        let doc = run_experiment(&cfg, &opts).unwrap();
        assert_eq!(doc.exit_code, 1);
        let viol = read(&tmp.path().join("violation-demo").join("violations.csv"));
        assert!(viol.lines().count() >= 2, "{viol}");
        assert!(viol.contains("discrete_evi"), "{viol}");
        assert!(viol.contains("fail"), "{viol}");
    }

    #[test]
    fn canonical_reports_from_two_runs_are_byte_identical() {
        let tmp_a = tempfile::tempdir().unwrap();
        let tmp_b = tempfile::tempdir().unwrap();
        let cfg = parse_config(&demo_toml("determinism-demo", "")).unwrap();
        for tmp in [&tmp_a, &tmp_b] {
            let opts = RunOptions {
                emit_artifacts: true,
                out_dir: Some(tmp.path().to_path_buf()),
                ..Default::default()
            };
            run_experiment(&cfg, &opts).unwrap();
        }
        let a = read(&tmp_a.path().join("determinism-demo").join("report.canonical.json"));
        let b = read(&tmp_b.path().join("determinism-demo").join("report.canonical.json"));
        assert_eq!(a, b);
    }
}
