//! Experiment orchestration: materialize a parsed config into live objects,
//! fan the requested checks out over a thread pool, and fold the results
//! into one report document with a byte-stable canonical form.

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use evi_core::certify::{
    check_cross_concave, check_cross_convex, check_nncc_segment,
    check_semiconvex_along_segment, midpoint_concavity_check, MetricEval, SegmentProvider,
    SlackKind,
};
use evi_core::costs::CostFn;
use evi_core::energy::{Energy, SplitEnergy};
use evi_core::evi::{
    apriori_gap, asymptotic_report, contraction_report, energy_identity_report,
    evi_differential_residual, evi_exponential_residual, evi_integral_residual,
    local_stationarity_residual, speed_decay_report, ContinuousCurve,
};
use evi_core::report::{CheckReport, SweepBuilder, Verdict, WorstLocation};
use evi_core::scheme::{
    cauchy_gap, discrete_evi_residual, dyadic_ladder, error_vs_reference, monotonicity_report,
    Ladder, LadderSpec, ResidualForm, SchemeDriver,
};
use evi_core::sinkhorn::{sinkhorn_divergence, SinkhornConfig};
use evi_core::space::{DensitySpace, FiniteSpace, Point};
use evi_core::transform::Solver;

use crate::config::ExperimentConfig;

/// Hard cap on total scheme steps a fallback reference ladder may take.
const REFERENCE_STEP_BUDGET: f64 = 2_000_000.0;

/// Checks that compare a run or a certificate against the continuous-time
/// reference curve, and therefore force the oracle to be built.
const REFERENCE_CHECKS: &[&str] = &[
    "error_vs_reference",
    "contraction",
    "energy_identity",
    "evi_integral",
    "evi_exponential",
    "evi_differential",
    "stationarity",
    "speed_decay",
    "asymptotics",
    "apriori",
];

/// Honor `EVI_LAB_WORKERS` once per process; later calls are no-ops.
fn init_workers() {
    static INIT: OnceLock<()> = OnceLock::new();
    INIT.get_or_init(|| {
        if let Ok(v) = std::env::var("EVI_LAB_WORKERS") {
            if let Ok(n) = v.parse::<usize>() {
                if n > 0 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    });
}

/// The continuous-time oracle a config resolves to: an analytic flow when
/// the registry has one, otherwise the interpolant of a ladder refined two
/// levels past the configured depth.
pub struct Reference {
    pub curve: ContinuousCurve,
    pub tag: String,
    /// Step size of the interpolant; `None` for analytic curves.
    pub interp_tau: Option<f64>,
}

/// A fully materialized experiment. Everything here is immutable during the
/// check fan-out, so the dispatchers can run in parallel.
pub struct Instance {
    pub cfg: ExperimentConfig,
    /// The checks that will actually run, in config order.
    pub checks: Vec<String>,
    pub cost: CostFn,
    pub g: Energy,
    pub f: Option<Energy>,
    pub se: Option<SplitEnergy>,
    /// Total driving energy: `g` for implicit schemes, `f + g` for splitting.
    pub phi: Energy,
    /// Total claimed convexity modulus, `lambda_f + lambda_g`.
    pub lambda: f64,
    pub solver: Solver,
    pub grid: Option<FiniteSpace>,
    pub density: Option<Arc<DensitySpace>>,
    /// Residual sweeps evaluate against these points.
    pub test_points: FiniteSpace,
    pub ladder: Option<Ladder>,
    /// Uniform time grid over the ladder's adjusted horizon.
    pub checkpoints: Vec<f64>,
    pub reference: Option<Reference>,
    /// Second flow for the contraction check, from `contraction_alt_x0`.
    pub reference_alt: Option<Reference>,
    /// Sup norm of the start point; scales finite-difference tolerances.
    pub x0_norm: f64,
}

impl Instance {
    pub fn build(cfg: &ExperimentConfig, filter: Option<&[String]>) -> Result<Self> {
        let checks: Vec<String> = match filter {
            Some(f) => cfg.checks.iter().filter(|c| f.contains(c)).cloned().collect(),
            None => cfg.checks.clone(),
        };
        if checks.is_empty() {
            bail!(
                "no requested check survives the filter; config lists: {}",
                cfg.checks.join(", ")
            );
        }

        let cost = cfg.build_cost()?;
        let g = cfg.build_g()?;
        let f = cfg.build_f()?;
        let se = cfg.build_split_energy()?;
        let phi = match &se {
            Some(se) => se.phi(),
            None => g.clone(),
        };
        let lambda = cfg.scheme.as_ref().map_or(0.0, |s| s.lambda_f + s.lambda_g);
        let solver = cfg.build_solver()?;

        let (grid, density) = if cfg.is_density() {
            (None, Some(cfg.build_density_space()?))
        } else {
            (Some(cfg.build_space_grid()?), None)
        };

        let test_points = match (&grid, &density) {
            (Some(grid), _) => subsample_grid(grid, cfg.sweeps.test_points)?,
            (_, Some(space)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                // Segment-style certificates need three distinct endpoints.
                let want = cfg.sweeps.test_points.max(3);
                sample_density_set(&mut rng, space, want)?
            }
            _ => unreachable!("config validation admits exactly one space kind"),
        };

        let (ladder, checkpoints) = match &cfg.scheme {
            Some(s) => {
                let spec = LadderSpec {
                    driver: build_driver(&g, &se, &solver, s.kind.as_str())?,
                    cost: cost.clone(),
                    tau: s.tau,
                    horizon: s.horizon,
                    levels: s.ladder_depth,
                    x0: cfg.build_x0()?,
                };
                let ladder = dyadic_ladder(&spec).context("running the configured scheme ladder")?;
                let checkpoints = ladder.checkpoints(cfg.sweeps.checkpoints)?;
                (Some(ladder), checkpoints)
            }
            None => (None, Vec::new()),
        };

        let needs_reference = checks.iter().any(|c| REFERENCE_CHECKS.contains(&c.as_str()));
        let reference = if needs_reference {
            let s = cfg.scheme.as_ref().expect("validated: reference checks need a scheme");
            Some(build_reference(cfg, &cost, &g, &se, &solver, &s.x0)?)
        } else {
            None
        };
        let reference_alt = if checks.iter().any(|c| c == "contraction") {
            let alt = cfg
                .sweeps
                .contraction_alt_x0
                .clone()
                .expect("validated: contraction carries an alternate start");
            Some(build_reference(cfg, &cost, &g, &se, &solver, &alt)?)
        } else {
            None
        };

        let x0_norm = cfg
            .scheme
            .as_ref()
            .map_or(0.0, |s| s.x0.iter().fold(0.0f64, |a, v| a.max(v.abs())));

        Ok(Instance {
            cfg: cfg.clone(),
            checks,
            cost,
            g,
            f,
            se,
            phi,
            lambda,
            solver,
            grid,
            density,
            test_points,
            ladder,
            checkpoints,
            reference,
            reference_alt,
            x0_norm,
        })
    }

    fn reference(&self) -> Result<&Reference> {
        self.reference
            .as_ref()
            .ok_or_else(|| anyhow!("internal: reference oracle was not built"))
    }

    fn ladder(&self) -> Result<&Ladder> {
        self.ladder
            .as_ref()
            .ok_or_else(|| anyhow!("internal: no scheme ladder for a scheme-bound check"))
    }

    /// Finite-difference width ladder. Analytic references take the
    /// configured steps; interpolants cannot resolve widths below their own
    /// step, so the ladder snaps to multiples of it.
    fn probe_hs(&self) -> (Vec<f64>, Option<String>) {
        match self.reference.as_ref().and_then(|r| r.interp_tau) {
            Some(tau) => (
                vec![4.0 * tau, 2.0 * tau, tau],
                Some(format!(
                    "width ladder snapped to the reference interpolant resolution (tau = {tau:.3e})"
                )),
            ),
            None => {
                let mut hs = self.cfg.sweeps.fd_steps.clone();
                hs.sort_by(|a, b| b.partial_cmp(a).expect("finite widths"));
                hs.dedup();
                (hs, None)
            }
        }
    }

    /// Largest per-axis spacing of the configured euclidean grid.
    fn grid_spacing(&self) -> Option<f64> {
        let min = self.cfg.space.min.as_ref()?;
        let max = self.cfg.space.max.as_ref()?;
        let count = self.cfg.space.count?;
        Some(
            min.iter()
                .zip(max.iter())
                .map(|(a, b)| (b - a) / (count - 1) as f64)
                .fold(0.0f64, f64::max),
        )
    }

    /// Velocity bias a state-quantizing inner solver can impose on an
    /// interpolant reference: about half the grid spacing per step. The
    /// bias is systematic, so the width ladder cannot detect it.
    fn quantization_bias(&self) -> f64 {
        let Some(tau) = self.reference.as_ref().and_then(|r| r.interp_tau) else {
            return 0.0;
        };
        if !matches!(self.solver, Solver::Exhaustive { .. }) {
            return 0.0;
        }
        let spacing = self.grid_spacing().unwrap_or(0.0);
        0.5 * spacing / tau * (1.0 + self.x0_norm)
    }

    /// Derivative probes of a quantized interpolant are biased beyond what
    /// the tolerance can absorb: neither a pass nor a failure is evidence
    /// about the continuous flow, so the verdict drops to inconclusive.
    fn apply_quantization_guard(&self, rep: &mut CheckReport) {
        let bias = self.quantization_bias();
        if bias > rep.tolerance {
            rep.verdict = Verdict::Inconclusive;
            rep.pass = false;
            rep.notes.push(format!(
                "the exhaustive solver quantizes states at spacing {:.1e}, biasing derivative \
                 probes by up to {bias:.1e} (over the {:.1e} tolerance); verdicts at this \
                 resolution are not resolvable",
                self.grid_spacing().unwrap_or(0.0),
                rep.tolerance,
            ));
        }
    }

    /// Checkpoints far enough from both ends for two-sided differences of
    /// the widest probe step.
    fn interior_times(&self, hs: &[f64]) -> Vec<f64> {
        let hmax = hs.first().copied().unwrap_or(0.0);
        let horizon = self.checkpoints.last().copied().unwrap_or(0.0);
        self.checkpoints
            .iter()
            .copied()
            .filter(|&t| t >= hmax && t + hmax <= horizon)
            .collect()
    }

    fn pair_windows(&self) -> Vec<(f64, f64)> {
        self.checkpoints.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Uniform grid on `[0, 1]` with exact endpoints, for segment sweeps.
    fn unit_grid(&self) -> Vec<f64> {
        let n = self.cfg.sweeps.checkpoints.max(2);
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    fn segment_provider(&self) -> SegmentProvider {
        if self.cfg.is_density() {
            SegmentProvider::linear_weights()
        } else {
            SegmentProvider::linear_coordinates()
        }
    }

    /// Domain for the dual-step certificates: the full grid on euclidean
    /// spaces, the sampled densities otherwise.
    fn certify_domain(&self) -> &FiniteSpace {
        match &self.grid {
            Some(g) => g,
            None => &self.test_points,
        }
    }
}

fn build_driver(
    g: &Energy,
    se: &Option<SplitEnergy>,
    solver: &Solver,
    kind: &str,
) -> Result<SchemeDriver> {
    Ok(match kind {
        "implicit" => SchemeDriver::Implicit { g: g.clone(), solver: solver.clone() },
        "splitting" => SchemeDriver::Splitting {
            se: se.clone().ok_or_else(|| anyhow!("internal: splitting without a split energy"))?,
            q_solver: solver.clone(),
            p_solver: solver.clone(),
        },
        other => bail!("internal: unknown scheme kind `{other}`"),
    })
}

/// Resolve the continuous-time oracle for a configured flow started at
/// `start`. Quadratic energies under the squared-euclidean cost flow along
/// an exponential in closed form; everything else falls back to a ladder
/// two dyadic levels finer than the configured one, within a step budget.
fn build_reference(
    cfg: &ExperimentConfig,
    cost: &CostFn,
    g: &Energy,
    se: &Option<SplitEnergy>,
    solver: &Solver,
    start: &[f64],
) -> Result<Reference> {
    let s = cfg.scheme.as_ref().ok_or_else(|| anyhow!("reference oracles need a scheme"))?;
    if !cfg.is_density() && cfg.cost.label == "sq_euclid" && s.kind == "implicit" {
        let alpha = match cfg.energy.g.label.as_str() {
            "zero" => Some(0.0),
            "quadratic" => Some(1.0),
            "quadratic_scaled" => cfg.energy.g.alpha,
            _ => None,
        };
        if let Some(a) = alpha {
            let x0 = start.to_vec();
            let phi0 = 0.5 * a * x0.iter().map(|v| v * v).sum::<f64>();
            let tag = "closed_form:quadratic".to_string();
            let curve = ContinuousCurve::closed_form(
                tag.clone(),
                f64::INFINITY,
                Arc::new(move |t| {
                    Point::euclidean(x0.iter().map(|&v| v * (-a * t).exp()).collect())
                }),
            )?
            .with_phi_along(Arc::new(move |t| Ok(phi0 * (-2.0 * a * t).exp())));
            return Ok(Reference { curve, tag, interp_tau: None });
        }
    }

    let levels = s.ladder_depth + 2;
    let n0 = (s.horizon / s.tau).round().max(1.0);
    let total = n0 * (1u64 << levels.min(62)) as f64;
    if total > REFERENCE_STEP_BUDGET {
        bail!(
            "reference ladder would take {total:.0} steps, over the {REFERENCE_STEP_BUDGET:.0} budget"
        );
    }
    let spec = LadderSpec {
        driver: build_driver(g, se, solver, s.kind.as_str())?,
        cost: cost.clone(),
        tau: s.tau,
        horizon: s.horizon,
        levels,
        x0: cfg.point_from_raw(start)?,
    };
    let lad = dyadic_ladder(&spec).context("running the reference ladder")?;
    if let Some(l) = lad.failed_level {
        bail!("reference ladder failed at level {l}: {}", lad.notes.join("; "));
    }
    let tag = format!("ladder:{levels}");
    let tau_fine = lad.finest().tau;
    let curve = ContinuousCurve::from_trajectory(lad.finest().x_trajectory()?)
        .with_label(tag.clone());
    Ok(Reference { curve, tag, interp_tau: Some(tau_fine) })
}

/// Draw one density whose ratios stay strictly inside the box: a normalized
/// exponential sample, shrunk toward the reference until every ratio sits
/// within 90% of the box's distance to 1.
fn sample_density(rng: &mut ChaCha8Rng, space: &Arc<DensitySpace>) -> Result<Point> {
    let n = space.len();
    let mut raw: Vec<f64> = (0..n)
        .map(|_| -(rng.gen_range(1e-12..1.0f64)).ln())
        .collect();
    let tot: f64 = raw.iter().sum();
    for w in &mut raw {
        *w /= tot;
    }
    let r = space.reference();
    let (lo, hi) = space.bounds();
    let hi_eff = 1.0 + 0.9 * (hi - 1.0);
    let lo_eff = 1.0 - 0.9 * (1.0 - lo);
    let mut s = 1.0f64;
    for i in 0..n {
        let q = raw[i] / r[i];
        if q > 1.0 {
            s = s.min((hi_eff - 1.0) / (q - 1.0));
        } else if q < 1.0 {
            s = s.min((1.0 - lo_eff) / (1.0 - q));
        }
    }
    let s = s.clamp(0.0, 1.0);
    let w: Vec<f64> = (0..n).map(|i| r[i] + s * (raw[i] - r[i])).collect();
    Ok(Point::density(w, space.clone())?)
}

fn sample_density_set(
    rng: &mut ChaCha8Rng,
    space: &Arc<DensitySpace>,
    count: usize,
) -> Result<FiniteSpace> {
    let mut pts: Vec<Point> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while pts.len() < count {
        attempts += 1;
        if attempts > 100 * count + 100 {
            bail!("could not draw {count} distinct densities");
        }
        let p = sample_density(rng, space)?;
        if !pts.contains(&p) {
            pts.push(p);
        }
    }
    Ok(FiniteSpace::new(pts)?)
}

/// Evenly spaced subsample of a grid, always keeping both extremes.
fn subsample_grid(grid: &FiniteSpace, count: usize) -> Result<FiniteSpace> {
    let n = grid.len();
    let k = count.clamp(1, n);
    let mut idx: Vec<usize> = (0..k)
        .map(|i| {
            if k == 1 {
                0
            } else {
                ((i as f64) * (n - 1) as f64 / (k - 1) as f64).round() as usize
            }
        })
        .collect();
    idx.dedup();
    let pts: Vec<Point> = idx.into_iter().map(|i| grid.points()[i].clone()).collect();
    Ok(FiniteSpace::new(pts)?)
}

fn verdict_rank(v: Verdict) -> u8 {
    match v {
        Verdict::Pass => 0,
        Verdict::Inconclusive => 1,
        Verdict::Fail => 2,
    }
}

fn worse(a: Verdict, b: Verdict) -> Verdict {
    if verdict_rank(b) > verdict_rank(a) {
        b
    } else {
        a
    }
}

/// A check that could not produce observations at all.
fn inconclusive_report(name: &str, msg: impl Into<String>) -> CheckReport {
    CheckReport {
        check_name: name.to_string(),
        pass: false,
        verdict: Verdict::Inconclusive,
        worst_residual: 0.0,
        worst_location: WorstLocation::default(),
        tolerance: 0.0,
        engineering_slack: 0.0,
        runtime_ms: 0.0,
        notes: vec![msg.into()],
    }
}

/// Fold sub-reports into one named report. With a shared tolerance the worst
/// raw residual carries over; with heterogeneous tolerances the residual
/// becomes the largest excess over each part's own bar, against a zero
/// tolerance. The verdict is always the worst across parts.
pub fn merge_reports(name: &str, parts: Vec<CheckReport>) -> CheckReport {
    if parts.is_empty() {
        return inconclusive_report(name, "no sub-checks produced a report");
    }
    let mut verdict = Verdict::Pass;
    for p in &parts {
        verdict = worse(verdict, p.verdict);
    }
    let uniform = parts
        .windows(2)
        .all(|w| w[0].tolerance == w[1].tolerance && w[0].engineering_slack == w[1].engineering_slack);
    let mut notes: Vec<String> = Vec::new();
    let (worst, location, tolerance, slack) = if uniform {
        let mut w = f64::NEG_INFINITY;
        let mut loc = WorstLocation::default();
        for p in &parts {
            if p.worst_residual > w {
                w = p.worst_residual;
                loc = p.worst_location.clone();
            }
        }
        (w, loc, parts[0].tolerance, parts[0].engineering_slack)
    } else {
        notes.push(
            "parts carry different tolerances; worst_residual is the largest excess over each part's own bar"
                .into(),
        );
        let mut w = f64::NEG_INFINITY;
        let mut loc = WorstLocation::default();
        for p in &parts {
            let e = p.worst_residual - p.tolerance;
            if e > w {
                w = e;
                loc = p.worst_location.clone();
            }
        }
        (w, loc, 0.0, 0.0)
    };
    for p in &parts {
        notes.push(format!(
            "part {}: {}, worst {:+.3e} against {:.3e}",
            p.check_name,
            p.verdict.as_str(),
            p.worst_residual,
            p.tolerance
        ));
        for n in p.notes.iter().take(4) {
            notes.push(format!("  [{}] {n}", p.check_name));
        }
    }
    CheckReport {
        check_name: name.to_string(),
        pass: verdict == Verdict::Pass,
        verdict,
        worst_residual: worst,
        worst_location: location,
        tolerance,
        engineering_slack: slack,
        runtime_ms: 0.0,
        notes,
    }
}

fn run_error_vs_reference(inst: &Instance) -> Result<CheckReport> {
    let ladder = inst.ladder()?;
    let rf = inst.reference()?;
    let phi_inf = inst
        .phi
        .lower_bound()
        .ok_or_else(|| anyhow!("'{}' exposes no lower bound for the a-priori error budget", inst.phi.label()))?;
    let eval = |t: f64| rf.curve.at(t);
    let mut parts = Vec::with_capacity(ladder.runs.len());
    for run in &ladder.runs {
        parts.push(error_vs_reference(run, &eval, &inst.cost, phi_inf, &inst.checkpoints)?);
    }
    let mut rep = merge_reports("error_vs_reference", parts);
    rep.notes.insert(0, format!("reference: {}", rf.tag));
    Ok(rep)
}

fn run_cauchy(inst: &Instance) -> Result<CheckReport> {
    let ladder = inst.ladder()?;
    if ladder.runs.len() < 2 {
        return Ok(inconclusive_report(
            "cauchy",
            "ladder holds a single level; set scheme.ladder_depth >= 1 to compare refinements",
        ));
    }
    let mut parts = Vec::new();
    for i in 0..ladder.runs.len() {
        for j in (i + 1)..ladder.runs.len() {
            parts.push(cauchy_gap(&ladder.runs[i], &ladder.runs[j], &inst.cost, &inst.checkpoints)?);
        }
    }
    Ok(merge_reports("cauchy", parts))
}

fn run_contraction(inst: &Instance) -> Result<CheckReport> {
    let a = inst.reference()?;
    let b = inst
        .reference_alt
        .as_ref()
        .ok_or_else(|| anyhow!("internal: contraction alternate flow was not built"))?;
    let mut pairs = inst.pair_windows();
    if inst.checkpoints.len() >= 2 {
        pairs.push((inst.checkpoints[0], *inst.checkpoints.last().unwrap()));
    }
    // Analytic flows satisfy the decay to roundoff; interpolants only to
    // their step size.
    let tol = match (a.interp_tau, b.interp_tau) {
        (None, None) => 1e-9,
        _ => {
            let tau = a.interp_tau.unwrap_or(0.0).max(b.interp_tau.unwrap_or(0.0));
            10.0 * tau * (1.0 + inst.lambda.abs())
        }
    };
    let mut rep = contraction_report(&inst.cost, &a.curve, &b.curve, inst.lambda, &pairs, tol)?;
    rep.notes.insert(0, format!("flows: {} vs {}", a.tag, b.tag));
    Ok(rep)
}

fn run_energy_identity(inst: &Instance) -> Result<CheckReport> {
    let rf = inst.reference()?;
    let (hs, snap) = inst.probe_hs();
    let times = inst.interior_times(&hs);
    if times.is_empty() {
        bail!("no checkpoint is interior enough for the width ladder");
    }
    let mut rep = energy_identity_report(&rf.curve, &inst.phi, &inst.cost, &times, &hs)?;
    if let Some(n) = snap {
        rep.notes.push(n);
    }
    inst.apply_quantization_guard(&mut rep);
    Ok(rep)
}

fn run_discrete_evi(inst: &Instance) -> Result<CheckReport> {
    let ladder = inst.ladder()?;
    let s = inst.cfg.scheme.as_ref().expect("validated: discrete_evi needs a scheme");
    let form = match (&inst.se, s.kind.as_str()) {
        (Some(se), "splitting") => ResidualForm::Splitting { se },
        (_, "implicit") => ResidualForm::Implicit { g: &inst.g, lambda: s.lambda_g },
        _ => bail!("internal: scheme kind and energies disagree"),
    };
    let mut parts = Vec::with_capacity(ladder.runs.len());
    for run in &ladder.runs {
        parts.push(discrete_evi_residual(run, &inst.cost, &form, &inst.test_points)?);
    }
    Ok(merge_reports("discrete_evi", parts))
}

fn run_evi_integral(inst: &Instance) -> Result<CheckReport> {
    let rf = inst.reference()?;
    evi_integral_residual(
        &rf.curve,
        &inst.phi,
        &inst.cost,
        inst.lambda,
        &inst.test_points,
        &inst.pair_windows(),
        inst.cfg.sweeps.quadrature,
    )
    .map_err(Into::into)
}

fn run_evi_exponential(inst: &Instance) -> Result<CheckReport> {
    let rf = inst.reference()?;
    evi_exponential_residual(
        &rf.curve,
        &inst.phi,
        &inst.cost,
        inst.lambda,
        &inst.test_points,
        &inst.pair_windows(),
    )
    .map_err(Into::into)
}

fn run_evi_differential(inst: &Instance) -> Result<CheckReport> {
    let rf = inst.reference()?;
    let (hs, snap) = inst.probe_hs();
    let times = inst.interior_times(&hs);
    if times.is_empty() {
        bail!("no checkpoint is interior enough for the width ladder");
    }
    let mut rep = evi_differential_residual(
        &rf.curve,
        &inst.phi,
        &inst.cost,
        inst.lambda,
        &inst.test_points,
        &times,
        &hs,
    )?;
    if let Some(n) = snap {
        rep.notes.push(n);
    }
    inst.apply_quantization_guard(&mut rep);
    Ok(rep)
}

fn run_stationarity(inst: &Instance) -> Result<CheckReport> {
    let rf = inst.reference()?;
    let (hs, snap) = inst.probe_hs();
    let times = inst.interior_times(&hs);
    if times.is_empty() {
        bail!("no checkpoint is interior enough for the width ladder");
    }
    let h = *hs.last().expect("nonempty ladder");
    // Velocity error is second order in the step; interpolants are limited
    // by their own resolution instead.
    let tol = match rf.interp_tau {
        None => 10.0 * h * h * (1.0 + inst.x0_norm),
        Some(tau) => 10.0 * tau * (1.0 + inst.x0_norm),
    };
    let mut rep = local_stationarity_residual(&rf.curve, &inst.phi, &inst.cost, &times, h, tol)?;
    if let Some(n) = snap {
        rep.notes.push(n);
    }
    inst.apply_quantization_guard(&mut rep);
    Ok(rep)
}

fn run_phi_monotone(inst: &Instance) -> Result<CheckReport> {
    let ladder = inst.ladder()?;
    let parts: Vec<CheckReport> = ladder.runs.iter().map(monotonicity_report).collect();
    Ok(merge_reports("phi_monotone", parts))
}

fn run_speed_decay(inst: &Instance) -> Result<CheckReport> {
    let rf = inst.reference()?;
    let (hs, snap) = inst.probe_hs();
    let times = inst.interior_times(&hs);
    if times.len() < 2 {
        bail!("speed decay needs at least two interior checkpoints");
    }
    let mut rep = speed_decay_report(&rf.curve, &inst.cost, inst.lambda, &times, &hs)?;
    if let Some(n) = snap {
        rep.notes.push(n);
    }
    inst.apply_quantization_guard(&mut rep);
    Ok(rep)
}

fn run_asymptotics(inst: &Instance) -> Result<CheckReport> {
    let rf = inst.reference()?;
    let xbar = inst.cfg.point_from_raw(
        inst.cfg
            .sweeps
            .asymptotics_xbar
            .as_ref()
            .expect("validated: asymptotics carries a reference minimizer"),
    )?;
    let (hs, snap) = inst.probe_hs();
    let times = inst.interior_times(&hs);
    if times.len() < 2 {
        bail!("asymptotics needs at least two interior checkpoints");
    }
    let t0 = times[0];
    let mut rep = asymptotic_report(
        &rf.curve,
        &inst.phi,
        &inst.cost,
        inst.lambda,
        &xbar,
        t0,
        &times[1..],
        &hs,
    )?;
    if let Some(n) = snap {
        rep.notes.push(n);
    }
    inst.apply_quantization_guard(&mut rep);
    Ok(rep)
}

fn run_apriori(inst: &Instance) -> Result<CheckReport> {
    let rf = inst.reference()?;
    let (hs, snap) = inst.probe_hs();
    let hmax = hs.first().copied().unwrap_or(0.0);
    let horizon = inst.checkpoints.last().copied().unwrap_or(0.0);
    let pairs: Vec<(f64, f64)> = inst
        .pair_windows()
        .into_iter()
        .filter(|&(_, t)| t + hmax <= horizon)
        .collect();
    if pairs.is_empty() {
        bail!("no checkpoint pair leaves room for the speed probe");
    }
    let mut rep = apriori_gap(
        &rf.curve,
        &inst.phi,
        &inst.cost,
        inst.lambda,
        &inst.test_points,
        &pairs,
        &hs,
    )?;
    if let Some(n) = snap {
        rep.notes.push(n);
    }
    inst.apply_quantization_guard(&mut rep);
    Ok(rep)
}

fn run_cross_concave(inst: &Instance) -> Result<CheckReport> {
    let s = inst.cfg.scheme.as_ref().expect("validated: cross_concave needs a scheme");
    let mu = s.lambda_g * s.tau;
    check_cross_concave(&inst.g, &inst.cost, s.tau, mu, inst.certify_domain(), &inst.solver)
        .map_err(Into::into)
}

fn run_cross_convex(inst: &Instance) -> Result<CheckReport> {
    let s = inst.cfg.scheme.as_ref().expect("validated: cross_convex needs a scheme");
    let f = inst
        .f
        .as_ref()
        .ok_or_else(|| anyhow!("validated: cross_convex needs the explicit-side energy"))?;
    let mu = s.lambda_f * s.tau;
    check_cross_convex(f, &inst.cost, s.tau, mu, inst.certify_domain(), &inst.solver)
        .map_err(Into::into)
}

fn run_nncc(inst: &Instance) -> Result<CheckReport> {
    let provider = inst.segment_provider();
    let t_grid = inst.unit_grid();
    let pts = inst.test_points.points();
    if pts.len() < 3 {
        bail!("segment sweeps need at least three test points");
    }
    let (x0, x1, ybar) = match &inst.grid {
        Some(grid) => {
            let g = grid.points();
            (g[0].clone(), g[g.len() - 1].clone(), g[g.len() / 2].clone())
        }
        None => (pts[0].clone(), pts[1].clone(), pts[2].clone()),
    };
    check_nncc_segment(&inst.cost, &provider, &x0, &x1, &ybar, &inst.test_points, &t_grid)
        .map_err(Into::into)
}

fn run_semiconvex(inst: &Instance) -> Result<CheckReport> {
    let provider = inst.segment_provider();
    let t_grid = inst.unit_grid();
    let pts = inst.test_points.points();
    if pts.len() < 2 {
        bail!("segment sweeps need at least two test points");
    }
    let (x0, x) = match &inst.grid {
        Some(grid) => {
            let g = grid.points();
            (g[0].clone(), g[g.len() - 1].clone())
        }
        None => (pts[0].clone(), pts[1].clone()),
    };
    let mut rep = check_semiconvex_along_segment(
        &inst.phi,
        &inst.cost,
        inst.lambda,
        &provider,
        &x0,
        &x,
        &t_grid,
        SlackKind::SquaredTimeGap,
    )?;
    if inst.cfg.scheme.is_none() {
        rep.notes.push("no scheme section: convexity modulus taken as 0".into());
    }
    Ok(rep)
}

fn run_midpoint(inst: &Instance) -> Result<CheckReport> {
    let grid = inst
        .grid
        .as_ref()
        .ok_or_else(|| anyhow!("validated: midpoint runs on a euclidean grid"))?;
    let cost = inst.cost.clone();
    let d: MetricEval = Arc::new(move |a: &Point, b: &Point| Ok((2.0 * cost.eval(a, b)?).sqrt()));
    // Covering radius of the grid: half the largest per-axis spacing.
    let min = inst.cfg.space.min.as_ref().expect("validated euclidean space");
    let max = inst.cfg.space.max.as_ref().expect("validated euclidean space");
    let count = inst.cfg.space.count.expect("validated euclidean space");
    let spacing = min
        .iter()
        .zip(max.iter())
        .map(|(a, b)| (b - a) / (count - 1) as f64)
        .fold(0.0f64, f64::max);
    midpoint_concavity_check(&d, grid, 3, 0.5 * spacing).map_err(Into::into)
}

fn run_sinkhorn_suite(inst: &Instance) -> Result<CheckReport> {
    let space = inst
        .density
        .as_ref()
        .ok_or_else(|| anyhow!("validated: the divergence suite runs on densities"))?;
    let positions: Vec<f64> = (0..space.len()).map(|i| i as f64).collect();
    // Independent stream: reseeding here keeps the draw identical no matter
    // which other checks run.
    let mut rng = ChaCha8Rng::seed_from_u64(inst.cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let pairs: Vec<(Point, Point)> = (0..inst.cfg.sweeps.sinkhorn_pairs)
        .map(|_| Ok((sample_density(&mut rng, space)?, sample_density(&mut rng, space)?)))
        .collect::<Result<_>>()?;
    let mut diag = SweepBuilder::new("sinkhorn_diagonal", 1e-6, 1e-6);
    let mut sym = SweepBuilder::new("sinkhorn_symmetry", 1e-8, 1e-8);
    let mut sign = SweepBuilder::new("sinkhorn_sign", 1e-8, 1e-8);
    for (ei, &eps) in inst.cfg.sweeps.sinkhorn_epsilons.iter().enumerate() {
        let scfg = SinkhornConfig::from_positions(eps, positions.clone())?;
        for (k, (mu, nu)) in pairs.iter().enumerate() {
            let smn = sinkhorn_divergence(mu, nu, &scfg)?;
            let snm = sinkhorn_divergence(nu, mu, &scfg)?;
            let smm = sinkhorn_divergence(mu, mu, &scfg)?;
            let loc = WorstLocation {
                level: Some(ei as u32),
                test_point: Some(k),
                ..Default::default()
            };
            diag.observe(smm.abs(), loc.clone());
            sym.observe((smn - snm).abs(), loc.clone());
            sign.observe(-smn, loc);
        }
    }
    let mut rep = merge_reports(
        "sinkhorn_suite",
        vec![diag.finish(), sym.finish(), sign.finish()],
    );
    rep.notes.insert(
        0,
        format!(
            "{} pairs per regularization, atoms at integer positions",
            inst.cfg.sweeps.sinkhorn_pairs
        ),
    );
    Ok(rep)
}

fn dispatch(inst: &Instance, name: &str) -> Result<CheckReport> {
    match name {
        "error_vs_reference" => run_error_vs_reference(inst),
        "cauchy" => run_cauchy(inst),
        "contraction" => run_contraction(inst),
        "energy_identity" => run_energy_identity(inst),
        "discrete_evi" => run_discrete_evi(inst),
        "evi_integral" => run_evi_integral(inst),
        "evi_exponential" => run_evi_exponential(inst),
        "evi_differential" => run_evi_differential(inst),
        "stationarity" => run_stationarity(inst),
        "phi_monotone" => run_phi_monotone(inst),
        "speed_decay" => run_speed_decay(inst),
        "asymptotics" => run_asymptotics(inst),
        "apriori" => run_apriori(inst),
        "cross_concave" => run_cross_concave(inst),
        "cross_convex" => run_cross_convex(inst),
        "nncc" => run_nncc(inst),
        "semiconvex" => run_semiconvex(inst),
        "midpoint" => run_midpoint(inst),
        "sinkhorn_suite" => run_sinkhorn_suite(inst),
        other => bail!("unknown check `{other}`"),
    }
}

/// Run one check, map failures to inconclusive reports, normalize the name,
/// and apply any configured tolerance override.
fn run_one(inst: &Instance, name: &str) -> CheckReport {
    let started = Instant::now();
    let mut rep = match dispatch(inst, name) {
        Ok(r) => r,
        Err(e) => inconclusive_report(name, format!("could not run: {e:#}")),
    };
    if rep.check_name != name {
        let source = std::mem::replace(&mut rep.check_name, name.to_string());
        rep.notes.insert(0, format!("source: {source}"));
    }
    if let Some(&tol) = inst.cfg.tolerances.get(name) {
        rep.notes.push(format!(
            "tolerance overridden by config: {:.3e} -> {:.3e}",
            rep.tolerance, tol
        ));
        rep.tolerance = tol;
        rep.engineering_slack = rep.engineering_slack.min(tol);
        if rep.verdict != Verdict::Inconclusive {
            rep.verdict = if rep.worst_residual <= tol { Verdict::Pass } else { Verdict::Fail };
            rep.pass = rep.verdict == Verdict::Pass;
        }
    }
    rep.runtime_ms = started.elapsed().as_secs_f64() * 1e3;
    rep
}

/// Map a slate of reports to a process exit code: 1 if anything failed,
/// else 2 if anything was inconclusive, else 0.
pub fn exit_code(checks: &[CheckReport], strict: bool) -> i32 {
    let mut inconclusive = false;
    for r in checks {
        let v = if strict { r.strict_verdict() } else { r.verdict };
        match v {
            Verdict::Fail => return 1,
            Verdict::Inconclusive => inconclusive = true,
            Verdict::Pass => {}
        }
    }
    if inconclusive {
        2
    } else {
        0
    }
}

/// The JSON document a run produces. `canonical_json` zeroes the wall-clock
/// fields so repeated runs of the same config are byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct ReportDocument {
    pub tool: String,
    pub version: String,
    pub config_name: String,
    pub config_fingerprint: String,
    pub seed: u64,
    pub strict_tolerances: bool,
    /// Tag of the continuous-time oracle, when one was built.
    pub reference: Option<String>,
    pub checks: Vec<CheckReport>,
    pub exit_code: i32,
    pub total_runtime_ms: f64,
}

impl ReportDocument {
    pub fn json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.total_runtime_ms = 0.0;
        for r in &mut c.checks {
            r.runtime_ms = 0.0;
        }
        serde_json::to_string_pretty(&c).expect("report serializes")
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub strict_tolerances: bool,
    /// Overrides the config's output directory.
    pub out_dir: Option<PathBuf>,
    pub emit_artifacts: bool,
    /// Restrict to these checks (intersection with the config's list).
    pub check_filter: Option<Vec<String>>,
}

pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ReportDocument> {
    init_workers();
    let started = Instant::now();
    let inst = Instance::build(cfg, opts.check_filter.as_deref())?;

    let dir = if opts.emit_artifacts {
        let base = opts
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
        let dir = base.join(&cfg.name);
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating artifact directory {}", dir.display()))?;
        // Trajectories land before the checks run, so a failing sweep still
        // leaves the raw data behind.
        if cfg.output.trajectories {
            crate::artifacts::write_trajectories(&dir, &inst)?;
        }
        Some(dir)
    } else {
        None
    };

    let checks: Vec<CheckReport> = inst
        .checks
        .par_iter()
        .map(|name| run_one(&inst, name))
        .collect();

    let mut doc = ReportDocument {
        tool: "evi-lab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_name: cfg.name.clone(),
        config_fingerprint: cfg.fingerprint(),
        seed: cfg.seed,
        strict_tolerances: opts.strict_tolerances,
        reference: inst.reference.as_ref().map(|r| r.tag.clone()),
        checks,
        exit_code: 0,
        total_runtime_ms: 0.0,
    };
    doc.exit_code = exit_code(&doc.checks, opts.strict_tolerances);
    doc.total_runtime_ms = started.elapsed().as_secs_f64() * 1e3;

    if let Some(dir) = &dir {
        crate::artifacts::write_reports(dir, &doc)?;
        crate::artifacts::write_violations(dir, &doc)?;
        if cfg.output.plotdata {
            crate::artifacts::write_plotdata(dir, &inst)?;
        }
    }
    Ok(doc)
}

/// Dual-transform table for `evi-lab transform`: the envelope of the
/// explicit-side energy (or `g` when no `f` is configured) over the space's
/// grid, at the configured step size.
pub fn transform_table(
    cfg: &ExperimentConfig,
) -> Result<(FiniteSpace, Vec<evi_core::transform::TransformEntry>)> {
    let cost = cfg.build_cost()?;
    let source = match cfg.build_f()? {
        Some(f) => f,
        None => cfg.build_g()?,
    };
    let tau = cfg.scheme.as_ref().map_or(1.0, |s| s.tau);
    let grid = if cfg.is_density() {
        let space = cfg.build_density_space()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        sample_density_set(&mut rng, &space, cfg.sweeps.test_points.max(3))?
    } else {
        cfg.build_space_grid()?
    };
    let entries = evi_core::transform::c_transform(
        &source,
        &cost,
        tau,
        &Solver::exhaustive(grid.clone()),
        &grid,
    )?;
    Ok((grid, entries))
}
