//! Minimizing-movement machinery: the implicit scheme, the forward-backward
//! splitting scheme, dyadic step-size ladders, and the a posteriori bounds
//! that compare their trajectories (two-grid Cauchy gaps, reference-error
//! bounds, and discrete variational residuals).

use crate::costs::CostFn;
use crate::energy::{Energy, SplitEnergy};
use crate::error::{Error, Result};
use crate::math;
use crate::report::{CheckReport, SweepBuilder, WorstLocation};
use crate::space::{FiniteSpace, Point, Trajectory};
use crate::transform::{argmin_p, argmin_q, argmin_r, member_s, Solver};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Implicit,
    Splitting,
}

impl SchemeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Implicit => "implicit",
            SchemeKind::Splitting => "splitting",
        }
    }
}

/// One iterate with its companion points: `y` the resting point driving the
/// proximal step, `z` the resting point recorded for interpolation bounds,
/// `xi` a stationarity certificate when one exists, and the energy value.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub x: Point,
    pub y: Option<Point>,
    pub z: Option<Point>,
    pub xi: Option<Point>,
    pub phi: f64,
}

/// Marker left behind when an inner solve fails mid-run; the records up to
/// the failing step are preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeFailure {
    pub step: usize,
    pub message: String,
}

/// A completed (or partially completed) scheme run on one step size.
#[derive(Debug, Clone)]
pub struct SchemeRun {
    pub kind: SchemeKind,
    pub tau: f64,
    pub level: u32,
    pub lambda_f: f64,
    pub lambda_g: f64,
    pub records: Vec<IterateRecord>,
    pub failure: Option<SchemeFailure>,
    pub warnings: Vec<String>,
    pub solver_tol: f64,
    pub fingerprint: String,
}

impl SchemeRun {
    /// Piecewise-constant interpolant through the iterates.
    pub fn x_trajectory(&self) -> Result<Trajectory> {
        Trajectory::new(
            self.tau,
            self.records.iter().map(|r| r.x.clone()).collect(),
            self.level,
        )
    }

    /// Interpolant through the recorded resting points, over the prefix where
    /// they exist.
    pub fn z_trajectory(&self) -> Result<Trajectory> {
        let pts: Vec<Point> = self
            .records
            .iter()
            .map_while(|r| r.z.clone())
            .collect();
        Trajectory::new(self.tau, pts, self.level)
    }

    pub fn phi_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.phi).collect()
    }

    pub fn horizon(&self) -> f64 {
        self.tau * (self.records.len().saturating_sub(1)) as f64
    }
}

fn push_warning(warnings: &mut Vec<String>, msg: String) {
    const CAP: usize = 16;
    if warnings.len() < CAP {
        warnings.push(msg);
    } else if warnings.len() == CAP {
        warnings.push("further warnings suppressed".into());
    }
}

fn monotone_slack(solver_tol: f64, phi: f64) -> f64 {
    10.0 * solver_tol + 1e-12 * (1.0 + math::abs(phi))
}

/// Implicit minimizing movement: alternate resting points and proximal steps
/// of `g`. A failing inner solve leaves a partial run with a failure marker
/// instead of an error.
pub fn run_implicit(
    g: &Energy,
    c: &CostFn,
    tau: f64,
    x0: &Point,
    n_steps: usize,
    solver: &Solver,
) -> Result<SchemeRun> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {tau}")));
    }
    let mut run = SchemeRun {
        kind: SchemeKind::Implicit,
        tau,
        level: 0,
        lambda_f: 0.0,
        lambda_g: 0.0,
        records: Vec::with_capacity(n_steps + 1),
        failure: None,
        warnings: Vec::new(),
        solver_tol: solver.tolerance(),
        fingerprint: format!(
            "implicit|c={}|g={}|tau={tau:e}|steps={n_steps}",
            c.label(),
            g.label()
        ),
    };
    let mut x = x0.clone();
    let mut phi = g.value_finite(&x).map_err(|_| {
        Error::OutOfDomain(format!("initial state is outside the domain of '{}'", g.label()))
    })?;

    for i in 0..=n_steps {
        let rest = match argmin_r(c, &x, solver) {
            Ok(o) => o,
            Err(e) => {
                run.records.push(IterateRecord {
                    x: x.clone(),
                    y: None,
                    z: None,
                    xi: None,
                    phi,
                });
                run.failure = Some(SchemeFailure {
                    step: i,
                    message: format!("resting-point solve failed: {e}"),
                });
                return Ok(run);
            }
        };
        let xi = c.is_dissipative().then(|| x.clone());
        run.records.push(IterateRecord {
            x: x.clone(),
            y: Some(rest.point.clone()),
            z: Some(rest.point.clone()),
            xi,
            phi,
        });
        if i == n_steps {
            break;
        }
        match argmin_p(g, c, tau, &rest.point, solver) {
            Ok(o) => {
                for w in o.warnings {
                    push_warning(&mut run.warnings, format!("step {i}: {w}"));
                }
                let next_phi = match g.value_finite(&o.point) {
                    Ok(v) => v,
                    Err(e) => {
                        run.failure = Some(SchemeFailure {
                            step: i,
                            message: format!("proximal point left the domain: {e}"),
                        });
                        return Ok(run);
                    }
                };
                if next_phi > phi + monotone_slack(run.solver_tol, phi) {
                    push_warning(
                        &mut run.warnings,
                        format!("step {i}: energy increased by {:.3e}", next_phi - phi),
                    );
                }
                x = o.point;
                phi = next_phi;
            }
            Err(e) => {
                run.failure = Some(SchemeFailure {
                    step: i,
                    message: format!("proximal solve failed: {e}"),
                });
                return Ok(run);
            }
        }
    }
    Ok(run)
}

/// Forward-backward splitting: a dual step of `f`, then a proximal step of
/// `g`, recording resting points and stationarity certificates along the way.
pub fn run_splitting(
    se: &SplitEnergy,
    c: &CostFn,
    tau: f64,
    x0: &Point,
    n_steps: usize,
    q_solver: &Solver,
    p_solver: &Solver,
) -> Result<SchemeRun> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {tau}")));
    }
    if tau >= se.tau_bar() {
        return Err(Error::InvalidArgument(format!(
            "step size {tau} must stay below the ceiling {}",
            se.tau_bar()
        )));
    }
    let mut run = SchemeRun {
        kind: SchemeKind::Splitting,
        tau,
        level: 0,
        lambda_f: se.lambda_f(),
        lambda_g: se.lambda_g(),
        records: Vec::with_capacity(n_steps + 1),
        failure: None,
        warnings: Vec::new(),
        solver_tol: q_solver.tolerance().max(p_solver.tolerance()),
        fingerprint: format!(
            "splitting|c={}|f={}|g={}|tau={tau:e}|steps={n_steps}",
            c.label(),
            se.f().label(),
            se.g().label()
        ),
    };
    let mut x = x0.clone();
    let mut phi = se
        .phi_value(&x)?
        .expect_finite("initial state under f + g")?;
    let mut noted_empty_s = false;

    for i in 0..=n_steps {
        let xi = if c.is_dissipative() {
            Some(x.clone())
        } else {
            match member_s(c, &x, q_solver) {
                Ok(o) => Some(o.point),
                Err(Error::EmptySet(_)) => {
                    if !noted_empty_s {
                        push_warning(
                            &mut run.warnings,
                            format!("step {i}: no stationarity certificate found; recording none"),
                        );
                        noted_empty_s = true;
                    }
                    None
                }
                Err(e) => {
                    run.records.push(IterateRecord { x: x.clone(), y: None, z: None, xi: None, phi });
                    run.failure = Some(SchemeFailure {
                        step: i,
                        message: format!("stationarity solve failed: {e}"),
                    });
                    return Ok(run);
                }
            }
        };
        let z = match argmin_r(c, &x, q_solver) {
            Ok(o) => o.point,
            Err(e) => {
                run.records.push(IterateRecord { x: x.clone(), y: None, z: None, xi, phi });
                run.failure = Some(SchemeFailure {
                    step: i,
                    message: format!("resting-point solve failed: {e}"),
                });
                return Ok(run);
            }
        };
        let y = match argmin_q(se.f(), c, tau, &x, q_solver) {
            Ok(o) => {
                for w in o.warnings {
                    push_warning(&mut run.warnings, format!("step {i}: {w}"));
                }
                o.point
            }
            Err(e) => {
                run.records.push(IterateRecord { x: x.clone(), y: None, z: Some(z), xi, phi });
                run.failure = Some(SchemeFailure {
                    step: i,
                    message: format!("dual solve failed: {e}"),
                });
                return Ok(run);
            }
        };
        run.records.push(IterateRecord {
            x: x.clone(),
            y: Some(y.clone()),
            z: Some(z),
            xi,
            phi,
        });
        if i == n_steps {
            break;
        }
        match argmin_p(se.g(), c, tau, &y, p_solver) {
            Ok(o) => {
                for w in o.warnings {
                    push_warning(&mut run.warnings, format!("step {i}: {w}"));
                }
                let next_phi = match se.phi_value(&o.point)?.expect_finite("f + g along the run") {
                    Ok(v) => v,
                    Err(e) => {
                        run.failure = Some(SchemeFailure {
                            step: i,
                            message: format!("proximal point left the domain: {e}"),
                        });
                        return Ok(run);
                    }
                };
                if next_phi > phi + monotone_slack(run.solver_tol, phi) {
                    push_warning(
                        &mut run.warnings,
                        format!("step {i}: energy increased by {:.3e}", next_phi - phi),
                    );
                }
                x = o.point;
                phi = next_phi;
            }
            Err(e) => {
                run.failure = Some(SchemeFailure {
                    step: i,
                    message: format!("proximal solve failed: {e}"),
                });
                return Ok(run);
            }
        }
    }
    Ok(run)
}

/// Energy monotonicity along a run: the recorded values must not increase
/// beyond solver accuracy and roundoff.
pub fn monotonicity_report(run: &SchemeRun) -> CheckReport {
    let scale: f64 = run
        .records
        .iter()
        .map(|r| math::abs(r.phi))
        .fold(0.0, f64::max);
    let tol = 10.0 * run.solver_tol + 1e-12 * (1.0 + scale);
    let mut sw = SweepBuilder::new(
        format!("phi_monotone[{}]", run.kind.as_str()),
        tol,
        1e-12 * (1.0 + scale),
    );
    for i in 0..run.records.len().saturating_sub(1) {
        let delta = run.records[i + 1].phi - run.records[i].phi;
        sw.observe(
            delta,
            WorstLocation {
                step: Some(i + 1),
                time: Some((i + 1) as f64 * run.tau),
                ..Default::default()
            },
        );
    }
    if let Some(f) = &run.failure {
        sw.note(format!("run failed at step {}: {}", f.step, f.message));
    }
    sw.finish()
}

/// Which scheme a ladder drives, with its inner solvers.
#[derive(Debug, Clone)]
pub enum SchemeDriver {
    Implicit { g: Energy, solver: Solver },
    Splitting { se: SplitEnergy, q_solver: Solver, p_solver: Solver },
}

impl SchemeDriver {
    fn run(&self, c: &CostFn, tau: f64, x0: &Point, n_steps: usize) -> Result<SchemeRun> {
        match self {
            SchemeDriver::Implicit { g, solver } => run_implicit(g, c, tau, x0, n_steps, solver),
            SchemeDriver::Splitting { se, q_solver, p_solver } => {
                run_splitting(se, c, tau, x0, n_steps, q_solver, p_solver)
            }
        }
    }
}

/// A base step size refined by halving.
#[derive(Debug, Clone)]
pub struct LadderSpec {
    pub driver: SchemeDriver,
    pub cost: CostFn,
    pub tau: f64,
    pub horizon: f64,
    /// Number of halvings; the ladder holds `levels + 1` runs.
    pub levels: u32,
    pub x0: Point,
}

/// Runs of the same flow on dyadically refined step sizes, sharing an
/// adjusted horizon that is an exact multiple of every step size.
#[derive(Debug, Clone)]
pub struct Ladder {
    pub runs: Vec<SchemeRun>,
    pub horizon: f64,
    pub base_tau: f64,
    pub notes: Vec<String>,
    /// First level whose run failed; deeper levels are skipped.
    pub failed_level: Option<u32>,
}

impl Ladder {
    pub fn finest(&self) -> &SchemeRun {
        self.runs.last().expect("a ladder holds at least one run")
    }

    pub fn checkpoints(&self, count: usize) -> Result<Vec<f64>> {
        crate::space::checkpoint_grid(self.horizon, count)
    }
}

/// Resolution guard: the finest step must stay above `1e-6` of the horizon.
pub const LADDER_MIN_REL_STEP: f64 = 1e-6;

pub fn dyadic_ladder(spec: &LadderSpec) -> Result<Ladder> {
    if !(spec.tau.is_finite() && spec.tau > 0.0) || !(spec.horizon.is_finite() && spec.horizon > 0.0) {
        return Err(Error::InvalidArgument(
            "ladder needs positive base step and horizon".into(),
        ));
    }
    let n0 = math::round(spec.horizon / spec.tau) as usize;
    if n0 == 0 {
        return Err(Error::InvalidArgument(format!(
            "horizon {} is shorter than half a base step {}",
            spec.horizon, spec.tau
        )));
    }
    let horizon = spec.tau * n0 as f64;
    let mut notes = Vec::new();
    if math::abs(horizon - spec.horizon) > 1e-12 * spec.horizon {
        notes.push(format!(
            "horizon adjusted from {} to {horizon} to fit whole steps",
            spec.horizon
        ));
    }
    let finest = spec.tau / math::powf(2.0, spec.levels as f64);
    if finest < LADDER_MIN_REL_STEP * horizon {
        return Err(Error::Budget(format!(
            "finest step {finest:.3e} falls below {LADDER_MIN_REL_STEP:e} of the horizon {horizon}; lower the level count"
        )));
    }

    let mut runs = Vec::with_capacity(spec.levels as usize + 1);
    let mut failed_level = None;
    for p in 0..=spec.levels {
        let scale = 1usize << p;
        let mut run = spec
            .driver
            .run(&spec.cost, spec.tau / scale as f64, &spec.x0, n0 * scale)?;
        run.level = p;
        let failed = run.failure.is_some();
        if failed {
            notes.push(format!(
                "level {p} failed at step {}: {}",
                run.failure.as_ref().unwrap().step,
                run.failure.as_ref().unwrap().message
            ));
            failed_level = Some(p);
        }
        runs.push(run);
        if failed {
            notes.push(format!("levels beyond {p} skipped"));
            break;
        }
    }
    Ok(Ladder {
        runs,
        horizon,
        base_tau: spec.tau,
        notes,
        failed_level,
    })
}

/// Two-grid Cauchy bound between a coarse and a fine run of the same scheme,
/// evaluated at the given times snapped down to coarse-grid multiples.
///
/// Implicit runs use the two-sided total-cost bound and require the cost
/// decomposition; splitting runs use the one-sided bound against the coarse
/// resting points. The residual is the negative slack of the bound.
pub fn cauchy_gap(coarse: &SchemeRun, fine: &SchemeRun, c: &CostFn, times: &[f64]) -> Result<CheckReport> {
    if coarse.kind != fine.kind {
        return Err(Error::InvalidArgument(format!(
            "runs come from different schemes: {} vs {}",
            coarse.kind.as_str(),
            fine.kind.as_str()
        )));
    }
    if coarse.tau < fine.tau {
        return Err(Error::InvalidArgument(
            "first run must be the coarser one (larger step size)".into(),
        ));
    }
    if coarse.records.is_empty() || fine.records.is_empty() || coarse.records[0].x != fine.records[0].x {
        return Err(Error::InvalidArgument(
            "runs must share the same initial state".into(),
        ));
    }
    if coarse.kind == SchemeKind::Implicit && c.decomposition().is_none() {
        return Err(Error::Unsupported(format!(
            "the two-sided bound needs a cost decomposition c = c1 + c2 on '{}'",
            c.label()
        )));
    }

    let coarse_x = coarse.x_trajectory()?;
    let fine_x = fine.x_trajectory()?;
    let phi0 = coarse.records[0].phi;
    let solver_tol = coarse.solver_tol.max(fine.solver_tol);
    let tol = 1e-8 + 10.0 * solver_tol;
    let mut sw = SweepBuilder::new(
        format!("cauchy_gap[{}|L{}->L{}]", coarse.kind.as_str(), coarse.level, fine.level),
        tol,
        1e-8,
    );
    if coarse.kind == SchemeKind::Splitting {
        if !c.is_symmetric() {
            sw.note("asymmetric cost: the one-sided bound is heuristic here");
        }
        if coarse.lambda_f < 0.0 || coarse.lambda_g < 0.0 {
            sw.note("negative convexity modulus: the bound sits outside its hypotheses");
        }
    }

    let mut skipped = 0usize;
    for &t in times {
        let k = match coarse_x.index_for(t) {
            Ok(k) => k,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let t_snap = coarse.tau * k as f64;
        let kf = match fine_x.index_for(t_snap) {
            Ok(k) => k,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let xc = &coarse.records[k].x;
        let xf = &fine.records[kf].x;
        let slack = match coarse.kind {
            SchemeKind::Implicit => {
                let budget = coarse.tau * (2.0 * phi0 - coarse.records[k].phi - fine.records[kf].phi);
                budget - (c.eval(xf, xc)? + c.eval(xc, xf)?)
            }
            SchemeKind::Splitting => {
                let zc = match &coarse.records[k].z {
                    Some(z) => z,
                    None => {
                        skipped += 1;
                        continue;
                    }
                };
                let budget = coarse.tau * (phi0 - coarse.records[k].phi);
                budget - c.eval(xf, zc)?
            }
        };
        sw.observe(
            -slack,
            WorstLocation {
                level: Some(fine.level),
                step: Some(k),
                time: Some(t_snap),
                ..Default::default()
            },
        );
    }
    if skipped > 0 {
        sw.note(format!("{skipped} query times fell outside a run or lacked resting points"));
    }
    Ok(sw.finish())
}

/// Compare a run against a reference flow: the interpolant must stay within
/// `2 tau (phi(x0) - inf phi)` of the reference in cost, at every query time.
pub fn error_vs_reference(
    run: &SchemeRun,
    reference: &dyn Fn(f64) -> Result<Point>,
    c: &CostFn,
    phi_inf: f64,
    times: &[f64],
) -> Result<CheckReport> {
    if run.records.is_empty() {
        return Err(Error::InvalidArgument("run holds no iterates".into()));
    }
    let phi0 = run.records[0].phi;
    if !(phi_inf.is_finite() && phi_inf <= phi0) {
        return Err(Error::InvalidArgument(format!(
            "energy infimum {phi_inf} must be finite and at most the initial value {phi0}"
        )));
    }
    let bound = 2.0 * run.tau * (phi0 - phi_inf);
    let traj = run.x_trajectory()?;
    let mut sw = SweepBuilder::new(
        format!("error_vs_reference[{}]", run.kind.as_str()),
        1e-8,
        1e-8,
    );
    sw.note(format!("bound 2 tau (phi0 - inf phi) = {bound:.6e}"));
    for &t in times {
        let xt = traj.interpolate(t)?;
        let rt = reference(t)?;
        let gap = c.eval(xt, &rt)?;
        sw.observe(gap - bound, WorstLocation::at_time(t));
    }
    Ok(sw.finish())
}

/// Which discrete variational inequality to evaluate on a run.
#[derive(Clone)]
pub enum ResidualForm<'a> {
    /// Implicit scheme: the resting-point inequality with modulus `lambda`.
    Implicit { g: &'a Energy, lambda: f64 },
    /// Splitting scheme: the combined `f + g` inequality, plus the `f`-side
    /// inequality wherever stationarity certificates were recorded.
    Splitting { se: &'a SplitEnergy },
}

/// Evaluate the discrete variational residual of every transition against
/// every test point. Positive residuals violate the inequality; the check
/// passes when they all stay within `1e-8` plus solver allowance.
pub fn discrete_evi_residual(
    run: &SchemeRun,
    c: &CostFn,
    form: &ResidualForm<'_>,
    test_points: &FiniteSpace,
) -> Result<CheckReport> {
    let kind_ok = matches!(
        (&form, run.kind),
        (ResidualForm::Implicit { .. }, SchemeKind::Implicit)
            | (ResidualForm::Splitting { .. }, SchemeKind::Splitting)
    );
    if !kind_ok {
        return Err(Error::InvalidArgument(
            "residual form does not match the scheme kind of the run".into(),
        ));
    }
    let tau = run.tau;
    let tol = 1e-8 + 10.0 * run.solver_tol;
    let name = format!("discrete_evi[{}]", run.kind.as_str());
    let mut sw = SweepBuilder::new(name, tol, 1e-8);
    let mut outside = 0usize;
    let mut missing = 0usize;
    let mut f_side_worst = false;

    for i in 0..run.records.len().saturating_sub(1) {
        let (cur, next) = (&run.records[i], &run.records[i + 1]);
        for (ti, x) in test_points.iter().enumerate() {
            let loc = WorstLocation {
                step: Some(i + 1),
                test_point: Some(ti),
                time: Some((i + 1) as f64 * tau),
                level: Some(run.level),
            };
            match form {
                ResidualForm::Implicit { g, lambda } => {
                    let (yi, yn) = match (&cur.y, &next.y) {
                        (Some(a), Some(b)) => (a, b),
                        _ => {
                            missing += 1;
                            continue;
                        }
                    };
                    let gx = match g.value(x)? {
                        crate::value::Value::Finite(v) => v,
                        crate::value::Value::PosInf => {
                            outside += 1;
                            continue;
                        }
                    };
                    let r = (c.eval(x, yn)? - c.eval(x, yi)?) / tau
                        + (c.eval(&next.x, yi)? - c.eval(&next.x, yn)?) / tau
                        + lambda * c.eval(x, yn)?
                        - gx
                        + next.phi;
                    sw.observe(r, loc);
                }
                ResidualForm::Splitting { se } => {
                    let (zi, zn) = match (&cur.z, &next.z) {
                        (Some(a), Some(b)) => (a, b),
                        _ => {
                            missing += 1;
                            continue;
                        }
                    };
                    let phix = match se.phi_value(x)? {
                        crate::value::Value::Finite(v) => v,
                        crate::value::Value::PosInf => {
                            outside += 1;
                            continue;
                        }
                    };
                    let r = (c.eval(x, zn)? - c.eval(x, zi)?) / tau
                        + se.lambda_f() * c.eval(x, zi)?
                        + se.lambda_g() * c.eval(x, zn)?
                        - phix
                        + next.phi;
                    let before = sw.worst_so_far();
                    sw.observe(r, loc.clone());
                    if sw.worst_so_far() > before {
                        f_side_worst = false;
                    }

                    if let (Some(xi), Some(yi)) = (&cur.xi, &cur.y) {
                        let fx = match se.f().value(x)? {
                            crate::value::Value::Finite(v) => v,
                            crate::value::Value::PosInf => {
                                outside += 1;
                                continue;
                            }
                        };
                        let fnext = se.f().value_finite(&next.x)?;
                        let rf = (c.eval(x, yi)? - c.eval(x, xi)?) / tau
                            + (c.eval(&cur.x, xi)? - c.eval(&next.x, yi)?) / tau
                            + se.lambda_f() * (c.eval(x, xi)? - c.eval(&cur.x, xi)?)
                            - fx
                            + fnext;
                        let before = sw.worst_so_far();
                        sw.observe(rf, loc);
                        if sw.worst_so_far() > before {
                            f_side_worst = true;
                        }
                    }
                }
            }
        }
    }
    if outside > 0 {
        sw.note(format!("{outside} test evaluations fell outside an energy domain"));
    }
    if missing > 0 {
        sw.note(format!("{missing} transitions lacked companion points"));
    }
    if f_side_worst {
        sw.note("worst residual comes from the f-side inequality");
    }
    if let Some(f) = &run.failure {
        sw.note(format!("run failed at step {}: {}", f.step, f.message));
    }
    Ok(sw.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{make_kl_cost, make_squared_euclidean};
    use crate::space::DensitySpace;
    use alloc::sync::Arc;
    use alloc::vec;

    fn pt(x: f64) -> Point {
        Point::euclidean(vec![x]).unwrap()
    }

    #[test]
    fn implicit_quadratic_iterates_are_geometric() {
        // x_{i+1} = x_i / (1 + tau): [1, 2/3, 4/9, 8/27] for tau = 1/2.
        let run = run_implicit(
            &Energy::quadratic(),
            &make_squared_euclidean(),
            0.5,
            &pt(1.0),
            3,
            &Solver::closed_form(),
        )
        .unwrap();
        assert!(run.failure.is_none());
        assert_eq!(run.records.len(), 4);
        let expect = [1.0, 2.0 / 3.0, 4.0 / 9.0, 8.0 / 27.0];
        for (r, e) in run.records.iter().zip(expect.iter()) {
            assert!((r.x.coords().unwrap()[0] - e).abs() < 1e-15);
            // Dissipative cost: rest and certificate collapse onto the iterate.
            assert_eq!(r.y.as_ref().unwrap(), &r.x);
            assert_eq!(r.xi.as_ref().unwrap(), &r.x);
            assert!((r.phi - 0.5 * e * e).abs() < 1e-15);
        }
        let mono = monotonicity_report(&run);
        assert!(mono.pass, "{:?}", mono.notes);
    }

    #[test]
    fn splitting_quadratic_iterates_contract_by_the_two_factor_rule() {
        // f = g = alpha/2 |x|^2 with alpha = 1/2 each:
        // y_i = x_i (1 - tau/2), x_{i+1} = y_i / (1 + tau/2).
        let se = SplitEnergy::new(
            Energy::quadratic_scaled(0.5),
            Energy::quadratic_scaled(0.5),
            0.5,
            0.5,
            1.0,
        )
        .unwrap();
        let run = run_splitting(
            &se,
            &make_squared_euclidean(),
            0.2,
            &pt(1.0),
            2,
            &Solver::closed_form(),
            &Solver::closed_form(),
        )
        .unwrap();
        assert!(run.failure.is_none());
        let factor: f64 = 0.9 / 1.1;
        for (i, r) in run.records.iter().enumerate() {
            let e = math::powf(factor, i as f64);
            assert!((r.x.coords().unwrap()[0] - e).abs() < 1e-14, "iterate {i}");
        }
        // Step ceiling is enforced.
        assert!(run_splitting(
            &se,
            &make_squared_euclidean(),
            1.0,
            &pt(1.0),
            2,
            &Solver::closed_form(),
            &Solver::closed_form(),
        )
        .is_err());
    }

    #[test]
    fn solver_failure_leaves_a_partial_run() {
        // No closed form for a custom energy: the very first proximal solve
        // fails and the run keeps its initial record plus the marker.
        let opaque = Energy::custom("opaque", Arc::new(|_| Ok(0.0)), Arc::new(|_| true));
        let run = run_implicit(
            &opaque,
            &make_squared_euclidean(),
            0.5,
            &pt(1.0),
            3,
            &Solver::closed_form(),
        )
        .unwrap();
        let failure = run.failure.expect("expected a failure marker");
        assert_eq!(failure.step, 0);
        assert_eq!(run.records.len(), 1);
        assert_eq!(run.records[0].x, pt(1.0));
    }

    #[test]
    fn mirror_run_fails_honestly_when_the_box_is_too_tight() {
        let sp = DensitySpace::uniform(2, 0.9, 1.1).unwrap();
        let x0 = Point::density(vec![0.5, 0.5], sp).unwrap();
        let run = run_implicit(
            &Energy::linear(vec![0.2, -0.2]),
            &make_kl_cost(),
            1.0,
            &x0,
            3,
            &Solver::closed_form(),
        )
        .unwrap();
        let failure = run.failure.expect("step must leave the tight ratio box");
        assert_eq!(failure.step, 0);
        assert!(failure.message.contains("ratio box"), "{}", failure.message);
    }

    #[test]
    fn ladder_halves_steps_and_adjusts_the_horizon() {
        let spec = LadderSpec {
            driver: SchemeDriver::Implicit {
                g: Energy::quadratic(),
                solver: Solver::closed_form(),
            },
            cost: make_squared_euclidean(),
            tau: 0.5,
            horizon: 0.9,
            levels: 2,
            x0: pt(1.0),
        };
        let ladder = dyadic_ladder(&spec).unwrap();
        assert_eq!(ladder.horizon, 1.0, "0.9 rounds to two whole base steps");
        assert!(!ladder.notes.is_empty());
        assert_eq!(ladder.runs.len(), 3);
        assert_eq!(ladder.runs[0].records.len(), 3);
        assert_eq!(ladder.runs[1].records.len(), 5);
        assert_eq!(ladder.runs[2].records.len(), 9);
        assert_eq!(ladder.finest().level, 2);

        // Resolution guard.
        let deep = LadderSpec { levels: 30, ..spec };
        assert!(matches!(dyadic_ladder(&deep), Err(Error::Budget(_))));
    }

    #[test]
    fn cauchy_gap_holds_for_the_implicit_quadratic_ladder() {
        let spec = LadderSpec {
            driver: SchemeDriver::Implicit {
                g: Energy::quadratic(),
                solver: Solver::closed_form(),
            },
            cost: make_squared_euclidean(),
            tau: 0.25,
            horizon: 2.0,
            levels: 3,
            x0: pt(1.0),
        };
        let ladder = dyadic_ladder(&spec).unwrap();
        let times = ladder.checkpoints(21).unwrap();
        for i in 0..ladder.runs.len() {
            for j in (i + 1)..ladder.runs.len() {
                let r = cauchy_gap(&ladder.runs[i], &ladder.runs[j], &spec.cost, &times).unwrap();
                assert!(r.pass, "levels {i}->{j}: worst {}", r.worst_residual);
            }
        }
    }

    #[test]
    fn cauchy_gap_needs_the_decomposition_for_implicit_runs() {
        let bare = CostFn::new(
            "sq_euclid",
            true,
            true,
            Arc::new(|x: &Point, y: &Point| {
                let d = math::dist2(x.coords()?, y.coords()?);
                Ok(0.5 * d * d)
            }),
        );
        let run = |tau: f64, n: usize| {
            run_implicit(&Energy::quadratic(), &bare, tau, &pt(1.0), n, &Solver::closed_form()).unwrap()
        };
        let coarse = run(0.5, 2);
        let fine = run(0.25, 4);
        assert!(matches!(
            cauchy_gap(&coarse, &fine, &bare, &[1.0]),
            Err(Error::Unsupported(_))
        ));
        // Swapped order is rejected.
        let full = make_squared_euclidean();
        assert!(cauchy_gap(&fine, &coarse, &full, &[1.0]).is_err());
    }

    #[test]
    fn error_vs_reference_for_the_quadratic_flow() {
        let c = make_squared_euclidean();
        let run = run_implicit(&Energy::quadratic(), &c, 0.1, &pt(1.0), 10, &Solver::closed_form()).unwrap();
        let reference = |t: f64| Point::euclidean(vec![math::exp(-t)]);
        let times = crate::space::checkpoint_grid(1.0, 11).unwrap();
        let r = error_vs_reference(&run, &reference, &c, 0.0, &times).unwrap();
        assert!(r.pass, "worst {}", r.worst_residual);

        // The t = 1 window for tau = 0.1 is a frozen oracle: the gap sits
        // between 1e-4 and 2e-4, far inside the 2 tau phi0 = 0.1 budget.
        let x10 = run.records[10].x.coords().unwrap()[0];
        let gap = 0.5 * (x10 - math::exp(-1.0)) * (x10 - math::exp(-1.0));
        assert!(gap > 1e-4 && gap < 2e-4, "gap {gap}");
    }

    #[test]
    fn discrete_residual_accepts_the_contractive_flow_and_rejects_an_inflated_modulus() {
        let c = make_squared_euclidean();
        let run = run_implicit(&Energy::quadratic(), &c, 0.1, &pt(1.0), 20, &Solver::closed_form()).unwrap();
        let grid = FiniteSpace::euclidean_grid_1d(-2.0, 2.0, 11).unwrap();
        let g = Energy::quadratic();
        let ok = discrete_evi_residual(&run, &c, &ResidualForm::Implicit { g: &g, lambda: 1.0 }, &grid).unwrap();
        assert!(ok.pass, "worst {}", ok.worst_residual);

        let bad = discrete_evi_residual(&run, &c, &ResidualForm::Implicit { g: &g, lambda: 5.0 }, &grid).unwrap();
        assert!(!bad.pass);
        assert!(bad.worst_residual >= 1e-3, "an inflated modulus must visibly fail, got {}", bad.worst_residual);
    }

    #[test]
    fn discrete_residual_covers_the_splitting_form() {
        let se = SplitEnergy::new(
            Energy::quadratic_scaled(0.5),
            Energy::quadratic_scaled(0.5),
            0.5,
            0.5,
            1.0,
        )
        .unwrap();
        let c = make_squared_euclidean();
        let run = run_splitting(&se, &c, 0.1, &pt(1.0), 20, &Solver::closed_form(), &Solver::closed_form()).unwrap();
        let grid = FiniteSpace::euclidean_grid_1d(-2.0, 2.0, 11).unwrap();
        let r = discrete_evi_residual(&run, &c, &ResidualForm::Splitting { se: &se }, &grid).unwrap();
        assert!(r.pass, "worst {} notes {:?}", r.worst_residual, r.notes);

        // Mismatched form and kind is a usage error.
        let g = Energy::quadratic();
        assert!(discrete_evi_residual(&run, &c, &ResidualForm::Implicit { g: &g, lambda: 1.0 }, &grid).is_err());
    }
}
