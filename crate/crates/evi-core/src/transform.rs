//! Cost transforms and the four argmin/membership sets behind the schemes:
//! proximal steps, dual resting points, and stationarity certificates.
//!
//! Every operation takes a [`Solver`] choosing between exhaustive grid
//! search, a closed-form registry keyed on (cost label, energy form), and a
//! derivative-free-ish numeric descent for euclidean states. The closed-form
//! rules are enabled only for combinations covered by oracle-equivalence
//! tests in this module.

use crate::costs::CostFn;
use crate::energy::{Energy, EnergyForm};
use crate::error::{Error, Result};
use crate::math;
use crate::report::{CheckReport, SweepBuilder, WorstLocation};
use crate::space::{density_from_raw, FiniteSpace, Point};
use crate::value::Value;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

/// Strategy for the inner minimizations.
#[derive(Debug, Clone)]
pub enum Solver {
    /// Scan an explicit grid; ties resolve to the lowest index.
    Exhaustive { grid: FiniteSpace },
    /// Use the registered closed-form rule for the (cost, energy) pair.
    ClosedForm,
    /// Descent with finite-difference gradients on euclidean points.
    Numeric { tolerance: f64, max_evals: usize },
}

impl Solver {
    pub fn exhaustive(grid: FiniteSpace) -> Self {
        Solver::Exhaustive { grid }
    }

    pub fn closed_form() -> Self {
        Solver::ClosedForm
    }

    pub fn numeric() -> Self {
        Solver::Numeric {
            tolerance: 1e-10,
            max_evals: 20_000,
        }
    }

    pub fn numeric_with(tolerance: f64, max_evals: usize) -> Result<Self> {
        if !(tolerance.is_finite() && tolerance > 0.0) || max_evals == 0 {
            return Err(Error::InvalidArgument(
                "numeric solver needs a positive tolerance and budget".into(),
            ));
        }
        Ok(Solver::Numeric { tolerance, max_evals })
    }

    /// Value-accuracy contribution of this solver; exact modes report zero.
    /// Downstream checks widen their tolerances by ten times this.
    pub fn tolerance(&self) -> f64 {
        match self {
            Solver::Exhaustive { .. } | Solver::ClosedForm => 0.0,
            Solver::Numeric { tolerance, .. } => *tolerance,
        }
    }

    pub fn grid(&self) -> Option<&FiniteSpace> {
        match self {
            Solver::Exhaustive { grid } => Some(grid),
            _ => None,
        }
    }
}

/// One entry of a transform evaluated on a grid of targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformEntry {
    pub value: f64,
    /// Index of the attaining grid point, when the sup was taken over a grid.
    pub witness: Option<usize>,
}

/// Result of an argmin or membership query.
#[derive(Debug, Clone)]
pub struct ArgminOutcome {
    pub point: Point,
    /// Objective value at `point`.
    pub value: f64,
    /// Grid index of `point` when produced by an exhaustive scan.
    pub index: Option<usize>,
    /// Number of additional grid points attaining the same optimal value.
    pub ties: usize,
    pub warnings: Vec<String>,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {tau}")));
    }
    Ok(())
}

/// `f^{c/tau}(y) = sup_x [f(x) - c(x, y) / tau]` evaluated on `targets`.
///
/// With an exhaustive solver the sup ranges over the solver grid and each
/// entry records its attaining index (lowest on ties). The numeric solver
/// ascends from each target. `f` must be finite on the search domain.
pub fn c_transform(
    f: &Energy,
    c: &CostFn,
    tau: f64,
    solver: &Solver,
    targets: &FiniteSpace,
) -> Result<Vec<TransformEntry>> {
    check_tau(tau)?;
    match solver {
        Solver::Exhaustive { grid } => {
            let mut fvals = Vec::with_capacity(grid.len());
            for (i, x) in grid.iter().enumerate() {
                match f.value(x)? {
                    Value::Finite(v) => fvals.push(v),
                    Value::PosInf => {
                        return Err(Error::OutOfDomain(format!(
                            "transform source '{}' is infinite at grid point {i}",
                            f.label()
                        )))
                    }
                }
            }
            let mut out = Vec::with_capacity(targets.len());
            for y in targets.iter() {
                let mut best = f64::NEG_INFINITY;
                let mut witness = 0usize;
                for (i, x) in grid.iter().enumerate() {
                    let v = fvals[i] - c.eval(x, y)? / tau;
                    if v > best {
                        best = v;
                        witness = i;
                    }
                }
                out.push(TransformEntry {
                    value: best,
                    witness: Some(witness),
                });
            }
            Ok(out)
        }
        Solver::ClosedForm => {
            let mut out = Vec::with_capacity(targets.len());
            for y in targets.iter() {
                match closed_form_transform_value(f, c, tau, y)? {
                    Some(v) => out.push(TransformEntry { value: v, witness: None }),
                    None => {
                        return Err(Error::NoClosedForm(format!(
                            "no transform rule for cost '{}' with energy '{}'",
                            c.label(),
                            f.label()
                        )))
                    }
                }
            }
            Ok(out)
        }
        Solver::Numeric { tolerance, max_evals } => {
            let mut out = Vec::with_capacity(targets.len());
            for y in targets.iter() {
                let yc = y.coords()?.to_vec();
                let obj = |x: &[f64]| -> Result<f64> {
                    let p = Point::euclidean(x.to_vec())?;
                    let fx = match f.value(&p)? {
                        Value::Finite(v) => v,
                        Value::PosInf => return Ok(f64::INFINITY),
                    };
                    Ok(c.eval(&p, y)? / tau - fx)
                };
                let (_, neg) = minimize_euclidean(&obj, &yc, *tolerance, *max_evals, None)?;
                out.push(TransformEntry { value: -neg, witness: None });
            }
            Ok(out)
        }
    }
}

/// Check `f = (f^{c/tau})` double-transformed back, on a grid that serves as
/// both search and target domain. The envelope never falls below `f`; the
/// check passes when it never exceeds it beyond `1e-9` either.
pub fn check_c_concave(f: &Energy, c: &CostFn, tau: f64, grid: &FiniteSpace) -> Result<CheckReport> {
    check_tau(tau)?;
    let solver = Solver::exhaustive(grid.clone());
    let forward = c_transform(f, c, tau, &solver, grid)?;
    let mut sw = SweepBuilder::new(
        format!("c_concave[{}|{}]", f.label(), c.label()),
        1e-9,
        0.0,
    );
    for (xi, x) in grid.iter().enumerate() {
        let mut env = f64::INFINITY;
        for (yi, y) in grid.iter().enumerate() {
            let v = c.eval(x, y)? / tau + forward[yi].value;
            if v < env {
                env = v;
            }
        }
        let fx = f.value_finite(x)?;
        let defect = math::abs(fx - env);
        if fx - env > 1e-12 * (1.0 + math::abs(fx)) {
            sw.note(format!(
                "envelope fell below the function at grid point {xi} by {:.3e}; the one-sided bound is unconditional, so this is roundoff or a broken cost",
                fx - env
            ));
        }
        sw.observe(defect, WorstLocation::at_test_point(xi));
    }
    Ok(sw.finish())
}

/// Proximal step: minimize `c(x, y0)/tau + g(x)` over `x`.
pub fn argmin_p(g: &Energy, c: &CostFn, tau: f64, y0: &Point, solver: &Solver) -> Result<ArgminOutcome> {
    check_tau(tau)?;
    match solver {
        Solver::Exhaustive { grid } => {
            exhaustive_argmin(grid, |x| {
                Ok(match g.value(x)? {
                    Value::Finite(v) => Value::Finite(c.eval(x, y0)? / tau + v),
                    Value::PosInf => Value::PosInf,
                })
            })
        }
        Solver::ClosedForm => {
            let point = closed_form_p(g, c, tau, y0)?.ok_or_else(|| {
                Error::NoClosedForm(format!(
                    "no proximal rule for cost '{}' with energy '{}'",
                    c.label(),
                    g.label()
                ))
            })?;
            let value = c.eval(&point, y0)? / tau + g.value_finite(&point)?;
            Ok(ArgminOutcome {
                point,
                value,
                index: None,
                ties: 0,
                warnings: Vec::new(),
            })
        }
        Solver::Numeric { tolerance, max_evals } => {
            let start = y0.coords()?.to_vec();
            let obj = |x: &[f64]| -> Result<f64> {
                let p = Point::euclidean(x.to_vec())?;
                let gv = match g.value(&p)? {
                    Value::Finite(v) => v,
                    Value::PosInf => return Ok(f64::INFINITY),
                };
                Ok(c.eval(&p, y0)? / tau + gv)
            };
            let floor = if c.is_dissipative() { g.lower_bound() } else { None };
            let (x, value) = minimize_euclidean(&obj, &start, *tolerance, *max_evals, floor)?;
            Ok(ArgminOutcome {
                point: Point::euclidean(x)?,
                value,
                index: None,
                ties: 0,
                warnings: Vec::new(),
            })
        }
    }
}

/// Dual step: minimize `c(x0, y)/tau + f^{c/tau}(y)` over `y`. At the optimum
/// the value equals `f(x0)` whenever `f` is `c/tau`-concave; a deviation
/// beyond `1e-8` is surfaced as a warning.
pub fn argmin_q(f: &Energy, c: &CostFn, tau: f64, x0: &Point, solver: &Solver) -> Result<ArgminOutcome> {
    check_tau(tau)?;
    let mut outcome = match solver {
        Solver::Exhaustive { grid } => {
            let transform = c_transform(f, c, tau, solver, grid)?;
            exhaustive_argmin(grid, |y| {
                let yi = grid
                    .position_of(y)
                    .expect("iterating the same grid the transform was built on");
                Ok(Value::Finite(c.eval(x0, y)? / tau + transform[yi].value))
            })?
        }
        Solver::ClosedForm => {
            let point = closed_form_q(f, c, tau, x0)?.ok_or_else(|| {
                Error::NoClosedForm(format!(
                    "no dual-step rule for cost '{}' with energy '{}'",
                    c.label(),
                    f.label()
                ))
            })?;
            let h = closed_form_transform_value(f, c, tau, &point)?.ok_or_else(|| {
                Error::NoClosedForm(format!(
                    "dual step for '{}' found no matching transform value rule",
                    f.label()
                ))
            })?;
            let value = c.eval(x0, &point)? / tau + h;
            ArgminOutcome {
                point,
                value,
                index: None,
                ties: 0,
                warnings: Vec::new(),
            }
        }
        Solver::Numeric { .. } => {
            return Err(Error::Unsupported(
                "the dual step nests a sup inside the argmin; use an exhaustive grid or a closed form".into(),
            ))
        }
    };
    let fx0 = f.value_finite(x0)?;
    let defect = math::abs(outcome.value - fx0);
    if defect > 1e-8 {
        outcome.warnings.push(format!(
            "dual optimal value deviates from the source value by {defect:.3e}; the source may not be c/tau-concave near this point"
        ));
    }
    Ok(outcome)
}

/// Resting points: minimize `c(x0, y)` over `y`. Dissipative costs collapse
/// to `x0` without a search.
pub fn argmin_r(c: &CostFn, x0: &Point, solver: &Solver) -> Result<ArgminOutcome> {
    if c.is_dissipative() {
        let value = c.eval(x0, x0)?;
        return Ok(ArgminOutcome {
            point: x0.clone(),
            value,
            index: solver.grid().and_then(|g| g.position_of(x0)),
            ties: 0,
            warnings: Vec::new(),
        });
    }
    match solver {
        Solver::Exhaustive { grid } => exhaustive_argmin(grid, |y| Ok(Value::Finite(c.eval(x0, y)?))),
        Solver::ClosedForm => Err(Error::NoClosedForm(format!(
            "no resting-point rule for non-dissipative cost '{}'",
            c.label()
        ))),
        Solver::Numeric { tolerance, max_evals } => {
            let start = x0.coords()?.to_vec();
            let obj = |y: &[f64]| -> Result<f64> {
                let p = Point::euclidean(y.to_vec())?;
                c.eval(x0, &p)
            };
            let (y, value) = minimize_euclidean(&obj, &start, *tolerance, *max_evals, None)?;
            Ok(ArgminOutcome {
                point: Point::euclidean(y)?,
                value,
                index: None,
                ties: 0,
                warnings: Vec::new(),
            })
        }
    }
}

/// Stationarity certificates: find `xi` with `x0` a minimizer of
/// `c(., xi)`. Dissipative costs certify `xi = x0` directly.
pub fn member_s(c: &CostFn, x0: &Point, solver: &Solver) -> Result<ArgminOutcome> {
    if c.is_dissipative() {
        let value = c.eval(x0, x0)?;
        return Ok(ArgminOutcome {
            point: x0.clone(),
            value,
            index: solver.grid().and_then(|g| g.position_of(x0)),
            ties: 0,
            warnings: Vec::new(),
        });
    }
    match solver {
        Solver::Exhaustive { grid } => {
            let mut found: Option<(usize, f64)> = None;
            let mut ties = 0usize;
            for (j, xi) in grid.iter().enumerate() {
                let at_x0 = c.eval(x0, xi)?;
                let mut m = f64::INFINITY;
                for x in grid.iter() {
                    let v = c.eval(x, xi)?;
                    if v < m {
                        m = v;
                    }
                }
                if at_x0 <= m {
                    if found.is_none() {
                        found = Some((j, at_x0));
                    } else {
                        ties += 1;
                    }
                }
            }
            match found {
                Some((j, value)) => Ok(ArgminOutcome {
                    point: grid.points()[j].clone(),
                    value,
                    index: Some(j),
                    ties,
                    warnings: Vec::new(),
                }),
                None => Err(Error::EmptySet(format!(
                    "no grid point makes x0 a minimizer of c(., xi) for cost '{}'",
                    c.label()
                ))),
            }
        }
        Solver::ClosedForm => Err(Error::NoClosedForm(format!(
            "no stationarity rule for non-dissipative cost '{}'",
            c.label()
        ))),
        Solver::Numeric { tolerance, max_evals } => {
            let start = x0.coords()?.to_vec();
            let x0c = start.clone();
            // Minimize the membership defect c(x0, xi) - min_x c(x, xi); a
            // nested numeric min prices each candidate xi.
            let obj = |xi: &[f64]| -> Result<f64> {
                let cand = Point::euclidean(xi.to_vec())?;
                let at_x0 = c.eval(x0, &cand)?;
                let inner = |x: &[f64]| -> Result<f64> {
                    let p = Point::euclidean(x.to_vec())?;
                    c.eval(&p, &cand)
                };
                let (_, m) = minimize_euclidean(&inner, &x0c, *tolerance, *max_evals, None)?;
                Ok(at_x0 - m)
            };
            let (xi, defect) = minimize_euclidean(&obj, &start, *tolerance, *max_evals, None)?;
            if defect > 100.0 * tolerance.max(1e-12) {
                return Err(Error::EmptySet(format!(
                    "numeric search left a membership defect of {defect:.3e}"
                )));
            }
            let point = Point::euclidean(xi)?;
            let value = c.eval(x0, &point)?;
            Ok(ArgminOutcome {
                point,
                value,
                index: None,
                ties: 0,
                warnings: Vec::new(),
            })
        }
    }
}

fn exhaustive_argmin(
    grid: &FiniteSpace,
    mut obj: impl FnMut(&Point) -> Result<Value>,
) -> Result<ArgminOutcome> {
    let mut best: Option<(usize, f64)> = None;
    let mut ties = 0usize;
    let mut skipped = 0usize;
    for (i, p) in grid.iter().enumerate() {
        match obj(p)? {
            Value::PosInf => skipped += 1,
            Value::Finite(v) => match best {
                None => best = Some((i, v)),
                Some((_, bv)) => {
                    if v < bv {
                        best = Some((i, v));
                        ties = 0;
                    } else if v == bv {
                        ties += 1;
                    }
                }
            },
        }
    }
    match best {
        Some((i, value)) => {
            let mut warnings = Vec::new();
            if skipped > 0 {
                warnings.push(format!("{skipped} grid points were outside the domain"));
            }
            if ties > 0 {
                warnings.push(format!("{ties} grid points tie the optimum; kept the lowest index"));
            }
            Ok(ArgminOutcome {
                point: grid.points()[i].clone(),
                value,
                index: Some(i),
                ties,
                warnings,
            })
        }
        None => Err(Error::EmptySet(
            "objective is infinite on the entire grid".into(),
        )),
    }
}

/// Closed-form proximal points, keyed on (cost label, energy form).
/// `Ok(None)` means no rule is registered for the pair.
fn closed_form_p(g: &Energy, c: &CostFn, tau: f64, y0: &Point) -> Result<Option<Point>> {
    match (c.label(), g.form()) {
        ("sq_euclid", EnergyForm::Zero) | ("sq_euclid", EnergyForm::Constant(_)) => {
            Ok(Some(y0.clone()))
        }
        ("sq_euclid", EnergyForm::Quadratic { alpha }) => {
            let denom = 1.0 + alpha * tau;
            if denom <= 1e-12 {
                return Err(Error::UnboundedBelow(format!(
                    "proximal objective loses coercivity: 1 + alpha tau = {denom:.3e}"
                )));
            }
            let x: Vec<f64> = y0.coords()?.iter().map(|&v| v / denom).collect();
            Ok(Some(Point::euclidean(x)?))
        }
        ("sq_euclid", EnergyForm::Linear { v }) => {
            let y = y0.coords()?;
            if v.len() != y.len() {
                return Err(Error::Shape("linear slope and point dimensions differ".into()));
            }
            let x: Vec<f64> = y.iter().zip(v.iter()).map(|(&yi, &vi)| yi - tau * vi).collect();
            Ok(Some(Point::euclidean(x)?))
        }
        ("kl", EnergyForm::Zero) | ("kl", EnergyForm::Constant(_)) => Ok(Some(y0.clone())),
        ("kl", EnergyForm::Linear { v }) => {
            let w = y0.weights()?;
            if v.len() != w.len() {
                return Err(Error::Shape("linear slope and weight dimensions differ".into()));
            }
            let space = y0.density_space().expect("weights imply a density point");
            let raw: Vec<f64> = w.iter().zip(v.iter()).map(|(&wi, &vi)| wi * math::exp(-tau * vi)).collect();
            let p = density_from_raw(space, &raw).map_err(|e| match e {
                Error::DensityConstraint(d) => {
                    Error::DensityConstraint(format!("multiplicative step left the ratio box: {d}"))
                }
                other => other,
            })?;
            Ok(Some(p))
        }
        ("kl", EnergyForm::RelativeEntropy) => {
            let w = y0.weights()?;
            let space = y0.density_space().expect("weights imply a density point");
            let a = 1.0 / (1.0 + tau);
            let b = tau / (1.0 + tau);
            let raw: Vec<f64> = w
                .iter()
                .zip(space.reference().iter())
                .map(|(&wi, &ri)| math::exp(a * math::ln(wi) + b * math::ln(ri)))
                .collect();
            let p = density_from_raw(space, &raw).map_err(|e| match e {
                Error::DensityConstraint(d) => {
                    Error::DensityConstraint(format!("geometric-mean step left the ratio box: {d}"))
                }
                other => other,
            })?;
            Ok(Some(p))
        }
        _ => Ok(None),
    }
}

/// Closed-form dual points, keyed like [`closed_form_p`].
fn closed_form_q(f: &Energy, c: &CostFn, tau: f64, x0: &Point) -> Result<Option<Point>> {
    match (c.label(), f.form()) {
        ("sq_euclid", EnergyForm::Zero) | ("sq_euclid", EnergyForm::Constant(_)) => {
            Ok(Some(x0.clone()))
        }
        ("sq_euclid", EnergyForm::Quadratic { alpha }) => {
            if alpha * tau >= 1.0 {
                return Err(Error::UnboundedBelow(format!(
                    "transform of the quadratic diverges: alpha tau = {} >= 1",
                    alpha * tau
                )));
            }
            let y: Vec<f64> = x0.coords()?.iter().map(|&v| v * (1.0 - alpha * tau)).collect();
            Ok(Some(Point::euclidean(y)?))
        }
        ("sq_euclid", EnergyForm::Linear { v }) => {
            let x = x0.coords()?;
            if v.len() != x.len() {
                return Err(Error::Shape("linear slope and point dimensions differ".into()));
            }
            let y: Vec<f64> = x.iter().zip(v.iter()).map(|(&xi, &vi)| xi - tau * vi).collect();
            Ok(Some(Point::euclidean(y)?))
        }
        ("kl", EnergyForm::Zero) | ("kl", EnergyForm::Constant(_)) => Ok(Some(x0.clone())),
        ("kl", EnergyForm::Linear { v }) => {
            let w = x0.weights()?;
            if v.len() != w.len() {
                return Err(Error::Shape("linear slope and weight dimensions differ".into()));
            }
            let space = x0.density_space().expect("weights imply a density point");
            let raw: Vec<f64> = w.iter().zip(v.iter()).map(|(&wi, &vi)| wi * math::exp(-tau * vi)).collect();
            Ok(Some(density_from_raw(space, &raw)?))
        }
        _ => Ok(None),
    }
}

/// Closed-form transform values `f^{c/tau}(y)` for the registered pairs.
/// For density costs the sup ranges over the whole simplex, not just the
/// ratio box; the box is a trajectory guard, not the variational domain.
fn closed_form_transform_value(f: &Energy, c: &CostFn, tau: f64, y: &Point) -> Result<Option<f64>> {
    match (c.label(), f.form()) {
        ("sq_euclid", EnergyForm::Zero) => Ok(Some(0.0)),
        ("sq_euclid", EnergyForm::Constant(k)) => Ok(Some(*k)),
        ("sq_euclid", EnergyForm::Quadratic { alpha }) => {
            if alpha * tau >= 1.0 {
                return Err(Error::UnboundedBelow(format!(
                    "transform of the quadratic diverges: alpha tau = {} >= 1",
                    alpha * tau
                )));
            }
            let yy = math::dot(y.coords()?, y.coords()?);
            Ok(Some(0.5 * alpha * yy / (1.0 - alpha * tau)))
        }
        ("sq_euclid", EnergyForm::Linear { v }) => {
            let yc = y.coords()?;
            if v.len() != yc.len() {
                return Err(Error::Shape("linear slope and point dimensions differ".into()));
            }
            Ok(Some(math::dot(v, yc) + 0.5 * tau * math::dot(v, v)))
        }
        ("kl", EnergyForm::Zero) => Ok(Some(0.0)),
        ("kl", EnergyForm::Constant(k)) => Ok(Some(*k)),
        ("kl", EnergyForm::Linear { v }) => {
            let w = y.weights()?;
            if v.len() != w.len() {
                return Err(Error::Shape("linear slope and weight dimensions differ".into()));
            }
            let logs: Vec<f64> = w
                .iter()
                .zip(v.iter())
                .map(|(&wi, &vi)| math::ln(wi.max(1e-300)) + tau * vi)
                .collect();
            Ok(Some(math::logsumexp(&logs) / tau))
        }
        _ => Ok(None),
    }
}

/// Gradient descent with central finite differences and a backtracking line
/// search. `obj` may return `INFINITY` to mark points outside a domain; the
/// search treats such steps as rejected.
pub(crate) fn minimize_euclidean(
    obj: &dyn Fn(&[f64]) -> Result<f64>,
    start: &[f64],
    tolerance: f64,
    max_evals: usize,
    floor: Option<f64>,
) -> Result<(Vec<f64>, f64)> {
    let mut x = start.to_vec();
    let mut fx = obj(&x)?;
    if !fx.is_finite() {
        return Err(Error::InvalidArgument(
            "numeric solver needs a finite objective at the start point".into(),
        ));
    }
    let d = x.len();
    let mut evals = 1usize;
    let grad_target = math::sqrt(tolerance) * 0.01;
    let mut step = 1.0f64;
    let mut grad = alloc::vec![0.0f64; d];
    let mut last_gnorm = f64::INFINITY;

    while evals < max_evals {
        let mut gnorm2 = 0.0;
        let mut gmax = 0.0f64;
        for k in 0..d {
            let h = 1e-6 * (1.0 + math::abs(x[k]));
            let (mut hi, mut lo) = (x.clone(), x.clone());
            hi[k] += h;
            lo[k] -= h;
            let vh = obj(&hi)?;
            let vl = obj(&lo)?;
            evals += 2;
            let g = if vh.is_finite() && vl.is_finite() {
                (vh - vl) / (2.0 * h)
            } else if vh.is_finite() {
                (vh - fx) / h
            } else if vl.is_finite() {
                (fx - vl) / h
            } else {
                0.0
            };
            grad[k] = g;
            gnorm2 += g * g;
            gmax = gmax.max(math::abs(g));
        }
        last_gnorm = gmax;
        if gmax <= grad_target {
            return Ok((x, fx));
        }

        let mut alpha = step;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(grad.iter()).map(|(&xi, &gi)| xi - alpha * gi).collect();
            let fc = obj(&cand)?;
            evals += 1;
            if fc.is_finite() && fc <= fx - 1e-4 * alpha * gnorm2 {
                x = cand;
                fx = fc;
                step = (alpha * 2.0).min(1e6);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if let Some(fl) = floor {
            if fx < fl - 1.0 {
                return Err(Error::UnboundedBelow(format!(
                    "objective fell to {fx:.3e}, below the declared lower bound {fl}"
                )));
            }
        }
        if fx < -1e15 {
            return Err(Error::UnboundedBelow(format!("objective fell to {fx:.3e}")));
        }
        if !accepted {
            // Line search stalled; the gradient target was not reached but
            // no descent direction remains at float resolution.
            return Ok((x, fx));
        }
    }
    Err(Error::NonConvergence {
        detail: format!("descent used its {max_evals}-evaluation budget"),
        last: last_gnorm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{make_kl_cost, make_squared_euclidean, make_table_cost, CostEval};
    use crate::space::DensitySpace;
    use alloc::sync::Arc;
    use alloc::vec;

    fn pt(x: f64) -> Point {
        Point::euclidean(vec![x]).unwrap()
    }

    #[test]
    fn transform_on_a_two_point_table_with_ties() {
        // X = {0, 1}, c = |i - j| as a table, f(x) = x, tau = 1.
        let c = make_table_cost("abs_index", vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let grid = FiniteSpace::new(vec![Point::index(0), Point::index(1)]).unwrap();
        let f = Energy::custom(
            "identity_on_index",
            Arc::new(|p: &Point| Ok(p.as_index().unwrap() as f64)),
            Arc::new(|_| true),
        );
        let solver = Solver::exhaustive(grid.clone());
        let entries = c_transform(&f, &c, 1.0, &solver, &grid).unwrap();
        // h(0) = max(0 - 0, 1 - 1) = 0, tie between both x; lowest index wins.
        assert_eq!(entries[0].value, 0.0);
        assert_eq!(entries[0].witness, Some(0));
        // h(1) = max(0 - 1, 1 - 0) = 1, witness x = 1.
        assert_eq!(entries[1].value, 1.0);
        assert_eq!(entries[1].witness, Some(1));

        let report = check_c_concave(&f, &c, 1.0, &grid).unwrap();
        assert!(report.pass, "identity is concave for this metric cost: {:?}", report.notes);
    }

    #[test]
    fn double_transform_flags_a_non_concave_function() {
        // f(x) = x^2 on {-1, 0, 1} with the half squared distance, tau = 1:
        // the envelope at 0 is 1/2, not 0.
        let c = make_squared_euclidean();
        let grid = FiniteSpace::new(vec![pt(-1.0), pt(0.0), pt(1.0)]).unwrap();
        let f = Energy::custom(
            "square",
            Arc::new(|p: &Point| Ok(p.coords()?[0] * p.coords()?[0])),
            Arc::new(|_| true),
        );
        let report = check_c_concave(&f, &c, 1.0, &grid).unwrap();
        assert!(!report.pass);
        assert!((report.worst_residual - 0.5).abs() < 1e-15, "got {}", report.worst_residual);
        assert_eq!(report.worst_location.test_point, Some(1), "worst defect at x = 0");
    }

    #[test]
    fn proximal_closed_forms_match_the_optimality_condition() {
        let c = make_squared_euclidean();
        // Quadratic: x = y0 / (1 + alpha tau).
        let g = Energy::quadratic();
        let out = argmin_p(&g, &c, 0.5, &pt(1.0), &Solver::closed_form()).unwrap();
        assert!((out.point.coords().unwrap()[0] - 2.0 / 3.0).abs() < 1e-15);
        // The first-order condition at the closed-form point: (x - y0)/tau + alpha x = 0.
        let x = out.point.coords().unwrap()[0];
        assert!(((x - 1.0) / 0.5 + x).abs() < 1e-12);

        // Linear: x = y0 - tau v.
        let lin = Energy::linear(vec![2.0]);
        let out = argmin_p(&lin, &c, 0.25, &pt(1.0), &Solver::closed_form()).unwrap();
        assert_eq!(out.point.coords().unwrap()[0], 0.5);

        // Losing coercivity is an explicit error.
        let bad = Energy::quadratic_scaled(-3.0);
        assert!(matches!(
            argmin_p(&bad, &c, 0.5, &pt(1.0), &Solver::closed_form()),
            Err(Error::UnboundedBelow(_))
        ));
    }

    #[test]
    fn proximal_numeric_agrees_with_closed_form() {
        let c = make_squared_euclidean();
        let g = Energy::quadratic();
        let cf = argmin_p(&g, &c, 0.5, &pt(1.0), &Solver::closed_form()).unwrap();
        let num = argmin_p(&g, &c, 0.5, &pt(1.0), &Solver::numeric()).unwrap();
        let dx = (cf.point.coords().unwrap()[0] - num.point.coords().unwrap()[0]).abs();
        assert!(dx < 1e-6, "points differ by {dx}");
        assert!((cf.value - num.value).abs() < 1e-10, "values differ by {}", (cf.value - num.value).abs());
    }

    #[test]
    fn proximal_exhaustive_matches_a_brute_scan_exactly() {
        let c = make_squared_euclidean();
        let g = Energy::quadratic();
        let grid = FiniteSpace::euclidean_grid_1d(-2.0, 2.0, 401).unwrap();
        let out = argmin_p(&g, &c, 0.5, &pt(1.0), &Solver::exhaustive(grid.clone())).unwrap();
        // Independent enumeration.
        let mut best = (0usize, f64::INFINITY);
        for (i, x) in grid.iter().enumerate() {
            let v = c.eval(x, &pt(1.0)).unwrap() / 0.5 + g.value_finite(x).unwrap();
            if v < best.1 {
                best = (i, v);
            }
        }
        assert_eq!(out.index, Some(best.0));
        assert_eq!(out.value, best.1, "scan must be bit-identical to enumeration");
    }

    #[test]
    fn proximal_mirror_updates_are_multiplicative() {
        let c = make_kl_cost();
        let sp = DensitySpace::uniform(3, 0.05, 20.0).unwrap();
        let y0 = Point::density(vec![1.0 / 3.0; 3], sp.clone()).unwrap();
        let v = vec![0.5, 0.0, -0.5];
        let out = argmin_p(&Energy::linear(v.clone()), &c, 0.1, &y0, &Solver::closed_form()).unwrap();
        let w = out.point.weights().unwrap();
        // w_i proportional to y0_i exp(-tau v_i).
        let z: f64 = (0..3).map(|i| math::exp(-0.1 * v[i]) / 3.0).sum();
        for i in 0..3 {
            let expected = math::exp(-0.1 * v[i]) / 3.0 / z;
            assert!((w[i] - expected).abs() < 1e-15);
        }

        // Geometric-mean rule for the entropy energy.
        let refsp = DensitySpace::new(vec![0.5, 0.3, 0.2], 0.01, 50.0).unwrap();
        let ent = Energy::relative_entropy(refsp.clone());
        let y0 = Point::density(vec![1.0 / 3.0; 3], refsp.clone()).unwrap();
        let out = argmin_p(&ent, &c, 1.0, &y0, &Solver::closed_form()).unwrap();
        let w = out.point.weights().unwrap();
        let raw: Vec<f64> = (0..3)
            .map(|i| math::sqrt(1.0 / 3.0 * refsp.reference()[i]))
            .collect();
        let z: f64 = raw.iter().sum();
        for i in 0..3 {
            assert!((w[i] - raw[i] / z).abs() < 1e-15, "atom {i}");
        }
    }

    #[test]
    fn mirror_step_out_of_the_ratio_box_is_a_density_error() {
        let c = make_kl_cost();
        let sp = DensitySpace::uniform(2, 0.9, 1.1).unwrap();
        let y0 = Point::density(vec![0.5, 0.5], sp).unwrap();
        let out = argmin_p(&Energy::linear(vec![5.0, -5.0]), &c, 1.0, &y0, &Solver::closed_form());
        assert!(matches!(out, Err(Error::DensityConstraint(_))), "got {out:?}");
    }

    #[test]
    fn dual_step_closed_forms_hit_the_value_identity() {
        let c = make_squared_euclidean();
        // Quadratic source, alpha tau < 1: y = x0 (1 - alpha tau).
        let f = Energy::quadratic_scaled(0.5);
        let out = argmin_q(&f, &c, 0.4, &pt(2.0), &Solver::closed_form()).unwrap();
        assert!((out.point.coords().unwrap()[0] - 1.6).abs() < 1e-15);
        assert!(out.warnings.is_empty(), "value identity must hold exactly: {:?}", out.warnings);
        assert!((out.value - f.value_finite(&pt(2.0)).unwrap()).abs() < 1e-12);

        // KL with a linear source: y proportional to x0 exp(-tau v).
        let ckl = make_kl_cost();
        let sp = DensitySpace::uniform(3, 0.05, 20.0).unwrap();
        let x0 = Point::density(vec![0.2, 0.5, 0.3], sp).unwrap();
        let fv = Energy::linear(vec![1.0, 0.0, -1.0]);
        let out = argmin_q(&fv, &ckl, 0.2, &x0, &Solver::closed_form()).unwrap();
        assert!(out.warnings.is_empty(), "KL dual identity violated: {:?}", out.warnings);
        let fx0 = fv.value_finite(&x0).unwrap();
        assert!((out.value - fx0).abs() < 1e-12);

        // Divergent transform is an error.
        let hot = Energy::quadratic_scaled(3.0);
        assert!(matches!(
            argmin_q(&hot, &c, 0.5, &pt(1.0), &Solver::closed_form()),
            Err(Error::UnboundedBelow(_))
        ));
    }

    #[test]
    fn dual_step_warns_when_the_source_is_not_concave_enough() {
        // On a coarse grid the transform of x^2 with a small tau cannot
        // reproduce f, so the dual optimal value deviates from f(x0).
        let c = make_squared_euclidean();
        let f = Energy::custom(
            "square",
            Arc::new(|p: &Point| Ok(p.coords()?[0] * p.coords()?[0])),
            Arc::new(|p: &Point| matches!(p, Point::Euclidean(_))),
        );
        let grid = FiniteSpace::new(vec![pt(-1.0), pt(0.0), pt(1.0)]).unwrap();
        let out = argmin_q(&f, &c, 1.0, &pt(0.0), &Solver::exhaustive(grid)).unwrap();
        assert!(!out.warnings.is_empty(), "expected a concavity warning");
    }

    #[test]
    fn resting_points_collapse_for_dissipative_costs() {
        let c = make_squared_euclidean();
        let out = argmin_r(&c, &pt(0.7), &Solver::numeric()).unwrap();
        assert_eq!(out.point, pt(0.7));
        assert_eq!(out.value, 0.0);

        // Shifted parabola: the resting point sits one unit below.
        let shifted: CostEval = Arc::new(|x: &Point, y: &Point| {
            let d = x.coords()?[0] - y.coords()?[0] - 1.0;
            Ok(d * d)
        });
        let c = CostFn::new("shifted_sq", false, false, shifted);
        let out = argmin_r(&c, &pt(0.7), &Solver::numeric()).unwrap();
        assert!((out.point.coords().unwrap()[0] - (-0.3)).abs() < 1e-5, "got {:?}", out.point);
        assert!(out.value < 1e-9);
    }

    #[test]
    fn stationarity_membership_for_the_shifted_cost() {
        // c(x, y) = (x - y - 1)^2: x0 minimizes c(., xi) iff xi = x0 - 1.
        let shifted: CostEval = Arc::new(|x: &Point, y: &Point| {
            let d = x.coords()?[0] - y.coords()?[0] - 1.0;
            Ok(d * d)
        });
        let c = CostFn::new("shifted_sq", false, false, shifted);
        let out = member_s(&c, &pt(0.5), &Solver::numeric()).unwrap();
        assert!((out.point.coords().unwrap()[0] - (-0.5)).abs() < 1e-4, "got {:?}", out.point);

        // On a grid that contains the certificate.
        let grid = FiniteSpace::euclidean_grid_1d(-2.0, 2.0, 9).unwrap();
        let out = member_s(&c, &pt(0.5), &Solver::exhaustive(grid)).unwrap();
        assert_eq!(out.point, pt(-0.5));

        // A grid missing it reports the empty set.
        let far = FiniteSpace::euclidean_grid_1d(3.0, 4.0, 3).unwrap();
        assert!(matches!(
            member_s(&c, &pt(0.5), &Solver::exhaustive(far)),
            Err(Error::EmptySet(_))
        ));
    }

    #[test]
    fn exhaustive_argmin_counts_ties_and_skips_infinite_points() {
        let c = make_squared_euclidean();
        let g = Energy::constant(1.0);
        // Symmetric grid around y0 = 0: both neighbors tie; the lowest index wins.
        let grid = FiniteSpace::new(vec![pt(-1.0), pt(1.0)]).unwrap();
        let out = argmin_p(&g, &c, 1.0, &pt(0.0), &Solver::exhaustive(grid)).unwrap();
        assert_eq!(out.index, Some(0));
        assert_eq!(out.ties, 1);

        let restricted = Energy::quadratic().restrict(
            "right_half",
            Arc::new(|p: &Point| p.coords().map(|c| c[0] >= 0.0).unwrap_or(false)),
        );
        let grid = FiniteSpace::new(vec![pt(-1.0), pt(0.5), pt(1.0)]).unwrap();
        let out = argmin_p(&restricted, &c, 1.0, &pt(0.0), &Solver::exhaustive(grid)).unwrap();
        assert_eq!(out.index, Some(1));
        assert!(!out.warnings.is_empty(), "domain skips should be surfaced");

        let all_out = Energy::quadratic().restrict("nowhere", Arc::new(|_| false));
        let grid = FiniteSpace::new(vec![pt(-1.0), pt(1.0)]).unwrap();
        assert!(matches!(
            argmin_p(&all_out, &c, 1.0, &pt(0.0), &Solver::exhaustive(grid)),
            Err(Error::EmptySet(_))
        ));
    }

    #[test]
    fn numeric_descent_detects_unbounded_objectives() {
        let c = make_squared_euclidean();
        // g = -x^2 with tau = 1: the proximal objective (x-y)^2/2 - x^2 is
        // unbounded below.
        let g = Energy::quadratic_scaled(-2.0);
        let out = argmin_p(&g, &c, 1.0, &pt(0.1), &Solver::numeric());
        assert!(matches!(out, Err(Error::UnboundedBelow(_))), "got {out:?}");
    }

    #[test]
    fn transform_closed_forms_match_the_exhaustive_sup() {
        let c = make_squared_euclidean();
        let f = Energy::linear(vec![0.7]);
        let targets = FiniteSpace::new(vec![pt(-1.0), pt(0.3), pt(2.0)]).unwrap();
        let closed = c_transform(&f, &c, 0.5, &Solver::closed_form(), &targets).unwrap();
        // sup_x <v, x> - |x-y|^2 / (2 tau) = <v, y> + tau |v|^2 / 2.
        for (y, entry) in targets.iter().zip(closed.iter()) {
            let expect = 0.7 * y.coords().unwrap()[0] + 0.5 * 0.5 * 0.49;
            assert!((entry.value - expect).abs() < 1e-15);
        }
        // A wide fine grid approaches the same values from below.
        let grid = FiniteSpace::euclidean_grid_1d(-6.0, 6.0, 4001).unwrap();
        let scanned = c_transform(&f, &c, 0.5, &Solver::exhaustive(grid), &targets).unwrap();
        for (a, b) in closed.iter().zip(scanned.iter()) {
            assert!(b.value <= a.value + 1e-12, "grid sup cannot exceed the true sup");
            assert!(a.value - b.value < 1e-5, "closed {} vs scan {}", a.value, b.value);
        }
    }

    #[test]
    fn unregistered_combinations_are_explicit_errors() {
        let c = make_squared_euclidean();
        let f = Energy::custom("opaque", Arc::new(|_| Ok(0.0)), Arc::new(|_| true));
        assert!(matches!(
            argmin_p(&f, &c, 0.5, &pt(0.0), &Solver::closed_form()),
            Err(Error::NoClosedForm(_))
        ));
        assert!(matches!(
            argmin_q(&f, &c, 0.5, &pt(0.0), &Solver::closed_form()),
            Err(Error::NoClosedForm(_))
        ));
        assert!(matches!(
            argmin_q(&f, &c, 0.5, &pt(0.0), &Solver::numeric()),
            Err(Error::Unsupported(_))
        ));
    }
}
