//! Continuous-time checks: evolution variational inequalities in their
//! differential, integral, and exponential forms, contraction of pairs of
//! flows, the energy-dissipation identity, and long-time asymptotics.
//!
//! All of these operate on a [`ContinuousCurve`], which is either a closed
//! form known analytically or the piecewise-constant interpolant of a scheme
//! run. Derivatives are finite-difference estimates with explicit
//! uncertainties; checks that hinge on an unstable estimate come back
//! inconclusive instead of pretending precision.

use crate::costs::CostFn;
use crate::energy::Energy;
use crate::error::{Error, Result};
use crate::math;
use crate::report::{CheckReport, SweepBuilder, WorstLocation};
use crate::space::{FiniteSpace, Point, Trajectory};
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

pub type CurveEval = Arc<dyn Fn(f64) -> Result<Point> + Send + Sync>;
pub type PhiAlong = Arc<dyn Fn(f64) -> Result<f64> + Send + Sync>;

/// Scale factor of `(e^{lambda t} - 1) / lambda`, continuously extended
/// through `lambda = 0`. Near the removable singularity the cubic Taylor
/// truncation is exact to well below 1e-12 relative error.
pub fn e_lambda(lambda: f64, t: f64) -> f64 {
    let u = lambda * t;
    if math::abs(u) < 1e-6 {
        t * (1.0 + u / 2.0 + u * u / 6.0)
    } else {
        (math::exp(u) - 1.0) / lambda
    }
}

/// A curve `t -> x_t` on `[0, horizon]`, with an optional energy profile
/// known along it (used to bypass re-evaluating the energy at curve points).
#[derive(Clone)]
pub struct ContinuousCurve {
    label: String,
    horizon: f64,
    eval: CurveEval,
    phi_along: Option<PhiAlong>,
}

impl core::fmt::Debug for ContinuousCurve {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ContinuousCurve")
            .field("label", &self.label)
            .field("horizon", &self.horizon)
            .field("phi_along", &self.phi_along.is_some())
            .finish()
    }
}

impl ContinuousCurve {
    /// Analytic curve; the horizon may be infinite.
    pub fn closed_form(label: impl Into<String>, horizon: f64, eval: CurveEval) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "curve horizon must be positive, got {horizon}"
            )));
        }
        Ok(ContinuousCurve {
            label: label.into(),
            horizon,
            eval,
            phi_along: None,
        })
    }

    pub fn with_phi_along(mut self, phi: PhiAlong) -> Self {
        self.phi_along = Some(phi);
        self
    }

    /// Replace the label, e.g. to tag a curve with its provenance.
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Piecewise-constant interpolant of a scheme trajectory.
    pub fn from_trajectory(traj: Trajectory) -> Self {
        let horizon = traj.horizon();
        let label = format!("interpolant[tau={:e}]", traj.tau());
        let shared = Arc::new(traj);
        ContinuousCurve {
            label,
            horizon,
            eval: Arc::new(move |t| Ok(shared.interpolate(t)?.clone())),
            phi_along: None,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn at(&self, t: f64) -> Result<Point> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "time must be finite and nonnegative, got {t}"
            )));
        }
        if t > self.horizon {
            return Err(Error::Horizon { t, max: self.horizon });
        }
        (self.eval)(t)
    }

    /// Energy at `x_t`: the known profile when present, a fresh evaluation
    /// otherwise.
    pub fn phi_at(&self, phi: &Energy, t: f64) -> Result<f64> {
        match &self.phi_along {
            Some(f) => f(t),
            None => phi.value_finite(&self.at(t)?),
        }
    }
}

/// A finite-difference estimate with a spread-based error bar. `conclusive`
/// is false when the extrapolants disagree by more than half the value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeEstimate {
    pub value: f64,
    pub uncertainty: f64,
    pub conclusive: bool,
}

fn check_ladder(hs: &[f64]) -> Result<()> {
    if hs.len() < 2 {
        return Err(Error::InvalidArgument(
            "finite-difference ladder needs at least two step widths".into(),
        ));
    }
    for w in hs.windows(2) {
        if !(w[0].is_finite() && w[0] > 0.0 && w[1] > 0.0 && w[1] < w[0]) {
            return Err(Error::InvalidArgument(
                "ladder widths must be positive, finite, and strictly decreasing".into(),
            ));
        }
    }
    Ok(())
}

/// Extrapolate samples `(h_i, q_i)` to `h = 0` assuming an `O(h^order)`
/// error, judging stability by the spread of consecutive extrapolants.
/// The spread is compared against half the value or a floor relative to the
/// raw sample scale, whichever is looser; without the floor, limits that are
/// genuinely zero would always read as unstable.
fn extrapolate(samples: &[(f64, f64)], order: i32) -> DerivativeEstimate {
    let mut extraps = Vec::with_capacity(samples.len() - 1);
    let mut sample_scale = 0.0f64;
    for w in samples.windows(2) {
        let (h0, q0) = w[0];
        let (h1, q1) = w[1];
        sample_scale = sample_scale.max(math::abs(q0)).max(math::abs(q1));
        let p0 = math::powf(h0, order as f64);
        let p1 = math::powf(h1, order as f64);
        extraps.push(q1 + (q1 - q0) * p1 / (p0 - p1));
    }
    let value = *extraps.last().expect("at least one pair");
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &e in &extraps {
        lo = lo.min(e);
        hi = hi.max(e);
    }
    let spread = hi - lo;
    let uncertainty = spread + f64::EPSILON * (1.0 + math::abs(value));
    DerivativeEstimate {
        value,
        uncertainty,
        conclusive: uncertainty <= 0.5 * math::abs(value) + 1e-4 * (1.0 + sample_scale),
    }
}

/// Squared metric speed `|x'_{t+}|^2 = lim_h 2 c(x_t, x_{t+h}) / h^2`,
/// estimated from the right on a width ladder.
pub fn metric_speed_squared(
    curve: &ContinuousCurve,
    c: &CostFn,
    t: f64,
    hs: &[f64],
) -> Result<DerivativeEstimate> {
    check_ladder(hs)?;
    let xt = curve.at(t)?;
    let mut samples = Vec::with_capacity(hs.len());
    for &h in hs {
        let xh = curve.at(t + h)?;
        samples.push((h, 2.0 * c.eval(&xt, &xh)? / (h * h)));
    }
    Ok(extrapolate(&samples, 1))
}

/// Right Dini estimate of `u -> c(x, x_u)` at `t`.
pub fn c_cost_derivative(
    curve: &ContinuousCurve,
    c: &CostFn,
    x: &Point,
    t: f64,
    hs: &[f64],
) -> Result<DerivativeEstimate> {
    check_ladder(hs)?;
    let base = c.eval(x, &curve.at(t)?)?;
    let mut samples = Vec::with_capacity(hs.len());
    for &h in hs {
        samples.push((h, (c.eval(x, &curve.at(t + h)?)? - base) / h));
    }
    Ok(extrapolate(&samples, 1))
}

/// Time derivative of the energy along the curve, by central differences.
pub fn phi_derivative(
    curve: &ContinuousCurve,
    phi: &Energy,
    t: f64,
    hs: &[f64],
) -> Result<DerivativeEstimate> {
    check_ladder(hs)?;
    if t < hs[0] {
        return Err(Error::InvalidArgument(format!(
            "central differences at t = {t} need t >= the widest step {}",
            hs[0]
        )));
    }
    let mut samples = Vec::with_capacity(hs.len());
    for &h in hs {
        let fwd = curve.phi_at(phi, t + h)?;
        let bwd = curve.phi_at(phi, t - h)?;
        samples.push((h, (fwd - bwd) / (2.0 * h)));
    }
    Ok(extrapolate(&samples, 2))
}

/// Descent-oriented local slope `(phi(x_t) - phi(x_{t+h}))^+ / sqrt(2 c)`,
/// extrapolated to `h = 0`. Vanishing cost increments read as zero slope.
pub fn oriented_local_slope(
    curve: &ContinuousCurve,
    phi: &Energy,
    c: &CostFn,
    t: f64,
    hs: &[f64],
) -> Result<DerivativeEstimate> {
    check_ladder(hs)?;
    let xt = curve.at(t)?;
    let phit = curve.phi_at(phi, t)?;
    let mut samples = Vec::with_capacity(hs.len());
    for &h in hs {
        let xh = curve.at(t + h)?;
        let num = (phit - curve.phi_at(phi, t + h)?).max(0.0);
        let den = math::sqrt(2.0 * c.eval(&xt, &xh)?);
        samples.push((h, if den > 1e-300 { num / den } else { 0.0 }));
    }
    Ok(extrapolate(&samples, 1))
}

fn pair_delta(s: f64, t: f64) -> Result<f64> {
    if !(s.is_finite() && t.is_finite() && 0.0 <= s && s <= t) {
        return Err(Error::InvalidArgument(format!(
            "time pair must satisfy 0 <= s <= t, got ({s}, {t})"
        )));
    }
    Ok(t - s)
}

/// Integral-form inequality on `[s, t]` against each test point, with
/// left-endpoint quadrature. Each sample carries an allowance of one panel
/// width times the observed variation of the integrands, which dominates the
/// quadrature error for curves of bounded variation.
pub fn evi_integral_residual(
    curve: &ContinuousCurve,
    phi: &Energy,
    c: &CostFn,
    lambda: f64,
    test_points: &FiniteSpace,
    pairs: &[(f64, f64)],
    n_quad: usize,
) -> Result<CheckReport> {
    if n_quad == 0 {
        return Err(Error::InvalidArgument("quadrature needs at least one panel".into()));
    }
    let mut sw = SweepBuilder::new(format!("evi_integral[{}]", curve.label()), 1e-6, 1e-6);
    let mut outside = 0usize;
    for &(s, t) in pairs {
        let delta = pair_delta(s, t)?;
        if delta == 0.0 {
            continue;
        }
        let h = delta / n_quad as f64;
        // Curve values at the quadrature nodes, shared across test points.
        let mut nodes = Vec::with_capacity(n_quad + 1);
        for i in 0..=n_quad {
            let u = s + delta * i as f64 / n_quad as f64;
            nodes.push((curve.at(u)?, curve.phi_at(phi, u)?));
        }
        let mut int_phi = 0.0;
        let mut var_phi = 0.0;
        for i in 0..n_quad {
            int_phi += h * nodes[i].1;
            var_phi += math::abs(nodes[i + 1].1 - nodes[i].1);
        }
        for (ti, x) in test_points.iter().enumerate() {
            let phix = match phi.value(x)? {
                crate::value::Value::Finite(v) => v,
                crate::value::Value::PosInf => {
                    outside += 1;
                    continue;
                }
            };
            let mut cs = Vec::with_capacity(n_quad + 1);
            for node in &nodes {
                cs.push(c.eval(x, &node.0)?);
            }
            let mut int_c = 0.0;
            let mut var_c = 0.0;
            for i in 0..n_quad {
                int_c += h * cs[i];
                var_c += math::abs(cs[i + 1] - cs[i]);
            }
            let residual = cs[n_quad] - cs[0] + lambda * int_c - delta * phix + int_phi;
            let scale = math::abs(cs[n_quad])
                + math::abs(cs[0])
                + math::abs(lambda * int_c)
                + math::abs(delta * phix)
                + math::abs(int_phi);
            let allowance = h * (math::abs(lambda) * var_c + var_phi) + 1e-6 * scale;
            sw.observe_with_allowance(
                residual,
                allowance,
                WorstLocation {
                    test_point: Some(ti),
                    time: Some(t),
                    ..Default::default()
                },
            );
        }
    }
    if outside > 0 {
        sw.note(format!("{outside} test evaluations fell outside the energy domain"));
    }
    Ok(sw.finish())
}

/// Exponential-form inequality: for each test point and pair `s <= t`,
/// `e^{lambda (t-s)} c(x, x_t) - c(x, x_s) <= E_lambda(t-s) (phi(x) - phi(x_t))`.
pub fn evi_exponential_residual(
    curve: &ContinuousCurve,
    phi: &Energy,
    c: &CostFn,
    lambda: f64,
    test_points: &FiniteSpace,
    pairs: &[(f64, f64)],
) -> Result<CheckReport> {
    let mut sw = SweepBuilder::new(format!("evi_exponential[{}]", curve.label()), 1e-9, 1e-9);
    let mut outside = 0usize;
    for &(s, t) in pairs {
        let delta = pair_delta(s, t)?;
        let xs = curve.at(s)?;
        let xt = curve.at(t)?;
        let phit = curve.phi_at(phi, t)?;
        let growth = math::exp(lambda * delta);
        let scale_e = e_lambda(lambda, delta);
        for (ti, x) in test_points.iter().enumerate() {
            let phix = match phi.value(x)? {
                crate::value::Value::Finite(v) => v,
                crate::value::Value::PosInf => {
                    outside += 1;
                    continue;
                }
            };
            let ct = c.eval(x, &xt)?;
            let cs = c.eval(x, &xs)?;
            let residual = growth * ct - cs - scale_e * (phix - phit);
            let scale = math::abs(growth * ct) + math::abs(cs) + math::abs(scale_e * (phix - phit));
            sw.observe_with_allowance(
                residual,
                1e-9 * scale,
                WorstLocation {
                    test_point: Some(ti),
                    time: Some(t),
                    ..Default::default()
                },
            );
        }
    }
    if outside > 0 {
        sw.note(format!("{outside} test evaluations fell outside the energy domain"));
    }
    Ok(sw.finish())
}

/// Cost-to-energy bound along the flow: `0 <= c(x_s, x_t)` and
/// `c(x_s, x_t) <= E_{-lambda}(t-s) (phi(x_s) - phi(x_t))`.
pub fn lipschitz_bound_residual(
    curve: &ContinuousCurve,
    phi: &Energy,
    c: &CostFn,
    lambda: f64,
    pairs: &[(f64, f64)],
) -> Result<CheckReport> {
    let mut sw = SweepBuilder::new(format!("cost_energy_bound[{}]", curve.label()), 1e-9, 1e-9);
    for &(s, t) in pairs {
        let delta = pair_delta(s, t)?;
        let xs = curve.at(s)?;
        let xt = curve.at(t)?;
        let cost = c.eval(&xs, &xt)?;
        let drop = curve.phi_at(phi, s)? - curve.phi_at(phi, t)?;
        let budget = e_lambda(-lambda, delta) * drop;
        let scale = math::abs(cost) + math::abs(budget);
        sw.observe_with_allowance(-cost, 1e-9 * scale, WorstLocation::at_time(t));
        sw.observe_with_allowance(cost - budget, 1e-9 * scale, WorstLocation::at_time(t));
    }
    Ok(sw.finish())
}

/// Differential-form inequality via right Dini estimates of `c(x, x_t)`.
/// Unstable derivative estimates mark the whole report inconclusive.
pub fn evi_differential_residual(
    curve: &ContinuousCurve,
    phi: &Energy,
    c: &CostFn,
    lambda: f64,
    test_points: &FiniteSpace,
    times: &[f64],
    hs: &[f64],
) -> Result<CheckReport> {
    check_ladder(hs)?;
    let mut sw = SweepBuilder::new(format!("evi_differential[{}]", curve.label()), 1e-6, 1e-6);
    let mut outside = 0usize;
    let mut unstable = 0usize;
    for &t in times {
        let xt = curve.at(t)?;
        let phit = curve.phi_at(phi, t)?;
        for (ti, x) in test_points.iter().enumerate() {
            let phix = match phi.value(x)? {
                crate::value::Value::Finite(v) => v,
                crate::value::Value::PosInf => {
                    outside += 1;
                    continue;
                }
            };
            let d = c_cost_derivative(curve, c, x, t, hs)?;
            if !d.conclusive {
                unstable += 1;
            }
            let residual = d.value + lambda * c.eval(x, &xt)? - phix + phit;
            sw.observe_with_allowance(
                residual,
                3.0 * d.uncertainty,
                WorstLocation {
                    test_point: Some(ti),
                    time: Some(t),
                    ..Default::default()
                },
            );
        }
    }
    if outside > 0 {
        sw.note(format!("{outside} test evaluations fell outside the energy domain"));
    }
    if unstable > 0 {
        sw.mark_inconclusive(format!("{unstable} Dini estimates did not stabilize on the width ladder"));
    }
    Ok(sw.finish())
}

/// Signed contraction slack between two flows of the same inequality:
/// nonnegative when `c(x_t, y_t) <= e^{-2 lambda (t-s)} c(x_s, y_s)`.
pub fn lambda_contraction_gap(
    c: &CostFn,
    a: &ContinuousCurve,
    b: &ContinuousCurve,
    lambda: f64,
    s: f64,
    t: f64,
) -> Result<f64> {
    let delta = pair_delta(s, t)?;
    let early = c.eval(&a.at(s)?, &b.at(s)?)?;
    let late = c.eval(&a.at(t)?, &b.at(t)?)?;
    Ok(math::exp(-2.0 * lambda * delta) * early - late)
}

pub fn contraction_report(
    c: &CostFn,
    a: &ContinuousCurve,
    b: &ContinuousCurve,
    lambda: f64,
    pairs: &[(f64, f64)],
    tol: f64,
) -> Result<CheckReport> {
    let mut sw = SweepBuilder::new(
        format!("contraction[{}|{}]", a.label(), b.label()),
        tol,
        tol.min(1e-9),
    );
    for &(s, t) in pairs {
        let gap = lambda_contraction_gap(c, a, b, lambda, s, t)?;
        sw.observe(-gap, WorstLocation::at_time(t));
    }
    Ok(sw.finish())
}

/// Energy-dissipation identity `d phi / dt = -|x'|^2` at each time, judged
/// against `max(1e-3, 3 sigma)` with sigma from both estimates.
pub fn energy_identity_report(
    curve: &ContinuousCurve,
    phi: &Energy,
    c: &CostFn,
    times: &[f64],
    hs: &[f64],
) -> Result<CheckReport> {
    let mut sw = SweepBuilder::new(format!("energy_identity[{}]", curve.label()), 1e-3, 1e-3);
    let mut unstable = 0usize;
    for &t in times {
        let d = phi_derivative(curve, phi, t, hs)?;
        let q = metric_speed_squared(curve, c, t, hs)?;
        if !d.conclusive || !q.conclusive {
            unstable += 1;
        }
        let gap = math::abs(d.value + q.value);
        sw.observe_with_allowance(gap, 3.0 * (d.uncertainty + q.uncertainty), WorstLocation::at_time(t));
    }
    if unstable > 0 {
        sw.mark_inconclusive(format!("{unstable} derivative estimates did not stabilize"));
    }
    Ok(sw.finish())
}

/// Exponential decay of the metric speed: `e^{2 lambda t} |x'_t|^2` must not
/// increase along the given times.
pub fn speed_decay_report(
    curve: &ContinuousCurve,
    c: &CostFn,
    lambda: f64,
    times: &[f64],
    hs: &[f64],
) -> Result<CheckReport> {
    if times.len() < 2 {
        return Err(Error::InvalidArgument("speed decay needs at least two times".into()));
    }
    let mut sw = SweepBuilder::new(format!("speed_decay[{}]", curve.label()), 1e-8, 1e-8);
    let mut unstable = 0usize;
    let mut prev: Option<(f64, DerivativeEstimate)> = None;
    for &t in times {
        if let Some((tp, _)) = prev {
            if !(t > tp) {
                return Err(Error::InvalidArgument("times must be strictly increasing".into()));
            }
        }
        let q = metric_speed_squared(curve, c, t, hs)?;
        if !q.conclusive {
            unstable += 1;
        }
        let weight = math::exp(2.0 * lambda * t);
        if let Some((tp, qp)) = prev {
            let wp = math::exp(2.0 * lambda * tp);
            let residual = weight * q.value - wp * qp.value;
            sw.observe_with_allowance(
                residual,
                3.0 * (weight * q.uncertainty + wp * qp.uncertainty),
                WorstLocation::at_time(t),
            );
        }
        prev = Some((t, q));
    }
    if unstable > 0 {
        sw.mark_inconclusive(format!("{unstable} speed estimates did not stabilize"));
    }
    Ok(sw.finish())
}

/// Refined exponential inequality carrying the squared-speed term:
/// `e^{lambda d} c(x, x_t) - c(x, x_s) + E^2/2 |x'_{t+}|^2 <= E (phi(x) - phi(x_t))`
/// with `E = E_lambda(t - s)`. Tight for smooth flows, so the slack doubles
/// as a sharpness probe.
pub fn apriori_gap(
    curve: &ContinuousCurve,
    phi: &Energy,
    c: &CostFn,
    lambda: f64,
    test_points: &FiniteSpace,
    pairs: &[(f64, f64)],
    hs: &[f64],
) -> Result<CheckReport> {
    let mut sw = SweepBuilder::new(format!("apriori_refined[{}]", curve.label()), 1e-9, 1e-9);
    let mut outside = 0usize;
    let mut unstable = 0usize;
    for &(s, t) in pairs {
        let delta = pair_delta(s, t)?;
        let xs = curve.at(s)?;
        let xt = curve.at(t)?;
        let phit = curve.phi_at(phi, t)?;
        let growth = math::exp(lambda * delta);
        let scale_e = e_lambda(lambda, delta);
        let q = metric_speed_squared(curve, c, t, hs)?;
        if !q.conclusive {
            unstable += 1;
        }
        for (ti, x) in test_points.iter().enumerate() {
            let phix = match phi.value(x)? {
                crate::value::Value::Finite(v) => v,
                crate::value::Value::PosInf => {
                    outside += 1;
                    continue;
                }
            };
            let residual = growth * c.eval(x, &xt)? - c.eval(x, &xs)?
                + 0.5 * scale_e * scale_e * q.value
                - scale_e * (phix - phit);
            sw.observe_with_allowance(
                residual,
                3.0 * q.uncertainty * 0.5 * scale_e * scale_e,
                WorstLocation {
                    test_point: Some(ti),
                    time: Some(t),
                    ..Default::default()
                },
            );
        }
    }
    if outside > 0 {
        sw.note(format!("{outside} test evaluations fell outside the energy domain"));
    }
    if unstable > 0 {
        sw.mark_inconclusive(format!("{unstable} speed estimates did not stabilize"));
    }
    Ok(sw.finish())
}

/// Long-time behavior around a candidate minimizer, for `lambda >= 0`:
/// energy-gap sandwich, cost decay, and three speed bounds. Negative moduli
/// carry no such guarantees, so the report is inconclusive there.
///
/// Rows, indexed by `step` in the worst location:
/// 0 lower energy gap, 1 upper energy gap, 2 cost decay,
/// 3 speed dominates the gap, 4 speed decay, 5 speed from initial cost.
pub fn asymptotic_report(
    curve: &ContinuousCurve,
    phi: &Energy,
    c: &CostFn,
    lambda: f64,
    xbar: &Point,
    t0: f64,
    times: &[f64],
    hs: &[f64],
) -> Result<CheckReport> {
    let mut sw = SweepBuilder::new(format!("asymptotics[{}]", curve.label()), 1e-8, 1e-8);
    if lambda < 0.0 {
        sw.mark_inconclusive("negative modulus: no long-time guarantees apply");
        return Ok(sw.finish());
    }
    sw.note("rows: 0 lower gap, 1 upper gap, 2 cost decay, 3 speed vs gap, 4 speed decay, 5 speed from cost");
    let phibar = phi.value_finite(xbar)?;
    let ct0 = c.eval(xbar, &curve.at(t0)?)?;
    let q0 = metric_speed_squared(curve, c, t0, hs)?;
    let mut unstable = if q0.conclusive { 0usize } else { 1usize };
    let mut skipped = 0usize;
    for &t in times {
        if !(t > t0) {
            skipped += 1;
            continue;
        }
        let delta = t - t0;
        let ct = c.eval(xbar, &curve.at(t)?)?;
        let gap = curve.phi_at(phi, t)? - phibar;
        let q = metric_speed_squared(curve, c, t, hs)?;
        if !q.conclusive {
            unstable += 1;
        }
        let decay = math::exp(-2.0 * lambda * delta);
        let scale_e = e_lambda(lambda, delta);
        let rows = [
            (lambda * ct - gap, 0.0),
            (gap - ct0 / scale_e, 0.0),
            (ct - decay * ct0, 0.0),
            (2.0 * lambda * gap - q.value, 3.0 * q.uncertainty),
            (
                q.value - decay * q0.value,
                3.0 * (q.uncertainty + decay * q0.uncertainty),
            ),
            (
                q.value - 2.0 * ct0 / (scale_e * scale_e),
                3.0 * q.uncertainty,
            ),
        ];
        for (row, (residual, allowance)) in rows.iter().enumerate() {
            sw.observe_with_allowance(
                *residual,
                *allowance,
                WorstLocation {
                    step: Some(row),
                    time: Some(t),
                    ..Default::default()
                },
            );
        }
    }
    if skipped > 0 {
        sw.note(format!("{skipped} query times at or before the anchor t0 = {t0} skipped"));
    }
    if unstable > 0 {
        sw.mark_inconclusive(format!("{unstable} speed estimates did not stabilize"));
    }
    Ok(sw.finish())
}

/// Velocity-form stationarity on coordinate curves: the mixed second
/// derivatives of the cost contracted with the velocity must match the
/// energy gradient. Needs a gradient on the energy and coordinate points.
pub fn local_stationarity_residual(
    curve: &ContinuousCurve,
    phi: &Energy,
    c: &CostFn,
    times: &[f64],
    fd_step: f64,
    tol: f64,
) -> Result<CheckReport> {
    if !(fd_step.is_finite() && fd_step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "difference step must be positive, got {fd_step}"
        )));
    }
    if !phi.has_gradient() {
        return Err(Error::Unsupported(format!(
            "'{}' exposes no gradient for the stationarity residual",
            phi.label()
        )));
    }
    let mut sw = SweepBuilder::new(format!("local_stationarity[{}]", curve.label()), tol, 0.0);
    let mut skipped = 0usize;
    for &t in times {
        if t < fd_step {
            skipped += 1;
            continue;
        }
        let xt = curve.at(t)?.coords()?.to_vec();
        let n = xt.len();
        // Central velocity estimate.
        let fwd = curve.at(t + fd_step)?.coords()?.to_vec();
        let bwd = curve.at(t - fd_step)?.coords()?.to_vec();
        let vel: Vec<f64> = fwd
            .iter()
            .zip(bwd.iter())
            .map(|(a, b)| (a - b) / (2.0 * fd_step))
            .collect();
        let grad = phi
            .grad(&curve.at(t)?)
            .expect("gradient presence checked above")?;
        let probe = |dx: Option<(usize, f64)>, dy: Option<(usize, f64)>| -> Result<f64> {
            let mut x = xt.clone();
            let mut y = xt.clone();
            if let Some((l, s)) = dx {
                x[l] += s;
            }
            if let Some((k, s)) = dy {
                y[k] += s;
            }
            c.eval(&Point::euclidean(x)?, &Point::euclidean(y)?)
        };
        let h = fd_step;
        let mut worst = 0.0f64;
        for k in 0..n {
            // Row k of the mixed Hessian d^2 c / dy_k dx_l, times velocity.
            let mut mv = 0.0;
            for l in 0..n {
                let pp = probe(Some((l, h)), Some((k, h)))?;
                let pm = probe(Some((l, h)), Some((k, -h)))?;
                let mp = probe(Some((l, -h)), Some((k, h)))?;
                let mm = probe(Some((l, -h)), Some((k, -h)))?;
                let m_kl = (pp - pm - mp + mm) / (4.0 * h * h);
                mv += m_kl * vel[l];
            }
            worst = worst.max(math::abs(mv - grad[k]));
        }
        sw.observe(worst, WorstLocation::at_time(t));
    }
    if skipped > 0 {
        sw.note(format!("{skipped} times too close to zero for central differences"));
    }
    Ok(sw.finish())
}
