//! Cost functions on pairs of states: builders for the standard families,
//! dissipativity diagnostics, information divergences, and a two-hop
//! regularity scan.
//!
//! A cost is dissipative when it is nonnegative and vanishes exactly on the
//! diagonal. Several downstream shortcuts (resting maps collapsing to the
//! identity, stationarity sets containing the point itself) key off that flag,
//! so [`check_dissipative`] exists to audit it on a sample.

use crate::error::{Error, Result};
use crate::math;
use crate::report::{CheckReport, Verdict, WorstLocation};
use crate::space::{FiniteSpace, Point};
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

/// Shared evaluator for a cost on pairs of points.
pub type CostEval = Arc<dyn Fn(&Point, &Point) -> Result<f64> + Send + Sync>;

/// A cost function with its structural metadata.
///
/// `decomposition`, when present, splits the cost as `c = c1 + c2` with `c1`
/// symmetric nonnegative and `c2` satisfying the triangle inequality; the
/// dyadic Cauchy bound for the implicit scheme requires it.
#[derive(Clone)]
pub struct CostFn {
    label: String,
    symmetric: bool,
    dissipative: bool,
    evaluator: CostEval,
    decomposition: Option<(CostEval, CostEval)>,
}

impl core::fmt::Debug for CostFn {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("CostFn")
            .field("label", &self.label)
            .field("symmetric", &self.symmetric)
            .field("dissipative", &self.dissipative)
            .field("has_decomposition", &self.decomposition.is_some())
            .finish()
    }
}

impl CostFn {
    pub fn new(label: impl Into<String>, symmetric: bool, dissipative: bool, evaluator: CostEval) -> Self {
        CostFn {
            label: label.into(),
            symmetric,
            dissipative,
            evaluator,
            decomposition: None,
        }
    }

    /// Attach a `c = c1 + c2` split (`c1` symmetric nonnegative, `c2`
    /// triangle).
    pub fn with_decomposition(mut self, c1: CostEval, c2: CostEval) -> Self {
        self.decomposition = Some((c1, c2));
        self
    }

    pub fn eval(&self, x: &Point, y: &Point) -> Result<f64> {
        (self.evaluator)(x, y)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn is_dissipative(&self) -> bool {
        self.dissipative
    }

    pub fn decomposition(&self) -> Option<(&CostEval, &CostEval)> {
        self.decomposition.as_ref().map(|(a, b)| (a, b))
    }
}

/// Components of two points, checked for matching variant and length.
pub(crate) fn paired_components<'a>(x: &'a Point, y: &'a Point) -> Result<(&'a [f64], &'a [f64])> {
    if !x.same_variant(y) {
        return Err(Error::Shape(format!(
            "mixed point variants: {} vs {}",
            x.variant_name(),
            y.variant_name()
        )));
    }
    let (a, b) = match (x.components(), y.components()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Unsupported(
                "index points carry no coordinates; use a table cost".into(),
            ))
        }
    };
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "component length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok((a, b))
}

/// Half squared euclidean distance on components, with the trivial
/// `(c, 0)` decomposition attached.
pub fn make_squared_euclidean() -> CostFn {
    let eval: CostEval = Arc::new(|x: &Point, y: &Point| {
        let (a, b) = paired_components(x, y)?;
        let d = math::dist2(a, b);
        Ok(0.5 * d * d)
    });
    let zero: CostEval = Arc::new(|_: &Point, _: &Point| Ok(0.0));
    CostFn::new("sq_euclid", true, true, eval.clone()).with_decomposition(eval, zero)
}

/// Euclidean distance to the power `p >= 1`. For `p = 1` the cost is itself a
/// metric and ships with the `(0, c)` decomposition.
pub fn make_power_distance(p: f64) -> Result<CostFn> {
    if !(p.is_finite() && p >= 1.0) {
        return Err(Error::InvalidArgument(format!("power must satisfy p >= 1, got {p}")));
    }
    let eval: CostEval = Arc::new(move |x: &Point, y: &Point| {
        let (a, b) = paired_components(x, y)?;
        Ok(math::powf(math::dist2(a, b), p))
    });
    let c = CostFn::new(format!("power_dist:{p}"), true, true, eval.clone());
    if p == 1.0 {
        let zero: CostEval = Arc::new(|_: &Point, _: &Point| Ok(0.0));
        Ok(c.with_decomposition(zero, eval))
    } else {
        Ok(c)
    }
}

/// Bregman gap of a convex potential: `u(x) - u(y) - <grad u(y), x - y>`.
/// Asymmetric in general, dissipative for strictly convex `u`.
pub fn make_bregman(
    label: impl Into<String>,
    potential: Arc<dyn Fn(&[f64]) -> Result<f64> + Send + Sync>,
    gradient: Arc<dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync>,
) -> CostFn {
    let eval: CostEval = Arc::new(move |x: &Point, y: &Point| {
        let (a, b) = paired_components(x, y)?;
        let gy = gradient(b)?;
        if gy.len() != b.len() {
            return Err(Error::Shape(format!(
                "gradient returned {} components for a {}-dimensional point",
                gy.len(),
                b.len()
            )));
        }
        let mut lin = 0.0;
        for k in 0..a.len() {
            lin += gy[k] * (a[k] - b[k]);
        }
        Ok(potential(a)? - potential(b)? - lin)
    });
    CostFn::new(label, false, true, eval)
}

/// Bregman cost of the half squared norm; coincides with `sq_euclid`.
pub fn make_bregman_quadratic() -> CostFn {
    make_bregman(
        "bregman:quadratic",
        Arc::new(|v: &[f64]| Ok(0.5 * math::dot(v, v))),
        Arc::new(|v: &[f64]| Ok(v.to_vec())),
    )
}

/// Cost read from an explicit matrix over index points.
pub fn make_table_cost(label: impl Into<String>, table: Vec<Vec<f64>>) -> Result<CostFn> {
    let n = table.len();
    if n == 0 || table.iter().any(|row| row.len() != n) {
        return Err(Error::Shape("cost table must be square and non-empty".into()));
    }
    let mut symmetric = true;
    let mut dissipative = true;
    for i in 0..n {
        if table[i][i] != 0.0 {
            dissipative = false;
        }
        for j in 0..n {
            if table[i][j] != table[j][i] {
                symmetric = false;
            }
            if table[i][j] < 0.0 || (i != j && table[i][j] == 0.0) {
                dissipative = false;
            }
        }
    }
    let eval: CostEval = Arc::new(move |x: &Point, y: &Point| {
        let (i, j) = match (x.as_index(), y.as_index()) {
            (Some(i), Some(j)) => (i, j),
            _ => {
                return Err(Error::Shape(format!(
                    "table cost needs index points, got {} and {}",
                    x.variant_name(),
                    y.variant_name()
                )))
            }
        };
        if i >= n || j >= n {
            return Err(Error::Shape(format!("index out of table range: ({i}, {j}) vs {n}")));
        }
        Ok(table[i][j])
    });
    Ok(CostFn::new(label, symmetric, dissipative, eval))
}

/// Relative entropy of two member densities over the same support, with the
/// `0 ln 0 = 0` convention. A positive weight against a zero reference weight
/// is reported as a genuine infinity, not a float overflow.
pub fn kl_divergence(mu: &Point, nu: &Point) -> Result<f64> {
    let (a, b) = paired_components(mu, nu)?;
    if !matches!(mu, Point::Density { .. }) {
        return Err(Error::Shape(format!(
            "relative entropy needs density points, got {}",
            mu.variant_name()
        )));
    }
    let mut acc = 0.0;
    for i in 0..a.len() {
        if a[i] == 0.0 {
            continue;
        }
        if b[i] == 0.0 {
            return Err(Error::Infinite(format!(
                "relative entropy diverges: atom {i} has mass {} against 0",
                a[i]
            )));
        }
        acc += a[i] * math::ln(a[i] / b[i]);
    }
    Ok(acc)
}

/// Relative entropy packaged as a cost on density points.
pub fn make_kl_cost() -> CostFn {
    let eval: CostEval = Arc::new(|x: &Point, y: &Point| kl_divergence(x, y));
    CostFn::new("kl", false, true, eval)
}

/// Audit the dissipativity flags of a cost on a pairwise-distinct sample:
/// diagonal values within `1e-10` of zero, no pair below `-1e-10`, and
/// strictly positive off-diagonal values.
pub fn check_dissipative(c: &CostFn, sample: &FiniteSpace) -> CheckReport {
    let tol = 1e-10;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_loc = WorstLocation::default();
    let mut min_off: Option<(f64, usize, usize)> = None;
    let mut eval_failures = 0usize;
    let mut notes: Vec<String> = Vec::new();
    let mut samples = 0usize;

    for i in 0..sample.len() {
        for j in 0..sample.len() {
            let v = match c.eval(&sample.points()[i], &sample.points()[j]) {
                Ok(v) => v,
                Err(e) => {
                    eval_failures += 1;
                    if eval_failures <= 3 {
                        notes.push(format!("evaluation failed at ({i}, {j}): {e}"));
                    }
                    continue;
                }
            };
            samples += 1;
            let residual = if i == j { math::abs(v) } else { -v };
            if residual > worst {
                worst = residual;
                worst_loc = WorstLocation {
                    test_point: Some(i),
                    step: Some(j),
                    ..Default::default()
                };
            }
            if i != j {
                match min_off {
                    Some((m, _, _)) if v >= m => {}
                    _ => min_off = Some((v, i, j)),
                }
            }
        }
    }

    let mut positivity_ok = true;
    if let Some((m, i, j)) = min_off {
        notes.push(format!("min off-diagonal cost {m:.6e} at ({i}, {j})"));
        if m <= 0.0 {
            positivity_ok = false;
            notes.push(format!(
                "off-diagonal cost is not strictly positive: c = {m:.6e} at ({i}, {j})"
            ));
        }
    }
    if eval_failures > 0 {
        notes.push(format!("{eval_failures} pair evaluations failed"));
    }

    let worst = if samples == 0 { 0.0 } else { worst };
    let verdict = if samples == 0 {
        notes.push("no pairs could be evaluated".into());
        Verdict::Inconclusive
    } else if worst > tol || !positivity_ok {
        Verdict::Fail
    } else if eval_failures > 0 {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };

    CheckReport {
        check_name: format!("dissipative[{}]", c.label()),
        pass: verdict == Verdict::Pass,
        verdict,
        worst_residual: worst,
        worst_location: worst_loc,
        tolerance: tol,
        engineering_slack: 0.0,
        runtime_ms: 0.0,
        notes,
    }
}

/// `KL(mu | nu) - 2 TV(mu, nu)^2`, the slack in the classical lower bound on
/// relative entropy by total variation. Nonnegative up to roundoff.
pub fn pinsker_gap(mu: &Point, nu: &Point) -> Result<f64> {
    let kl = kl_divergence(mu, nu)?;
    let (a, b) = paired_components(mu, nu)?;
    let mut l1 = 0.0;
    for i in 0..a.len() {
        l1 += math::abs(a[i] - b[i]);
    }
    let tv = 0.5 * l1;
    Ok(kl - 2.0 * tv * tv)
}

/// Outcome of [`regularity_modulus`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityScan {
    /// Largest `c(x, y)` over qualifying two-hop triples; 0 when none qualify.
    pub modulus: f64,
    /// Number of qualifying triples.
    pub qualifying: usize,
}

/// Scan triples `(x, p, y)` from the sample with `c(x, p) <= r1` and
/// `c(p, y) <= r2`, and report the largest direct cost `c(x, y)` seen.
pub fn regularity_modulus(c: &CostFn, sample: &FiniteSpace, r1: f64, r2: f64) -> Result<RegularityScan> {
    if !(r1.is_finite() && r1 > 0.0 && r2.is_finite() && r2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "hop radii must be positive, got r1={r1}, r2={r2}"
        )));
    }
    let n = sample.len();
    let mut table = alloc::vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            table[i * n + j] = c.eval(&sample.points()[i], &sample.points()[j])?;
        }
    }
    let mut modulus = 0.0f64;
    let mut qualifying = 0usize;
    for i in 0..n {
        for p in 0..n {
            if table[i * n + p] > r1 {
                continue;
            }
            for j in 0..n {
                if table[p * n + j] > r2 {
                    continue;
                }
                qualifying += 1;
                let direct = table[i * n + j];
                if direct > modulus {
                    modulus = direct;
                }
            }
        }
    }
    Ok(RegularityScan { modulus, qualifying })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::space::DensitySpace;

    fn pt(x: f64) -> Point {
        Point::euclidean(vec![x]).unwrap()
    }

    #[test]
    fn squared_euclidean_values() {
        let c = make_squared_euclidean();
        let x = Point::euclidean(vec![1.0, 2.0]).unwrap();
        let y = Point::euclidean(vec![4.0, 6.0]).unwrap();
        assert_eq!(c.eval(&x, &y).unwrap(), 12.5);
        assert_eq!(c.eval(&x, &x).unwrap(), 0.0);
        assert!(c.is_symmetric() && c.is_dissipative());
        assert!(c.decomposition().is_some());
        assert_eq!(c.label(), "sq_euclid");
    }

    #[test]
    fn power_distance_values_and_validation() {
        let c1 = make_power_distance(1.0).unwrap();
        assert_eq!(c1.eval(&pt(3.0), &pt(1.0)).unwrap(), 2.0);
        assert!(c1.decomposition().is_some(), "p = 1 is a metric, triangle part available");
        let c3 = make_power_distance(3.0).unwrap();
        assert_eq!(c3.eval(&pt(0.0), &pt(2.0)).unwrap(), 8.0);
        assert!(c3.decomposition().is_none());
        assert_eq!(c3.label(), "power_dist:3");
        assert!(make_power_distance(0.5).is_err());
        assert!(make_power_distance(f64::NAN).is_err());
    }

    #[test]
    fn mixed_variants_are_shape_errors() {
        let c = make_squared_euclidean();
        let sp = DensitySpace::uniform(2, 0.0, 10.0).unwrap();
        let d = Point::density(vec![0.5, 0.5], sp).unwrap();
        assert!(matches!(c.eval(&pt(0.0), &d), Err(Error::Shape(_))));
        let short = Point::euclidean(vec![1.0]).unwrap();
        let long = Point::euclidean(vec![1.0, 2.0]).unwrap();
        assert!(matches!(c.eval(&short, &long), Err(Error::Shape(_))));
        assert!(matches!(
            c.eval(&Point::index(0), &Point::index(1)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn bregman_quadratic_matches_squared_euclidean() {
        let b = make_bregman_quadratic();
        let c = make_squared_euclidean();
        let xs = [
            vec![1.0, -0.5],
            vec![0.3, 0.9],
            vec![-2.0, 4.0],
        ];
        for a in &xs {
            for bpt in &xs {
                let x = Point::euclidean(a.clone()).unwrap();
                let y = Point::euclidean(bpt.clone()).unwrap();
                let lhs = b.eval(&x, &y).unwrap();
                let rhs = c.eval(&x, &y).unwrap();
                assert!((lhs - rhs).abs() <= 1e-12, "{lhs} vs {rhs}");
            }
        }
        assert!(!b.is_symmetric(), "bregman costs are asymmetric in general");
    }

    #[test]
    fn bregman_negative_entropy_reproduces_relative_entropy() {
        let breg = make_bregman(
            "bregman:negentropy",
            Arc::new(|v: &[f64]| {
                let mut acc = 0.0;
                for &w in v {
                    if w > 0.0 {
                        acc += w * math::ln(w);
                    }
                }
                Ok(acc)
            }),
            Arc::new(|v: &[f64]| v.iter().map(|&w| Ok(math::ln(w) + 1.0)).collect()),
        );
        let sp = DensitySpace::uniform(2, 0.1, 2.0).unwrap();
        let x = Point::density(vec![0.3, 0.7], sp.clone()).unwrap();
        let y = Point::density(vec![0.6, 0.4], sp).unwrap();
        let via_bregman = breg.eval(&x, &y).unwrap();
        let direct = kl_divergence(&x, &y).unwrap();
        assert!((via_bregman - direct).abs() <= 1e-12, "{via_bregman} vs {direct}");
    }

    #[test]
    fn kl_frozen_values() {
        let sp = DensitySpace::new(vec![0.5, 0.5], 0.0, 2.0).unwrap();
        let mu = Point::density(vec![0.5, 0.5], sp.clone()).unwrap();
        let nu = Point::density(vec![0.25, 0.75], sp.clone()).unwrap();
        let kl = kl_divergence(&mu, &nu).unwrap();
        assert!((kl - 0.1438410362258904).abs() < 1e-15);

        // 0 ln 0 = 0: a vanished atom contributes nothing.
        let spike = Point::density(vec![1.0, 0.0], sp.clone()).unwrap();
        let kl2 = kl_divergence(&spike, &mu).unwrap();
        assert!((kl2 - core::f64::consts::LN_2).abs() < 1e-15);

        // Mass against a zero reference atom is a genuine infinity.
        assert!(matches!(kl_divergence(&mu, &spike), Err(Error::Infinite(_))));

        assert_eq!(kl_divergence(&mu, &mu).unwrap(), 0.0);
    }

    #[test]
    fn pinsker_gap_frozen_value() {
        let sp = DensitySpace::new(vec![0.5, 0.5], 0.0, 2.0).unwrap();
        let mu = Point::density(vec![0.5, 0.5], sp.clone()).unwrap();
        let nu = Point::density(vec![0.25, 0.75], sp).unwrap();
        let gap = pinsker_gap(&mu, &nu).unwrap();
        assert!((gap - 0.0188410362258904).abs() < 1e-15);
        assert!(gap >= -1e-12);
    }

    #[test]
    fn table_cost_reads_the_matrix() {
        let c = make_table_cost("abs_index", vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(c.is_symmetric() && c.is_dissipative());
        assert_eq!(c.eval(&Point::index(0), &Point::index(1)).unwrap(), 1.0);
        assert_eq!(c.eval(&Point::index(1), &Point::index(1)).unwrap(), 0.0);
        assert!(c.eval(&Point::index(0), &Point::index(2)).is_err());
        let asym = make_table_cost("asym", vec![vec![0.0, 2.0], vec![1.0, 0.0]]).unwrap();
        assert!(!asym.is_symmetric());
    }

    #[test]
    fn dissipative_check_passes_for_squared_euclidean() {
        let c = make_squared_euclidean();
        let grid = FiniteSpace::euclidean_grid_1d(-1.0, 1.0, 9).unwrap();
        let r = check_dissipative(&c, &grid);
        assert_eq!(r.verdict, Verdict::Pass, "notes: {:?}", r.notes);
        assert!(r.worst_residual <= 1e-10);
    }

    #[test]
    fn dissipative_check_flags_negative_and_shifted_costs() {
        // c(x, y) = x - y goes negative off the diagonal.
        let signed: CostEval = Arc::new(|x: &Point, y: &Point| {
            Ok(x.coords()?[0] - y.coords()?[0])
        });
        let c = CostFn::new("signed_gap", false, false, signed);
        let grid = FiniteSpace::new(vec![pt(0.0), pt(1.0)]).unwrap();
        let r = check_dissipative(&c, &grid);
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.worst_residual, 1.0, "worst violation is -c(0, 1) = 1");
        assert_eq!(r.worst_location.test_point, Some(0));
        assert_eq!(r.worst_location.step, Some(1));

        // c(x, y) = (x - y - 1)^2 fails on the diagonal.
        let shifted: CostEval = Arc::new(|x: &Point, y: &Point| {
            let d = x.coords()?[0] - y.coords()?[0] - 1.0;
            Ok(d * d)
        });
        let c = CostFn::new("shifted_sq", false, false, shifted);
        let r = check_dissipative(&c, &grid);
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.worst_residual, 1.0, "diagonal value c(x, x) = 1");
    }

    #[test]
    fn regularity_modulus_frozen_scan() {
        let c = make_squared_euclidean();
        let grid = FiniteSpace::euclidean_grid_1d(0.0, 1.0, 101).unwrap();
        // Hop radius 0.0201 admits coordinate gaps up to 0.2 on this grid, so
        // the farthest two-hop endpoints sit 0.4 apart.
        let scan = regularity_modulus(&c, &grid, 0.0201, 0.0201).unwrap();
        assert!((scan.modulus - 0.08).abs() < 1e-12, "got {}", scan.modulus);
        assert!(scan.qualifying > 0);
    }

    #[test]
    fn regularity_modulus_reports_empty_scans() {
        let shifted: CostEval = Arc::new(|x: &Point, y: &Point| {
            let d = x.coords()?[0] - y.coords()?[0] - 1.0;
            Ok(d * d)
        });
        let c = CostFn::new("shifted_sq", false, false, shifted);
        let grid = FiniteSpace::new(vec![pt(0.0), pt(0.5)]).unwrap();
        let scan = regularity_modulus(&c, &grid, 0.01, 0.01).unwrap();
        assert_eq!(scan.qualifying, 0);
        assert_eq!(scan.modulus, 0.0);
        assert!(regularity_modulus(&c, &grid, -1.0, 0.1).is_err());
    }
}
