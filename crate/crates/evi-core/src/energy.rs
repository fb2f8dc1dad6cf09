//! Driving energies: extended-real functionals with optional analytic
//! gradients and lower bounds, plus the split form used by the
//! forward-backward scheme.
//!
//! Evaluation goes through [`Energy::value`], which returns a tagged
//! [`Value`]: points outside the domain come back as `PosInf`, never as a
//! float sentinel.

use crate::error::{Error, Result};
use crate::math;
use crate::report::{CheckReport, SweepBuilder, WorstLocation};
use crate::space::{DensitySpace, FiniteSpace, Point};
use crate::value::Value;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

/// Structural form of an energy. Closed-form minimization rules match on
/// this; anything assembled in a way that invalidates the formulas reports
/// `Custom`.
#[derive(Debug, Clone, PartialEq)]
pub enum EnergyForm {
    Zero,
    Constant(f64),
    /// `alpha * |x|^2 / 2`.
    Quadratic { alpha: f64 },
    /// `<v, x>` on coordinates or weights.
    Linear { v: Vec<f64> },
    /// Relative entropy against the reference of a density space.
    RelativeEntropy,
    Custom,
}

type EvalFn = Arc<dyn Fn(&Point) -> Result<f64> + Send + Sync>;
type DomainFn = Arc<dyn Fn(&Point) -> bool + Send + Sync>;
type GradFn = Arc<dyn Fn(&Point) -> Result<Vec<f64>> + Send + Sync>;

/// An extended-real energy with structural metadata.
#[derive(Clone)]
pub struct Energy {
    label: String,
    form: EnergyForm,
    evaluator: EvalFn,
    domain: DomainFn,
    lower_bound: Option<f64>,
    gradient: Option<GradFn>,
}

impl core::fmt::Debug for Energy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Energy")
            .field("label", &self.label)
            .field("form", &self.form)
            .field("lower_bound", &self.lower_bound)
            .field("has_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl Energy {
    pub fn custom(label: impl Into<String>, evaluator: EvalFn, domain: DomainFn) -> Self {
        Energy {
            label: label.into(),
            form: EnergyForm::Custom,
            evaluator,
            domain,
            lower_bound: None,
            gradient: None,
        }
    }

    /// The zero energy on every point.
    pub fn zero() -> Self {
        Energy {
            label: "zero".into(),
            form: EnergyForm::Zero,
            evaluator: Arc::new(|_| Ok(0.0)),
            domain: Arc::new(|_| true),
            lower_bound: Some(0.0),
            gradient: Some(Arc::new(|p: &Point| Ok(alloc::vec![0.0; p.coords()?.len()]))),
        }
    }

    pub fn constant(k: f64) -> Self {
        Energy {
            label: format!("constant:{k}"),
            form: EnergyForm::Constant(k),
            evaluator: Arc::new(move |_| Ok(k)),
            domain: Arc::new(|_| true),
            lower_bound: Some(k),
            gradient: Some(Arc::new(|p: &Point| Ok(alloc::vec![0.0; p.coords()?.len()]))),
        }
    }

    /// `|x|^2 / 2` on euclidean points.
    pub fn quadratic() -> Self {
        Self::quadratic_scaled(1.0)
    }

    /// `alpha |x|^2 / 2` on euclidean points. Negative `alpha` gives a
    /// concave energy, handy as a negative control.
    pub fn quadratic_scaled(alpha: f64) -> Self {
        let label = if alpha == 1.0 {
            "quadratic".into()
        } else {
            format!("quadratic:alpha={alpha}")
        };
        Energy {
            label,
            form: EnergyForm::Quadratic { alpha },
            evaluator: Arc::new(move |p: &Point| Ok(0.5 * alpha * math::dot(p.coords()?, p.coords()?))),
            domain: Arc::new(|p: &Point| matches!(p, Point::Euclidean(_))),
            lower_bound: if alpha >= 0.0 { Some(0.0) } else { None },
            gradient: Some(Arc::new(move |p: &Point| {
                Ok(p.coords()?.iter().map(|&x| alpha * x).collect())
            })),
        }
    }

    /// `<v, x>` on coordinates or density weights of matching length.
    pub fn linear(v: Vec<f64>) -> Self {
        let dim = v.len();
        let v_eval = v.clone();
        let v_grad = v.clone();
        Energy {
            label: "linear".into(),
            form: EnergyForm::Linear { v },
            evaluator: Arc::new(move |p: &Point| {
                let comps = p.components().ok_or_else(|| {
                    Error::Shape("linear energy needs numeric components".into())
                })?;
                Ok(math::dot(&v_eval, comps))
            }),
            domain: Arc::new(move |p: &Point| p.components().map(|c| c.len() == dim).unwrap_or(false)),
            lower_bound: None,
            gradient: Some(Arc::new(move |p: &Point| {
                p.coords()?;
                Ok(v_grad.clone())
            })),
        }
    }

    /// Relative entropy against the reference measure of `space`.
    pub fn relative_entropy(space: Arc<DensitySpace>) -> Self {
        let space_dom = space.clone();
        let space_eval = space.clone();
        Energy {
            label: "entropy".into(),
            form: EnergyForm::RelativeEntropy,
            evaluator: Arc::new(move |p: &Point| {
                // Sum directly against the reference slice; the reference
                // itself need not be a member of the ratio box.
                let w = p.weights()?;
                let r = space_eval.reference();
                if w.len() != r.len() {
                    return Err(Error::Shape("density and reference lengths differ".into()));
                }
                let mut acc = 0.0;
                for i in 0..w.len() {
                    if w[i] > 0.0 {
                        acc += w[i] * math::ln(w[i] / r[i]);
                    }
                }
                Ok(acc)
            }),
            domain: Arc::new(move |p: &Point| match p.density_space() {
                Some(sp) => sp.reference() == space_dom.reference(),
                None => false,
            }),
            lower_bound: Some(0.0),
            gradient: None,
        }
    }

    pub fn with_lower_bound(mut self, b: f64) -> Self {
        self.lower_bound = Some(b);
        self
    }

    pub fn with_gradient(mut self, g: GradFn) -> Self {
        self.gradient = Some(g);
        self
    }

    /// Intersect the domain with a predicate. The structural form degrades to
    /// `Custom` because closed-form minimizers stop being valid on a
    /// restricted domain.
    pub fn restrict(mut self, tag: &str, pred: Arc<dyn Fn(&Point) -> bool + Send + Sync>) -> Self {
        let old = self.domain.clone();
        self.domain = Arc::new(move |p: &Point| old(p) && pred(p));
        self.label = format!("{}|{tag}", self.label);
        self.form = EnergyForm::Custom;
        self
    }

    /// Pointwise sum. Structural forms combine when the algebra is exact
    /// (zero is the identity, like forms add); anything else is `Custom`.
    pub fn add(a: &Energy, b: &Energy) -> Energy {
        let form = match (&a.form, &b.form) {
            (EnergyForm::Zero, f) => f.clone(),
            (f, EnergyForm::Zero) => f.clone(),
            (EnergyForm::Constant(x), EnergyForm::Constant(y)) => EnergyForm::Constant(x + y),
            (EnergyForm::Quadratic { alpha: x }, EnergyForm::Quadratic { alpha: y }) => {
                EnergyForm::Quadratic { alpha: x + y }
            }
            (EnergyForm::Linear { v: u }, EnergyForm::Linear { v: w }) if u.len() == w.len() => {
                EnergyForm::Linear {
                    v: u.iter().zip(w.iter()).map(|(x, y)| x + y).collect(),
                }
            }
            _ => EnergyForm::Custom,
        };
        let (ea, eb) = (a.evaluator.clone(), b.evaluator.clone());
        let (da, db) = (a.domain.clone(), b.domain.clone());
        let gradient = match (&a.gradient, &b.gradient) {
            (Some(ga), Some(gb)) => {
                let (ga, gb) = (ga.clone(), gb.clone());
                Some(Arc::new(move |p: &Point| {
                    let mut u = ga(p)?;
                    let w = gb(p)?;
                    if u.len() != w.len() {
                        return Err(Error::Shape("summand gradients disagree in length".into()));
                    }
                    for (x, y) in u.iter_mut().zip(w.iter()) {
                        *x += y;
                    }
                    Ok(u)
                }) as GradFn)
            }
            _ => None,
        };
        Energy {
            label: format!("{}+{}", a.label, b.label),
            form,
            evaluator: Arc::new(move |p: &Point| Ok(ea(p)? + eb(p)?)),
            domain: Arc::new(move |p: &Point| da(p) && db(p)),
            lower_bound: match (a.lower_bound, b.lower_bound) {
                (Some(x), Some(y)) => Some(x + y),
                _ => None,
            },
            gradient,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn form(&self) -> &EnergyForm {
        &self.form
    }

    pub fn lower_bound(&self) -> Option<f64> {
        self.lower_bound
    }

    pub fn in_domain(&self, p: &Point) -> bool {
        (self.domain)(p)
    }

    /// Tagged extended-real evaluation.
    pub fn value(&self, p: &Point) -> Result<Value> {
        if !(self.domain)(p) {
            return Ok(Value::PosInf);
        }
        let v = (self.evaluator)(p)?;
        if v.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "energy '{}' evaluated to NaN",
                self.label
            )));
        }
        Ok(Value::Finite(v))
    }

    /// Finite evaluation or an out-of-domain error.
    pub fn value_finite(&self, p: &Point) -> Result<f64> {
        self.value(p)?.expect_finite(&self.label)
    }

    /// Analytic gradient (euclidean points only), if one is attached.
    pub fn grad(&self, p: &Point) -> Option<Result<Vec<f64>>> {
        self.gradient.as_ref().map(|g| g(p))
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }
}

/// Compare an attached analytic gradient against central finite differences
/// on a euclidean sample. The residual is the worst relative deviation.
pub fn gradient_fd_report(e: &Energy, sample: &FiniteSpace, step: f64, rel_tol: f64) -> Result<CheckReport> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidArgument(format!("fd step must be positive, got {step}")));
    }
    if !e.has_gradient() {
        return Err(Error::Unsupported(format!("energy '{}' has no gradient attached", e.label())));
    }
    let mut sw = SweepBuilder::new(format!("gradient_fd[{}]", e.label()), rel_tol, 0.0);
    for (idx, p) in sample.iter().enumerate() {
        let coords = p.coords()?;
        let g = match e.grad(p) {
            Some(r) => r?,
            None => unreachable!(),
        };
        if g.len() != coords.len() {
            return Err(Error::Shape("gradient length differs from the point dimension".into()));
        }
        for k in 0..coords.len() {
            let mut hi = coords.to_vec();
            let mut lo = coords.to_vec();
            hi[k] += step;
            lo[k] -= step;
            let vh = e.value_finite(&Point::euclidean(hi)?)?;
            let vl = e.value_finite(&Point::euclidean(lo)?)?;
            let fd = (vh - vl) / (2.0 * step);
            let rel = math::abs(g[k] - fd) / (1.0 + math::abs(fd));
            sw.observe(rel, WorstLocation::at_test_point(idx));
        }
    }
    Ok(sw.finish())
}

/// Split driving energy `phi = f + g` with per-part convexity moduli and a
/// step-size ceiling for the forward-backward scheme.
#[derive(Debug, Clone)]
pub struct SplitEnergy {
    f: Energy,
    g: Energy,
    lambda_f: f64,
    lambda_g: f64,
    tau_bar: f64,
}

impl SplitEnergy {
    pub fn new(f: Energy, g: Energy, lambda_f: f64, lambda_g: f64, tau_bar: f64) -> Result<Self> {
        if !(tau_bar.is_finite() && tau_bar > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "step ceiling must be positive, got {tau_bar}"
            )));
        }
        if !(lambda_f.is_finite() && lambda_g.is_finite()) {
            return Err(Error::InvalidArgument("convexity moduli must be finite".into()));
        }
        Ok(SplitEnergy {
            f,
            g,
            lambda_f,
            lambda_g,
            tau_bar,
        })
    }

    pub fn f(&self) -> &Energy {
        &self.f
    }

    pub fn g(&self) -> &Energy {
        &self.g
    }

    pub fn lambda_f(&self) -> f64 {
        self.lambda_f
    }

    pub fn lambda_g(&self) -> f64 {
        self.lambda_g
    }

    pub fn lambda_sum(&self) -> f64 {
        self.lambda_f + self.lambda_g
    }

    pub fn tau_bar(&self) -> f64 {
        self.tau_bar
    }

    /// The combined energy `f + g`.
    pub fn phi(&self) -> Energy {
        Energy::add(&self.f, &self.g)
    }

    /// Tagged evaluation of `f + g` at a point.
    pub fn phi_value(&self, p: &Point) -> Result<Value> {
        Ok(self.f.value(p)?.plus(self.g.value(p)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn quadratic_energy_values_and_gradient() {
        let e = Energy::quadratic();
        let p = Point::euclidean(vec![3.0, 4.0]).unwrap();
        assert_eq!(e.value_finite(&p).unwrap(), 12.5);
        assert_eq!(e.grad(&p).unwrap().unwrap(), vec![3.0, 4.0]);
        assert_eq!(e.lower_bound(), Some(0.0));
        assert_eq!(e.label(), "quadratic");
        assert_eq!(Energy::quadratic_scaled(2.0).label(), "quadratic:alpha=2");
        assert_eq!(Energy::quadratic_scaled(-2.0).lower_bound(), None);
    }

    #[test]
    fn quadratic_is_infinite_off_its_variant() {
        let e = Energy::quadratic();
        let sp = DensitySpace::uniform(2, 0.0, 10.0).unwrap();
        let d = Point::density(vec![0.5, 0.5], sp).unwrap();
        assert_eq!(e.value(&d).unwrap(), Value::PosInf);
        assert!(e.value_finite(&d).is_err());
    }

    #[test]
    fn linear_energy_covers_both_numeric_variants() {
        let e = Energy::linear(vec![2.0, -1.0]);
        let x = Point::euclidean(vec![1.0, 1.0]).unwrap();
        assert_eq!(e.value_finite(&x).unwrap(), 1.0);
        let sp = DensitySpace::uniform(2, 0.0, 10.0).unwrap();
        let d = Point::density(vec![0.5, 0.5], sp).unwrap();
        assert_eq!(e.value_finite(&d).unwrap(), 0.5);
        // Gradient is reserved for euclidean points.
        assert!(e.grad(&d).unwrap().is_err());
        // Dimension mismatch leaves the domain.
        let bad = Point::euclidean(vec![1.0]).unwrap();
        assert_eq!(e.value(&bad).unwrap(), Value::PosInf);
    }

    #[test]
    fn relative_entropy_against_the_reference() {
        let sp = DensitySpace::new(vec![0.25, 0.75], 0.0, 4.0).unwrap();
        let e = Energy::relative_entropy(sp.clone());
        let at_ref = Point::density(vec![0.25, 0.75], sp.clone()).unwrap();
        assert_eq!(e.value_finite(&at_ref).unwrap(), 0.0);
        let mu = Point::density(vec![0.5, 0.5], sp.clone()).unwrap();
        let v = e.value_finite(&mu).unwrap();
        assert!((v - 0.1438410362258904).abs() < 1e-15);
        // Densities over a different support are outside the domain.
        let other = DensitySpace::uniform(2, 0.0, 10.0).unwrap();
        let q = Point::density(vec![0.5, 0.5], other).unwrap();
        assert_eq!(e.value(&q).unwrap(), Value::PosInf);
    }

    #[test]
    fn restriction_degrades_the_form_and_shrinks_the_domain() {
        let e = Energy::quadratic().restrict(
            "ball",
            Arc::new(|p: &Point| p.coords().map(|c| math::dot(c, c) <= 1.0).unwrap_or(false)),
        );
        assert_eq!(e.form(), &EnergyForm::Custom);
        let inside = Point::euclidean(vec![0.5]).unwrap();
        let outside = Point::euclidean(vec![2.0]).unwrap();
        assert_eq!(e.value_finite(&inside).unwrap(), 0.125);
        assert_eq!(e.value(&outside).unwrap(), Value::PosInf);
    }

    #[test]
    fn sums_combine_forms_exactly_or_degrade() {
        let q = Energy::quadratic_scaled(0.5);
        let sum = Energy::add(&q, &Energy::quadratic_scaled(0.5));
        assert_eq!(sum.form(), &EnergyForm::Quadratic { alpha: 1.0 });
        let with_zero = Energy::add(&Energy::zero(), &q);
        assert_eq!(with_zero.form(), &EnergyForm::Quadratic { alpha: 0.5 });
        let mixed = Energy::add(&q, &Energy::linear(vec![1.0]));
        assert_eq!(mixed.form(), &EnergyForm::Custom);
        let p = Point::euclidean(vec![2.0]).unwrap();
        assert_eq!(sum.value_finite(&p).unwrap(), 2.0);
        assert_eq!(sum.grad(&p).unwrap().unwrap(), vec![2.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let grid = FiniteSpace::euclidean_grid_1d(-3.0, 3.0, 100).unwrap();
        for e in [Energy::quadratic(), Energy::linear(vec![0.7])] {
            let r = gradient_fd_report(&e, &grid, 1e-5, 1e-6).unwrap();
            assert!(r.pass, "{}: worst {}", r.check_name, r.worst_residual);
        }
    }

    #[test]
    fn split_energy_validates_and_combines() {
        let se = SplitEnergy::new(Energy::linear(vec![1.0]), Energy::quadratic(), 0.0, 1.0, 0.5).unwrap();
        let p = Point::euclidean(vec![2.0]).unwrap();
        assert_eq!(se.phi_value(&p).unwrap(), Value::Finite(4.0));
        assert_eq!(se.lambda_sum(), 1.0);
        assert!(SplitEnergy::new(Energy::zero(), Energy::zero(), 0.0, 0.0, 0.0).is_err());
        assert!(SplitEnergy::new(Energy::zero(), Energy::zero(), f64::NAN, 0.0, 1.0).is_err());
    }
}
