//! Uniform check reporting: every verification routine reduces to a
//! [`CheckReport`] with a named worst residual, a pinned tolerance, and a
//! three-valued verdict.

use alloc::string::String;
use alloc::vec::Vec;

/// Outcome of a check. `Inconclusive` means the estimator could not resolve
/// the quantity (e.g. a non-monotone finite-difference ladder), not that a
/// violation was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Where the worst residual of a sweep was observed. Fields that do not apply
/// to a given check stay `None`.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WorstLocation {
    /// Ladder level (0 = coarsest).
    pub level: Option<u32>,
    /// Step or segment index within a run.
    pub step: Option<usize>,
    /// Index into the sweep's list of test points.
    pub test_point: Option<usize>,
    /// Continuous time of the observation.
    pub time: Option<f64>,
}

impl WorstLocation {
    pub fn at_time(t: f64) -> Self {
        WorstLocation {
            time: Some(t),
            ..Default::default()
        }
    }

    pub fn at_test_point(i: usize) -> Self {
        WorstLocation {
            test_point: Some(i),
            ..Default::default()
        }
    }
}

/// Result of one named check.
///
/// `pass` is redundant with `verdict` and kept for quick filtering. The
/// residual convention is "signed violation": a check passes when
/// `worst_residual <= tolerance`. `engineering_slack` is the part of the
/// tolerance that is engineering allowance rather than analytic bound; strict
/// mode re-judges with it removed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CheckReport {
    pub check_name: String,
    pub pass: bool,
    pub verdict: Verdict,
    pub worst_residual: f64,
    pub worst_location: WorstLocation,
    pub tolerance: f64,
    pub engineering_slack: f64,
    /// Wall-clock cost of the check; callers with a clock fill this in, the
    /// core leaves it at zero.
    pub runtime_ms: f64,
    pub notes: Vec<String>,
}

impl CheckReport {
    /// Re-judge with the engineering slack removed from the tolerance.
    /// Inconclusive verdicts stay inconclusive.
    pub fn strict_verdict(&self) -> Verdict {
        match self.verdict {
            Verdict::Inconclusive => Verdict::Inconclusive,
            _ => {
                if self.worst_residual <= self.tolerance - self.engineering_slack {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                }
            }
        }
    }
}

/// Accumulator for residual sweeps. Tracks the worst (largest) residual and
/// its location, collects notes, and turns into a [`CheckReport`].
#[derive(Debug)]
pub struct SweepBuilder {
    name: String,
    tolerance: f64,
    engineering_slack: f64,
    worst: f64,
    location: WorstLocation,
    samples: usize,
    inconclusive: bool,
    notes: Vec<String>,
}

impl SweepBuilder {
    pub fn new(name: impl Into<String>, tolerance: f64, engineering_slack: f64) -> Self {
        SweepBuilder {
            name: name.into(),
            tolerance,
            engineering_slack,
            worst: f64::NEG_INFINITY,
            location: WorstLocation::default(),
            samples: 0,
            inconclusive: false,
            notes: Vec::new(),
        }
    }

    /// Record one residual sample. NaN marks the whole sweep inconclusive.
    pub fn observe(&mut self, residual: f64, location: WorstLocation) {
        if residual.is_nan() {
            self.inconclusive = true;
            self.note("residual evaluated to NaN");
            return;
        }
        self.samples += 1;
        if residual > self.worst {
            self.worst = residual;
            self.location = location;
        }
    }

    /// Record a residual measured with its own allowance (e.g. a 3-sigma
    /// finite-difference uncertainty); the excess over the allowance is what
    /// competes against the tolerance.
    pub fn observe_with_allowance(&mut self, residual: f64, allowance: f64, location: WorstLocation) {
        self.observe(residual - allowance.max(0.0), location);
    }

    pub fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    pub fn mark_inconclusive(&mut self, why: impl Into<String>) {
        self.inconclusive = true;
        self.notes.push(why.into());
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn worst_so_far(&self) -> f64 {
        self.worst
    }

    pub fn finish(mut self) -> CheckReport {
        let worst = if self.samples == 0 { 0.0 } else { self.worst };
        if self.samples == 0 {
            self.notes.push("no samples evaluated".into());
            self.inconclusive = true;
        }
        let verdict = if worst > self.tolerance {
            Verdict::Fail
        } else if self.inconclusive {
            Verdict::Inconclusive
        } else {
            Verdict::Pass
        };
        CheckReport {
            check_name: self.name,
            pass: verdict == Verdict::Pass,
            verdict,
            worst_residual: worst,
            worst_location: self.location,
            tolerance: self.tolerance,
            engineering_slack: self.engineering_slack,
            runtime_ms: 0.0,
            notes: self.notes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_tracks_first_worst() {
        let mut sw = SweepBuilder::new("demo", 1.0, 0.0);
        sw.observe(0.5, WorstLocation::at_test_point(0));
        sw.observe(0.9, WorstLocation::at_test_point(3));
        sw.observe(0.9, WorstLocation::at_test_point(7));
        let r = sw.finish();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.worst_residual, 0.9);
        assert_eq!(r.worst_location.test_point, Some(3), "ties keep the first hit");
    }

    #[test]
    fn empty_sweep_is_inconclusive() {
        let r = SweepBuilder::new("empty", 1.0, 0.0).finish();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert_eq!(r.worst_residual, 0.0);
    }

    #[test]
    fn fail_beats_inconclusive() {
        let mut sw = SweepBuilder::new("demo", 1e-9, 0.0);
        sw.mark_inconclusive("one sample could not be resolved");
        sw.observe(1.0, WorstLocation::default());
        let r = sw.finish();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(!r.pass);
    }

    #[test]
    fn strict_verdict_removes_engineering_slack() {
        let mut sw = SweepBuilder::new("demo", 1e-8 + 1e-5, 1e-8);
        sw.observe(2e-8, WorstLocation::default());
        let r = sw.finish();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.strict_verdict(), Verdict::Pass);

        let mut sw = SweepBuilder::new("demo", 2e-8, 1e-8);
        sw.observe(1.5e-8, WorstLocation::default());
        let r = sw.finish();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.strict_verdict(), Verdict::Fail);
    }
}
