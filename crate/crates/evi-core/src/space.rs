//! State-space points, finite enumerations, and piecewise-constant
//! trajectories shared by every scheme and check.
//!
//! Three point variants cover the flows handled here: euclidean coordinate
//! vectors, probability densities over a fixed finite support (stored as
//! weights relative to a [`DensitySpace`]), and bare indices into a finite
//! metric space.

use crate::error::{Error, Result};
use crate::math;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

/// Sum-to-one tolerance for density weights and reference measures.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Absolute slack on the ratio box; absorbs normalization roundoff after
/// multiplicative updates.
pub const RATIO_SLACK: f64 = 1e-9;

/// Relative guard when an interpolation query sits a hair past a grid time.
pub const TIME_SNAP: f64 = 1e-9;

/// Fixed finite support with a positive reference measure and a ratio box:
/// member densities are `w` with `w_i / reference_i` in `[ratio_lo, ratio_hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySpace {
    reference: Vec<f64>,
    ratio_lo: f64,
    ratio_hi: f64,
}

impl DensitySpace {
    pub fn new(reference: Vec<f64>, ratio_lo: f64, ratio_hi: f64) -> Result<Arc<Self>> {
        if reference.is_empty() {
            return Err(Error::InvalidArgument("reference measure is empty".into()));
        }
        let mut sum = 0.0;
        for (i, &r) in reference.iter().enumerate() {
            if !r.is_finite() || r <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "reference weight {i} must be finite and positive, got {r}"
                )));
            }
            sum += r;
        }
        if math::abs(sum - 1.0) > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "reference weights sum to {sum}, expected 1 within {WEIGHT_SUM_TOL:e}"
            )));
        }
        if !(ratio_lo.is_finite() && ratio_hi.is_finite()) || ratio_lo < 0.0 || ratio_hi <= ratio_lo {
            return Err(Error::InvalidArgument(format!(
                "ratio box [{ratio_lo}, {ratio_hi}] must satisfy 0 <= lo < hi"
            )));
        }
        Ok(Arc::new(DensitySpace {
            reference,
            ratio_lo,
            ratio_hi,
        }))
    }

    /// Uniform reference over `n` atoms.
    pub fn uniform(n: usize, ratio_lo: f64, ratio_hi: f64) -> Result<Arc<Self>> {
        if n == 0 {
            return Err(Error::InvalidArgument("support must be non-empty".into()));
        }
        let w = 1.0 / n as f64;
        Self::new(alloc::vec![w; n], ratio_lo, ratio_hi)
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.ratio_lo, self.ratio_hi)
    }

    /// Check that `w` is a member density of this space.
    pub fn validate_weights(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.reference.len() {
            return Err(Error::Shape(format!(
                "density has {} weights, support has {} atoms",
                w.len(),
                self.reference.len()
            )));
        }
        let mut sum = 0.0;
        for (i, &wi) in w.iter().enumerate() {
            if !wi.is_finite() {
                return Err(Error::InvalidArgument(format!("weight {i} is not finite")));
            }
            let ratio = wi / self.reference[i];
            if ratio < self.ratio_lo - RATIO_SLACK || ratio > self.ratio_hi + RATIO_SLACK {
                return Err(Error::DensityConstraint(format!(
                    "weight {i}: ratio {ratio} outside [{}, {}]",
                    self.ratio_lo, self.ratio_hi
                )));
            }
            sum += wi;
        }
        if math::abs(sum - 1.0) > WEIGHT_SUM_TOL {
            return Err(Error::DensityConstraint(format!(
                "weights sum to {sum}, expected 1 within {WEIGHT_SUM_TOL:e}"
            )));
        }
        Ok(())
    }
}

/// A state: euclidean coordinates, a density over a fixed support, or an
/// index into a finite space.
#[derive(Debug, Clone, PartialEq)]
pub enum Point {
    Euclidean(Vec<f64>),
    Density {
        weights: Vec<f64>,
        space: Arc<DensitySpace>,
    },
    Index(usize),
}

impl Point {
    pub fn euclidean(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidArgument("euclidean point needs at least one coordinate".into()));
        }
        if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite coordinate {c}")));
        }
        Ok(Point::Euclidean(coords))
    }

    /// Validated density; fails if the weights leave the space's ratio box or
    /// lose normalization.
    pub fn density(weights: Vec<f64>, space: Arc<DensitySpace>) -> Result<Self> {
        space.validate_weights(&weights)?;
        Ok(Point::Density { weights, space })
    }

    pub fn index(i: usize) -> Self {
        Point::Index(i)
    }

    /// Numeric components: coordinates or weights. `None` for index points.
    pub fn components(&self) -> Option<&[f64]> {
        match self {
            Point::Euclidean(c) => Some(c),
            Point::Density { weights, .. } => Some(weights),
            Point::Index(_) => None,
        }
    }

    /// Euclidean coordinates, or a shape error.
    pub fn coords(&self) -> Result<&[f64]> {
        match self {
            Point::Euclidean(c) => Ok(c),
            other => Err(Error::Shape(format!(
                "expected a euclidean point, got {}",
                other.variant_name()
            ))),
        }
    }

    /// Density weights, or a shape error.
    pub fn weights(&self) -> Result<&[f64]> {
        match self {
            Point::Density { weights, .. } => Ok(weights),
            other => Err(Error::Shape(format!(
                "expected a density point, got {}",
                other.variant_name()
            ))),
        }
    }

    pub fn density_space(&self) -> Option<&Arc<DensitySpace>> {
        match self {
            Point::Density { space, .. } => Some(space),
            _ => None,
        }
    }

    pub fn as_index(&self) -> Option<usize> {
        match self {
            Point::Index(i) => Some(*i),
            _ => None,
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Point::Euclidean(_) => "euclidean",
            Point::Density { .. } => "density",
            Point::Index(_) => "index",
        }
    }

    pub fn same_variant(&self, other: &Point) -> bool {
        core::mem::discriminant(self) == core::mem::discriminant(other)
    }

    /// Number of numeric columns when serialized (1 for index points).
    pub fn dim(&self) -> usize {
        match self {
            Point::Euclidean(c) => c.len(),
            Point::Density { weights, .. } => weights.len(),
            Point::Index(_) => 1,
        }
    }
}

/// Normalize a positive raw vector into a member density of `space`.
pub fn density_from_raw(space: &Arc<DensitySpace>, raw: &[f64]) -> Result<Point> {
    let mut sum = 0.0;
    for (i, &r) in raw.iter().enumerate() {
        if !r.is_finite() || r <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "raw weight {i} must be finite and positive, got {r}"
            )));
        }
        sum += r;
    }
    if sum <= 0.0 {
        return Err(Error::InvalidArgument("raw weights sum to zero".into()));
    }
    let w: Vec<f64> = raw.iter().map(|r| r / sum).collect();
    Point::density(w, space.clone())
}

/// Ordered, pairwise-distinct list of same-variant points used as a sampling
/// grid or as the ground set of exhaustive searches.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSpace {
    points: Vec<Point>,
}

impl FiniteSpace {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("finite space needs at least one point".into()));
        }
        check_uniform_variant(&points)?;
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                if points[i] == points[j] {
                    return Err(Error::InvalidArgument(format!(
                        "points {i} and {j} coincide; members must be pairwise distinct"
                    )));
                }
            }
        }
        Ok(FiniteSpace { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Point> {
        self.points.get(i)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Point> {
        self.points.iter()
    }

    /// Index of an exactly-equal member, if any.
    pub fn position_of(&self, p: &Point) -> Option<usize> {
        self.points.iter().position(|q| q == p)
    }

    /// Uniform 1-D grid with exact endpoints.
    pub fn euclidean_grid_1d(min: f64, max: f64, count: usize) -> Result<Self> {
        if count < 2 || !(min < max) {
            return Err(Error::InvalidArgument(format!(
                "grid needs count >= 2 and min < max, got count={count}, [{min}, {max}]"
            )));
        }
        let pts = (0..count)
            .map(|i| {
                let t = i as f64 / (count - 1) as f64;
                Point::euclidean(alloc::vec![min + (max - min) * t])
            })
            .collect::<Result<Vec<_>>>()?;
        FiniteSpace::new(pts)
    }

    /// Product grid over a box, `count_per_dim` nodes along each axis.
    pub fn euclidean_box_grid(min: &[f64], max: &[f64], count_per_dim: usize) -> Result<Self> {
        if min.len() != max.len() || min.is_empty() {
            return Err(Error::Shape("box corners must share a positive dimension".into()));
        }
        if count_per_dim < 2 {
            return Err(Error::InvalidArgument("box grid needs count >= 2 per dimension".into()));
        }
        for (lo, hi) in min.iter().zip(max.iter()) {
            if !(lo < hi) {
                return Err(Error::InvalidArgument(format!("box side [{lo}, {hi}] is empty")));
            }
        }
        let d = min.len();
        let mut pts = Vec::new();
        let mut idx = alloc::vec![0usize; d];
        loop {
            let coords: Vec<f64> = (0..d)
                .map(|k| {
                    let t = idx[k] as f64 / (count_per_dim - 1) as f64;
                    min[k] + (max[k] - min[k]) * t
                })
                .collect();
            pts.push(Point::euclidean(coords)?);
            let mut k = 0;
            loop {
                if k == d {
                    return FiniteSpace::new(pts);
                }
                idx[k] += 1;
                if idx[k] < count_per_dim {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    /// Uniform sweep of two-atom densities across the feasible slice of the
    /// ratio box.
    pub fn two_atom_density_grid(space: &Arc<DensitySpace>, count: usize) -> Result<Self> {
        if space.len() != 2 {
            return Err(Error::Shape(format!(
                "two-atom grid needs a 2-atom support, got {}",
                space.len()
            )));
        }
        if count < 2 {
            return Err(Error::InvalidArgument("density grid needs count >= 2".into()));
        }
        let (lo, hi) = space.bounds();
        let r = space.reference();
        // First weight s must satisfy s/r0 in [lo, hi] and (1-s)/r1 in [lo, hi].
        let s_min = (lo * r[0]).max(1.0 - hi * r[1]);
        let s_max = (hi * r[0]).min(1.0 - lo * r[1]);
        if !(s_min < s_max) {
            return Err(Error::InvalidArgument(format!(
                "ratio box admits no two-atom slice: s in [{s_min}, {s_max}]"
            )));
        }
        let pts = (0..count)
            .map(|i| {
                let t = i as f64 / (count - 1) as f64;
                let s = s_min + (s_max - s_min) * t;
                Point::density(alloc::vec![s, 1.0 - s], space.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        FiniteSpace::new(pts)
    }
}

pub(crate) fn check_uniform_variant(points: &[Point]) -> Result<()> {
    if let Some(first) = points.first() {
        for (i, p) in points.iter().enumerate().skip(1) {
            if !first.same_variant(p) {
                return Err(Error::Shape(format!(
                    "mixed point variants: member 0 is {}, member {i} is {}",
                    first.variant_name(),
                    p.variant_name()
                )));
            }
        }
    }
    Ok(())
}

/// Discrete scheme output sampled on a uniform time grid, read back as the
/// piecewise-constant interpolant `t -> points[floor(t / tau)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    tau: f64,
    points: Vec<Point>,
    level: u32,
}

impl Trajectory {
    pub fn new(tau: f64, points: Vec<Point>, level: u32) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {tau}")));
        }
        if points.is_empty() {
            return Err(Error::InvalidArgument("trajectory needs at least one point".into()));
        }
        check_uniform_variant(&points)?;
        Ok(Trajectory { tau, points, level })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Last grid time, `tau * (len - 1)`.
    pub fn horizon(&self) -> f64 {
        self.tau * (self.points.len() - 1) as f64
    }

    /// Grid index backing the interpolant at time `t`. Queries that land
    /// within relative `1e-9` below a grid time snap up to it; times beyond
    /// the horizon are an error naming the maximum queryable time.
    pub fn index_for(&self, t: f64) -> Result<usize> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::InvalidArgument(format!("time must be finite and nonnegative, got {t}")));
        }
        let max = self.horizon();
        if t > max && t - max > TIME_SNAP * self.tau {
            return Err(Error::Horizon { t, max });
        }
        let ratio = t / self.tau;
        let mut k = math::floor(ratio);
        if ratio - k > 1.0 - TIME_SNAP {
            k += 1.0;
        }
        Ok((k as usize).min(self.points.len() - 1))
    }

    /// Piecewise-constant interpolant at time `t`.
    pub fn interpolate(&self, t: f64) -> Result<&Point> {
        Ok(&self.points[self.index_for(t)?])
    }
}

/// Uniform time grid on `[0, horizon]` with both endpoints exact.
pub fn checkpoint_grid(horizon: f64, count: usize) -> Result<Vec<f64>> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    if count < 2 {
        return Err(Error::InvalidArgument(format!("checkpoint grid needs count >= 2, got {count}")));
    }
    Ok((0..count)
        // Divide first: i/(count-1) is exactly 1.0 at the end, so the last
        // checkpoint equals the horizon bit-for-bit.
        .map(|i| horizon * (i as f64 / (count - 1) as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pt(x: f64) -> Point {
        Point::euclidean(vec![x]).unwrap()
    }

    #[test]
    fn interpolate_snaps_just_below_a_grid_time() {
        let traj = Trajectory::new(0.5, vec![pt(0.0), pt(1.0), pt(2.0)], 0).unwrap();
        // 2e-11 below tau: closer than the 1e-9 relative guard, index 1.
        assert_eq!(traj.index_for(0.49999999999).unwrap(), 1);
        // Clearly inside the first cell.
        assert_eq!(traj.index_for(0.4999).unwrap(), 0);
        assert_eq!(traj.index_for(0.0).unwrap(), 0);
        assert_eq!(traj.index_for(0.5).unwrap(), 1);
        assert_eq!(traj.index_for(1.0).unwrap(), 2);
    }

    #[test]
    fn interpolate_past_horizon_names_the_max_time() {
        let traj = Trajectory::new(0.5, vec![pt(0.0), pt(1.0), pt(2.0)], 0).unwrap();
        match traj.interpolate(1.0000001) {
            Err(Error::Horizon { max, .. }) => assert_eq!(max, 1.0),
            other => panic!("expected horizon error, got {other:?}"),
        }
        // A hair above the horizon still snaps back.
        assert_eq!(traj.index_for(1.0 + 1e-12).unwrap(), 2);
    }

    #[test]
    fn negative_time_is_rejected() {
        let traj = Trajectory::new(0.5, vec![pt(0.0), pt(1.0)], 0).unwrap();
        assert!(matches!(traj.interpolate(-0.1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn checkpoint_grid_hits_exact_endpoints() {
        let g = checkpoint_grid(5.0, 51).unwrap();
        assert_eq!(g.len(), 51);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[50], 5.0);
        assert!((g[1] - 0.1).abs() < 1e-15);
        assert!(checkpoint_grid(5.0, 1).is_err(), "count < 2 must be rejected");
        assert!(checkpoint_grid(0.0, 5).is_err());
    }

    #[test]
    fn density_membership_enforces_box_and_sum() {
        let sp = DensitySpace::uniform(3, 0.2, 5.0).unwrap();
        let ok = Point::density(vec![0.2, 0.35, 0.45], sp.clone()).unwrap();
        assert_eq!(ok.weights().unwrap().len(), 3);
        // Ratio 0.15 < 0.2 on the first atom.
        assert!(matches!(
            Point::density(vec![0.05, 0.45, 0.5], sp.clone()),
            Err(Error::DensityConstraint(_))
        ));
        // Sum off by 1e-3.
        assert!(matches!(
            Point::density(vec![0.2, 0.35, 0.449], sp.clone()),
            Err(Error::DensityConstraint(_))
        ));
        // Zero weight is fine once the lower ratio bound is zero.
        let free = DensitySpace::new(vec![0.5, 0.5], 0.0, 2.0).unwrap();
        Point::density(vec![1.0, 0.0], free).unwrap();
    }

    #[test]
    fn density_from_raw_normalizes() {
        let sp = DensitySpace::uniform(2, 0.0, 10.0).unwrap();
        let p = density_from_raw(&sp, &[3.0, 1.0]).unwrap();
        assert_eq!(p.weights().unwrap(), &[0.75, 0.25]);
        assert!(density_from_raw(&sp, &[1.0, 0.0]).is_err(), "raw weights must be positive");
    }

    #[test]
    fn finite_space_rejects_duplicates_and_mixed_variants() {
        assert!(FiniteSpace::new(vec![pt(0.0), pt(1.0), pt(0.0)]).is_err());
        assert!(FiniteSpace::new(vec![pt(0.0), Point::index(1)]).is_err());
        assert!(FiniteSpace::new(vec![]).is_err());
        let sp = FiniteSpace::new(vec![pt(0.0), pt(1.0)]).unwrap();
        assert_eq!(sp.position_of(&pt(1.0)), Some(1));
        assert_eq!(sp.position_of(&pt(2.0)), None);
    }

    #[test]
    fn grid_1d_endpoints_and_center_are_exact() {
        let g = FiniteSpace::euclidean_grid_1d(-2.0, 2.0, 11).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g.get(0).unwrap().coords().unwrap()[0], -2.0);
        assert_eq!(g.get(5).unwrap().coords().unwrap()[0], 0.0);
        assert_eq!(g.get(10).unwrap().coords().unwrap()[0], 2.0);
    }

    #[test]
    fn box_grid_enumerates_the_product() {
        let g = FiniteSpace::euclidean_box_grid(&[0.0, 0.0], &[1.0, 2.0], 3).unwrap();
        assert_eq!(g.len(), 9);
        assert!(g.position_of(&Point::euclidean(vec![0.5, 1.0]).unwrap()).is_some());
    }

    #[test]
    fn two_atom_grid_stays_in_the_ratio_box() {
        let sp = DensitySpace::uniform(2, 0.2, 1.8).unwrap();
        let g = FiniteSpace::two_atom_density_grid(&sp, 5).unwrap();
        assert_eq!(g.len(), 5);
        let first = g.get(0).unwrap().weights().unwrap();
        assert!((first[0] - 0.1).abs() < 1e-12, "feasible slice starts at s = lo * r0");
        let last = g.get(4).unwrap().weights().unwrap();
        assert!((last[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn trajectory_rejects_bad_inputs() {
        assert!(Trajectory::new(0.0, vec![pt(0.0)], 0).is_err());
        assert!(Trajectory::new(0.1, vec![], 0).is_err());
        assert!(Trajectory::new(0.1, vec![pt(0.0), Point::index(3)], 0).is_err());
        // Repeated states are allowed: stationary flows are trajectories too.
        Trajectory::new(0.1, vec![pt(0.0), pt(0.0)], 0).unwrap();
    }
}
