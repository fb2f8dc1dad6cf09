//! Randomized structural invariants: things that must hold for every input,
//! not just the curated instances in the unit tests.

use std::sync::Arc;

use evi_core::costs::{make_bregman_quadratic, make_kl_cost, make_squared_euclidean};
use evi_core::energy::Energy;
use evi_core::evi::e_lambda;
use evi_core::scheme::run_implicit;
use evi_core::space::{checkpoint_grid, DensitySpace, FiniteSpace, Point, Trajectory};
use evi_core::transform::{c_transform, Solver};
use proptest::prelude::*;

fn masses(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3..1.0f64, n).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    })
}

proptest! {
    #[test]
    fn interpolant_is_piecewise_constant(
        tau in 0.01..1.0f64,
        xs in prop::collection::vec(-5.0..5.0f64, 2..20),
        k_frac in 0.0..1.0f64,
        u in 0.01..0.99f64,
    ) {
        let pts: Vec<Point> = xs.iter().map(|&x| Point::euclidean(vec![x]).unwrap()).collect();
        let n = pts.len();
        let traj = Trajectory::new(tau, pts.clone(), 0).unwrap();
        // Interior of cell k maps to point k; exact multiples map to k too.
        let k = ((k_frac * (n - 1) as f64) as usize).min(n - 2);
        let t = (k as f64 + u) * tau;
        prop_assert_eq!(traj.interpolate(t).unwrap(), &pts[k]);
        prop_assert_eq!(traj.interpolate(k as f64 * tau).unwrap(), &pts[k]);
        // Beyond the horizon is an error, not a clamp.
        prop_assert!(traj.interpolate(traj.horizon() + tau).is_err());
    }

    #[test]
    fn checkpoint_grids_are_uniform_with_exact_endpoints(
        horizon in 0.1..10.0f64,
        count in 2..50usize,
    ) {
        let grid = checkpoint_grid(horizon, count).unwrap();
        prop_assert_eq!(grid.len(), count);
        prop_assert_eq!(grid[0], 0.0);
        prop_assert_eq!(*grid.last().unwrap(), horizon);
        let h = horizon / (count - 1) as f64;
        for w in grid.windows(2) {
            prop_assert!(w[1] > w[0]);
            prop_assert!((w[1] - w[0] - h).abs() <= 1e-12 * horizon);
        }
    }

    #[test]
    fn relative_entropy_is_nonnegative_and_vanishes_on_the_diagonal(
        a in masses(5),
        b in masses(5),
    ) {
        let sp = DensitySpace::uniform(5, 1e-4, 1e4).unwrap();
        let pa = Point::density(a, sp.clone()).unwrap();
        let pb = Point::density(b, sp).unwrap();
        let kl = make_kl_cost();
        prop_assert!(kl.eval(&pa, &pb).unwrap() >= 0.0);
        prop_assert!(kl.eval(&pa, &pa).unwrap().abs() <= 1e-14);
        prop_assert!(kl.eval(&pb, &pb).unwrap().abs() <= 1e-14);
    }

    #[test]
    fn relative_entropy_dominates_half_squared_l1(
        a in masses(5),
        b in masses(5),
    ) {
        let sp = DensitySpace::uniform(5, 1e-4, 1e4).unwrap();
        let pa = Point::density(a.clone(), sp.clone()).unwrap();
        let pb = Point::density(b.clone(), sp).unwrap();
        let l1: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum();
        let kl = make_kl_cost().eval(&pa, &pb).unwrap();
        prop_assert!(kl - 0.5 * l1 * l1 >= -1e-12, "kl {} l1 {}", kl, l1);
    }

    #[test]
    fn quadratic_divergence_matches_half_squared_distance(
        a in prop::collection::vec(-10.0..10.0f64, 1..4),
        shift in prop::collection::vec(-10.0..10.0f64, 1..4),
    ) {
        let dim = a.len().min(shift.len());
        let pa = Point::euclidean(a[..dim].to_vec()).unwrap();
        let b: Vec<f64> = a[..dim].iter().zip(&shift[..dim]).map(|(x, s)| x + s).collect();
        let pb = Point::euclidean(b).unwrap();
        let lhs = make_bregman_quadratic().eval(&pa, &pb).unwrap();
        let rhs = make_squared_euclidean().eval(&pa, &pb).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn exponential_ramp_matches_a_high_accuracy_oracle_across_the_seam(
        lambda in prop_oneof![Just(-1.0f64), Just(1.0f64), -3.0..3.0f64],
        t in 1e-8..1e-4f64,
    ) {
        prop_assume!(lambda.abs() > 1e-3);
        // expm1 is accurate where the naive difference cancels, so it
        // exercises both the series branch and the direct branch.
        let oracle = f64::exp_m1(lambda * t) / lambda;
        let got = e_lambda(lambda, t);
        prop_assert!((got - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()),
            "lambda {} t {} got {} oracle {}", lambda, t, got, oracle);
        prop_assert_eq!(e_lambda(0.0, t), t);
    }

    #[test]
    fn grid_envelopes_never_fall_below_their_source(
        alpha in prop_oneof![0.3..3.0f64, -1.5..-0.1f64],
        tau in 0.2..1.0f64,
    ) {
        // Holds for any source, concave or not: the dual value at z already
        // dominates f(x) - c(x, z)/tau for grid x.
        let grid = FiniteSpace::euclidean_grid_1d(-2.0, 2.0, 41).unwrap();
        let f = Energy::quadratic_scaled(alpha);
        let c = make_squared_euclidean();
        let solver = Solver::exhaustive(grid.clone());
        let dual = c_transform(&f, &c, tau, &solver, &grid).unwrap();
        for (xi, x) in grid.iter().enumerate() {
            let fx = f.value_finite(x).unwrap();
            let mut env = f64::INFINITY;
            for (zi, z) in grid.iter().enumerate() {
                env = env.min(c.eval(x, z).unwrap() / tau + dual[zi].value);
            }
            prop_assert!(env >= fx - 1e-12, "x index {} env {} f {}", xi, env, fx);
        }
    }

    #[test]
    fn dual_transforms_are_monotone_in_the_source(
        alpha in 0.3..3.0f64,
        beta in 0.0..2.0f64,
        tau in 0.2..1.0f64,
    ) {
        let grid = FiniteSpace::euclidean_grid_1d(-2.0, 2.0, 41).unwrap();
        let f = Energy::quadratic_scaled(alpha);
        let g = Energy::custom(
            "bumped",
            Arc::new(move |p: &Point| {
                let x = p.coords()?[0];
                Ok(alpha * x * x / 2.0 + beta * (1.0 + (7.0 * x).sin()))
            }),
            Arc::new(|_| true),
        );
        let c = make_squared_euclidean();
        let solver = Solver::exhaustive(grid.clone());
        let df = c_transform(&f, &c, tau, &solver, &grid).unwrap();
        let dg = c_transform(&g, &c, tau, &solver, &grid).unwrap();
        for (ef, eg) in df.iter().zip(dg.iter()) {
            prop_assert!(eg.value >= ef.value - 1e-12);
        }
    }

    #[test]
    fn closed_form_proximal_steps_agree_with_exhaustive_search(
        alpha in 0.3..3.0f64,
        tau in 0.1..1.0f64,
        y0 in -2.0..2.0f64,
    ) {
        use evi_core::transform::argmin_p;
        let g = Energy::quadratic_scaled(alpha);
        let c = make_squared_euclidean();
        let y = Point::euclidean(vec![y0]).unwrap();
        let exact = argmin_p(&g, &c, tau, &y, &Solver::closed_form()).unwrap();
        let grid = FiniteSpace::euclidean_grid_1d(-3.0, 3.0, 2001).unwrap();
        let coarse = argmin_p(&g, &c, tau, &y, &Solver::exhaustive(grid)).unwrap();
        // Exhaustive search only sees the grid, so it can lose at most the
        // quantization error in value and half a spacing in position.
        let spacing = 6.0 / 2000.0;
        let curvature = 1.0 / tau + alpha;
        prop_assert!(coarse.value >= exact.value - 1e-12);
        prop_assert!(coarse.value - exact.value <= 0.51 * curvature * spacing * spacing);
        let dx = (coarse.point.coords().unwrap()[0] - exact.point.coords().unwrap()[0]).abs();
        prop_assert!(dx <= 0.51 * spacing, "dx {}", dx);
    }

    #[test]
    fn implicit_runs_never_increase_the_energy(
        alpha in 0.2..5.0f64,
        tau in 0.05..0.5f64,
        x0 in -2.0..2.0f64,
    ) {
        let g = Energy::quadratic_scaled(alpha);
        let c = make_squared_euclidean();
        let start = Point::euclidean(vec![x0]).unwrap();
        let run = run_implicit(&g, &c, tau, &start, 10, &Solver::closed_form()).unwrap();
        prop_assert!(run.failure.is_none());
        let phis = run.phi_values();
        prop_assert_eq!(phis.len(), 11);
        for w in phis.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()));
        }
    }
}
