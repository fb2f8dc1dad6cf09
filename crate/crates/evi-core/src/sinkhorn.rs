//! Entropic optimal transport between finitely supported measures, solved by
//! alternating dual ascent in the log domain so small regularization strengths
//! stay numerically safe.

use crate::error::{Error, Result};
use crate::math;
use crate::space::Point;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

/// Regularization strength, ground cost, and stopping policy for the scaling
/// loop.
#[derive(Clone)]
pub struct SinkhornConfig {
    epsilon: f64,
    ground_cost: Arc<dyn Fn(usize, usize) -> f64 + Send + Sync>,
    max_iters: usize,
    marginal_tol: f64,
}

impl core::fmt::Debug for SinkhornConfig {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("SinkhornConfig")
            .field("epsilon", &self.epsilon)
            .field("max_iters", &self.max_iters)
            .field("marginal_tol", &self.marginal_tol)
            .finish()
    }
}

impl SinkhornConfig {
    pub fn new(epsilon: f64, ground_cost: Arc<dyn Fn(usize, usize) -> f64 + Send + Sync>) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "regularization strength must be positive, got {epsilon}"
            )));
        }
        Ok(SinkhornConfig {
            epsilon,
            ground_cost,
            max_iters: 100_000,
            marginal_tol: 1e-10,
        })
    }

    /// Ground cost `|p_i - p_j|^2 / 2` from atom positions on the line.
    pub fn from_positions(epsilon: f64, positions: Vec<f64>) -> Result<Self> {
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("atom positions must be finite".into()));
        }
        let ground = Arc::new(move |i: usize, j: usize| {
            let d = positions[i] - positions[j];
            0.5 * d * d
        });
        Self::new(epsilon, ground)
    }

    pub fn with_max_iters(mut self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("iteration budget must be at least 1".into()));
        }
        self.max_iters = n;
        Ok(self)
    }

    pub fn with_marginal_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Error::InvalidArgument(format!("marginal tolerance must be positive, got {tol}")));
        }
        self.marginal_tol = tol;
        Ok(self)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn marginal_tol(&self) -> f64 {
        self.marginal_tol
    }

    pub fn max_iters(&self) -> usize {
        self.max_iters
    }

    pub fn ground(&self, i: usize, j: usize) -> f64 {
        (self.ground_cost)(i, j)
    }

    /// Largest ground-cost entry on an `n x n` support; used to scale
    /// self-transport tolerances.
    pub fn max_ground_cost(&self, n: usize) -> f64 {
        let mut hi = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let v = self.ground(i, j);
                if v > hi {
                    hi = v;
                }
            }
        }
        hi
    }
}

/// Converged transport solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtOutcome {
    /// Dual objective at the final potentials (exact at converged marginals).
    pub value: f64,
    /// Completed scaling rounds.
    pub iterations: usize,
    /// Sup-norm marginal violation of the final plan.
    pub marginal_error: f64,
    /// Primal objective of the final plan.
    pub primal_value: f64,
    /// `primal_value - value`; collapses with the marginal error.
    pub primal_dual_gap: f64,
}

fn positive_weights<'a>(p: &'a Point, role: &str) -> Result<&'a [f64]> {
    let w = p.weights().map_err(|_| {
        Error::Shape(format!("{role} must be a density point, got {}", p.variant_name()))
    })?;
    if w.iter().any(|&x| x <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{role} must have strictly positive atom masses for the scaling solve"
        )));
    }
    Ok(w)
}

/// Entropy-regularized transport cost between two densities, with potentials
/// updated in the log domain until both marginals match within the configured
/// sup-norm tolerance. Non-convergence is an error carrying the last marginal
/// error.
pub fn ot_eps(mu: &Point, nu: &Point, cfg: &SinkhornConfig) -> Result<OtOutcome> {
    let wm = positive_weights(mu, "first marginal")?;
    let wn = positive_weights(nu, "second marginal")?;
    let (n, m) = (wm.len(), wn.len());
    let eps = cfg.epsilon;

    let mut cmat = alloc::vec![0.0f64; n * m];
    for i in 0..n {
        for j in 0..m {
            let v = cfg.ground(i, j);
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("ground cost at ({i}, {j}) is not finite")));
            }
            cmat[i * m + j] = v;
        }
    }
    let lnmu: Vec<f64> = wm.iter().map(|&w| math::ln(w)).collect();
    let lnnu: Vec<f64> = wn.iter().map(|&w| math::ln(w)).collect();

    let mut f = alloc::vec![0.0f64; n];
    let mut g = alloc::vec![0.0f64; m];
    let mut buf = alloc::vec![0.0f64; n.max(m)];
    let mut last_err = f64::INFINITY;

    for it in 1..=cfg.max_iters {
        for i in 0..n {
            for j in 0..m {
                buf[j] = lnnu[j] + (g[j] - cmat[i * m + j]) / eps;
            }
            f[i] = -eps * math::logsumexp(&buf[..m]);
        }
        for j in 0..m {
            for i in 0..n {
                buf[i] = lnmu[i] + (f[i] - cmat[i * m + j]) / eps;
            }
            g[j] = -eps * math::logsumexp(&buf[..n]);
        }

        let mut err = 0.0f64;
        let mut col = alloc::vec![0.0f64; m];
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..m {
                let p = math::exp(lnmu[i] + lnnu[j] + (f[i] + g[j] - cmat[i * m + j]) / eps);
                row += p;
                col[j] += p;
            }
            err = err.max(math::abs(row - wm[i]));
        }
        for j in 0..m {
            err = err.max(math::abs(col[j] - wn[j]));
        }
        last_err = err;

        if err <= cfg.marginal_tol {
            let mut mass = 0.0;
            let mut transport = 0.0;
            let mut entropy = 0.0;
            for i in 0..n {
                for j in 0..m {
                    let logit = (f[i] + g[j] - cmat[i * m + j]) / eps;
                    let p = math::exp(lnmu[i] + lnnu[j] + logit);
                    mass += p;
                    transport += p * cmat[i * m + j];
                    // p ln(p / (mu nu)) - p + mu nu, in the overflow-safe form.
                    entropy += p * logit - p + wm[i] * wn[j];
                }
            }
            let dual = math::dot(wm, &f) + math::dot(wn, &g) + eps * (1.0 - mass);
            let primal = transport + eps * entropy;
            return Ok(OtOutcome {
                value: dual,
                iterations: it,
                marginal_error: err,
                primal_value: primal,
                primal_dual_gap: primal - dual,
            });
        }
    }

    Err(Error::NonConvergence {
        detail: format!(
            "scaling stalled after {} rounds; marginal tolerance {:.1e} not reached",
            cfg.max_iters, cfg.marginal_tol
        ),
        last: last_err,
    })
}

/// Debiased transport divergence
/// `S(mu, nu) = OT(mu, nu) - (OT(mu, mu) + OT(nu, nu)) / 2`.
/// Both measures must live on the same indexed support.
pub fn sinkhorn_divergence(mu: &Point, nu: &Point, cfg: &SinkhornConfig) -> Result<f64> {
    let cross = ot_eps(mu, nu, cfg)?.value;
    let self_mu = ot_eps(mu, mu, cfg)?.value;
    let self_nu = ot_eps(nu, nu, cfg)?.value;
    Ok(cross - 0.5 * self_mu - 0.5 * self_nu)
}
