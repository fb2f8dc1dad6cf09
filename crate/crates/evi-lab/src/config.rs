//! Strict experiment configuration. TOML with unknown-key rejection; every
//! label is resolved against the registries at load time so typos fail fast
//! instead of corrupting a run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use evi_core::costs::{make_bregman_quadratic, make_kl_cost, make_power_distance, make_squared_euclidean, CostFn};
use evi_core::energy::{Energy, SplitEnergy};
use evi_core::space::{DensitySpace, FiniteSpace, Point};
use evi_core::transform::Solver;
use serde::{Deserialize, Serialize};

/// Every check name the orchestrator can dispatch.
pub const KNOWN_CHECKS: &[&str] = &[
    "error_vs_reference",
    "cauchy",
    "contraction",
    "energy_identity",
    "discrete_evi",
    "evi_integral",
    "evi_exponential",
    "evi_differential",
    "stationarity",
    "phi_monotone",
    "speed_decay",
    "asymptotics",
    "apriori",
    "cross_concave",
    "cross_convex",
    "nncc",
    "semiconvex",
    "midpoint",
    "sinkhorn_suite",
];

/// The certificate-flavored subset, selectable via `evi-lab certify`.
pub const CERTIFY_CHECKS: &[&str] =
    &["cross_concave", "cross_convex", "nncc", "semiconvex", "midpoint"];

/// Checks that run entirely from the space/cost/energy data, with no scheme.
const SCHEMELESS_CHECKS: &[&str] = &["nncc", "semiconvex", "midpoint", "sinkhorn_suite"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub space: SpaceSpec,
    pub cost: CostSpec,
    pub energy: EnergySpec,
    #[serde(default)]
    pub scheme: Option<SchemeSpec>,
    pub checks: Vec<String>,
    #[serde(default)]
    pub sweeps: SweepSpec,
    /// Per-check absolute tolerance overrides, applied to the final verdict.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    /// "euclidean_grid" or "density".
    pub kind: String,
    pub min: Option<Vec<f64>>,
    pub max: Option<Vec<f64>>,
    pub count: Option<usize>,
    pub atoms: Option<usize>,
    pub ratio_lo: Option<f64>,
    pub ratio_hi: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    /// "sq_euclid", "kl", "bregman_quadratic", or "power".
    pub label: String,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySpec {
    pub g: EnergyDef,
    pub f: Option<EnergyDef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyDef {
    /// "zero", "constant", "quadratic", "quadratic_scaled", "linear",
    /// "relative_entropy", or "abs".
    pub label: String,
    pub alpha: Option<f64>,
    pub coeffs: Option<Vec<f64>>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    /// "implicit" or "splitting".
    pub kind: String,
    pub tau: f64,
    pub tau_bar: Option<f64>,
    pub horizon: f64,
    /// Number of dyadic halvings below `tau`.
    #[serde(default)]
    pub ladder_depth: u32,
    #[serde(default)]
    pub lambda_f: f64,
    #[serde(default)]
    pub lambda_g: f64,
    pub x0: Vec<f64>,
    /// "closed_form", "exhaustive", or "numeric".
    #[serde(default = "default_solver")]
    pub solver: String,
}

fn default_solver() -> String {
    "closed_form".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct SweepSpec {
    /// Test points per residual sweep.
    pub test_points: usize,
    /// Checkpoint count on the time axis.
    pub checkpoints: usize,
    /// Finite-difference step ladder for derivative estimates.
    pub fd_steps: Vec<f64>,
    /// Quadrature panels per checkpoint interval for the integral form.
    pub quadrature: usize,
    pub sinkhorn_epsilons: Vec<f64>,
    pub sinkhorn_pairs: usize,
    /// Start of the comparison curve for the contraction check.
    pub contraction_alt_x0: Option<Vec<f64>>,
    /// Reference minimizer for the long-time check.
    pub asymptotics_xbar: Option<Vec<f64>>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            test_points: 11,
            checkpoints: 21,
            fd_steps: vec![1e-2, 5e-3, 2.5e-3],
            quadrature: 64,
            sinkhorn_epsilons: vec![0.1, 1.0],
            sinkhorn_pairs: 100,
            contraction_alt_x0: None,
            asymptotics_xbar: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct OutputSpec {
    /// Base directory; artifacts land in `<dir>/<name>/`.
    pub dir: String,
    pub trajectories: bool,
    pub plotdata: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: "artifacts".into(),
            trajectories: true,
            plotdata: true,
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in config {}", path.display()))
}

/// Parse and validate; TOML errors keep their line/column rendering.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| anyhow!("{e}"))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    /// Dimension of a point: coordinates for euclidean spaces, atom count
    /// for densities.
    pub fn point_dim(&self) -> usize {
        match self.space.kind.as_str() {
            "density" => self.space.atoms.unwrap_or(0),
            _ => self.space.min.as_ref().map(|m| m.len()).unwrap_or(0),
        }
    }

    pub fn is_density(&self) -> bool {
        self.space.kind == "density"
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            bail!("field `name` must be nonempty");
        }
        if self.checks.is_empty() {
            bail!("field `checks` must name at least one check");
        }
        for c in &self.checks {
            if !KNOWN_CHECKS.contains(&c.as_str()) {
                bail!("field `checks`: unknown check `{c}` (known: {})", KNOWN_CHECKS.join(", "));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.checks {
            if !seen.insert(c.as_str()) {
                bail!("field `checks`: `{c}` requested twice; each check appears exactly once");
            }
        }
        self.validate_space()?;
        self.validate_cost()?;
        self.validate_energy()?;
        self.validate_scheme()?;
        self.validate_check_requirements()?;
        for (k, v) in &self.tolerances {
            if !KNOWN_CHECKS.contains(&k.as_str()) {
                bail!("field `tolerances`: unknown check `{k}`");
            }
            if !(v.is_finite() && *v > 0.0) {
                bail!("field `tolerances.{k}`: tolerance must be positive, got {v}");
            }
        }
        if self.sweeps.test_points == 0 || self.sweeps.checkpoints < 2 {
            bail!("field `sweeps`: need test_points >= 1 and checkpoints >= 2");
        }
        Ok(())
    }

    fn validate_space(&self) -> Result<()> {
        match self.space.kind.as_str() {
            "euclidean_grid" => {
                let min = self.space.min.as_ref().ok_or_else(|| anyhow!("field `space.min` required for euclidean_grid"))?;
                let max = self.space.max.as_ref().ok_or_else(|| anyhow!("field `space.max` required for euclidean_grid"))?;
                let count = self.space.count.ok_or_else(|| anyhow!("field `space.count` required for euclidean_grid"))?;
                if min.is_empty() || min.len() != max.len() {
                    bail!("field `space.min`/`space.max` must be nonempty and of equal length");
                }
                if min.iter().zip(max.iter()).any(|(a, b)| !(a < b)) {
                    bail!("field `space.min` must be strictly below `space.max` in every coordinate");
                }
                if count < 2 {
                    bail!("field `space.count` must be at least 2");
                }
                for stray in ["atoms", "ratio_lo", "ratio_hi"] {
                    let set = match stray {
                        "atoms" => self.space.atoms.is_some(),
                        "ratio_lo" => self.space.ratio_lo.is_some(),
                        _ => self.space.ratio_hi.is_some(),
                    };
                    if set {
                        bail!("field `space.{stray}` does not apply to euclidean_grid");
                    }
                }
            }
            "density" => {
                let atoms = self.space.atoms.ok_or_else(|| anyhow!("field `space.atoms` required for density"))?;
                let lo = self.space.ratio_lo.ok_or_else(|| anyhow!("field `space.ratio_lo` required for density"))?;
                let hi = self.space.ratio_hi.ok_or_else(|| anyhow!("field `space.ratio_hi` required for density"))?;
                if atoms < 2 {
                    bail!("field `space.atoms` must be at least 2");
                }
                if !(0.0 < lo && lo < 1.0 && 1.0 < hi) {
                    bail!("field `space.ratio_lo`/`ratio_hi` must bracket 1 with 0 < lo < 1 < hi");
                }
                if self.space.min.is_some() || self.space.max.is_some() || self.space.count.is_some() {
                    bail!("fields `space.min`/`max`/`count` do not apply to density spaces");
                }
            }
            other => bail!("field `space.kind`: unknown kind `{other}` (euclidean_grid or density)"),
        }
        Ok(())
    }

    fn validate_cost(&self) -> Result<()> {
        match self.cost.label.as_str() {
            "sq_euclid" | "bregman_quadratic" => {
                if self.is_density() {
                    bail!("cost `{}` needs a euclidean space", self.cost.label);
                }
            }
            "kl" => {
                if !self.is_density() {
                    bail!("cost `kl` needs a density space");
                }
            }
            "power" => {
                if self.is_density() {
                    bail!("cost `power` needs a euclidean space");
                }
                let p = self.cost.p.ok_or_else(|| anyhow!("field `cost.p` required for power cost"))?;
                if !(p.is_finite() && p > 1.0) {
                    bail!("field `cost.p` must exceed 1, got {p}");
                }
            }
            other => bail!("field `cost.label`: unknown cost `{other}`"),
        }
        if self.cost.p.is_some() && self.cost.label != "power" {
            bail!("field `cost.p` only applies to the power cost");
        }
        Ok(())
    }

    fn validate_energy_def(&self, def: &EnergyDef, side: &str) -> Result<()> {
        let dim = self.point_dim();
        match def.label.as_str() {
            "zero" | "quadratic" => {}
            "constant" => {
                let v = def.value.ok_or_else(|| anyhow!("field `energy.{side}.value` required for constant"))?;
                if !v.is_finite() {
                    bail!("field `energy.{side}.value` must be finite");
                }
            }
            "quadratic_scaled" => {
                let a = def.alpha.ok_or_else(|| anyhow!("field `energy.{side}.alpha` required for quadratic_scaled"))?;
                if !a.is_finite() {
                    bail!("field `energy.{side}.alpha` must be finite");
                }
            }
            "linear" => {
                let v = def.coeffs.as_ref().ok_or_else(|| anyhow!("field `energy.{side}.coeffs` required for linear"))?;
                if v.len() != dim {
                    bail!("field `energy.{side}.coeffs` has length {}, space dimension is {dim}", v.len());
                }
            }
            "relative_entropy" => {
                if !self.is_density() {
                    bail!("energy `relative_entropy` needs a density space");
                }
            }
            "abs" => {
                if self.is_density() {
                    bail!("energy `abs` needs a euclidean space");
                }
            }
            other => bail!("field `energy.{side}.label`: unknown energy `{other}`"),
        }
        if def.label != "quadratic" && def.label != "quadratic_scaled" {
            if def.label != "constant" && def.value.is_some() {
                bail!("field `energy.{side}.value` only applies to constant");
            }
        }
        Ok(())
    }

    fn validate_energy(&self) -> Result<()> {
        self.validate_energy_def(&self.energy.g, "g")?;
        if let Some(f) = &self.energy.f {
            self.validate_energy_def(f, "f")?;
        }
        Ok(())
    }

    fn validate_scheme(&self) -> Result<()> {
        let Some(s) = &self.scheme else { return Ok(()) };
        if !(s.tau.is_finite() && s.tau > 0.0) {
            bail!("field `scheme.tau` must be positive, got {}", s.tau);
        }
        if let Some(tb) = s.tau_bar {
            if !(s.tau < tb) {
                bail!("field `scheme.tau` = {} must stay below `scheme.tau_bar` = {tb}", s.tau);
            }
        }
        if !(s.horizon.is_finite() && s.horizon > 0.0) {
            bail!("field `scheme.horizon` must be positive");
        }
        if !s.lambda_f.is_finite() || !s.lambda_g.is_finite() {
            bail!("fields `scheme.lambda_f`/`lambda_g` must be finite");
        }
        if s.x0.len() != self.point_dim() {
            bail!("field `scheme.x0` has length {}, space dimension is {}", s.x0.len(), self.point_dim());
        }
        match s.kind.as_str() {
            "implicit" => {
                if self.energy.f.is_some() {
                    bail!("implicit schemes take only `energy.g`; remove `energy.f` or use splitting");
                }
            }
            "splitting" => {
                if self.energy.f.is_none() {
                    bail!("splitting schemes need `energy.f`");
                }
                if s.tau_bar.is_none() {
                    bail!("field `scheme.tau_bar` required for splitting");
                }
            }
            other => bail!("field `scheme.kind`: unknown kind `{other}` (implicit or splitting)"),
        }
        match s.solver.as_str() {
            "closed_form" | "exhaustive" | "numeric" => {}
            other => bail!("field `scheme.solver`: unknown solver `{other}`"),
        }
        Ok(())
    }

    fn validate_check_requirements(&self) -> Result<()> {
        for c in &self.checks {
            let c = c.as_str();
            if self.scheme.is_none() && !SCHEMELESS_CHECKS.contains(&c) {
                bail!("check `{c}` needs a [scheme] section");
            }
            match c {
                "sinkhorn_suite" => {
                    if !self.is_density() {
                        bail!("check `sinkhorn_suite` needs a density space");
                    }
                }
                "midpoint" => {
                    if self.cost.label != "sq_euclid" {
                        bail!("check `midpoint` needs the sq_euclid cost (metric via its square root)");
                    }
                }
                "contraction" => {
                    let alt = self.sweeps.contraction_alt_x0.as_ref()
                        .ok_or_else(|| anyhow!("check `contraction` needs `sweeps.contraction_alt_x0`"))?;
                    if alt.len() != self.point_dim() {
                        bail!("field `sweeps.contraction_alt_x0` has length {}, space dimension is {}", alt.len(), self.point_dim());
                    }
                }
                "asymptotics" => {
                    let xb = self.sweeps.asymptotics_xbar.as_ref()
                        .ok_or_else(|| anyhow!("check `asymptotics` needs `sweeps.asymptotics_xbar`"))?;
                    if xb.len() != self.point_dim() {
                        bail!("field `sweeps.asymptotics_xbar` has length {}, space dimension is {}", xb.len(), self.point_dim());
                    }
                }
                "cross_convex" => {
                    if self.energy.f.is_none() {
                        bail!("check `cross_convex` needs the explicit-side energy `energy.f`");
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    // Registry materialization. Validation has already run, so missing
    // fields here are programming errors, not user errors.

    pub fn build_space_grid(&self) -> Result<FiniteSpace> {
        match self.space.kind.as_str() {
            "euclidean_grid" => {
                let min = self.space.min.as_ref().unwrap();
                let max = self.space.max.as_ref().unwrap();
                let count = self.space.count.unwrap();
                let grid = if min.len() == 1 {
                    FiniteSpace::euclidean_grid_1d(min[0], max[0], count)?
                } else {
                    FiniteSpace::euclidean_box_grid(min, max, count)?
                };
                Ok(grid)
            }
            _ => bail!("density spaces have no canonical grid; sample test densities instead"),
        }
    }

    pub fn build_density_space(&self) -> Result<Arc<DensitySpace>> {
        if !self.is_density() {
            bail!("not a density space");
        }
        Ok(DensitySpace::uniform(
            self.space.atoms.unwrap(),
            self.space.ratio_lo.unwrap(),
            self.space.ratio_hi.unwrap(),
        )?)
    }

    pub fn build_cost(&self) -> Result<CostFn> {
        Ok(match self.cost.label.as_str() {
            "sq_euclid" => make_squared_euclidean(),
            "kl" => make_kl_cost(),
            "bregman_quadratic" => make_bregman_quadratic(),
            "power" => make_power_distance(self.cost.p.unwrap())?,
            other => bail!("unknown cost `{other}`"),
        })
    }

    pub fn build_energy(&self, def: &EnergyDef) -> Result<Energy> {
        Ok(match def.label.as_str() {
            "zero" => Energy::zero(),
            "constant" => Energy::constant(def.value.unwrap()),
            "quadratic" => Energy::quadratic(),
            "quadratic_scaled" => Energy::quadratic_scaled(def.alpha.unwrap()),
            "linear" => Energy::linear(def.coeffs.clone().unwrap()),
            "relative_entropy" => Energy::relative_entropy(self.build_density_space()?),
            "abs" => Energy::custom(
                "abs",
                Arc::new(|p: &Point| Ok(p.coords()?.iter().map(|x| x.abs()).sum())),
                Arc::new(|p: &Point| p.coords().is_ok()),
            )
            .with_lower_bound(0.0),
            other => bail!("unknown energy `{other}`"),
        })
    }

    pub fn build_g(&self) -> Result<Energy> {
        self.build_energy(&self.energy.g)
    }

    pub fn build_f(&self) -> Result<Option<Energy>> {
        self.energy.f.as_ref().map(|d| self.build_energy(d)).transpose()
    }

    pub fn build_split_energy(&self) -> Result<Option<SplitEnergy>> {
        let Some(s) = &self.scheme else { return Ok(None) };
        if s.kind != "splitting" {
            return Ok(None);
        }
        let f = self.build_f()?.expect("validated: splitting has f");
        let g = self.build_g()?;
        Ok(Some(SplitEnergy::new(f, g, s.lambda_f, s.lambda_g, s.tau_bar.unwrap())?))
    }

    pub fn build_solver(&self) -> Result<Solver> {
        let Some(s) = &self.scheme else {
            return Ok(Solver::closed_form());
        };
        Ok(match s.solver.as_str() {
            "closed_form" => Solver::closed_form(),
            "exhaustive" => {
                if self.is_density() {
                    bail!("exhaustive solvers need a euclidean grid; use closed_form or numeric for densities");
                }
                Solver::exhaustive(self.build_space_grid()?)
            }
            "numeric" => Solver::numeric(),
            other => bail!("unknown solver `{other}`"),
        })
    }

    pub fn build_x0(&self) -> Result<Point> {
        let s = self.scheme.as_ref().ok_or_else(|| anyhow!("no scheme section"))?;
        self.point_from_raw(&s.x0)
    }

    pub fn point_from_raw(&self, raw: &[f64]) -> Result<Point> {
        if self.is_density() {
            Ok(Point::density(raw.to_vec(), self.build_density_space()?)?)
        } else {
            Ok(Point::euclidean(raw.to_vec())?)
        }
    }

    /// Stable fingerprint of the full configuration (FNV-1a over its
    /// canonical TOML serialization).
    pub fn fingerprint(&self) -> String {
        let text = toml::to_string(self).unwrap_or_default();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
