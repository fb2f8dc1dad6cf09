//! Shipped experiment presets. Each is a complete config file; `presets
//! --write` drops them on disk so they double as documentation.

use crate::config::{parse_config, ExperimentConfig};
use anyhow::{bail, Result};

pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub toml: &'static str,
    /// Expected exit code when run unmodified (0 pass, 1 fail, 2 inconclusive).
    pub expected_exit: i32,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "quadratic-implicit",
        summary: "implicit steps on the quadratic energy; full inequality suite against the closed-form flow",
        expected_exit: 0,
        toml: r#"name = "quadratic-implicit"
seed = 7
checks = [
    "error_vs_reference",
    "cauchy",
    "contraction",
    "energy_identity",
    "discrete_evi",
    "evi_integral",
    "evi_exponential",
    "evi_differential",
    "stationarity",
]

[space]
kind = "euclidean_grid"
min = [-2.0]
max = [2.0]
count = 21

[cost]
label = "sq_euclid"

[energy.g]
label = "quadratic"

[scheme]
kind = "implicit"
tau = 0.1
horizon = 5.0
ladder_depth = 3
lambda_g = 1.0
x0 = [1.0]
solver = "closed_form"

[sweeps]
test_points = 11
checkpoints = 51
contraction_alt_x0 = [-0.5]
"#,
    },
    Preset {
        name: "quadratic-splitting",
        summary: "explicit/implicit splitting of the quadratic energy plus the certificate checks",
        expected_exit: 0,
        toml: r#"name = "quadratic-splitting"
seed = 7
checks = [
    "discrete_evi",
    "phi_monotone",
    "cauchy",
    "semiconvex",
    "cross_concave",
    "cross_convex",
    "nncc",
    "midpoint",
]

[space]
kind = "euclidean_grid"
min = [-2.0]
max = [2.0]
count = 21

[cost]
label = "sq_euclid"

[energy.f]
label = "quadratic_scaled"
alpha = 0.5

[energy.g]
label = "quadratic_scaled"
alpha = 0.5

[scheme]
kind = "splitting"
tau = 0.2
tau_bar = 2.0
horizon = 3.0
ladder_depth = 2
lambda_f = 0.5
lambda_g = 0.5
x0 = [1.5]
solver = "closed_form"

[sweeps]
test_points = 11
checkpoints = 31
"#,
    },
    Preset {
        name: "kl-mirror",
        summary: "mirror flow of a linear potential under the relative-entropy cost on three atoms",
        expected_exit: 0,
        toml: r#"name = "kl-mirror"
seed = 11
checks = ["discrete_evi", "phi_monotone", "cauchy", "cross_convex"]

[space]
kind = "density"
atoms = 3
ratio_lo = 0.2
ratio_hi = 5.0

[cost]
label = "kl"

[energy.f]
label = "linear"
coeffs = [0.5, 0.0, -0.5]

[energy.g]
label = "zero"

[scheme]
kind = "splitting"
tau = 0.05
tau_bar = 1.0
horizon = 2.0
ladder_depth = 3
x0 = [0.3333333333333333, 0.3333333333333333, 0.3333333333333334]
solver = "closed_form"

[sweeps]
test_points = 20
checkpoints = 21
"#,
    },
    Preset {
        name: "kl-implicit",
        summary: "implicit entropy flow: relative entropy as both energy and cost (geometric-mean steps)",
        expected_exit: 0,
        toml: r#"name = "kl-implicit"
seed = 13
checks = ["discrete_evi", "phi_monotone", "error_vs_reference"]

[space]
kind = "density"
atoms = 3
ratio_lo = 0.2
ratio_hi = 5.0

[cost]
label = "kl"

[energy.g]
label = "relative_entropy"

[scheme]
kind = "implicit"
tau = 0.1
horizon = 1.5
ladder_depth = 2
lambda_g = 1.0
x0 = [0.5, 0.3, 0.2]
solver = "closed_form"

[sweeps]
test_points = 12
checkpoints = 16
"#,
    },
    Preset {
        name: "sinkhorn-exploratory",
        summary: "debiased entropic-transport sanity suite on five atoms: diagonal, symmetry, sign",
        expected_exit: 0,
        toml: r#"name = "sinkhorn-exploratory"
seed = 17
checks = ["sinkhorn_suite"]

[space]
kind = "density"
atoms = 5
ratio_lo = 0.1
ratio_hi = 10.0

[cost]
label = "kl"

[energy.g]
label = "zero"

[sweeps]
sinkhorn_epsilons = [0.1, 1.0]
sinkhorn_pairs = 100
"#,
    },
    Preset {
        name: "negative-control-concave",
        summary: "concave energy breaks cross-concavity; the run must fail with a located violation",
        expected_exit: 1,
        toml: r#"name = "negative-control-concave"
seed = 19
checks = ["cross_concave"]

[space]
kind = "euclidean_grid"
min = [-2.0]
max = [2.0]
count = 21

[cost]
label = "sq_euclid"

[energy.g]
label = "quadratic_scaled"
alpha = -2.0

[scheme]
kind = "implicit"
tau = 0.2
horizon = 1.0
x0 = [1.0]
solver = "closed_form"
"#,
    },
    Preset {
        name: "negative-control-lambda",
        summary: "overstated contraction modulus breaks the discrete inequality; the run must fail",
        expected_exit: 1,
        toml: r#"name = "negative-control-lambda"
seed = 23
checks = ["discrete_evi"]

[space]
kind = "euclidean_grid"
min = [-2.0]
max = [2.0]
count = 21

[cost]
label = "sq_euclid"

[energy.g]
label = "quadratic"

[scheme]
kind = "implicit"
tau = 0.1
horizon = 2.0
lambda_g = 5.0
x0 = [1.0]
solver = "closed_form"
"#,
    },
    Preset {
        name: "kink-inconclusive",
        summary: "nonsmooth energy: derivative ladders cannot stabilize at the kink, so the run reports inconclusive",
        expected_exit: 2,
        toml: r#"name = "kink-inconclusive"
seed = 29
checks = ["phi_monotone", "evi_differential"]

[space]
kind = "euclidean_grid"
min = [-1.0]
max = [1.0]
count = 201

[cost]
label = "sq_euclid"

[energy.g]
label = "abs"

[scheme]
kind = "implicit"
tau = 0.1
horizon = 1.5
ladder_depth = 1
x0 = [0.75]
solver = "exhaustive"

[sweeps]
test_points = 7
checkpoints = 11
"#,
    },
];

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

pub fn get(name: &str) -> Result<&'static Preset> {
    PRESETS
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| anyhow::anyhow!("unknown preset `{name}` (known: {})", names().join(", ")))
}

pub fn config(name: &str) -> Result<ExperimentConfig> {
    let p = get(name)?;
    let cfg = parse_config(p.toml)?;
    if cfg.name != p.name {
        bail!("preset `{}` declares mismatched name `{}`", p.name, cfg.name);
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_validates() {
        assert!(PRESETS.len() >= 6);
        for p in PRESETS {
            let cfg = config(p.name).unwrap_or_else(|e| panic!("preset {}: {e:#}", p.name));
            assert_eq!(cfg.name, p.name);
        }
    }

    #[test]
    fn preset_names_are_unique() {
        let mut names = names();
        names.sort();
        let n = names.len();
        names.dedup();
        assert_eq!(names.len(), n);
    }
}
