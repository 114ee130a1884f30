//! The test problems, each as a ready-to-solve [`SdeProblem`], with exact
//! solutions where they exist.

mod emt;
mod spde;

use std::collections::HashMap;
use std::sync::Arc;

pub use emt::{emt_model, emt_model_with_flag, EmtParams};
pub use spde::{laplacian_matrix, retinoic_beta, retinoic_spde, SpdeLayout};

use crate::error::{Error, Result};
use crate::steppers::{NoiseKind, SdeProblem};

/// Exact solution map `(t, W_t, x0) → state`.
pub type ExactFn = dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync;

/// A problem paired with its pathwise exact solution.
pub struct AnalyticProblem {
    pub problem: SdeProblem,
    pub exact: Arc<ExactFn>,
}

impl AnalyticProblem {
    pub fn exact_at(&self, t: f64, w: &[f64]) -> Vec<f64> {
        (self.exact)(t, w, &self.problem.x0)
    }
}

/// Additive-noise test equation:
/// `dX = (β/√(1+t) − X/(2(1+t))) dt + αβ/√(1+t) dW`, α = 1/10, β = 1/20,
/// X₀ = 1/2, with exact solution
/// `X_t = X₀/√(1+t) + (β/√(1+t))(t + αW_t)`.
pub fn additive_test() -> AnalyticProblem {
    let alpha = 0.1;
    let beta = 0.05;
    let problem = SdeProblem::new(
        1,
        move |t: f64, x: &[f64], out: &mut [f64]| {
            out[0] = beta / (1.0 + t).sqrt() - x[0] / (2.0 * (1.0 + t));
        },
        move |t: f64, _x: &[f64], out: &mut [f64]| {
            out[0] = alpha * beta / (1.0 + t).sqrt();
        },
        NoiseKind::Additive,
        (0.0, 1.0),
        vec![0.5],
    );
    AnalyticProblem {
        problem,
        exact: Arc::new(move |t: f64, w: &[f64], x0: &[f64]| {
            let rt = (1.0 + t).sqrt();
            vec![x0[0] / rt + (beta / rt) * (t + alpha * w[0])]
        }),
    }
}

/// Diagonal-noise (geometric Brownian motion) test equation:
/// `dX = αX dt + βX dW`, α = 1/10, β = 1/20, X₀ = 1/2, with exact solution
/// `X_t = X₀ exp((α − β²/2)t + βW_t)`.
pub fn diagonal_test() -> AnalyticProblem {
    let alpha = 0.1;
    let beta = 0.05;
    let problem = SdeProblem::new(
        1,
        move |_t: f64, x: &[f64], out: &mut [f64]| out[0] = alpha * x[0],
        move |_t: f64, x: &[f64], out: &mut [f64]| out[0] = beta * x[0],
        NoiseKind::Diagonal,
        (0.0, 1.0),
        vec![0.5],
    );
    AnalyticProblem {
        problem,
        exact: Arc::new(move |t: f64, w: &[f64], x0: &[f64]| {
            vec![x0[0] * ((alpha - 0.5 * beta * beta) * t + beta * w[0]).exp()]
        }),
    }
}

/// Split version of [`additive_test`] for IMEX stepping:
/// `f₁ = β/√(1+t)` (implicit part), `f₂ = −X/(2(1+t))` (explicit part).
pub fn split_additive_test() -> AnalyticProblem {
    let mut ap = additive_test();
    let beta = 0.05;
    ap.problem = ap.problem.with_imex(
        move |t: f64, _x: &[f64], out: &mut [f64]| out[0] = beta / (1.0 + t).sqrt(),
        move |t: f64, x: &[f64], out: &mut [f64]| out[0] = -x[0] / (2.0 * (1.0 + t)),
    );
    ap
}

/// Scalar geometric Brownian motion as an affine-noise problem
/// (σ_M = σ, σ_A = 0), exact solution `X₀ exp((μ − σ²/2)t + σW_t)`.
pub fn gbm_affine(mu: f64, sigma: f64, x0: f64, t_end: f64) -> AnalyticProblem {
    let problem = SdeProblem::new(
        1,
        move |_t: f64, x: &[f64], out: &mut [f64]| out[0] = mu * x[0],
        move |_t: f64, x: &[f64], out: &mut [f64]| out[0] = sigma * x[0],
        NoiseKind::Affine {
            sigma_m: vec![sigma],
            sigma_a: vec![0.0],
        },
        (0.0, t_end),
        vec![x0],
    );
    AnalyticProblem {
        problem,
        exact: Arc::new(move |t: f64, w: &[f64], x0: &[f64]| {
            vec![x0[0] * ((mu - 0.5 * sigma * sigma) * t + sigma * w[0]).exp()]
        }),
    }
}

/// Deterministic decay `dX = −X dt` (g ≡ 0) for ODE-reduction sanity runs.
pub fn decay_ode() -> AnalyticProblem {
    let problem = SdeProblem::new(
        1,
        |_t: f64, x: &[f64], out: &mut [f64]| out[0] = -x[0],
        |_t: f64, _x: &[f64], out: &mut [f64]| out[0] = 0.0,
        NoiseKind::Additive,
        (0.0, 1.0),
        vec![1.0],
    );
    AnalyticProblem {
        problem,
        exact: Arc::new(|t: f64, _w: &[f64], x0: &[f64]| vec![x0[0] * (-t).exp()]),
    }
}

struct LotkaParams {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

const LOTKA: LotkaParams = LotkaParams {
    a: 1.5,
    b: 1.0,
    c: 3.0,
    d: 1.0,
};

fn lotka_drift(x: &[f64], out: &mut [f64]) {
    out[0] = LOTKA.a * x[0] - LOTKA.b * x[0] * x[1];
    out[1] = -LOTKA.c * x[1] + LOTKA.d * x[0] * x[1];
}

/// Lotka–Volterra with constant additive noise σ_A = 0.01 per component.
pub fn lotka_additive() -> SdeProblem {
    let sigma = 0.01;
    SdeProblem::new(
        2,
        |_t: f64, x: &[f64], out: &mut [f64]| lotka_drift(x, out),
        move |_t: f64, _x: &[f64], out: &mut [f64]| out.fill(sigma),
        NoiseKind::Additive,
        (0.0, 10.0),
        vec![1.0, 1.0],
    )
}

/// Multiplicative-noise Lotka–Volterra, `g_i = σ x_i` (the section-title
/// reading; the printed equations are identical to the additive variant,
/// which is shipped as [`lotka_multiplicative_literal`]).
pub fn lotka_multiplicative() -> SdeProblem {
    let sigma = 0.01;
    SdeProblem::new(
        2,
        |_t: f64, x: &[f64], out: &mut [f64]| lotka_drift(x, out),
        move |_t: f64, x: &[f64], out: &mut [f64]| {
            out[0] = sigma * x[0];
            out[1] = sigma * x[1];
        },
        NoiseKind::Diagonal,
        (0.0, 10.0),
        vec![1.0, 1.0],
    )
}

/// The multiplicative-noise Lotka–Volterra equations exactly as printed
/// (constant σ_A — identical to the additive variant).
pub fn lotka_multiplicative_literal() -> SdeProblem {
    lotka_additive()
}

/// Affine-noise Lotka–Volterra: `(σ_M x + σ_A) dW¹` on the prey, constant
/// `σ_Ã dW²` on the predator.
pub fn affine_lotka(sigma_m: f64, sigma_a: f64, sigma_a2: f64) -> SdeProblem {
    SdeProblem::new(
        2,
        |_t: f64, x: &[f64], out: &mut [f64]| lotka_drift(x, out),
        move |_t: f64, x: &[f64], out: &mut [f64]| {
            out[0] = sigma_m * x[0] + sigma_a;
            out[1] = sigma_a2;
        },
        NoiseKind::Affine {
            sigma_m: vec![sigma_m, 0.0],
            sigma_a: vec![sigma_a, sigma_a2],
        },
        (0.0, 10.0),
        vec![1.0, 1.0],
    )
}

/// Driven Van der Pol with additive noise, state `(x, y)`:
/// `dx = y dt + ρ dW²`, `dy = μ((1−x²)y − x) dt + ρ dW¹`.
pub fn van_der_pol_additive(mu: f64, rho: f64) -> SdeProblem {
    SdeProblem::new(
        2,
        move |_t: f64, x: &[f64], out: &mut [f64]| {
            out[0] = x[1];
            out[1] = mu * ((1.0 - x[0] * x[0]) * x[1] - x[0]);
        },
        move |_t: f64, _x: &[f64], out: &mut [f64]| out.fill(rho),
        NoiseKind::Additive,
        (0.0, 3.0),
        vec![1.5, 0.0],
    )
    .with_jacobian(move |_t, x: &[f64], jac| {
        jac.set(0, 0, 0.0);
        jac.set(0, 1, 1.0);
        jac.set(1, 0, mu * (-2.0 * x[0] * x[1] - 1.0));
        jac.set(1, 1, mu * (1.0 - x[0] * x[0]));
    })
}

/// The pathwise-stiff switching equation
/// `dX = −1000 X (1−X)(2−X) dt + g dW`, X₀ = 2, t ∈ [0, 5], additive `g`.
pub fn pathwise_stiff(g_amplitude: f64) -> SdeProblem {
    SdeProblem::new(
        1,
        |_t: f64, x: &[f64], out: &mut [f64]| {
            out[0] = -1000.0 * x[0] * (1.0 - x[0]) * (2.0 - x[0]);
        },
        move |_t: f64, _x: &[f64], out: &mut [f64]| out[0] = g_amplitude,
        NoiseKind::Additive,
        (0.0, 5.0),
        vec![2.0],
    )
}

/// Either flavor of registry entry.
pub enum ProblemSpec {
    Analytic(AnalyticProblem),
    Plain(SdeProblem),
}

impl ProblemSpec {
    pub fn problem(&self) -> &SdeProblem {
        match self {
            ProblemSpec::Analytic(a) => &a.problem,
            ProblemSpec::Plain(p) => p,
        }
    }

    pub fn analytic(&self) -> Option<&AnalyticProblem> {
        match self {
            ProblemSpec::Analytic(a) => Some(a),
            ProblemSpec::Plain(_) => None,
        }
    }
}

fn get(overrides: &HashMap<String, f64>, key: &str, default: f64) -> f64 {
    overrides.get(key).copied().unwrap_or(default)
}

/// Problem registry addressable by name, with `key=value` overrides.
///
/// Every problem honors a `t_end` override.
pub fn by_name(name: &str, overrides: &HashMap<String, f64>) -> Result<ProblemSpec> {
    let key = name.trim().to_ascii_lowercase().replace('-', "_");
    let mut spec = match key.as_str() {
        "additive_test" | "ex3" => ProblemSpec::Analytic(additive_test()),
        "diagonal_test" | "ex1" => ProblemSpec::Analytic(diagonal_test()),
        "split_additive" | "split_additive_test" | "ex3_1" => {
            ProblemSpec::Analytic(split_additive_test())
        }
        "gbm" => ProblemSpec::Analytic(gbm_affine(
            get(overrides, "mu", 0.1),
            get(overrides, "sigma", 0.2),
            get(overrides, "x0", 1.0),
            get(overrides, "t_end", 1.0),
        )),
        "decay_ode" => ProblemSpec::Analytic(decay_ode()),
        "lotka_additive" => ProblemSpec::Plain(lotka_additive()),
        "lotka_multiplicative" => ProblemSpec::Plain(lotka_multiplicative()),
        "lotka_multiplicative_literal" => ProblemSpec::Plain(lotka_multiplicative_literal()),
        "affine_lotka" => ProblemSpec::Plain(affine_lotka(
            get(overrides, "sigma_m", 0.1),
            get(overrides, "sigma_a", 0.01),
            get(overrides, "sigma_a2", 0.01),
        )),
        "van_der_pol_additive" | "vdp" => ProblemSpec::Plain(van_der_pol_additive(
            get(overrides, "mu", 1e5),
            get(overrides, "rho", 3.0),
        )),
        "pathwise_stiff" => ProblemSpec::Plain(pathwise_stiff(get(overrides, "g", 10.0))),
        "emt" => ProblemSpec::Plain(emt_model(get(overrides, "sigma", 0.05), overrides)),
        "retinoic_spde" | "spde" => ProblemSpec::Plain(retinoic_spde(
            get(overrides, "nx", 20.0) as usize,
            get(overrides, "ny", 5.0) as usize,
        )?),
        _ => return Err(Error::UnknownProblem(name.to_string())),
    };
    if let Some(&t_end) = overrides.get("t_end") {
        if key != "gbm" {
            match &mut spec {
                ProblemSpec::Analytic(a) => a.problem.tspan.1 = a.problem.tspan.0 + t_end,
                ProblemSpec::Plain(p) => p.tspan.1 = p.tspan.0 + t_end,
            }
        }
    }
    Ok(spec)
}

/// Names accepted by [`by_name`] (primary spellings).
pub fn registry_names() -> &'static [&'static str] {
    &[
        "additive_test",
        "diagonal_test",
        "split_additive",
        "gbm",
        "decay_ode",
        "lotka_additive",
        "lotka_multiplicative",
        "lotka_multiplicative_literal",
        "affine_lotka",
        "van_der_pol_additive",
        "pathwise_stiff",
        "emt",
        "retinoic_spde",
    ]
}
