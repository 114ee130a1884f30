//! Single-step executors for every method family.
//!
//! All steppers are pure functions of `(state, h, noise, tableau)` — noise
//! generation lives in [`crate::noise`], step-size policy in
//! [`crate::adaptive`]. Each returns the embedded error estimates and the
//! stage values needed downstream for stiffness estimation.

use std::sync::Arc;

use crate::error::{Error, Result, StepFailure};
use crate::linalg::{fd_jacobian, DMat, Lu};
use crate::noise::NoiseBundle;
use crate::tableaus::{SraTableau, SriTableau};

/// Drift/diffusion right-hand side: `out = f(t, x)`.
pub type RhsFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
/// Analytic Jacobian of the drift: fills `jac` with `∂f/∂x (t, x)`.
pub type JacFn = dyn Fn(f64, &[f64], &mut DMat) + Send + Sync;

/// Structure of the diffusion coefficient.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    /// `g = g(t)`, one independent Brownian component per state component.
    Additive,
    /// Diagonal `g_i = g_i(t, x)` with independent Brownian components.
    Diagonal,
    /// One shared Brownian motion driving every component.
    Scalar,
    /// `g_i = σ_M,i x_i + σ_A,i` (transformable to additive noise).
    Affine {
        sigma_m: Vec<f64>,
        sigma_a: Vec<f64>,
    },
}

impl NoiseKind {
    pub fn label(&self) -> &'static str {
        match self {
            NoiseKind::Additive => "additive",
            NoiseKind::Diagonal => "diagonal",
            NoiseKind::Scalar => "scalar",
            NoiseKind::Affine { .. } => "affine",
        }
    }

    /// Number of independent Brownian components for state dimension `d`.
    pub fn noise_dim(&self, d: usize) -> usize {
        match self {
            NoiseKind::Scalar => 1,
            _ => d,
        }
    }
}

/// An implicit/explicit additive split of the drift, `f = f1 + f2` with
/// `f1` handled implicitly.
pub struct ImexSplit {
    pub f1: Arc<RhsFn>,
    pub f2: Arc<RhsFn>,
}

/// An SDE initial value problem `M dX = f dt + M g dW`.
pub struct SdeProblem {
    pub dim: usize,
    pub drift: Arc<RhsFn>,
    pub diffusion: Arc<RhsFn>,
    pub noise_kind: NoiseKind,
    pub mass_matrix: Option<DMat>,
    pub imex: Option<ImexSplit>,
    pub jacobian: Option<Arc<JacFn>>,
    pub tspan: (f64, f64),
    pub x0: Vec<f64>,
}

impl SdeProblem {
    pub fn new<F, G>(
        dim: usize,
        drift: F,
        diffusion: G,
        noise_kind: NoiseKind,
        tspan: (f64, f64),
        x0: Vec<f64>,
    ) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        G: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        assert_eq!(x0.len(), dim);
        SdeProblem {
            dim,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            noise_kind,
            mass_matrix: None,
            imex: None,
            jacobian: None,
            tspan,
            x0,
        }
    }

    pub fn with_mass_matrix(mut self, m: DMat) -> Self {
        assert_eq!(m.rows, self.dim);
        assert_eq!(m.cols, self.dim);
        self.mass_matrix = Some(m);
        self
    }

    pub fn with_imex<F1, F2>(mut self, f1: F1, f2: F2) -> Self
    where
        F1: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        F2: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.imex = Some(ImexSplit {
            f1: Arc::new(f1),
            f2: Arc::new(f2),
        });
        self
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(f64, &[f64], &mut DMat) + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_kind.noise_dim(self.dim)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tspan.1 > self.tspan.0) {
            return Err(Error::InvalidInput("tspan must satisfy t0 < T".into()));
        }
        if let NoiseKind::Affine { sigma_m, sigma_a } = &self.noise_kind {
            if sigma_m.len() != self.dim || sigma_a.len() != self.dim {
                return Err(Error::InvalidInput(
                    "affine sigma vectors must match dim".into(),
                ));
            }
            if sigma_m.iter().chain(sigma_a).any(|&v| v < 0.0) {
                return Err(Error::InvalidInput(
                    "affine sigma entries must be >= 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Result of one step attempt.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub x_next: Vec<f64>,
    /// Componentwise drift error estimate E_D.
    pub err_d: Vec<f64>,
    /// Componentwise noise error estimate E_N.
    pub err_n: Vec<f64>,
    /// Drift stage values H⁽⁰⁾ (retained for stiffness estimation).
    pub stages_h0: Vec<Vec<f64>>,
    /// Diffusion stage values H⁽¹⁾ (SRI only; empty for SRA).
    pub stages_h1: Vec<Vec<f64>>,
    pub newton_iters: u32,
}

/// Stage predictor for implicit solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predictor {
    /// Copy the nearest prior stage value.
    Trivial,
    /// Stochastic minimal-residual estimate: start from z = 0.
    MinResidual,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOpts {
    pub tol: f64,
    pub max_iters: u32,
    pub predictor: Predictor,
}

impl Default for NewtonOpts {
    fn default() -> Self {
        NewtonOpts {
            tol: 1e-8,
            max_iters: 7,
            predictor: Predictor::MinResidual,
        }
    }
}

#[inline]
fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[inline]
fn bundle(nb: &[NoiseBundle], k: usize) -> &NoiseBundle {
    // scalar noise shares one bundle across components
    if nb.len() == 1 {
        &nb[0]
    } else {
        &nb[k]
    }
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// One explicit step of an additive-noise SRA method.
///
/// `g` is evaluated as `g(t + c⁽¹⁾ᵢ h)` only — the state argument is passed
/// through for signature uniformity but must not influence the result for
/// the method to be consistent.
pub fn step_sra_explicit(
    f: &RhsFn,
    g: &RhsFn,
    tab: &SraTableau,
    t: f64,
    x: &[f64],
    h: f64,
    nb: &[NoiseBundle],
) -> std::result::Result<StepResult, StepFailure> {
    debug_assert!(tab.flags.explicit_a0);
    let s = tab.stages;
    let d = x.len();
    // diffusion evaluations are state-free; do them all upfront
    let mut g_st = vec![vec![0.0; d]; s];
    for i in 0..s {
        (g)(t + tab.c1[i] * h, x, &mut g_st[i]);
        if !all_finite(&g_st[i]) {
            return Err(StepFailure::NonFinite);
        }
    }
    let mut f_st = vec![vec![0.0; d]; s];
    let mut h0 = vec![vec![0.0; d]; s];
    for i in 0..s {
        for k in 0..d {
            let nbk = bundle(nb, k);
            let mut acc = x[k];
            for j in 0..i {
                acc += tab.a0.get(i, j) * h * f_st[j][k];
            }
            for j in 0..s {
                let b = tab.b0.get(i, j);
                if b != 0.0 {
                    acc += b * g_st[j][k] * nbk.i10 / h;
                }
            }
            h0[i][k] = acc;
        }
        (f)(t + tab.c0[i] * h, &h0[i], &mut f_st[i]);
        if !all_finite(&f_st[i]) {
            return Err(StepFailure::NonFinite);
        }
    }
    let mut x_next = vec![0.0; d];
    let mut err_d = vec![0.0; d];
    let mut err_n = vec![0.0; d];
    for k in 0..d {
        let nbk = bundle(nb, k);
        let mut acc = x[k];
        for i in 0..s {
            acc += tab.alpha[i] * h * f_st[i][k];
        }
        for i in 0..s {
            acc += (tab.beta1[i] * nbk.i1 + tab.beta2[i] * nbk.i10 / h) * g_st[i][k];
        }
        x_next[k] = acc;
        let mut ed = 0.0;
        for i in 0..s {
            ed += tab.err_d[i] * f_st[i][k];
        }
        err_d[k] = h * ed;
        let mut en = 0.0;
        for i in 0..s {
            en += tab.beta2[i] * nbk.i10 / h * g_st[i][k];
        }
        err_n[k] = en;
    }
    if !all_finite(&x_next) {
        return Err(StepFailure::NonFinite);
    }
    Ok(StepResult {
        x_next,
        err_d,
        err_n,
        stages_h0: h0,
        stages_h1: Vec::new(),
        newton_iters: 0,
    })
}

/// One explicit step of a diagonal-noise SRI method.
pub fn step_sri_explicit(
    f: &RhsFn,
    g: &RhsFn,
    tab: &SriTableau,
    t: f64,
    x: &[f64],
    h: f64,
    nb: &[NoiseBundle],
) -> std::result::Result<StepResult, StepFailure> {
    debug_assert!(tab.flags.explicit_a0 && tab.flags.explicit_b0);
    let s = tab.stages;
    let d = x.len();
    let sqrt_h = h.sqrt();
    let mut f_st = vec![vec![0.0; d]; s];
    let mut g_st = vec![vec![0.0; d]; s];
    let mut h0 = vec![vec![0.0; d]; s];
    let mut h1 = vec![vec![0.0; d]; s];
    for i in 0..s {
        for k in 0..d {
            let nbk = bundle(nb, k);
            let mut acc0 = x[k];
            let mut acc1 = x[k];
            for j in 0..i {
                let fjk = h * f_st[j][k];
                acc0 += tab.a0.get(i, j) * fjk;
                acc1 += tab.a1.get(i, j) * fjk;
                acc0 += tab.b0.get(i, j) * g_st[j][k] * nbk.i10 / h;
                acc1 += tab.b1.get(i, j) * g_st[j][k] * sqrt_h;
            }
            h0[i][k] = acc0;
            h1[i][k] = acc1;
        }
        (f)(t + tab.c0[i] * h, &h0[i], &mut f_st[i]);
        (g)(t + tab.c1[i] * h, &h1[i], &mut g_st[i]);
        if !all_finite(&f_st[i]) || !all_finite(&g_st[i]) {
            return Err(StepFailure::NonFinite);
        }
    }
    let mut x_next = vec![0.0; d];
    let mut err_d = vec![0.0; d];
    let mut err_n = vec![0.0; d];
    for k in 0..d {
        let nbk = bundle(nb, k);
        let mut acc = x[k];
        for i in 0..s {
            acc += tab.alpha[i] * h * f_st[i][k];
        }
        for i in 0..s {
            acc += (tab.beta1[i] * nbk.i1
                + tab.beta2[i] * nbk.i11 / sqrt_h
                + tab.beta3[i] * nbk.i10 / h
                + tab.beta4[i] * nbk.i111 / h)
                * g_st[i][k];
        }
        x_next[k] = acc;
        let mut ed = 0.0;
        for i in 0..s {
            ed += tab.err_d[i] * f_st[i][k];
        }
        err_d[k] = h * ed;
        let mut en = 0.0;
        for i in 0..s {
            en += (tab.beta3[i] * nbk.i10 / h + tab.beta4[i] * nbk.i111 / h) * g_st[i][k];
        }
        err_n[k] = en;
    }
    if !all_finite(&x_next) {
        return Err(StepFailure::NonFinite);
    }
    Ok(StepResult {
        x_next,
        err_d,
        err_n,
        stages_h0: h0,
        stages_h1: h1,
        newton_iters: 0,
    })
}

struct NewtonWork {
    lu: Lu,
}

impl NewtonWork {
    /// Builds and factors the iteration matrix `M − γ h J`.
    fn factor(
        mass: Option<&DMat>,
        jac: &DMat,
        gamma_h: f64,
        d: usize,
    ) -> std::result::Result<NewtonWork, StepFailure> {
        let mut m = DMat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let mm = match mass {
                    Some(mm) => mm.get(i, j),
                    None => {
                        if i == j {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
                m.set(i, j, mm - gamma_h * jac.get(i, j));
            }
        }
        Lu::factor(m)
            .map(|lu| NewtonWork { lu })
            .ok_or(StepFailure::SingularMatrix)
    }
}

/// mass * z (identity when absent)
fn apply_mass(mass: Option<&DMat>, z: &[f64], out: &mut [f64]) {
    match mass {
        Some(m) => m.matvec(z, out),
        None => out.copy_from_slice(z),
    }
}

/// Solves one ESDIRK stage residual `G(z) = M z − h f(t_i, γ z + a)` by
/// damped Newton iteration against the prefactored matrix.
#[allow(clippy::too_many_arguments)]
fn newton_stage(
    f: &RhsFn,
    mass: Option<&DMat>,
    work: &NewtonWork,
    t_stage: f64,
    gamma: f64,
    a: &[f64],
    h: f64,
    z: &mut [f64],
    opts: &NewtonOpts,
) -> std::result::Result<u32, StepFailure> {
    let d = a.len();
    let mut hstate = vec![0.0; d];
    let mut fval = vec![0.0; d];
    let mut res = vec![0.0; d];
    let mut mz = vec![0.0; d];
    let mut eval_res = |z: &[f64], res: &mut [f64]| -> std::result::Result<f64, StepFailure> {
        for k in 0..d {
            hstate[k] = gamma * z[k] + a[k];
        }
        (f)(t_stage, &hstate, &mut fval);
        if !all_finite(&fval) {
            return Err(StepFailure::NonFinite);
        }
        apply_mass(mass, z, &mut mz);
        for k in 0..d {
            res[k] = mz[k] - h * fval[k];
        }
        Ok(rms(res))
    };
    let mut res_norm = eval_res(z, &mut res)?;
    if res_norm <= opts.tol {
        return Ok(0);
    }
    let mut delta = vec![0.0; d];
    let mut z_try = vec![0.0; d];
    let mut res_try = vec![0.0; d];
    for it in 1..=opts.max_iters {
        delta.copy_from_slice(&res);
        work.lu.solve(&mut delta);
        // damp by halving until the residual stops growing
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..4 {
            for k in 0..d {
                z_try[k] = z[k] - lambda * delta[k];
            }
            match eval_res(&z_try, &mut res_try) {
                Ok(r) if r <= res_norm * (1.0 - 0.1 * lambda) || r <= opts.tol => {
                    res_norm = r;
                    z.copy_from_slice(&z_try);
                    res.copy_from_slice(&res_try);
                    accepted = true;
                    break;
                }
                Ok(_) | Err(StepFailure::NonFinite) => {
                    lambda *= 0.5;
                }
                Err(e) => return Err(e),
            }
        }
        if !accepted {
            return Err(StepFailure::NewtonDiverged(it));
        }
        let step_norm = lambda * rms(&delta);
        if res_norm <= opts.tol || step_norm <= opts.tol {
            return Ok(it);
        }
    }
    Err(StepFailure::NewtonDiverged(opts.max_iters))
}

/// One step of an implicit SRA method (LSRA full 2-stage implicit, or any
/// ESDIRK tableau such as SKenCarp), optionally with a mass matrix.
#[allow(clippy::too_many_arguments)]
pub fn step_sra_implicit(
    f: &RhsFn,
    g: &RhsFn,
    jac: Option<&JacFn>,
    mass: Option<&DMat>,
    tab: &SraTableau,
    t: f64,
    x: &[f64],
    h: f64,
    nb: &[NoiseBundle],
    opts: &NewtonOpts,
) -> std::result::Result<StepResult, StepFailure> {
    let s = tab.stages;
    let d = x.len();
    let mut g_st = vec![vec![0.0; d]; s];
    for i in 0..s {
        (g)(t + tab.c1[i] * h, x, &mut g_st[i]);
        if !all_finite(&g_st[i]) {
            return Err(StepFailure::NonFinite);
        }
    }
    // noise contribution to each stage (constant during the Newton solves)
    let mut stage_noise = vec![vec![0.0; d]; s];
    for i in 0..s {
        for k in 0..d {
            let nbk = bundle(nb, k);
            let mut acc = 0.0;
            for j in 0..s {
                let b = tab.b0.get(i, j);
                if b != 0.0 {
                    acc += b * g_st[j][k] * nbk.i10 / h;
                }
            }
            stage_noise[i][k] = acc;
        }
    }
    // drift Jacobian at the step start, factored once
    let mut fx = vec![0.0; d];
    (f)(t, x, &mut fx);
    if !all_finite(&fx) {
        return Err(StepFailure::NonFinite);
    }
    let mut jmat = DMat::zeros(d, d);
    match jac {
        Some(j) => (j)(t, x, &mut jmat),
        None => fd_jacobian(f, t, x, &fx, &mut jmat),
    }

    let mut z = vec![vec![0.0; d]; s];
    let mut newton_iters = 0u32;
    let mut h0 = vec![vec![0.0; d]; s];

    if let Some(gamma) = tab.esdirk_gamma {
        let work = NewtonWork::factor(mass, &jmat, gamma * h, d)?;
        for i in 0..s {
            let mut a = vec![0.0; d];
            for k in 0..d {
                let mut acc = x[k] + stage_noise[i][k];
                for j in 0..i {
                    acc += tab.a0.get(i, j) * z[j][k];
                }
                a[k] = acc;
            }
            if i == 0 {
                // explicit first stage: M z₁ = h f(t, a)
                let mut fv = vec![0.0; d];
                (f)(t + tab.c0[0] * h, &a, &mut fv);
                if !all_finite(&fv) {
                    return Err(StepFailure::NonFinite);
                }
                match mass {
                    Some(m) => {
                        // zero rows of M are algebraic constraints: z₁ is
                        // free there (later stages and the stiffly accurate
                        // update are independent of the choice) — pin it to
                        // 0 by substituting unit rows with zero rhs
                        let zero_rows: Vec<usize> = (0..d)
                            .filter(|&r| m.row(r).iter().all(|&v| v == 0.0))
                            .collect();
                        let mut msub = m.clone();
                        let mut rhs: Vec<f64> = fv.iter().map(|v| h * v).collect();
                        for &r in &zero_rows {
                            msub.set(r, r, 1.0);
                            rhs[r] = 0.0;
                        }
                        let lu = Lu::factor(msub).ok_or(StepFailure::SingularMatrix)?;
                        lu.solve(&mut rhs);
                        z[0] = rhs;
                    }
                    None => {
                        for k in 0..d {
                            z[0][k] = h * fv[k];
                        }
                    }
                }
                h0[0] = a;
                continue;
            }
            match opts.predictor {
                Predictor::MinResidual => z[i].iter_mut().for_each(|v| *v = 0.0),
                Predictor::Trivial => {
                    let mut best = i - 1;
                    for j in 0..i {
                        if tab.c0[j] <= tab.c0[i] && tab.c0[j] >= tab.c0[best] {
                            best = j;
                        }
                    }
                    z[i] = z[best].clone();
                }
            }
            let mut zi = std::mem::take(&mut z[i]);
            newton_iters += newton_stage(
                f,
                mass,
                &work,
                t + tab.c0[i] * h,
                gamma,
                &a,
                h,
                &mut zi,
                opts,
            )?;
            for k in 0..d {
                h0[i][k] = gamma * zi[k] + a[k];
            }
            z[i] = zi;
        }
    } else {
        newton_iters += newton_full(
            f,
            mass,
            &jmat,
            tab,
            t,
            x,
            &stage_noise,
            h,
            &mut z,
            &mut h0,
            opts,
        )?;
    }

    let mut x_next = vec![0.0; d];
    let mut err_d = vec![0.0; d];
    let mut err_n = vec![0.0; d];
    for k in 0..d {
        let nbk = bundle(nb, k);
        let mut acc = x[k];
        for i in 0..s {
            acc += tab.alpha[i] * z[i][k];
        }
        for i in 0..s {
            acc += (tab.beta1[i] * nbk.i1 + tab.beta2[i] * nbk.i10 / h) * g_st[i][k];
        }
        x_next[k] = acc;
        let mut ed = 0.0;
        for i in 0..s {
            // z_i is the state-space drift contribution h·M⁻¹f of stage i
            ed += tab.err_d[i] * z[i][k];
        }
        err_d[k] = ed;
        let mut en = 0.0;
        for i in 0..s {
            en += tab.beta2[i] * nbk.i10 / h * g_st[i][k];
        }
        err_n[k] = en;
    }
    if !all_finite(&x_next) {
        return Err(StepFailure::NonFinite);
    }
    Ok(StepResult {
        x_next,
        err_d,
        err_n,
        stages_h0: h0,
        stages_h1: Vec::new(),
        newton_iters,
    })
}

/// Newton iteration on the stacked stage system for fully implicit A⁽⁰⁾:
/// `G_i(z) = M z_i − h f(t + c_i h, x + Σ_j A_ij z_j + noise_i)`.
#[allow(clippy::too_many_arguments)]
fn newton_full(
    f: &RhsFn,
    mass: Option<&DMat>,
    jmat: &DMat,
    tab: &SraTableau,
    t: f64,
    x: &[f64],
    stage_noise: &[Vec<f64>],
    h: f64,
    z: &mut [Vec<f64>],
    h0: &mut [Vec<f64>],
    opts: &NewtonOpts,
) -> std::result::Result<u32, StepFailure> {
    let s = tab.stages;
    let d = x.len();
    let n = s * d;
    // iteration matrix: block (i,j) = δ_ij M − h A_ij J
    let mut big = DMat::zeros(n, n);
    for i in 0..s {
        for j in 0..s {
            let a = tab.a0.get(i, j);
            for r in 0..d {
                for c in 0..d {
                    let mut v = -h * a * jmat.get(r, c);
                    if i == j {
                        v += match mass {
                            Some(m) => m.get(r, c),
                            None => {
                                if r == c {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                    }
                    big.set(i * d + r, j * d + c, v);
                }
            }
        }
    }
    let lu = Lu::factor(big).ok_or(StepFailure::SingularMatrix)?;

    let stages_of = |z: &[Vec<f64>], h0: &mut [Vec<f64>]| {
        for i in 0..s {
            for k in 0..d {
                let mut acc = x[k] + stage_noise[i][k];
                for j in 0..s {
                    acc += tab.a0.get(i, j) * z[j][k];
                }
                h0[i][k] = acc;
            }
        }
    };
    let mut fval = vec![0.0; d];
    let mut mz = vec![0.0; d];
    let mut res = vec![0.0; n];
    let mut eval = |z: &[Vec<f64>],
                    h0: &mut [Vec<f64>],
                    res: &mut [f64]|
     -> std::result::Result<f64, StepFailure> {
        stages_of(z, h0);
        for i in 0..s {
            (f)(t + tab.c0[i] * h, &h0[i], &mut fval);
            if !all_finite(&fval) {
                return Err(StepFailure::NonFinite);
            }
            apply_mass(mass, &z[i], &mut mz);
            for k in 0..d {
                res[i * d + k] = mz[k] - h * fval[k];
            }
        }
        Ok(rms(res))
    };

    for zi in z.iter_mut() {
        zi.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut res_norm = eval(z, h0, &mut res)?;
    if res_norm <= opts.tol {
        return Ok(0);
    }
    let mut res_try = vec![0.0; n];
    for it in 1..=opts.max_iters {
        let mut delta = res.clone();
        lu.solve(&mut delta);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..4 {
            let mut z_try: Vec<Vec<f64>> = z.to_vec();
            for i in 0..s {
                for k in 0..d {
                    z_try[i][k] -= lambda * delta[i * d + k];
                }
            }
            match eval(&z_try, h0, &mut res_try) {
                Ok(r) if r <= res_norm * (1.0 - 0.1 * lambda) || r <= opts.tol => {
                    res_norm = r;
                    for i in 0..s {
                        z[i].copy_from_slice(&z_try[i]);
                    }
                    res.copy_from_slice(&res_try);
                    accepted = true;
                    break;
                }
                Ok(_) | Err(StepFailure::NonFinite) => lambda *= 0.5,
                Err(e) => return Err(e),
            }
        }
        if !accepted {
            return Err(StepFailure::NewtonDiverged(it));
        }
        if res_norm <= opts.tol || lambda * rms(&delta) <= opts.tol {
            stages_of(z, h0);
            return Ok(it);
        }
    }
    Err(StepFailure::NewtonDiverged(opts.max_iters))
}

/// One IMEX step: `f1` through the ESDIRK tableau, `f2` through its
/// companion explicit tableau, shared noise coefficients.
#[allow(clippy::too_many_arguments)]
pub fn step_sra_imex(
    f1: &RhsFn,
    f2: &RhsFn,
    g: &RhsFn,
    jac: Option<&JacFn>,
    tab: &SraTableau,
    t: f64,
    x: &[f64],
    h: f64,
    nb: &[NoiseBundle],
    opts: &NewtonOpts,
) -> std::result::Result<StepResult, StepFailure> {
    let gamma = tab
        .esdirk_gamma
        .expect("IMEX stepping needs an ESDIRK tableau");
    let ea = tab
        .imex_explicit_a0
        .as_ref()
        .expect("IMEX stepping needs the companion explicit tableau");
    let s = tab.stages;
    let d = x.len();
    let mut g_st = vec![vec![0.0; d]; s];
    for i in 0..s {
        (g)(t + tab.c1[i] * h, x, &mut g_st[i]);
        if !all_finite(&g_st[i]) {
            return Err(StepFailure::NonFinite);
        }
    }
    let mut stage_noise = vec![vec![0.0; d]; s];
    for i in 0..s {
        for k in 0..d {
            let nbk = bundle(nb, k);
            let mut acc = 0.0;
            for j in 0..s {
                let b = tab.b0.get(i, j);
                if b != 0.0 {
                    acc += b * g_st[j][k] * nbk.i10 / h;
                }
            }
            stage_noise[i][k] = acc;
        }
    }
    let mut f1x = vec![0.0; d];
    (f1)(t, x, &mut f1x);
    if !all_finite(&f1x) {
        return Err(StepFailure::NonFinite);
    }
    let mut jmat = DMat::zeros(d, d);
    match jac {
        Some(j) => (j)(t, x, &mut jmat),
        None => fd_jacobian(f1, t, x, &f1x, &mut jmat),
    }
    let work = NewtonWork::factor(None, &jmat, gamma * h, d)?;

    let mut z = vec![vec![0.0; d]; s];
    let mut f2_st = vec![vec![0.0; d]; s];
    let mut h0 = vec![vec![0.0; d]; s];
    let mut newton_iters = 0u32;
    for i in 0..s {
        let mut a = vec![0.0; d];
        for k in 0..d {
            let mut acc = x[k] + stage_noise[i][k];
            for j in 0..i {
                acc += tab.a0.get(i, j) * z[j][k] + ea.get(i, j) * h * f2_st[j][k];
            }
            a[k] = acc;
        }
        if i == 0 {
            let mut fv = vec![0.0; d];
            (f1)(t + tab.c0[0] * h, &a, &mut fv);
            if !all_finite(&fv) {
                return Err(StepFailure::NonFinite);
            }
            for k in 0..d {
                z[0][k] = h * fv[k];
            }
            h0[0] = a.clone();
        } else {
            if opts.predictor == Predictor::Trivial {
                z[i] = z[i - 1].clone();
            } else {
                z[i].iter_mut().for_each(|v| *v = 0.0);
            }
            let mut zi = std::mem::take(&mut z[i]);
            newton_iters += newton_stage(
                f1,
                None,
                &work,
                t + tab.c0[i] * h,
                gamma,
                &a,
                h,
                &mut zi,
                opts,
            )?;
            for k in 0..d {
                h0[i][k] = gamma * zi[k] + a[k];
            }
            z[i] = zi;
        }
        (f2)(t + tab.c0[i] * h, &h0[i], &mut f2_st[i]);
        if !all_finite(&f2_st[i]) {
            return Err(StepFailure::NonFinite);
        }
    }
    let mut x_next = vec![0.0; d];
    let mut err_d = vec![0.0; d];
    let mut err_n = vec![0.0; d];
    for k in 0..d {
        let nbk = bundle(nb, k);
        let mut acc = x[k];
        for i in 0..s {
            acc += tab.alpha[i] * (z[i][k] + h * f2_st[i][k]);
        }
        for i in 0..s {
            acc += (tab.beta1[i] * nbk.i1 + tab.beta2[i] * nbk.i10 / h) * g_st[i][k];
        }
        x_next[k] = acc;
        let mut ed = 0.0;
        for i in 0..s {
            ed += tab.err_d[i] * (z[i][k] + h * f2_st[i][k]);
        }
        err_d[k] = ed;
        let mut en = 0.0;
        for i in 0..s {
            en += tab.beta2[i] * nbk.i10 / h * g_st[i][k];
        }
        err_n[k] = en;
    }
    if !all_finite(&x_next) {
        return Err(StepFailure::NonFinite);
    }
    Ok(StepResult {
        x_next,
        err_d,
        err_n,
        stages_h0: h0,
        stages_h1: Vec::new(),
        newton_iters,
    })
}

/// Element-wise Lamperti transform for affine noise `g_i = σ_M,i x + σ_A,i`.
///
/// Components with σ_M = 0 pass through untouched (their transformed
/// diffusion is the constant σ_A); components with σ_M > 0 map to unit
/// additive noise in Z-space.
#[derive(Debug, Clone)]
pub struct AffineTransform {
    pub sigma_m: Vec<f64>,
    pub sigma_a: Vec<f64>,
}

impl AffineTransform {
    pub fn from_problem(p: &SdeProblem) -> Result<AffineTransform> {
        match &p.noise_kind {
            NoiseKind::Affine { sigma_m, sigma_a } => Ok(AffineTransform {
                sigma_m: sigma_m.clone(),
                sigma_a: sigma_a.clone(),
            }),
            other => Err(Error::IncompatibleNoise {
                method: "lamperti".into(),
                kind: other.label().into(),
            }),
        }
    }

    /// ψ, componentwise. Fails when a log argument is not positive.
    pub fn psi(&self, x: &[f64], z: &mut [f64]) -> std::result::Result<(), StepFailure> {
        for (k, (&sm, &sa)) in self.sigma_m.iter().zip(&self.sigma_a).enumerate() {
            z[k] = if sm > 0.0 {
                let arg = if sa > 0.0 { sm * x[k] + sa } else { x[k] };
                if !(arg > 0.0) {
                    return Err(StepFailure::DomainViolation);
                }
                arg.ln() / sm
            } else {
                x[k]
            };
        }
        Ok(())
    }

    /// ψ⁻¹, componentwise (exact inverse of [`Self::psi`]).
    pub fn psi_inv(&self, z: &[f64], x: &mut [f64]) {
        for (k, (&sm, &sa)) in self.sigma_m.iter().zip(&self.sigma_a).enumerate() {
            x[k] = if sm > 0.0 {
                if sa > 0.0 {
                    ((sm * z[k]).exp() - sa) / sm
                } else {
                    (sm * z[k]).exp()
                }
            } else {
                z[k]
            };
        }
    }

    /// Transformed diffusion g̃: 1 where σ_M > 0, σ_A otherwise.
    pub fn g_tilde(&self, out: &mut [f64]) {
        for (k, (&sm, &sa)) in self.sigma_m.iter().zip(&self.sigma_a).enumerate() {
            out[k] = if sm > 0.0 { 1.0 } else { sa };
        }
    }

    /// Transformed drift f̃(t, z) = f(t, ψ⁻¹(z)) / (σ_M x + σ_A) − σ_M/2 on
    /// transformed components, the original drift elsewhere.
    pub fn drift_tilde(&self, f: &RhsFn, t: f64, z: &[f64], x_buf: &mut [f64], out: &mut [f64]) {
        self.psi_inv(z, x_buf);
        (f)(t, x_buf, out);
        for (k, (&sm, &sa)) in self.sigma_m.iter().zip(&self.sigma_a).enumerate() {
            if sm > 0.0 {
                out[k] = out[k] / (sm * x_buf[k] + sa) - 0.5 * sm;
            }
        }
    }
}

/// Builds the Z-space additive-noise problem equivalent to an affine-noise
/// problem. States recorded from the returned problem live in Z-space; use
/// the transform to map back.
pub fn lamperti_transform(p: &SdeProblem) -> Result<(SdeProblem, AffineTransform)> {
    let tr = AffineTransform::from_problem(p)?;
    if p.mass_matrix.is_some() {
        return Err(Error::Unsupported(
            "Lamperti transform with a mass matrix".into(),
        ));
    }
    let mut z0 = vec![0.0; p.dim];
    tr.psi(&p.x0, &mut z0)
        .map_err(|_| Error::InvalidInput("x0 violates the transform domain".into()))?;
    let dim = p.dim;
    let f = Arc::clone(&p.drift);
    let tr_f = tr.clone();
    let drift = move |t: f64, z: &[f64], out: &mut [f64]| {
        let mut x_buf = vec![0.0; dim];
        tr_f.drift_tilde(f.as_ref(), t, z, &mut x_buf, out);
    };
    let tr_g = tr.clone();
    let diffusion = move |_t: f64, _z: &[f64], out: &mut [f64]| {
        tr_g.g_tilde(out);
    };
    let tp = SdeProblem::new(p.dim, drift, diffusion, NoiseKind::Additive, p.tspan, z0);
    Ok((tp, tr))
}

/// Mode selector for SRA stepping through the Lamperti wrapper.
pub enum SraMode<'a> {
    Explicit,
    Implicit(&'a NewtonOpts),
}

/// One step of an affine-noise problem computed in Z-space and stored in
/// X-space. Stage values in the result remain in Z-space.
pub fn lamperti_step(
    p: &SdeProblem,
    tab: &SraTableau,
    mode: SraMode<'_>,
    t: f64,
    x: &[f64],
    h: f64,
    nb: &[NoiseBundle],
) -> std::result::Result<StepResult, StepFailure> {
    let tr = AffineTransform::from_problem(p).map_err(|_| StepFailure::DomainViolation)?;
    let mut z = vec![0.0; p.dim];
    tr.psi(x, &mut z)?;
    let dim = p.dim;
    let f = Arc::clone(&p.drift);
    let tr_f = tr.clone();
    let drift = move |t: f64, zz: &[f64], out: &mut [f64]| {
        let mut x_buf = vec![0.0; dim];
        tr_f.drift_tilde(f.as_ref(), t, zz, &mut x_buf, out);
    };
    let tr_g = tr.clone();
    let diffusion = move |_t: f64, _zz: &[f64], out: &mut [f64]| tr_g.g_tilde(out);
    let mut res = match mode {
        SraMode::Explicit => step_sra_explicit(&drift, &diffusion, tab, t, &z, h, nb)?,
        SraMode::Implicit(opts) => {
            step_sra_implicit(&drift, &diffusion, None, None, tab, t, &z, h, nb, opts)?
        }
    };
    let znext = res.x_next.clone();
    tr.psi_inv(&znext, &mut res.x_next);
    if !all_finite(&res.x_next) {
        return Err(StepFailure::NonFinite);
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseBundle;
    use crate::tableaus::{builtin, MethodId, Tableau};

    fn sra(id: MethodId) -> SraTableau {
        match builtin(id) {
            Tableau::Sra(t) => t,
            _ => unreachable!(),
        }
    }

    fn sri(id: MethodId) -> SriTableau {
        match builtin(id) {
            Tableau::Sri(t) => t,
            _ => unreachable!(),
        }
    }

    #[test]
    fn sra_pure_noise_reduction() {
        // f ≡ 0, g ≡ σ: x_next = x + σ dW for every SRA tableau
        let f = |_t: f64, _x: &[f64], out: &mut [f64]| out.fill(0.0);
        let g = |_t: f64, _x: &[f64], out: &mut [f64]| out.fill(1.7);
        let nb = [NoiseBundle::from_increments(0.43, -0.11, 0.25)];
        for id in [MethodId::Sra1, MethodId::Sosra, MethodId::Sosra2] {
            let tab = sra(id);
            let r = step_sra_explicit(&f, &g, &tab, 0.0, &[2.0], 0.25, &nb).unwrap();
            let expect = 2.0 + 1.7 * 0.43;
            assert!(
                (r.x_next[0] - expect).abs() < 1e-13,
                "{id:?}: {} vs {expect}",
                r.x_next[0]
            );
        }
    }

    /// Straight-line expansion of the two SRA1 stages, written out by hand.
    #[test]
    fn sra1_matches_hand_expansion() {
        let mu = -0.7;
        let sigma = 0.3;
        let f = move |_t: f64, x: &[f64], out: &mut [f64]| out[0] = mu * x[0];
        let g = move |_t: f64, _x: &[f64], out: &mut [f64]| out[0] = sigma;
        let h = 1.0 / 16.0;
        let x0 = 0.9;
        let nb = NoiseBundle::from_increments(0.12, -0.05, h);
        let r = step_sra_explicit(&f, &g, &sra(MethodId::Sra1), 0.0, &[x0], h, &[nb]).unwrap();

        // stages: H1 = x0, H2 = x0 + 3/4 h f(H1) + 3/2 g I10/h
        let f1 = mu * x0;
        let h2 = x0 + 0.75 * h * f1 + 1.5 * sigma * nb.i10 / h;
        let f2 = mu * h2;
        let mut expect = x0;
        expect += 1.0 / 3.0 * h * f1;
        expect += 2.0 / 3.0 * h * f2;
        expect += (1.0 * nb.i1 + -1.0 * nb.i10 / h) * sigma;
        expect += (0.0 * nb.i1 + 1.0 * nb.i10 / h) * sigma;
        assert_eq!(r.x_next[0], expect);
    }

    #[test]
    fn sri_zero_noise_is_deterministic_rk() {
        // g ≡ 0 and zero noise bundle: one step of dX = λX equals the drift
        // stability polynomial applied to x
        let lam = -1.3;
        let f = move |_t: f64, x: &[f64], out: &mut [f64]| out[0] = lam * x[0];
        let g = |_t: f64, _x: &[f64], out: &mut [f64]| out.fill(0.0);
        let h = 0.5;
        let nb = [NoiseBundle::zero(h)];
        for id in [MethodId::Sosri, MethodId::Sosri2] {
            let tab = sri(id);
            let r = step_sri_explicit(&f, &g, &tab, 0.0, &[1.0], h, &nb).unwrap();
            // drift polynomial G(z) via explicit stage recursion on scalars
            let z = lam * h;
            let s = tab.stages;
            let mut hs = vec![0.0; s];
            for i in 0..s {
                let mut acc = 1.0;
                for j in 0..i {
                    acc += tab.a0.get(i, j) * z * hs[j];
                }
                hs[i] = acc;
            }
            let mut gz = 1.0;
            for i in 0..s {
                gz += tab.alpha[i] * z * hs[i];
            }
            assert!((r.x_next[0] - gz).abs() < 1e-14, "{id:?}");
        }
    }

    /// Stage-by-stage expansion of one SOSRI step on the linear test
    /// equation, independent of the stepper's loops.
    #[test]
    fn sosri_matches_bruteforce_expansion() {
        let mu = 0.1;
        let sigma = 0.05;
        let f = move |_t: f64, x: &[f64], out: &mut [f64]| out[0] = mu * x[0];
        let g = move |_t: f64, x: &[f64], out: &mut [f64]| out[0] = sigma * x[0];
        let h: f64 = 1.0 / 16.0;
        let x0 = 0.5;
        let nb = NoiseBundle::from_increments(0.21, 0.07, h);
        let tab = sri(MethodId::Sosri);
        let r = step_sri_explicit(&f, &g, &tab, 0.0, &[x0], h, &[nb]).unwrap();

        let s = 4;
        let mut h0 = vec![x0; s];
        let mut h1 = vec![x0; s];
        let mut fv = vec![0.0; s];
        let mut gv = vec![0.0; s];
        for i in 0..s {
            let mut a0acc = x0;
            let mut a1acc = x0;
            for j in 0..i {
                a0acc += tab.a0.get(i, j) * h * fv[j] + tab.b0.get(i, j) * gv[j] * nb.i10 / h;
                a1acc += tab.a1.get(i, j) * h * fv[j] + tab.b1.get(i, j) * gv[j] * h.sqrt();
            }
            h0[i] = a0acc;
            h1[i] = a1acc;
            fv[i] = mu * h0[i];
            gv[i] = sigma * h1[i];
        }
        let mut expect = x0;
        for i in 0..s {
            expect += tab.alpha[i] * h * fv[i];
            expect += (tab.beta1[i] * nb.i1
                + tab.beta2[i] * nb.i11 / h.sqrt()
                + tab.beta3[i] * nb.i10 / h
                + tab.beta4[i] * nb.i111 / h)
                * gv[i];
        }
        assert!((r.x_next[0] - expect).abs() < 1e-14);
        for i in 0..s {
            assert!((r.stages_h0[i][0] - h0[i]).abs() < 1e-14);
            assert!((r.stages_h1[i][0] - h1[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn implicit_zero_drift_is_noise_only_update() {
        let f = |_t: f64, _x: &[f64], out: &mut [f64]| out.fill(0.0);
        let g = |_t: f64, _x: &[f64], out: &mut [f64]| out.fill(0.8);
        let h = 0.3;
        let nb = [NoiseBundle::from_increments(-0.2, 0.4, h)];
        let opts = NewtonOpts::default();
        for id in [MethodId::Lsra, MethodId::SKenCarp] {
            let tab = sra(id);
            let r =
                step_sra_implicit(&f, &g, None, None, &tab, 0.0, &[1.0], h, &nb, &opts).unwrap();
            // with f ≡ 0 the update is the noise-only sum
            let mut expect = 1.0;
            for i in 0..tab.stages {
                expect += (tab.beta1[i] * nb[0].i1 + tab.beta2[i] * nb[0].i10 / h) * 0.8;
            }
            assert!((r.x_next[0] - expect).abs() < 1e-14, "{id:?}");
            assert!(
                r.newton_iters <= tab.stages as u32,
                "{id:?}: {} iters",
                r.newton_iters
            );
        }
    }

    #[test]
    fn implicit_is_stable_where_explicit_diverges() {
        // dX = −10⁶ X dt + dW at h = 1
        let f = |_t: f64, x: &[f64], out: &mut [f64]| out[0] = -1e6 * x[0];
        let g = |_t: f64, _x: &[f64], out: &mut [f64]| out.fill(1.0);
        let h = 1.0;
        let nb = [NoiseBundle::from_increments(0.5, -0.3, h)];
        let opts = NewtonOpts::default();
        let li = step_sra_implicit(
            &f,
            &g,
            None,
            None,
            &sra(MethodId::Lsra),
            0.0,
            &[1.0],
            h,
            &nb,
            &opts,
        )
        .unwrap();
        assert!(li.x_next[0].abs() < 10.0, "LSRA blew up: {}", li.x_next[0]);
        let ex = step_sra_explicit(&f, &g, &sra(MethodId::Sra1), 0.0, &[1.0], h, &nb).unwrap();
        assert!(
            ex.x_next[0].abs() > 1e8,
            "SRA1 should diverge: {}",
            ex.x_next[0]
        );
    }

    #[test]
    fn newton_converges_fast_on_linear_drift() {
        // affine residual: one exact Newton correction per stage
        let f = |_t: f64, x: &[f64], out: &mut [f64]| out[0] = -4.0 * x[0];
        let g = |_t: f64, _x: &[f64], out: &mut [f64]| out.fill(0.5);
        let opts = NewtonOpts {
            predictor: Predictor::MinResidual,
            ..Default::default()
        };
        for h in [1e-3, 0.1, 1.0, 100.0] {
            let nb = [NoiseBundle::from_increments(0.3, 0.1, h)];
            let r = step_sra_implicit(
                &f,
                &g,
                None,
                None,
                &sra(MethodId::SKenCarp),
                0.0,
                &[1.0],
                h,
                &nb,
                &opts,
            )
            .unwrap();
            // three implicit stages, ≤ 2 iterations each
            assert!(r.newton_iters <= 6, "h={h}: {} iters", r.newton_iters);
        }
    }

    #[test]
    fn imex_degenerate_splits() {
        let mu = -0.9;
        let f_full = move |t: f64, x: &[f64], out: &mut [f64]| out[0] = mu * x[0] + t.sin();
        let zero = |_t: f64, _x: &[f64], out: &mut [f64]| out.fill(0.0);
        let g = |_t: f64, _x: &[f64], out: &mut [f64]| out.fill(0.2);
        let h = 0.25;
        let nb = [NoiseBundle::from_increments(0.1, -0.2, h)];
        let opts = NewtonOpts::default();
        let tab = sra(MethodId::SKenCarp);
        // f2 ≡ 0 reduces to the plain implicit step
        let imex =
            step_sra_imex(&f_full, &zero, &g, None, &tab, 0.0, &[1.5], h, &nb, &opts).unwrap();
        let full =
            step_sra_implicit(&f_full, &g, None, None, &tab, 0.0, &[1.5], h, &nb, &opts).unwrap();
        assert!((imex.x_next[0] - full.x_next[0]).abs() < 1e-15);
        // f1 ≡ 0 reduces to the companion explicit RK plus noise
        let imex2 =
            step_sra_imex(&zero, &f_full, &g, None, &tab, 0.0, &[1.5], h, &nb, &opts).unwrap();
        let ea = tab.imex_explicit_a0.as_ref().unwrap();
        let s = tab.stages;
        let mut fv = vec![0.0; s];
        let mut gv = vec![0.0; s];
        for i in 0..s {
            let mut gg = [0.0];
            g(tab.c1[i] * h, &[0.0], &mut gg);
            gv[i] = gg[0];
        }
        let mut hs = vec![0.0; s];
        for i in 0..s {
            let mut acc = 1.5;
            for j in 0..s {
                acc += tab.b0.get(i, j) * gv[j] * nb[0].i10 / h;
            }
            for j in 0..i {
                acc += ea.get(i, j) * h * fv[j];
            }
            hs[i] = acc;
            let mut out = [0.0];
            f_full(tab.c0[i] * h, &[hs[i]], &mut out);
            fv[i] = out[0];
        }
        let mut expect = 1.5;
        for i in 0..s {
            expect += tab.alpha[i] * h * fv[i];
            expect += (tab.beta1[i] * nb[0].i1 + tab.beta2[i] * nb[0].i10 / h) * gv[i];
        }
        assert!((imex2.x_next[0] - expect).abs() < 1e-13);
    }

    #[test]
    fn mass_matrix_identity_matches_plain_path() {
        let f = |t: f64, x: &[f64], out: &mut [f64]| {
            out[0] = -2.0 * x[0] + x[1];
            out[1] = x[0] - 3.0 * x[1] + t;
        };
        let g = |_t: f64, _x: &[f64], out: &mut [f64]| {
            out[0] = 0.1;
            out[1] = 0.2;
        };
        let h = 0.2;
        let nb = [
            NoiseBundle::from_increments(0.3, 0.0, h),
            NoiseBundle::from_increments(-0.1, 0.2, h),
        ];
        let opts = NewtonOpts::default();
        let x = [1.0, -1.0];
        for id in [MethodId::SKenCarp, MethodId::Lsra] {
            let tab = sra(id);
            let plain =
                step_sra_implicit(&f, &g, None, None, &tab, 0.0, &x, h, &nb, &opts).unwrap();
            let eye = DMat::identity(2);
            let with_m =
                step_sra_implicit(&f, &g, None, Some(&eye), &tab, 0.0, &x, h, &nb, &opts).unwrap();
            for k in 0..2 {
                assert!(
                    (plain.x_next[k] - with_m.x_next[k]).abs() <= 1e-15,
                    "{id:?} component {k}"
                );
            }
        }
    }

    #[test]
    fn sdae_constraint_row_is_enforced() {
        // M = diag(1, 0): second row is the algebraic constraint
        // 0 = x0 − x1 (the equation row is noise-free since M·g kills it);
        // first row dx0 = −x0 dt + 0.3 dW. The diffusion is consistent with
        // the constraint manifold (g_1 = g_0), as the SDAE form requires.
        let f = |_t: f64, x: &[f64], out: &mut [f64]| {
            out[0] = -x[0];
            out[1] = x[0] - x[1];
        };
        let g = |_t: f64, _x: &[f64], out: &mut [f64]| {
            out[0] = 0.3;
            out[1] = 0.3;
        };
        let mut m = DMat::zeros(2, 2);
        m.set(0, 0, 1.0);
        let h = 0.1;
        // shared Brownian component drives both rows identically
        let nb = [
            NoiseBundle::from_increments(0.2, -0.1, h),
            NoiseBundle::from_increments(0.2, -0.1, h),
        ];
        let opts = NewtonOpts {
            tol: 1e-10,
            ..Default::default()
        };
        let tab = sra(MethodId::SKenCarp);
        let x = [1.0, 1.0];
        let r = step_sra_implicit(&f, &g, None, Some(&m), &tab, 0.0, &x, h, &nb, &opts).unwrap();
        // every stage satisfies the constraint through the Newton solve
        for st in &r.stages_h0 {
            assert!(
                (st[0] - st[1]).abs() <= 1e-8,
                "stage off the manifold: {st:?}"
            );
        }
        let violation = (r.x_next[0] - r.x_next[1]).abs();
        assert!(violation <= 1e-8, "constraint violated by {violation}");
    }

    #[test]
    fn lamperti_identity_branch_matches_plain_step() {
        // σ_M = 0 on every component: ψ = id and the step equals plain SRA
        let f = |_t: f64, x: &[f64], out: &mut [f64]| out[0] = 0.3 * x[0];
        let g_const = 0.25;
        let p = SdeProblem::new(
            1,
            f,
            move |_t, _x: &[f64], out: &mut [f64]| out[0] = g_const,
            NoiseKind::Affine {
                sigma_m: vec![0.0],
                sigma_a: vec![g_const],
            },
            (0.0, 1.0),
            vec![1.0],
        );
        let h = 0.125;
        let nb = [NoiseBundle::from_increments(0.4, 0.2, h)];
        let tab = sra(MethodId::Sosra);
        let viat = lamperti_step(&p, &tab, SraMode::Explicit, 0.0, &[1.0], h, &nb).unwrap();
        let g = move |_t: f64, _x: &[f64], out: &mut [f64]| out[0] = g_const;
        let plain = step_sra_explicit(&f, &g, &tab, 0.0, &[1.0], h, &nb).unwrap();
        assert!((viat.x_next[0] - plain.x_next[0]).abs() < 1e-14);
    }

    #[test]
    fn lamperti_round_trip_is_exact() {
        let tr = AffineTransform {
            sigma_m: vec![1.0],
            sigma_a: vec![0.0],
        };
        let mut z = [0.0];
        tr.psi(&[1.0], &mut z).unwrap();
        assert_eq!(z[0], 0.0);
        let mut x = [0.0];
        tr.psi_inv(&z, &mut x);
        assert_eq!(x[0], 1.0);
    }

    #[test]
    fn lamperti_domain_violation_is_signaled() {
        let tr = AffineTransform {
            sigma_m: vec![1.0],
            sigma_a: vec![0.0],
        };
        let mut z = [0.0];
        assert_eq!(tr.psi(&[-0.5], &mut z), Err(StepFailure::DomainViolation));
    }

    #[test]
    fn deterministic_replay() {
        let f = |t: f64, x: &[f64], out: &mut [f64]| out[0] = (t - x[0]).cos();
        let g = |_t: f64, x: &[f64], out: &mut [f64]| out[0] = 0.1 * x[0];
        let h = 0.05;
        let nb = [NoiseBundle::from_increments(0.11, 0.22, h)];
        let tab = sri(MethodId::Sosri2);
        let a = step_sri_explicit(&f, &g, &tab, 0.3, &[0.7], h, &nb).unwrap();
        let b = step_sri_explicit(&f, &g, &tab, 0.3, &[0.7], h, &nb).unwrap();
        assert_eq!(a.x_next, b.x_next);
        assert_eq!(a.err_d, b.err_d);
        assert_eq!(a.err_n, b.err_n);
    }

    #[test]
    fn nonfinite_rhs_is_a_step_failure() {
        let f = |_t: f64, x: &[f64], out: &mut [f64]| out[0] = 1.0 / (x[0] - x[0]);
        let g = |_t: f64, _x: &[f64], out: &mut [f64]| out.fill(0.1);
        let nb = [NoiseBundle::from_increments(0.1, 0.0, 0.1)];
        let r = step_sra_explicit(&f, &g, &sra(MethodId::Sra1), 0.0, &[1.0], 0.1, &nb);
        assert_eq!(r.unwrap_err(), StepFailure::NonFinite);
    }
}
