//! The adaptive step loop: mixed-tolerance error norms, accept/reject with
//! rejection sampling (bridge-split the proposed increment, push the unused
//! tail), step-size control, stiffness detection, and explicit/implicit
//! switching.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result, StepFailure};
use crate::linalg::{fd_jacobian, norm2, sub, DMat};
use crate::noise::{bridge_split, iterated_integrals, FutureNoiseStack, GaussianPair, NoiseStream};
use crate::steppers::{
    lamperti_transform, step_sra_explicit, step_sra_imex, step_sra_implicit, step_sri_explicit,
    AffineTransform, NewtonOpts, NoiseKind, RhsFn, SdeProblem, StepResult,
};
use crate::tableaus::{builtin, Detection, DetectionRule, MethodId, Tableau};

/// Step-size controller settings.
#[derive(Debug, Clone)]
pub struct Controller {
    pub abstol: f64,
    pub reltol: f64,
    pub safety: f64,
    pub qmin: f64,
    pub qmax: f64,
    /// Exponent on the error in the step proposal; resolved from the
    /// method's order when absent.
    pub order_exponent: Option<f64>,
    /// δ in the combined estimate E = δ·E_D + E_N.
    pub delta: f64,
    pub max_rejections: u32,
    /// Initial step; defaults to (T − t0)/100.
    pub h0: Option<f64>,
    /// Stiffness-detection safety factor ω; detection runs only when set
    /// and the tableau is detection-capable.
    pub omega: Option<f64>,
    /// Newton tolerance; defaults to 0.01·abstol.
    pub newton_tol: Option<f64>,
    pub newton_max_iters: u32,
    /// Record consumed (Δt, ΔW, ΔZ) segments in the solution.
    pub record_path: bool,
}

impl Controller {
    pub fn new(abstol: f64, reltol: f64) -> Self {
        Controller {
            abstol,
            reltol,
            safety: 0.9,
            qmin: 0.2,
            qmax: 4.0,
            order_exponent: None,
            delta: 1.0,
            max_rejections: 20,
            h0: None,
            omega: None,
            newton_tol: None,
            newton_max_iters: 7,
            record_path: false,
        }
    }

    pub fn with_tol(tol: f64) -> Self {
        Controller::new(tol, tol)
    }

    fn newton_opts(&self) -> NewtonOpts {
        NewtonOpts {
            tol: self.newton_tol.unwrap_or(0.01 * self.abstol),
            max_iters: self.newton_max_iters,
            ..Default::default()
        }
    }
}

/// Mixed-tolerance RMS norm of the combined error estimate; values ≤ 1
/// accept the step.
pub fn error_norm(
    err_d: &[f64],
    err_n: &[f64],
    x_old: &[f64],
    x_new: &[f64],
    ctrl: &Controller,
) -> f64 {
    let d = err_d.len();
    let mut acc = 0.0;
    for k in 0..d {
        let scale = ctrl.abstol + x_old[k].abs().max(x_new[k].abs()) * ctrl.reltol;
        let e = (ctrl.delta * err_d[k].abs() + err_n[k].abs()) / scale;
        acc += e * e;
    }
    (acc / d as f64).sqrt()
}

/// Next step size from the scalar error norm.
pub fn propose_h(err: f64, h: f64, ctrl: &Controller, order_exponent: f64) -> f64 {
    if err == 0.0 {
        return h * ctrl.qmax;
    }
    let q = (ctrl.safety * err.powf(-order_exponent)).clamp(ctrl.qmin, ctrl.qmax);
    h * q
}

/// Local eigenvalue estimates from the final stage pair.
#[derive(Debug, Clone, Copy)]
pub struct StiffnessEstimate {
    pub lambda_d: f64,
    pub lambda_n: f64,
    pub stiff: bool,
    /// Stage difference vanished; estimates are meaningless.
    pub degenerate: bool,
    pub omega: f64,
}

/// Cheap stiffness estimate from retained stage values; `None` when the
/// tableau carries no detection metadata.
pub fn estimate_stiffness(
    f: &RhsFn,
    g: &RhsFn,
    t: f64,
    h: f64,
    res: &StepResult,
    tab: &Tableau,
    omega: f64,
) -> Option<StiffnessEstimate> {
    let Detection {
        stages: (hi, lo),
        rule,
    } = tab.detect()?;
    let c0 = match tab {
        Tableau::Sra(t) => &t.c0,
        Tableau::Sri(t) => &t.c0,
    };
    let d = res.x_next.len();
    let h0_hi = &res.stages_h0[hi];
    let h0_lo = &res.stages_h0[lo];
    let dh0 = norm2(&sub(h0_hi, h0_lo));
    if dh0 == 0.0 {
        return Some(StiffnessEstimate {
            lambda_d: 0.0,
            lambda_n: 0.0,
            stiff: false,
            degenerate: true,
            omega,
        });
    }
    let mut f_hi = vec![0.0; d];
    let mut f_lo = vec![0.0; d];
    (f)(t + c0[hi] * h, h0_hi, &mut f_hi);
    (f)(t + c0[lo] * h, h0_lo, &mut f_lo);
    let lambda_d = norm2(&sub(&f_hi, &f_lo)) / dh0;
    let mut lambda_n = 0.0;
    if !res.stages_h1.is_empty() {
        let h1_hi = &res.stages_h1[hi];
        let h1_lo = &res.stages_h1[lo];
        let dh1 = norm2(&sub(h1_hi, h1_lo));
        if dh1 > 0.0 {
            let mut g_hi = vec![0.0; d];
            let mut g_lo = vec![0.0; d];
            (g)(t + c0[hi] * h, h1_hi, &mut g_hi);
            (g)(t + c0[lo] * h, h1_lo, &mut g_lo);
            lambda_n = norm2(&sub(&g_hi, &g_lo)) / dh1;
        }
    }
    let a = h * lambda_d;
    let b = h * lambda_n;
    let stiff = match rule {
        DetectionRule::Sosra2 { denom } => a / denom > omega,
        DetectionRule::Sosri2 { z_extent } => {
            if a >= 10.0 {
                a / z_extent > omega
            } else if a > 2.5 {
                b > omega
            } else {
                b / 2.0 > omega
            }
        }
    };
    Some(StiffnessEstimate {
        lambda_d,
        lambda_n,
        stiff,
        degenerate: false,
        omega,
    })
}

/// Per-accepted-step diagnostics.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StepRecord {
    /// Time at the *end* of the step.
    pub t: f64,
    pub h: f64,
    pub err: f64,
    pub stiff: bool,
    pub method: MethodId,
    pub newton_iters: u32,
    /// Rejections burned before this step was accepted.
    pub rejections: u32,
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// Accepted time points, `times[0] = t0`, last = T.
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Cumulative Wiener path at the accepted times.
    pub wiener: Vec<Vec<f64>>,
    pub steps: Vec<StepRecord>,
    pub n_accepted: u64,
    pub n_rejected: u64,
    /// Consumed (Δt, ΔW, ΔZ) segments, present when recording was on.
    pub increments: Option<Vec<(f64, Vec<f64>, Vec<f64>)>>,
    /// Count of transform-domain violations encountered (affine solves).
    pub domain_violations: u64,
}

impl Solution {
    pub fn final_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("solution holds at least the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn mean_accepted_h(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.h).sum::<f64>() / self.steps.len() as f64
    }
}

enum StepperKind {
    SraExplicit,
    SraImplicit,
    SraImex,
    Sri,
}

fn stepper_kind(p: &SdeProblem, method: MethodId) -> Result<StepperKind> {
    let incompatible = |m: MethodId, p: &SdeProblem| Error::IncompatibleNoise {
        method: m.name().into(),
        kind: p.noise_kind.label().into(),
    };
    match method {
        MethodId::Sra1 | MethodId::Sosra | MethodId::Sosra2 => match p.noise_kind {
            NoiseKind::Additive | NoiseKind::Scalar => Ok(StepperKind::SraExplicit),
            _ => Err(incompatible(method, p)),
        },
        MethodId::Lsra | MethodId::SKenCarp => match p.noise_kind {
            NoiseKind::Additive | NoiseKind::Scalar => Ok(StepperKind::SraImplicit),
            _ => Err(incompatible(method, p)),
        },
        MethodId::SKenCarpImex => {
            if p.imex.is_none() {
                return Err(Error::InvalidInput(
                    "SKenCarp-IMEX needs a problem with an IMEX split".into(),
                ));
            }
            match p.noise_kind {
                NoiseKind::Additive | NoiseKind::Scalar => Ok(StepperKind::SraImex),
                _ => Err(incompatible(method, p)),
            }
        }
        MethodId::Sosri | MethodId::Sosri2 => Ok(StepperKind::Sri),
        // no embedded estimator: fixed-step use only (convergence and
        // work-precision drivers dispatch the stepper directly)
        MethodId::EulerMaruyama => Err(Error::Unsupported(
            "EM has no embedded error estimator; use fixed-step mode".into(),
        )),
    }
}

struct AttemptCtx<'a> {
    p: &'a SdeProblem,
    tab: &'a Tableau,
    kind: StepperKind,
    newton: NewtonOpts,
}

impl AttemptCtx<'_> {
    fn attempt(
        &self,
        t: f64,
        x: &[f64],
        pair: &GaussianPair,
    ) -> std::result::Result<StepResult, StepFailure> {
        let nb = iterated_integrals(pair);
        let h = pair.h;
        let f = self.p.drift.as_ref();
        let g = self.p.diffusion.as_ref();
        let jac = self.p.jacobian.as_deref();
        match (&self.kind, self.tab) {
            (StepperKind::SraExplicit, Tableau::Sra(tb)) => {
                step_sra_explicit(f, g, tb, t, x, h, &nb)
            }
            (StepperKind::SraImplicit, Tableau::Sra(tb)) => step_sra_implicit(
                f,
                g,
                jac,
                self.p.mass_matrix.as_ref(),
                tb,
                t,
                x,
                h,
                &nb,
                &self.newton,
            ),
            (StepperKind::SraImex, Tableau::Sra(tb)) => {
                let split = self.p.imex.as_ref().expect("checked by stepper_kind");
                step_sra_imex(
                    split.f1.as_ref(),
                    split.f2.as_ref(),
                    g,
                    jac,
                    tb,
                    t,
                    x,
                    h,
                    &nb,
                    &self.newton,
                )
            }
            (StepperKind::Sri, Tableau::Sri(tb)) => step_sri_explicit(f, g, tb, t, x, h, &nb),
            _ => unreachable!("stepper kind matches tableau family"),
        }
    }
}

/// Integrates `p` with the named method, fresh noise from `(seed, stream)`.
pub fn integrate(
    p: &SdeProblem,
    method: MethodId,
    ctrl: &Controller,
    seed: u64,
) -> Result<Solution> {
    integrate_stream(p, method, ctrl, seed, 0, None)
}

/// As [`integrate`], with an explicit per-trajectory stream id and optional
/// primed noise segments (consumed before any fresh sampling — the
/// shared-path replay mechanism).
pub fn integrate_stream(
    p: &SdeProblem,
    method: MethodId,
    ctrl: &Controller,
    seed: u64,
    stream_id: u64,
    primed: Option<&[(f64, Vec<f64>, Vec<f64>)]>,
) -> Result<Solution> {
    p.validate()?;
    // affine problems route SRA-family methods through the Lamperti
    // transform: integrate in Z-space, store in X-space
    let is_sra_family = matches!(
        method,
        MethodId::Sra1
            | MethodId::Sosra
            | MethodId::Sosra2
            | MethodId::Lsra
            | MethodId::SKenCarp
            | MethodId::SKenCarpImex
    );
    if is_sra_family && matches!(p.noise_kind, NoiseKind::Affine { .. }) {
        let (tp, tr) = lamperti_transform(p)?;
        let mut sol = integrate_stream(&tp, method, ctrl, seed, stream_id, primed)?;
        let mut x = vec![0.0; p.dim];
        for state in sol.states.iter_mut() {
            tr.psi_inv(state, &mut x);
            state.copy_from_slice(&x);
        }
        return Ok(sol);
    }
    let tab = builtin(method);
    let kind = stepper_kind(p, method)?;
    let ctx = AttemptCtx {
        p,
        tab: &tab,
        kind,
        newton: ctrl.newton_opts(),
    };
    integrate_core(p, &ctx, method, ctrl, seed, stream_id, primed)
}

fn integrate_core(
    p: &SdeProblem,
    ctx: &AttemptCtx<'_>,
    method: MethodId,
    ctrl: &Controller,
    seed: u64,
    stream_id: u64,
    primed: Option<&[(f64, Vec<f64>, Vec<f64>)]>,
) -> Result<Solution> {
    let (t0, tf) = p.tspan;
    let total = tf - t0;
    let noise_dim = p.noise_dim();
    let mut stream = NoiseStream::new(seed, stream_id);
    let mut stack = FutureNoiseStack::new(noise_dim);
    if let Some(segments) = primed {
        for (h, dw, dz) in segments {
            stack.push_back(GaussianPair {
                dw: dw.clone(),
                dz: dz.clone(),
                h: *h,
            });
        }
    }
    let order_exp = ctrl
        .order_exponent
        .unwrap_or_else(|| ctx.tab.order_exponent());
    let h_min = 1e-14 * total;
    let mut h = ctrl.h0.unwrap_or_else(|| initial_step(p, ctrl)).min(total);
    let mut t = t0;
    let mut x = p.x0.clone();
    let mut w_cum = vec![0.0; noise_dim];

    let mut sol = Solution {
        times: vec![t0],
        states: vec![x.clone()],
        wiener: vec![w_cum.clone()],
        steps: Vec::new(),
        n_accepted: 0,
        n_rejected: 0,
        increments: ctrl.record_path.then(Vec::new),
        domain_violations: 0,
    };

    let mut pending: Option<GaussianPair> = None;
    let mut rejections = 0u32;
    while t < tf {
        let (pair, is_final) = match pending.take() {
            Some(pr) => {
                let fin = pr.h >= (tf - t) * (1.0 - 1e-12);
                (pr, fin)
            }
            None => {
                let remaining = tf - t;
                let fin = h >= remaining * (1.0 - 1e-12);
                if fin {
                    h = remaining;
                }
                (stack.pop_covering(h, Some(&mut stream))?, fin)
            }
        };
        let h_used = pair.h;
        let outcome = ctx.attempt(t, &x, &pair);
        let (accept, err, res) = match outcome {
            Ok(res) => {
                let err = error_norm(&res.err_d, &res.err_n, &x, &res.x_next, ctrl);
                (err.is_finite() && err <= 1.0, err, Some(res))
            }
            Err(failure) => {
                if matches!(failure, StepFailure::DomainViolation) {
                    sol.domain_violations += 1;
                }
                (false, f64::INFINITY, None)
            }
        };
        if accept {
            let res = res.expect("accepted steps carry a result");
            t = if is_final { tf } else { t + h_used };
            for k in 0..noise_dim {
                w_cum[k] += pair.dw[k];
            }
            let stiff = match ctrl.omega {
                Some(omega) => estimate_stiffness(
                    p.drift.as_ref(),
                    p.diffusion.as_ref(),
                    t - h_used,
                    h_used,
                    &res,
                    ctx.tab,
                    omega,
                )
                .map(|e| e.stiff)
                .unwrap_or(false),
                None => false,
            };
            x = res.x_next;
            sol.times.push(t);
            sol.states.push(x.clone());
            sol.wiener.push(w_cum.clone());
            sol.steps.push(StepRecord {
                t,
                h: h_used,
                err,
                stiff,
                method,
                newton_iters: res.newton_iters,
                rejections,
            });
            sol.n_accepted += 1;
            if let Some(incs) = sol.increments.as_mut() {
                incs.push((h_used, pair.dw.clone(), pair.dz.clone()));
            }
            rejections = 0;
            h = propose_h(err, h_used, ctrl, order_exp);
        } else {
            sol.n_rejected += 1;
            rejections += 1;
            if rejections > ctrl.max_rejections {
                return Err(Error::IntegrationFailed {
                    t,
                    reason: format!(
                        "exceeded {} rejections in a single step (h = {h_used:.3e})",
                        ctrl.max_rejections
                    ),
                });
            }
            let h_new = if err.is_finite() {
                propose_h(err, h_used, ctrl, order_exp).min(0.9 * h_used)
            } else {
                ctrl.qmin * h_used
            };
            if h_new < h_min {
                return Err(Error::IntegrationFailed {
                    t,
                    reason: format!("step size underflow (h = {h_new:.3e} < h_min = {h_min:.3e})"),
                });
            }
            let (left, right) = bridge_split(&pair, h_new, &mut stream)?;
            stack.push_front(right);
            pending = Some(left);
            h = h_new;
        }
    }
    Ok(sol)
}

/// Conservative initial step from the drift magnitude at the start state
/// (stiff problems would otherwise burn the rejection budget shrinking a
/// blind T/100 guess).
fn initial_step(p: &SdeProblem, ctrl: &Controller) -> f64 {
    let total = p.tspan.1 - p.tspan.0;
    let fallback = total / 100.0;
    let d = p.dim;
    let mut fx = vec![0.0; d];
    (p.drift)(p.tspan.0, &p.x0, &mut fx);
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for k in 0..d {
        let scale = ctrl.abstol + p.x0[k].abs() * ctrl.reltol;
        d0 += (p.x0[k] / scale).powi(2);
        d1 += (fx[k] / scale).powi(2);
    }
    let d0 = (d0 / d as f64).sqrt().max(1.0);
    let d1 = (d1 / d as f64).sqrt();
    if !d1.is_finite() || d1 <= 0.0 {
        return fallback;
    }
    (0.01 * d0 / d1).min(fallback).max(1e-12 * total)
}

/// Hysteresis tracker: fires after `k` consecutive raised flags.
#[derive(Debug, Clone)]
pub struct SwitchDebounce {
    k: u32,
    run: u32,
}

impl SwitchDebounce {
    pub fn new(k: u32) -> Self {
        SwitchDebounce { k, run: 0 }
    }

    /// Feeds one observation; true exactly when the run reaches `k`.
    pub fn observe(&mut self, flag: bool) -> bool {
        if flag {
            self.run += 1;
            if self.run >= self.k {
                self.run = 0;
                return true;
            }
        } else {
            self.run = 0;
        }
        false
    }
}

/// Adaptive integration with automatic explicit↔implicit switching:
/// SOSRA2 while non-stiff, SKenCarp while stiff. Switches to implicit after
/// `k_hysteresis` consecutive stiffness flags; switches back when
/// `h·‖J‖∞ / 5 < ω` holds for the same number of accepted steps.
pub fn integrate_switching(
    p: &SdeProblem,
    ctrl: &Controller,
    omega: f64,
    k_hysteresis: u32,
    seed: u64,
) -> Result<Solution> {
    p.validate()?;
    if let NoiseKind::Affine { .. } = p.noise_kind {
        let (tp, tr) = lamperti_transform(p)?;
        let mut sol = integrate_switching(&tp, ctrl, omega, k_hysteresis, seed)?;
        let mut x = vec![0.0; p.dim];
        for state in sol.states.iter_mut() {
            tr.psi_inv(state, &mut x);
            state.copy_from_slice(&x);
        }
        return Ok(sol);
    }
    if !matches!(p.noise_kind, NoiseKind::Additive | NoiseKind::Scalar) {
        return Err(Error::IncompatibleNoise {
            method: "switching (SOSRA2/SKenCarp)".into(),
            kind: p.noise_kind.label().into(),
        });
    }
    let explicit_tab = builtin(MethodId::Sosra2);
    let implicit_tab = builtin(MethodId::SKenCarp);
    let newton = ctrl.newton_opts();
    let ctx_explicit = AttemptCtx {
        p,
        tab: &explicit_tab,
        kind: StepperKind::SraExplicit,
        newton,
    };
    let ctx_implicit = AttemptCtx {
        p,
        tab: &implicit_tab,
        kind: StepperKind::SraImplicit,
        newton,
    };

    let (t0, tf) = p.tspan;
    let total = tf - t0;
    let noise_dim = p.noise_dim();
    let mut stream = NoiseStream::new(seed, 0);
    let mut stack = FutureNoiseStack::new(noise_dim);
    let h_min = 1e-14 * total;
    let mut h = ctrl.h0.unwrap_or_else(|| initial_step(p, ctrl)).min(total);
    let mut t = t0;
    let mut x = p.x0.clone();
    let mut w_cum = vec![0.0; noise_dim];
    let mut implicit = false;
    let mut to_implicit = SwitchDebounce::new(k_hysteresis);
    let mut to_explicit = SwitchDebounce::new(k_hysteresis);
    let order_exp = explicit_tab.order_exponent();

    let mut sol = Solution {
        times: vec![t0],
        states: vec![x.clone()],
        wiener: vec![w_cum.clone()],
        steps: Vec::new(),
        n_accepted: 0,
        n_rejected: 0,
        increments: ctrl.record_path.then(Vec::new),
        domain_violations: 0,
    };
    let mut pending: Option<GaussianPair> = None;
    let mut rejections = 0u32;
    let mut jac_buf = DMat::zeros(p.dim, p.dim);
    let mut fx_buf = vec![0.0; p.dim];
    while t < tf {
        let (pair, is_final) = match pending.take() {
            Some(pr) => {
                let fin = pr.h >= (tf - t) * (1.0 - 1e-12);
                (pr, fin)
            }
            None => {
                let remaining = tf - t;
                let fin = h >= remaining * (1.0 - 1e-12);
                if fin {
                    h = remaining;
                }
                (stack.pop_covering(h, Some(&mut stream))?, fin)
            }
        };
        let h_used = pair.h;
        let ctx = if implicit {
            &ctx_implicit
        } else {
            &ctx_explicit
        };
        let method = if implicit {
            MethodId::SKenCarp
        } else {
            MethodId::Sosra2
        };
        let outcome = ctx.attempt(t, &x, &pair);
        let (accept, err, res) = match outcome {
            Ok(res) => {
                let err = error_norm(&res.err_d, &res.err_n, &x, &res.x_next, ctrl);
                (err.is_finite() && err <= 1.0, err, Some(res))
            }
            Err(_) => (false, f64::INFINITY, None),
        };
        if accept {
            let res = res.expect("accepted steps carry a result");
            t = if is_final { tf } else { t + h_used };
            for k in 0..noise_dim {
                w_cum[k] += pair.dw[k];
            }
            let stiff;
            if implicit {
                // cheap upper bound h·‖J‖∞ against the explicit region
                (p.drift)(t, &res.x_next, &mut fx_buf);
                match p.jacobian.as_ref() {
                    Some(j) => (j)(t, &res.x_next, &mut jac_buf),
                    None => fd_jacobian(p.drift.as_ref(), t, &res.x_next, &fx_buf, &mut jac_buf),
                }
                let bound = h_used * jac_buf.inf_norm();
                stiff = bound / 5.0 > omega;
                if to_explicit.observe(!stiff) {
                    implicit = false;
                    to_implicit = SwitchDebounce::new(k_hysteresis);
                }
            } else {
                stiff = estimate_stiffness(
                    p.drift.as_ref(),
                    p.diffusion.as_ref(),
                    t - h_used,
                    h_used,
                    &res,
                    &explicit_tab,
                    omega,
                )
                .map(|e| e.stiff)
                .unwrap_or(false);
                if to_implicit.observe(stiff) {
                    implicit = true;
                    to_explicit = SwitchDebounce::new(k_hysteresis);
                }
            }
            x = res.x_next;
            sol.times.push(t);
            sol.states.push(x.clone());
            sol.wiener.push(w_cum.clone());
            sol.steps.push(StepRecord {
                t,
                h: h_used,
                err,
                stiff,
                method,
                newton_iters: res.newton_iters,
                rejections,
            });
            sol.n_accepted += 1;
            if let Some(incs) = sol.increments.as_mut() {
                incs.push((h_used, pair.dw.clone(), pair.dz.clone()));
            }
            rejections = 0;
            h = propose_h(err, h_used, ctrl, order_exp);
        } else {
            sol.n_rejected += 1;
            rejections += 1;
            if rejections > ctrl.max_rejections {
                return Err(Error::IntegrationFailed {
                    t,
                    reason: format!(
                        "exceeded {} rejections in a single step",
                        ctrl.max_rejections
                    ),
                });
            }
            let h_new = if err.is_finite() {
                propose_h(err, h_used, ctrl, order_exp).min(0.9 * h_used)
            } else {
                ctrl.qmin * h_used
            };
            if h_new < h_min {
                return Err(Error::IntegrationFailed {
                    t,
                    reason: format!("step size underflow (h = {h_new:.3e})"),
                });
            }
            let (left, right) = bridge_split(&pair, h_new, &mut stream)?;
            stack.push_front(right);
            pending = Some(left);
            h = h_new;
        }
    }
    Ok(sol)
}

/// Runs `n_traj` independent integrations in parallel (stream id = the
/// trajectory index) and maps each outcome; results are ordered by
/// trajectory index regardless of scheduling.
pub fn ensemble_map<T, F>(
    p: &SdeProblem,
    method: MethodId,
    ctrl: &Controller,
    seed: u64,
    n_traj: usize,
    map: F,
) -> Vec<T>
where
    T: Send,
    F: Fn(usize, Result<Solution>) -> T + Sync,
{
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(n_traj.max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..n_traj).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n_traj {
                    break;
                }
                let sol = integrate_stream(p, method, ctrl, seed, i as u64, None);
                let mapped = map(i, sol);
                results.lock().unwrap()[i] = Some(mapped);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("every trajectory index is filled"))
        .collect()
}

/// Maps an affine-noise solution back through ψ for comparisons done in
/// X-space. Helper for tests and the harness.
pub fn map_states_through(tr: &AffineTransform, states: &mut [Vec<f64>]) {
    let dim = tr.sigma_m.len();
    let mut buf = vec![0.0; dim];
    for s in states.iter_mut() {
        tr.psi_inv(s, &mut buf);
        s.copy_from_slice(&buf);
    }
}
