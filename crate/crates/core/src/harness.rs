//! Experiment drivers: strong-convergence sweeps (fixed step, coupled
//! Brownian paths across levels), work-precision tables, stability rasters,
//! and stiffness-detection traces.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;

use crate::adaptive::{integrate_stream, Controller};
use crate::error::{Error, Result, StepFailure};
use crate::noise::{GaussianPair, NoiseBundle, NoiseStream};
use crate::problems::AnalyticProblem;
use crate::steppers::{
    step_sra_explicit, step_sra_imex, step_sra_implicit, step_sri_explicit, NewtonOpts, SdeProblem,
};
use crate::tableaus::{builtin, MethodId, Tableau};

/// Least-squares slope of `ln(err)` against `ln(dt)`.
pub fn fit_loglog_slope(dts: &[f64], errs: &[f64]) -> f64 {
    let n = dts.len() as f64;
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - xbar) * (y - ybar);
        den += (x - xbar) * (x - xbar);
    }
    num / den
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub method: String,
    pub problem: String,
    pub dts: Vec<f64>,
    /// Mean strong l₂ error over the shared coarse grid, per dt level.
    pub errors: Vec<f64>,
    pub slope: f64,
    pub n_traj: usize,
    pub seed: u64,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dt,error\n");
        for (dt, err) in self.dts.iter().zip(&self.errors) {
            s.push_str(&format!("{dt},{err}\n"));
        }
        s.push_str(&format!("# slope,{}\n", self.slope));
        s
    }
}

/// One fixed step of the method (noise supplied externally).
fn fixed_step(
    p: &SdeProblem,
    tab: &Tableau,
    method: MethodId,
    t: f64,
    x: &[f64],
    h: f64,
    nb: &[NoiseBundle],
    newton: &NewtonOpts,
) -> std::result::Result<Vec<f64>, StepFailure> {
    let f = p.drift.as_ref();
    let g = p.diffusion.as_ref();
    let res = match (tab, method) {
        (Tableau::Sra(tb), MethodId::SKenCarpImex) => {
            let split = p.imex.as_ref().expect("IMEX method needs a split problem");
            step_sra_imex(
                split.f1.as_ref(),
                split.f2.as_ref(),
                g,
                p.jacobian.as_deref(),
                tb,
                t,
                x,
                h,
                nb,
                newton,
            )?
        }
        (Tableau::Sra(tb), _) if !tb.flags.explicit_a0 => step_sra_implicit(
            f,
            g,
            p.jacobian.as_deref(),
            p.mass_matrix.as_ref(),
            tb,
            t,
            x,
            h,
            nb,
            newton,
        )?,
        (Tableau::Sra(tb), _) => step_sra_explicit(f, g, tb, t, x, h, nb)?,
        (Tableau::Sri(tb), _) => step_sri_explicit(f, g, tb, t, x, h, nb)?,
    };
    Ok(res.x_next)
}

/// Strong-convergence sweep at fixed dyadic step sizes.
///
/// Per trajectory the Brownian path is generated once at the finest level;
/// coarser ΔW come from summation (path coupling) while ΔZ is sampled fresh
/// per level. The error is the discrete l₂ norm of `X_num − X_exact` over
/// the coarsest shared grid, averaged over trajectories.
pub fn strong_convergence(
    ap: &AnalyticProblem,
    method: MethodId,
    dts: &[f64],
    n_traj: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    let p = &ap.problem;
    p.validate()?;
    if dts.is_empty() || n_traj == 0 {
        return Err(Error::InvalidInput(
            "need at least one dt level and one trajectory".into(),
        ));
    }
    let (t0, tf) = p.tspan;
    let total = tf - t0;
    let mut sorted = dts.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let dt_min = *sorted.last().unwrap();
    let dt_max = sorted[0];
    let n_fine = (total / dt_min).round() as usize;
    if (n_fine as f64 * dt_min - total).abs() > 1e-9 * total {
        return Err(Error::InvalidInput(
            "finest dt must divide the time span".into(),
        ));
    }
    for &dt in &sorted {
        let ratio = dt / dt_min;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::InvalidInput(
                "dt levels must be integer multiples of the finest".into(),
            ));
        }
        // every level's grid must contain the shared coarse grid and tile T
        let coarse_ratio = dt_max / dt;
        if (coarse_ratio - coarse_ratio.round()).abs() > 1e-9 {
            return Err(Error::InvalidInput(
                "dt levels must nest inside the coarsest level".into(),
            ));
        }
        let n = total / dt;
        if (n - n.round()).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "dt {dt} must divide the time span"
            )));
        }
    }
    if sorted.len() > 62 {
        return Err(Error::InvalidInput("too many dt levels".into()));
    }
    let n_shared = (total / dt_max).round() as usize;
    let noise_dim = p.noise_dim();
    let tab = builtin(method);
    let newton = NewtonOpts {
        tol: 1e-12,
        max_iters: 10,
        ..Default::default()
    };

    let n_levels = sorted.len();
    let next = AtomicUsize::new(0);
    let sums: Mutex<Vec<Vec<f64>>> = Mutex::new(vec![vec![0.0; n_traj]; n_levels]);
    let failures: Mutex<Vec<String>> = Mutex::new(Vec::new());
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(n_traj);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let traj = next.fetch_add(1, Ordering::Relaxed);
                if traj >= n_traj {
                    break;
                }
                // fine path
                let mut wstream = NoiseStream::new(seed, traj as u64 * 64);
                let mut dw_fine = vec![vec![0.0; noise_dim]; n_fine];
                for step in dw_fine.iter_mut() {
                    let pair = wstream.sample_pair(dt_min, noise_dim).expect("dt_min > 0");
                    step.copy_from_slice(&pair.dw);
                }
                // cumulative W at fine nodes (index 0 = t0)
                let mut w_cum = vec![vec![0.0; noise_dim]; n_fine + 1];
                for k in 0..n_fine {
                    for c in 0..noise_dim {
                        w_cum[k + 1][c] = w_cum[k][c] + dw_fine[k][c];
                    }
                }
                for (level, &dt) in sorted.iter().enumerate() {
                    let ratio = (dt / dt_min).round() as usize;
                    let n_steps = n_fine / ratio;
                    let mut zstream = NoiseStream::new(seed, traj as u64 * 64 + 1 + level as u64);
                    let mut x = p.x0.clone();
                    let mut traj_states = Vec::with_capacity(n_steps + 1);
                    traj_states.push(x.clone());
                    let mut ok = true;
                    for k in 0..n_steps {
                        let t = t0 + k as f64 * dt;
                        let mut dw = vec![0.0; noise_dim];
                        for f in 0..ratio {
                            for c in 0..noise_dim {
                                dw[c] += dw_fine[k * ratio + f][c];
                            }
                        }
                        let zpair = zstream.sample_pair(dt, noise_dim).expect("dt > 0");
                        let nb: Vec<NoiseBundle> = (0..noise_dim)
                            .map(|c| NoiseBundle::from_increments(dw[c], zpair.dz[c], dt))
                            .collect();
                        match fixed_step(p, &tab, method, t, &x, dt, &nb, &newton) {
                            Ok(next_x) => {
                                x = next_x;
                                traj_states.push(x.clone());
                            }
                            Err(e) => {
                                failures
                                    .lock()
                                    .unwrap()
                                    .push(format!("traj {traj} level dt={dt}: {e}"));
                                ok = false;
                                break;
                            }
                        }
                    }
                    if !ok {
                        continue;
                    }
                    // strong l₂ over the shared coarse grid
                    let stride = n_steps / n_shared;
                    let fine_stride = n_fine / n_shared;
                    let mut acc = 0.0;
                    for s in 1..=n_shared {
                        let t = t0 + s as f64 * dt_max;
                        let xn = &traj_states[s * stride];
                        let exact = (ap.exact)(t - t0, &w_cum[s * fine_stride], &p.x0);
                        let d2: f64 = xn.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum();
                        acc += d2;
                    }
                    let err = (acc / n_shared as f64).sqrt();
                    sums.lock().unwrap()[level][traj] = err;
                }
            });
        }
    });
    let failures = failures.into_inner().unwrap();
    if !failures.is_empty() {
        return Err(Error::IntegrationFailed {
            t: f64::NAN,
            reason: format!(
                "{} fixed-step failures, first: {}",
                failures.len(),
                failures[0]
            ),
        });
    }
    let per_traj = sums.into_inner().unwrap();
    let errors: Vec<f64> = per_traj
        .iter()
        .map(|v| v.iter().sum::<f64>() / n_traj as f64)
        .collect();
    let slope = fit_loglog_slope(&sorted, &errors);
    Ok(ConvergenceReport {
        method: method.name().to_string(),
        problem: String::new(),
        dts: sorted,
        errors,
        slope,
        n_traj,
        seed,
    })
}

/// Error measurement for work-precision runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Strong l₂ over the accepted time series (analytic problems) or the
    /// strong error at the final time (self-reference problems).
    StrongL2,
    /// |mean X_T − mean X_T^ref| with a 95% CI on the reference mean.
    WeakFinal,
}

#[derive(Debug, Clone, Serialize)]
pub struct WorkPrecisionRow {
    pub method: String,
    /// Tolerance for adaptive rows.
    pub tolerance: Option<f64>,
    /// Step size for fixed-step rows.
    pub dt: Option<f64>,
    pub error: f64,
    /// 95% half-width of the weak-error sample mean, when applicable.
    pub weak_ci: Option<f64>,
    pub mean_time_per_traj_s: f64,
    pub accepted: u64,
    pub rejected: u64,
    pub flagged: bool,
}

pub fn rows_to_csv(rows: &[WorkPrecisionRow]) -> String {
    let mut s = String::from(
        "method,tolerance,dt,error,weak_ci,mean_time_per_traj_s,accepted,rejected,flagged\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.tolerance.map_or(String::new(), |v| v.to_string()),
            r.dt.map_or(String::new(), |v| v.to_string()),
            r.error,
            r.weak_ci.map_or(String::new(), |v| v.to_string()),
            r.mean_time_per_traj_s,
            r.accepted,
            r.rejected,
            r.flagged
        ));
    }
    s
}

/// Per-trajectory adaptive run with timing; returns
/// (strong l₂ | final error contribution, X_T, counts, duration).
struct TrajOutcome {
    err_strong: f64,
    x_final: Vec<f64>,
    exact_final: Option<Vec<f64>>,
    accepted: u64,
    rejected: u64,
    seconds: f64,
    failed: bool,
}

fn run_adaptive_rows(
    ap_problem: &SdeProblem,
    exact: Option<&AnalyticProblem>,
    method: MethodId,
    tol: f64,
    n_traj: usize,
    seed: u64,
    ref_method: MethodId,
    ref_tol_factor: f64,
) -> Vec<TrajOutcome> {
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<TrajOutcome>>> = Mutex::new((0..n_traj).map(|_| None).collect());
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(n_traj.max(1));
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let traj = next.fetch_add(1, Ordering::Relaxed);
                if traj >= n_traj {
                    break;
                }
                let outcome = match exact {
                    Some(ap) => {
                        let ctrl = Controller::with_tol(tol);
                        let start = Instant::now();
                        let sol =
                            integrate_stream(ap_problem, method, &ctrl, seed, traj as u64, None);
                        let seconds = start.elapsed().as_secs_f64();
                        match sol {
                            Ok(sol) => {
                                // strong l₂ against the exact solution on the
                                // solver's own grid, from the tracked W
                                let mut acc = 0.0;
                                let n_pts = sol.times.len() - 1;
                                for i in 1..sol.times.len() {
                                    let ex = (ap.exact)(
                                        sol.times[i] - ap_problem.tspan.0,
                                        &sol.wiener[i],
                                        &ap_problem.x0,
                                    );
                                    let d2: f64 = sol.states[i]
                                        .iter()
                                        .zip(&ex)
                                        .map(|(a, b)| (a - b) * (a - b))
                                        .sum();
                                    acc += d2;
                                }
                                let exact_final = (ap.exact)(
                                    ap_problem.tspan.1 - ap_problem.tspan.0,
                                    sol.wiener.last().unwrap(),
                                    &ap_problem.x0,
                                );
                                TrajOutcome {
                                    err_strong: (acc / n_pts.max(1) as f64).sqrt(),
                                    x_final: sol.states.last().unwrap().clone(),
                                    exact_final: Some(exact_final),
                                    accepted: sol.n_accepted,
                                    rejected: sol.n_rejected,
                                    seconds,
                                    failed: false,
                                }
                            }
                            Err(_) => failed_outcome(seconds),
                        }
                    }
                    None => {
                        // reference: shared-path low-tolerance self-solve
                        let mut ref_ctrl = Controller::with_tol(tol * ref_tol_factor);
                        ref_ctrl.record_path = true;
                        let ref_sol = integrate_stream(
                            ap_problem,
                            ref_method,
                            &ref_ctrl,
                            seed,
                            traj as u64,
                            None,
                        );
                        match ref_sol {
                            Ok(ref_sol) => {
                                let segs = ref_sol.increments.as_ref().unwrap();
                                let ctrl = Controller::with_tol(tol);
                                let start = Instant::now();
                                let sol = integrate_stream(
                                    ap_problem,
                                    method,
                                    &ctrl,
                                    seed ^ 0x9e3779b97f4a7c15,
                                    traj as u64,
                                    Some(segs),
                                );
                                let seconds = start.elapsed().as_secs_f64();
                                match sol {
                                    Ok(sol) => {
                                        let d2: f64 = sol
                                            .final_state()
                                            .iter()
                                            .zip(ref_sol.final_state())
                                            .map(|(a, b)| (a - b) * (a - b))
                                            .sum();
                                        TrajOutcome {
                                            err_strong: d2.sqrt(),
                                            x_final: sol.final_state().to_vec(),
                                            exact_final: Some(ref_sol.final_state().to_vec()),
                                            accepted: sol.n_accepted,
                                            rejected: sol.n_rejected,
                                            seconds,
                                            failed: false,
                                        }
                                    }
                                    Err(_) => failed_outcome(seconds),
                                }
                            }
                            Err(_) => failed_outcome(0.0),
                        }
                    }
                };
                out.lock().unwrap()[traj] = Some(outcome);
            });
        }
    });
    out.into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.unwrap())
        .collect()
}

fn failed_outcome(seconds: f64) -> TrajOutcome {
    TrajOutcome {
        err_strong: f64::NAN,
        x_final: Vec::new(),
        exact_final: None,
        accepted: 0,
        rejected: 0,
        seconds,
        failed: true,
    }
}

fn summarize(
    method: MethodId,
    tolerance: Option<f64>,
    dt: Option<f64>,
    outcomes: &[TrajOutcome],
    error_kind: ErrorKind,
) -> WorkPrecisionRow {
    let ok: Vec<&TrajOutcome> = outcomes.iter().filter(|o| !o.failed).collect();
    let flagged = ok.len() < outcomes.len();
    let n = ok.len().max(1) as f64;
    let mean_time = ok.iter().map(|o| o.seconds).sum::<f64>() / n;
    let accepted = ok.iter().map(|o| o.accepted).sum::<u64>() / ok.len().max(1) as u64;
    let rejected = ok.iter().map(|o| o.rejected).sum::<u64>() / ok.len().max(1) as u64;
    let (error, weak_ci) = match error_kind {
        ErrorKind::StrongL2 => (ok.iter().map(|o| o.err_strong).sum::<f64>() / n, None),
        ErrorKind::WeakFinal => {
            let dim = ok.first().map_or(0, |o| o.x_final.len());
            let mut mean_num = vec![0.0; dim];
            let mut mean_ref = vec![0.0; dim];
            let mut ref_sq = vec![0.0; dim];
            for o in &ok {
                for k in 0..dim {
                    mean_num[k] += o.x_final[k] / n;
                    let r = o.exact_final.as_ref().map_or(0.0, |e| e[k]);
                    mean_ref[k] += r / n;
                    ref_sq[k] += r * r / n;
                }
            }
            let err: f64 = mean_num
                .iter()
                .zip(&mean_ref)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let var: f64 = ref_sq
                .iter()
                .zip(&mean_ref)
                .map(|(s, m)| (s - m * m).max(0.0))
                .sum::<f64>();
            (err, Some(1.96 * (var / n).sqrt()))
        }
    };
    WorkPrecisionRow {
        method: method.name().to_string(),
        tolerance,
        dt,
        error,
        weak_ci,
        mean_time_per_traj_s: mean_time,
        accepted,
        rejected,
        flagged,
    }
}

/// Adaptive work-precision sweep over tolerances.
pub fn work_precision_adaptive(
    spec_problem: &SdeProblem,
    analytic: Option<&AnalyticProblem>,
    method: MethodId,
    tolerances: &[f64],
    n_traj: usize,
    error_kind: ErrorKind,
    seed: u64,
) -> Result<Vec<WorkPrecisionRow>> {
    let ref_method = match method {
        MethodId::Sosri | MethodId::Sosri2 | MethodId::EulerMaruyama => MethodId::Sosri,
        _ => MethodId::Sosra,
    };
    let mut rows = Vec::new();
    for &tol in tolerances {
        let outcomes = run_adaptive_rows(
            spec_problem,
            analytic,
            method,
            tol,
            n_traj,
            seed,
            ref_method,
            1e-2,
        );
        rows.push(summarize(method, Some(tol), None, &outcomes, error_kind));
    }
    Ok(rows)
}

/// Fixed-step work-precision rows (e.g. Euler–Maruyama baselines). Only
/// analytic problems are supported — each trajectory couples its fixed-step
/// path to the exact solution via the summed increments.
pub fn work_precision_fixed(
    ap: &AnalyticProblem,
    method: MethodId,
    dts: &[f64],
    n_traj: usize,
    error_kind: ErrorKind,
    seed: u64,
) -> Result<Vec<WorkPrecisionRow>> {
    let p = &ap.problem;
    let (t0, tf) = p.tspan;
    let total = tf - t0;
    let noise_dim = p.noise_dim();
    let tab = builtin(method);
    let newton = NewtonOpts {
        tol: 1e-12,
        max_iters: 10,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for &dt in dts {
        let n_steps = (total / dt).round() as usize;
        if n_steps == 0 {
            return Err(Error::InvalidInput(format!(
                "dt {dt} exceeds the time span"
            )));
        }
        let next = AtomicUsize::new(0);
        let out: Mutex<Vec<Option<TrajOutcome>>> = Mutex::new((0..n_traj).map(|_| None).collect());
        let threads = std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
            .min(n_traj.max(1));
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let traj = next.fetch_add(1, Ordering::Relaxed);
                    if traj >= n_traj {
                        break;
                    }
                    let mut stream = NoiseStream::new(seed, traj as u64);
                    let start = Instant::now();
                    let mut x = p.x0.clone();
                    let mut w = vec![0.0; noise_dim];
                    let mut acc = 0.0;
                    let mut failed = false;
                    let h = total / n_steps as f64;
                    for k in 0..n_steps {
                        let t = t0 + k as f64 * h;
                        let pair: GaussianPair = stream.sample_pair(h, noise_dim).unwrap();
                        let nb: Vec<NoiseBundle> = (0..noise_dim)
                            .map(|c| NoiseBundle::from_increments(pair.dw[c], pair.dz[c], h))
                            .collect();
                        match fixed_step(p, &tab, method, t, &x, h, &nb, &newton) {
                            Ok(nx) => {
                                x = nx;
                                for c in 0..noise_dim {
                                    w[c] += pair.dw[c];
                                }
                                let ex = (ap.exact)(t + h - t0, &w, &p.x0);
                                acc += x
                                    .iter()
                                    .zip(&ex)
                                    .map(|(a, b)| (a - b) * (a - b))
                                    .sum::<f64>();
                            }
                            Err(_) => {
                                failed = true;
                                break;
                            }
                        }
                    }
                    let seconds = start.elapsed().as_secs_f64();
                    let outcome = if failed {
                        failed_outcome(seconds)
                    } else {
                        let exact_final = (ap.exact)(total, &w, &p.x0);
                        TrajOutcome {
                            err_strong: (acc / n_steps as f64).sqrt(),
                            x_final: x,
                            exact_final: Some(exact_final),
                            accepted: n_steps as u64,
                            rejected: 0,
                            seconds,
                            failed: false,
                        }
                    };
                    out.lock().unwrap()[traj] = Some(outcome);
                });
            }
        });
        let outcomes: Vec<TrajOutcome> = out
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|o| o.unwrap())
            .collect();
        rows.push(summarize(method, None, Some(dt), &outcomes, error_kind));
    }
    Ok(rows)
}

/// (t, stiff) trace of the detection flag along one adaptive solve.
pub fn stiffness_trace(
    p: &SdeProblem,
    method: MethodId,
    tol: f64,
    omega: f64,
    seed: u64,
) -> Result<Vec<(f64, bool)>> {
    let mut ctrl = Controller::with_tol(tol);
    ctrl.omega = Some(omega);
    let sol = integrate_stream(p, method, &ctrl, seed, 0, None)?;
    Ok(sol.steps.iter().map(|s| (s.t, s.stiff)).collect())
}
