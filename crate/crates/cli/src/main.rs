//! Command-line harness for the stochrk integrators.
//!
//! Exit codes: 0 success, 2 input error, 3 integration failure,
//! 4 verification failure (`verify-tableaus`).

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stochrk::adaptive::{integrate_stream, integrate_switching, Controller};
use stochrk::error::Error;
use stochrk::harness::{
    rows_to_csv, strong_convergence, work_precision_adaptive, work_precision_fixed, ErrorKind,
};
use stochrk::problems::{self, ProblemSpec};
use stochrk::stability::{region_area, Criterion};
use stochrk::tableaus::{builtin, check_order_conditions, MethodId, Tableau};

#[derive(Parser)]
#[command(
    name = "stochrk",
    about = "Adaptive stochastic Runge-Kutta integration and experiment harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct OutputOpts {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct TolOpts {
    /// Sets both absolute and relative tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    abstol: Option<f64>,
    #[arg(long)]
    reltol: Option<f64>,
}

impl TolOpts {
    fn controller(&self) -> Controller {
        let base = self.tol.unwrap_or(1e-3);
        Controller::new(self.abstol.unwrap_or(base), self.reltol.unwrap_or(base))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one trajectory adaptively. CSV columns: t, h, err, stiff,
    /// method, newton_iters, rejections; trailing comment rows carry the
    /// final state and step counts.
    Solve {
        #[arg(long)]
        problem: String,
        #[arg(long, default_value = "SOSRI")]
        method: String,
        #[command(flatten)]
        tol: TolOpts,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stiffness-detection safety factor; enables detection when set.
        #[arg(long)]
        omega: Option<f64>,
        /// Automatic SOSRA2/SKenCarp switching (additive/affine problems).
        #[arg(long, default_value_t = false)]
        switching: bool,
        /// Problem parameter overrides, `k=v,...`.
        #[arg(long, value_parser = parse_params)]
        params: Option<HashMap<String, f64>>,
        /// Also write the consumed noise path as CSV rows (t, dW.., dZ..).
        #[arg(long)]
        dump_path: Option<PathBuf>,
        #[command(flatten)]
        output: OutputOpts,
    },
    /// Fixed-step strong-convergence sweep against the exact solution.
    /// CSV columns: dt, error; a trailing comment row carries the fitted
    /// slope.
    Converge {
        #[arg(long)]
        problem: String,
        #[arg(long, default_value = "SOSRI")]
        method: String,
        /// Dyadic exponent range: dt = 2^-k for k in lo..=hi.
        #[arg(long, default_value_t = 4)]
        k_lo: i32,
        #[arg(long, default_value_t = 7)]
        k_hi: i32,
        #[arg(long, default_value_t = 100)]
        traj: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_params)]
        params: Option<HashMap<String, f64>>,
        #[command(flatten)]
        output: OutputOpts,
    },
    /// Work-precision rows over tolerances (adaptive) or step sizes
    /// (fixed). CSV columns: method, tolerance, dt, error, weak_ci,
    /// mean_time_per_traj_s, accepted, rejected, flagged.
    Workprec {
        #[arg(long)]
        problem: String,
        /// Comma-separated method list.
        #[arg(long, default_value = "SOSRI", value_delimiter = ',')]
        methods: Vec<String>,
        /// Comma-separated tolerances for adaptive rows.
        #[arg(long, value_delimiter = ',')]
        tols: Option<Vec<f64>>,
        /// Comma-separated fixed step sizes (exclusive with --tols).
        #[arg(long, value_delimiter = ',')]
        dts: Option<Vec<f64>>,
        #[arg(long, default_value_t = 100)]
        traj: usize,
        #[arg(long, value_enum, default_value = "strong-l2")]
        error: ErrorKindArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_params)]
        params: Option<HashMap<String, f64>>,
        #[command(flatten)]
        output: OutputOpts,
    },
    /// Stability-region raster; writes a P2 graymap and/or CSV values.
    Stabregion {
        #[arg(long, default_value = "SOSRI")]
        method: String,
        #[arg(long, value_enum, default_value = "drift")]
        criterion: CriterionArg,
        /// z window is [-n, 1].
        #[arg(long, default_value_t = 6.0)]
        n: f64,
        /// w window is [-m, m].
        #[arg(long, default_value_t = 4.0)]
        m: f64,
        #[arg(long, default_value_t = 0.05)]
        dx: f64,
        /// Output stem: writes `<stem>.pgm` and `<stem>.csv` plus an area
        /// report `<stem>.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Stiffness-detection trace along one adaptive solve. CSV columns:
    /// t, stiff (0/1).
    Stiffness {
        #[arg(long)]
        problem: String,
        #[arg(long, default_value = "SOSRA2")]
        method: String,
        #[arg(long, default_value_t = 1e-2)]
        tol: f64,
        #[arg(long, default_value_t = 5.0)]
        omega: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_params)]
        params: Option<HashMap<String, f64>>,
        #[command(flatten)]
        output: OutputOpts,
    },
    /// Verify the order conditions of every shipped tableau; exit code 4 on
    /// any residual above the gate.
    VerifyTableaus {
        /// Export the tableaus as JSON files into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Verify a tableau JSON file instead of the shipped set.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ErrorKindArg {
    StrongL2,
    WeakFinal,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CriterionArg {
    Drift,
    Meansquare,
}

fn parse_params(s: &str) -> Result<HashMap<String, f64>, String> {
    let mut map = HashMap::new();
    for part in s.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format!("expected k=v, got `{part}`"))?;
        let v: f64 = v
            .parse()
            .map_err(|e| format!("bad value in `{part}`: {e}"))?;
        map.insert(k.trim().to_string(), v);
    }
    Ok(map)
}

fn emit(output: &OutputOpts, csv: String, json: String) -> Result<(), Error> {
    let body = match output.format {
        Format::Csv => csv,
        Format::Json => json,
    };
    match &output.out {
        Some(path) => std::fs::write(path, body)?,
        None => std::io::stdout().write_all(body.as_bytes())?,
    }
    Ok(())
}

fn load_problem(name: &str, params: &Option<HashMap<String, f64>>) -> Result<ProblemSpec, Error> {
    let empty = HashMap::new();
    problems::by_name(name, params.as_ref().unwrap_or(&empty))
}

fn run() -> Result<u8, Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve {
            problem,
            method,
            tol,
            seed,
            omega,
            switching,
            params,
            dump_path,
            output,
        } => {
            let spec = load_problem(&problem, &params)?;
            let mid = MethodId::parse(&method)?;
            let mut ctrl = tol.controller();
            ctrl.omega = omega;
            ctrl.record_path = dump_path.is_some();
            let sol = if switching {
                integrate_switching(spec.problem(), &ctrl, omega.unwrap_or(5.0), 3, seed)?
            } else {
                integrate_stream(spec.problem(), mid, &ctrl, seed, 0, None)?
            };
            if let Some(path) = dump_path {
                let mut csv = String::from("t,dw,dz\n");
                let mut t = spec.problem().tspan.0;
                for (h, dw, dz) in sol.increments.as_ref().unwrap() {
                    t += h;
                    let dws = dw
                        .iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join(";");
                    let dzs = dz
                        .iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join(";");
                    csv.push_str(&format!("{t},{dws},{dzs}\n"));
                }
                std::fs::write(path, csv)?;
            }
            let mut csv = String::from("t,h,err,stiff,method,newton_iters,rejections\n");
            for s in &sol.steps {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    s.t, s.h, s.err, s.stiff, s.method, s.newton_iters, s.rejections
                ));
            }
            let final_state = sol.final_state().to_vec();
            csv.push_str(&format!(
                "# final,{}\n# accepted,{}\n# rejected,{}\n",
                final_state
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
                sol.n_accepted,
                sol.n_rejected
            ));
            let json = serde_json::to_string_pretty(&serde_json::json!({
                "schema": "stochrk.solve/1",
                "problem": problem,
                "method": mid.name(),
                "steps": sol.steps,
                "final_state": final_state,
                "accepted": sol.n_accepted,
                "rejected": sol.n_rejected,
                "domain_violations": sol.domain_violations,
            }))?;
            emit(&output, csv, json)?;
            Ok(0)
        }
        Command::Converge {
            problem,
            method,
            k_lo,
            k_hi,
            traj,
            seed,
            params,
            output,
        } => {
            let spec = load_problem(&problem, &params)?;
            let ap = spec.analytic().ok_or_else(|| {
                Error::Unsupported(format!("`{problem}` has no exact solution for convergence"))
            })?;
            let mid = MethodId::parse(&method)?;
            if k_hi <= k_lo {
                return Err(Error::InvalidInput("need k_hi > k_lo".into()));
            }
            let dts: Vec<f64> = (k_lo..=k_hi).map(|k| 0.5f64.powi(k)).collect();
            let mut rep = strong_convergence(ap, mid, &dts, traj, seed)?;
            rep.problem = problem;
            let json = serde_json::to_string_pretty(&serde_json::json!({
                "schema": "stochrk.converge/1",
                "report": rep,
            }))?;
            emit(&output, rep.to_csv(), json)?;
            Ok(0)
        }
        Command::Workprec {
            problem,
            methods,
            tols,
            dts,
            traj,
            error,
            seed,
            params,
            output,
        } => {
            let spec = load_problem(&problem, &params)?;
            let error_kind = match error {
                ErrorKindArg::StrongL2 => ErrorKind::StrongL2,
                ErrorKindArg::WeakFinal => ErrorKind::WeakFinal,
            };
            let mut rows = Vec::new();
            for m in &methods {
                let mid = MethodId::parse(m)?;
                match (&tols, &dts) {
                    (Some(tols), None) => {
                        rows.extend(work_precision_adaptive(
                            spec.problem(),
                            spec.analytic(),
                            mid,
                            tols,
                            traj,
                            error_kind,
                            seed,
                        )?);
                    }
                    (None, Some(dts)) => {
                        let ap = spec.analytic().ok_or_else(|| {
                            Error::Unsupported(
                                "fixed-dt work-precision needs an exact solution".into(),
                            )
                        })?;
                        rows.extend(work_precision_fixed(ap, mid, dts, traj, error_kind, seed)?);
                    }
                    _ => {
                        return Err(Error::InvalidInput(
                            "pass exactly one of --tols or --dts".into(),
                        ))
                    }
                }
            }
            let json = serde_json::to_string_pretty(&serde_json::json!({
                "schema": "stochrk.workprec/1",
                "problem": problem,
                "rows": rows,
            }))?;
            emit(&output, rows_to_csv(&rows), json)?;
            Ok(0)
        }
        Command::Stabregion {
            method,
            criterion,
            n,
            m,
            dx,
            out,
        } => {
            let mid = MethodId::parse(&method)?;
            let tab = builtin(mid);
            let crit = match criterion {
                CriterionArg::Drift => Criterion::Drift,
                CriterionArg::Meansquare => Criterion::MeanSquare,
            };
            let (area, grid) = region_area(&tab, n, m, dx, crit)?;
            let stem = out.to_string_lossy().to_string();
            std::fs::write(format!("{stem}.pgm"), grid.to_pgm())?;
            std::fs::write(format!("{stem}.csv"), grid.to_csv())?;
            let report = serde_json::to_string_pretty(&serde_json::json!({
                "schema": "stochrk.stabregion/1",
                "method": mid.name(),
                "criterion": match crit { Criterion::Drift => "drift", Criterion::MeanSquare => "meansquare" },
                "z_range": [grid.z_min, grid.z_max],
                "w_range": [grid.w_min, grid.w_max],
                "dx": dx,
                "area": area,
            }))?;
            std::fs::write(format!("{stem}.json"), report)?;
            println!("area = {area}");
            Ok(0)
        }
        Command::Stiffness {
            problem,
            method,
            tol,
            omega,
            seed,
            params,
            output,
        } => {
            let spec = load_problem(&problem, &params)?;
            let mid = MethodId::parse(&method)?;
            let trace = stochrk::harness::stiffness_trace(spec.problem(), mid, tol, omega, seed)?;
            let mut csv = String::from("t,stiff\n");
            for (t, s) in &trace {
                csv.push_str(&format!("{t},{}\n", u8::from(*s)));
            }
            let json = serde_json::to_string_pretty(&serde_json::json!({
                "schema": "stochrk.stiffness/1",
                "problem": problem,
                "method": mid.name(),
                "omega": omega,
                "trace": trace,
            }))?;
            emit(&output, csv, json)?;
            Ok(0)
        }
        Command::VerifyTableaus { out, input } => {
            let mut failed = false;
            let tabs: Vec<Tableau> = match input {
                Some(path) => vec![Tableau::from_json(&std::fs::read_to_string(path)?)?],
                None => MethodId::verified().iter().map(|&id| builtin(id)).collect(),
            };
            for tab in &tabs {
                let rep = check_order_conditions(tab);
                let gate = 1e-10;
                let ok = rep.max() <= gate;
                failed |= !ok;
                println!(
                    "{:10} {:4} residuals, max {:.3e}  {}",
                    tab.name(),
                    rep.residuals.len(),
                    rep.max(),
                    if ok { "OK" } else { "FAIL" }
                );
                for (name, r) in &rep.residuals {
                    if *r > gate {
                        println!("    {name}: {r:.3e}");
                    }
                }
                if let Some(dir) = &out {
                    std::fs::create_dir_all(dir)?;
                    let path = dir.join(format!("{}.json", tab.name().to_lowercase()));
                    std::fs::write(path, tab.to_json()?)?;
                }
            }
            Ok(if failed { 4 } else { 0 })
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::InvalidInput(_)
                | Error::UnknownMethod(_)
                | Error::UnknownProblem(_)
                | Error::IncompatibleNoise { .. }
                | Error::Unsupported(_) => 2,
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}
